#include "finpred/folds.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "finpred/error.hpp"
#include "finpred/random.hpp"

namespace finpred {

std::vector<std::size_t> FoldPlan::test_rows(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::train_rows(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (auto f : assignment) ++sizes[f];
  return sizes;
}

FoldPlan kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n)
    throw Error(ErrorCode::InvalidK, "need 2 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")",
                {"k"});
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = Rng::stream(seed, "kfold");
  rng.shuffle(std::span<std::size_t>(perm));

  FoldPlan plan{n, k, seed, false, std::vector<std::size_t>(n)};
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) plan.assignment[perm[pos++]] = f;
  }
  return plan;
}

FoldPlan kfold_split_grouped(std::span<const std::string> groups, std::size_t k, std::uint64_t seed) {
  std::map<std::string, std::size_t> ids;
  for (const auto& g : groups) ids.emplace(g, ids.size());
  const std::size_t n_groups = ids.size();
  if (k < 2 || k > n_groups)
    throw Error(ErrorCode::InvalidK, "need 2 <= k <= number of groups", {"k"});

  // Group ids follow sorted name order so the plan does not depend on row order.
  std::size_t next = 0;
  for (auto& [name, id] : ids) id = next++;
  const FoldPlan group_plan = kfold_split(n_groups, k, seed);

  FoldPlan plan{groups.size(), k, seed, true, std::vector<std::size_t>(groups.size())};
  for (std::size_t i = 0; i < groups.size(); ++i) plan.assignment[i] = group_plan.assignment[ids.at(groups[i])];
  return plan;
}

}  // namespace finpred
