#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "finpred/error.hpp"
#include "finpred/folds.hpp"
#include "finpred/random.hpp"

using namespace finpred;

TEST_CASE("k-fold partitions every row exactly once") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(300);
    const std::size_t k = 2 + rng.below(std::min<std::size_t>(n - 1, 12));
    const auto plan = kfold_split(n, k, rng.next());
    std::vector<int> seen(n, 0);
    for (std::size_t f = 0; f < k; ++f) {
      const auto test = plan.test_rows(f), train = plan.train_rows(f);
      CHECK(test.size() + train.size() == n);
      for (auto i : test) seen[i]++;
      std::set<std::size_t> ts(test.begin(), test.end());
      for (auto i : train) CHECK_FALSE(ts.count(i));
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    const auto sizes = plan.fold_sizes();
    CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
    for (std::size_t f = 0; f < n % k; ++f) CHECK(sizes[f] == n / k + 1);
  }
}

TEST_CASE("k-fold is seed deterministic") {
  CHECK(kfold_split(100, 10, 5).assignment == kfold_split(100, 10, 5).assignment);
  CHECK(kfold_split(100, 10, 5).assignment != kfold_split(100, 10, 6).assignment);
}

TEST_CASE("invalid k") {
  CHECK_THROWS_AS(kfold_split(10, 1, 0), Error);
  CHECK_THROWS_AS(kfold_split(10, 11, 0), Error);
  CHECK_NOTHROW(kfold_split(10, 10, 0));
}

TEST_CASE("grouped folds keep groups together") {
  std::vector<std::string> groups;
  for (int c = 0; c < 30; ++c)
    for (int q = 0; q < 1 + c % 5; ++q) groups.push_back("C" + std::to_string(c));
  const auto plan = kfold_split_grouped(groups, 5, 3);
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto [it, fresh] = fold_of.emplace(groups[i], plan.assignment[i]);
    if (!fresh) CHECK(it->second == plan.assignment[i]);
  }
  for (std::size_t f = 0; f < 5; ++f) CHECK_FALSE(plan.test_rows(f).empty());
  CHECK_THROWS_AS(kfold_split_grouped(std::vector<std::string>{"a", "a", "b"}, 3, 0), Error);
}
