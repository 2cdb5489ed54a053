#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace finpred {

struct FoldPlan {
  std::size_t n = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  bool grouped = false;
  std::vector<std::size_t> assignment;  // row -> fold id

  std::vector<std::size_t> test_rows(std::size_t fold) const;
  std::vector<std::size_t> train_rows(std::size_t fold) const;
  std::vector<std::size_t> fold_sizes() const;
};

/// Seeded permutation cut into k contiguous blocks; the first n % k blocks
/// get one extra row. Throws InvalidK unless 2 <= k <= n.
FoldPlan kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

/// Same, but whole groups (e.g. companies) are permuted and dealt to folds
/// so that no group spans two folds. Fold sizes then differ by more than one.
FoldPlan kfold_split_grouped(std::span<const std::string> groups, std::size_t k, std::uint64_t seed);

}  // namespace finpred
