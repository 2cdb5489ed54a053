#pragma once

#include <filesystem>
#include <string>

#include "finpred/ingest.hpp"
#include "finpred/random.hpp"
#include "finpred/regressors.hpp"

namespace testing {

inline finpred::Matrix random_matrix(finpred::Rng& rng, std::size_t n, std::size_t p) {
  finpred::Matrix X(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

inline finpred::Vector random_vector(finpred::Rng& rng, std::size_t n) {
  finpred::Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// Ingested and filtered synthetic panel, built once per process.
inline const finpred::Panel& small_panel() {
  static const finpred::Panel panel = [] {
    finpred::SynthConfig cfg;
    cfg.companies = 40;
    cfg.quarters = 8;
    const auto corpus = finpred::generate_synthetic(cfg, 11);
    const auto ing = finpred::ingest_filings(corpus.filings, finpred::TagMap::standard());
    return finpred::filter_outliers(finpred::assemble_panel(ing.statements, corpus.macro), {});
  }();
  return panel;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("finpred-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
