#include "finpred/bayesnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "finpred/error.hpp"
#include "finpred/version.hpp"

namespace finpred {

// ---------------------------------------------------------------- engine

std::vector<double> uniform_edges(std::size_t bins) {
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = static_cast<double>(i) / static_cast<double>(bins);
  e[bins] = 1.0;
  return e;
}

std::size_t DiscreteNetwork::add(std::string name, std::size_t states, std::vector<std::size_t> parents,
                                 std::vector<double> cpt, std::vector<double> edges) {
  if (names_.count(name)) throw Error(ErrorCode::InvalidInput, "duplicate node '" + name + "'", {name});
  if (states < 1) throw Error(ErrorCode::InvalidInput, "node '" + name + "' needs at least one state", {name});
  std::size_t cols = 1;
  for (auto p : parents) {
    if (p >= vars_.size()) throw Error(ErrorCode::UnknownNode, "parent of '" + name + "' does not exist", {name});
    cols *= vars_[p].states;
  }
  if (cpt.size() != states * cols)
    throw Error(ErrorCode::DimensionMismatch, "table of '" + name + "' has " + std::to_string(cpt.size()) +
                                                  " entries, expected " + std::to_string(states * cols),
                {name});
  for (std::size_t c = 0; c < cols; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < states; ++i) {
      const double v = cpt[c * states + i];
      if (!(v >= 0.0) || !std::isfinite(v))
        throw Error(ErrorCode::InvalidInput, "table of '" + name + "' has a negative or non-finite entry", {name});
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidInput, "table column of '" + name + "' sums to " + std::to_string(s), {name});
  }
  if (edges.empty()) edges = uniform_edges(states);
  if (edges.size() != states + 1 || !std::is_sorted(edges.begin(), edges.end()))
    throw Error(ErrorCode::InvalidInput, "bad bin edges for '" + name + "'", {name});
  names_.emplace(name, vars_.size());
  vars_.push_back({std::move(name), states, std::move(parents), std::move(cpt), std::move(edges)});
  return vars_.size() - 1;
}

std::optional<std::size_t> DiscreteNetwork::find(const std::string& name) const {
  const auto it = names_.find(name);
  if (it == names_.end()) return std::nullopt;
  return it->second;
}

std::size_t DiscreteNetwork::index_of(const std::string& name) const {
  const auto i = find(name);
  if (!i) throw Error(ErrorCode::UnknownNode, "no node named '" + name + "'", {name});
  return *i;
}

Posterior make_posterior(const DiscreteVariable& v, std::vector<double> masses) {
  Posterior p;
  p.node = v.name;
  p.edges = v.edges;
  p.masses = std::move(masses);
  for (std::size_t i = 0; i < p.masses.size(); ++i) p.mean += p.masses[i] * 0.5 * (v.edges[i] + v.edges[i + 1]);
  for (std::size_t i = 0; i < p.masses.size(); ++i) {
    const double d = 0.5 * (v.edges[i] + v.edges[i + 1]) - p.mean;
    p.variance += p.masses[i] * d * d;
  }
  return p;
}

namespace {

struct Factor {
  std::vector<std::size_t> vars;  // ascending variable index
  std::vector<std::size_t> card;
  std::vector<double> values;     // first variable fastest
};

Factor cpt_factor(const DiscreteNetwork& net, std::size_t v) {
  const auto& var = net.variables()[v];
  // Table order is (child, parents...); reorder to ascending indices.
  std::vector<std::size_t> order = {v};
  order.insert(order.end(), var.parents.begin(), var.parents.end());
  std::vector<std::size_t> table_card;
  for (auto u : order) table_card.push_back(net.variables()[u].states);

  Factor f;
  f.vars = order;
  std::sort(f.vars.begin(), f.vars.end());
  for (auto u : f.vars) f.card.push_back(net.variables()[u].states);
  f.values.assign(var.cpt.size(), 0.0);

  std::vector<std::size_t> stride(f.vars.size());
  std::size_t s = 1;
  for (std::size_t i = 0; i < f.vars.size(); ++i) {
    stride[i] = s;
    s *= f.card[i];
  }
  std::vector<std::size_t> table_to_factor(order.size());
  for (std::size_t k = 0; k < order.size(); ++k)
    table_to_factor[k] = stride[static_cast<std::size_t>(std::find(f.vars.begin(), f.vars.end(), order[k]) - f.vars.begin())];

  std::vector<std::size_t> idx(order.size(), 0);
  for (std::size_t t = 0; t < var.cpt.size(); ++t) {
    std::size_t pos = 0;
    for (std::size_t k = 0; k < order.size(); ++k) pos += idx[k] * table_to_factor[k];
    f.values[pos] = var.cpt[t];
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (++idx[k] < table_card[k]) break;
      idx[k] = 0;
    }
  }
  return f;
}

Factor restrict(const Factor& f, std::size_t var, std::size_t state) {
  const auto pos = static_cast<std::size_t>(std::find(f.vars.begin(), f.vars.end(), var) - f.vars.begin());
  if (pos == f.vars.size()) return f;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < pos; ++i) inner *= f.card[i];
  const std::size_t span = inner * f.card[pos];
  Factor out;
  out.vars = f.vars;
  out.card = f.card;
  out.vars.erase(out.vars.begin() + static_cast<std::ptrdiff_t>(pos));
  out.card.erase(out.card.begin() + static_cast<std::ptrdiff_t>(pos));
  out.values.reserve(f.values.size() / f.card[pos]);
  for (std::size_t outer = 0; outer < f.values.size(); outer += span)
    for (std::size_t i = 0; i < inner; ++i) out.values.push_back(f.values[outer + state * inner + i]);
  return out;
}

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// Product of `fs`, with `var` summed out unless it is kNone.
Factor multiply_sum(const std::vector<const Factor*>& fs, std::size_t var) {
  Factor out;
  std::vector<std::size_t> all;
  for (const auto* f : fs) all.insert(all.end(), f->vars.begin(), f->vars.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<std::size_t> all_card(all.size());
  for (const auto* f : fs)
    for (std::size_t i = 0; i < f->vars.size(); ++i)
      all_card[static_cast<std::size_t>(std::lower_bound(all.begin(), all.end(), f->vars[i]) - all.begin())] = f->card[i];

  // Per factor, stride for each union variable (0 when absent).
  std::vector<std::vector<std::size_t>> strides(fs.size(), std::vector<std::size_t>(all.size(), 0));
  for (std::size_t k = 0; k < fs.size(); ++k) {
    std::size_t s = 1;
    for (std::size_t i = 0; i < fs[k]->vars.size(); ++i) {
      strides[k][static_cast<std::size_t>(std::lower_bound(all.begin(), all.end(), fs[k]->vars[i]) - all.begin())] = s;
      s *= fs[k]->card[i];
    }
  }
  std::size_t sum_pos = kNone;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all[i] == var) sum_pos = i;
  std::size_t out_size = 1;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i == sum_pos) continue;
    out.vars.push_back(all[i]);
    out.card.push_back(all_card[i]);
    out_size *= all_card[i];
  }
  out.values.assign(out_size, 0.0);
  const std::size_t x_card = sum_pos == kNone ? 1 : all_card[sum_pos];

  std::vector<std::size_t> assign(all.size(), 0);
  std::vector<std::size_t> base(fs.size(), 0);  // factor offsets for the non-summed variables
  for (std::size_t o = 0; o < out_size; ++o) {
    double acc = 0.0;
    for (std::size_t x = 0; x < x_card; ++x) {
      double prod = 1.0;
      for (std::size_t k = 0; k < fs.size() && prod != 0.0; ++k) {
        const std::size_t off = base[k] + (sum_pos == kNone ? 0 : x * strides[k][sum_pos]);
        prod *= fs[k]->values[off];
      }
      acc += prod;
    }
    out.values[o] = acc;
    // advance the odometer over non-summed variables (ascending order, first fastest)
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (i == sum_pos) continue;
      ++assign[i];
      for (std::size_t k = 0; k < fs.size(); ++k) base[k] += strides[k][i];
      if (assign[i] < all_card[i]) break;
      for (std::size_t k = 0; k < fs.size(); ++k) base[k] -= strides[k][i] * assign[i];
      assign[i] = 0;
    }
  }
  return out;
}

void check_evidence(const DiscreteNetwork& net, const StateEvidence& evidence, std::size_t query) {
  if (query >= net.size()) throw Error(ErrorCode::UnknownNode, "query node index out of range");
  for (const auto& [v, s] : evidence) {
    if (v >= net.size()) throw Error(ErrorCode::UnknownNode, "evidence node index out of range");
    if (s >= net.variables()[v].states)
      throw Error(ErrorCode::InvalidInput, "evidence state out of range for '" + net.variables()[v].name + "'",
                  {net.variables()[v].name});
  }
}

Posterior finish(const DiscreteNetwork& net, std::size_t query, std::vector<double> masses) {
  double total = 0.0;
  for (double m : masses) total += m;
  if (!(total > 0.0) || !std::isfinite(total))
    throw Error(ErrorCode::ZeroProbabilityEvidence, "evidence has zero probability");
  for (auto& m : masses) m /= total;
  return make_posterior(net.variables()[query], std::move(masses));
}

}  // namespace

Posterior infer_posterior(const DiscreteNetwork& net, const StateEvidence& evidence, std::size_t query) {
  check_evidence(net, evidence, query);
  // Only ancestors of the query and the evidence matter; everything else
  // is barren and sums to one.
  std::vector<bool> keep(net.size(), false);
  std::vector<std::size_t> stack = {query};
  for (const auto& [v, s] : evidence) stack.push_back(v);
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    if (keep[v]) continue;
    keep[v] = true;
    for (auto p : net.variables()[v].parents) stack.push_back(p);
  }

  std::vector<Factor> factors;
  for (std::size_t v = 0; v < net.size(); ++v) {
    if (!keep[v]) continue;
    Factor f = cpt_factor(net, v);
    for (const auto& [e, s] : evidence)
      if (e != query) f = restrict(f, e, s);
    factors.push_back(std::move(f));
  }
  if (const auto it = evidence.find(query); it != evidence.end()) {
    Factor ind;
    ind.vars = {query};
    ind.card = {net.variables()[query].states};
    ind.values.assign(ind.card[0], 0.0);
    ind.values[it->second] = 1.0;
    factors.push_back(std::move(ind));
  }

  std::vector<std::size_t> pending;
  for (std::size_t v = 0; v < net.size(); ++v)
    if (keep[v] && v != query && !evidence.count(v)) pending.push_back(v);

  while (!pending.empty()) {
    // Greedy: smallest resulting factor, lowest index on ties.
    std::size_t best = 0;
    double best_size = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < pending.size(); ++c) {
      std::vector<std::size_t> scope;
      for (const auto& f : factors)
        if (std::binary_search(f.vars.begin(), f.vars.end(), pending[c])) scope.insert(scope.end(), f.vars.begin(), f.vars.end());
      std::sort(scope.begin(), scope.end());
      scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
      double size = 1.0;
      for (auto u : scope)
        if (u != pending[c]) size *= static_cast<double>(net.variables()[u].states);
      if (size < best_size) {
        best_size = size;
        best = c;
      }
    }
    const std::size_t var = pending[best];
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));
    std::vector<const Factor*> involved;
    std::vector<Factor> rest;
    for (auto& f : factors)
      if (std::binary_search(f.vars.begin(), f.vars.end(), var)) involved.push_back(&f);
    Factor merged = multiply_sum(involved, var);
    for (auto& f : factors)
      if (!std::binary_search(f.vars.begin(), f.vars.end(), var)) rest.push_back(std::move(f));
    rest.push_back(std::move(merged));
    factors = std::move(rest);
  }

  std::vector<const Factor*> all;
  for (const auto& f : factors) all.push_back(&f);
  Factor last = multiply_sum(all, kNone);
  std::vector<double> masses(net.variables()[query].states, 0.0);
  if (last.vars.empty()) {
    // Query not in scope cannot happen (its own table is kept); guard anyway.
    throw Error(ErrorCode::InvalidInput, "query dropped from elimination");
  }
  masses = last.values;
  return finish(net, query, std::move(masses));
}

Posterior enumerate_joint_oracle(const DiscreteNetwork& net, const StateEvidence& evidence, std::size_t query) {
  check_evidence(net, evidence, query);
  double total_states = 1.0;
  for (const auto& v : net.variables()) total_states *= static_cast<double>(v.states);
  if (total_states > kEnumerationLimit)
    throw Error(ErrorCode::TooLarge, "joint has " + std::to_string(total_states) + " states");
  const auto& vars = net.variables();
  const std::size_t n = vars.size();
  std::vector<std::size_t> a(n, 0);
  for (const auto& [v, s] : evidence) a[v] = s;
  std::vector<double> masses(vars[query].states, 0.0);
  while (true) {
    double p = 1.0;
    for (std::size_t v = 0; v < n && p != 0.0; ++v) {
      std::size_t col = 0, mult = 1;
      for (auto par : vars[v].parents) {
        col += a[par] * mult;
        mult *= vars[par].states;
      }
      p *= vars[v].cpt[col * vars[v].states + a[v]];
    }
    masses[a[query]] += p;
    std::size_t i = 0;
    for (; i < n; ++i) {
      if (evidence.count(i)) continue;
      if (++a[i] < vars[i].states) break;
      a[i] = 0;
    }
    if (i == n) break;
  }
  return finish(net, query, std::move(masses));
}

std::vector<double> tnormal_masses(double mean, double variance, std::span<const double> edges) {
  const std::size_t bins = edges.size() - 1;
  std::vector<double> m(bins, 0.0);
  auto point_mass = [&] {
    const double x = std::clamp(mean, edges.front(), edges.back());
    std::size_t b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
    b = b == 0 ? 0 : std::min(b - 1, bins - 1);
    m.assign(bins, 0.0);
    m[b] = 1.0;
    return m;
  };
  if (!(variance > 0.0)) return point_mass();
  const double sd = std::sqrt(variance);
  // Upper tails Q(z) when the interval sits right of the mean keep precision.
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); };
  auto tail = [&](double x) { return 0.5 * std::erfc((x - mean) / (sd * std::sqrt(2.0))); };
  double total = 0.0;
  for (std::size_t i = 0; i < bins; ++i) {
    const double lo = edges[i], hi = edges[i + 1];
    m[i] = lo >= mean ? tail(lo) - tail(hi) : cdf(hi) - cdf(lo);
    m[i] = std::max(m[i], 0.0);
    total += m[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) return point_mass();
  for (auto& v : m) v /= total;
  return m;
}

// ---------------------------------------------------------------- financial network

void BnConfig::validate() const {
  if (bins < 2 || bins > 200) throw Error(ErrorCode::InvalidInput, "bins must lie in [2, 200]", {"bins"});
  for (auto s : {indicator_states, ocg_states})
    if (s < 7 || s > 11) throw Error(ErrorCode::InvalidInput, "ranked nodes need 7 to 11 states", {"states"});
  int total = 0;
  for (int w : macro_weights) {
    if (w < 1 || w > 3) throw Error(ErrorCode::InvalidInput, "macro weights must lie in [1, 3]", {"macro_weights"});
    total += w;
  }
  if (total > 8) throw Error(ErrorCode::InvalidInput, "macro weights may sum to at most 8", {"macro_weights"});
  if (performance_weight < 1 || performance_weight > 10)
    throw Error(ErrorCode::InvalidInput, "performance_weight must lie in [1, 10]", {"performance_weight"});
  if (!(performance_variance > 0.0)) throw Error(ErrorCode::InvalidInput, "performance_variance must be > 0");
  if (!(indicator_noise >= 0.0 && indicator_noise < 1.0)) throw Error(ErrorCode::InvalidInput, "indicator_noise must lie in [0, 1)");
  if (!(variance_floor > 0.0)) throw Error(ErrorCode::InvalidInput, "variance_floor must be > 0");
  if (!(target_variance_scale > 0.0)) throw Error(ErrorCode::InvalidInput, "target_variance_scale must be > 0");
}

double BnNodeStats::normalize(double raw) const {
  if (stretched()) return sigmoid_stretch(raw, stretch_center, stretch_k);
  if (raw_max == raw_min) return 0.0;
  return std::clamp((raw - raw_min) / (raw_max - raw_min), 0.0, 1.0);
}

double BnNodeStats::unnormalize(double value) const {
  if (stretched()) {
    const double v = std::clamp(value, 1e-12, 1.0 - 1e-12);
    return stretch_center + std::log(v / (1.0 - v)) / stretch_k;
  }
  return raw_min + value * (raw_max - raw_min);
}

const BnNodeStats* BnSpec::stats(std::string_view node) const {
  for (const auto& s : macros)
    if (s.name == node) return &s;
  for (const auto& s : indicators)
    if (s.name == node) return &s;
  if (target.name == node) return &target;
  return nullptr;
}

namespace {

std::string sum_name(std::size_t k) { return "MacroSum" + std::to_string(k); }

std::size_t ranked_state(double v, std::size_t states) {
  return std::min(static_cast<std::size_t>(std::floor(v * static_cast<double>(states))), states - 1);
}

int total_weight(const BnConfig& c) { return std::accumulate(c.macro_weights.begin(), c.macro_weights.end(), 0); }

// Macro roots, their weighted partial sums and CompanyPerformance.
void build_core(const BnSpec& spec, DiscreteNetwork& net) {
  const auto& c = spec.config;
  const std::size_t B = c.bins;
  const auto edges = uniform_edges(B);
  std::array<std::size_t, 5> macro{};
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& s = spec.macros[i];
    macro[i] = net.add(s.name, B, {}, tnormal_masses(s.mean, std::max(s.variance, c.variance_floor), edges));
  }
  // Partial sums of weighted bin indices: S_k = S_{k-1} + w_k * idx_k.
  std::size_t prev = macro[0];
  std::size_t prev_states = B;
  int prev_weight = c.macro_weights[0];
  for (std::size_t k = 1; k < 5; ++k) {
    const int w = c.macro_weights[k];
    const std::size_t states = (B - 1) * static_cast<std::size_t>(prev_weight + w) + 1;
    std::vector<double> cpt(states * prev_states * B, 0.0);
    for (std::size_t m = 0; m < B; ++m)
      for (std::size_t s = 0; s < prev_states; ++s) {
        const std::size_t prev_value = k == 1 ? s * static_cast<std::size_t>(prev_weight) : s;
        const std::size_t child = prev_value + static_cast<std::size_t>(w) * m;
        cpt[(s + prev_states * m) * states + child] = 1.0;
      }
    prev = net.add(sum_name(k + 1), states, {prev, macro[k]}, std::move(cpt));
    prev_states = states;
    prev_weight += w;
  }
  const double W = total_weight(c);
  std::vector<double> cp;
  cp.reserve(prev_states * B);
  for (std::size_t s = 0; s < prev_states; ++s) {
    const auto m = tnormal_masses((static_cast<double>(s) + 0.5 * W) / (static_cast<double>(B) * W), c.performance_variance, edges);
    cp.insert(cp.end(), m.begin(), m.end());
  }
  net.add(std::string(kLatentNode), B, {prev}, std::move(cp));
}

// Target mean per (macro sum, performance bin) before the shift.
double target_base_mean(const BnConfig& c, std::size_t s, std::size_t cp_bin) {
  const double B = static_cast<double>(c.bins);
  const double W = total_weight(c);
  const double macro_mean = (static_cast<double>(s) + 0.5 * W) / (B * W);
  const double cp_mid = (static_cast<double>(cp_bin) + 0.5) / B;
  return (W * macro_mean + c.performance_weight * cp_mid) / (W + c.performance_weight);
}

double target_variance(const BnSpec& spec) {
  return std::max(spec.target.variance * spec.config.target_variance_scale, spec.config.variance_floor);
}

double calibrate_shift(const BnSpec& spec, const DiscreteNetwork& core) {
  const auto& c = spec.config;
  const std::size_t B = c.bins;
  const auto s5 = core.index_of(sum_name(5));
  const auto cp = core.index_of(std::string(kLatentNode));
  const auto ps = infer_posterior(core, {}, s5).masses;
  const auto& cp_cpt = core.variables()[cp].cpt;
  const auto edges = uniform_edges(B);
  const double var = target_variance(spec);

  // Joint weights of distinct base means.
  std::vector<std::pair<double, double>> points;
  for (std::size_t s = 0; s < ps.size(); ++s) {
    if (ps[s] == 0.0) continue;
    for (std::size_t j = 0; j < B; ++j) {
      const double w = ps[s] * cp_cpt[s * B + j];
      if (w > 1e-15) points.emplace_back(target_base_mean(c, s, j), w);
    }
  }
  auto expected = [&](double shift) {
    double e = 0.0, wsum = 0.0;
    for (const auto& [m, w] : points) {
      const auto masses = tnormal_masses(m + shift, var, edges);
      double mean = 0.0;
      for (std::size_t i = 0; i < B; ++i) mean += masses[i] * 0.5 * (edges[i] + edges[i + 1]);
      e += w * mean;
      wsum += w;
    }
    return e / wsum;
  };
  double lo = -1.0, hi = 1.0;
  const double goal = spec.target.mean;
  if (expected(lo) >= goal) return lo;
  if (expected(hi) <= goal) return hi;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected(mid) < goal ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> macro_raw(const Observation& o, std::size_t i) {
  auto f = [&](Feature feat) { return o.features[static_cast<std::size_t>(feat)]; };
  std::optional<double> v;
  switch (i) {
    case 0:
      if (const auto u = f(Feature::UNRATE)) v = employment_rate(*u);
      break;
    case 1: v = f(Feature::GDP_change); break;
    case 2: v = f(Feature::T10Y3M); break;
    case 3: v = f(Feature::DGS10); break;
    case 4: v = f(Feature::T5YIE); break;
  }
  if (v && std::isfinite(*v)) return {*v};
  return {};
}

constexpr std::array<Feature, 5> kIndicatorFeatures = {Feature::ROA, Feature::ROE, Feature::CurrentRatio,
                                                       Feature::TotalAssetTurnover, Feature::OCG};
constexpr std::array<std::string_view, 5> kMacroSources = {"100-UNRATE", "GDP_change", "T10Y3M", "DGS10", "T5YIE"};

BnNodeStats describe(const std::string& name, const std::string& source, const std::vector<double>& raw,
                     bool stretch) {
  if (raw.size() < 2) throw Error(ErrorCode::DegenerateStatistics, "too few values for node " + name, {name});
  BnNodeStats s;
  s.name = name;
  s.source = source;
  const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
  s.raw_min = *mn;
  s.raw_max = *mx;
  double mean = 0.0;
  for (double v : raw) mean += v;
  mean /= static_cast<double>(raw.size());
  double ss = 0.0;
  for (double v : raw) ss += (v - mean) * (v - mean);
  s.raw_mean = mean;
  s.raw_sd = std::sqrt(ss / static_cast<double>(raw.size()));
  if (s.raw_max == s.raw_min || !(s.raw_sd > 0.0))
    throw Error(ErrorCode::DegenerateStatistics, "node " + name + " has zero variance in the panel", {name});
  if (stretch) {
    s.stretch_center = mean;
    s.stretch_k = default_stretch_steepness(s.raw_sd);
  }
  double nm = 0.0;
  std::vector<double> norm;
  norm.reserve(raw.size());
  for (double v : raw) norm.push_back(s.normalize(v));
  for (double v : norm) nm += v;
  nm /= static_cast<double>(norm.size());
  double nv = 0.0;
  for (double v : norm) nv += (v - nm) * (v - nm);
  s.mean = nm;
  s.variance = nv / static_cast<double>(norm.size());
  if (!(s.variance > 0.0))
    throw Error(ErrorCode::DegenerateStatistics, "node " + name + " has zero normalized variance", {name});
  return s;
}

void fill_histogram(BnNodeStats& s, const std::vector<double>& raw, std::size_t states) {
  s.histogram.assign(states, 0.0);
  for (double v : raw) s.histogram[ranked_state(s.normalize(v), states)] += 1.0;
  for (auto& h : s.histogram) h /= static_cast<double>(raw.size());
}

nlohmann::ordered_json stats_to_json(const BnNodeStats& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["source"] = s.source;
  j["raw_min"] = s.raw_min;
  j["raw_max"] = s.raw_max;
  j["raw_mean"] = s.raw_mean;
  j["raw_sd"] = s.raw_sd;
  j["mean"] = s.mean;
  j["variance"] = s.variance;
  if (!s.histogram.empty()) j["histogram"] = s.histogram;
  if (s.stretched()) j["stretch"] = {{"center", s.stretch_center}, {"k", s.stretch_k}};
  return j;
}

BnNodeStats stats_from_json(const nlohmann::json& j) {
  BnNodeStats s;
  s.name = j.at("name").get<std::string>();
  s.source = j.value("source", std::string());
  s.raw_min = j.at("raw_min").get<double>();
  s.raw_max = j.at("raw_max").get<double>();
  s.raw_mean = j.at("raw_mean").get<double>();
  s.raw_sd = j.at("raw_sd").get<double>();
  s.mean = j.at("mean").get<double>();
  s.variance = j.at("variance").get<double>();
  if (j.contains("histogram")) s.histogram = j["histogram"].get<std::vector<double>>();
  if (j.contains("stretch")) {
    s.stretch_center = j["stretch"].at("center").get<double>();
    s.stretch_k = j["stretch"].at("k").get<double>();
  }
  return s;
}

}  // namespace

BnSpec build_bn_spec(const Panel& panel, const BnConfig& config) {
  config.validate();
  BnSpec spec;
  spec.config = config;
  spec.observations = panel.observations.size();
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> raw;
    for (const auto& o : panel.observations)
      for (double v : macro_raw(o, i)) raw.push_back(v);
    spec.macros[i] = describe(std::string(kMacroNodes[i]), std::string(kMacroSources[i]), raw, false);
  }
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> raw;
    for (const auto& o : panel.observations)
      if (const auto v = o.features[static_cast<std::size_t>(kIndicatorFeatures[i])]; v && std::isfinite(*v))
        raw.push_back(*v);
    const bool ocg = kIndicatorFeatures[i] == Feature::OCG;
    auto s = describe(std::string(kIndicatorNodes[i]), std::string(feature_name(kIndicatorFeatures[i])), raw, ocg);
    fill_histogram(s, raw, ocg ? config.ocg_states : config.indicator_states);
    spec.indicators[i] = std::move(s);
  }
  std::vector<double> nm;
  for (const auto& o : panel.observations)
    if (std::isfinite(o.target(Task::NetMargin))) nm.push_back(o.target(Task::NetMargin));
  spec.target = describe(std::string(kTargetNode), "NetMargin(t+1)", nm, false);

  DiscreteNetwork core;
  build_core(spec, core);
  spec.target_shift = calibrate_shift(spec, core);
  return spec;
}

DiscreteNetwork build_network(const BnSpec& spec) {
  spec.config.validate();
  const auto& c = spec.config;
  const std::size_t B = c.bins;
  DiscreteNetwork net;
  build_core(spec, net);
  const auto cp = net.index_of(std::string(kLatentNode));
  const auto p = infer_posterior(net, {}, cp).masses;

  // Indicators: comonotone coupling of the performance marginal with the
  // panel histogram, mixed with a uniform table.
  std::vector<double> F(B + 1, 0.0);
  for (std::size_t j = 0; j < B; ++j) F[j + 1] = F[j] + p[j];
  F[B] = 1.0;
  for (const auto& ind : spec.indicators) {
    const std::size_t S = ind.histogram.size();
    if (S < 7 || S > 11) throw Error(ErrorCode::InvalidInput, "indicator " + ind.name + " has a bad histogram", {ind.name});
    std::vector<double> G(S + 1, 0.0);
    for (std::size_t s = 0; s < S; ++s) G[s + 1] = G[s] + ind.histogram[s];
    if (std::abs(G[S] - 1.0) > 1e-9) throw Error(ErrorCode::InvalidInput, "histogram of " + ind.name + " does not sum to 1");
    G[S] = 1.0;
    std::vector<double> cpt(S * B, 0.0);
    for (std::size_t j = 0; j < B; ++j) {
      std::vector<double> col(S, 0.0);
      if (p[j] > 0.0) {
        for (std::size_t s = 0; s < S; ++s) col[s] = std::max(0.0, std::min(F[j + 1], G[s + 1]) - std::max(F[j], G[s])) / p[j];
      } else {
        // Unreachable performance bin: the state holding its quantile.
        std::size_t s = static_cast<std::size_t>(std::upper_bound(G.begin(), G.end(), F[j]) - G.begin());
        col[std::min(s == 0 ? 0 : s - 1, S - 1)] = 1.0;
      }
      double sum = 0.0;
      for (double v : col) sum += v;
      for (std::size_t s = 0; s < S; ++s)
        cpt[j * S + s] = (1.0 - c.indicator_noise) * col[s] / sum + c.indicator_noise / static_cast<double>(S);
    }
    net.add(ind.name, S, {cp}, std::move(cpt));
  }

  const auto s5 = net.index_of(sum_name(5));
  const std::size_t S5 = net.variables()[s5].states;
  const auto edges = uniform_edges(B);
  const double var = target_variance(spec);
  std::vector<double> cpt;
  cpt.reserve(B * S5 * B);
  for (std::size_t j = 0; j < B; ++j)
    for (std::size_t s = 0; s < S5; ++s) {
      const auto m = tnormal_masses(target_base_mean(c, s, j) + spec.target_shift, var, edges);
      cpt.insert(cpt.end(), m.begin(), m.end());
    }
  net.add(std::string(kTargetNode), B, {s5, cp}, std::move(cpt));
  return net;
}

nlohmann::ordered_json BnSpec::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = kBnFormat;
  j["tool_version"] = kToolVersion;
  j["observations"] = observations;
  j["config"] = {{"bins", config.bins},
                 {"indicator_states", config.indicator_states},
                 {"ocg_states", config.ocg_states},
                 {"macro_weights", config.macro_weights},
                 {"performance_weight", config.performance_weight},
                 {"performance_variance", config.performance_variance},
                 {"indicator_noise", config.indicator_noise},
                 {"variance_floor", config.variance_floor},
                 {"target_variance_scale", config.target_variance_scale}};
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (auto m : kMacroNodes) edges.push_back({m, kLatentNode});
  for (auto m : kMacroNodes) edges.push_back({m, kTargetNode});
  for (auto i : kIndicatorNodes) edges.push_back({kLatentNode, i});
  edges.push_back({kLatentNode, kTargetNode});
  j["edges"] = std::move(edges);
  nlohmann::ordered_json m = nlohmann::ordered_json::array(), ind = nlohmann::ordered_json::array();
  for (const auto& s : macros) m.push_back(stats_to_json(s));
  for (const auto& s : indicators) ind.push_back(stats_to_json(s));
  j["macros"] = std::move(m);
  j["indicators"] = std::move(ind);
  j["target"] = stats_to_json(target);
  j["target_shift"] = target_shift;
  return j;
}

BnSpec BnSpec::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kBnFormat)
    throw Error(ErrorCode::ParseError, "not a " + std::string(kBnFormat) + " spec", {"format"});
  try {
    BnSpec s;
    const auto& c = j.at("config");
    s.config.bins = c.at("bins").get<std::size_t>();
    s.config.indicator_states = c.at("indicator_states").get<std::size_t>();
    s.config.ocg_states = c.at("ocg_states").get<std::size_t>();
    s.config.macro_weights = c.at("macro_weights").get<std::array<int, 5>>();
    s.config.performance_weight = c.at("performance_weight").get<int>();
    s.config.performance_variance = c.at("performance_variance").get<double>();
    s.config.indicator_noise = c.at("indicator_noise").get<double>();
    s.config.variance_floor = c.at("variance_floor").get<double>();
    s.config.target_variance_scale = c.at("target_variance_scale").get<double>();
    s.config.validate();
    s.observations = j.value("observations", std::size_t{0});
    const auto& m = j.at("macros");
    const auto& ind = j.at("indicators");
    if (m.size() != 5 || ind.size() != 5) throw Error(ErrorCode::ParseError, "spec needs five macro and five indicator nodes");
    for (std::size_t i = 0; i < 5; ++i) {
      s.macros[i] = stats_from_json(m[i]);
      s.indicators[i] = stats_from_json(ind[i]);
      if (s.macros[i].name != kMacroNodes[i] || s.indicators[i].name != kIndicatorNodes[i])
        throw Error(ErrorCode::ParseError, "spec node order does not match the network topology");
    }
    s.target = stats_from_json(j.at("target"));
    s.target_shift = j.at("target_shift").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bn spec: ") + e.what());
  }
}

BayesNet::BayesNet(BnSpec spec) : spec_(std::move(spec)), net_(build_network(spec_)) {}

StateEvidence BayesNet::to_states(const Evidence& evidence) const {
  StateEvidence out;
  for (const auto& [name, value] : evidence) {
    if (name == kLatentNode)
      throw Error(ErrorCode::LatentEvidence, std::string(kLatentNode) + " is latent and cannot be observed", {name});
    if (!spec_.stats(name)) throw Error(ErrorCode::UnknownNode, "no observable node named '" + name + "'", {name});
    if (!(value >= 0.0 && value <= 1.0))
      throw Error(ErrorCode::InvalidInput, "evidence for " + name + " must lie in [0, 1]", {name});
    const auto idx = net_.index_of(name);
    out[idx] = ranked_state(value, net_.variables()[idx].states);
  }
  return out;
}

namespace {

std::size_t public_node(const DiscreteNetwork& net, const BnSpec& spec, const std::string& node) {
  if (node != kLatentNode && !spec.stats(node))
    throw Error(ErrorCode::UnknownNode, "no node named '" + node + "'", {node});
  return net.index_of(node);
}

}  // namespace

Posterior BayesNet::query(const Evidence& evidence, const std::string& node) const {
  const auto ev = to_states(evidence);
  return infer_posterior(net_, ev, public_node(net_, spec_, node));
}

Posterior BayesNet::query_oracle(const Evidence& evidence, const std::string& node) const {
  const auto ev = to_states(evidence);
  return enumerate_joint_oracle(net_, ev, public_node(net_, spec_, node));
}

Evidence BayesNet::normalize(const std::map<std::string, double>& raw) const {
  Evidence out;
  for (const auto& [name, value] : raw) {
    if (name == kLatentNode)
      throw Error(ErrorCode::LatentEvidence, std::string(kLatentNode) + " is latent and cannot be observed", {name});
    const auto* s = spec_.stats(name);
    if (!s) throw Error(ErrorCode::UnknownNode, "no observable node named '" + name + "'", {name});
    if (!std::isfinite(value)) throw Error(ErrorCode::InvalidInput, "evidence for " + name + " is not finite", {name});
    out[name] = s->normalize(value);
  }
  return out;
}

bool BayesNet::within_average_band(const std::map<std::string, double>& raw_indicators) const {
  for (const auto& [name, value] : raw_indicators) {
    const BnNodeStats* s = nullptr;
    for (const auto& ind : spec_.indicators)
      if (ind.name == name) s = &ind;
    if (!s) throw Error(ErrorCode::UnknownNode, "no indicator named '" + name + "'", {name});
    if (std::abs(value - s->raw_mean) > s->raw_sd) return false;
  }
  return true;
}

ExpectedValue expected_net_margin(const Posterior& posterior, const Normalizer::Bounds& bounds) {
  return {posterior.mean, bounds.min + posterior.mean * (bounds.max - bounds.min)};
}

nlohmann::ordered_json posterior_to_json(const Posterior& p, const BnNodeStats* stats) {
  nlohmann::ordered_json j;
  j["node"] = p.node;
  j["edges"] = p.edges;
  j["masses"] = p.masses;
  j["expected_value"] = p.mean;
  j["variance"] = p.variance;
  if (stats) j["expected_raw"] = stats->unnormalize(p.mean);
  return j;
}

}  // namespace finpred
