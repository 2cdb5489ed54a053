#include <doctest.h>

#include <cmath>
#include <numeric>

#include "finpred/bayesnet.hpp"
#include "finpred/error.hpp"
#include "finpred/random.hpp"
#include "support.hpp"

using namespace finpred;

namespace {

DiscreteNetwork random_network(Rng& rng, bool allow_zeros) {
  DiscreteNetwork net;
  const std::size_t nodes = 2 + rng.below(5);  // 2..6
  for (std::size_t v = 0; v < nodes; ++v) {
    const std::size_t states = 2 + rng.below(8);  // 2..9
    std::vector<std::size_t> parents;
    for (std::size_t p = 0; p < v; ++p)
      if (parents.size() < 3 && rng.uniform() < 0.5) parents.push_back(p);
    std::size_t cols = 1;
    for (auto p : parents) cols *= net.variables()[p].states;
    std::vector<double> cpt(states * cols);
    for (std::size_t c = 0; c < cols; ++c) {
      double sum = 0;
      for (std::size_t s = 0; s < states; ++s) {
        double x = rng.uniform();
        if (allow_zeros && rng.uniform() < 0.2) x = 0;
        cpt[c * states + s] = x;
        sum += x;
      }
      if (sum == 0) {
        cpt[c * states] = 1;
        sum = 1;
      }
      for (std::size_t s = 0; s < states; ++s) cpt[c * states + s] /= sum;
    }
    net.add("v" + std::to_string(v), states, parents, cpt);
  }
  return net;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

const BayesNet& panel_bn() {
  static const BayesNet bn(build_bn_spec(testing::small_panel()));
  return bn;
}

}  // namespace

TEST_CASE("variable elimination equals enumeration on random networks") {
  Rng rng(2718);
  int compared = 0, zero_evidence = 0;
  for (int t = 0; t < 200; ++t) {
    const auto net = random_network(rng, t % 3 == 0);
    const std::size_t n = net.size();
    StateEvidence ev;
    for (std::size_t v = 0; v < n; ++v)
      if (rng.uniform() < 0.3) ev[v] = rng.below(net.variables()[v].states);
    const std::size_t q = rng.below(n);
    Posterior a, b;
    bool ve_threw = false, oracle_threw = false;
    try {
      a = infer_posterior(net, ev, q);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroProbabilityEvidence);
      ve_threw = true;
    }
    try {
      b = enumerate_joint_oracle(net, ev, q);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroProbabilityEvidence);
      oracle_threw = true;
    }
    CHECK(ve_threw == oracle_threw);
    if (ve_threw) {
      ++zero_evidence;
      continue;
    }
    ++compared;
    CHECK(total_variation(a.masses, b.masses) < 1e-10);
    CHECK(std::abs(std::accumulate(a.masses.begin(), a.masses.end(), 0.0) - 1.0) < 1e-9);
  }
  CHECK(compared >= 100);
  MESSAGE("compared " << compared << ", zero-probability " << zero_evidence);
}

TEST_CASE("evidence on the query node gives a point mass") {
  Rng rng(3);
  const auto net = random_network(rng, false);
  const auto p = infer_posterior(net, {{0, 1}}, 0);
  CHECK(p.masses[1] == 1.0);
}

TEST_CASE("network construction validates tables") {
  DiscreteNetwork net;
  CHECK_THROWS_AS(net.add("a", 2, {}, {0.5, 0.6}), Error);
  CHECK_THROWS_AS(net.add("a", 2, {}, {1.0}), Error);
  net.add("a", 2, {}, {0.3, 0.7});
  CHECK_THROWS_AS(net.add("b", 2, {5}, {1, 0, 0, 1}), Error);
  CHECK_THROWS_AS(net.index_of("zzz"), Error);
  CHECK(net.find("a") == 0u);
}

TEST_CASE("two-node hand computation") {
  DiscreteNetwork net;
  net.add("rain", 2, {}, {0.8, 0.2});
  net.add("wet", 2, {0}, {0.9, 0.1, 0.2, 0.8});
  // P(rain | wet) = 0.2*0.8 / (0.8*0.1 + 0.2*0.8)
  const auto p = infer_posterior(net, {{1, 1}}, 0);
  CHECK(p.masses[1] == doctest::Approx(0.16 / 0.24));
}

TEST_CASE("truncated normal masses") {
  const auto e = uniform_edges(10);
  CHECK(e.size() == 11);
  CHECK(e.front() == 0.0);
  CHECK(e.back() == 1.0);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto m = tnormal_masses(rng.uniform(-0.5, 1.5), std::pow(10.0, rng.uniform(-8, 1)), e);
    CHECK(std::abs(std::accumulate(m.begin(), m.end(), 0.0) - 1.0) < 1e-12);
    for (double x : m) CHECK(x >= 0.0);
  }
  const auto sym = tnormal_masses(0.5, 0.01, e);
  for (std::size_t i = 0; i < 5; ++i) CHECK(sym[i] == doctest::Approx(sym[9 - i]));
  const auto far = tnormal_masses(30.0, 1e-6, e);
  CHECK(far.back() == doctest::Approx(1.0));
}

TEST_CASE("configuration limits") {
  BnConfig c;
  CHECK_NOTHROW(c.validate());
  c.macro_weights = {3, 3, 3, 1, 1};
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.indicator_states = 6;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.macro_weights = {0, 1, 1, 1, 1};
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("financial network prior mean matches the panel target mean") {
  const auto& bn = panel_bn();
  const auto p = bn.query({}, std::string(kTargetNode));
  CHECK(std::abs(std::accumulate(p.masses.begin(), p.masses.end(), 0.0) - 1.0) < 1e-9);
  CHECK(p.mean == doctest::Approx(bn.spec().target.mean).epsilon(1e-6));
}

TEST_CASE("better indicator evidence raises the expected margin") {
  const auto& bn = panel_bn();
  double prev = -1;
  for (double roa : {0.05, 0.3, 0.5, 0.7, 0.95}) {
    const auto p = bn.query({{"ROA", roa}, {"ROE", roa}}, std::string(kTargetNode));
    CHECK(p.mean >= prev);
    prev = p.mean;
  }
}

TEST_CASE("financial network evidence errors") {
  const auto& bn = panel_bn();
  const std::string t(kTargetNode);
  auto code = [&](const Evidence& ev, const std::string& node) {
    try {
      bn.query(ev, node);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ParseError;  // sentinel: no throw
  };
  CHECK(code({{std::string(kLatentNode), 0.5}}, t) == ErrorCode::LatentEvidence);
  CHECK(code({{"Nope", 0.5}}, t) == ErrorCode::UnknownNode);
  CHECK(code({{"ROA", 1.5}}, t) == ErrorCode::InvalidInput);
  CHECK(code({}, "Nope") == ErrorCode::UnknownNode);
  CHECK_THROWS_AS(bn.query_oracle({}, t), Error);
}

TEST_CASE("indicator posterior matches a hand computation over the latent node") {
  // ROA and ROE hang off CompanyPerformance only, so
  // P(ROA | ROE) = sum_cp P(ROA | cp) P(cp) P(ROE | cp) / P(ROE).
  const auto& bn = panel_bn();
  const auto& net = bn.network();
  const auto cp = net.index_of(std::string(kLatentNode));
  const auto& roa = net.variables()[net.index_of("ROA")];
  const auto& roe = net.variables()[net.index_of("ROE")];
  REQUIRE(roa.parents == std::vector<std::size_t>{cp});
  REQUIRE(roe.parents == std::vector<std::size_t>{cp});
  const auto prior = bn.query({}, std::string(kLatentNode)).masses;
  const std::size_t s_roe = static_cast<std::size_t>(0.8 * static_cast<double>(roe.states));
  std::vector<double> expect(roa.states, 0.0);
  double z = 0;
  for (std::size_t c = 0; c < prior.size(); ++c) {
    const double w = prior[c] * roe.cpt[c * roe.states + s_roe];
    z += w;
    for (std::size_t r = 0; r < roa.states; ++r) expect[r] += w * roa.cpt[c * roa.states + r];
  }
  for (auto& e : expect) e /= z;
  const auto got = bn.query({{"ROE", 0.8}}, "ROA");
  CHECK(total_variation(got.masses, expect) < 1e-10);
}

TEST_CASE("bn spec json round trip") {
  const auto& bn = panel_bn();
  const auto j = bn.spec().to_json();
  CHECK(j["format"] == std::string(kBnFormat));
  const BayesNet back(BnSpec::from_json(nlohmann::json::parse(j.dump())));
  const Evidence ev{{"ROA", 0.6}, {"YieldCurve", 0.3}};
  const auto a = bn.query(ev, std::string(kTargetNode)), b = back.query(ev, std::string(kTargetNode));
  CHECK(a.masses == b.masses);
}

TEST_CASE("raw normalization and the average band") {
  const auto& bn = panel_bn();
  const auto& roa = bn.spec().indicators[0];
  CHECK(roa.name == "ROA");
  CHECK(roa.normalize(roa.raw_min) == 0.0);
  CHECK(roa.normalize(roa.raw_max) == 1.0);
  CHECK(roa.unnormalize(roa.normalize(roa.raw_mean)) == doctest::Approx(roa.raw_mean));
  const auto& ocg = bn.spec().indicators[4];
  CHECK(ocg.stretched());
  CHECK(ocg.normalize(ocg.stretch_center) == doctest::Approx(0.5));
  CHECK(ocg.unnormalize(ocg.normalize(ocg.raw_mean)) == doctest::Approx(ocg.raw_mean));
  std::map<std::string, double> avg, far;
  for (const auto& s : bn.spec().indicators) {
    avg[s.name] = s.raw_mean;
    far[s.name] = s.raw_mean + 3 * s.raw_sd;
  }
  CHECK(bn.within_average_band(avg));
  CHECK_FALSE(bn.within_average_band(far));
}

TEST_CASE("expected net margin inverts the target scaling") {
  Posterior p;
  p.mean = 0.25;
  const auto e = expected_net_margin(p, {-0.1, 0.3});
  CHECK(e.normalized == 0.25);
  CHECK(e.raw == doctest::Approx(0.0));
}
