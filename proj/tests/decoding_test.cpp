#include <gtest/gtest.h>

#include <random>

#include "groundchat/decoding.hpp"
#include "support.hpp"

namespace gc = groundchat;
using gc::VectorXd;

namespace {

gc::Categorical cat(std::initializer_list<double> v) {
  VectorXd p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p[i++] = x;
  return gc::Categorical(p);
}

gc::CandidateSet persona_candidates() {
  return gc::build_candidate_set(
      gc::make_persona_set("p", {"i love surfing", "my favorite color is red", "i am a nurse"}), {});
}

}  // namespace

TEST(Nucleus, KeepsCrossingElementAndRenormalizes) {
  gc::Categorical f = gc::nucleus_filter(cat({0.5, 0.3, 0.15, 0.05}), 0.9);
  EXPECT_NEAR(f[0], 10.0 / 19, 1e-15);
  EXPECT_NEAR(f[1], 6.0 / 19, 1e-15);
  EXPECT_NEAR(f[2], 3.0 / 19, 1e-15);
  EXPECT_EQ(f[3], 0.0);
}

TEST(Nucleus, EdgeCases) {
  gc::Categorical d = cat({0.1, 0.6, 0.3});
  EXPECT_EQ(gc::nucleus_filter(d, 1.0).probs(), d.probs());
  gc::Categorical one = gc::nucleus_filter(cat({0.0, 1.0, 0.0}), 0.5);
  EXPECT_EQ(one[1], 1.0);
  gc::Categorical tiny = gc::nucleus_filter(d, 1e-9);
  EXPECT_EQ(tiny[1], 1.0);
  gc::Categorical once = gc::nucleus_filter(d, 0.8);
  EXPECT_TRUE(gc::nucleus_filter(once, 0.8).probs().isApprox(once.probs(), 1e-15));
  EXPECT_THROW(gc::nucleus_filter(d, 0.0), gc::DomainError);
  EXPECT_THROW(gc::nucleus_filter(d, 1.5), gc::DomainError);
}

TEST(Nucleus, TiesKeepLowerIndexFirst) {
  gc::Categorical f = gc::nucleus_filter(cat({0.25, 0.25, 0.25, 0.25}), 0.5);
  EXPECT_DOUBLE_EQ(f[0], 0.5);
  EXPECT_DOUBLE_EQ(f[1], 0.5);
  EXPECT_EQ(f[2], 0.0);
}

TEST(DecodeConfig, Validation) {
  gc::DecodeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.nucleus_p = 0.0;
  EXPECT_THROW(c.validate(), gc::DomainError);
  c = {};
  c.prior_temperature = 0.0;
  EXPECT_THROW(c.validate(), gc::DomainError);
  c = {};
  c.max_new_tokens = 0;
  EXPECT_THROW(c.validate(), gc::DomainError);
}

TEST(Respond, SingleNullCandidate) {
  gc::Model m = gc_test::tiny_model();
  gc::CandidateSet only_null;
  only_null.candidates = {gc::Expansion{std::nullopt, gc::ExpansionType::Null, "", 0}};
  std::mt19937_64 rng(1);
  gc::Response r = gc::respond(gc_test::history({"hello"}), only_null, m, {0.9, 1.0, 6, 0}, rng);
  EXPECT_EQ(r.chosen_index, 0u);
  EXPECT_EQ(r.prior_dist.size(), 1);
  EXPECT_DOUBLE_EQ(r.prior_dist[0], 1.0);
  EXPECT_LE(r.tokens.size(), 6u);
  EXPECT_THROW(gc::respond({}, gc::CandidateSet{}, m, {}, rng), gc::ContractError);
}

TEST(Respond, SeededCallsRepeat) {
  gc::Model m = gc_test::tiny_model();
  gc::CandidateSet c = persona_candidates();
  gc::DialogHistory h = gc_test::history({"do you like the beach ?"});
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    std::mt19937_64 a(seed), b(seed);
    gc::Response x = gc::respond(h, c, m, {}, a);
    gc::Response y = gc::respond(h, c, m, {}, b);
    EXPECT_EQ(x.chosen_index, y.chosen_index);
    EXPECT_EQ(x.tokens, y.tokens);
    EXPECT_EQ(x.text, y.text);
  }
}

TEST(Respond, ForcedIndex) {
  gc::Model m = gc_test::tiny_model();
  gc::CandidateSet c = persona_candidates();
  std::mt19937_64 rng(5);
  gc::Response r = gc::respond({}, c, m, {}, rng, std::size_t{2});
  EXPECT_EQ(r.chosen_index, 2u);
  EXPECT_TRUE(r.forced);
  EXPECT_THROW(gc::respond({}, c, m, {}, rng, std::size_t{4}), gc::ValidationError);
}

TEST(Respond, TemperatureControlsPriorEntropy) {
  gc::Model m = gc_test::tiny_model();
  gc::CandidateSet c = persona_candidates();
  gc::DialogHistory h = gc_test::history({"what is your favorite color ?"});
  const double hot = gc::entropy(gc::prior_distribution(h, c, m, 5.0));
  const double mid = gc::entropy(gc::prior_distribution(h, c, m, 1.0));
  const double cold = gc::entropy(gc::prior_distribution(h, c, m, 0.1));
  EXPECT_GT(hot, mid);
  EXPECT_GT(mid, cold);
  EXPECT_LE(hot, std::log(4.0) + 1e-12);
}

TEST(Respond, ChosenIndexFollowsThePrior) {
  gc::Settings s = gc_test::tiny_settings();
  s.latent.init_std = 1.0;
  gc::Model m = gc_test::tiny_model(s);
  gc::CandidateSet c = persona_candidates();
  gc::DialogHistory h = gc_test::history({"i love cats"});
  gc::DecodeConfig cfg{0.9, 1.0, 1, 0};
  gc::Categorical prior = gc::prior_distribution(h, c, m);
  std::mt19937_64 rng(2024);
  const int n = 4000;
  std::vector<int> counts(c.size(), 0);
  for (int i = 0; i < n; ++i) ++counts[gc::respond(h, c, m, cfg, rng).chosen_index];
  double chi2 = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double e = n * prior[static_cast<Eigen::Index>(k)];
    chi2 += (counts[k] - e) * (counts[k] - e) / e;
  }
  // 0.999 quantile of chi-squared with 3 degrees of freedom.
  EXPECT_LT(chi2, 16.27);
}
