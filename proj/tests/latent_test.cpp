#include <gtest/gtest.h>

#include <random>

#include "groundchat/latent.hpp"
#include "support.hpp"

namespace gc = groundchat;
using gc::ExpansionType;
using gc::VectorXd;

namespace {

gc::Embedding vec(std::initializer_list<double> v) {
  gc::Embedding e(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) e[i++] = x;
  return e;
}

// Two-dimensional toy: history [1, 0], three candidates, hand-set params.
struct Toy {
  gc::LatentInputs in;
  gc::LogLinearParams p = gc::LogLinearParams::zeros(2, false);
  Toy() {
    in.history = vec({1.0, 0.0});
    in.candidates = gc::MatrixXd(3, 2);
    in.candidates << 2.0, 3.0,  //
        -1.0, 0.5,              //
        0.0, 0.0;               // null
    in.types = {ExpansionType::Original, ExpansionType::XWant, ExpansionType::Null};
    p.lambda1(0, 0) = 1.0;
    p.lambda2(0, 0) = 2.0;
    p.lambda3(0, 0) = 0.5;
    p.type_emb.row(static_cast<int>(ExpansionType::Original)) << 1, 0, 0, 0, 0;
    p.type_emb.row(static_cast<int>(ExpansionType::XWant)) << 0.3, 1, 0, 0, 0;
    p.type_emb.row(static_cast<int>(ExpansionType::Null)) << 0, 0, 1, 0, 0;
    p.f2_head.col(0) << 1, 0, 0, 0, 0;
    p.f3_head.col(0) << 0, 1, 2, 0, 0, /*history part*/ 4, 1;
    p.f3_bias(0, 0) = 0.25;
  }
};

VectorXd random_probs(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v / v.sum();
}

}  // namespace

TEST(Features, F1) {
  gc::LogLinearParams p = gc::LogLinearParams::zeros(2, false);
  EXPECT_DOUBLE_EQ(gc::feature_f1(vec({1, 0}), vec({2, 3}), p), 2.0);
  EXPECT_DOUBLE_EQ(gc::feature_f1(vec({0, 0}), vec({2, 3}), p), 0.0);
  EXPECT_DOUBLE_EQ(gc::feature_f1(vec({1, 5}), vec({0, 0}), p), 0.0);
  gc::LogLinearParams b = gc::LogLinearParams::init(2, false, 0, 0.1, true);
  EXPECT_DOUBLE_EQ(gc::feature_f1(vec({1, 0}), vec({2, 3}), b), 2.0);  // identity init
}

TEST(Features, F2) {
  gc::LogLinearParams p = gc::LogLinearParams::init(4, false, 3);
  p.f2_head.setZero();
  for (int t = 0; t < gc::kNumExpansionTypes; ++t)
    EXPECT_EQ(gc::feature_f2(static_cast<ExpansionType>(t), p), 0.0);
  p.f2_head.col(0) << 1, 0, 0, 0, 0;
  p.type_emb.row(static_cast<int>(ExpansionType::XWant)) << 0.3, 0.7, -2, 4, 1;
  EXPECT_DOUBLE_EQ(gc::feature_f2(ExpansionType::XWant, p), 0.3);
}

TEST(Features, F3) {
  Toy t;
  // type part [0,1,2,0,0]·[0.3,1,0,0,0] = 1, history part [4,1]·[1,0] = 4, bias 0.25.
  EXPECT_DOUBLE_EQ(gc::feature_f3(ExpansionType::XWant, t.in.history, t.p), 5.25);
  EXPECT_DOUBLE_EQ(gc::feature_f3(ExpansionType::XWant, vec({0, 1}), t.p), 2.25);
  gc::LogLinearParams z = gc::LogLinearParams::zeros(2, false);
  EXPECT_EQ(gc::feature_f3(ExpansionType::XWant, t.in.history, z), 0.0);
}

TEST(Prior, HandComputedLogits) {
  Toy t;
  VectorXd s = gc::prior_logits(t.in, t.p);
  // k=0: f1=2, f2=1, f3=[0,1,2,0,0]·[1,0,0,0,0]+4+0.25=4.25 -> 2 + 2 + 2.125
  // k=1: f1=-1, f2=0.3, f3=5.25 -> -1 + 0.6 + 2.625
  // k=2: f1=0, f2=0, f3=2+4+0.25=6.25 -> 3.125
  EXPECT_NEAR(s[0], 6.125, 1e-12);
  EXPECT_NEAR(s[1], 2.225, 1e-12);
  EXPECT_NEAR(s[2], 3.125, 1e-12);
}

TEST(Prior, ZeroParametersGiveUniform) {
  gc::LogLinearParams p = gc::LogLinearParams::init(2, false, 1);
  p.lambda1.setZero();
  p.lambda2.setZero();
  p.lambda3.setZero();
  Toy t;
  gc::Categorical d = gc::softmax_temp(gc::prior_logits(t.in, p));
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(d[k], 1.0 / 3);
}

TEST(Posterior, LambdaFourZeroEqualsPrior) {
  Toy t;
  gc::LogLinearParams a = gc::LogLinearParams::zeros(2, true);
  a.lambda1 = t.p.lambda1;
  a.lambda2 = t.p.lambda2;
  a.lambda3 = t.p.lambda3;
  a.type_emb = t.p.type_emb;
  a.f2_head = t.p.f2_head;
  a.f3_head = t.p.f3_head;
  a.f3_bias = t.p.f3_bias;
  t.in.target = vec({5, -2});
  EXPECT_TRUE(gc::posterior_logits(t.in, a).isApprox(gc::prior_logits(t.in, t.p)));
  EXPECT_THROW(gc::posterior_logits(t.in, t.p), gc::ContractError);
  t.in.target.reset();
  EXPECT_THROW(gc::posterior_logits(t.in, a), gc::ContractError);
}

TEST(Posterior, TargetMatchingCandidateWins) {
  gc::FallbackEncoder enc(64, 2);
  gc::PersonaSet set = gc::make_persona_set("s", {"i love surfing", "my dog is red",
                                                  "i am a nurse"});
  gc::CandidateSet c = gc::build_candidate_set(set, {});
  gc::LatentInputs in =
      gc::make_latent_inputs(gc_test::history({"hello"}), c, enc, std::string("my dog is red"));
  gc::LogLinearParams a = gc::LogLinearParams::init(64, true, 5);
  a.lambda4(0, 0) = 50.0;
  EXPECT_EQ(gc::argmax_z(gc::softmax_temp(gc::posterior_logits(in, a))), 1u);
  EXPECT_EQ(gc::feature_f4(*in.target, in.candidates.row(3).transpose()), 0.0);
}

TEST(Softmax, TemperatureAndShift) {
  VectorXd l(2);
  l << 0.0, 1.0;
  gc::Categorical hot = gc::softmax_temp(l, 100.0);
  EXPECT_LT(std::max(std::abs(hot[0] - 0.5), std::abs(hot[1] - 0.5)), 0.01);
  EXPECT_NEAR(hot[1], 1.0 / (1.0 + std::exp(-0.01)), 1e-15);

  gc::Categorical u = gc::softmax_temp(VectorXd::Zero(3), 1.0);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(u[k], 1.0 / 3);

  VectorXd m(4);
  m << 0.3, -2.0, 5.0, 1.0;
  for (double tau : {0.01, 0.5, 1.0, 7.0, 1e3})
    EXPECT_EQ(gc::argmax_z(gc::softmax_temp(m, tau)), 2u);
  VectorXd shifted = m.array() + 123.0;
  EXPECT_TRUE(gc::softmax_temp(shifted).probs().isApprox(gc::softmax_temp(m).probs(), 1e-14));
  EXPECT_THROW(gc::softmax_temp(m, 0.0), gc::DomainError);
  EXPECT_THROW(gc::softmax_temp(m, -1.0), gc::DomainError);
}

TEST(Softmax, StableForHugeLogits) {
  VectorXd l(2);
  l << 1e6, 1e6 - 1.0;
  gc::Categorical d = gc::softmax_temp(l);
  EXPECT_NEAR(d[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Kl, ClosedForms) {
  VectorXd q(2), p(2);
  q << 0.5, 0.5;
  p << 0.9, 0.1;
  const double want = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  EXPECT_NEAR(gc::kl_categorical(gc::Categorical(q), gc::Categorical(p)), want, 1e-15);
  EXPECT_EQ(gc::kl_categorical(gc::Categorical(p), gc::Categorical(p)), 0.0);

  VectorXd z(2);
  z << 1.0, 0.0;
  EXPECT_THROW(gc::kl_categorical(gc::Categorical(q), gc::Categorical(z)), gc::DomainError);
  EXPECT_TRUE(std::isinf(
      gc::kl_categorical(gc::Categorical(q), gc::Categorical(z), gc::KlOverflow::Infinity)));
  // 0 ln 0 = 0 on the q side.
  EXPECT_NEAR(gc::kl_categorical(gc::Categorical(z), gc::Categorical(p)), -std::log(0.9), 1e-15);
}

TEST(Kl, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    const int n = 2 + static_cast<int>(rng() % 8);
    EXPECT_GE(gc::kl_categorical(gc::Categorical(random_probs(rng, n)),
                                 gc::Categorical(random_probs(rng, n))),
              0.0);
  }
}

TEST(Entropy, ClosedFormsAndBruteForce) {
  VectorXd one = VectorXd::Zero(4);
  one[2] = 1.0;
  EXPECT_EQ(gc::entropy(gc::Categorical(one)), 0.0);
  for (int n : {1, 2, 5, 231})
    EXPECT_NEAR(gc::entropy(gc::Categorical(VectorXd::Constant(n, 1.0 / n))), std::log(n), 1e-12);
  std::mt19937_64 rng(4);
  VectorXd r = random_probs(rng, 6);
  double h = 0.0;
  for (int k = 0; k < 6; ++k) h += r[k] * std::log(1.0 / r[k]);
  EXPECT_NEAR(gc::entropy(gc::Categorical(r)), h, 1e-14);
}

TEST(Sampling, OneHotTieAndFrequencies) {
  std::mt19937_64 rng(123);
  VectorXd one = VectorXd::Zero(3);
  one[1] = 1.0;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(gc::sample(gc::Categorical(one), rng), 1u);

  VectorXd tie(2);
  tie << 0.5, 0.5;
  EXPECT_EQ(gc::argmax_z(gc::Categorical(tie)), 0u);

  VectorXd p(2);
  p << 0.2, 0.8;
  gc::Categorical d(p);
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ones += gc::sample(d, rng) == 1u;
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.8, 0.01);
}

TEST(Categorical, Invariants) {
  VectorXd bad(2);
  bad << 0.5, 0.6;
  EXPECT_THROW(gc::Categorical{bad}, gc::ContractError);
  bad << -0.1, 1.1;
  EXPECT_THROW(gc::Categorical{bad}, gc::ContractError);
  EXPECT_THROW(gc::Categorical{VectorXd()}, gc::ContractError);
}

TEST(Backward, MatchesFiniteDifferences) {
  Toy t;
  t.in.target = vec({0.5, -1.0});
  gc::LogLinearParams a = gc::LogLinearParams::init(2, true, 8, 0.5, true);
  VectorXd w(3);
  w << 0.7, -1.3, 0.4;  // loss = w · logits
  gc::LogLinearParams g = a.zeros_like();
  gc::latent_backward(t.in, a, w, g);
  std::vector<std::pair<gc::MatrixXd*, gc::MatrixXd*>> pairs;
  std::vector<gc::MatrixXd*> ps, gs;
  a.for_each([&](const std::string&, gc::MatrixXd& m) { ps.push_back(&m); });
  g.for_each([&](const std::string&, gc::MatrixXd& m) { gs.push_back(&m); });
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (Eigen::Index j = 0; j < ps[i]->size(); ++j) {
      double& x = ps[i]->data()[j];
      const double o = x;
      x = o + 1e-6;
      const double up = w.dot(gc::posterior_logits(t.in, a));
      x = o - 1e-6;
      const double down = w.dot(gc::posterior_logits(t.in, a));
      x = o;
      const double fd = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(fd - gs[i]->data()[j]) / std::max(1.0, std::abs(fd)));
    }
  EXPECT_LT(worst, 1e-8);
}
