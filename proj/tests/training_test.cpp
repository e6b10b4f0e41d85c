#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "groundchat/oracle.hpp"
#include "groundchat/training.hpp"
#include "support.hpp"

namespace gc = groundchat;
using gc::VectorXd;

namespace {

VectorXd v(std::initializer_list<double> xs) {
  VectorXd out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out[i++] = x;
  return out;
}

double kl_of_logits(const VectorXd& sq, const VectorXd& sp) {
  return gc::kl_categorical(gc::softmax_temp(sq), gc::softmax_temp(sp));
}

double entropy_of_logits(const VectorXd& s) { return gc::entropy(gc::softmax_temp(s)); }

template <class F>
VectorXd numeric_grad(F f, VectorXd x, double eps = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double o = x[i];
    x[i] = o + eps;
    const double up = f(x);
    x[i] = o - eps;
    const double down = f(x);
    x[i] = o;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

gc::Settings small_settings(const std::string& mode) {
  gc::Settings s = gc_test::tiny_settings();
  s.lm.init_std = 0.3;
  s.latent.init_std = 0.5;
  s.train.mode = mode;
  s.train.seed = 3;
  return s;
}

}  // namespace

TEST(Anneal, Schedule) {
  EXPECT_EQ(gc::kl_anneal(0, 100), 0.0);
  EXPECT_EQ(gc::kl_anneal(25, 100), 0.25);
  EXPECT_EQ(gc::kl_anneal(50, 100), 0.5);
  EXPECT_EQ(gc::kl_anneal(100, 100), 1.0);
  EXPECT_EQ(gc::kl_anneal(500, 100), 1.0);
  EXPECT_EQ(gc::kl_anneal(7, 0), 1.0);
  EXPECT_EQ(gc::kl_anneal(7, -3), 1.0);
  EXPECT_THROW(gc::kl_anneal(-1, 10), gc::DomainError);
}

TEST(LogitGradients, PriorTermMatchesFiniteDifferences) {
  const VectorXd sp = v({0.3, -1.0, 2.0, 0.1});
  const VectorXd sq = v({1.0, 0.5, -0.2, 0.0});
  const VectorXd p = gc::softmax_temp(sp).probs(), q = gc::softmax_temp(sq).probs();
  for (double beta : {0.0, 0.4, 1.0})
    for (double ec : {0.0, 0.01, 0.5}) {
      auto loss = [&](const VectorXd& s) {
        return beta * kl_of_logits(sq, s) - ec * entropy_of_logits(s);
      };
      EXPECT_LT((gc::prior_dlogits(p, q, beta, ec) - numeric_grad(loss, sp)).cwiseAbs().maxCoeff(),
                1e-8);
    }
}

TEST(LogitGradients, KlInferenceTermMatchesFiniteDifferences) {
  const VectorXd sp = v({0.3, -1.0, 2.0});
  const VectorXd sq = v({1.0, 0.5, -0.2});
  auto loss = [&](const VectorXd& s) { return 0.7 * kl_of_logits(s, sp); };
  const VectorXd an = gc::kl_q_dlogits(gc::log_softmax(sq), gc::log_softmax(sp), 0.7);
  EXPECT_LT((an - numeric_grad(loss, sq)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(LogitGradients, ExpectedRewardMatchesFiniteDifferences) {
  const VectorXd sq = v({1.0, 0.5, -0.2, 0.3});
  const VectorXd ll = v({-3.0, -1.5, -7.0, -2.0});
  auto loss = [&](const VectorXd& s) { return -0.8 * gc::softmax_temp(s).probs().dot(ll); };
  const VectorXd an = gc::expected_reward_dlogits(gc::softmax_temp(sq).probs(), ll, 0.8);
  EXPECT_LT((an - numeric_grad(loss, sq)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Reinforce, ExpectationEqualsExactGradientForAnyBaseline) {
  const VectorXd q = v({0.1, 0.6, 0.3});
  const VectorXd ll = v({-4.0, -1.0, -2.5});
  const VectorXd want = gc::expected_reward_dlogits(q, ll, 0.8);
  for (double b : {0.0, -2.0, 5.0}) {
    VectorXd mean = VectorXd::Zero(3);
    for (std::size_t z = 0; z < 3; ++z)
      mean += q[static_cast<Eigen::Index>(z)] *
              gc::reinforce_dlogits(q, z, ll[static_cast<Eigen::Index>(z)], b, 0.8);
    EXPECT_LT((mean - want).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Reinforce, ConstantRewardHasZeroExpectedGradient) {
  const VectorXd q = v({0.2, 0.5, 0.3});
  VectorXd mean = VectorXd::Zero(3);
  for (std::size_t z = 0; z < 3; ++z)
    mean += q[static_cast<Eigen::Index>(z)] * gc::reinforce_dlogits(q, z, -3.0, 1.0, 0.8);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-15);
  // Reward equal to the baseline gives an exactly zero sample.
  EXPECT_EQ(gc::reinforce_dlogits(q, 1, -3.0, -3.0, 0.8).cwiseAbs().maxCoeff(), 0.0);
}

TEST(EntropyBonus, DescentStepRaisesPriorEntropy) {
  VectorXd s = v({3.0, 0.0, -1.0, 0.5});
  const double before = entropy_of_logits(s);
  const VectorXd p = gc::softmax_temp(s).probs();
  s -= 0.5 * gc::prior_dlogits(p, p, 0.0, 1.0);
  EXPECT_GT(entropy_of_logits(s), before);
}

TEST(Baseline, FirstRewardSeedsThenAverages) {
  gc::BaselineState b;
  b.update(-10.0, 0.99);
  EXPECT_TRUE(b.initialized);
  EXPECT_EQ(b.b, -10.0);
  b.update(-20.0, 0.99);
  EXPECT_NEAR(b.b, -10.1, 1e-12);
}

TEST(Schedule, EpochLearningRate) {
  gc::TrainSettings t;
  for (int e = 0; e < 4; ++e) EXPECT_NEAR(gc::epoch_lr(t, e), 6.25e-5 * std::pow(0.1, e), 1e-20);
  t.lr_schedule = "linear_to_zero";
  t.max_epochs = 4;
  EXPECT_DOUBLE_EQ(gc::epoch_lr(t, 2), 6.25e-5 * 0.5);
  EXPECT_EQ(gc::epoch_lr(t, 4), 0.0);
}

TEST(Schedule, ValidateRejectsBadSettings) {
  gc::TrainSettings t;
  EXPECT_NO_THROW(gc::validate(t));
  t.baseline_ratio = 1.0;
  EXPECT_THROW(gc::validate(t), gc::ValidationError);
  t = {};
  t.mode = "greedy";
  EXPECT_THROW(gc::validate(t), gc::ValidationError);
  t = {};
  t.samples_per_step = 0;
  EXPECT_THROW(gc::validate(t), gc::ValidationError);
}

TEST(Shuffle, DeterministicPermutation) {
  std::vector<std::size_t> a(50), b(50), c(50);
  std::iota(a.begin(), a.end(), 0);
  b = c = a;
  std::mt19937_64 r1(9), r2(9), r3(10);
  gc::deterministic_shuffle(a, r1);
  gc::deterministic_shuffle(b, r2);
  gc::deterministic_shuffle(c, r3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], i);
}

TEST(Elbo, BelowTheExactMarginal) {
  gc::Model m = gc_test::tiny_model(small_settings("exact"));
  gc::PreparedExample ex = gc_test::prepared(
      m, {"i love surfing", "i am a nurse"}, gc_test::history({"hello"}), "i like the beach");
  const VectorXd ll = gc::candidate_log_likelihoods(ex.example, *ex.candidates, m);
  const VectorXd log_p = gc::log_softmax(gc::prior_logits(ex.inputs, m.prior));
  const VectorXd log_q = gc::log_softmax(gc::posterior_logits(ex.inputs, m.inference));
  const double bound = gc::exact_elbo(log_q, log_p, ll);
  EXPECT_LE(bound, gc::exact_log_marginal(log_p, ll) + 1e-12);

  double from_terms = 0.0, kl = 0.0;
  for (std::size_t z = 0; z < ex.candidates->size(); ++z) {
    gc::ElboTerms t = gc::elbo_terms(ex, m, z);
    from_terms += std::exp(log_q[static_cast<Eigen::Index>(z)]) * t.recon;
    kl = t.kl;
  }
  EXPECT_NEAR(from_terms - kl, bound, 1e-9);
  EXPECT_THROW(gc::elbo_terms(ex, m, 3), gc::ContractError);
}

TEST(Trainer, SampledGradientsApproachExactMode) {
  gc::Settings se = small_settings("exact");
  gc::Settings ss = small_settings("sampled");
  ss.train.samples_per_step = 4000;
  gc::Model me = gc_test::tiny_model(se);
  gc::Model ms = gc_test::tiny_model(ss);
  gc::PreparedExample ex = gc_test::prepared(
      me, {"i love surfing", "my favorite color is red", "i am a nurse"},
      gc_test::history({"what color do you like ?"}), "i like red");

  gc::Trainer te(me, se.train), ts(ms, ss.train);
  gc::Gradients ge = te.zero_gradients(), gs = ts.zero_gradients();
  te.accumulate(ex, 1.0, 1.0, ge);
  ts.accumulate(ex, 1.0, 1.0, gs);

  // The prior gradient does not depend on sampling.
  EXPECT_LT((ge.prior.f3_head - gs.prior.f3_head).cwiseAbs().maxCoeff(), 1e-12);
  auto rel = [](const gc::MatrixXd& a, const gc::MatrixXd& b) {
    return (a - b).norm() / std::max(1e-12, a.norm());
  };
  EXPECT_LT(rel(ge.inference.type_emb, gs.inference.type_emb), 0.1);
  EXPECT_LT(rel(ge.lm.tok_emb, gs.lm.tok_emb), 0.1);
  EXPECT_TRUE(ts.baseline().initialized);
  EXPECT_FALSE(te.baseline().initialized);
}

TEST(Trainer, ExactModeRespectsTheCandidateCap) {
  gc::Settings s = small_settings("exact");
  s.train.exact_max_candidates = 2;
  gc::Model m = gc_test::tiny_model(s);
  gc::PreparedExample ex = gc_test::prepared(m, {"i love surfing", "i am a nurse"},
                                             gc_test::history({"hello"}), "hi");
  gc::Trainer t(m, s.train);
  gc::Gradients g = t.zero_gradients();
  EXPECT_THROW(t.accumulate(ex, 1.0, 1.0, g), gc::BudgetError);
}

TEST(Train, LoopLogsCheckpointsAndLowersLoss) {
  gc::Settings s = small_settings("exact");
  s.train.lr = 1e-2;
  s.train.lr_decay_per_epoch = 1.0;
  s.train.max_epochs = 4;
  s.train.batch_size = 2;
  s.train.kl_anneal_steps = 0;
  s.train.patience = 10;
  gc::Model m = gc_test::tiny_model(s);
  std::vector<gc::PreparedExample> data;
  const std::vector<std::string> targets = {"i love cats", "i like tea", "my favorite color is red",
                                            "i am a nurse"};
  for (std::size_t i = 0; i < targets.size(); ++i)
    data.push_back(gc_test::prepared(m, {"i love cats", "i am a nurse"},
                                     gc_test::history({"hello how are you ?"}), targets[i],
                                     "t" + std::to_string(i)));
  gc_test::TempDir dir("train");
  std::ostringstream log;
  int calls = 0;
  gc::TrainResult r = gc::train(m, data, data, {dir.str(), &log, [&](const gc::EpochRecord&) { ++calls; }});
  ASSERT_EQ(r.epochs.size(), 4u);
  EXPECT_EQ(calls, 4);
  EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss);
  EXPECT_EQ(r.epochs.back().steps, 8);
  EXPECT_TRUE(std::filesystem::exists(dir.file("best.ckpt")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("latest.ckpt")));
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("val_ppl"));
    EXPECT_FALSE(j.contains("seconds"));
    ++n;
  }
  EXPECT_EQ(n, 4);
  EXPECT_THROW(gc::train(m, {}, data, {}), gc::ValidationError);
}
