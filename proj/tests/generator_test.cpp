#include <gtest/gtest.h>

#include <random>

#include "groundchat/generator.hpp"
#include "groundchat/model.hpp"
#include "support.hpp"

namespace gc = groundchat;
using gc::SegmentId;

TEST(Assemble, NullPersonaLayout) {
  gc::Tokenizer tok(gc_test::toy_words());
  gc::Expansion null{std::nullopt, gc::ExpansionType::Null, "", 0};
  gc::AssembledInput in =
      gc::assemble(null, gc_test::history({"hello"}), std::string("i like tea"), tok, 64);
  // <sep> hello | <sep> i like tea <eos>
  std::vector<int> want = {gc::Tokenizer::kSep, tok.id("hello"), gc::Tokenizer::kSep,
                           tok.id("i"),         tok.id("like"),  tok.id("tea"),
                           gc::Tokenizer::kEos};
  EXPECT_EQ(in.tokens, want);
  std::vector<SegmentId> segs = {SegmentId::Speaker1, SegmentId::Speaker1, SegmentId::Speaker2,
                                 SegmentId::Speaker2, SegmentId::Speaker2, SegmentId::Speaker2,
                                 SegmentId::Speaker2};
  EXPECT_EQ(in.segments, segs);
  EXPECT_EQ(in.target_count(), 4);
  EXPECT_FALSE(in.target_mask[2]);
  EXPECT_TRUE(in.target_mask.back());
}

TEST(Assemble, PersonaSegmentAndTruncation) {
  gc::Tokenizer tok(gc_test::toy_words());
  gc::DialogHistory h = gc_test::history({"hello how are you", "i like tea", "i love cats"});
  gc::AssembledInput full = gc::assemble("i am a nurse", h, std::string("my color"), tok, 64);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(full.segments[i], SegmentId::Persona);
  EXPECT_EQ(full.segments[4], SegmentId::Speaker1);
  EXPECT_EQ(full.dropped_turns, 0);
  // The last turn is speaker1, so speaker2 responds.
  EXPECT_EQ(full.segments.back(), SegmentId::Speaker2);

  // 4 persona + 4 target positions leave room for the last turn only.
  gc::AssembledInput cut = gc::assemble("i am a nurse", h, std::string("my color"), tok, 12);
  EXPECT_EQ(cut.dropped_turns, 2);
  EXPECT_EQ(cut.size(), 12u);
  EXPECT_EQ(cut.tokens[5], tok.id("i"));

  EXPECT_THROW(gc::assemble("i am a nurse", h, std::string("my color"), tok, 7), gc::LengthError);
}

TEST(Assemble, ExplicitResponder) {
  gc::Tokenizer tok(gc_test::toy_words());
  gc::AssembledInput in =
      gc::assemble("", {}, std::string("hello"), tok, 16, gc::Speaker::Speaker1);
  EXPECT_EQ(in.segments.front(), SegmentId::Speaker1);
}

TEST(TargetNll, UniformModelGivesLogVocabPerToken) {
  gc::Tokenizer tok(gc_test::toy_words());
  const int v = tok.size();
  gc_test::UniformLM lm(v);
  gc::AssembledInput in =
      gc::assemble("i love surfing", gc_test::history({"hello"}), std::string("i am a nurse"), tok, 64);
  gc::TargetScore s = gc::target_nll(in, lm);
  EXPECT_EQ(s.n_target_tokens, 5);
  EXPECT_NEAR(s.total_nll / s.n_target_tokens, std::log(v), 1e-12);

  gc::Model m = gc_test::tiny_model();
  gc_test::make_uniform(m);
  gc::TargetScore t = gc::target_nll(in, m.lm);
  EXPECT_NEAR(t.total_nll, 5 * std::log(m.tokenizer.size()), 1e-9);
}

TEST(TargetNll, ContractViolations) {
  gc_test::UniformLM lm(10);
  gc::AssembledInput empty;
  empty.push(5, SegmentId::Persona, false);
  EXPECT_THROW(gc::target_nll(empty, lm), gc::ContractError);
  gc::AssembledInput first;
  first.push(5, SegmentId::Speaker2, true);
  EXPECT_THROW(gc::target_nll(first, lm), gc::ContractError);
}

TEST(Generate, ScriptedModelEmitsScriptThenStops) {
  gc::Tokenizer tok(gc_test::toy_words());
  gc::AssembledInput prompt = gc::assemble("", gc_test::history({"hello"}), std::nullopt, tok, 64);
  std::vector<int> script = {tok.id("i"), tok.id("love"), tok.id("cats")};
  gc_test::ScriptedLM lm(tok.size(), script, prompt.size());
  std::mt19937_64 rng(3);
  gc::Generation g = gc::generate(prompt, lm, {0.9, 10}, rng);
  EXPECT_EQ(g.tokens, script);
  EXPECT_TRUE(g.ended);
  EXPECT_FALSE(g.truncated);
  EXPECT_EQ(tok.decode(g.tokens), "i love cats");

  gc::Generation short_g = gc::generate(prompt, lm, {0.9, 2}, rng);
  EXPECT_EQ(short_g.tokens.size(), 2u);
  EXPECT_TRUE(short_g.truncated);
}

TEST(Generate, SeededRunsRepeat) {
  gc::Model m = gc_test::tiny_model();
  gc::AssembledInput prompt =
      gc::assemble("i love surfing", gc_test::history({"hello"}), std::nullopt, m.tokenizer, 64);
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(gc::generate(prompt, m.lm, {0.95, 8}, a).tokens,
            gc::generate(prompt, m.lm, {0.95, 8}, b).tokens);
  gc::AssembledInput bad = gc::assemble("", {}, std::string("hi"), m.tokenizer, 64);
  EXPECT_THROW(gc::generate(bad, m.lm, {}, a), gc::ContractError);
}

TEST(Tokenizer, BuildOrderAndRoundTrip) {
  gc::Tokenizer tok = gc::Tokenizer::build({"b a a", "c b a", "z"}, 2);
  EXPECT_EQ(tok.size(), 6);
  EXPECT_EQ(tok.token(4), "a");
  EXPECT_EQ(tok.token(5), "b");
  EXPECT_EQ(tok.id("z"), gc::Tokenizer::kUnk);

  gc_test::TempDir dir("tok");
  tok.save(dir.file("vocab.txt"));
  gc::Tokenizer back = gc::Tokenizer::load(dir.file("vocab.txt"));
  ASSERT_EQ(back.size(), tok.size());
  for (int i = 0; i < tok.size(); ++i) EXPECT_EQ(back.token(i), tok.token(i));
  EXPECT_EQ(back.encode("a b c"), tok.encode("a b c"));
}

TEST(Transformer, BackwardMatchesFiniteDifferences) {
  gc::Settings s = gc_test::tiny_settings();
  s.lm.init_std = 0.3;
  gc::Model m = gc_test::tiny_model(s);
  gc::AssembledInput in = gc::assemble("i love surfing", gc_test::history({"how are you ?"}),
                                       std::string("i like red cats"), m.tokenizer, 64);
  gc::LmParams& p = m.lm.params();
  gc::LmParams g = p.zeros_like();
  m.lm.score_target_backward(in, 1.0, g);

  std::vector<gc::MatrixXd*> ps, gs;
  p.for_each([&](const std::string&, gc::MatrixXd& t) { ps.push_back(&t); });
  g.for_each([&](const std::string&, gc::MatrixXd& t) { gs.push_back(&t); });
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (int trial = 0; trial < 4; ++trial) {
      const Eigen::Index j = static_cast<Eigen::Index>(rng() % ps[i]->size());
      double& x = ps[i]->data()[j];
      const double o = x;
      x = o + 1e-5;
      const double up = m.lm.score_target(in).total_nll;
      x = o - 1e-5;
      const double down = m.lm.score_target(in).total_nll;
      x = o;
      const double fd = (up - down) / 2e-5;
      const double an = gs[i]->data()[j];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-3, std::abs(fd) + std::abs(an)));
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(Transformer, RejectsOverlongSequences) {
  gc::Model m = gc_test::tiny_model();
  gc::AssembledInput in;
  for (int i = 0; i < 70; ++i) in.push(5, SegmentId::Speaker2, i > 0);
  EXPECT_THROW(m.lm.score_target(in), gc::LengthError);
}
