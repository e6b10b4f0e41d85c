#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "groundchat/checkpoint.hpp"
#include "groundchat/model.hpp"
#include "support.hpp"

namespace gc = groundchat;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Archive, RoundTripIsExact) {
  gc::TensorArchive a;
  a.meta["encoder"] = "fallback:16";
  a.meta["note"] = "";
  gc::MatrixXd m(2, 3);
  m << 1.0 / 3, -0.0, 1e-300, 5e300, -7.25, 42;
  a.tensors.emplace_back("w", m);
  a.tensors.emplace_back("empty", gc::MatrixXd(0, 0));

  std::stringstream buf;
  gc::write_archive(a, buf);
  gc::TensorArchive b = gc::read_archive(buf);
  EXPECT_EQ(b.meta, a.meta);
  ASSERT_TRUE(b.has("w"));
  EXPECT_EQ(b.at("w"), m);
  EXPECT_EQ(b.at("empty").size(), 0);
  EXPECT_FALSE(b.has("missing"));
  EXPECT_THROW(b.at("missing"), gc::ParseError);
}

TEST(Archive, RejectsForeignAndTruncatedInput) {
  std::stringstream junk("definitely not a checkpoint");
  EXPECT_THROW(gc::read_archive(junk), gc::ParseError);

  gc::TensorArchive a;
  a.tensors.emplace_back("w", gc::MatrixXd::Ones(4, 4));
  std::stringstream buf;
  gc::write_archive(a, buf);
  std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(gc::read_archive(cut), gc::ParseError);
  EXPECT_THROW(gc::load_archive("/nonexistent/x.ckpt"), gc::BackendError);
}

TEST(ModelFiles, SaveLoadIsBitIdentical) {
  gc::Settings s = gc_test::tiny_settings();
  s.latent.seed = 77;
  gc::Model m = gc_test::tiny_model(s);
  gc_test::TempDir dir("model");
  m.save(dir.str(), "best");
  gc::Model back = gc::Model::load(dir.str());

  m.save(dir.str(), "first");
  back.save(dir.str(), "second");
  EXPECT_EQ(slurp(dir.file("first.ckpt")), slurp(dir.file("second.ckpt")));
  EXPECT_EQ(back.tokenizer.size(), m.tokenizer.size());
  EXPECT_EQ(back.settings.snapshot(), m.settings.snapshot());

  gc::PreparedExample a = gc_test::prepared(m, {"i love surfing"}, gc_test::history({"hello"}), "i like tea");
  gc::PreparedExample b = gc_test::prepared(back, {"i love surfing"}, gc_test::history({"hello"}), "i like tea");
  EXPECT_EQ(gc::prior_logits(a.inputs, m.prior), gc::prior_logits(b.inputs, back.prior));
}

TEST(ModelFiles, FallsBackToLatestAndChecksEncoder) {
  gc::Model m = gc_test::tiny_model();
  gc_test::TempDir dir("model");
  m.save(dir.str());  // latest only
  EXPECT_NO_THROW(gc::Model::load(dir.str(), "best"));

  gc::TensorArchive a = m.to_archive();
  a.meta["encoder"] = "something-else";
  gc::Model other = gc_test::tiny_model();
  EXPECT_THROW(other.load_tensors(a), gc::IntegrityError);

  gc::Settings wide = gc_test::tiny_settings();
  wide.lm.width = 32;
  gc::Model w = gc_test::tiny_model(wide);
  EXPECT_THROW(w.load_tensors(m.to_archive()), gc::IntegrityError);
}
