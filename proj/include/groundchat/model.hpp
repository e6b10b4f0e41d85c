#pragma once

// The trained bundle: tokenizer, frozen encoder, prior and inference networks
// and the generator, plus the checkpoint directory layout
//
//   <dir>/latest.ckpt  <dir>/best.ckpt  <dir>/vocab.txt  <dir>/config.snapshot

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "groundchat/checkpoint.hpp"
#include "groundchat/config.hpp"
#include "groundchat/embedder.hpp"
#include "groundchat/generator.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/transformer_lm.hpp"

namespace groundchat {

inline LmConfig lm_config_from(const LmSettings& s, int vocab) {
  LmConfig c;
  c.vocab = vocab;
  c.width = s.width;
  c.layers = s.layers;
  c.heads = s.heads;
  c.ffn = s.ffn;
  c.max_len = s.max_len;
  c.init_std = s.init_std;
  c.seed = s.seed;
  return c;
}

struct Model {
  Settings settings;
  Tokenizer tokenizer;
  std::shared_ptr<Encoder> encoder;
  LogLinearParams prior;
  LogLinearParams inference;
  TransformerLM lm;

  static Model create(const Settings& s, Tokenizer tok) {
    Model m;
    m.settings = s;
    m.tokenizer = std::move(tok);
    m.encoder = make_encoder(s.encoder.kind, s.encoder.dim, s.encoder.seed, s.encoder.norm);
    const int d = m.encoder->dim();
    m.prior = LogLinearParams::init(d, false, s.latent.seed, s.latent.init_std, s.latent.bilinear_f1);
    m.inference = LogLinearParams::init(d, true, s.latent.seed + 1, s.latent.init_std,
                                        s.latent.bilinear_f1);
    m.lm = TransformerLM(lm_config_from(s.lm, m.tokenizer.size()));
    return m;
  }

  TensorArchive to_archive() const {
    TensorArchive a;
    a.meta["encoder"] = encoder->identity();
    a.meta["vocab_size"] = std::to_string(tokenizer.size());
    prior.for_each([&](const std::string& n, const MatrixXd& t) { a.tensors.emplace_back("prior." + n, t); });
    inference.for_each([&](const std::string& n, const MatrixXd& t) { a.tensors.emplace_back("inf." + n, t); });
    lm.params().for_each([&](const std::string& n, const MatrixXd& t) { a.tensors.emplace_back("lm." + n, t); });
    return a;
  }

  void load_tensors(const TensorArchive& a) {
    if (auto it = a.meta.find("encoder"); it != a.meta.end() && it->second != encoder->identity())
      throw IntegrityError("checkpoint encoder " + it->second + " does not match " +
                           encoder->identity());
    auto assign = [&](const std::string& name, MatrixXd& t) {
      const MatrixXd& src = a.at(name);
      if (src.rows() != t.rows() || src.cols() != t.cols())
        throw IntegrityError("shape mismatch for " + name);
      t = src;
    };
    prior.for_each([&](const std::string& n, MatrixXd& t) { assign("prior." + n, t); });
    inference.for_each([&](const std::string& n, MatrixXd& t) { assign("inf." + n, t); });
    lm.params().for_each([&](const std::string& n, MatrixXd& t) { assign("lm." + n, t); });
  }

  // Writes vocab, config snapshot and <tag>.ckpt into dir.
  void save(const std::string& dir, const std::string& tag = "latest") const {
    std::filesystem::create_directories(dir);
    tokenizer.save(dir + "/vocab.txt");
    {
      std::ofstream out(dir + "/config.snapshot");
      out << settings.snapshot();
    }
    save_archive(to_archive(), dir + "/" + tag + ".ckpt");
  }

  static Model load(const std::string& dir, const std::string& tag = "best") {
    Settings s;
    s.load_file(dir + "/config.snapshot");
    Model m = create(s, Tokenizer::load(dir + "/vocab.txt"));
    std::string path = dir + "/" + tag + ".ckpt";
    if (!std::filesystem::exists(path)) path = dir + "/latest.ckpt";
    m.load_tensors(load_archive(path));
    return m;
  }
};

}  // namespace groundchat
