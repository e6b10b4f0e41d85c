#pragma once

// Typed settings for every subsystem, loadable from a key = value file with
// environment overrides. The override for key `train.lr` is GROUNDCHAT_TRAIN_LR
// (uppercase, '.' -> '_').

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "groundchat/errors.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

inline constexpr const char* kEnvPrefix = "GROUNDCHAT_";

struct EncoderSettings {
  std::string kind = "fallback";
  int dim = 64;
  double norm = 1.0;  // fallback subword vector norm
  std::uint64_t seed = 0;
  std::string cache_path;
  bool last_turn_only = false;
};

struct LatentSettings {
  bool bilinear_f1 = false;
  double init_std = 0.1;
  std::uint64_t seed = 1;
};

struct LmSettings {
  int layers = 2;
  int width = 128;
  int heads = 4;
  int ffn = 512;
  int max_len = 128;
  double init_std = 0.02;
  std::uint64_t seed = 2;
  int min_count = 1;
};

struct TrainSettings {
  double lr = 6.25e-5;
  double lr_decay_per_epoch = 0.1;
  std::string lr_schedule = "multiplicative";  // or linear_to_zero
  double latent_lr_scale = 1.0;
  double reinforce_coeff = 0.8;
  double lm_coeff = 1.0;
  double baseline_ratio = 0.99;
  double entropy_coeff = 0.01;
  long kl_anneal_steps = -1;  // -1: one epoch of optimizer steps
  int samples_per_step = 1;
  int batch_size = 4;
  int max_epochs = 3;
  int patience = 1;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 1.0;
  std::string mode = "sampled";  // or exact
  int exact_max_candidates = 10;
  std::string val_ppl_mode = "elbo_bound";
  int val_max_examples = 0;  // 0: all
  std::uint64_t seed = 0;
  int history_size = 2;
  bool both_sides = true;
};

struct DecodeSettings {
  double nucleus_p = 0.95;
  double prior_temperature = 1.0;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;
};

struct ExpansionSettings {
  std::string backend = "mock";
  std::string relations = "oEffect,oReact,oWant,xAttr,xEffect,xIntent,xNeed,xReact,xWant";
  int n = 5;
  int paraphrases = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> prefixes;  // expansion.prefix.<type>
};

struct EvalSettings {
  int exact_max_candidates = 32;
  std::string ppl_mode = "exact_marginal";
  int max_examples = 0;
};

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string db_path = "sessions.db";
  std::string static_dir;
  int top_k = 10;
};

struct Settings {
  EncoderSettings encoder;
  LatentSettings latent;
  LmSettings lm;
  TrainSettings train;
  DecodeSettings decode;
  ExpansionSettings expansion;
  EvalSettings eval;
  ServiceSettings service;

  // key = value pairs; keys listed in keys().
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  std::string snapshot() const {
    std::ostringstream out;
    for (auto& k : keys()) out << k << " = " << get(k) << '\n';
    for (auto& [t, p] : expansion.prefixes) out << "expansion.prefix." << t << " = " << p << '\n';
    return out.str();
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = text::normalize(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ValidationError(path + ":" + std::to_string(lineno) + ": expected key = value");
      try {
        set(text::normalize(line.substr(0, eq)), text::normalize(line.substr(eq + 1)));
      } catch (const ValidationError& e) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  static std::string env_name(const std::string& key) {
    std::string out = kEnvPrefix;
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }

  void apply_env() {
    for (auto& k : keys())
      if (const char* v = std::getenv(env_name(k).c_str())) set(k, v);
  }
};

namespace config_detail {

template <class T>
T parse_value(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  T v{};
  in >> v;
  if (in.fail() || !in.eof()) throw ValidationError("bad value '" + s + "' for " + key);
  return v;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError("bad boolean '" + s + "' for " + key);
}

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& s) {
  return s;
}

template <class T>
std::string show(const T& v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}
inline std::string show(bool v) { return v ? "true" : "false"; }
inline std::string show(const std::string& v) { return v; }

struct Binding {
  std::string key;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

#define GC_BIND(key, member)                                                          \
  Binding {                                                                           \
    key,                                                                              \
        [](Settings& s, const std::string& v) {                                       \
          s.member = parse_value<std::decay_t<decltype(s.member)>>(key, v);           \
        },                                                                            \
        [](const Settings& s) { return show(s.member); }                              \
  }

inline const std::vector<Binding>& bindings() {
  static const std::vector<Binding> kBindings = {
      GC_BIND("encoder.kind", encoder.kind),
      GC_BIND("encoder.dim", encoder.dim),
      GC_BIND("encoder.norm", encoder.norm),
      GC_BIND("encoder.seed", encoder.seed),
      GC_BIND("encoder.cache_path", encoder.cache_path),
      GC_BIND("encoder.last_turn_only", encoder.last_turn_only),
      GC_BIND("latent.bilinear_f1", latent.bilinear_f1),
      GC_BIND("latent.init_std", latent.init_std),
      GC_BIND("latent.seed", latent.seed),
      GC_BIND("lm.layers", lm.layers),
      GC_BIND("lm.width", lm.width),
      GC_BIND("lm.heads", lm.heads),
      GC_BIND("lm.ffn", lm.ffn),
      GC_BIND("lm.max_len", lm.max_len),
      GC_BIND("lm.init_std", lm.init_std),
      GC_BIND("lm.seed", lm.seed),
      GC_BIND("lm.min_count", lm.min_count),
      GC_BIND("train.lr", train.lr),
      GC_BIND("train.lr_decay_per_epoch", train.lr_decay_per_epoch),
      GC_BIND("train.lr_schedule", train.lr_schedule),
      GC_BIND("train.latent_lr_scale", train.latent_lr_scale),
      GC_BIND("train.reinforce_coeff", train.reinforce_coeff),
      GC_BIND("train.lm_coeff", train.lm_coeff),
      GC_BIND("train.baseline_ratio", train.baseline_ratio),
      GC_BIND("train.entropy_coeff", train.entropy_coeff),
      GC_BIND("train.kl_anneal_steps", train.kl_anneal_steps),
      GC_BIND("train.samples_per_step", train.samples_per_step),
      GC_BIND("train.batch_size", train.batch_size),
      GC_BIND("train.max_epochs", train.max_epochs),
      GC_BIND("train.patience", train.patience),
      GC_BIND("train.weight_decay", train.weight_decay),
      GC_BIND("train.adam_beta1", train.adam_beta1),
      GC_BIND("train.adam_beta2", train.adam_beta2),
      GC_BIND("train.adam_eps", train.adam_eps),
      GC_BIND("train.max_grad_norm", train.max_grad_norm),
      GC_BIND("train.mode", train.mode),
      GC_BIND("train.exact_max_candidates", train.exact_max_candidates),
      GC_BIND("train.val_ppl_mode", train.val_ppl_mode),
      GC_BIND("train.val_max_examples", train.val_max_examples),
      GC_BIND("train.seed", train.seed),
      GC_BIND("train.history_size", train.history_size),
      GC_BIND("train.both_sides", train.both_sides),
      GC_BIND("decode.nucleus_p", decode.nucleus_p),
      GC_BIND("decode.prior_temperature", decode.prior_temperature),
      GC_BIND("decode.max_new_tokens", decode.max_new_tokens),
      GC_BIND("decode.seed", decode.seed),
      GC_BIND("expansion.backend", expansion.backend),
      GC_BIND("expansion.relations", expansion.relations),
      GC_BIND("expansion.n", expansion.n),
      GC_BIND("expansion.paraphrases", expansion.paraphrases),
      GC_BIND("expansion.seed", expansion.seed),
      GC_BIND("eval.exact_max_candidates", eval.exact_max_candidates),
      GC_BIND("eval.ppl_mode", eval.ppl_mode),
      GC_BIND("eval.max_examples", eval.max_examples),
      GC_BIND("service.host", service.host),
      GC_BIND("service.port", service.port),
      GC_BIND("service.db_path", service.db_path),
      GC_BIND("service.static_dir", service.static_dir),
      GC_BIND("service.top_k", service.top_k),
  };
  return kBindings;
}

#undef GC_BIND

}  // namespace config_detail

inline void Settings::set(const std::string& key, const std::string& value) {
  static const std::string kPrefix = "expansion.prefix.";
  if (key.rfind(kPrefix, 0) == 0) {
    expansion.prefixes[key.substr(kPrefix.size())] = value;
    return;
  }
  for (auto& b : config_detail::bindings())
    if (b.key == key) return b.set(*this, value);
  throw ValidationError("unknown config key '" + key + "'");
}

inline std::string Settings::get(const std::string& key) const {
  for (auto& b : config_detail::bindings())
    if (b.key == key) return b.get(*this);
  throw ValidationError("unknown config key '" + key + "'");
}

inline std::vector<std::string> Settings::keys() {
  std::vector<std::string> out;
  for (auto& b : config_detail::bindings()) out.push_back(b.key);
  return out;
}

}  // namespace groundchat
