// groundchat: expand | train | evaluate | diagnose | chat | serve

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "groundchat/groundchat.hpp"
#include "groundchat/service.hpp"

namespace gc = groundchat;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

// Defaults, then the config file, then GROUNDCHAT_* variables, then --set.
gc::Settings resolve_settings(const Common& c) {
  gc::Settings s;
  if (!c.config_path.empty()) s.load_file(c.config_path);
  s.apply_env();
  for (auto& kv : c.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw gc::ValidationError("--set expects key=value, got " + kv);
    s.set(gc::text::normalize(kv.substr(0, eq)), gc::text::normalize(kv.substr(eq + 1)));
  }
  return s;
}

// Settings stored with a model, then env and --set (a --config file replaces
// the stored snapshot when given).
gc::Model load_model(const std::string& dir, const Common& c) {
  gc::Model m = gc::Model::load(dir);
  gc::Settings s = m.settings;
  if (!c.config_path.empty()) s.load_file(c.config_path);
  s.apply_env();
  for (auto& kv : c.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw gc::ValidationError("--set expects key=value, got " + kv);
    s.set(gc::text::normalize(kv.substr(0, eq)), gc::text::normalize(kv.substr(eq + 1)));
  }
  m.settings.decode = s.decode;
  m.settings.eval = s.eval;
  m.settings.service = s.service;
  m.settings.expansion = s.expansion;
  m.settings.train.history_size = s.train.history_size;
  m.settings.train.both_sides = s.train.both_sides;
  return m;
}

int exit_code(const gc::Error& e) {
  const std::string& k = e.kind();
  if (k == "validation" || k == "parse" || k == "domain") return 2;
  if (k == "not_found" || k == "integrity") return 3;
  if (k == "backend" || k == "capability") return 4;
  if (k == "budget" || k == "length") return 5;
  if (k == "divergence") return 6;
  return 1;
}

// ---------------------------------------------------------------------------

struct ExpandArgs {
  std::string corpus;
  std::string backend;
  std::string relations;
  int n = -1;
  std::string out;
  std::vector<std::string> sentences;
};

int run_expand(const Common& c, const ExpandArgs& a) {
  gc::Settings s = resolve_settings(c);
  if (!a.backend.empty()) s.expansion.backend = a.backend;
  if (!a.relations.empty()) s.expansion.relations = a.relations;
  if (a.n >= 0) s.expansion.n = a.n;
  auto backend = gc::backend_from(s);
  if (!backend) throw gc::ValidationError("expansion.backend is 'none'");
  const gc::ExpansionPlan plan = gc::expansion_plan_from(s.expansion);
  std::vector<gc::PersonaSet> sets;
  if (!a.corpus.empty()) sets = gc::load_personachat(a.corpus, gc::Split::Train).persona_sets;
  if (!a.sentences.empty()) sets.push_back(gc::make_persona_set("cli", a.sentences));
  if (sets.empty()) throw gc::ValidationError("give --corpus or --sentence");

  std::vector<gc::ExpansionRecord> records;
  json summary = json::array();
  for (auto& set : sets) {
    auto exps = gc::expand_persona_set(set, *backend, plan);
    std::vector<gc::Collision> collisions;
    gc::CandidateSet cs = gc::build_candidate_set(set, exps, &collisions);
    const std::size_t pre = set.sentences.size() + exps.size() + 1;
    summary.push_back({{"persona_set", set.id},
                       {"sentences", set.sentences.size()},
                       {"expansions", exps.size()},
                       {"candidates_pre_dedup", pre},
                       {"candidates", cs.size()},
                       {"duplicates_dropped", collisions.size()}});
    for (auto& e : exps) {
      const gc::PersonaSentence* src = set.find(*e.source_id);
      records.push_back({set.id, *e.source_id, e.type, e.text, e.beam_rank,
                         src ? src->text : std::string()});
    }
  }
  if (!a.out.empty()) gc::write_expansion_records(records, a.out);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string train_path;
  std::string valid_path;
  std::string out = "checkpoints";
  std::string log_path;
  int synthetic = 0;
};

int run_train(const Common& c, const TrainArgs& a) {
  gc::Settings s = resolve_settings(c);
  gc::validate(s.train);
  auto backend = gc::backend_from(s);
  gc::SplitData train, valid;
  std::vector<std::string> extra;
  if (a.synthetic > 0) {
    gc::SyntheticOptions so;
    so.dialogs = a.synthetic;
    auto tr = gc::make_synthetic_corpus(so, gc::Split::Train);
    so.dialogs = std::max(1, a.synthetic / 10);
    auto va = gc::make_synthetic_corpus(so, gc::Split::Valid);
    train = gc::make_split(tr.corpus, s, backend.get());
    valid = gc::make_split(va.corpus, s, backend.get());
    extra = tr.entities;
  } else {
    if (a.train_path.empty()) throw gc::ValidationError("--train is required");
    train = gc::load_split(a.train_path, gc::Split::Train, s, backend.get());
    if (!a.valid_path.empty()) valid = gc::load_split(a.valid_path, gc::Split::Valid, s, backend.get());
  }
  gc::Tokenizer tok = gc::build_tokenizer({&train, &valid}, s.lm.min_count, extra);
  gc::Model model = gc::Model::create(s, tok);
  auto tr_ex = gc::prepare(train, model);
  auto va_ex = gc::prepare(valid, model);
  std::cerr << "vocabulary " << tok.size() << ", train examples " << tr_ex.size()
            << ", validation examples " << va_ex.size() << '\n';

  std::filesystem::create_directories(a.out);
  std::ofstream log(a.log_path.empty() ? a.out + "/train.log.jsonl" : a.log_path);
  gc::TrainOptions opt;
  opt.checkpoint_dir = a.out;
  opt.log = &log;
  opt.on_epoch = [](const gc::EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.train_loss << " reward " << r.mean_reward
              << " val_ppl " << r.val_ppl << (r.val_ppl_upper_bound ? " (bound)" : "") << " ("
              << r.seconds << " s)\n";
  };
  gc::TrainResult res = gc::train(model, tr_ex, va_ex, opt);
  std::cout << json{{"epochs", res.epochs.size()},
                    {"best_epoch", res.best_epoch},
                    {"best_val_ppl", va_ex.empty() ? json(nullptr) : json(res.best_val_ppl)},
                    {"early_stopped", res.early_stopped},
                    {"checkpoint_dir", a.out}}
                   .dump(2)
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model_dir;
  std::string data;
  std::string dnli;
  std::string personas;
  std::string cases;
  std::string out;
  int synthetic = 0;
  bool skip_ppl = false;
};

int run_evaluate(const Common& c, const EvalArgs& a) {
  gc::Model model = load_model(a.model_dir, c);
  const gc::Settings& s = model.settings;
  auto backend = gc::backend_from(s);
  gc::SplitData split;
  std::optional<gc::SyntheticCorpus> synth;
  if (a.synthetic > 0) {
    gc::SyntheticOptions so;
    so.dialogs = a.synthetic;
    synth = gc::make_synthetic_corpus(so, gc::Split::Test);
    split = gc::make_split(synth->corpus, s, backend.get());
  } else {
    if (a.data.empty()) throw gc::ValidationError("--data is required");
    split = gc::load_split(a.data, gc::Split::Test, s, backend.get());
  }
  auto examples = gc::prepare(split, model, static_cast<std::size_t>(std::max(0, s.eval.max_examples)));
  if (synth) gc::attach_synthetic_gold(examples, *synth);
  if (!a.dnli.empty()) {
    gc::Corpus personas = a.personas.empty() ? split.corpus
                                             : gc::load_personachat(a.personas, gc::Split::Test);
    gc::DnliStats st;
    auto pairs = gc::load_dnli_entailment(a.dnli, &personas, &split.corpus, &st,
                                          gc::window_options(s));
    const std::size_t attached = gc::attach_entailment_gold(examples, pairs);
    std::cerr << "dnli rows " << st.rows << ", entailment " << st.entailment_rows
              << ", unresolved " << st.unresolved << ", attached " << attached << '\n';
  }
  gc::EvalOptions opt;
  opt.ppl_mode = gc::parse_ppl_mode(s.eval.ppl_mode);
  opt.exact_max_candidates = s.eval.exact_max_candidates;
  opt.compute_ppl = !a.skip_ppl;
  opt.decode = gc::DecodeConfig::from(s.decode);
  if (!a.cases.empty()) opt.edited_cases = gc::load_edited_cases(a.cases);
  else if (synth) opt.edited_cases = gc::synthetic_controllability_cases(examples, *synth, 100, s.decode.seed);
  gc::EvalReport r = gc::evaluate(examples, model, opt);
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    out << r.to_json().dump(2) << '\n';
  }
  std::cout << r.table();
  return 0;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  int cases = 50;
  std::uint64_t seed = 11;
};

// Oracle identity and gradient checks on small random models.
int run_diagnose(const Common& c, const DiagnoseArgs& a) {
  const gc::IdentitySweep r = gc::oracle_identity_sweep(a.cases, a.seed, resolve_settings(c));
  json out{{"oracle_cases", r.cases},
           {"max_candidates", r.max_candidates},
           {"max_target_tokens", r.max_target_tokens},
           {"max_identity_error", r.max_identity_error},
           {"elbo_below_marginal", r.elbo_below_marginal}};
  std::cout << out.dump(2) << '\n';
  return r.max_identity_error < 1e-8 && r.elbo_below_marginal ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ChatArgs {
  std::string model_dir;
  std::vector<std::string> persona;
  std::string db = ":memory:";
  std::uint64_t seed = 0;
  bool seeded = false;
};

int run_chat(const Common& c, const ChatArgs& a) {
  auto model = std::make_shared<const gc::Model>(load_model(a.model_dir, c));
  auto store = std::make_shared<gc::SessionStore>(a.db);
  gc::ChatService svc(model, gc::backend_from(model->settings), store,
                      model->settings.service.top_k);
  gc::Session s = svc.create_session(a.persona);
  std::cout << "session " << s.id << " with " << s.candidates.size()
            << " candidates. Commands: /regen [index], /grounding, /quit\n";
  std::optional<std::uint64_t> seed;
  if (a.seeded) seed = a.seed;
  std::string line;
  while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
    line = gc::text::normalize(line);
    if (line.empty()) continue;
    try {
      if (line == "/quit") break;
      json r;
      if (line == "/grounding") {
        std::cout << svc.grounding(s.id).dump(2) << '\n';
        continue;
      } else if (line.rfind("/regen", 0) == 0) {
        std::optional<std::size_t> forced;
        if (line.size() > 7) forced = std::stoul(line.substr(7));
        r = svc.regenerate(s.id, forced, seed);
      } else {
        r = svc.post_message(s.id, line, seed);
      }
      if (seed) ++*seed;
      std::cout << "bot: " << r["response"].get<std::string>() << "\n     [z="
                << r["chosen_candidate"]["index"] << " " << r["chosen_candidate"]["type"].get<std::string>()
                << ": " << r["chosen_candidate"]["text"].get<std::string>() << "]\n";
    } catch (const gc::Error& e) {
      std::cout << "error (" << e.kind() << "): " << e.what() << '\n';
    } catch (const std::exception& e) {
      std::cout << "error: " << e.what() << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string model_dir;
};

int run_serve(const Common& c, const ServeArgs& a) {
  auto model = std::make_shared<const gc::Model>(load_model(a.model_dir, c));
  const gc::ServiceSettings& ss = model->settings.service;
  auto store = std::make_shared<gc::SessionStore>(ss.db_path);
  gc::ChatService svc(model, gc::backend_from(model->settings), store, ss.top_k);
  httplib::Server server;
  gc::install_routes(server, svc, ss.static_dir);
  std::cerr << "listening on " << ss.host << ":" << ss.port << '\n';
  if (!server.listen(ss.host, ss.port))
    throw gc::BackendError("cannot listen on " + ss.host + ":" + std::to_string(ss.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persona-grounded dialog with a discrete latent persona choice"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "key = value settings file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", common.overrides, "override a setting (key=value), repeatable");

  ExpandArgs ea;
  auto* expand = app.add_subcommand("expand", "expand persona sentences into candidate sets");
  expand->add_option("--in,--corpus", ea.corpus, "corpus JSONL with persona_set records");
  expand->add_option("--backend", ea.backend, "mock or file:PATH");
  expand->add_option("--relations", ea.relations, "comma-separated relation list");
  expand->add_option("--n", ea.n, "expansions per relation");
  expand->add_option("--sentence", ea.sentences, "persona sentence (repeatable)");
  expand->add_option("--out", ea.out, "write expansion records (JSONL)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train prior, inference network and generator");
  train->add_option("--train", ta.train_path, "training corpus JSONL");
  train->add_option("--valid", ta.valid_path, "validation corpus JSONL");
  train->add_option("--out", ta.out, "checkpoint directory");
  train->add_option("--log", ta.log_path, "training log (JSONL)");
  train->add_option("--synthetic", ta.synthetic, "train on a generated copy-grounding corpus of N dialogs");

  EvalArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "compute dialog quality metrics");
  evaluate->add_option("--model", va.model_dir, "checkpoint directory")->required();
  evaluate->add_option("--data", va.data, "evaluation corpus JSONL");
  evaluate->add_option("--dnli", va.dnli, "DNLI entailment JSONL for grounding accuracy");
  evaluate->add_option("--personas", va.personas, "corpus whose persona sets resolve DNLI rows");
  evaluate->add_option("--cases", va.cases, "edited-persona cases JSONL for controllability");
  evaluate->add_option("--out", va.out, "write the report as JSON");
  evaluate->add_option("--synthetic", va.synthetic, "evaluate on a generated copy-grounding split");
  evaluate->add_flag("--no-ppl", va.skip_ppl, "skip perplexity");

  DiagnoseArgs da;
  auto* diagnose = app.add_subcommand("diagnose", "exact-enumeration oracle checks");
  diagnose->add_option("--cases", da.cases, "number of random tiny cases");
  diagnose->add_option("--seed", da.seed, "random seed");

  ChatArgs ca;
  auto* chat = app.add_subcommand("chat", "interactive chat in the terminal");
  chat->add_option("--model", ca.model_dir, "checkpoint directory")->required();
  chat->add_option("--persona", ca.persona, "persona sentence (repeatable)")->required();
  chat->add_option("--db", ca.db, "session database");
  chat->add_option("--seed", ca.seed, "decode seed")->each([&](const std::string&) { ca.seeded = true; });

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "HTTP chat service");
  serve->add_option("--model", sa.model_dir, "checkpoint directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*expand) return run_expand(common, ea);
    if (*train) return run_train(common, ta);
    if (*evaluate) return run_evaluate(common, va);
    if (*diagnose) return run_diagnose(common, da);
    if (*chat) return run_chat(common, ca);
    if (*serve) return run_serve(common, sa);
  } catch (const gc::Error& e) {
    std::cerr << "error (" << e.kind() << "): " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
