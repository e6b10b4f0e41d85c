#pragma once

// Dialog quality metrics: perplexity (exact marginal or ELBO bound), BLEU-1/2,
// Distinct-1/2, grounding accuracy of the prior and inference networks, null
// rate, unigram overlap, embedding similarity, controllability.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundchat/dataset.hpp"
#include "groundchat/decoding.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/generator.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/model.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

// log p(x | z=k, H) for every candidate k.
inline VectorXd candidate_log_likelihoods(const TrainingExample& ex, const CandidateSet& c,
                                          const Model& model) {
  VectorXd ll(static_cast<Eigen::Index>(c.size()));
  for (std::size_t k = 0; k < c.size(); ++k) {
    AssembledInput in = assemble(c[k], ex.history, ex.target, model.tokenizer,
                                 model.lm.max_len(), ex.target_speaker);
    ll[static_cast<Eigen::Index>(k)] = -target_nll(in, model.lm).total_nll;
  }
  return ll;
}

inline int target_token_count(const TrainingExample& ex, const Model& model) {
  return static_cast<int>(model.tokenizer.encode(ex.target).size()) + 1;
}

// ---------------------------------------------------------------------------
// Perplexity

enum class PplMode { ExactMarginal, ElboBound };

inline PplMode parse_ppl_mode(const std::string& s) {
  if (s == "exact_marginal") return PplMode::ExactMarginal;
  if (s == "elbo_bound") return PplMode::ElboBound;
  throw ValidationError("unknown perplexity mode '" + s + "'");
}

struct PplReport {
  double ppl = 0.0;
  double total_nll = 0.0;
  long tokens = 0;
  PplMode mode = PplMode::ExactMarginal;
  bool upper_bound = false;  // elbo_bound PPL is an upper bound on the true PPL
};

inline PplReport perplexity(const std::vector<PreparedExample>& examples, const Model& model,
                            PplMode mode, int max_candidates = 32) {
  PplReport r;
  r.mode = mode;
  r.upper_bound = mode == PplMode::ElboBound;
  for (auto& p : examples) {
    const CandidateSet& c = *p.candidates;
    if (mode == PplMode::ExactMarginal && static_cast<int>(c.size()) > max_candidates)
      throw BudgetError("exact marginal perplexity over " + std::to_string(c.size()) +
                        " candidates exceeds the cap of " + std::to_string(max_candidates));
    VectorXd ll = candidate_log_likelihoods(p.example, c, model);
    VectorXd log_prior = log_softmax(prior_logits(p.inputs, model.prior));
    double nll;
    if (mode == PplMode::ExactMarginal) {
      nll = -logsumexp(log_prior + ll);
    } else {
      VectorXd log_q = log_softmax(posterior_logits(p.inputs, model.inference));
      VectorXd q = log_q.array().exp().matrix();
      const double kl = (q.array() * (log_q - log_prior).array()).sum();
      nll = -(q.dot(ll) - kl);
    }
    r.total_nll += nll;
    r.tokens += target_token_count(p.example, model);
  }
  r.ppl = r.tokens ? std::exp(r.total_nll / static_cast<double>(r.tokens)) : 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// BLEU / Distinct

namespace eval_detail {

inline std::map<std::vector<std::string>, int> ngrams(const std::vector<std::string>& toks,
                                                      int n) {
  std::map<std::vector<std::string>, int> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return out;
}

}  // namespace eval_detail

inline constexpr double kBleuEpsilon = 0.1;

// Cumulative BLEU-n of one hypothesis against one reference: brevity penalty
// times the geometric mean of clipped n-gram precisions of orders 1..n.
// Orders >= 2 are add-epsilon smoothed; zero unigram matches score 0.
inline double sentence_bleu(const std::string& hypothesis, const std::string& reference,
                            int n) {
  if (n < 1) throw DomainError("bleu order must be >= 1");
  auto hyp = text::words(hypothesis);
  auto ref = text::words(reference);
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    auto h = eval_detail::ngrams(hyp, order);
    auto r = eval_detail::ngrams(ref, order);
    double matches = 0.0, total = 0.0;
    for (auto& [g, c] : h) {
      total += c;
      if (auto it = r.find(g); it != r.end()) matches += std::min(c, it->second);
    }
    double precision;
    if (order == 1) {
      if (matches == 0.0) return 0.0;
      precision = matches / total;
    } else {
      precision = (matches + kBleuEpsilon) / (total + kBleuEpsilon);
    }
    log_sum += std::log(precision) / n;
  }
  const double c = static_cast<double>(hyp.size()), rl = static_cast<double>(ref.size());
  const double bp = c >= rl ? 1.0 : std::exp(1.0 - rl / c);
  return bp * std::exp(log_sum);
}

// Sentence-level BLEU averaged over the corpus.
inline double bleu_n(const std::vector<std::string>& hypotheses,
                     const std::vector<std::string>& references, int n) {
  if (hypotheses.size() != references.size())
    throw ContractError("bleu_n: hypotheses and references differ in length");
  if (hypotheses.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    sum += sentence_bleu(hypotheses[i], references[i], n);
  return sum / static_cast<double>(hypotheses.size());
}

// Distinct n-grams over total n-grams of the whole corpus.
inline double distinct_n(const std::vector<std::string>& texts, int n) {
  if (texts.empty()) throw ContractError("distinct_n: empty corpus");
  std::set<std::vector<std::string>> distinct;
  std::size_t total = 0;
  for (auto& t : texts) {
    auto toks = text::words(t);
    for (auto& [g, c] : eval_detail::ngrams(toks, n)) {
      distinct.insert(g);
      total += static_cast<std::size_t>(c);
    }
  }
  return total ? static_cast<double>(distinct.size()) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Overlap and similarity

struct Overlap {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  bool empty = false;  // a side had no content words left
};

// Set-level overlap of content words (stopwords and punctuation removed).
inline Overlap unigram_overlap(const std::string& response, const std::string& persona) {
  auto r = text::content_words(response);
  auto p = text::content_words(persona);
  std::set<std::string> rs(r.begin(), r.end()), ps(p.begin(), p.end());
  Overlap o;
  if (rs.empty() || ps.empty()) {
    o.empty = true;
    return o;
  }
  std::size_t inter = 0;
  for (auto& w : rs) inter += ps.count(w);
  o.precision = static_cast<double>(inter) / static_cast<double>(rs.size());
  o.recall = static_cast<double>(inter) / static_cast<double>(ps.size());
  o.f1 = o.precision + o.recall > 0.0
             ? 2.0 * o.precision * o.recall / (o.precision + o.recall)
             : 0.0;
  return o;
}

inline double cosine(const Embedding& a, const Embedding& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double semantic_similarity(const std::string& a, const std::string& b,
                                  const Encoder& enc) {
  return cosine(enc.encode_text(a), enc.encode_text(b));
}

// ---------------------------------------------------------------------------
// Grounding

enum class Network { Prior, Inference };

struct AccuracyReport {
  double accuracy = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  double chance = 0.0;  // mean 1/|S|
};

inline std::size_t grounding_argmax(const PreparedExample& p, const Model& model,
                                    Network which) {
  VectorXd logits = which == Network::Prior ? prior_logits(p.inputs, model.prior)
                                            : posterior_logits(p.inputs, model.inference);
  return argmax_z(softmax_temp(logits, 1.0));
}

// Argmax candidate mapped back to its original persona sentence, compared to
// the gold sentence. Examples without gold labels are skipped and counted.
inline AccuracyReport entailment_accuracy(const std::vector<PreparedExample>& examples,
                                          const Model& model, Network which) {
  AccuracyReport r;
  std::size_t correct = 0;
  double chance = 0.0;
  for (auto& p : examples) {
    if (!p.gold_source_id) {
      ++r.skipped;
      continue;
    }
    auto prov = resolve_provenance(grounding_argmax(p, model, which), *p.candidates);
    if (prov && *prov == *p.gold_source_id) ++correct;
    std::size_t originals = 0;
    for (auto& e : p.candidates->candidates) originals += e.type == ExpansionType::Original;
    chance += originals ? 1.0 / static_cast<double>(originals) : 0.0;
    ++r.evaluated;
  }
  if (r.evaluated) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.evaluated);
    r.chance = chance / static_cast<double>(r.evaluated);
  }
  return r;
}

// Attaches DNLI gold labels to prepared examples by example id.
inline std::size_t attach_entailment_gold(std::vector<PreparedExample>& examples,
                                          const std::vector<EntailmentPair>& pairs) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < examples.size(); ++i) by_id.emplace(examples[i].example.id, i);
  std::size_t attached = 0;
  for (auto& pr : pairs) {
    if (!pr.matched) continue;
    auto it = by_id.find(pr.example_id);
    if (it == by_id.end()) continue;
    examples[it->second].gold_source_id = pr.persona_sentence_id;
    ++attached;
  }
  return attached;
}

inline double null_rate(const std::vector<PreparedExample>& examples, const Model& model) {
  if (examples.empty()) return 0.0;
  std::size_t nulls = 0;
  for (auto& p : examples)
    nulls += grounding_argmax(p, model, Network::Prior) == p.candidates->null_index;
  return static_cast<double>(nulls) / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Controllability

enum class EditKind { EntitySwap, ExpansionSwap };

inline std::string to_string(EditKind k) {
  return k == EditKind::EntitySwap ? "entity_swap" : "expansion_swap";
}

inline EditKind parse_edit_kind(const std::string& s) {
  if (s == "entity_swap") return EditKind::EntitySwap;
  if (s == "expansion_swap") return EditKind::ExpansionSwap;
  throw ParseError("unknown edit kind '" + s + "'");
}

struct EditedPersonaCase {
  DialogHistory history;
  Expansion original_candidate;
  Expansion edited_candidate;
  EditKind kind = EditKind::EntitySwap;
  std::string key_entity;
  std::optional<Speaker> responder;
};

inline EditedPersonaCase make_edited_case(DialogHistory history, Expansion original,
                                          Expansion edited, EditKind kind,
                                          std::string key_entity = {}) {
  if (text::fold_key(original.text) == text::fold_key(edited.text))
    throw ValidationError("edited candidate must differ from the original");
  if (kind == EditKind::EntitySwap && text::normalize(key_entity).empty())
    throw ValidationError("entity_swap case needs a key entity");
  return {std::move(history), std::move(original), std::move(edited), kind,
          text::lowercase(text::normalize(key_entity)), std::nullopt};
}

// Diagnostic-case file: one JSON object per line,
// {"history":[{"speaker","text"}], "original":"...", "edited":"...",
//  "edit_kind":"entity_swap"|"expansion_swap", "key_entity":"...",
//  "original_type":"original", "edited_type":"original"}
inline std::vector<EditedPersonaCase> load_edited_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file " + path);
  std::vector<EditedPersonaCase> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::normalize(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      DialogHistory h;
      for (auto& t : j.at("history"))
        h.turns.push_back({parse_speaker(t.at("speaker").get<std::string>()),
                           text::normalize(t.at("text").get<std::string>())});
      auto type_of = [&](const char* key) {
        return j.contains(key) ? parse_expansion_type(j[key].get<std::string>())
                               : ExpansionType::Original;
      };
      Expansion orig{std::string("case"), type_of("original_type"),
                     text::normalize(j.at("original").get<std::string>()), 0};
      Expansion edit{std::string("case"), type_of("edited_type"),
                     text::normalize(j.at("edited").get<std::string>()), 0};
      out.push_back(make_edited_case(std::move(h), orig, edit,
                                     parse_edit_kind(j.at("edit_kind").get<std::string>()),
                                     j.value("key_entity", std::string())));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct ControllabilityReport {
  double entity_rate = 0.0;
  double sim_edited = 0.0;
  double sim_unedited = 0.0;
  std::size_t entity_cases = 0;
  std::size_t cases = 0;
  std::vector<std::string> responses;
};

// Regenerates each case with z forced onto the edited candidate.
inline ControllabilityReport controllability_eval(const std::vector<EditedPersonaCase>& cases,
                                                  const Model& model, const DecodeConfig& cfg) {
  ControllabilityReport r;
  std::mt19937_64 rng(cfg.seed);
  std::size_t hits = 0;
  for (auto& c : cases) {
    CandidateSet single;
    single.candidates = {c.edited_candidate, Expansion{std::nullopt, ExpansionType::Null, "", 0}};
    single.null_index = 1;
    Response resp = respond(c.history, single, model, cfg, rng, std::size_t{0}, c.responder);
    r.responses.push_back(resp.text);
    if (c.kind == EditKind::EntitySwap) {
      ++r.entity_cases;
      auto toks = text::words(resp.text);
      auto ent = text::words(c.key_entity);
      bool found = false;
      for (std::size_t i = 0; !ent.empty() && i + ent.size() <= toks.size() && !found; ++i)
        found = std::equal(ent.begin(), ent.end(), toks.begin() + static_cast<std::ptrdiff_t>(i));
      hits += found;
    }
    r.sim_edited += semantic_similarity(resp.text, c.edited_candidate.text, *model.encoder);
    r.sim_unedited += semantic_similarity(resp.text, c.original_candidate.text, *model.encoder);
    ++r.cases;
  }
  if (r.entity_cases) r.entity_rate = static_cast<double>(hits) / static_cast<double>(r.entity_cases);
  if (r.cases) {
    r.sim_edited /= static_cast<double>(r.cases);
    r.sim_unedited /= static_cast<double>(r.cases);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full report

struct EvalReport {
  double ppl = 0.0;
  bool ppl_upper_bound = false;
  double bleu1 = 0.0, bleu2 = 0.0;
  double d1 = 0.0, d2 = 0.0;
  double entail_prior = 0.0, entail_inf = 0.0;
  std::size_t entail_evaluated = 0;
  double null_rate = 0.0;
  double overlap_recall = 0.0, overlap_precision = 0.0, overlap_f1 = 0.0;
  double sem_sim = 0.0;
  double ctrl_entity_rate = 0.0, ctrl_sim_edited = 0.0, ctrl_sim_unedited = 0.0;
  std::size_t examples = 0;

  nlohmann::json to_json() const {
    return {{"examples", examples},
            {"ppl", ppl},
            {"ppl_upper_bound", ppl_upper_bound},
            {"bleu1", bleu1},
            {"bleu2", bleu2},
            {"d1", d1},
            {"d2", d2},
            {"entail_prior", entail_prior},
            {"entail_inf", entail_inf},
            {"entail_evaluated", entail_evaluated},
            {"null_rate", null_rate},
            {"overlap_recall", overlap_recall},
            {"overlap_precision", overlap_precision},
            {"overlap_f1", overlap_f1},
            {"sem_sim", sem_sim},
            {"ctrl_entity_rate", ctrl_entity_rate},
            {"ctrl_sim_edited", ctrl_sim_edited},
            {"ctrl_sim_unedited", ctrl_sim_unedited}};
  }

  std::string table() const {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(4);
    auto row = [&](const std::string& name, double v) {
      out << "  " << name << std::string(26 - name.size(), ' ') << v << '\n';
    };
    out << "  metric                    value\n";
    row(ppl_upper_bound ? "ppl (elbo bound)" : "ppl", ppl);
    row("bleu-1", bleu1);
    row("bleu-2", bleu2);
    row("distinct-1", d1);
    row("distinct-2", d2);
    row("entailment (prior)", entail_prior);
    row("entailment (inference)", entail_inf);
    row("null rate", null_rate);
    row("overlap recall", overlap_recall);
    row("overlap precision", overlap_precision);
    row("overlap f1", overlap_f1);
    row("semantic similarity", sem_sim);
    row("ctrl entity rate", ctrl_entity_rate);
    row("ctrl sim edited", ctrl_sim_edited);
    row("ctrl sim unedited", ctrl_sim_unedited);
    return out.str();
  }
};

struct EvalOptions {
  PplMode ppl_mode = PplMode::ExactMarginal;
  int exact_max_candidates = 32;
  bool compute_ppl = true;
  DecodeConfig decode;
  std::vector<EditedPersonaCase> edited_cases;
};

inline EvalReport evaluate(const std::vector<PreparedExample>& examples, const Model& model,
                           const EvalOptions& opt) {
  EvalReport r;
  r.examples = examples.size();
  if (examples.empty()) return r;
  if (opt.compute_ppl) {
    auto ppl = perplexity(examples, model, opt.ppl_mode, opt.exact_max_candidates);
    r.ppl = ppl.ppl;
    r.ppl_upper_bound = ppl.upper_bound;
  }
  std::mt19937_64 rng(opt.decode.seed);
  std::vector<std::string> hyps, refs;
  double rec = 0, prec = 0, f1 = 0, sim = 0;
  std::size_t grounded = 0;
  for (auto& p : examples) {
    Response resp = respond(p.example.history, *p.candidates, model, opt.decode, rng,
                            std::nullopt, p.example.target_speaker);
    hyps.push_back(resp.text);
    refs.push_back(p.example.target);
    const Expansion& chosen = (*p.candidates)[resp.chosen_index];
    if (chosen.type != ExpansionType::Null) {
      Overlap o = unigram_overlap(resp.text, chosen.text);
      rec += o.recall;
      prec += o.precision;
      f1 += o.f1;
      sim += semantic_similarity(resp.text, chosen.text, *model.encoder);
      ++grounded;
    }
  }
  r.bleu1 = bleu_n(hyps, refs, 1);
  r.bleu2 = bleu_n(hyps, refs, 2);
  r.d1 = distinct_n(hyps, 1);
  r.d2 = distinct_n(hyps, 2);
  if (grounded) {
    r.overlap_recall = rec / static_cast<double>(grounded);
    r.overlap_precision = prec / static_cast<double>(grounded);
    r.overlap_f1 = f1 / static_cast<double>(grounded);
    r.sem_sim = sim / static_cast<double>(grounded);
  }
  auto ep = entailment_accuracy(examples, model, Network::Prior);
  auto ei = entailment_accuracy(examples, model, Network::Inference);
  r.entail_prior = ep.accuracy;
  r.entail_inf = ei.accuracy;
  r.entail_evaluated = ep.evaluated;
  r.null_rate = null_rate(examples, model);
  if (!opt.edited_cases.empty()) {
    auto c = controllability_eval(opt.edited_cases, model, opt.decode);
    r.ctrl_entity_rate = c.entity_rate;
    r.ctrl_sim_edited = c.sim_edited;
    r.ctrl_sim_unedited = c.sim_unedited;
  }
  return r;
}

}  // namespace groundchat
