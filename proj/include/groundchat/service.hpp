#pragma once

// Chat sessions over a trained model, persisted in SQLite (WAL journal), and
// the HTTP front end.
//
//   POST /sessions                    {"persona": [..], "expand": true}
//   GET  /sessions/{id}
//   POST /sessions/{id}/message       {"text": "..", "seed": 7}
//   PUT  /sessions/{id}/persona       {"ops": [{"op": "replace", "sentence_id": .., "sentence": ..}]}
//   POST /sessions/{id}/regenerate    {"forced_index": 3, "seed": 7}
//   GET  /sessions/{id}/grounding?k=10
//
// A seed may also be passed as the X-Seed header. Errors come back as
// {"error": {"kind": .., "message": ..}} with a 4xx/5xx status.

#include <sqlite3.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundchat/dataset.hpp"
#include "groundchat/decoding.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/expansion.hpp"
#include "groundchat/model.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace groundchat {

using json = nlohmann::json;

class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& what) : Error("conflict", what) {}
};

// ---------------------------------------------------------------------------
// Session state

struct Grounding {
  std::vector<double> prior;
  std::size_t chosen_index = 0;
  bool forced = false;
};

struct Session {
  std::string id;
  PersonaSet persona;
  bool expand = true;
  std::size_t next_sentence = 0;  // keeps sentence ids stable across edits
  CandidateSet candidates;
  std::vector<DialogTurn> transcript;
  std::optional<Grounding> last_grounding;
};

inline json expansion_json(const Expansion& e) {
  return {{"source_id", e.source_id ? json(*e.source_id) : json(nullptr)},
          {"type", to_string(e.type)},
          {"text", e.text},
          {"beam_rank", e.beam_rank}};
}

inline Expansion expansion_from_json(const json& j) {
  Expansion e;
  if (!j.at("source_id").is_null()) e.source_id = j["source_id"].get<std::string>();
  e.type = parse_expansion_type(j.at("type").get<std::string>());
  e.text = j.at("text").get<std::string>();
  e.beam_rank = j.value("beam_rank", 0);
  return e;
}

inline json session_to_json(const Session& s) {
  json j;
  j["id"] = s.id;
  j["expand"] = s.expand;
  j["next_sentence"] = s.next_sentence;
  j["persona"] = json::array();
  for (auto& p : s.persona.sentences) j["persona"].push_back({{"id", p.id}, {"text", p.text}});
  j["candidates"] = json::array();
  for (auto& c : s.candidates.candidates) j["candidates"].push_back(expansion_json(c));
  j["null_index"] = s.candidates.null_index;
  j["transcript"] = json::array();
  for (auto& t : s.transcript)
    j["transcript"].push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  if (s.last_grounding)
    j["last_grounding"] = {{"prior", s.last_grounding->prior},
                           {"chosen_index", s.last_grounding->chosen_index},
                           {"forced", s.last_grounding->forced}};
  return j;
}

inline Session session_from_json(const json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.expand = j.value("expand", true);
  s.next_sentence = j.at("next_sentence").get<std::size_t>();
  s.persona.id = s.id;
  for (auto& p : j.at("persona"))
    s.persona.sentences.push_back({p.at("id").get<std::string>(), p.at("text").get<std::string>()});
  s.candidates.persona_set_id = s.id;
  for (auto& c : j.at("candidates")) s.candidates.candidates.push_back(expansion_from_json(c));
  s.candidates.null_index = j.at("null_index").get<std::size_t>();
  for (auto& t : j.at("transcript"))
    s.transcript.push_back({parse_speaker(t.at("speaker").get<std::string>()),
                            t.at("text").get<std::string>()});
  if (j.contains("last_grounding")) {
    Grounding g;
    g.prior = j["last_grounding"].at("prior").get<std::vector<double>>();
    g.chosen_index = j["last_grounding"].at("chosen_index").get<std::size_t>();
    g.forced = j["last_grounding"].value("forced", false);
    s.last_grounding = g;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Store

class SessionStore {
 public:
  explicit SessionStore(const std::string& path) {
    if (sqlite3_open_v2(path.c_str(), &db_,
                        SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw BackendError("cannot open session store " + path + ": " + msg);
    }
    exec("PRAGMA journal_mode=WAL;");
    exec("PRAGMA synchronous=NORMAL;");
    exec("CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, body TEXT NOT NULL);");
  }
  ~SessionStore() { sqlite3_close(db_); }
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  void put(const Session& s) {
    std::lock_guard<std::mutex> lock(mu_);
    Stmt st(db_, "INSERT OR REPLACE INTO sessions (id, body) VALUES (?1, ?2);");
    const std::string body = session_to_json(s).dump();
    sqlite3_bind_text(st.s, 1, s.id.c_str(), -1, SQLITE_TRANSIENT);
    sqlite3_bind_text(st.s, 2, body.c_str(), -1, SQLITE_TRANSIENT);
    if (sqlite3_step(st.s) != SQLITE_DONE) fail("write session");
  }

  std::optional<Session> get(const std::string& id) {
    std::lock_guard<std::mutex> lock(mu_);
    Stmt st(db_, "SELECT body FROM sessions WHERE id = ?1;");
    sqlite3_bind_text(st.s, 1, id.c_str(), -1, SQLITE_TRANSIENT);
    const int rc = sqlite3_step(st.s);
    if (rc == SQLITE_DONE) return std::nullopt;
    if (rc != SQLITE_ROW) fail("read session");
    const auto* text = reinterpret_cast<const char*>(sqlite3_column_text(st.s, 0));
    try {
      return session_from_json(json::parse(text));
    } catch (const json::exception& e) {
      throw IntegrityError("stored session " + id + " is corrupt: " + e.what());
    }
  }

  std::size_t size() {
    std::lock_guard<std::mutex> lock(mu_);
    Stmt st(db_, "SELECT COUNT(*) FROM sessions;");
    if (sqlite3_step(st.s) != SQLITE_ROW) fail("count sessions");
    return static_cast<std::size_t>(sqlite3_column_int64(st.s, 0));
  }

 private:
  struct Stmt {
    sqlite3_stmt* s = nullptr;
    Stmt(sqlite3* db, const char* sql) {
      if (sqlite3_prepare_v2(db, sql, -1, &s, nullptr) != SQLITE_OK)
        throw BackendError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
    }
    ~Stmt() { sqlite3_finalize(s); }
  };

  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown";
      sqlite3_free(err);
      throw BackendError(std::string("sqlite: ") + msg);
    }
  }

  [[noreturn]] void fail(const std::string& what) {
    throw BackendError("session store could not " + what + ": " + sqlite3_errmsg(db_));
  }

  sqlite3* db_ = nullptr;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Service logic

struct PersonaOp {
  enum Kind { Add, Remove, Replace } kind = Add;
  std::string sentence;     // new text for add / replace
  std::string sentence_id;  // target for remove / replace (or match by `target_text`)
  std::string target_text;
};

inline PersonaOp persona_op_from_json(const json& j) {
  PersonaOp op;
  const std::string kind = j.at("op").get<std::string>();
  if (kind == "add") op.kind = PersonaOp::Add;
  else if (kind == "remove") op.kind = PersonaOp::Remove;
  else if (kind == "replace") op.kind = PersonaOp::Replace;
  else throw ValidationError("unknown persona op '" + kind + "'");
  op.sentence = j.value("sentence", std::string());
  op.sentence_id = j.value("sentence_id", std::string());
  op.target_text = j.value("target", std::string());
  return op;
}

struct EditStats {
  std::size_t candidates_before = 0;
  std::size_t candidates_after = 0;
  std::size_t added = 0;
  std::size_t removed = 0;
  std::size_t sentences = 0;
};

class ChatService {
 public:
  ChatService(std::shared_ptr<const Model> model, std::shared_ptr<ExpanderBackend> backend,
              std::shared_ptr<SessionStore> store, int top_k = 10)
      : model_(std::move(model)),
        backend_(std::move(backend)),
        store_(std::move(store)),
        plan_(expansion_plan_from(model_->settings.expansion)),
        decode_(DecodeConfig::from(model_->settings.decode)),
        top_k_(top_k) {}

  Session create_session(const std::vector<std::string>& sentences, bool expand = true) {
    if (sentences.empty()) throw ValidationError("a persona needs at least one sentence");
    Session s;
    s.id = fresh_id();
    s.expand = expand;
    s.persona.id = s.id;
    for (auto& raw : sentences) add_sentence(s, raw);
    rebuild(s);
    store_->put(s);
    return s;
  }

  Session get(const std::string& id) {
    auto s = store_->get(id);
    if (!s) throw NotFoundError("no session " + id);
    return *s;
  }

  json post_message(const std::string& id, const std::string& user_text,
                    std::optional<std::uint64_t> seed = std::nullopt) {
    const std::string text = text::normalize(user_text);
    if (text.empty()) throw ValidationError("message text is empty");
    auto lock = lock_session(id);
    Session s = get(id);
    if (!s.transcript.empty() && s.transcript.back().speaker == Speaker::Speaker1)
      throw ConflictError("session is waiting for a bot turn");
    s.transcript.push_back({Speaker::Speaker1, text});
    const std::uint64_t used = seed.value_or(random_seed());
    Response r = respond_for(s, std::nullopt, used);
    s.transcript.push_back({Speaker::Speaker2, r.text});
    s.last_grounding = Grounding{std::vector<double>(r.prior_dist.probs().data(),
                                                     r.prior_dist.probs().data() + r.prior_dist.size()),
                                 r.chosen_index, r.forced};
    store_->put(s);
    return payload(s, r, used);
  }

  json regenerate(const std::string& id, std::optional<std::size_t> forced_index = std::nullopt,
                  std::optional<std::uint64_t> seed = std::nullopt) {
    auto lock = lock_session(id);
    Session s = get(id);
    if (s.transcript.empty() || s.transcript.back().speaker != Speaker::Speaker2)
      throw ConflictError("no bot turn to regenerate");
    if (forced_index && *forced_index >= s.candidates.size())
      throw ValidationError("forced_index " + std::to_string(*forced_index) +
                            " is outside the candidate set of size " +
                            std::to_string(s.candidates.size()));
    s.transcript.pop_back();
    const std::uint64_t used = seed.value_or(random_seed());
    Response r = respond_for(s, forced_index, used);
    s.transcript.push_back({Speaker::Speaker2, r.text});
    s.last_grounding = Grounding{std::vector<double>(r.prior_dist.probs().data(),
                                                     r.prior_dist.probs().data() + r.prior_dist.size()),
                                 r.chosen_index, r.forced};
    store_->put(s);
    return payload(s, r, used);
  }

  EditStats edit_persona(const std::string& id, const std::vector<PersonaOp>& ops) {
    auto lock = lock_session(id);
    Session s = get(id);
    const CandidateSet before = s.candidates;
    for (auto& op : ops) apply(s, op);
    if (s.persona.sentences.empty())
      throw ValidationError("edit would leave the persona without sentences");
    rebuild(s);
    EditStats st;
    st.candidates_before = before.size();
    st.candidates_after = s.candidates.size();
    st.sentences = s.persona.sentences.size();
    std::multiset<std::pair<std::string, std::string>> old_keys, new_keys;
    auto key = [](const Expansion& e) {
      return std::make_pair(to_string(e.type), text::fold_key(e.text));
    };
    for (auto& c : before.candidates) old_keys.insert(key(c));
    for (auto& c : s.candidates.candidates) new_keys.insert(key(c));
    for (auto& k : new_keys) st.added += old_keys.count(k) == 0;
    for (auto& k : old_keys) st.removed += new_keys.count(k) == 0;
    store_->put(s);
    return st;
  }

  json grounding(const std::string& id, std::optional<int> k = std::nullopt) {
    Session s = get(id);
    if (!s.last_grounding) throw NotFoundError("session " + id + " has no grounding yet");
    return grounding_json(s, s.last_grounding->prior, s.last_grounding->chosen_index,
                          s.last_grounding->forced, k.value_or(top_k_));
  }

  json session_json(const Session& s) const {
    json j;
    j["id"] = s.id;
    j["persona"] = json::array();
    std::map<std::string, std::size_t> per_sentence;
    for (auto& c : s.candidates.candidates)
      if (c.source_id && c.type != ExpansionType::Original) ++per_sentence[*c.source_id];
    for (auto& p : s.persona.sentences)
      j["persona"].push_back({{"id", p.id}, {"text", p.text}, {"expansions", per_sentence[p.id]}});
    j["candidate_count"] = s.candidates.size();
    j["null_index"] = s.candidates.null_index;
    j["transcript"] = json::array();
    for (auto& t : s.transcript)
      j["transcript"].push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
    return j;
  }

  json candidates_json(const Session& s) const {
    json arr = json::array();
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
      json e = expansion_json(s.candidates[i]);
      e["index"] = i;
      arr.push_back(e);
    }
    return arr;
  }

  const Model& model() const { return *model_; }

 private:
  static std::uint64_t random_seed() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }

  static std::string fresh_id() {
    std::random_device rd;
    static const char* hex = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 16; ++i) id += hex[rd() % 16];
    return id;
  }

  std::unique_lock<std::mutex> lock_session(const std::string& id) {
    std::shared_ptr<std::mutex> m;
    {
      std::lock_guard<std::mutex> g(locks_mu_);
      auto& slot = locks_[id];
      if (!slot) slot = std::make_shared<std::mutex>();
      m = slot;
    }
    // Requests for the same session queue here. Entries are never erased,
    // so the mutex outlives the lock.
    return std::unique_lock<std::mutex>(*m);
  }

  static void add_sentence(Session& s, const std::string& raw) {
    const std::string t = text::normalize(raw);
    if (t.empty()) throw ValidationError("persona sentence is empty");
    for (auto& p : s.persona.sentences)
      if (text::fold_key(p.text) == text::fold_key(t))
        throw ValidationError("duplicate persona sentence '" + t + "'");
    s.persona.sentences.push_back({sentence_id(s.id, s.next_sentence++), t});
  }

  static std::size_t find_sentence(const Session& s, const PersonaOp& op) {
    for (std::size_t i = 0; i < s.persona.sentences.size(); ++i) {
      const auto& p = s.persona.sentences[i];
      if (!op.sentence_id.empty() ? p.id == op.sentence_id
                                  : text::fold_key(p.text) == text::fold_key(op.target_text))
        return i;
    }
    throw ValidationError("persona op names no existing sentence");
  }

  static void apply(Session& s, const PersonaOp& op) {
    switch (op.kind) {
      case PersonaOp::Add:
        add_sentence(s, op.sentence);
        break;
      case PersonaOp::Remove: {
        const std::size_t i = find_sentence(s, op);
        if (s.persona.sentences.size() == 1)
          throw ValidationError("cannot remove the last persona sentence");
        s.persona.sentences.erase(s.persona.sentences.begin() + static_cast<std::ptrdiff_t>(i));
        break;
      }
      case PersonaOp::Replace: {
        const std::size_t i = find_sentence(s, op);
        const std::string t = text::normalize(op.sentence);
        if (t.empty()) throw ValidationError("replacement sentence is empty");
        if (text::fold_key(t) == text::fold_key(s.persona.sentences[i].text)) break;
        for (std::size_t j = 0; j < s.persona.sentences.size(); ++j)
          if (j != i && text::fold_key(s.persona.sentences[j].text) == text::fold_key(t))
            throw ValidationError("duplicate persona sentence '" + t + "'");
        s.persona.sentences[i] = {sentence_id(s.id, s.next_sentence++), t};
        break;
      }
    }
  }

  void rebuild(Session& s) const {
    std::vector<Expansion> exps;
    if (s.expand && backend_) {
      try {
        exps = expand_persona_set(s.persona, *backend_, plan_);
      } catch (const BackendError&) {
        throw;
      } catch (const CapabilityError& e) {
        throw BackendError(e.what());
      }
    }
    s.candidates = build_candidate_set(s.persona, exps);
    s.candidates.persona_set_id = s.id;
  }

  Response respond_for(const Session& s, std::optional<std::size_t> forced, std::uint64_t seed) const {
    DialogHistory h;
    const std::size_t window = static_cast<std::size_t>(2 * model_->settings.train.history_size);
    const std::size_t begin = s.transcript.size() > window ? s.transcript.size() - window : 0;
    h.turns.assign(s.transcript.begin() + static_cast<std::ptrdiff_t>(begin), s.transcript.end());
    DecodeConfig cfg = decode_;
    cfg.seed = seed;
    std::mt19937_64 rng(seed);
    return respond(h, s.candidates, *model_, cfg, rng, forced, Speaker::Speaker2);
  }

  json grounding_json(const Session& s, const std::vector<double>& prior, std::size_t chosen,
                      bool forced, int k) const {
    std::vector<std::size_t> order(prior.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return prior[a] > prior[b]; });
    if (k < 0) k = 0;
    if (order.size() > static_cast<std::size_t>(k)) order.resize(static_cast<std::size_t>(k));
    json top = json::array();
    for (std::size_t i : order) {
      const Expansion& e = s.candidates[i];
      top.push_back({{"index", i}, {"text", e.text}, {"type", to_string(e.type)},
                     {"prob", prior[i]}, {"chosen", i == chosen}});
    }
    return {{"prior_topk", top}, {"chosen_index", chosen}, {"forced", forced},
            {"candidate_count", s.candidates.size()}};
  }

  json payload(const Session& s, const Response& r, std::uint64_t seed) const {
    const Expansion& chosen = s.candidates[r.chosen_index];
    json prov = nullptr;
    if (auto src = resolve_provenance(r.chosen_index, s.candidates)) {
      const PersonaSentence* p = s.persona.find(*src);
      prov = {{"sentence_id", *src}, {"text", p ? p->text : std::string()}};
    }
    std::vector<double> prior(r.prior_dist.probs().data(),
                              r.prior_dist.probs().data() + r.prior_dist.size());
    json g = grounding_json(s, prior, r.chosen_index, r.forced, top_k_);
    json chosen_json = expansion_json(chosen);
    chosen_json["index"] = r.chosen_index;
    return {{"session_id", s.id},
            {"response", r.text},
            {"chosen_candidate", chosen_json},
            {"provenance", prov},
            {"prior_topk", g["prior_topk"]},
            {"forced", r.forced},
            {"seed", seed}};
  }

  std::shared_ptr<const Model> model_;
  std::shared_ptr<ExpanderBackend> backend_;
  std::shared_ptr<SessionStore> store_;
  ExpansionPlan plan_;
  DecodeConfig decode_;
  int top_k_;
  std::mutex locks_mu_;
  std::unordered_map<std::string, std::shared_ptr<std::mutex>> locks_;
};

// ---------------------------------------------------------------------------
// HTTP

inline int http_status(const std::string& kind) {
  static const std::map<std::string, int> k = {
      {"validation", 400}, {"parse", 400},   {"domain", 400},    {"length", 400},
      {"budget", 400},     {"capability", 400}, {"not_found", 404}, {"conflict", 409},
      {"backend", 502}};
  auto it = k.find(kind);
  return it == k.end() ? 500 : it->second;
}

namespace http_detail {

inline std::optional<std::uint64_t> seed_of(const httplib::Request& req, const json& body) {
  if (body.is_object() && body.contains("seed") && !body["seed"].is_null())
    return body["seed"].get<std::uint64_t>();
  if (req.has_header("X-Seed")) {
    try {
      return std::stoull(req.get_header_value("X-Seed"));
    } catch (const std::exception&) {
      throw ValidationError("X-Seed header is not an unsigned integer");
    }
  }
  return std::nullopt;
}

inline json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ParseError(std::string("request body is not JSON: ") + e.what());
  }
}

inline void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send(res, http_status(e.kind()), {{"error", {{"kind", e.kind()}, {"message", e.what()}}}});
  } catch (const json::exception& e) {
    send(res, 400, {{"error", {{"kind", "validation"}, {"message", e.what()}}}});
  } catch (const std::exception& e) {
    send(res, 500, {{"error", {{"kind", "internal"}, {"message", e.what()}}}});
  }
}

}  // namespace http_detail

// Registers every route on `server`.
inline void install_routes(httplib::Server& server, ChatService& svc,
                           const std::string& static_dir = {}) {
  using namespace http_detail;
  if (!static_dir.empty()) server.set_mount_point("/", static_dir);

  server.Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = body_of(req);
      auto sentences = body.at("persona").get<std::vector<std::string>>();
      Session s = svc.create_session(sentences, body.value("expand", true));
      json out = svc.session_json(s);
      out["candidates"] = svc.candidates_json(s);
      send(res, 201, out);
    });
  });
  server.Get(R"(/sessions/([0-9A-Za-z_-]+))",
             [&svc](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 Session s = svc.get(req.matches[1]);
                 json out = svc.session_json(s);
                 out["candidates"] = svc.candidates_json(s);
                 send(res, 200, out);
               });
             });
  server.Post(R"(/sessions/([0-9A-Za-z_-]+)/message)",
              [&svc](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  json body = body_of(req);
                  send(res, 200,
                       svc.post_message(req.matches[1], body.at("text").get<std::string>(),
                                        seed_of(req, body)));
                });
              });
  server.Put(R"(/sessions/([0-9A-Za-z_-]+)/persona)",
             [&svc](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 json body = body_of(req);
                 std::vector<PersonaOp> ops;
                 for (auto& o : body.at("ops")) ops.push_back(persona_op_from_json(o));
                 EditStats st = svc.edit_persona(req.matches[1], ops);
                 Session s = svc.get(req.matches[1]);
                 json out = svc.session_json(s);
                 out["diff"] = {{"candidates_before", st.candidates_before},
                                {"candidates_after", st.candidates_after},
                                {"added", st.added},
                                {"removed", st.removed}};
                 send(res, 200, out);
               });
             });
  server.Post(R"(/sessions/([0-9A-Za-z_-]+)/regenerate)",
              [&svc](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  json body = body_of(req);
                  std::optional<std::size_t> forced;
                  if (body.contains("forced_index") && !body["forced_index"].is_null()) {
                    const auto v = body["forced_index"].get<long long>();
                    if (v < 0) throw ValidationError("forced_index must be non-negative");
                    forced = static_cast<std::size_t>(v);
                  }
                  send(res, 200, svc.regenerate(req.matches[1], forced, seed_of(req, body)));
                });
              });
  server.Get(R"(/sessions/([0-9A-Za-z_-]+)/grounding)",
             [&svc](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 std::optional<int> k;
                 if (req.has_param("k")) {
                   try {
                     k = std::stoi(req.get_param_value("k"));
                   } catch (const std::exception&) {
                     throw ValidationError("k must be an integer");
                   }
                 }
                 send(res, 200, svc.grounding(req.matches[1], k));
               });
             });
}

}  // namespace groundchat
