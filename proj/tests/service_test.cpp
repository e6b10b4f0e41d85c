#include <gtest/gtest.h>

#include <thread>

#include "support.hpp"
#include "groundchat/service.hpp"

namespace gc = groundchat;
using gc::json;

namespace {

const std::vector<std::string> kPersona = {"I love surfing.", "My favorite color is red.",
                                           "I work as a nurse."};

std::shared_ptr<const gc::Model> shared_model() {
  static auto m = std::make_shared<const gc::Model>(gc_test::tiny_model());
  return m;
}

gc::ChatService make_service(std::shared_ptr<gc::SessionStore> store = nullptr) {
  if (!store) store = std::make_shared<gc::SessionStore>(":memory:");
  return gc::ChatService(shared_model(), std::make_shared<gc::MockExpander>(), store, 5);
}

}  // namespace

TEST(Service, CreateSessionCounts) {
  auto svc = make_service();
  EXPECT_EQ(svc.create_session(kPersona).candidates.size(), 139u);
  EXPECT_EQ(svc.create_session(kPersona, false).candidates.size(), 4u);
  EXPECT_EQ(svc.create_session({"i love surfing"}, false).candidates.size(), 2u);
  EXPECT_THROW(svc.create_session({}), gc::ValidationError);
  EXPECT_THROW(svc.create_session({"a b", "A  B"}), gc::ValidationError);
  gc::Session s = svc.create_session(kPersona);
  json j = svc.session_json(s);
  EXPECT_EQ(j["persona"].size(), 3u);
  EXPECT_EQ(j["persona"][0]["expansions"], 45);
  EXPECT_EQ(j["null_index"], 138);
  EXPECT_EQ(svc.candidates_json(s).size(), 139u);
}

TEST(Service, SeededMessageAndRegenerateReplay) {
  auto svc = make_service();
  gc::Session s = svc.create_session(kPersona);
  json a = svc.post_message(s.id, "do you like the beach?", 7);
  EXPECT_EQ(a["seed"], 7);
  EXPECT_EQ(a["session_id"], s.id);
  EXPECT_FALSE(a["forced"].get<bool>());
  EXPECT_LE(a["prior_topk"].size(), 5u);
  json b = svc.regenerate(s.id, std::nullopt, 7);
  EXPECT_EQ(a["response"], b["response"]);
  EXPECT_EQ(a["chosen_candidate"], b["chosen_candidate"]);

  gc::Session t = svc.create_session(kPersona);
  json c = svc.post_message(t.id, "do you like the beach?", 7);
  EXPECT_EQ(a["response"], c["response"]);
  EXPECT_EQ(svc.get(s.id).transcript.size(), 2u);

  const std::size_t idx = a["chosen_candidate"]["index"];
  if (a["chosen_candidate"]["type"] != "null")
    EXPECT_EQ(a["provenance"]["sentence_id"], a["chosen_candidate"]["source_id"]) << idx;
  EXPECT_THROW(svc.post_message(s.id, "   "), gc::ValidationError);
}

TEST(Service, RegenerateNeedsABotTurn) {
  auto svc = make_service();
  gc::Session s = svc.create_session(kPersona);
  EXPECT_THROW(svc.regenerate(s.id), gc::ConflictError);
  EXPECT_EQ(gc::http_status(gc::ConflictError("x").kind()), 409);
  svc.post_message(s.id, "hello", 1);
  EXPECT_THROW(svc.regenerate(s.id, std::size_t{139}), gc::ValidationError);
}

TEST(Service, ForcedNullHasNoProvenance) {
  auto svc = make_service();
  gc::Session s = svc.create_session(kPersona);
  svc.post_message(s.id, "hello", 3);
  json r = svc.regenerate(s.id, std::size_t{138}, 3);
  EXPECT_TRUE(r["forced"].get<bool>());
  EXPECT_EQ(r["chosen_candidate"]["type"], "null");
  EXPECT_TRUE(r["provenance"].is_null());
  json g = svc.grounding(s.id, 3);
  EXPECT_EQ(g["prior_topk"].size(), 3u);
  EXPECT_EQ(g["chosen_index"], 138);
  EXPECT_TRUE(g["forced"].get<bool>());
  EXPECT_GE(g["prior_topk"][0]["prob"].get<double>(), g["prior_topk"][1]["prob"].get<double>());
}

TEST(Service, PersonaEditsReportDiffs) {
  auto svc = make_service();
  gc::Session s = svc.create_session(kPersona);

  gc::PersonaOp add;
  add.sentence = "I have two dogs.";
  gc::EditStats st = svc.edit_persona(s.id, {add});
  EXPECT_EQ(st.candidates_before, 139u);
  EXPECT_EQ(st.candidates_after, 185u);
  EXPECT_EQ(st.added, 46u);
  EXPECT_EQ(st.removed, 0u);

  gc::PersonaOp swap;
  swap.kind = gc::PersonaOp::Replace;
  swap.target_text = "my favorite color is red.";
  swap.sentence = "My favorite color is green.";
  st = svc.edit_persona(s.id, {swap});
  EXPECT_EQ(st.candidates_after, 185u);
  EXPECT_EQ(st.added, 46u);
  EXPECT_EQ(st.removed, 46u);
  gc::Session after = svc.get(s.id);
  EXPECT_EQ(after.persona.sentences[1].text, "My favorite color is green.");
  EXPECT_NE(after.persona.sentences[1].id, s.persona.sentences[1].id);

  gc::PersonaOp same = swap;
  same.target_text = "My favorite color is green.";
  st = svc.edit_persona(s.id, {same});
  EXPECT_EQ(st.added, 0u);
  EXPECT_EQ(st.removed, 0u);

  gc::PersonaOp rm;
  rm.kind = gc::PersonaOp::Remove;
  rm.sentence_id = "nope";
  EXPECT_THROW(svc.edit_persona(s.id, {rm}), gc::ValidationError);
  gc::Session one = svc.create_session({"i like tea"});
  rm.sentence_id = one.persona.sentences[0].id;
  EXPECT_THROW(svc.edit_persona(one.id, {rm}), gc::ValidationError);
}

TEST(Service, SessionsPersistInTheStore) {
  gc_test::TempDir dir("store");
  const std::string path = dir.file("sessions.db");
  std::string id;
  {
    auto svc = make_service(std::make_shared<gc::SessionStore>(path));
    id = svc.create_session(kPersona).id;
    svc.post_message(id, "hello", 2);
  }
  auto svc = make_service(std::make_shared<gc::SessionStore>(path));
  gc::Session s = svc.get(id);
  EXPECT_EQ(s.transcript.size(), 2u);
  EXPECT_EQ(s.candidates.size(), 139u);
  EXPECT_NO_THROW(svc.grounding(id));
  EXPECT_THROW(svc.get("missing"), gc::NotFoundError);
}

TEST(Http, EndpointsAndStatusCodes) {
  auto store = std::make_shared<gc::SessionStore>(":memory:");
  auto svc = make_service(store);
  httplib::Server server;
  gc::install_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto created = cli.Post("/sessions", json{{"persona", kPersona}}.dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  json s = json::parse(created->body);
  const std::string id = s["id"];
  EXPECT_EQ(s["candidate_count"], 139);
  EXPECT_EQ(s["candidates"].size(), 139u);

  auto conflict = cli.Post("/sessions/" + id + "/regenerate", "{}", "application/json");
  EXPECT_EQ(conflict->status, 409);
  EXPECT_EQ(json::parse(conflict->body)["error"]["kind"], "conflict");

  httplib::Headers seed{{"X-Seed", "11"}};
  auto msg = cli.Post("/sessions/" + id + "/message", seed, json{{"text", "hi there"}}.dump(),
                      "application/json");
  ASSERT_EQ(msg->status, 200);
  json m = json::parse(msg->body);
  EXPECT_EQ(m["seed"], 11);

  auto regen = cli.Post("/sessions/" + id + "/regenerate",
                        json{{"forced_index", 0}, {"seed", 4}}.dump(), "application/json");
  ASSERT_EQ(regen->status, 200);
  EXPECT_EQ(json::parse(regen->body)["chosen_candidate"]["index"], 0);

  auto ground = cli.Get("/sessions/" + id + "/grounding?k=2");
  ASSERT_EQ(ground->status, 200);
  EXPECT_EQ(json::parse(ground->body)["prior_topk"].size(), 2u);

  json ops = {{"ops", {{{"op", "add"}, {"sentence", "I have two dogs."}}}}};
  auto edit = cli.Put("/sessions/" + id + "/persona", ops.dump(), "application/json");
  ASSERT_EQ(edit->status, 200);
  EXPECT_EQ(json::parse(edit->body)["diff"]["added"], 46);

  auto got = cli.Get("/sessions/" + id);
  ASSERT_EQ(got->status, 200);
  EXPECT_EQ(json::parse(got->body)["transcript"].size(), 2u);

  EXPECT_EQ(cli.Get("/sessions/unknown")->status, 404);
  EXPECT_EQ(cli.Post("/sessions", "{oops", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions", json{{"persona", json::array()}}.dump(), "application/json")->status,
            400);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/regenerate", json{{"forced_index", -1}}.dump(),
                     "application/json")
                ->status,
            400);

  server.stop();
  th.join();
}
