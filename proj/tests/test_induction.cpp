#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "fixtures.hpp"
#include "forested/induction.hpp"
#include "forested/profiler.hpp"
#include "forested/table.hpp"

using namespace forested;

namespace {

std::string valid_response(const std::vector<std::size_t>& rows = {0, 3}) {
  const auto t = fixture::hospital_rows();
  return induction_output_to_json(fixture::walk_labels(fixture::hospital_tree(), t, rows)).dump();
}

ValidationContext context(const std::vector<std::size_t>& rows = {0, 3}) {
  ValidationContext ctx;
  const auto t = fixture::hospital_rows();
  for (const auto& a : t.attributes()) ctx.columns.push_back(a.name);
  ctx.sampled_rows = rows;
  return ctx;
}

std::vector<std::string> codes(const ValidationReport& r) {
  std::vector<std::string> out;
  for (const auto& v : r.violations) out.push_back(v.code);
  return out;
}

bool has_code(const ValidationReport& r, const std::string& code) {
  const auto c = codes(r);
  return std::find(c.begin(), c.end(), code) != c.end();
}

nlohmann::json mutable_response() { return nlohmann::json::parse(valid_response()); }

}  // namespace

TEST(Validation, AcceptsWellFormedOutput) {
  const auto r = check_output("```json\n" + valid_response() + "\n```", context());
  ASSERT_TRUE(r.ok()) << r.summary();
  EXPECT_EQ(r.output->tree_structure.size(), 9u);
  EXPECT_EQ(r.output->labels.size(), 10u);
  EXPECT_EQ(tree_depth(r.output->tree_structure), 5u);
}

TEST(Validation, RejectsBrokenJson) {
  EXPECT_TRUE(has_code(check_output("not json at all"), "invalid_json"));
  EXPECT_TRUE(has_code(check_output("{\"labels\": []}"), "missing_field"));
  EXPECT_THROW(validate_output("{}"), ValidationError);
}

TEST(Validation, StructuralViolations) {
  auto j = mutable_response();
  j["tree_structure"][2]["false_child"] = "nowhere";
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "unknown_child"));

  j = mutable_response();
  j["tree_structure"].push_back(j["tree_structure"][0]);
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "duplicate_node_id"));

  j = mutable_response();
  j["tree_structure"][0]["code"] = "value ==";
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "rule_parse_error"));

  j = mutable_response();
  j["tree_structure"][0]["type"] = "oracle";
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "unknown_node_type"));

  j = mutable_response();
  j["tree_structure"][1]["type"] = "rule";
  j["tree_structure"][1]["code"] = "false";
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "no_gnn_node"));
}

TEST(Validation, DepthBounds) {
  ValidationContext ctx = context();
  ctx.max_depth = 4;
  EXPECT_TRUE(has_code(check_output(valid_response(), ctx), "depth_out_of_bounds"));
  ctx.max_depth = 8;
  ctx.min_depth = 6;
  EXPECT_TRUE(has_code(check_output(valid_response(), ctx), "depth_out_of_bounds"));
}

TEST(Validation, LabelViolations) {
  auto j = mutable_response();
  j["labels"][0]["is_error"] = !j["labels"][0]["is_error"].get<bool>();
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "label_leaf_mismatch"));

  j = mutable_response();
  j["labels"][0]["path"][0]["branch"] = 1 - j["labels"][0]["path"][0]["branch"].get<int>();
  EXPECT_FALSE(check_output(j.dump(), context()).ok());

  j = mutable_response();
  j["labels"][0]["column"] = "Nope";
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "unknown_column"));

  j = mutable_response();
  j["labels"].erase(j["labels"].begin());
  EXPECT_TRUE(has_code(check_output(j.dump(), context()), "missing_label"));

  EXPECT_TRUE(has_code(check_output(valid_response({0, 3, 4}), context()), "unexpected_label_row"));
}

TEST(Prompt, CarriesProfileAndRows) {
  const auto t = fixture::hospital_rows();
  const auto p = build_prompt(profile(t), t, {3, 1}, PromptConfig{4, 8});
  const auto text = p.render();
  EXPECT_NE(text.find("birminxham"), std::string::npos);
  EXPECT_NE(text.find("PhoneNumber"), std::string::npos);
  EXPECT_NE(text.find("tree_structure"), std::string::npos);
  EXPECT_EQ(sample_rows_from_prompt(text), (std::vector<std::size_t>{3, 1}));
}

TEST(Prompt, KeyIsStable) {
  const auto t = fixture::hospital_rows();
  const auto a = prompt_messages(build_prompt(profile(t), t, {0, 1}));
  const auto b = prompt_messages(build_prompt(profile(t), t, {0, 1}));
  const auto c = prompt_messages(build_prompt(profile(t), t, {0, 2}));
  EXPECT_EQ(prompt_key(a), prompt_key(b));
  EXPECT_NE(prompt_key(a), prompt_key(c));
  EXPECT_EQ(prompt_key(a).size(), 64u);
}

TEST(Induce, RetriesWithValidatorFeedback) {
  const auto t = fixture::hospital_rows();
  const auto prompt = build_prompt(profile(t), t, {0, 3});
  ScriptedProvider provider;
  provider.push("{not json");
  provider.push(valid_response());
  const auto r = induce(prompt, provider, {}, 3, context());
  EXPECT_EQ(r.attempts, 2u);
  ASSERT_EQ(provider.calls(), 2u);
  const auto second = provider.history()[1];
  EXPECT_EQ(second.size(), prompt_messages(prompt).size() + 2);
  EXPECT_NE(second.back().content.find("invalid_json"), std::string::npos);
}

TEST(Induce, GivesUpAfterRetries) {
  const auto t = fixture::hospital_rows();
  ScriptedProvider provider;
  provider.push("[]");
  provider.repeat_last(true);
  try {
    induce(build_prompt(profile(t), t, {0, 3}), provider, {}, 2, context());
    FAIL();
  } catch (const InductionFailure& e) {
    EXPECT_EQ(e.attempts().size(), 3u);
  }
  EXPECT_EQ(provider.calls(), 3u);
}

TEST(Induce, TimeoutIsNotRetried) {
  const auto t = fixture::hospital_rows();
  ScriptedProvider provider;
  provider.push_timeout();
  provider.push(valid_response());
  EXPECT_THROW(induce(build_prompt(profile(t), t, {0, 3}), provider, {}, 3, context()), ProviderTimeout);
  EXPECT_EQ(provider.calls(), 1u);
}

TEST(FixtureProvider, ReplaysByPromptKey) {
  const auto dir = std::filesystem::temp_directory_path() / "forested_fixture_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto t = fixture::hospital_rows();
  const auto messages = prompt_messages(build_prompt(profile(t), t, {0, 3}));
  nlohmann::json j;
  j["response"] = "hello";
  write_file(dir / (prompt_key(messages) + ".json"), j.dump());
  FixtureProvider provider(dir);
  EXPECT_EQ(provider.complete(messages, {}), "hello");
  EXPECT_THROW(provider.complete({{"user", "other"}}, {}), ProviderError);
  std::filesystem::remove_all(dir);
}

TEST(HttpProvider, RequestBody) {
  CompletionParams params;
  params.model = "m1";
  params.temperature = 1.0;
  const auto body = HttpProvider::request_body({{"system", "s"}, {"user", "u"}}, params);
  EXPECT_EQ(body["model"], "m1");
  EXPECT_EQ(body["temperature"], 1.0);
  ASSERT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][1]["role"], "user");
}

TEST(HttpProvider, TalksToChatCompletionsEndpoint) {
  httplib::Server server;
  std::string auth, path;
  server.Post(R"(/v1/chat/completions)", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    path = req.path;
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json reply;
    reply["choices"] = {{{"message", {{"role", "assistant"}, {"content", "echo:" + body["model"].get<std::string>()}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/slow/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content("{}", "application/json");
  });
  server.Post("/bad/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  CompletionParams params;
  params.model = "m2";
  HttpProvider ok(base + "/v1", "secret");
  EXPECT_EQ(ok.complete({{"user", "hi"}}, params), "echo:m2");
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(path, "/v1/chat/completions");

  params.timeout = std::chrono::milliseconds(200);
  HttpProvider slow(base + "/slow", "k");
  EXPECT_THROW(slow.complete({{"user", "hi"}}, params), ProviderTimeout);
  HttpProvider bad(base + "/bad", "k");
  EXPECT_THROW(bad.complete({{"user", "hi"}}, params), ProviderError);
  EXPECT_THROW(HttpProvider("no-scheme", "k"), std::invalid_argument);

  server.stop();
  th.join();
}
