#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <condition_variable>

#include "forested/induction.hpp"

namespace forested {

struct HttpProvider::Gate {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t limit = 1;
  std::size_t in_flight = 0;
};

HttpProvider::HttpProvider(std::string base_url, std::string api_key, std::size_t max_in_flight)
    : api_key_(std::move(api_key)), gate_(std::make_unique<Gate>()) {
  gate_->limit = std::max<std::size_t>(1, max_in_flight);
  while (!base_url.empty() && base_url.back() == '/') base_url.pop_back();
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("base_url needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  scheme_host_port_ = base_url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
  if (path_.size() < 17 || path_.compare(path_.size() - 17, 17, "/chat/completions") != 0) {
    path_ += "/chat/completions";
  }
}

HttpProvider::~HttpProvider() = default;

nlohmann::ordered_json HttpProvider::request_body(const std::vector<ChatMessage>& messages,
                                                  const CompletionParams& params) {
  nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::ordered_json body;
  body["model"] = params.model;
  body["messages"] = std::move(msgs);
  body["temperature"] = params.temperature;
  return body;
}

std::string HttpProvider::complete(const std::vector<ChatMessage>& messages, const CompletionParams& params) {
  {
    std::unique_lock<std::mutex> lock(gate_->mu);
    gate_->cv.wait(lock, [&] { return gate_->in_flight < gate_->limit; });
    ++gate_->in_flight;
  }
  struct Release {
    Gate& g;
    ~Release() {
      std::lock_guard<std::mutex> lock(g.mu);
      --g.in_flight;
      g.cv.notify_one();
    }
  } release{*gate_};

  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(params.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(params.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = client.Post(path_, headers, request_body(messages, params).dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout || err == httplib::Error::Write) {
      throw ProviderTimeout("LLM request timed out (" + httplib::to_string(err) + ")");
    }
    throw ProviderError("LLM request failed: " + httplib::to_string(err));
  }
  if (res->status == 408 || res->status == 504) throw ProviderTimeout("LLM endpoint returned " + std::to_string(res->status));
  if (res->status != 200) {
    throw ProviderError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed chat-completion response: ") + e.what());
  }
}

}  // namespace forested
