#pragma once

#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "invuq/error.hpp"
#include "invuq/providers/provider.hpp"

namespace invuq::providers {

using json = nlohmann::json;

struct Endpoint {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";  // empty: send no key
  std::string model;
  double timeout_seconds = 60.0;
};

/// Splits "http://host:port/v1" into the origin httplib wants and a path prefix.
inline std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorKind::Config, "base_url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

using RequestObserver = std::function<void(const std::string& path, const json& body)>;

/// POSTs JSON and maps failures: no connection, 429 and 5xx are
/// provider-unavailable (retryable); other 4xx are config errors; an
/// unreadable body is a provider-contract error.
class JsonClient {
 public:
  explicit JsonClient(const Endpoint& ep) {
    auto [origin, prefix] = split_base_url(ep.base_url);
    prefix_ = prefix;
    client_ = std::make_unique<httplib::Client>(origin);
    const auto secs = static_cast<time_t>(ep.timeout_seconds);
    const auto usecs = static_cast<time_t>((ep.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client_->set_connection_timeout(secs, usecs);
    client_->set_read_timeout(secs, usecs);
    client_->set_write_timeout(secs, usecs);
    if (!ep.api_key_env.empty()) {
      const char* key = std::getenv(ep.api_key_env.c_str());
      if (!key || !*key) throw Error(ErrorKind::Config, "environment variable " + ep.api_key_env + " is not set");
      client_->set_bearer_token_auth(key);
    }
  }

  void observe(RequestObserver obs) { observer_ = std::move(obs); }

  json post(const std::string& path, const json& body) {
    if (observer_) observer_(prefix_ + path, body);
    httplib::Result res;
    {
      // httplib clients are not safe for concurrent requests.
      std::lock_guard lock(mu_);
      res = client_->Post(prefix_ + path, body.dump(), "application/json");
    }
    if (!res) throw Error(ErrorKind::ProviderUnavailable, "POST " + path + ": " + httplib::to_string(res.error()));
    const int status = res->status;
    if (status == 429 || status >= 500) {
      throw Error(ErrorKind::ProviderUnavailable, "POST " + path + ": HTTP " + std::to_string(status));
    }
    if (status >= 400) {
      throw Error(ErrorKind::Config, "POST " + path + ": HTTP " + std::to_string(status) + ": " + res->body.substr(0, 300));
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ProviderContract, "POST " + path + ": unreadable JSON: " + e.what());
    }
  }

 private:
  std::unique_ptr<httplib::Client> client_;
  std::string prefix_;
  std::mutex mu_;
  RequestObserver observer_;
};

/// Chat-completions generation: one user message, temperature passed through.
class OpenAIChatGenerator : public Generator {
 public:
  explicit OpenAIChatGenerator(Endpoint ep) : ep_(std::move(ep)), client_(ep_) {
    if (ep_.model.empty()) throw Error(ErrorKind::Config, "generation model id is empty");
  }

  void observe(RequestObserver obs) { client_.observe(std::move(obs)); }

  std::string generate(const GenerationRequest& r) override {
    const json body{{"model", r.model.empty() ? ep_.model : r.model},
                    {"messages", json::array({{{"role", "user"}, {"content", r.prompt}}})},
                    {"temperature", r.temperature}};
    const json reply = client_.post("/chat/completions", body);
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      return content.is_null() ? std::string() : content.get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ProviderContract, std::string("chat reply without choices[0].message.content: ") + e.what());
    }
  }
  std::string model() const override { return ep_.model; }

 private:
  Endpoint ep_;
  JsonClient client_;
};

/// Embeddings endpoint; the reply's `index` fields restore input order.
class OpenAIEmbedder : public Embedder {
 public:
  explicit OpenAIEmbedder(Endpoint ep) : ep_(std::move(ep)), client_(ep_) {
    if (ep_.model.empty()) throw Error(ErrorKind::Config, "embedding model id is empty");
  }

  void observe(RequestObserver obs) { client_.observe(std::move(obs)); }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    for (const auto& t : texts) {
      if (t.empty()) throw Error(ErrorKind::InvalidInput, "cannot embed an empty string");
    }
    const json reply = client_.post("/embeddings", json{{"model", ep_.model}, {"input", texts}});
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<bool> seen(texts.size(), false);
    try {
      const auto& data = reply.at("data");
      if (data.size() != texts.size()) throw Error(ErrorKind::ProviderContract, "embedding count differs from input count");
      for (std::size_t k = 0; k < data.size(); ++k) {
        const std::size_t idx = data[k].value("index", k);
        if (idx >= texts.size() || seen[idx]) throw Error(ErrorKind::ProviderContract, "bad embedding index");
        seen[idx] = true;
        out[idx] = EmbeddingVector(std::span<const double>(data[k].at("embedding").get<std::vector<double>>()));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ProviderContract, std::string("malformed embeddings reply: ") + e.what());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::InvalidInput) throw Error(ErrorKind::ProviderContract, e.message());
      throw;
    }
    for (std::size_t k = 1; k < out.size(); ++k) {
      if (out[k].dimension() != out[0].dimension())
        throw Error(ErrorKind::ProviderContract, "embedding dimensions differ within a batch");
    }
    return out;
  }
  std::string model() const override { return ep_.model; }

 private:
  Endpoint ep_;
  JsonClient client_;
};

}  // namespace invuq::providers
