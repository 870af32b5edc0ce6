#include <catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "invuq/providers/cache.hpp"
#include "invuq/providers/clean.hpp"
#include "invuq/providers/http.hpp"
#include "invuq/providers/judge.hpp"
#include "invuq/providers/stubs.hpp"

using namespace invuq;
using namespace invuq::providers;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("invuq_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

GenerationRequest request(std::string item, std::string question, double temp = 1.0, int rep = 0) {
  GenerationRequest r;
  r.item_id = std::move(item);
  r.question = question;
  r.prompt = question + " Answer concisely and return only the name.";
  r.temperature = temp;
  r.replicate = rep;
  return r;
}

class FlakyGenerator : public Generator {
 public:
  explicit FlakyGenerator(int failures, ErrorKind kind = ErrorKind::ProviderUnavailable)
      : failures_(failures), kind_(kind) {}
  std::string generate(const GenerationRequest&) override {
    ++calls;
    if (calls <= failures_) throw Error(kind_, "flaky");
    return "ok";
  }
  std::string model() const override { return "flaky"; }
  int calls = 0;

 private:
  int failures_;
  ErrorKind kind_;
};

RetryPolicy no_sleep(int retries) {
  RetryPolicy p;
  p.retries = retries;
  p.sleep = nullptr;
  return p;
}

}  // namespace

TEST_CASE("clean_response examples", "[providers]") {
  const std::string q = "What is the capital of France?";
  CHECK(clean_response("What is the capital of France?\nParis [/INST]#\nIt is a major European city", q) == "Paris");
  CHECK(clean_response("Paris", q) == "Paris");
  CHECK(clean_response("\n\n  Rome  \n", q) == "Rome");
  CHECK(clean_response("[INST] ignored\n# heading\n  Lyon", q) == "Lyon");
  CHECK(clean_response(q + " " + q + " Paris", q) == "Paris");
  CHECK(clean_response(q, q).empty());
  CHECK(clean_response("", q).empty());
}

TEST_CASE("clean_response is idempotent", "[providers][property]") {
  const std::vector<std::string> pieces{"Q?", " ", "\n", "Paris", "[INST]", "[/INST]", "#", "  ", "Rome", "Q?"};
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1), len(0, 8);
  for (int t = 0; t < 2000; ++t) {
    std::string raw;
    for (std::size_t k = len(rng); k > 0; --k) raw += pieces[pick(rng)];
    const auto once = clean_response(raw, "Q?");
    REQUIRE(clean_response(once, "Q?") == once);
    REQUIRE(once.find('\n') == std::string::npos);
  }
}

TEST_CASE("fingerprints separate replicates and temperatures", "[providers]") {
  const auto a = request("i", "Q", 0.7, 0);
  CHECK(fingerprint(a) == fingerprint(request("other-item", "Q", 0.7, 0)));
  CHECK(fingerprint(a) != fingerprint(request("i", "Q", 0.7, 1)));
  CHECK(fingerprint(a) != fingerprint(request("i", "Q", 0.70000001, 0)));
  auto b = a;
  b.seed = 5;
  CHECK(fingerprint(a) != fingerprint(b));
  b = a;
  b.model = "m2";
  CHECK(fingerprint(a) != fingerprint(b));
  CHECK(fingerprint(a).size() == 32);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
}

TEST_CASE("stub generators", "[providers]") {
  CannedMapGenerator canned(std::map<std::string, std::string>{{"Q1", "Paris"}});
  CHECK(canned.generate(request("Q1", "anything")) == "Paris");
  CHECK(canned.generate(request("zz", "Q1")) == "Paris");
  CHECK_THROWS_AS(canned.generate(request("zz", "zz")), Error);

  RouletteGenerator r1({"A", "B"}, 7), r2({"A", "B"}, 7), r3({"A", "B"}, 8);
  std::vector<std::string> s1, s2, s3;
  int a_count = 0;
  for (int k = 0; k < 2000; ++k) {
    const auto req = request("q", "Q", 1.0, k);
    s1.push_back(r1.generate(req));
    s2.push_back(r2.generate(req));
    s3.push_back(r3.generate(req));
    a_count += s1.back() == "A";
  }
  CHECK(s1 == s2);
  CHECK(s1 != s3);
  CHECK(std::abs(a_count / 2000.0 - 0.5) < 0.05);

  RouletteGenerator per_item({}, 1, {{"x", {"only"}}});
  CHECK(per_item.generate(request("x", "Q")) == "only");
  CHECK_THROWS_AS(per_item.generate(request("y", "Q")), Error);

  EchoGenerator echo;
  CHECK(echo.generate(request("x", "Q")) == "Q Answer concisely and return only the name.");
}

TEST_CASE("stub embedders", "[providers]") {
  HashBucketEmbedder h;
  const auto v = h.embed({"alpha", "beta", "alpha"});
  CHECK(v[0] == v[2]);
  CHECK(v[0].norm() == 1.0);
  CHECK(v[0].values().dot(v[1].values()) == 0.0);
  CHECK(cosine_affinity(v[0], v[1]) == 0.5);
  CHECK_THROWS_AS(h.embed({""}), Error);

  BagOfWordsEmbedder b;
  const auto w = b.embed({"the red car", "The red car!", "blue sky"});
  CHECK(cosine_affinity(w[0], w[1]) > 0.9);
  CHECK(cosine_affinity(w[0], w[2]) < cosine_affinity(w[0], w[1]));
}

TEST_CASE("caching embedder deduplicates and checks dimensions", "[providers]") {
  HashBucketEmbedder h(128);
  CachingEmbedder c(h);
  const auto v = c.embed({"x", "y", "x", "x"});
  CHECK(v.size() == 4);
  CHECK(v[0] == v[2]);
  CHECK(c.upstream_calls() == 1);
  CHECK(c.embedded_texts() == 2);
  c.embed({"x", "y"});
  CHECK(c.upstream_calls() == 1);
  CHECK_THROWS_AS(c.embed({"ok", ""}), Error);
  CHECK_THROWS_AS(c.embed({}), Error);

  struct Ragged : Embedder {
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& t) override {
      std::vector<EmbeddingVector> out;
      for (std::size_t k = 0; k < t.size(); ++k) out.push_back(k == 0 ? EmbeddingVector{1.0, 0.0} : EmbeddingVector{1.0});
      return out;
    }
    std::string model() const override { return "ragged"; }
  } ragged;
  CachingEmbedder bad(ragged);
  try {
    bad.embed({"a", "b"});
    FAIL("expected provider-contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ProviderContract);
  }

  HashBucketEmbedder small(16);
  CachingEmbedder batched(small, nullptr, 3);
  batched.embed({"a", "b", "c", "d", "e", "f", "g"});
  CHECK(batched.upstream_calls() == 3);
}

TEST_CASE("embedding codec round-trips dense and sparse vectors", "[providers]") {
  CHECK(util::base64_encode("Man", 3) == "TWFu");
  CHECK(util::base64_encode("Ma", 2) == "TWE=");
  const auto bytes = util::base64_decode("TWE=");
  CHECK(std::string(bytes.begin(), bytes.end()) == "Ma");
  CHECK_THROWS_AS(util::base64_decode("TWE"), Error);

  const EmbeddingVector dense{0.1, -2.5, 1e-300, 3.0};
  const auto jd = encode_embedding(dense);
  CHECK_FALSE(jd.contains("index"));
  CHECK(decode_embedding(jd) == dense);

  Eigen::VectorXd s = Eigen::VectorXd::Zero(1000);
  s[17] = 0.25;
  s[999] = -1.0;
  const EmbeddingVector sparse(s);
  const auto js = encode_embedding(sparse);
  CHECK(js.at("index").size() == 2);
  CHECK(decode_embedding(js) == sparse);
}

TEST_CASE("response cache round-trips and survives reopening", "[providers]") {
  const auto dir = scratch_dir("cache");
  const auto req = request("i", "What?", 0.3, 2);
  CachedResponse r{fingerprint(req), "What?\nParis #x", "Paris", false, "2026-01-01T00:00:00Z"};
  {
    ResponseCache cache(dir);
    CHECK_FALSE(cache.get(r.fingerprint));
    cache.put(r, req);
    const auto got = cache.get(r.fingerprint);
    REQUIRE(got);
    CHECK(got->raw == r.raw);
    CHECK(got->cleaned == r.cleaned);
    cache.put_embedding("k1", "m", EmbeddingVector{1.0, 2.0});
  }
  // A torn write at the end of a shard is skipped.
  {
    std::ofstream out(dir / "gen" / "zz.jsonl", std::ios::app);
    out << "{\"fingerprint\": \"trunc";
  }
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  ResponseCache reopened(dir);
  set_warning_sink(nullptr);
  CHECK(warnings.size() == 1);
  const auto got = reopened.get(r.fingerprint);
  REQUIRE(got);
  CHECK(got->raw == r.raw);
  CHECK(got->cleaned == r.cleaned);
  CHECK(reopened.get_embedding("k1").value() == EmbeddingVector{1.0, 2.0});
  CHECK(fs::exists(dir / "gen" / (r.fingerprint.substr(0, 2) + ".jsonl")));
  fs::remove_all(dir);
}

TEST_CASE("caching generator serves repeats from the cache", "[providers]") {
  const auto dir = scratch_dir("cachegen");
  CannedMapGenerator canned(std::map<std::string, std::string>{{"i", "What?\nParis"}});
  {
    ResponseCache cache(dir);
    CachingGenerator gen(canned, &cache);
    const auto a = gen.generate(request("i", "What?", 0.0));
    const auto b = gen.generate(request("i", "What?", 0.0));
    CHECK(a.cleaned == "Paris");
    CHECK(b.raw == a.raw);
    CHECK(gen.upstream_calls() == 1);
    CHECK(gen.cache_hits() == 1);
    gen.generate(request("i", "What?", 0.0, 1));
    CHECK(gen.upstream_calls() == 2);
  }
  ResponseCache cache(dir);
  CachingGenerator again(canned, &cache);
  again.generate(request("i", "What?", 0.0));
  again.generate(request("i", "What?", 0.0, 1));
  CHECK(again.upstream_calls() == 0);
  fs::remove_all(dir);
}

TEST_CASE("retries with backoff", "[providers]") {
  std::vector<double> sleeps;
  RetryPolicy policy;
  policy.retries = 3;
  policy.base_delay = 0.5;
  policy.max_delay = 1.5;
  policy.sleep = [&](double s) { sleeps.push_back(s); };

  FlakyGenerator two(2);
  CachingGenerator gen(two, nullptr, policy);
  CHECK(gen.generate(request("i", "Q")).raw == "ok");
  CHECK(two.calls == 3);
  CHECK(sleeps == std::vector<double>{0.5, 1.0});

  sleeps.clear();
  FlakyGenerator always(100);
  CachingGenerator dead(always, nullptr, policy);
  const auto fp = fingerprint([] {
    auto r = request("i", "Q");
    r.model = "flaky";
    return r;
  }());
  try {
    dead.generate(request("i", "Q"));
    FAIL("expected provider-unavailable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ProviderUnavailable);
    CHECK(std::string(e.what()).find(fp) != std::string::npos);
  }
  CHECK(always.calls == 4);
  CHECK(sleeps == std::vector<double>{0.5, 1.0, 1.5});

  FlakyGenerator config_error(5, ErrorKind::Config);
  CachingGenerator no_retry(config_error, nullptr, no_sleep(3));
  CHECK_THROWS_AS(no_retry.generate(request("i", "Q")), Error);
  CHECK(config_error.calls == 1);
}

TEST_CASE("judging correctness", "[providers]") {
  JudgeContext exact;
  CHECK(judge_correctness("Q", "bras", "bras", exact));
  CHECK_FALSE(judge_correctness("Q", "bras", "stockings", exact));
  CHECK(judge_correctness("Q", "The Beatles", "  the beatles. ", exact));

  CannedMapGenerator yes({}, "Yes");
  CachingGenerator yes_gen(yes, nullptr);
  JudgeContext llm{JudgeMode::Llm, &yes_gen, nullptr, "judge-model", "i"};
  CHECK(judge_correctness("Q", "a", "b", llm));

  CannedMapGenerator no({}, "No, they differ.");
  CachingGenerator no_gen(no, nullptr);
  llm.generator = &no_gen;
  CHECK_FALSE(judge_correctness("Q", "a", "b", llm));

  CannedMapGenerator maybe({}, "Maybe");
  CachingGenerator maybe_gen(maybe, nullptr);
  llm.generator = &maybe_gen;
  try {
    judge_correctness("Q", "a", "b", llm);
    FAIL("expected unjudgeable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unjudgeable);
  }
  CHECK(maybe_gen.upstream_calls() == 2);
  CHECK(parse_verdict("  YES!") == Verdict::Yes);
  CHECK(parse_verdict("no") == Verdict::No);
  CHECK(parse_verdict("Yesterday") == Verdict::Unclear);
}

TEST_CASE("OpenAI-compatible clients against a local server", "[providers][http]") {
  httplib::Server server;
  std::atomic<int> chat_calls{0}, embed_calls{0}, fail_next{0};
  std::vector<double> temperatures;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++chat_calls;
    if (fail_next > 0) {
      --fail_next;
      res.status = 503;
      return;
    }
    const auto body = json::parse(req.body);
    if (body.at("model") == "forbidden") {
      res.status = 401;
      res.set_content("{\"error\":\"no\"}", "application/json");
      return;
    }
    {
      std::lock_guard lock(mu);
      temperatures.push_back(body.at("temperature").get<double>());
    }
    const std::string prompt = body.at("messages").at(0).at("content");
    json reply{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", prompt + "\nParis"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    ++embed_calls;
    const auto body = json::parse(req.body);
    json data = json::array();
    const auto& input = body.at("input");
    for (std::size_t k = input.size(); k-- > 0;) {
      const double len = static_cast<double>(input[k].get<std::string>().size());
      data.push_back({{"index", k}, {"embedding", {1.0, len}}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  Endpoint ep;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  ep.api_key_env = "";
  ep.model = "test-model";
  ep.timeout_seconds = 5;

  const auto dir = scratch_dir("http");
  {
    OpenAIChatGenerator live(ep);
    std::vector<double> wire_temps;
    live.observe([&](const std::string& path, const json& body) {
      CHECK(path == "/v1/chat/completions");
      wire_temps.push_back(body.at("temperature").get<double>());
    });
    ResponseCache cache(dir);
    CachingGenerator gen(live, &cache, no_sleep(2));
    auto req = request("i", "What is the capital of France?", 0.7);
    CHECK(gen.generate(req).cleaned == "Paris");
    CHECK(gen.generate(req).cleaned == "Paris");
    CHECK(chat_calls == 1);
    CHECK(wire_temps == std::vector<double>{0.7});

    fail_next = 2;
    req.replicate = 1;
    CHECK(gen.generate(req).cleaned == "Paris");
    CHECK(chat_calls == 4);
    CHECK(temperatures.back() == 0.7);
  }
  {
    OpenAIChatGenerator live(ep);
    ResponseCache cache(dir);
    CachingGenerator gen(live, &cache, no_sleep(2));
    const int before = chat_calls;
    auto req = request("i", "What is the capital of France?", 0.7);
    gen.generate(req);
    req.replicate = 1;
    gen.generate(req);
    CHECK(chat_calls == before);
    CHECK(gen.upstream_calls() == 0);
  }
  {
    Endpoint bad = ep;
    bad.model = "forbidden";
    OpenAIChatGenerator live(bad);
    CachingGenerator gen(live, nullptr, no_sleep(3));
    const int before = chat_calls;
    try {
      gen.generate(request("i", "Q"));
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
    CHECK(chat_calls == before + 1);
  }
  {
    Endpoint emb = ep;
    emb.model = "embed-model";
    OpenAIEmbedder live(emb);
    const auto v = live.embed({"a", "abc"});
    CHECK(v[0] == EmbeddingVector{1.0, 1.0});
    CHECK(v[1] == EmbeddingVector{1.0, 3.0});
    CachingEmbedder cached(live);
    cached.embed({"x", "x", "yy"});
    CHECK(embed_calls == 2);
  }
  {
    Endpoint missing_key = ep;
    missing_key.api_key_env = "INVUQ_TEST_SURELY_UNSET_KEY";
    CHECK_THROWS_AS(OpenAIChatGenerator(missing_key), Error);
  }
  server.stop();
  th.join();
  fs::remove_all(dir);

  Endpoint dead = ep;  // nothing listens here any more
  dead.timeout_seconds = 1;
  OpenAIChatGenerator offline(dead);
  CachingGenerator gen(offline, nullptr, no_sleep(1));
  try {
    gen.generate(request("i", "Q"));
    FAIL("expected provider-unavailable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ProviderUnavailable);
  }
}

TEST_CASE("clean_response strips a full prompt echo", "[providers]") {
  const std::string q = "What is the capital of France?";
  const std::string p = q + " Answer concisely and return only the name.";
  CHECK(clean_response(p + "\nParis", q, p) == "Paris");
  CHECK(clean_response(q + "\nParis", q, p) == "Paris");
  CHECK(clean_response(p + "\nParis", q) == "Answer concisely and return only the name.");
}
