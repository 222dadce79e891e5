#include <doctest.h>

#include <stdexcept>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mifuse/teachers.hpp"

using namespace mifuse;
using nlohmann::json;

namespace {

// In-process provider stub implementing the documented wire protocol.
class StubServer {
 public:
  explicit StubServer(std::string expected_token = "") {
    server_.Post("/v1/predict", [this, expected_token](
                                    const httplib::Request& req,
                                    httplib::Response& res) {
      ++requests_;
      if (!expected_token.empty() &&
          req.get_header_value("Authorization") !=
              "Bearer " + expected_token) {
        res.status = 401;
        return;
      }
      if (fail_next_ > 0) {
        --fail_next_;
        res.status = 500;
        return;
      }
      json body = json::parse(req.body);
      last_body_ = body;
      const auto classes = body.at("classes").get<std::vector<std::string>>();
      if (garbage_mode_) {
        res.set_content("not json at all", "text/plain");
        return;
      }
      // Deterministic reply: mass proportional to 1 + position + index.
      json probs = json::object();
      const int idx = body.at("sample_index").get<int>();
      double total = 0;
      for (std::size_t i = 0; i < classes.size(); ++i)
        total += 1.0 + static_cast<double>(i) + std::abs(idx);
      for (std::size_t i = 0; i < classes.size(); ++i)
        probs[classes[i]] = (1.0 + static_cast<double>(i) + std::abs(idx)) / total;
      res.set_content(json{{"probs", probs}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  int port() const { return port_; }
  int requests() const { return requests_.load(); }
  void fail_next(int n) { fail_next_ = n; }
  void set_garbage_mode(bool on) { garbage_mode_ = on; }
  json last_body() const { return last_body_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  std::atomic<int> fail_next_{0};
  std::atomic<bool> garbage_mode_{false};
  json last_body_;
};

HttpProvider::Options fast_options(const StubServer& server,
                                   std::string token = "") {
  HttpProvider::Options opt;
  opt.host = "127.0.0.1";
  opt.port = server.port();
  opt.auth_token = std::move(token);
  opt.max_retries = 3;
  opt.backoff_initial_ms = 10;  // keep tests quick
  return opt;
}

}  // namespace

TEST_CASE("HTTP provider round-trips the wire protocol") {
  StubServer server;
  HttpProvider provider(fast_options(server));
  const std::vector<std::string> classes = {"happy", "sad", "angry"};
  auto dist = provider.sample("utt-1", classes, 0.6, 2);
  // Expected from the stub: weights (3, 4, 5) / 12.
  CHECK(dist[0] == doctest::Approx(3.0 / 12.0).epsilon(1e-12));
  CHECK(dist[1] == doctest::Approx(4.0 / 12.0).epsilon(1e-12));
  CHECK(dist[2] == doctest::Approx(5.0 / 12.0).epsilon(1e-12));

  auto body = server.last_body();
  CHECK(body.at("utterance_id") == "utt-1");
  CHECK(body.at("temperature").get<double>() == doctest::Approx(0.6));
  CHECK(body.at("sample_index") == 2);
  CHECK(body.at("classes").get<std::vector<std::string>>() == classes);
}

TEST_CASE("bearer token is attached when configured") {
  StubServer server("sekrit");
  HttpProvider good(fast_options(server, "sekrit"));
  CHECK_NOTHROW(good.sample("u", {"a", "b"}, 0.6, 0));

  HttpProvider bad(fast_options(server, "wrong"));
  CHECK_THROWS_AS(bad.sample("u", {"a", "b"}, 0.6, 0), ProviderError);
}

TEST_CASE("transient failures are retried with backoff") {
  StubServer server;
  HttpProvider provider(fast_options(server));
  server.fail_next(2);
  auto dist = provider.sample("u", {"a", "b"}, 0.6, 0);
  CHECK(dist.size() == 2);
  CHECK(server.requests() == 3);  // two 500s then success
}

TEST_CASE("exhausted retries raise a provider error") {
  StubServer server;
  auto opt = fast_options(server);
  opt.max_retries = 2;
  HttpProvider provider(opt);
  server.fail_next(100);
  CHECK_THROWS_AS(provider.sample("u", {"a", "b"}, 0.6, 0), ProviderError);
  CHECK(server.requests() == 3);  // initial attempt + 2 retries
}

TEST_CASE("unreachable host raises a provider error") {
  HttpProvider::Options opt;
  opt.host = "127.0.0.1";
  opt.port = 1;  // nothing listens here
  opt.max_retries = 1;
  opt.backoff_initial_ms = 10;
  HttpProvider provider(opt);
  CHECK_THROWS_AS(provider.sample("u", {"a", "b"}, 0.6, 0), ProviderError);
}

TEST_CASE("unparseable payloads degrade to uniform and are counted") {
  StubServer server;
  HttpProvider provider(fast_options(server));
  server.set_garbage_mode(true);
  auto dist = provider.sample("u", {"a", "b", "c", "d"}, 0.6, 0);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(dist[i] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(provider.parse_failures() == 1);
}

TEST_CASE("cache-first predict issues no second-pass requests") {
  StubServer server;
  HttpProvider provider(fast_options(server));
  TeacherCache cache;
  const std::vector<std::string> classes = {"a", "b"};
  auto first = lalm_predict(provider, cache, "u1", classes, 5, 0.6);
  const int after_first = server.requests();
  CHECK(after_first == 5);
  auto second = lalm_predict(provider, cache, "u1", classes, 5, 0.6);
  CHECK(server.requests() == after_first);
  CHECK(first.mean.probs() == second.mean.probs());
}
