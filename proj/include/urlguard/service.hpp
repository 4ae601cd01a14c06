#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "urlguard/bundle.hpp"
#include "urlguard/error.hpp"
#include "urlguard/predictor.hpp"

// After the model headers: httplib pulls in <resolv.h>, whose `_res` macro
// breaks Eigen's product kernels if it is seen first. The library's default
// listen backlog of 5 drops connections under modest client bursts.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#endif
#include <httplib.h>

namespace urlguard {

inline constexpr std::size_t kMaxPredictBody = 16 * 1024;
inline constexpr std::size_t kMaxBatchItems = 1000;
// Large enough for a full batch of long URLs; /predict applies its own limit.
inline constexpr std::size_t kMaxRequestBody = 4 * 1024 * 1024;

struct ServiceConfig {
  std::optional<double> threshold;         // overrides the bundle threshold
  std::vector<std::string> cors_origins;   // "*" allows any origin
  std::filesystem::path ui_dir;            // served under /ui/ when set
  std::size_t threads = 16;
};

// Outcome of one request, independent of the transport.
struct ServiceReply {
  int status = 200;
  nlohmann::ordered_json body;
};

inline nlohmann::ordered_json error_body(std::string_view code, std::string_view message) {
  nlohmann::ordered_json j;
  j["code"] = code;
  j["message"] = message;
  return j;
}

class Service {
 public:
  explicit Service(ServiceConfig config = {})
      : config_(std::move(config)), started_(std::chrono::steady_clock::now()) {}

  // Swaps the model in one step; requests already running keep the old one.
  void set_bundle(std::shared_ptr<const ModelBundle> bundle) {
    auto next = bundle ? std::make_shared<const Predictor>(std::move(bundle)) : nullptr;
    std::lock_guard lock(mu_);
    predictor_ = std::move(next);
  }

  std::shared_ptr<const Predictor> predictor() const {
    std::lock_guard lock(mu_);
    return predictor_;
  }

  double uptime_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  }

  ServiceReply health() const {
    const auto p = predictor();
    ServiceReply r;
    r.status = p ? 200 : 503;
    r.body["status"] = p ? "ok" : "no_model";
    r.body["model_version"] = p ? nlohmann::ordered_json(p->bundle().model_version)
                                : nlohmann::ordered_json(nullptr);
    r.body["uptime_s"] = uptime_s();
    return r;
  }

  ServiceReply predict(std::string_view body) const {
    if (body.size() > kMaxPredictBody) {
      return {413, error_body("PayloadTooLarge", "request body exceeds 16 KiB")};
    }
    const auto p = predictor();
    if (!p) return {503, error_body("NoModel", "no model bundle is loaded")};
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return {400, error_body("BadJson", "request body is not valid JSON")};
    }
    if (!req.is_object() || !req.contains("url") || !req["url"].is_string()) {
      return {400, error_body("BadRequest", "expected an object with a string field \"url\"")};
    }
    return predict_one(*p, req["url"].get<std::string>());
  }

  // Accepts a JSON array of URLs or {"urls": [...]}.
  ServiceReply predict_batch(std::string_view body) const {
    const auto p = predictor();
    if (!p) return {503, error_body("NoModel", "no model bundle is loaded")};
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return {400, error_body("BadJson", "request body is not valid JSON")};
    }
    if (req.is_object() && req.contains("urls")) req = req["urls"];
    if (!req.is_array()) {
      return {400, error_body("BadRequest", "expected a list of URLs")};
    }
    if (req.empty()) return {400, error_body("BadRequest", "URL list is empty")};
    if (req.size() > kMaxBatchItems) {
      return {400, error_body("BadRequest", "URL list holds more than 1000 items")};
    }
    nlohmann::ordered_json results = nlohmann::ordered_json::array();
    for (const auto& item : req) {
      if (!item.is_string()) {
        results.push_back({{"error", error_body("BadRequest", "item is not a string")}});
        continue;
      }
      ServiceReply one = predict_one(*p, item.get<std::string>());
      if (one.status == 200) {
        results.push_back(std::move(one.body));
      } else {
        results.push_back({{"error", std::move(one.body)}});
      }
    }
    ServiceReply r;
    r.body["results"] = std::move(results);
    return r;
  }

  bool origin_allowed(const std::string& origin) const {
    return std::any_of(config_.cors_origins.begin(), config_.cors_origins.end(),
                       [&](const std::string& o) { return o == "*" || o == origin; });
  }

  // Registers every route on `server`.
  void attach(httplib::Server& server) const {
    server.new_task_queue = [n = config_.threads] { return new httplib::ThreadPool(n); };
    server.set_payload_max_length(kMaxRequestBody);

    auto send = [](httplib::Response& res, const ServiceReply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, health());
    });
    server.Post("/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, predict(req.body));
    });
    server.Post("/predict_batch",
                [this, send](const httplib::Request& req, httplib::Response& res) {
                  send(res, predict_batch(req.body));
                });
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });
    server.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      const std::string origin = req.get_header_value("Origin");
      if (origin.empty() || !origin_allowed(origin)) return;
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Max-Age", "600");
    });
    if (!config_.ui_dir.empty()) {
      if (!server.set_mount_point("/ui", config_.ui_dir.string())) {
        fail(Errc::kIo, "UI directory not found: " + config_.ui_dir.string());
      }
    }
  }

 private:
  ServiceReply predict_one(const Predictor& p, const std::string& url) const {
    try {
      return {200, to_json(p.predict(url, config_.threshold))};
    } catch (const Error& e) {
      return {400, error_body(e.code_name(), e.what())};
    }
  }

  ServiceConfig config_;
  std::chrono::steady_clock::time_point started_;
  mutable std::mutex mu_;
  std::shared_ptr<const Predictor> predictor_;
};

}  // namespace urlguard
