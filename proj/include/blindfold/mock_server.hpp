#pragma once

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "blindfold/errors.hpp"
#include "blindfold/mock_model.hpp"

namespace blindfold {

// Serves the deterministic mock over the chat-completions wire format so the
// full HTTP path can be exercised locally.
class MockServer {
public:
    explicit MockServer(MockModel model, int port = 0)
        : model_(std::move(model)), requested_port_(port) {}

    ~MockServer() { stop(); }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    void start() {
        server_ = std::make_unique<httplib::Server>();
        server_->Post("/v1/chat/completions",
                      [this](const httplib::Request& req, httplib::Response& res) {
                          try {
                              res.set_content(model_.respond(req.body), "application/json");
                          } catch (const std::exception& e) {
                              res.status = 400;
                              res.set_content(std::string("{\"error\":\"") + e.what() + "\"}",
                                              "application/json");
                          }
                      });
        if (requested_port_ > 0) {
            if (!server_->bind_to_port("127.0.0.1", requested_port_)) {
                throw transport_error("mock server: cannot bind port " +
                                      std::to_string(requested_port_));
            }
            port_ = requested_port_;
        } else {
            port_ = server_->bind_to_any_port("127.0.0.1");
            if (port_ <= 0) {
                throw transport_error("mock server: cannot bind any port");
            }
        }
        thread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }

    void stop() {
        if (server_) {
            server_->stop();
        }
        if (thread_.joinable()) {
            thread_.join();
        }
        server_.reset();
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    const MockModel& model() const { return model_; }

private:
    MockModel model_;
    int requested_port_ = 0;
    int port_ = 0;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

} // namespace blindfold
