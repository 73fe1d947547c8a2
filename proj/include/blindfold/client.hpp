#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>

#include "blindfold/errors.hpp"
#include "blindfold/mock_model.hpp"
#include "blindfold/wire.hpp"

namespace blindfold {

// Append-only JSONL store of raw responses keyed by (request digest,
// replicate index). The canonical request text is stored alongside so a
// digest collision is detected rather than silently served.
class ResponseCache {
public:
    ResponseCache() = default; // in-memory only

    explicit ResponseCache(std::filesystem::path file) : path_(std::move(file)) {
        std::ifstream in(path_);
        std::string line;
        while (in.good() && std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const json j = json::parse(line);
            const Key key{j.at("digest").get<std::string>(), j.at("replicate").get<int>()};
            records_[key] = Value{j.at("canonical").get<std::string>(),
                                  j.at("response").get<std::string>()};
        }
    }

    std::optional<std::string> lookup(const std::string& digest, int replicate,
                                      const std::string& canonical) const {
        std::lock_guard lock(mu_);
        const auto it = records_.find({digest, replicate});
        if (it == records_.end()) {
            return std::nullopt;
        }
        if (it->second.canonical != canonical) {
            throw analysis_error("cache digest collision for " + digest);
        }
        return it->second.response;
    }

    void insert(const std::string& digest, int replicate, const std::string& canonical,
                const std::string& response) {
        std::lock_guard lock(mu_);
        const Key key{digest, replicate};
        if (records_.contains(key)) {
            return; // already persisted
        }
        records_[key] = Value{canonical, response};
        if (!path_.empty()) {
            json j;
            j["digest"] = digest;
            j["replicate"] = replicate;
            j["canonical"] = canonical;
            j["response"] = response;
            j["timestamp"] = static_cast<int64_t>(
                std::chrono::duration_cast<std::chrono::seconds>(
                    std::chrono::system_clock::now().time_since_epoch())
                    .count());
            std::ofstream out(path_, std::ios::app);
            if (!out.good()) {
                throw transport_error("cannot append to cache file " + path_.string());
            }
            out << j.dump() << "\n";
        }
    }

    size_t size() const {
        std::lock_guard lock(mu_);
        return records_.size();
    }

private:
    using Key = std::pair<std::string, int>;
    struct Value {
        std::string canonical;
        std::string response;
    };
    mutable std::mutex mu_;
    std::filesystem::path path_;
    std::map<Key, Value> records_;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds base_delay{25};
};

struct ToolRate {
    enum class Method { first_token_probability, sampled };
    double proportion = 0.0;
    Method method = Method::sampled;
    int samples = 0;
};

// Uniform access to one chat-completions endpoint: caching, bounded retries,
// replicate sampling, and tool-call-rate measurement. The transport is a
// plain function so the deterministic mock can stand in for HTTP.
class ModelClient {
public:
    using Transport = std::function<std::string(const std::string& body)>;

    ModelClient(ModelEndpoint endpoint, std::shared_ptr<ResponseCache> cache,
                Transport transport = {}, RetryPolicy retry = {})
        : endpoint_(std::move(endpoint)),
          cache_(std::move(cache)),
          transport_(std::move(transport)),
          retry_(retry) {
        if (!cache_) {
            cache_ = std::make_shared<ResponseCache>();
        }
        if (!transport_) {
            transport_ = http_transport(endpoint_);
        }
        if (endpoint_.flavor == Flavor::system_prompt && endpoint_.top_logprobs_k > 20) {
            throw validation_error(
                "system-prompt endpoints expose at most the top 20 logprobs");
        }
    }

    static Transport http_transport(const ModelEndpoint& endpoint) {
        return [endpoint](const std::string& body) {
            httplib::Client client(endpoint.base_url);
            client.set_connection_timeout(10, 0);
            client.set_read_timeout(120, 0);
            httplib::Headers headers;
            if (!endpoint.auth_env.empty()) {
                if (const char* key = std::getenv(endpoint.auth_env.c_str())) {
                    headers.emplace("Authorization", std::string("Bearer ") + key);
                }
            }
            auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
            if (!res) {
                throw transport_error("transport failure contacting " + endpoint.base_url +
                                      ": " + httplib::to_string(res.error()));
            }
            if (res->status >= 500) {
                throw transport_error("server error " + std::to_string(res->status) +
                                      " from " + endpoint.base_url);
            }
            if (res->status >= 400) {
                throw validation_error("request rejected with status " +
                                       std::to_string(res->status) + " from " +
                                       endpoint.base_url + ": " + res->body);
            }
            return res->body;
        };
    }

    static Transport mock_transport(std::shared_ptr<const MockModel> model) {
        return [model](const std::string& body) { return model->respond(body); };
    }

    const ModelEndpoint& endpoint() const { return endpoint_; }
    void set_offline(bool offline) { offline_ = offline; }
    int network_calls() const { return network_calls_->load(); }
    const ResponseCache& cache() const { return *cache_; }

    // One completion; the raw response is persisted to the cache before the
    // parsed logprobs are returned. Cache hits never touch the transport.
    TokenLogprobs complete(const GenerationRequest& request, int replicate = 0) {
        GenerationRequest req = request;
        req.top_logprobs_k = std::min(req.top_logprobs_k, endpoint_.top_logprobs_k);
        validate_request(req, endpoint_.flavor);
        const std::string canonical = canonical_request(endpoint_.model_name, req);
        const std::string digest = request_digest(canonical);

        if (auto cached = cache_->lookup(digest, replicate, canonical)) {
            return parse_response(json::parse(*cached), endpoint_.model_name);
        }
        if (offline_) {
            throw transport_error("offline replay: no cached response for digest " + digest +
                                  " replicate " + std::to_string(replicate));
        }

        std::string raw;
        for (int attempt = 0;; ++attempt) {
            try {
                network_calls_->fetch_add(1);
                raw = transport_(canonical);
                break;
            } catch (const transport_error&) {
                if (attempt + 1 >= retry_.max_attempts) {
                    throw;
                }
                std::this_thread::sleep_for(retry_.base_delay * (1 << attempt));
            }
        }
        cache_->insert(digest, replicate, canonical, raw);
        return parse_response(json::parse(raw), endpoint_.model_name);
    }

    // n independent completions, cached per replicate index. Averaging of
    // derived responses happens downstream so the raw data stays model-faithful.
    std::vector<TokenLogprobs> sample_replicates(const GenerationRequest& request, int n) {
        if (n < 1) {
            throw validation_error("sample_replicates: n must be >= 1");
        }
        std::vector<TokenLogprobs> out;
        out.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            try {
                out.push_back(complete(request, i));
            } catch (const transport_error& e) {
                throw transport_error("replicate sampling failed after " +
                                      std::to_string(out.size()) + " of " +
                                      std::to_string(n) + " completions: " + e.what());
            }
        }
        return out;
    }

    // Fraction of responses whose first action is a tool call. Prefill-capable
    // endpoints expose the probability of the tool-opening token directly;
    // system-prompt endpoints are sampled.
    ToolRate tool_call_rate(const GenerationRequest& request, int n, double temperature) {
        if (request.tools.empty()) {
            throw validation_error("tool_call_rate: request declares no tools");
        }
        ToolRate rate;
        if (endpoint_.flavor == Flavor::prefill) {
            const TokenLogprobs first = complete(request, 0);
            double p = 0.0;
            if (const auto it = first.alternatives.find("<tool_call>");
                it != first.alternatives.end()) {
                p = std::exp(it->second);
            } else if (first.tool_call && first.alternatives.empty()) {
                p = 1.0;
            }
            rate.proportion = std::clamp(p, 0.0, 1.0);
            rate.method = ToolRate::Method::first_token_probability;
            rate.samples = 1;
            return rate;
        }
        GenerationRequest req = request;
        req.temperature = temperature;
        int called = 0;
        for (int i = 0; i < n; ++i) {
            const TokenLogprobs r = complete(req, i);
            if (r.tool_call) {
                ++called;
            }
        }
        rate.proportion = static_cast<double>(called) / static_cast<double>(n);
        rate.method = ToolRate::Method::sampled;
        rate.samples = n;
        return rate;
    }

private:
    ModelEndpoint endpoint_;
    std::shared_ptr<ResponseCache> cache_;
    Transport transport_;
    RetryPolicy retry_;
    bool offline_ = false;
    std::shared_ptr<std::atomic<int>> network_calls_ =
        std::make_shared<std::atomic<int>>(0);
};

} // namespace blindfold
