#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindfold/errors.hpp"

namespace blindfold {

using json = nlohmann::json;

enum class Role { system, user, assistant, tool };

inline std::string_view role_name(Role r) {
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
    }
    return "user";
}

inline Role parse_role(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    if (s == "tool") return Role::tool;
    throw validation_error("unknown role: " + std::string(s));
}

struct ToolCall {
    std::string name;
    std::string arguments; // raw JSON text
};

struct Message {
    Role role = Role::user;
    std::string content;
    std::optional<ToolCall> tool_call;
    bool partial = false; // trailing assistant prefill the model must continue

    static Message system(std::string text) { return {Role::system, std::move(text), {}, false}; }
    static Message user(std::string text) { return {Role::user, std::move(text), {}, false}; }
    static Message assistant(std::string text) {
        return {Role::assistant, std::move(text), {}, false};
    }
    static Message prefill(std::string text) {
        return {Role::assistant, std::move(text), {}, true};
    }
    static Message tool_result(std::string text) {
        return {Role::tool, std::move(text), {}, false};
    }
    static Message assistant_tool_call(ToolCall call) {
        return {Role::assistant, "", std::move(call), false};
    }
};

struct ToolDescription {
    std::string name;
    std::string description;
    std::string param_name;
    std::string param_description;
};

// Which request shapes an endpoint accepts.
enum class Flavor {
    prefill,       // trailing partial assistant messages are continued
    system_prompt, // no prefill; answers constrained via a fixed system prompt
};

inline std::string_view flavor_name(Flavor f) {
    return f == Flavor::prefill ? "prefill" : "system_prompt";
}

inline Flavor parse_flavor(std::string_view s) {
    if (s == "prefill") return Flavor::prefill;
    if (s == "system_prompt") return Flavor::system_prompt;
    throw validation_error("unknown endpoint flavor: " + std::string(s));
}

struct ModelEndpoint {
    std::string base_url;    // empty: in-process mock transport
    std::string model_name = "mock";
    Flavor flavor = Flavor::prefill;
    std::string auth_env;    // name of the environment variable holding the key
    int top_logprobs_k = 20;
};

struct GenerationRequest {
    std::vector<Message> messages;
    std::vector<ToolDescription> tools;
    double temperature = 0.0;
    uint64_t seed = 42;
    int top_logprobs_k = 20;
    int max_new_tokens = 16;
};

// First-generated-position alternatives plus whatever the model did.
struct TokenLogprobs {
    std::map<std::string, double> alternatives; // token -> logprob, all <= 0
    std::string generated_text;
    std::optional<ToolCall> tool_call;

    bool has_alternatives() const { return !alternatives.empty(); }
};

inline void validate_request(const GenerationRequest& req, Flavor flavor) {
    if (req.messages.empty()) {
        throw validation_error("request has no messages");
    }
    if (req.temperature < 0.0) {
        throw validation_error("temperature must be >= 0");
    }
    for (size_t i = 0; i < req.messages.size(); ++i) {
        const auto& m = req.messages[i];
        if (m.partial) {
            if (m.role != Role::assistant || i + 1 != req.messages.size()) {
                throw validation_error("partial message must be the trailing assistant turn");
            }
            if (flavor != Flavor::prefill) {
                throw validation_error(
                    "endpoint flavor does not support continuing from a prefill");
            }
        }
    }
}

inline json message_to_json(const Message& m) {
    json j;
    j["role"] = std::string(role_name(m.role));
    j["content"] = m.content;
    if (m.tool_call) {
        j["tool_calls"] = json::array({json{
            {"type", "function"},
            {"function", {{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments}}}}});
    }
    if (m.partial) {
        j["partial"] = true;
    }
    return j;
}

inline json tool_to_json(const ToolDescription& t) {
    return json{
        {"type", "function"},
        {"function",
         {{"name", t.name},
          {"description", t.description},
          {"parameters",
           {{"type", "object"},
            {"properties", {{t.param_name, {{"type", "string"},
                                            {"description", t.param_description}}}}},
            {"required", json::array({t.param_name})}}}}}};
}

// Chat-completions request body. A trailing partial assistant message is sent
// with continue_final_message so prefill-capable servers resume it.
inline json request_to_json(const std::string& model_name, const GenerationRequest& req) {
    json body;
    body["model"] = model_name;
    body["messages"] = json::array();
    bool has_prefill = false;
    for (const auto& m : req.messages) {
        body["messages"].push_back(message_to_json(m));
        has_prefill |= m.partial;
    }
    if (!req.tools.empty()) {
        body["tools"] = json::array();
        for (const auto& t : req.tools) {
            body["tools"].push_back(tool_to_json(t));
        }
    }
    body["temperature"] = req.temperature;
    body["seed"] = req.seed;
    body["logprobs"] = true;
    body["top_logprobs"] = req.top_logprobs_k;
    body["max_tokens"] = req.max_new_tokens;
    if (has_prefill) {
        body["continue_final_message"] = true;
    }
    return body;
}

// Canonical bytes for digesting: nlohmann objects serialize with sorted keys,
// so dump() of the semantic fields is stable under field reordering.
inline std::string canonical_request(const std::string& model_name,
                                     const GenerationRequest& req) {
    return request_to_json(model_name, req).dump();
}

inline uint64_t fnv1a64(std::string_view bytes) {
    uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline std::string request_digest(const std::string& canonical) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    return std::string(buf);
}

// Pull the first-generated-position alternatives out of a chat-completions
// response. Missing logprobs on a plain text response is a configuration
// error, not a retryable failure.
inline TokenLogprobs parse_response(const json& body, const std::string& endpoint_label) {
    if (!body.contains("choices") || body["choices"].empty()) {
        throw transport_error("response from " + endpoint_label + " has no choices");
    }
    const json& choice = body["choices"][0];
    const json& message = choice.at("message");
    TokenLogprobs out;
    if (message.contains("content") && message["content"].is_string()) {
        out.generated_text = message["content"].get<std::string>();
    }
    if (message.contains("tool_calls") && message["tool_calls"].is_array() &&
        !message["tool_calls"].empty()) {
        const json& f = message["tool_calls"][0].at("function");
        out.tool_call = ToolCall{f.at("name").get<std::string>(),
                                 f.at("arguments").get<std::string>()};
    }
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && !choice["logprobs"]["content"].empty()) {
        const json& first = choice["logprobs"]["content"][0];
        for (const auto& alt : first.at("top_logprobs")) {
            out.alternatives[alt.at("token").get<std::string>()] =
                alt.at("logprob").get<double>();
        }
    }
    if (!out.has_alternatives() && !out.tool_call) {
        throw analysis_error("response from " + endpoint_label +
                             " carries no token logprobs; check endpoint configuration");
    }
    return out;
}

} // namespace blindfold
