#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindfold/errors.hpp"
#include "blindfold/logspace.hpp"
#include "blindfold/templating.hpp"
#include "blindfold/text.hpp"
#include "blindfold/wire.hpp"

namespace blindfold {

// Deterministic synthetic model. Its logits are an exact function of the
// conversation features (scenario anchor, demographic terms, dispute framing,
// tool results), so every downstream number has a closed form.
struct MockModelSpec {
    struct Anchor {
        std::string contains; // substring identifying the scenario / dispute
        double value = 0.0;   // base logit difference / content preference
    };

    std::vector<Anchor> scenario_bases;        // bias track: yes-vs-no base
    std::map<std::string, double> race_offsets;
    std::map<std::string, double> gender_offsets;
    std::vector<Anchor> dispute_preferences;   // toward party A's position
    double sycophancy_offset = 0.0;            // toward the user-labeled side
    double primacy_offset = 0.0;               // toward the first-presented side
    double deferral_compliance = 1.0;          // weight on the tool verdict
    std::optional<double> deferral_compliance_favorable;
    std::optional<double> deferral_compliance_unfavorable;
    std::vector<std::string> tool_call_markers; // substrings triggering a self-call
    bool attend_full_context = true;  // false: ignore the first user turn's content
    bool self_call_leaks_gender = false;   // leave gendered pronouns in own redactions
    bool self_call_omits_question = false; // drop the final question from redactions
    double noise = 0.0;                    // fixed at zero
    double epsilon = 1e-12;                // probability clamp

    void validate() const {
        if (noise != 0.0) {
            throw validation_error("mock spec: noise must be 0");
        }
        if (deferral_compliance < 0.0 || deferral_compliance > 1.0) {
            throw validation_error("mock spec: deferral_compliance outside [0,1]");
        }
        for (const auto& [race, off] : race_offsets) {
            (void)off;
            parse_race(race);
        }
        for (const auto& [gender, off] : gender_offsets) {
            (void)off;
            if (gender != "male" && gender != "female") {
                throw validation_error("mock spec: unknown gender offset key '" + gender + "'");
            }
        }
    }

    static MockModelSpec from_json(const json& j) {
        MockModelSpec spec;
        auto read_anchors = [&](const char* key, std::vector<Anchor>& out,
                                const char* value_key) {
            if (!j.contains(key)) return;
            for (const auto& a : j.at(key)) {
                if (!a.contains("contains") || !a.contains(value_key)) {
                    throw validation_error(std::string("mock spec: entry in '") + key +
                                           "' needs 'contains' and '" + value_key + "'");
                }
                out.push_back({a.at("contains").get<std::string>(),
                               a.at(value_key).get<double>()});
            }
        };
        read_anchors("scenario_bases", spec.scenario_bases, "base");
        read_anchors("dispute_preferences", spec.dispute_preferences, "preference");
        if (j.contains("race_offsets")) {
            for (const auto& [k, v] : j.at("race_offsets").items()) {
                spec.race_offsets[k] = v.get<double>();
            }
        }
        if (j.contains("gender_offsets")) {
            for (const auto& [k, v] : j.at("gender_offsets").items()) {
                spec.gender_offsets[k] = v.get<double>();
            }
        }
        spec.sycophancy_offset = j.value("sycophancy_offset", 0.0);
        spec.primacy_offset = j.value("primacy_offset", 0.0);
        spec.deferral_compliance = j.value("deferral_compliance", 1.0);
        if (j.contains("deferral_compliance_favorable")) {
            spec.deferral_compliance_favorable =
                j.at("deferral_compliance_favorable").get<double>();
        }
        if (j.contains("deferral_compliance_unfavorable")) {
            spec.deferral_compliance_unfavorable =
                j.at("deferral_compliance_unfavorable").get<double>();
        }
        if (j.contains("tool_call_markers")) {
            for (const auto& m : j.at("tool_call_markers")) {
                spec.tool_call_markers.push_back(m.get<std::string>());
            }
        }
        spec.attend_full_context = j.value("attend_full_context", true);
        spec.self_call_leaks_gender = j.value("self_call_leaks_gender", false);
        spec.self_call_omits_question = j.value("self_call_omits_question", false);
        spec.noise = j.value("noise", 0.0);
        spec.epsilon = j.value("epsilon", 1e-12);
        spec.validate();
        return spec;
    }

    json to_json() const {
        json j;
        j["scenario_bases"] = json::array();
        for (const auto& a : scenario_bases) {
            j["scenario_bases"].push_back({{"contains", a.contains}, {"base", a.value}});
        }
        j["dispute_preferences"] = json::array();
        for (const auto& a : dispute_preferences) {
            j["dispute_preferences"].push_back(
                {{"contains", a.contains}, {"preference", a.value}});
        }
        j["race_offsets"] = race_offsets;
        j["gender_offsets"] = gender_offsets;
        j["sycophancy_offset"] = sycophancy_offset;
        j["primacy_offset"] = primacy_offset;
        j["deferral_compliance"] = deferral_compliance;
        if (deferral_compliance_favorable) {
            j["deferral_compliance_favorable"] = *deferral_compliance_favorable;
        }
        if (deferral_compliance_unfavorable) {
            j["deferral_compliance_unfavorable"] = *deferral_compliance_unfavorable;
        }
        j["tool_call_markers"] = tool_call_markers;
        j["attend_full_context"] = attend_full_context;
        j["self_call_leaks_gender"] = self_call_leaks_gender;
        j["self_call_omits_question"] = self_call_omits_question;
        j["noise"] = noise;
        j["epsilon"] = epsilon;
        return j;
    }
};

// Anchor every scenario by its question text (placeholder-free and unique in
// the shipped set), with a base drawn from the given function of the id.
template <typename BaseFn>
MockModelSpec::Anchor scenario_anchor(const ScenarioTemplate& t, BaseFn base) {
    if (t.question.find('{') != std::string::npos) {
        throw validation_error("scenario " + std::to_string(t.id) +
                               ": question contains placeholders; cannot anchor");
    }
    return {t.question, base(t.id)};
}

template <typename BaseFn>
std::vector<MockModelSpec::Anchor> scenario_anchors(
    const std::vector<ScenarioTemplate>& templates, BaseFn base) {
    std::vector<MockModelSpec::Anchor> anchors;
    std::set<std::string> seen;
    for (const auto& t : templates) {
        auto a = scenario_anchor(t, base);
        if (!seen.insert(a.contains).second) {
            throw validation_error("scenario questions are not unique; cannot anchor");
        }
        anchors.push_back(std::move(a));
    }
    return anchors;
}

template <typename PrefFn>
std::vector<MockModelSpec::Anchor> dispute_anchors(
    const std::vector<DisputeScenario>& disputes, PrefFn preference) {
    std::vector<MockModelSpec::Anchor> anchors;
    for (const auto& d : disputes) {
        anchors.push_back({d.side_a, preference(d.id)});
    }
    return anchors;
}

class MockModel {
public:
    explicit MockModel(MockModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const MockModelSpec& spec() const { return spec_; }

    // Deterministic chat-completions response bytes for a request body.
    std::string respond(const std::string& request_body) const {
        json body;
        try {
            body = json::parse(request_body);
        } catch (const json::parse_error& e) {
            throw validation_error(std::string("mock model: bad request JSON: ") + e.what());
        }
        return respond_json(body).dump();
    }

    json respond_json(const json& body) const {
        const std::string model = body.value("model", "mock");
        std::vector<json> messages;
        for (const auto& m : body.at("messages")) {
            messages.push_back(m);
        }
        const bool tools_declared = body.contains("tools") && !body.at("tools").empty();

        std::string all_text;
        std::string last_user;
        std::string first_user;
        std::string tool_result;
        std::string inner_prompt; // arguments of a forced assistant tool call
        size_t user_turns = 0;
        for (const auto& m : messages) {
            const std::string role = m.value("role", "user");
            const std::string content =
                m.contains("content") && m.at("content").is_string()
                    ? m.at("content").get<std::string>()
                    : "";
            all_text += content;
            all_text += '\n';
            if (role == "user") {
                ++user_turns;
                if (first_user.empty()) first_user = content;
                last_user = content;
            } else if (role == "tool") {
                tool_result = content;
            }
            if (m.contains("tool_calls") && m.at("tool_calls").is_array() &&
                !m.at("tool_calls").empty()) {
                const auto& args =
                    m.at("tool_calls")[0].at("function").at("arguments").get<std::string>();
                try {
                    inner_prompt = json::parse(args).value("prompt", "");
                } catch (const json::parse_error&) {
                    inner_prompt = args;
                }
                all_text += inner_prompt;
                all_text += '\n';
            }
        }

        // Feature scope: everything, or the conversation after the first user
        // turn (a model that evaluates only the redacted rewrite).
        std::string scope = all_text;
        if (!spec_.attend_full_context && user_turns >= 2) {
            const size_t cut = all_text.find(first_user);
            if (cut != std::string::npos) {
                scope = all_text.substr(cut + first_user.size());
            }
        }

        if (!tool_result.empty()) {
            return deferral_response(model, all_text, scope, tool_result, inner_prompt);
        }
        if (tools_declared && marker_matched(last_user)) {
            return tool_call_response(model, last_user);
        }
        return plain_response(model, all_text, scope, tools_declared);
    }

private:
    MockModelSpec spec_;

    bool marker_matched(const std::string& text) const {
        for (const auto& marker : spec_.tool_call_markers) {
            if (text.find(marker) != std::string::npos) {
                return true;
            }
        }
        return false;
    }

    std::optional<double> anchor_value(const std::vector<MockModelSpec::Anchor>& anchors,
                                       const std::string& text) const {
        for (const auto& a : anchors) {
            if (!a.contains.empty() && text.find(a.contains) != std::string::npos) {
                return a.value;
            }
        }
        return std::nullopt;
    }

    struct SycophancyFeatures {
        bool blinded = false;
        bool user_is_a = false;      // user-labeled framing
        bool user_first = false;
        bool a_first = false;        // blinded framing
        char first_letter = 0;
        char second_letter = 0;
        double content_preference = 0.0; // toward party A
        std::string my_para;
    };

    static std::string section_between(const std::string& text, const std::string& open,
                                       const std::string& close) {
        const size_t a = text.find(open);
        if (a == std::string::npos) return "";
        const size_t b = text.find(close, a + open.size());
        if (b == std::string::npos) return "";
        return text.substr(a + open.size(), b - a - open.size());
    }

    std::optional<SycophancyFeatures> sycophancy_features(const std::string& text) const {
        SycophancyFeatures f;
        const size_t my = text.find("My side of the story:");
        const size_t their = text.find("Their side of the story:");
        if (my != std::string::npos && their != std::string::npos) {
            f.blinded = false;
            f.user_first = my < their;
            f.my_para = section_between(text, "<my_side>\n", "\n</my_side>");
            const auto pref = anchor_value(spec_.dispute_preferences, text);
            f.content_preference = pref.value_or(0.0);
            bool found = false;
            for (const auto& a : spec_.dispute_preferences) {
                if (!a.contains.empty() && text.find(a.contains) != std::string::npos) {
                    f.user_is_a = f.my_para.find(a.contains) != std::string::npos;
                    found = true;
                    break;
                }
            }
            if (!found) {
                f.user_is_a = true;
            }
            return f;
        }
        // Blinded letter framing: "Person X's side of the story:"
        const std::string marker = "'s side of the story:";
        const size_t first = text.find(marker);
        if (first == std::string::npos || first < 1) {
            return std::nullopt;
        }
        f.blinded = true;
        f.first_letter = text[first - 1];
        const size_t second = text.find(marker, first + marker.size());
        if (second == std::string::npos || second < 1) {
            return std::nullopt;
        }
        f.second_letter = text[second - 1];
        const std::string first_para =
            section_between(text, std::string("<person_") + f.first_letter + "_side>\n",
                            std::string("\n</person_") + f.first_letter + "_side>");
        for (const auto& a : spec_.dispute_preferences) {
            if (!a.contains.empty() && text.find(a.contains) != std::string::npos) {
                f.content_preference = a.value;
                f.a_first = first_para.find(a.contains) != std::string::npos;
                return f;
            }
        }
        f.a_first = true;
        return f;
    }

    // Positive-vs-negative logit difference for a plain (no tool result) turn,
    // plus the surface labels to emit.
    struct Decision {
        double diff = 0.0; // positive label minus negative label
        std::string positive;
        std::string negative;
    };

    Decision decide(const std::string& all_text, const std::string& scope) const {
        if (auto syc = sycophancy_features(scope.find("side of the story:") !=
                                                   std::string::npos
                                               ? scope
                                               : all_text)) {
            Decision d;
            const auto& f = *syc;
            if (f.blinded) {
                const double content_toward_first =
                    f.a_first ? f.content_preference : -f.content_preference;
                d.diff = content_toward_first + spec_.primacy_offset;
                d.positive = std::string(1, f.first_letter);
                d.negative = std::string(1, f.second_letter);
            } else {
                const double content_toward_user =
                    f.user_is_a ? f.content_preference : -f.content_preference;
                const double primacy_toward_user =
                    f.user_first ? spec_.primacy_offset : -spec_.primacy_offset;
                d.diff = content_toward_user + spec_.sycophancy_offset + primacy_toward_user;
                d.positive = "You";
                d.negative = "Them";
            }
            return d;
        }
        Decision d;
        d.positive = "Yes";
        d.negative = "No";
        d.diff = anchor_value(spec_.scenario_bases, all_text).value_or(0.0);
        for (const auto& [race, offset] : spec_.race_offsets) {
            if (contains_word(scope, race)) {
                d.diff += offset;
            }
        }
        for (const auto& [gender, offset] : spec_.gender_offsets) {
            if (contains_word(scope, gender)) {
                d.diff += offset;
            }
        }
        return d;
    }

    json deferral_response(const std::string& model, const std::string& all_text,
                           const std::string& scope, const std::string& tool_result,
                           const std::string& inner_prompt) const {
        // Own inclination comes from the outer conversation only.
        const size_t inner_at = inner_prompt.empty() ? std::string::npos
                                                     : all_text.find(inner_prompt);
        std::string outer = all_text;
        if (inner_at != std::string::npos) {
            outer = all_text.substr(0, inner_at) +
                    all_text.substr(inner_at + inner_prompt.size());
        }
        std::string outer_scope = scope;
        if (const size_t at = outer_scope.find(inner_prompt);
            !inner_prompt.empty() && at != std::string::npos) {
            outer_scope =
                outer_scope.substr(0, at) + outer_scope.substr(at + inner_prompt.size());
        }
        const Decision own = decide(outer, outer_scope);

        bool verdict_positive = false;
        bool verdict_favorable = false;
        const std::string verdict = collapse_whitespace(tool_result);
        if (own.positive == "You") {
            // The tool speaks in blinded letters; favorable means the user's
            // own paragraph sits in that letter's section of the inner prompt.
            const auto f = sycophancy_features(outer);
            char user_letter = 0;
            if (f && !f->my_para.empty() && !inner_prompt.empty()) {
                const std::string marker = "'s side of the story:";
                size_t pos = inner_prompt.find(marker);
                while (pos != std::string::npos && pos >= 1) {
                    const char letter = inner_prompt[pos - 1];
                    const std::string para = section_between(
                        inner_prompt, std::string("<person_") + letter + "_side>\n",
                        std::string("\n</person_") + letter + "_side>");
                    if (para.find(f->my_para) != std::string::npos ||
                        f->my_para.find(para) != std::string::npos) {
                        user_letter = letter;
                        break;
                    }
                    pos = inner_prompt.find(marker, pos + marker.size());
                }
            }
            verdict_positive = !verdict.empty() && user_letter != 0 &&
                               verdict[0] == user_letter;
            verdict_favorable = verdict_positive;
        } else {
            verdict_positive = verdict == "Yes" || verdict == "yes";
            verdict_favorable = verdict_positive; // yes is favorable by construction
        }

        double w = spec_.deferral_compliance;
        if (verdict_favorable && spec_.deferral_compliance_favorable) {
            w = *spec_.deferral_compliance_favorable;
        } else if (!verdict_favorable && spec_.deferral_compliance_unfavorable) {
            w = *spec_.deferral_compliance_unfavorable;
        }
        const double own_p = sigmoid(own.diff);
        const double p = w * (verdict_positive ? 1.0 : 0.0) + (1.0 - w) * own_p;
        return answer_response(model, own.positive, own.negative, p, false);
    }

    json tool_call_response(const std::string& model, const std::string& last_user) const {
        json call_args;
        call_args["prompt"] = redact(last_user);
        json message;
        message["role"] = "assistant";
        message["content"] = nullptr;
        message["tool_calls"] = json::array(
            {{{"id", "call-0"},
              {"type", "function"},
              {"function", {{"name", "run_counterfactual_simulation"},
                            {"arguments", call_args.dump()}}}}});
        // First-token alternatives: the tool-opening token takes all the mass.
        const double p_tool = 1.0 - spec_.epsilon;
        json top = json::array();
        top.push_back({{"token", "<tool_call>"}, {"logprob", std::log(p_tool)}});
        top.push_back({{"token", "Based"}, {"logprob", std::log(spec_.epsilon)}});
        json logprobs;
        logprobs["content"] = json::array({{{"token", "<tool_call>"},
                                            {"logprob", std::log(p_tool)},
                                            {"top_logprobs", top}}});
        json choice;
        choice["index"] = 0;
        choice["message"] = message;
        choice["logprobs"] = logprobs;
        choice["finish_reason"] = "tool_calls";
        return envelope(model, choice);
    }

    json plain_response(const std::string& model, const std::string& all_text,
                        const std::string& scope, bool tools_declared) const {
        const Decision d = decide(all_text, scope);
        double p = sigmoid(d.diff);
        return answer_response(model, d.positive, d.negative, p, tools_declared);
    }

    // Two typographic variants per side, 3:1 within each side, so variant
    // aggregation reconstructs the side mass exactly.
    json answer_response(const std::string& model, const std::string& positive,
                         const std::string& negative, double p_positive,
                         bool tools_declared) const {
        p_positive = std::clamp(p_positive, spec_.epsilon, 1.0 - spec_.epsilon);
        double p_tool_token = 0.0;
        double scale = 1.0;
        if (tools_declared) {
            // Tool token takes epsilon mass; answer masses scale by (1 - eps),
            // leaving the positive/negative logit difference untouched.
            p_tool_token = spec_.epsilon;
            scale = 1.0 - spec_.epsilon;
        }
        auto lower = [](std::string s) {
            s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
            return s;
        };
        auto upper = [](std::string s) {
            s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
            return s;
        };
        struct Alt {
            std::string token;
            double logprob;
        };
        std::vector<Alt> alts;
        const double p_pos = p_positive * scale;
        const double p_neg = (1.0 - p_positive) * scale;
        alts.push_back({upper(positive), std::log(p_pos * 0.75)});
        alts.push_back({lower(positive), std::log(p_pos * 0.25)});
        alts.push_back({upper(negative), std::log(p_neg * 0.75)});
        alts.push_back({lower(negative), std::log(p_neg * 0.25)});
        if (tools_declared) {
            alts.push_back({"<tool_call>", std::log(p_tool_token)});
        }
        std::sort(alts.begin(), alts.end(), [](const Alt& a, const Alt& b) {
            return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
        });
        json top = json::array();
        for (const auto& a : alts) {
            top.push_back({{"token", a.token}, {"logprob", a.logprob}});
        }
        const std::string answer = p_positive >= 0.5 ? upper(positive) : upper(negative);
        json logprobs;
        logprobs["content"] = json::array(
            {{{"token", answer}, {"logprob", alts.front().logprob}, {"top_logprobs", top}}});
        json message;
        message["role"] = "assistant";
        message["content"] = answer;
        json choice;
        choice["index"] = 0;
        choice["message"] = message;
        choice["logprobs"] = logprobs;
        choice["finish_reason"] = "stop";
        return envelope(model, choice);
    }

    static json envelope(const std::string& model, json choice) {
        json response;
        response["id"] = "mock-0";
        response["object"] = "chat.completion";
        response["created"] = 0;
        response["model"] = model;
        response["choices"] = json::array({std::move(choice)});
        return response;
    }

    // The mock's own redaction of a prompt for its spontaneous self-calls.
    std::string redact(const std::string& text) const {
        std::string out = text;
        const std::vector<std::string> race_terms{"Asian", "Black", "Hispanic", "white"};
        const auto race_spans = derive_race_spans(out, race_terms);
        for (auto it = race_spans.rbegin(); it != race_spans.rend(); ++it) {
            out.erase(it->begin, it->end - it->begin);
        }
        for (const std::string& noun : {std::string("male"), std::string("female")}) {
            auto spans = find_word_spans(out, noun);
            for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
                out.erase(it->first, it->second - it->first);
            }
        }
        if (!spec_.self_call_leaks_gender) {
            out = neutralize_pronouns(out);
        }
        if (spec_.self_call_omits_question) {
            const size_t q = out.rfind("Should");
            if (q != std::string::npos) {
                out.erase(q);
            }
        }
        return collapse_whitespace(out);
    }

    static std::string neutralize_pronouns(std::string text) {
        const std::vector<std::pair<std::string, std::string>> map{
            {"he", "they"},       {"she", "they"},      {"him", "them"},
            {"his", "their"},     {"her", "their"},     {"hers", "theirs"},
            {"himself", "themselves"}, {"herself", "themselves"},
            {"has", "have"},      {"is", "are"}};
        for (const auto& [from, to] : map) {
            auto spans = find_word_spans(text, from);
            for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
                std::string replacement = to;
                if (std::isupper(static_cast<unsigned char>(text[it->first]))) {
                    replacement[0] = static_cast<char>(
                        std::toupper(static_cast<unsigned char>(replacement[0])));
                }
                text.replace(it->first, it->second - it->first, replacement);
            }
        }
        return text;
    }
};

} // namespace blindfold
