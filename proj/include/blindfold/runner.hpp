#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "blindfold/client.hpp"
#include "blindfold/errors.hpp"
#include "blindfold/interventions.hpp"
#include "blindfold/mock_model.hpp"
#include "blindfold/prompts.hpp"
#include "blindfold/templating.hpp"

namespace blindfold {

namespace fs = std::filesystem;

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) {
        throw validation_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.good()) {
        throw validation_error("cannot write " + path.string());
    }
    out << content;
}

struct RunConfig {
    ModelEndpoint endpoint;
    std::string mock_spec_path; // non-empty: drive the in-process mock transport
    Track track = Track::bias;
    std::vector<InterventionKind> interventions{{BaseCondition::default_condition, false}};
    int replicates = 50; // live endpoints vary between calls; means are taken downstream
    uint64_t seed = 42;
    int parallelism = 4;
    int tool_use_samples = 50;
    bool measure_tool_use = false;
    std::string scenarios_path = "data/scenarios.tsv";
    std::string disputes_path = "data/disputes.tsv";
    std::string lexicon_dir = "data";
    std::string output_dir = "run";

    static RunConfig from_json(const json& j) {
        RunConfig c;
        if (j.contains("endpoint")) {
            const auto& e = j.at("endpoint");
            c.endpoint.base_url = e.value("base_url", "");
            c.endpoint.model_name = e.value("model_name", "mock");
            c.endpoint.flavor = parse_flavor(e.value("flavor", "prefill"));
            c.endpoint.auth_env = e.value("auth_env", "");
            c.endpoint.top_logprobs_k = e.value("top_logprobs_k", 20);
        }
        c.mock_spec_path = j.value("mock_spec", "");
        c.track = parse_track(j.value("track", "bias"));
        if (j.contains("interventions")) {
            c.interventions.clear();
            for (const auto& s : j.at("interventions")) {
                const auto kind = parse_intervention(s.get<std::string>());
                if (!condition_valid_for_track(kind.base, c.track)) {
                    throw validation_error("intervention '" + s.get<std::string>() +
                                           "' is not valid for the " +
                                           std::string(track_name(c.track)) + " track");
                }
                c.interventions.push_back(kind);
            }
        }
        c.replicates = j.value("replicates", 50);
        if (c.replicates < 1) {
            throw validation_error("replicates must be >= 1");
        }
        c.seed = j.value("seed", uint64_t{42});
        c.parallelism = std::max(1, j.value("parallelism", 4));
        c.tool_use_samples = j.value("tool_use_samples", 50);
        c.measure_tool_use = j.value("measure_tool_use", false);
        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.scenarios_path = d.value("scenarios", c.scenarios_path);
            c.disputes_path = d.value("disputes", c.disputes_path);
            c.lexicon_dir = d.value("lexicons", c.lexicon_dir);
        }
        c.output_dir = j.value("output_dir", c.output_dir);
        return c;
    }

    json to_json() const {
        json j;
        j["endpoint"] = {{"base_url", endpoint.base_url},
                         {"model_name", endpoint.model_name},
                         {"flavor", std::string(flavor_name(endpoint.flavor))},
                         {"auth_env", endpoint.auth_env},
                         {"top_logprobs_k", endpoint.top_logprobs_k}};
        if (!mock_spec_path.empty()) {
            j["mock_spec"] = mock_spec_path;
        }
        j["track"] = std::string(track_name(track));
        j["interventions"] = json::array();
        for (const auto& k : interventions) {
            j["interventions"].push_back(intervention_label(k));
        }
        j["replicates"] = replicates;
        j["seed"] = seed;
        j["parallelism"] = parallelism;
        j["tool_use_samples"] = tool_use_samples;
        j["measure_tool_use"] = measure_tool_use;
        j["data"] = {{"scenarios", scenarios_path},
                     {"disputes", disputes_path},
                     {"lexicons", lexicon_dir}};
        j["output_dir"] = output_dir;
        return j;
    }

    static RunConfig load(const fs::path& path) {
        return from_json(json::parse(read_text_file(path)));
    }
};

// Build a client for this config: in-process mock transport when a mock spec
// is configured, HTTP otherwise.
inline ModelClient make_client(const RunConfig& config, std::shared_ptr<ResponseCache> cache,
                               bool offline = false) {
    ModelClient::Transport transport;
    if (!config.mock_spec_path.empty()) {
        const auto spec = MockModelSpec::from_json(
            json::parse(read_text_file(config.mock_spec_path)));
        transport = ModelClient::mock_transport(std::make_shared<const MockModel>(spec));
    }
    ModelClient client(config.endpoint, std::move(cache), std::move(transport));
    client.set_offline(offline);
    return client;
}

// ---- battery files ---------------------------------------------------------

inline std::string bias_item_key(const FilledPrompt& p) {
    return std::to_string(p.scenario_id) + ":" + race_label(p.profile.race) + ":" +
           gender_label(p.profile.gender);
}

inline std::string syc_item_key(const SycophancyPrompt& p) {
    if (p.blinded()) {
        const auto& f = p.blinded_framing();
        return std::to_string(p.dispute_id) + ":blinded:" + std::string(1, f.letter_a) +
               std::string(1, f.letter_b) + ":" + (f.a_presented_first ? "a_first" : "b_first");
    }
    const auto& f = p.user_labeled_framing();
    return std::to_string(p.dispute_id) + ":user_" +
           (f.user_side == PartySide::a ? "a" : "b") + ":" +
           (f.user_presented_first ? "user_first" : "other_first");
}

inline json bias_prompt_to_json(const FilledPrompt& p, const std::string& question) {
    json j;
    j["scenario_id"] = p.scenario_id;
    j["race"] = race_label(p.profile.race);
    j["gender"] = gender_label(p.profile.gender);
    j["text"] = p.text;
    j["question"] = question;
    j["spans"] = json::array();
    for (const auto& s : p.substituted_spans) {
        j["spans"].push_back(json::array({s.begin, s.end, s.placeholder}));
    }
    return j;
}

inline FilledPrompt bias_prompt_from_json(const json& j, std::string* question = nullptr) {
    FilledPrompt p;
    p.scenario_id = j.at("scenario_id").get<int>();
    p.profile.race = parse_race(j.at("race").get<std::string>());
    p.profile.gender = parse_gender(j.at("gender").get<std::string>());
    p.text = j.at("text").get<std::string>();
    if (j.contains("spans")) {
        for (const auto& s : j.at("spans")) {
            p.substituted_spans.push_back(
                {s[0].get<size_t>(), s[1].get<size_t>(), s[2].get<std::string>()});
        }
    } else {
        p.spans_recorded = false;
    }
    if (question != nullptr && j.contains("question")) {
        *question = j.at("question").get<std::string>();
    }
    return p;
}

struct BiasBatteryFile {
    std::vector<FilledPrompt> demographic;
    std::vector<FilledPrompt> blinded;
    std::map<int, std::string> questions;
};

inline void write_bias_battery(const fs::path& path, const BiasBattery& battery,
                               const std::vector<ScenarioTemplate>& templates) {
    std::map<int, std::string> questions;
    for (const auto& t : templates) {
        // Question slots may hold placeholders; exporting the blinded
        // rendering keeps the stored question variant-independent.
        const auto blinded = fill_template(t, kBlindedProfile, GrammarDictionary::standard());
        const size_t sep = blinded.text.rfind("\n\n");
        questions[t.id] = sep == std::string::npos ? t.question : blinded.text.substr(sep + 2);
    }
    std::string out;
    for (const auto& p : battery.demographic) {
        out += bias_prompt_to_json(p, questions.at(p.scenario_id)).dump() + "\n";
    }
    for (const auto& p : battery.blinded) {
        out += bias_prompt_to_json(p, questions.at(p.scenario_id)).dump() + "\n";
    }
    write_text_file(path, out);
}

inline BiasBatteryFile load_bias_battery(const fs::path& path) {
    BiasBatteryFile battery;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::string question;
        FilledPrompt p = bias_prompt_from_json(json::parse(line), &question);
        battery.questions[p.scenario_id] = question;
        if (p.profile.blinded()) {
            battery.blinded.push_back(std::move(p));
        } else {
            battery.demographic.push_back(std::move(p));
        }
    }
    return battery;
}

inline json syc_prompt_to_json(const SycophancyPrompt& p) {
    json j;
    j["dispute_id"] = p.dispute_id;
    if (p.blinded()) {
        const auto& f = p.blinded_framing();
        j["framing"] = "blinded";
        j["letter_a"] = std::string(1, f.letter_a);
        j["letter_b"] = std::string(1, f.letter_b);
        j["a_first"] = f.a_presented_first;
    } else {
        const auto& f = p.user_labeled_framing();
        j["framing"] = "user";
        j["user_side"] = f.user_side == PartySide::a ? "A" : "B";
        j["user_first"] = f.user_presented_first;
    }
    j["text"] = p.text;
    return j;
}

inline SycophancyPrompt syc_prompt_from_json(const json& j) {
    SycophancyPrompt p;
    p.dispute_id = j.at("dispute_id").get<int>();
    p.text = j.at("text").get<std::string>();
    if (j.at("framing").get<std::string>() == "blinded") {
        BlindedFraming f;
        f.letter_a = j.at("letter_a").get<std::string>().at(0);
        f.letter_b = j.at("letter_b").get<std::string>().at(0);
        f.a_presented_first = j.at("a_first").get<bool>();
        p.framing = f;
    } else {
        UserLabeledFraming f;
        f.user_side = j.at("user_side").get<std::string>() == "A" ? PartySide::a : PartySide::b;
        f.user_presented_first = j.at("user_first").get<bool>();
        p.framing = f;
    }
    return p;
}

inline void write_syc_battery(const fs::path& path, const SycophancyBattery& battery) {
    std::string out;
    for (const auto& p : battery.user_labeled) {
        out += syc_prompt_to_json(p).dump() + "\n";
    }
    for (const auto& p : battery.blinded) {
        out += syc_prompt_to_json(p).dump() + "\n";
    }
    write_text_file(path, out);
}

inline SycophancyBattery load_syc_battery(const fs::path& path) {
    SycophancyBattery battery;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        SycophancyPrompt p = syc_prompt_from_json(json::parse(line));
        (p.blinded() ? battery.blinded : battery.user_labeled).push_back(std::move(p));
    }
    return battery;
}

// ---- generate --------------------------------------------------------------

struct GeneratedBattery {
    fs::path battery_path;
    std::map<std::string, std::string> digests;
};

inline GeneratedBattery cmd_generate(const RunConfig& config) {
    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);
    GeneratedBattery result;
    if (config.track == Track::bias) {
        const auto templates = load_scenarios(config.scenarios_path);
        if (templates.empty()) {
            throw validation_error("no scenario templates in " + config.scenarios_path);
        }
        const auto battery = generate_bias_battery(templates);
        result.battery_path = out_dir / "battery_bias.jsonl";
        write_bias_battery(result.battery_path, battery, templates);
    } else {
        const auto disputes = load_disputes(config.disputes_path);
        const auto battery = generate_sycophancy_battery(disputes, config.seed);
        result.battery_path = out_dir / "battery_sycophancy.jsonl";
        write_syc_battery(result.battery_path, battery);
    }
    result.digests[result.battery_path.filename().string()] =
        request_digest(read_text_file(result.battery_path));
    json digests(result.digests);
    write_text_file(out_dir / "battery_digests.json", digests.dump(2) + "\n");
    write_text_file(out_dir / "config.json", config.to_json().dump(2) + "\n");
    return result;
}

// ---- execution -------------------------------------------------------------

struct CellFailure {
    std::string condition;
    std::string item;
    std::string reason;
};

struct LeakTally {
    int calls = 0;
    int race = 0;
    int gender_word = 0;
    int pronoun = 0;
    int question_missing = 0;
    int neutral_pronoun = 0;

    void add(const LeakReport& r) {
        ++calls;
        race += r.race_mentioned ? 1 : 0;
        gender_word += r.gender_word ? 1 : 0;
        pronoun += r.gendered_pronoun ? 1 : 0;
        question_missing += r.question_missing ? 1 : 0;
        neutral_pronoun += r.neutral_pronoun_used ? 1 : 0;
    }
};

struct BiasCellResponse {
    int scenario_id = 0;
    Race race = Race::removed;
    Gender gender = Gender::neutral;
    ResponseValue value;
};

struct ToolUseSummary {
    double demographic_rate = 0.0; // mean over demographic battery items
    double blinded_rate = 0.0;     // mean over blinded ("Removed") items
    int demographic_n = 0;
    int blinded_n = 0;
    std::string method;
};

struct BiasResults {
    std::map<std::string, std::vector<BiasCellResponse>> conditions;
    std::map<int, ResponseValue> blinded; // scenario -> blinded baseline
    std::map<std::string, std::vector<SelfCallTrace>> traces;
    std::map<std::string, ToolUseSummary> tool_use;
    std::map<std::string, LeakTally> spontaneous_leaks;
    std::vector<CellFailure> failures;
};

struct SycVariantResponse {
    int dispute_id = 0;
    PartySide user_side = PartySide::a;
    bool user_first = true;
    ResponseValue a_space; // support for party A's position
};

struct SycResults {
    std::map<std::string, std::vector<SycVariantResponse>> conditions;
    std::map<int, ResponseValue> blinded; // dispute -> A-support, averaged over variants
    std::map<std::string, std::vector<SelfCallTrace>> traces;
    std::map<std::string, ToolUseSummary> tool_use;
    std::map<std::string, LeakTally> spontaneous_leaks;
    std::vector<CellFailure> failures;
};

namespace detail {

inline void run_tasks(std::vector<std::function<void()>>& tasks, int parallelism) {
    if (parallelism <= 1 || tasks.size() <= 1) {
        for (auto& t : tasks) {
            t();
        }
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> workers;
    const int n = std::min<int>(parallelism, static_cast<int>(tasks.size()));
    workers.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        workers.emplace_back([&] {
            while (true) {
                const size_t idx = next.fetch_add(1);
                if (idx >= tasks.size()) {
                    return;
                }
                tasks[idx]();
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
}

inline ResponseValue measure_bundle(ModelClient& client, const PromptBundle& bundle,
                                    int replicates, uint64_t seed) {
    std::vector<ResponseValue> per_replicate;
    per_replicate.reserve(static_cast<size_t>(replicates));
    for (int rep = 0; rep < replicates; ++rep) {
        const auto lp = client.complete(bundle_to_request(bundle, seed), rep);
        const double floor = least_logprob(lp.alternatives);
        const auto pos = aggregate_variants(lp.alternatives, bundle.positive_variants, floor);
        const auto neg = aggregate_variants(lp.alternatives, bundle.negative_variants, floor);
        per_replicate.push_back(compute_response(pos, neg));
    }
    return combine_replicates(per_replicate);
}

} // namespace detail

// Execute the full bias track against a client. The same routine serves
// cmd_run (live transport) and cmd_analyze (offline cache replay).
inline BiasResults execute_bias_track(ModelClient& client, const BiasBatteryFile& battery,
                                      const RunConfig& config, const LeakLexicons& lexicons) {
    BiasResults results;
    std::mutex mu;
    std::vector<std::function<void()>> tasks;

    std::map<int, const FilledPrompt*> blinded_by_scenario;
    for (const auto& p : battery.blinded) {
        blinded_by_scenario[p.scenario_id] = &p;
    }
    for (const auto& p : battery.demographic) {
        if (!blinded_by_scenario.contains(p.scenario_id)) {
            throw validation_error("battery lacks a blinded rendering for scenario " +
                                   std::to_string(p.scenario_id));
        }
    }

    // Blinded baseline cells.
    std::vector<std::optional<ResponseValue>> blinded_slots(battery.blinded.size());
    for (size_t i = 0; i < battery.blinded.size(); ++i) {
        tasks.push_back([&, i] {
            const auto& item = battery.blinded[i];
            try {
                const auto bundle = build_bias_bundle(
                    item, {BaseCondition::default_condition, false}, config.endpoint.flavor);
                blinded_slots[i] = detail::measure_bundle(client, bundle, config.replicates,
                                                          config.seed);
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                results.failures.push_back({"blinded", bias_item_key(item), e.what()});
            }
        });
    }

    struct ConditionSlots {
        std::string label;
        InterventionKind kind;
        std::vector<std::optional<BiasCellResponse>> cells;
        std::vector<std::optional<SelfCallTrace>> trace_slots;
        std::vector<std::optional<double>> tool_rates_demographic;
        std::vector<std::optional<double>> tool_rates_blinded;
        std::string tool_method;
    };
    std::vector<ConditionSlots> condition_slots;
    condition_slots.reserve(config.interventions.size());

    for (const auto& kind : config.interventions) {
        condition_slots.push_back({intervention_label(kind), kind, {}, {}, {}, {}, ""});
        auto& slots = condition_slots.back();
        slots.cells.resize(battery.demographic.size());
        if (kind.self_call) {
            slots.trace_slots.resize(battery.demographic.size());
        }
        if (config.measure_tool_use && !kind.self_call &&
            kind.base != BaseCondition::remove_in_context) {
            slots.tool_rates_demographic.resize(battery.demographic.size());
            slots.tool_rates_blinded.resize(battery.blinded.size());
        }

        for (size_t i = 0; i < battery.demographic.size(); ++i) {
            tasks.push_back([&client, &config, &battery, &blinded_by_scenario, &lexicons,
                             &slots, &mu, &results, i] {
                const auto& item = battery.demographic[i];
                const auto& blinded_item = *blinded_by_scenario.at(item.scenario_id);
                try {
                    BiasCellResponse cell;
                    cell.scenario_id = item.scenario_id;
                    cell.race = item.profile.race;
                    cell.gender = item.profile.gender;
                    if (slots.kind.self_call) {
                        std::vector<ResponseValue> per_rep;
                        SelfCallTrace first_trace;
                        for (int rep = 0; rep < config.replicates; ++rep) {
                            auto trace = run_self_call_deferral_bias(
                                client, item, blinded_item,
                                battery.questions.at(item.scenario_id), slots.kind,
                                config.endpoint.flavor, lexicons, rep);
                            if (!trace.valid) {
                                throw analysis_error("invalid trace: " + trace.invalid_reason);
                            }
                            if (rep == 0) {
                                first_trace = trace;
                            }
                            per_rep.push_back(trace.marginalized);
                        }
                        cell.value = combine_replicates(per_rep);
                        slots.trace_slots[i] = std::move(first_trace);
                    } else if (slots.kind.base == BaseCondition::remove_in_context) {
                        std::vector<ResponseValue> per_rep;
                        for (int rep = 0; rep < config.replicates; ++rep) {
                            per_rep.push_back(run_remove_in_context(
                                client, item, blinded_item.text, config.endpoint.flavor, rep));
                        }
                        cell.value = combine_replicates(per_rep);
                    } else {
                        const auto bundle = build_bias_bundle(item, {slots.kind.base, false},
                                                              config.endpoint.flavor);
                        cell.value = detail::measure_bundle(client, bundle, config.replicates,
                                                            config.seed);
                    }
                    slots.cells[i] = cell;
                } catch (const std::exception& e) {
                    std::lock_guard lock(mu);
                    results.failures.push_back({slots.label, bias_item_key(item), e.what()});
                }
            });
        }

        if (!slots.tool_rates_demographic.empty()) {
            for (size_t i = 0; i < battery.demographic.size(); ++i) {
                tasks.push_back([&client, &config, &battery, &lexicons, &slots, &mu,
                                 &results, i] {
                    const auto& item = battery.demographic[i];
                    try {
                        const auto bundle = build_bias_bundle(item, {slots.kind.base, false},
                                                              config.endpoint.flavor);
                        const auto rate = measure_spontaneous_tool_use(
                            client, bundle, config.tool_use_samples);
                        slots.tool_rates_demographic[i] = rate.proportion;
                        slots.tool_method = rate.method == ToolRate::Method::sampled
                                                ? "sampled"
                                                : "first_token_probability";
                        // Audit whatever redaction the model proposed.
                        const auto stripped = strip_closers_for_tool_use(bundle);
                        const auto lp = client.complete(
                            bundle_to_request(stripped, 42, 1.0), 0);
                        if (lp.tool_call) {
                            std::string inner;
                            try {
                                inner = json::parse(lp.tool_call->arguments)
                                            .value("prompt", "");
                            } catch (const json::parse_error&) {
                                inner = lp.tool_call->arguments;
                            }
                            const auto leak = detect_leaks(
                                inner, battery.questions.at(item.scenario_id), lexicons);
                            std::lock_guard lock(mu);
                            results.spontaneous_leaks[slots.label].add(leak);
                        }
                    } catch (const std::exception& e) {
                        std::lock_guard lock(mu);
                        results.failures.push_back(
                            {slots.label + ":tool_use", bias_item_key(item), e.what()});
                    }
                });
            }
            for (size_t i = 0; i < battery.blinded.size(); ++i) {
                tasks.push_back([&client, &config, &battery, &slots, &mu, &results, i] {
                    const auto& item = battery.blinded[i];
                    try {
                        const auto bundle = build_bias_bundle(
                            item, {slots.kind.base, false}, config.endpoint.flavor);
                        slots.tool_rates_blinded[i] =
                            measure_spontaneous_tool_use(client, bundle,
                                                         config.tool_use_samples)
                                .proportion;
                    } catch (const std::exception& e) {
                        std::lock_guard lock(mu);
                        results.failures.push_back(
                            {slots.label + ":tool_use", bias_item_key(item), e.what()});
                    }
                });
            }
        }
    }

    detail::run_tasks(tasks, config.parallelism);

    for (size_t i = 0; i < battery.blinded.size(); ++i) {
        if (blinded_slots[i]) {
            results.blinded[battery.blinded[i].scenario_id] = *blinded_slots[i];
        }
    }
    for (auto& slots : condition_slots) {
        auto& cells = results.conditions[slots.label];
        for (auto& cell : slots.cells) {
            if (cell) {
                cells.push_back(*cell);
            }
        }
        for (auto& trace : slots.trace_slots) {
            if (trace) {
                results.traces[slots.label].push_back(*trace);
            }
        }
        if (!slots.tool_rates_demographic.empty()) {
            ToolUseSummary summary;
            summary.method = slots.tool_method;
            for (const auto& r : slots.tool_rates_demographic) {
                if (r) {
                    summary.demographic_rate += *r;
                    ++summary.demographic_n;
                }
            }
            for (const auto& r : slots.tool_rates_blinded) {
                if (r) {
                    summary.blinded_rate += *r;
                    ++summary.blinded_n;
                }
            }
            if (summary.demographic_n > 0) {
                summary.demographic_rate /= summary.demographic_n;
            }
            if (summary.blinded_n > 0) {
                summary.blinded_rate /= summary.blinded_n;
            }
            results.tool_use[slots.label] = summary;
        }
    }
    return results;
}

// Map a user-labeled variant onto the blinded inner variant that preserves
// the presentation order of the content.
inline const SycophancyPrompt* matching_blinded_variant(
    const SycophancyBattery& battery, const SycophancyPrompt& user_item) {
    const auto& uf = user_item.user_labeled_framing();
    const bool a_first = uf.user_side == PartySide::a ? uf.user_presented_first
                                                      : !uf.user_presented_first;
    for (const auto& b : battery.blinded) {
        if (b.dispute_id == user_item.dispute_id &&
            b.blinded_framing().a_presented_first == a_first) {
            return &b;
        }
    }
    return nullptr;
}

inline SycResults execute_sycophancy_track(ModelClient& client,
                                           const SycophancyBattery& battery,
                                           const RunConfig& config) {
    SycResults results;
    std::mutex mu;
    std::vector<std::function<void()>> tasks;

    // Blinded battery: measure every letter variant in A-space, then average
    // per dispute over letter assignments and orders.
    std::vector<std::optional<std::pair<int, double>>> blinded_slots(battery.blinded.size());
    std::vector<std::optional<bool>> blinded_fallback(battery.blinded.size());
    for (size_t i = 0; i < battery.blinded.size(); ++i) {
        tasks.push_back([&, i] {
            const auto& item = battery.blinded[i];
            try {
                const auto bundle = build_sycophancy_bundle(
                    item, {BaseCondition::default_condition, false}, config.endpoint.flavor);
                const auto value =
                    detail::measure_bundle(client, bundle, config.replicates, config.seed);
                // positive label = letter_a = party A by construction.
                blinded_slots[i] = {item.dispute_id, value.value};
                blinded_fallback[i] = value.method == AggregationMethod::upper_bound_fallback;
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                results.failures.push_back({"blinded", syc_item_key(item), e.what()});
            }
        });
    }

    struct ConditionSlots {
        std::string label;
        InterventionKind kind;
        std::vector<std::optional<SycVariantResponse>> cells;
        std::vector<std::optional<SelfCallTrace>> trace_slots;
        std::vector<std::optional<double>> tool_rates;
        std::string tool_method;
    };
    std::vector<ConditionSlots> condition_slots;
    condition_slots.reserve(config.interventions.size());

    for (const auto& kind : config.interventions) {
        condition_slots.push_back({intervention_label(kind), kind, {}, {}, {}, ""});
        auto& slots = condition_slots.back();
        slots.cells.resize(battery.user_labeled.size());
        if (kind.self_call) {
            slots.trace_slots.resize(battery.user_labeled.size());
        }
        if (config.measure_tool_use && !kind.self_call) {
            slots.tool_rates.resize(battery.user_labeled.size());
        }

        for (size_t i = 0; i < battery.user_labeled.size(); ++i) {
            tasks.push_back([&client, &config, &battery, &slots, &mu, &results, i] {
                const auto& item = battery.user_labeled[i];
                const auto& uf = item.user_labeled_framing();
                try {
                    SycVariantResponse cell;
                    cell.dispute_id = item.dispute_id;
                    cell.user_side = uf.user_side;
                    cell.user_first = uf.user_presented_first;
                    if (slots.kind.self_call) {
                        const auto* inner = matching_blinded_variant(battery, item);
                        if (inner == nullptr) {
                            throw validation_error("no blinded variant for dispute " +
                                                   std::to_string(item.dispute_id));
                        }
                        std::vector<ResponseValue> per_rep;
                        SelfCallTrace first_trace;
                        for (int rep = 0; rep < config.replicates; ++rep) {
                            auto trace = run_self_call_deferral_sycophancy(
                                client, item, *inner, slots.kind, config.endpoint.flavor,
                                rep);
                            if (!trace.valid) {
                                throw analysis_error("invalid trace: " + trace.invalid_reason);
                            }
                            if (rep == 0) {
                                first_trace = trace;
                            }
                            per_rep.push_back(trace.marginalized);
                        }
                        cell.a_space = combine_replicates(per_rep);
                        slots.trace_slots[i] = std::move(first_trace);
                    } else {
                        const auto bundle = build_sycophancy_bundle(
                            item, {slots.kind.base, false}, config.endpoint.flavor);
                        auto value = detail::measure_bundle(client, bundle, config.replicates,
                                                            config.seed);
                        // measured You-vs-Them; convert to A-space.
                        if (uf.user_side == PartySide::b) {
                            value.value = -value.value;
                        }
                        cell.a_space = value;
                    }
                    slots.cells[i] = cell;
                } catch (const std::exception& e) {
                    std::lock_guard lock(mu);
                    results.failures.push_back({slots.label, syc_item_key(item), e.what()});
                }
            });
        }

        if (!slots.tool_rates.empty()) {
            for (size_t i = 0; i < battery.user_labeled.size(); ++i) {
                tasks.push_back([&client, &config, &battery, &slots, &mu, &results, i] {
                    const auto& item = battery.user_labeled[i];
                    try {
                        const auto bundle = build_sycophancy_bundle(
                            item, {slots.kind.base, false}, config.endpoint.flavor);
                        const auto rate = measure_spontaneous_tool_use(
                            client, bundle, config.tool_use_samples);
                        slots.tool_rates[i] = rate.proportion;
                        slots.tool_method = rate.method == ToolRate::Method::sampled
                                                ? "sampled"
                                                : "first_token_probability";
                        const auto stripped = strip_closers_for_tool_use(bundle);
                        const auto lp =
                            client.complete(bundle_to_request(stripped, 42, 1.0), 0);
                        if (lp.tool_call) {
                            std::string inner;
                            try {
                                inner = json::parse(lp.tool_call->arguments)
                                            .value("prompt", "");
                            } catch (const json::parse_error&) {
                                inner = lp.tool_call->arguments;
                            }
                            const auto leak = detect_user_framing_leak(inner);
                            std::lock_guard lock(mu);
                            results.spontaneous_leaks[slots.label].add(leak);
                        }
                    } catch (const std::exception& e) {
                        std::lock_guard lock(mu);
                        results.failures.push_back(
                            {slots.label + ":tool_use", syc_item_key(item), e.what()});
                    }
                });
            }
        }
    }

    detail::run_tasks(tasks, config.parallelism);

    std::map<int, std::vector<double>> blinded_by_dispute;
    std::map<int, bool> blinded_fell_back;
    for (size_t i = 0; i < blinded_slots.size(); ++i) {
        if (blinded_slots[i]) {
            blinded_by_dispute[blinded_slots[i]->first].push_back(blinded_slots[i]->second);
            blinded_fell_back[blinded_slots[i]->first] =
                blinded_fell_back[blinded_slots[i]->first] ||
                (blinded_fallback[i] && *blinded_fallback[i]);
        }
    }
    for (const auto& [dispute, values] : blinded_by_dispute) {
        const auto m = summarize(values);
        ResponseValue v;
        v.value = m.mean;
        v.se = m.se;
        v.n = m.n;
        v.method = blinded_fell_back[dispute] ? AggregationMethod::upper_bound_fallback
                                              : AggregationMethod::exact;
        results.blinded[dispute] = v;
    }
    for (auto& slots : condition_slots) {
        auto& cells = results.conditions[slots.label];
        for (auto& cell : slots.cells) {
            if (cell) {
                cells.push_back(*cell);
            }
        }
        for (auto& trace : slots.trace_slots) {
            if (trace) {
                results.traces[slots.label].push_back(*trace);
            }
        }
        if (!slots.tool_rates.empty()) {
            ToolUseSummary summary;
            summary.method = slots.tool_method;
            for (const auto& r : slots.tool_rates) {
                if (r) {
                    summary.demographic_rate += *r;
                    ++summary.demographic_n;
                }
            }
            if (summary.demographic_n > 0) {
                summary.demographic_rate /= summary.demographic_n;
            }
            results.tool_use[slots.label] = summary;
        }
    }
    return results;
}

// ---- run -------------------------------------------------------------------

struct RunOutcome {
    fs::path manifest_path;
    fs::path cache_path;
    size_t failed_cells = 0;
};

inline RunOutcome cmd_run(const RunConfig& config, bool offline = false) {
    const fs::path out_dir(config.output_dir);
    if (!fs::exists(out_dir / "battery_digests.json")) {
        throw validation_error("no generated battery in " + out_dir.string() +
                               "; run generate first");
    }
    RunOutcome outcome;
    outcome.cache_path = out_dir / "cache.jsonl";
    outcome.manifest_path = out_dir / "manifest.json";
    auto cache = std::make_shared<ResponseCache>(outcome.cache_path);
    auto client = make_client(config, cache, offline);
    const auto lexicons = LeakLexicons::load(config.lexicon_dir);

    json cells = json::object();
    std::vector<CellFailure> failures;
    if (config.track == Track::bias) {
        const auto battery = load_bias_battery(out_dir / "battery_bias.jsonl");
        const auto results = execute_bias_track(client, battery, config, lexicons);
        failures = results.failures;
        for (const auto& [condition, cell_list] : results.conditions) {
            for (const auto& cell : cell_list) {
                const std::string key = condition + "|" + std::to_string(cell.scenario_id) +
                                        ":" + race_label(cell.race) + ":" +
                                        gender_label(cell.gender);
                cells[key] = {{"status", "ok"}, {"replicates", config.replicates}};
            }
        }
        for (const auto& [scenario, value] : results.blinded) {
            (void)value;
            cells["blinded|" + std::to_string(scenario)] = {{"status", "ok"},
                                                            {"replicates", config.replicates}};
        }
    } else {
        const auto battery = load_syc_battery(out_dir / "battery_sycophancy.jsonl");
        const auto results = execute_sycophancy_track(client, battery, config);
        failures = results.failures;
        for (const auto& [condition, cell_list] : results.conditions) {
            for (const auto& cell : cell_list) {
                const std::string key =
                    condition + "|" + std::to_string(cell.dispute_id) + ":user_" +
                    (cell.user_side == PartySide::a ? "a" : "b") + ":" +
                    (cell.user_first ? "user_first" : "other_first");
                cells[key] = {{"status", "ok"}, {"replicates", config.replicates}};
            }
        }
        for (const auto& [dispute, value] : results.blinded) {
            (void)value;
            cells["blinded|" + std::to_string(dispute)] = {{"status", "ok"},
                                                           {"replicates", config.replicates}};
        }
    }
    for (const auto& f : failures) {
        cells[f.condition + "|" + f.item] = {{"status", "failed"}, {"error", f.reason}};
    }
    outcome.failed_cells = failures.size();

    json manifest;
    manifest["config"] = config.to_json();
    manifest["battery_digests"] =
        json::parse(read_text_file(out_dir / "battery_digests.json"));
    manifest["cache_file"] = outcome.cache_path.filename().string();
    manifest["cells"] = cells;
    write_text_file(outcome.manifest_path, manifest.dump(2) + "\n");
    return outcome;
}

} // namespace blindfold
