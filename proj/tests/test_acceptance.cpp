// Acceptance suite: every top-level requirement checked at its stated
// tolerance against the deterministic mock and the numerical oracles, fully
// offline. One [PASS]/[FAIL] line prints per criterion.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "blindfold/analysis.hpp"
#include "blindfold/interventions.hpp"
#include "blindfold/mock_server.hpp"
#include "blindfold/runner.hpp"
#include "blindfold/stats.hpp"

using namespace blindfold;

namespace {

const std::string kDataDir = std::string(BLINDFOLD_REPO_DIR) + "/data";
const std::string kFixtureDir = std::string(BLINDFOLD_FIXTURE_DIR);

struct criterion_failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void expect(bool condition, const std::string& what) {
    if (!condition) {
        throw criterion_failure(what);
    }
}

void expect_near(double got, double want, double tol, const std::string& what) {
    if (!(std::fabs(got - want) <= tol)) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s: got %.15g, want %.15g (tol %.1g)", what.c_str(),
                      got, want, tol);
        throw criterion_failure(buf);
    }
}

void run_criterion(const char* name, const std::function<void()>& body) {
    std::string error;
    try {
        body();
    } catch (const std::exception& e) {
        error = e.what();
    }
    if (error.empty()) {
        std::printf("[PASS] %s\n", name);
    } else {
        std::printf("[FAIL] %s: %s\n", name, error.c_str());
    }
    std::fflush(stdout);
    REQUIRE_MESSAGE(error.empty(), name, ": ", error);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) {
        throw criterion_failure("missing fixture " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelClient in_process_client(const MockModelSpec& spec,
                              std::shared_ptr<ResponseCache> cache = nullptr) {
    ModelEndpoint endpoint;
    endpoint.model_name = "mock";
    endpoint.flavor = Flavor::prefill;
    auto model = std::make_shared<const MockModel>(spec);
    return ModelClient(endpoint, std::move(cache), ModelClient::mock_transport(model));
}

double dispute_preference(int id) { return ((id * 31) % 13 - 6) / 3.0; }
double scenario_base(int id) { return ((id * 37) % 17 - 8) / 4.0; }

std::map<std::string, std::string> snapshot_files(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            out[fs::relative(entry.path(), dir).string()] = read_text_file(entry.path());
        }
    }
    return out;
}

} // namespace

TEST_CASE("criterion 1: battery cardinality") {
    run_criterion("battery cardinality: 65 -> 520+65, 60 -> 240+240", [] {
        const auto templates = load_scenarios(kDataDir + "/scenarios.tsv");
        expect(templates.size() == 65, "expected 65 scenario templates");
        const auto bias = generate_bias_battery(templates);
        expect(bias.demographic.size() == 520,
               "demographic battery size " + std::to_string(bias.demographic.size()));
        expect(bias.blinded.size() == 65,
               "blinded battery size " + std::to_string(bias.blinded.size()));

        const auto disputes = load_disputes(kDataDir + "/disputes.tsv");
        expect(disputes.size() == 60, "expected 60 disputes");
        const auto syc = generate_sycophancy_battery(disputes, 42);
        expect(syc.user_labeled.size() == 240,
               "user-labeled battery size " + std::to_string(syc.user_labeled.size()));
        expect(syc.blinded.size() == 240,
               "blinded sycophancy battery size " + std::to_string(syc.blinded.size()));
    });
}

TEST_CASE("criterion 2: counterbalancing soundness") {
    run_criterion("counterbalancing: generated batteries fully consistent, plants named", [] {
        const auto templates = load_scenarios(kDataDir + "/scenarios.tsv");
        const auto battery = generate_bias_battery(templates);
        auto prompts = battery.demographic;
        prompts.insert(prompts.end(), battery.blinded.begin(), battery.blinded.end());
        const auto clean = audit_battery_consistency(prompts);
        expect(clean.identical_fraction == 1.0, "generated battery not fully consistent");

        auto planted = battery.demographic;
        planted[13].text += " planted discrepancy";
        const int planted_group = planted[13].scenario_id;
        const auto dirty = audit_battery_consistency(planted);
        expect(dirty.identical_fraction < 1.0, "planted discrepancy not detected");
        const auto divergent = dirty.divergent_group_ids();
        expect(divergent.size() == 1 && divergent[0] == planted_group,
               "divergent group not named correctly");
    });
}

TEST_CASE("criterion 3: aggregation oracle") {
    run_criterion("variant aggregation matches probability-domain brute force (1e-12)", [] {
        std::mt19937_64 rng(424242);
        std::uniform_real_distribution<double> logprob_dist(-34.0, 0.0);
        std::uniform_int_distribution<int> count_dist(1, 4);
        const auto yes = TokenVariantSet::for_label("yes");
        const std::vector<std::string> extras{"The", "Maybe", " so", "Well", "Indeed"};
        for (int trial = 0; trial < 10000; ++trial) {
            std::map<std::string, double> alts;
            const int n_variants = count_dist(rng);
            for (int i = 0; i < n_variants; ++i) {
                alts[yes.variants[static_cast<size_t>(i)]] = logprob_dist(rng);
            }
            for (const auto& tok : extras) {
                alts[tok] = logprob_dist(rng);
            }
            const auto agg = aggregate_variants(alts, yes, least_logprob(alts));
            expect(agg.method == AggregationMethod::exact, "expected exact aggregation");
            long double total = 0.0L;
            for (const auto& v : yes.variants) {
                if (const auto it = alts.find(v); it != alts.end()) {
                    total += expl(static_cast<long double>(it->second));
                }
            }
            expect_near(agg.logprob, static_cast<double>(logl(total)), 1e-12,
                        "aggregation vs oracle, trial " + std::to_string(trial));
        }
        // Fallback path: the k-th logprob is passed through verbatim.
        const std::map<std::string, double> no_variant{{"Maybe", -0.5}, {"floor", -9.125}};
        const auto fb = aggregate_variants(no_variant, yes, -9.125);
        expect(fb.method == AggregationMethod::upper_bound_fallback, "expected fallback");
        expect(fb.logprob == -9.125, "fallback must be the k-th logprob verbatim");
    });
}

TEST_CASE("criterion 4: post-self-call marginalization identities") {
    run_criterion("marginalization identities (1e-9 battery-wide, 1e-12, worked case 1e-5)", [] {
        // Full deferral across the whole battery: marginalized == blinded.
        const auto templates = load_scenarios(kDataDir + "/scenarios.tsv");
        MockModelSpec spec;
        spec.scenario_bases = scenario_anchors(templates, scenario_base);
        spec.race_offsets["Black"] = 0.8;
        spec.gender_offsets["female"] = -0.5;
        spec.deferral_compliance = 1.0;
        auto client = in_process_client(spec);
        const auto lexicons = LeakLexicons::load(kDataDir);
        const auto battery = generate_bias_battery(templates);
        std::map<int, const FilledPrompt*> blinded_items;
        for (const auto& b : battery.blinded) {
            blinded_items[b.scenario_id] = &b;
        }
        std::map<int, std::string> questions;
        for (const auto& t : templates) {
            questions[t.id] = t.question;
        }
        for (const auto& item : battery.demographic) {
            const auto trace = run_self_call_deferral_bias(
                client, item, *blinded_items.at(item.scenario_id),
                questions.at(item.scenario_id), {BaseCondition::ignore_information, false},
                Flavor::prefill, lexicons);
            expect(trace.valid, "trace invalid for " + bias_item_key(item));
            const double blinded_logodds =
                trace.observation.blinded_yes - trace.observation.blinded_no;
            expect_near(trace.marginalized.value, blinded_logodds, 1e-9,
                        "full-deferral identity for " + bias_item_key(item));
            expect(!trace.leak.any_leak(), "generated inner prompt leaked");
        }

        // Equal conditionals: result independent of the blinded input.
        for (double p_cond : {0.3, 0.7, 0.95}) {
            double reference = 0.0;
            bool first = true;
            for (double p_blind : {0.01, 0.2, 0.5, 0.8, 0.99}) {
                DeferralObservation obs;
                obs.blinded_yes = std::log(p_blind);
                obs.blinded_no = std::log(1.0 - p_blind);
                obs.yes_given_yes = std::log(p_cond);
                obs.no_given_yes = std::log(1.0 - p_cond);
                obs.yes_given_no = std::log(p_cond);
                obs.no_given_no = std::log(1.0 - p_cond);
                const double v = marginalize_deferral(obs).value;
                if (first) {
                    reference = v;
                    first = false;
                } else {
                    expect_near(v, reference, 1e-12, "equal-conditional independence");
                }
            }
        }

        // Worked case against the independent long-double oracle.
        DeferralObservation obs;
        obs.blinded_yes = std::log(0.6);
        obs.blinded_no = std::log(0.4);
        obs.yes_given_yes = std::log(0.9);
        obs.no_given_yes = std::log(0.1);
        obs.yes_given_no = std::log(0.2);
        obs.no_given_no = std::log(0.8);
        const long double p_y = 0.6L * 0.9L + 0.4L * 0.2L;
        const long double oracle = logl(p_y) - logl(1.0L - p_y);
        expect_near(marginalize_deferral(obs).value, 0.48954822531870579, 1e-5,
                    "worked case vs frozen value");
        expect_near(marginalize_deferral(obs).value, static_cast<double>(oracle), 1e-12,
                    "worked case vs direct-arithmetic oracle");
    });
}

TEST_CASE("criterion 5: bias recovery through the regression pipeline") {
    run_criterion("bias recovery: offsets within 1e-9, LR p<.001, null mock clean", [] {
        const auto templates = load_scenarios(kDataDir + "/scenarios.tsv");
        const auto battery_mem = generate_bias_battery(templates);
        BiasBatteryFile battery;
        battery.demographic = battery_mem.demographic;
        battery.blinded = battery_mem.blinded;
        for (const auto& t : templates) {
            battery.questions[t.id] = t.question;
        }
        RunConfig config;
        config.track = Track::bias;
        config.interventions = {{BaseCondition::default_condition, false}};
        config.replicates = 1;
        config.parallelism = 4;
        config.endpoint.flavor = Flavor::prefill;
        const auto lexicons = LeakLexicons::load(kDataDir);

        MockModelSpec spec;
        spec.scenario_bases = scenario_anchors(templates, scenario_base);
        spec.race_offsets["Black"] = 0.8;
        spec.gender_offsets["female"] = -0.5;
        auto client = in_process_client(spec);
        const auto results = execute_bias_track(client, battery, config, lexicons);
        expect(results.failures.empty(), "cells failed");
        const auto stats = analyze_bias_condition("default", results.conditions.at("default"),
                                                  results.blinded);
        std::map<std::string, double> coefs;
        for (const auto& c : stats.coefficients) {
            coefs[c.term] = c.estimate;
        }
        expect_near(coefs.at("race_Black"), 0.8, 1e-9, "race_Black coefficient");
        expect_near(coefs.at("gender_female"), -0.5, 1e-9, "gender_female coefficient");
        expect_near(coefs.at("blinded"), 1.0, 1e-9, "blinded slope");
        expect_near(coefs.at("race_Asian"), 0.0, 1e-9, "race_Asian coefficient");
        expect_near(coefs.at("race_Hispanic"), 0.0, 1e-9, "race_Hispanic coefficient");
        expect(stats.lr_demographics.p < 0.001, "LR test not significant at p<.001");

        MockModelSpec null_spec;
        null_spec.scenario_bases = scenario_anchors(templates, scenario_base);
        auto null_client = in_process_client(null_spec);
        const auto null_results = execute_bias_track(null_client, battery, config, lexicons);
        const auto null_stats = analyze_bias_condition(
            "default", null_results.conditions.at("default"), null_results.blinded);
        for (const auto& c : null_stats.coefficients) {
            if (c.term == "blinded") {
                expect_near(c.estimate, 1.0, 1e-9, "null mock blinded slope");
            } else if (c.term != "intercept") {
                expect_near(c.estimate, 0.0, 1e-9, "null mock coefficient " + c.term);
            }
        }
        expect_near(null_stats.lr_demographics.chi2, 0.0, 1e-9, "null mock chi2");
        expect(null_stats.lr_demographics.p == 1.0, "null mock LR p should be 1");
    });
}

TEST_CASE("criterion 6: sycophancy recovery over the served wire path") {
    run_criterion("sycophancy: diff-in-diff 4.0 (1e-9) via HTTP mock; content-only 0 (1e-12)",
                  [] {
        const auto disputes = load_disputes(kDataDir + "/disputes.tsv");
        MockModelSpec spec;
        spec.dispute_preferences = dispute_anchors(disputes, dispute_preference);
        spec.sycophancy_offset = 2.0;

        MockServer server{MockModel(spec)};
        server.start();
        ModelEndpoint endpoint;
        endpoint.base_url = server.base_url();
        endpoint.model_name = "mock";
        endpoint.flavor = Flavor::prefill;
        ModelClient client(endpoint, nullptr); // real HTTP transport

        RunConfig config;
        config.track = Track::sycophancy;
        config.interventions = {{BaseCondition::default_condition, false}};
        config.replicates = 1;
        config.parallelism = 4;
        config.endpoint = endpoint;

        const auto battery = generate_sycophancy_battery(disputes, 42);
        const auto results = execute_sycophancy_track(client, battery, config);
        server.stop();
        expect(results.failures.empty(), "cells failed over the wire path");
        const auto stats = analyze_syc_condition("default", results.conditions.at("default"),
                                                 results.blinded);
        expect(stats.complete_disputes == 60, "expected 60 complete disputes");
        for (const auto& row : stats.disputes) {
            expect_near(row.diff_in_diff, 4.0, 1e-9,
                        "diff-in-diff, dispute " + std::to_string(row.dispute_id));
        }
        expect_near(stats.mean_diff.mean, 4.0, 1e-9, "mean diff-in-diff over 60 disputes");

        // Content-only mock: user-labeling invariance.
        MockModelSpec content_only;
        content_only.dispute_preferences = dispute_anchors(disputes, dispute_preference);
        auto content_client = in_process_client(content_only);
        const auto content_results =
            execute_sycophancy_track(content_client, battery, config);
        const auto content_stats = analyze_syc_condition(
            "default", content_results.conditions.at("default"), content_results.blinded);
        for (const auto& row : content_stats.disputes) {
            expect_near(row.diff_in_diff, 0.0, 1e-12,
                        "content-only diff-in-diff, dispute " +
                            std::to_string(row.dispute_id));
        }
    });
}

TEST_CASE("criterion 7: selective-deferral analytics") {
    run_criterion("selective deferral: favorable 1.0 vs unfavorable 0.0, oracle 1e-9", [] {
        const auto disputes = load_disputes(kDataDir + "/disputes.tsv");
        MockModelSpec spec;
        spec.dispute_preferences = dispute_anchors(disputes, dispute_preference);
        spec.sycophancy_offset = 3.0; // dominates |content| <= 2 so overrides always show
        spec.deferral_compliance_favorable = 1.0;
        spec.deferral_compliance_unfavorable = 0.0;
        auto client = in_process_client(spec);

        const auto battery = generate_sycophancy_battery(disputes, 42);
        std::vector<SelfCallTrace> traces;
        for (const auto& user_item : battery.user_labeled) {
            const auto* inner = matching_blinded_variant(battery, user_item);
            expect(inner != nullptr, "no blinded variant");
            auto trace = run_self_call_deferral_sycophancy(
                client, user_item, *inner, {BaseCondition::default_condition, false},
                Flavor::prefill);
            expect(trace.valid, "invalid trace " + trace.item_key);

            // Branch-enumeration oracle: expected six logits from the mock
            // formulas, then the marginalization steps in long double.
            const auto& uf = user_item.user_labeled_framing();
            const bool user_is_a = uf.user_side == PartySide::a;
            const double c = dispute_preference(user_item.dispute_id);
            const double eps = 1e-12;
            const auto clamp = [&](double p) {
                return std::min(1.0 - eps, std::max(eps, p));
            };
            const double p_blinded_a = clamp(sigmoid(c)); // primacy 0, A-space
            const double own_toward_user = (user_is_a ? c : -c) + 3.0;
            const double own_p_user = sigmoid(own_toward_user);
            // Branch verdict = A wins: favorable iff the user is A.
            const double w_a = user_is_a ? 1.0 : 0.0;
            const double w_b = user_is_a ? 0.0 : 1.0;
            const double p_user_given_a = clamp(w_a * 1.0 + (1.0 - w_a) * own_p_user);
            const double p_user_given_b = clamp(w_b * 1.0 + (1.0 - w_b) * own_p_user);
            const long double p_a_given_a = user_is_a ? p_user_given_a : 1.0 - p_user_given_a;
            const long double p_a_given_b = user_is_a ? p_user_given_b : 1.0 - p_user_given_b;
            const long double p_a =
                static_cast<long double>(p_blinded_a) * p_a_given_a +
                (1.0L - static_cast<long double>(p_blinded_a)) * p_a_given_b;
            const double oracle = static_cast<double>(logl(p_a) - logl(1.0L - p_a));
            expect_near(trace.marginalized.value, oracle, 1e-9,
                        "marginalized vs branch-enumeration oracle, " + trace.item_key);
            traces.push_back(std::move(trace));
        }
        const auto rates = deferral_rates(traces);
        expect(rates.favorable.has_value() && rates.unfavorable.has_value(),
               "favorability split missing");
        expect(*rates.favorable == 1.0,
               "favorable rate " + fmt_double(*rates.favorable) + " != 1.0");
        expect(*rates.unfavorable == 0.0,
               "unfavorable rate " + fmt_double(*rates.unfavorable) + " != 0.0");
    });
}

TEST_CASE("criterion 8: statistics oracles") {
    run_criterion("chi2/t tails within 1e-10 of the reference table; paired t worked case", [] {
        std::ifstream in(kFixtureDir + "/stats_reference.tsv");
        expect(in.good(), "missing stats reference fixture");
        std::string line;
        int rows = 0;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') {
                continue;
            }
            std::istringstream ss(line);
            std::string statistic;
            int df = 0;
            double x = 0.0, want = 0.0;
            ss >> statistic >> df >> x >> want;
            expect(!ss.fail(), "bad fixture row: " + line);
            if (df > 10) {
                continue; // criterion covers df <= 10
            }
            double got = 0.0;
            if (statistic == "chi2_sf") {
                got = chi2_sf(x, df);
            } else if (statistic == "t_sf") {
                got = t_sf(x, df);
            } else {
                got = t_two_sided(x, df);
            }
            expect(std::fabs(got - want) <= 1e-10 * std::max(want, 1e-300),
                   "tail probability off for " + line);
            ++rows;
        }
        expect(rows > 300, "reference table unexpectedly small");

        const std::vector<double> diffs{1.0, 2.0, 3.0};
        const auto t = paired_t(diffs);
        expect_near(t.t, 3.4641016151377546, 1e-6, "paired t on {1,2,3}");
        expect_near(t.cohens_d, 2.0, 1e-6, "Cohen's d on {1,2,3}");
        expect(t.df == 2, "df on {1,2,3}");
    });
}

TEST_CASE("criterion 9: replay determinism") {
    run_criterion("analyze+report replay from cache is byte-identical, offline", [] {
        const fs::path dir = fs::temp_directory_path() / "blindfold_acceptance_replay";
        fs::remove_all(dir);
        fs::create_directories(dir);

        const auto templates = load_scenarios(kDataDir + "/scenarios.tsv");
        MockModelSpec spec;
        spec.scenario_bases = scenario_anchors(templates, scenario_base);
        spec.race_offsets["Black"] = 0.8;
        spec.gender_offsets["female"] = -0.5;
        spec.deferral_compliance = 1.0;
        write_text_file(dir / "mock.json", spec.to_json().dump(2) + "\n");

        RunConfig config;
        config.endpoint.model_name = "mock";
        config.endpoint.flavor = Flavor::prefill;
        config.mock_spec_path = (dir / "mock.json").string();
        config.track = Track::bias;
        config.interventions = {{BaseCondition::default_condition, false},
                                {BaseCondition::remove_in_context, false},
                                {BaseCondition::ignore_information, true}};
        config.replicates = 1;
        config.parallelism = 4;
        config.scenarios_path = kDataDir + "/scenarios.tsv";
        config.lexicon_dir = kDataDir;
        config.output_dir = (dir / "run").string();

        cmd_generate(config);
        const auto run_outcome = cmd_run(config);
        expect(run_outcome.failed_cells == 0, "run had failed cells");

        // First pass: offline analyze + report (cmd_analyze always replays).
        cmd_analyze(config.output_dir);
        cmd_report(config.output_dir);
        const auto analysis_1 = snapshot_files(fs::path(config.output_dir) / "analysis");
        const auto figures_1 = snapshot_files(fs::path(config.output_dir) / "figures");
        expect(!analysis_1.empty() && !figures_1.empty(), "no artifacts produced");

        cmd_analyze(config.output_dir);
        cmd_report(config.output_dir);
        expect(snapshot_files(fs::path(config.output_dir) / "analysis") == analysis_1,
               "analysis artifacts changed across replays");
        expect(snapshot_files(fs::path(config.output_dir) / "figures") == figures_1,
               "figures changed across replays");
        fs::remove_all(dir);
    });
}

TEST_CASE("criterion 10: prompt-string fidelity") {
    run_criterion("prompt strings byte-match the fixture files", [] {
        const std::string dir = kFixtureDir + "/prompts/";
        const auto match = [&](std::string_view constant, const std::string& file) {
            expect(std::string(constant) == slurp(dir + file), "drift in " + file);
        };
        match(prompt_text::bias_instruction_default, "bias_instruction_default.txt");
        match(prompt_text::bias_instruction_dont_discriminate,
              "bias_instruction_dont_discriminate.txt");
        match(prompt_text::bias_instruction_ignore, "bias_instruction_ignore.txt");
        match(prompt_text::bias_instruction_if_you_didnt_know,
              "bias_instruction_if_you_didnt_know.txt");
        match(prompt_text::bias_prefill_default, "bias_prefill_default.txt");
        match(prompt_text::bias_prefill_dont_discriminate,
              "bias_prefill_dont_discriminate.txt");
        match(prompt_text::bias_prefill_ignore, "bias_prefill_ignore.txt");
        match(prompt_text::bias_prefill_if_you_didnt_know,
              "bias_prefill_if_you_didnt_know.txt");
        match(prompt_text::bias_system_prompt, "bias_system_prompt.txt");
        match(prompt_text::ric_rewrite_request, "ric_rewrite_request.txt");
        match(prompt_text::ric_final_question, "ric_final_question.txt");
        match(prompt_text::ric_prefill, "ric_prefill.txt");
        match(prompt_text::syc_question, "syc_question.txt");
        match(prompt_text::syc_instruction_dont_be_sycophantic,
              "syc_instruction_dont_be_sycophantic.txt");
        match(prompt_text::syc_instruction_ignore, "syc_instruction_ignore.txt");
        match(prompt_text::syc_instruction_if_you_didnt_know,
              "syc_instruction_if_you_didnt_know.txt");
        match(prompt_text::syc_answer_format, "syc_answer_format.txt");
        match(prompt_text::syc_prefill, "syc_prefill.txt");
        match(prompt_text::syc_system_prompt, "syc_system_prompt.txt");
        match(prompt_text::syc_blinded_question, "syc_blinded_question.txt");
        match(prompt_text::syc_blinded_system_prompt, "syc_blinded_system_prompt.txt");
        match(prompt_text::tool_name, "tool_name.txt");
        match(prompt_text::tool_description, "tool_description.txt");
        match(prompt_text::tool_param_name, "tool_param_name.txt");
        match(prompt_text::tool_param_description, "tool_param_description.txt");
    });
}
