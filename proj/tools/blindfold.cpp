// Command-line harness for measuring decision bias and sycophancy in chat
// models against truly blinded baselines.
//
//   blindfold generate  --config cfg.json
//   blindfold run       --config cfg.json [--offline] [--parallelism N] [--replicates N]
//   blindfold analyze   --run-dir DIR
//   blindfold report    --run-dir DIR
//   blindfold serve-mock --spec mock.json [--port P]
//   blindfold audit     --battery battery.jsonl [--derive-race-spans] [--lexicons DIR]
//
// Exit codes: 0 success, 1 validation failure, 2 transport exhaustion,
// 3 analysis incompleteness.

#include <csignal>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "blindfold/analysis.hpp"
#include "blindfold/interventions.hpp"
#include "blindfold/mock_server.hpp"
#include "blindfold/runner.hpp"

using namespace blindfold;

namespace {

volatile std::sig_atomic_t g_stop_requested = 0;

void handle_signal(int) { g_stop_requested = 1; }

int run_audit(const std::string& battery_path, bool derive_spans,
              const std::string& lexicon_dir) {
    std::vector<FilledPrompt> prompts;
    std::istringstream in(read_text_file(battery_path));
    std::string line;
    const auto race_terms = lexicon_dir.empty()
                                ? LeakLexicons::standard().race_terms
                                : LeakLexicons::load(lexicon_dir).race_terms;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        FilledPrompt p = bias_prompt_from_json(json::parse(line));
        if (!p.spans_recorded && derive_spans) {
            p.substituted_spans = derive_race_spans(p.text, race_terms);
            p.spans_recorded = true;
        }
        prompts.push_back(std::move(p));
    }
    const auto report = audit_battery_consistency(prompts);
    std::cout << "groups: " << report.groups.size() << "\n";
    std::cout << "identical: " << report.identical_count << "\n";
    std::cout << "identical_fraction: " << fmt_double(report.identical_fraction) << "\n";
    for (int id : report.divergent_group_ids()) {
        std::cout << "divergent_group: " << id << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Blinded-baseline bias and sycophancy measurement harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string run_dir;
    std::string spec_path;
    std::string battery_path;
    std::string lexicon_dir;
    bool offline = false;
    bool derive_spans = false;
    int port = 0;
    int parallelism_override = 0;
    int replicates_override = 0;

    auto* generate = app.add_subcommand("generate", "Render batteries from data files");
    generate->add_option("--config", config_path, "Run configuration JSON")->required();

    auto* run = app.add_subcommand("run", "Execute every (item, condition, replicate) cell");
    run->add_option("--config", config_path, "Run configuration JSON")->required();
    run->add_flag("--offline", offline, "Replay from cache only; fail on cache misses");
    run->add_option("--parallelism", parallelism_override, "Override request parallelism");
    run->add_option("--replicates", replicates_override, "Override replicate count");

    auto* analyze = app.add_subcommand("analyze", "Derive tables from cached responses");
    analyze->add_option("--run-dir", run_dir, "Run directory")->required();

    auto* report = app.add_subcommand("report", "Render SVG figures from analysis output");
    report->add_option("--run-dir", run_dir, "Run directory")->required();

    auto* serve = app.add_subcommand("serve-mock", "Serve the deterministic mock over HTTP");
    serve->add_option("--spec", spec_path, "Mock model spec JSON")->required();
    serve->add_option("--port", port, "Port (0 picks a free one)");

    auto* audit = app.add_subcommand("audit", "Cross-condition consistency audit of a battery");
    audit->add_option("--battery", battery_path, "Battery JSONL file")->required();
    audit->add_flag("--derive-race-spans", derive_spans,
                    "Derive race spans lexically for batteries without span metadata");
    audit->add_option("--lexicons", lexicon_dir, "Lexicon directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            const auto config = RunConfig::load(config_path);
            const auto result = cmd_generate(config);
            std::cout << "battery: " << result.battery_path.string() << "\n";
            for (const auto& [file, digest] : result.digests) {
                std::cout << "digest " << file << ": " << digest << "\n";
            }
            return 0;
        }
        if (run->parsed()) {
            auto config = RunConfig::load(config_path);
            if (parallelism_override > 0) {
                config.parallelism = parallelism_override;
            }
            if (replicates_override > 0) {
                config.replicates = replicates_override;
            }
            const auto outcome = cmd_run(config, offline);
            std::cout << "manifest: " << outcome.manifest_path.string() << "\n";
            std::cout << "cache: " << outcome.cache_path.string() << "\n";
            std::cout << "failed_cells: " << outcome.failed_cells << "\n";
            return outcome.failed_cells == 0 ? 0 : 2;
        }
        if (analyze->parsed()) {
            const auto outcome = cmd_analyze(run_dir);
            std::cout << "analysis: " << outcome.analysis_dir.string() << "\n";
            std::cout << "excluded_cells: " << outcome.excluded_cells << "\n";
            return outcome.excluded_cells == 0 ? 0 : 3;
        }
        if (report->parsed()) {
            const auto outcome = cmd_report(run_dir);
            for (const auto& file : outcome.files) {
                std::cout << "figure: " << (outcome.figures_dir / file).string() << "\n";
            }
            return 0;
        }
        if (serve->parsed()) {
            const auto spec = MockModelSpec::from_json(json::parse(read_text_file(spec_path)));
            MockServer server{MockModel(spec), port};
            server.start();
            std::cout << "serving mock on " << server.base_url() << std::endl;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            while (g_stop_requested == 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
            server.stop();
            return 0;
        }
        if (audit->parsed()) {
            return run_audit(battery_path, derive_spans, lexicon_dir);
        }
    } catch (const validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const transport_error& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 2;
    } catch (const analysis_error& e) {
        std::cerr << "analysis error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
