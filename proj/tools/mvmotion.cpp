#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvmotion/cli.hpp"

namespace cli = mvmotion::cli;

int main(int argc, char **argv) {
    CLI::App app{"Multi-view 3D myocardial motion tracking on synthetic studies"};
    app.set_version_flag("--version", std::string("mvmotion ") + cli::version);
    app.require_subcommand(1);

    std::string config, out, study, method;
    std::vector<std::string> fields;
    std::uint64_t seed = 0;
    int threads = 0;

    auto *phantom = app.add_subcommand("phantom", "generate a synthetic study");
    phantom->add_option("--config", config, "phantom config JSON")->check(CLI::ExistingFile);
    phantom->add_option("--out", out, "output study directory")->required();
    auto *seed_opt = phantom->add_option("--seed", seed, "RNG seed, overrides the config");

    auto *track = app.add_subcommand("track", "estimate ED->t fields for every frame");
    track->add_option("--study", study, "study directory")->required()->check(CLI::ExistingDirectory);
    track->add_option("--config", config, "tracker config JSON")->check(CLI::ExistingFile);
    track->add_option("--out", out, "output fields directory")->required();
    track->add_option("--threads", threads, "worker threads, 0 = sequential")->check(CLI::NonNegativeNumber);

    auto *baseline = app.add_subcommand("baseline", "run a classical SAX-only baseline");
    baseline->add_option("--study", study, "study directory")->required()->check(CLI::ExistingDirectory);
    baseline->add_option("--method", method, "demons or ffd")->required();
    baseline->add_option("--config", config, "baseline config JSON")->check(CLI::ExistingFile);
    baseline->add_option("--out", out, "output fields directory")->required();
    baseline->add_option("--threads", threads, "worker threads, 0 = sequential")->check(CLI::NonNegativeNumber);

    auto *eval = app.add_subcommand("eval", "ED->ES metrics for one or more field sets");
    eval->add_option("--study", study, "study directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--fields", fields, "field set directory (repeatable)")->required();
    eval->add_option("--out", out, "output CSV")->required();

    auto *report = app.add_subcommand("report", "volume curve, strains and wall thickness");
    report->add_option("--study", study, "study directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--fields", fields, "field set directory")->required()->expected(1);
    report->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return cli::validation_failure;
    }

    std::optional<std::filesystem::path> cfg;
    if (!config.empty()) cfg = config;

    return cli::guarded([&]() -> int {
        if (phantom->parsed()) {
            std::optional<std::uint64_t> s;
            if (seed_opt->count()) s = seed;
            return cli::cmd_phantom({cfg, out, s});
        }
        if (track->parsed()) return cli::cmd_track({study, cfg, out, threads});
        if (baseline->parsed()) return cli::cmd_baseline({study, method, cfg, out, threads});
        if (eval->parsed()) {
            std::vector<std::filesystem::path> dirs(fields.begin(), fields.end());
            return cli::cmd_eval({study, dirs, out});
        }
        return cli::cmd_report({study, fields.front(), out});
    });
}
