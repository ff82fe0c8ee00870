/*
 * Copyright 2026 The ucfl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// ucfl: pretrain / run / report.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ucfl/ucfl.hpp"

namespace {

ucfl::ExperimentConfig with_config_file(const ucfl::ExperimentConfig& flags, const std::string& path) {
    if (path.empty()) return flags;
    return ucfl::config_from_json(nlohmann::json::parse(ucfl::read_file(path)), flags);
}

void add_common_flags(CLI::App* cmd, ucfl::ExperimentConfig& c, std::string& config_path) {
    cmd->add_option("-c,--config", config_path, "JSON config (overrides flags)")->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", c.checkpoint, "Autoencoder checkpoint path");
    cmd->add_option("--band-count", c.features.band_count, "Mel bands");
    cmd->add_option("--frame-len", c.features.frame_len_s, "Frame length [s]");
    cmd->add_option("--hop", c.features.hop_s, "Hop size [s]");
    cmd->add_option("--hidden", c.autoencoder.hidden, "Autoencoder hidden widths");
    cmd->add_option("--ae-seed", c.autoencoder.seed, "Autoencoder init seed");
    cmd->add_option("--pretrain-epochs", c.pretrain.epochs, "Pre-training epochs");
    cmd->add_option("--pretrain-lr", c.pretrain.learning_rate, "Pre-training learning rate");
    cmd->add_option("--pretrain-batch", c.pretrain.batch_size, "Pre-training batch size");
    cmd->add_option("--pretrain-seed", c.pretrain.seed, "Pre-training shuffle seed");
    cmd->add_option("--corpus-kind", c.corpus.kind, "synthetic | wav_dir")->check(CLI::IsMember({"synthetic", "wav_dir"}));
    cmd->add_option("--corpus-dir", c.corpus.wav_dir, "WAV directory for corpus-kind=wav_dir");
    cmd->add_option("--corpus-clips", c.corpus.clips, "Synthetic corpus clip count");
    cmd->add_option("--corpus-seed", c.corpus.seed, "Synthetic corpus seed");
    cmd->add_option("-o,--output", c.output_dir, "Output directory (relative paths resolve under $UCFL_OUTPUT_ROOT)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised clustered federated learning for acoustic sensor networks"};
    app.require_subcommand(1);
    ucfl::ExperimentConfig cfg;
    std::string config_path;

    auto* pre = app.add_subcommand("pretrain", "Pre-train the autoencoder and write a checkpoint");
    add_common_flags(pre, cfg, config_path);

    auto* run = app.add_subcommand("run", "Run scenarios and write traces, reports and floor plans");
    add_common_flags(run, cfg, config_path);
    run->add_option("--scene", cfg.scene, "Scene template (2SL, 4SA)");
    run->add_option("--seeds", cfg.seeds, "Scenario seeds");
    std::size_t seed_count = 0;
    run->add_option("-n,--num-seeds", seed_count, "Use seeds 1..n when --seeds is absent");
    run->add_option("--duration", cfg.duration_s, "Rendered audio per node [s]");
    run->add_option("--sensor-noise", cfg.sensor_noise_std, "Sensor noise std");
    run->add_option("--eps2", cfg.cfl.eps2, "Split ratio threshold");
    run->add_option("--eps3", cfg.cfl.eps3, "Rounds without split before stopping");
    run->add_option("--beta", cfg.cfl.beta, "eps1 weighting of mean and max norm");
    run->add_option("--min-rounds", cfg.cfl.min_rounds, "Rounds before a split may happen");
    run->add_option("--max-rounds", cfg.cfl.max_rounds, "Rounds per cluster at most");
    run->add_option("--local-lr", cfg.local.learning_rate, "Client learning rate");
    run->add_option("--local-batch", cfg.local.batch_size, "Client batch size");
    run->add_option("--local-epochs", cfg.local.local_epochs, "Client epochs per round");
    double lambda = -1.0;
    run->add_option("--lambda", lambda, "Balance between intra and inter similarity (default: automatic)");
    run->add_option("--threshold", cfg.threshold, "Membership threshold v");
    run->add_option("--threshold-sweep", cfg.threshold_sweep, "Thresholds evaluated for recognition");
    bool no_recognition = false;
    run->add_flag("--no-recognition", no_recognition, "Skip the recognition evaluation");
    run->add_option("-j,--jobs", cfg.jobs, "Parallel scenario workers");

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "Regenerate aggregate CSVs from scenario_*.json files");
    rep->add_option("dir", report_dir, "Run output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*rep) {
            const auto dir = ucfl::resolve_output_dir(report_dir);
            ucfl::write_aggregate_reports(dir, ucfl::report_directory(dir));
            std::cout << "reports written to " << dir.string() << "\n";
            return 0;
        }
        if (lambda >= 0.0) cfg.lambda = lambda;
        if (no_recognition) cfg.recognition = false;
        if (cfg.seeds.empty())
            for (std::size_t s = 1; s <= seed_count; ++s) cfg.seeds.push_back(s);
        cfg = with_config_file(cfg, config_path);

        if (*pre) {
            ucfl::validate(cfg);
            auto out = ucfl::pretrain_autoencoder(cfg);
            std::string path = cfg.checkpoint.empty() ? (ucfl::resolve_output_dir(cfg.output_dir) / "autoencoder.json").string()
                                                      : cfg.checkpoint;
            std::filesystem::create_directories(std::filesystem::absolute(path).parent_path());
            ucfl::save_checkpoint(path, out.autoencoder);
            std::cout << "frames " << out.frames << "  final loss " << out.autoencoder.final_loss << "  parameters "
                      << out.autoencoder.network.total_parameter_count() << " (trainable "
                      << out.autoencoder.network.trainable_parameter_count() << ")\n"
                      << "checkpoint " << path << "\n";
            return 0;
        }
        const auto outcome = ucfl::run_experiment(cfg);
        std::cout << outcome.completed << " scenario(s) completed, " << outcome.failed << " failed; output in "
                  << outcome.output_dir.string() << "\n";
        return outcome.ok() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
