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

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <string>

#include "ucfl/checkpoint.hpp"
#include "ucfl/experiment.hpp"

using namespace ucfl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("ucfl_test_experiment_" + name);
    fs::remove_all(p);
    return p;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

/// Short signals, a tiny corpus and few rounds.
ExperimentConfig fast_config(const fs::path& dir) {
    ExperimentConfig c;
    c.duration_s = 4.0;
    c.corpus.clips = 2;
    c.corpus.clip_s = 2.0;
    c.pretrain.epochs = 3;
    c.cfl.max_rounds = 5;
    c.recognition = false;
    c.output_dir = (dir / "out").string();
    c.checkpoint = (dir / "ae.json").string();
    return c;
}

const char* kReports[] = {"cts.csv", "cts_long.csv", "cluster_stats.csv", "cluster_counts.csv", "recognition.csv"};

}  // namespace

TEST(Experiment, ZeroSeedsSucceedWithEmptyReports) {
    const auto dir = scratch("zero");
    auto cfg = fast_config(dir);
    cfg.seeds.clear();
    const auto out = run_experiment(cfg);
    EXPECT_TRUE(out.ok());
    EXPECT_EQ(out.completed, 0u);
    for (const char* name : kReports) {
        ASSERT_TRUE(fs::exists(out.output_dir / name)) << name;
        EXPECT_EQ(line_count(read_file(out.output_dir / name)), 1u) << name;
    }
    EXPECT_FALSE(fs::exists(cfg.checkpoint));
    fs::remove_all(dir);
}

TEST(Experiment, FiveSeedsBookkeepingAndDeterminism) {
    const auto dir = scratch("five");
    auto cfg = fast_config(dir);
    cfg.seeds = {1, 2, 3, 4, 5};
    const auto a = run_experiment(cfg);
    ASSERT_TRUE(a.ok());
    EXPECT_EQ(a.completed, 5u);
    const auto cts = read_file(a.output_dir / "cts.csv");
    EXPECT_EQ(line_count(cts), 1u + 5u + 1u);
    EXPECT_NE(cts.find("\nmean,"), std::string::npos);
    EXPECT_EQ(line_count(read_file(a.output_dir / "cluster_counts.csv")), 1u + 5u);
    for (int s = 1; s <= 5; ++s)
        for (const std::string prefix : {"trace_", "membership_", "floorplan_", "scenario_"}) {
            const std::string ext = prefix == "trace_" ? ".jsonl" : prefix == "membership_" ? ".csv"
                                    : prefix == "floorplan_" ? ".svg" : ".json";
            EXPECT_TRUE(fs::exists(a.output_dir / (prefix + std::to_string(s) + ext))) << prefix << s;
        }
    EXPECT_EQ(read_file(a.output_dir / "membership_1.csv").substr(0, 34), "cluster_id,node_id,mu,is_reference");
    EXPECT_NE(read_file(a.output_dir / "floorplan_1.svg").find("<svg"), std::string::npos);

    // Rerun in parallel from the stored checkpoint.
    auto again = cfg;
    again.output_dir = (dir / "out2").string();
    again.jobs = 3;
    const auto b = run_experiment(again);
    ASSERT_TRUE(b.ok());
    for (const char* name : kReports) EXPECT_EQ(read_file(a.output_dir / name), read_file(b.output_dir / name)) << name;
    for (int s = 1; s <= 5; ++s) {
        const auto f = "membership_" + std::to_string(s) + ".csv";
        EXPECT_EQ(read_file(a.output_dir / f), read_file(b.output_dir / f));
    }

    const auto regenerated = report_directory(a.output_dir);
    EXPECT_EQ(regenerated.cts_csv, cts);
    EXPECT_EQ(regenerated.cluster_stats_csv, read_file(a.output_dir / "cluster_stats.csv"));
    fs::remove_all(dir);
}

TEST(Experiment, FailedSeedsAreRecorded) {
    const auto dir = scratch("fail");
    auto cfg = fast_config(dir);
    cfg.seeds = {7};
    cfg.constraints.min_nodes_in_critical_distance = 11;
    cfg.constraints.max_attempts = 50;
    const auto out = run_experiment(cfg);
    EXPECT_FALSE(out.ok());
    EXPECT_EQ(out.failed, 1u);
    const auto log = read_file(out.output_dir / "errors.jsonl");
    EXPECT_NE(log.find("\"seed\":7"), std::string::npos);
    EXPECT_NE(log.find("critical distance"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Experiment, ScenarioWithRecognition) {
    const auto dir = scratch("recog");
    auto cfg = fast_config(dir);
    cfg.recognition = true;
    cfg.classifier_utterances_per_class = 6;
    cfg.classifier.epochs = 2;
    const auto ae = obtain_autoencoder(cfg);
    const auto cls = train_recognizer(cfg);
    const auto r = run_scenario(cfg, ae, &cls, 11);
    EXPECT_EQ(r.node_truth.size(), 10u);
    EXPECT_EQ(r.node_predictions.size(), 10u);
    ASSERT_TRUE(r.cts.has_value());
    EXPECT_EQ(r.memberships.size(), r.leaves.size());
    // mode + one MV row per sweep threshold, for each of the three priors
    EXPECT_EQ(r.recognition.size(), 3u * (1u + cfg.threshold_sweep.size()));
    for (const auto& row : r.recognition) {
        EXPECT_GE(row.score.accuracy, 0.0);
        EXPECT_LE(row.score.accuracy, 1.0);
    }
    std::vector<std::size_t> ids;
    for (const auto& leaf : r.leaves) ids.insert(ids.end(), leaf.begin(), leaf.end());
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], i);
    fs::remove_all(dir);
}

TEST(Pretrain, CheckpointRoundTripAndReuse) {
    const auto dir = scratch("ckpt");
    fs::create_directories(dir);
    auto cfg = fast_config(dir);
    cfg.pretrain.epochs = 1;
    const auto outcome = pretrain_autoencoder(cfg);
    EXPECT_EQ(outcome.losses.size(), 1u);
    EXPECT_GT(outcome.frames, 0u);
    save_checkpoint(cfg.checkpoint, outcome.autoencoder);
    const auto back = load_checkpoint(cfg.checkpoint);
    EXPECT_EQ(back, outcome.autoencoder);
    EXPECT_EQ(back.network.trainable_parameter_count(), 72u);
    // obtain_autoencoder loads the existing file instead of training again.
    auto other = cfg;
    other.pretrain.epochs = 50;
    EXPECT_EQ(obtain_autoencoder(other), back);
    fs::remove_all(dir);
}

TEST(Pretrain, EmptyCorpusRejected) {
    const auto dir = scratch("empty");
    fs::create_directories(dir / "wavs");
    auto cfg = fast_config(dir);
    cfg.corpus.kind = "wav_dir";
    cfg.corpus.wav_dir = (dir / "wavs").string();
    EXPECT_THROW(pretrain_autoencoder(cfg), Error);
    fs::remove_all(dir);
}

TEST(Pretrain, WavCorpus) {
    const auto dir = scratch("wav");
    fs::create_directories(dir / "wavs");
    write_wav(dir / "wavs" / "a.wav", make_source_signal("low-f0", 1.0, 1));
    auto cfg = fast_config(dir);
    cfg.corpus.kind = "wav_dir";
    cfg.corpus.wav_dir = (dir / "wavs").string();
    const auto frames = pretraining_frames(cfg.corpus, cfg.features);
    EXPECT_EQ(frames.cols(), 128u);
    EXPECT_EQ(frames.rows(), 30u);
    fs::remove_all(dir);
}

TEST(Config, JsonOverridesDefaults) {
    const auto j = nlohmann::json::parse(R"({
        "scene": "4SA", "seeds": [3, 4], "duration_s": 12.5,
        "cfl": {"eps2": 0.7, "max_rounds": 9, "learning_rate": 0.03},
        "lambda": 0.25, "threshold": 0.9, "jobs": 2,
        "autoencoder": {"hidden": [40, 28, 29, 40]},
        "classifier": {"utterances_per_class": 12}
    })");
    const auto c = config_from_json(j);
    EXPECT_EQ(c.scene, "4SA");
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_EQ(c.duration_s, 12.5);
    EXPECT_EQ(c.cfl.eps2, 0.7);
    EXPECT_EQ(c.cfl.max_rounds, 9u);
    EXPECT_EQ(c.local.learning_rate, 0.03);
    EXPECT_EQ(c.lambda, std::optional<double>{0.25});
    EXPECT_EQ(c.threshold, 0.9);
    EXPECT_EQ(c.jobs, 2u);
    EXPECT_EQ(c.classifier_utterances_per_class, 12u);
    EXPECT_EQ(build_autoencoder(c.autoencoder).network.trainable_parameter_count(), 841u);
    EXPECT_EQ(c.scene_template().sources.size(), 4u);
    EXPECT_FALSE(config_from_json(nlohmann::json::parse(R"({"lambda": "auto"})"), c).lambda.has_value());
}

TEST(Config, CustomScene) {
    const auto j = nlohmann::json::parse(R"({"scene": {"name": "studio",
        "rooms": [{"name": "a", "rect": [0, 0, 3, 3], "t60": 0.3, "nodes": 6}],
        "sources": [{"room": 0, "class": "low-f0"}, {"room": 0, "class": "high-f0"}]}})");
    const auto c = config_from_json(j);
    const auto t = c.scene_template();
    EXPECT_EQ(t.name, "studio");
    EXPECT_EQ(t.nodes_per_room, (std::vector<std::size_t>{6}));
    EXPECT_NO_THROW(validate(c));
    const auto bad = nlohmann::json::parse(R"({"scene": {"rooms": [{"rect": [0, 0, 3], "t60": 0.3, "nodes": 6}], "sources": []}})");
    EXPECT_THROW(config_from_json(bad), Error);
}

TEST(Config, ValidationRejectsBadValues) {
    auto check = [](auto mutate) {
        ExperimentConfig c;
        mutate(c);
        EXPECT_THROW(validate(c), Error);
    };
    EXPECT_NO_THROW(validate(ExperimentConfig{}));
    check([](ExperimentConfig& c) { c.cfl.eps2 = 0.0; });
    check([](ExperimentConfig& c) { c.cfl.eps2 = 1.5; });
    check([](ExperimentConfig& c) { c.threshold = 1.1; });
    check([](ExperimentConfig& c) { c.threshold_sweep = {0.5, -0.1}; });
    check([](ExperimentConfig& c) { c.lambda = 2.0; });
    check([](ExperimentConfig& c) { c.cfl.beta = -0.1; });
    check([](ExperimentConfig& c) { c.duration_s = 0.0; });
    check([](ExperimentConfig& c) { c.local.learning_rate = 0.0; });
    check([](ExperimentConfig& c) { c.corpus.kind = "mp3"; });
    check([](ExperimentConfig& c) {
        c.corpus.kind = "wav_dir";
        c.corpus.wav_dir = "/nonexistent/ucfl";
    });
    check([](ExperimentConfig& c) { c.scene = "5XY"; });
}

TEST(Reports, AggregateFromSummaries) {
    const auto s1 = nlohmann::json::parse(R"({"seed": 2, "sources": 2, "clusters": 3, "slot_sizes": [4, 3, 3],
        "cts": [[0.1, 0.9], [0.8, 0.2], [0.5, 0.6]], "cts_mean_diagonal": 0.15, "cts_mean_off_diagonal": 0.85,
        "recognition": [{"prior": "all", "aggregation": "mode", "threshold": -1, "accuracy": 1.0, "f1": 1.0, "clusters": 3}]})");
    const auto s0 = nlohmann::json::parse(R"({"seed": 1, "sources": 2, "clusters": 2, "slot_sizes": [6, 4],
        "cts": [[0.3, 0.7], [0.9, 0.1]], "cts_mean_diagonal": 0.2, "cts_mean_off_diagonal": 0.8,
        "recognition": [{"prior": "all", "aggregation": "mode", "threshold": -1, "accuracy": 0.5, "f1": 0.0, "clusters": 2}]})");
    const auto rep = aggregate_reports({s1, s0});
    EXPECT_EQ(rep.cts_csv,
              "seed,clusters,mean_diagonal,mean_off_diagonal,d_c1_s1,d_c1_s2,d_c2_s1,d_c2_s2\n"
              "1,2,0.2,0.8,0.3,0.7,0.9,0.1\n"
              "2,3,0.15,0.85,0.1,0.9,0.8,0.2\n"
              "mean,2.5,0.175,0.825,0.2,0.8,0.85,0.15\n");
    EXPECT_EQ(rep.cluster_stats_csv, "slot,n_scenarios,mean_nodes\n1,2,5\n2,2,3.5\n3,1,3\n");
    EXPECT_EQ(rep.cluster_counts_csv, "seed,sources,clusters,plausible\n1,2,2,1\n2,2,3,1\n");
    EXPECT_EQ(rep.recognition_csv, "prior,aggregation,threshold,accuracy,f1,scenarios\nall,mode,none,0.75,0.5,2\n");
    EXPECT_EQ(line_count(rep.cts_long_csv), 1u + 4u + 6u);
}
