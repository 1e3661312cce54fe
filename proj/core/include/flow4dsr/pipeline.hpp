#pragma once

#include "flow4dsr/dataset.hpp"
#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/metrics.hpp"
#include "flow4dsr/net.hpp"
#include "flow4dsr/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flow4dsr {

struct SourceSpec {
    std::string name;
    std::string role; // "train" | "test"
    FlowSpec flow;
};

/// Parsed pipeline configuration (one JSON document). Flag overrides are
/// applied before derived seeds are computed; precedence flag > config >
/// default.
struct PipelineConfig {
    std::uint64_t seed = 1;
    Grid3 grid{{48, 48, 48}, {0.594, 0.594, 0.594}};
    int frames = 71;
    std::vector<SourceSpec> sources;
    AugmentationPolicy augmentation;
    NetConfig net;
    TrainConfig train;
    int infer_patch_size = 32;
    MetricConfig metric;
    std::vector<std::pair<Axis, int>> planes;
    std::int64_t bland_altman_samples = 50000;
    std::filesystem::path out_dir = "out";

    void validate() const;
    const SourceSpec* test_source() const;
    std::vector<const SourceSpec*> train_sources() const;
};

PipelineConfig config_from_json_text(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path,
                           std::optional<std::uint64_t> seed_override = {},
                           std::optional<std::filesystem::path> out_override = {});

/// generate: write one F4D1 frame container per source
/// (<out>/frames_<name>.f4d1: vx, vy, vz, mask + frame time).
std::vector<std::filesystem::path> run_generate(const PipelineConfig& cfg);

struct BuildDatasetResult {
    DatasetManifest manifest;
    std::filesystem::path train_path, val_path, test_lr_path, test_hr_path;
};

/// build-dataset: downsample + augment + patch + rotate + normalize. Train
/// patches come from the train sources, validation patches (1 origin/frame
/// x 10 variants) and full LR/HR test volumes from the held-out test source.
BuildDatasetResult run_build_dataset(const PipelineConfig& cfg);

struct TrainCommandResult {
    TrainResult result;
    std::filesystem::path checkpoint_path;
};

TrainCommandResult run_train(const PipelineConfig& cfg);

/// predict: super-resolve every frame of an LR volume container.
std::filesystem::path run_predict(const PipelineConfig& cfg,
                                  const std::filesystem::path& input,
                                  const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& output);

/// evaluate: compare a predicted container against ground truth (and the
/// interpolation baselines when the LR container is given); writes
/// reports.json and a per-frame TSV summary. Returns the report list.
std::vector<MetricReport> run_evaluate(const PipelineConfig& cfg,
                                       const std::filesystem::path& pred_path,
                                       const std::filesystem::path& truth_path,
                                       const std::optional<std::filesystem::path>& lr_path,
                                       const std::filesystem::path& report_dir);

} // namespace flow4dsr
