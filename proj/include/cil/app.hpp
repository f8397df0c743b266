#pragma once

// ---------------------------------------------------------------------------
// Experiment runner behind the `cil` command line tool.
//
// Config file (JSON), every field optional:
//
//   {
//     "seed": 0,
//     "dataset": {
//       "path": null, "eval_path": null,   // files; synthetic data when null
//       "eval_fraction": 0.3,              // split when eval_path is null
//       "synthetic": { "n_classes": 10, "feature_dim": 16, "clips_per_class": 400,
//                      "zipf_exponent": 1.0, "max_labels": 5, "noise_sigma": 0.2,
//                      "cooccur_temperature": 4.0 }
//     },
//     "plan": { "base": 4, "increment": 2, "increments": 3 }
//            | { "classes": [[...], [...], ...] },
//     "strategy": "IODFD",
//     "strategies": ["FT", "FE", ...],      // compare; default: all eight
//     "train": { "epochs": 120, "batch_size": 32, "momentum": 0.9,
//                "lr_initial": 0.01, "lr_incremental": 0.001,
//                "omega": 2.0, "delta": 2.0, "eps": 1e-8, "threshold": 0.5,
//                "hidden": [64, 64], "embedding_dim": 32, "init_scale": 0.01 },
//     "drop_overlap": false,
//     "out": "results"
//   }
//
// Result files are JSON lines. Phase records carry
//   record="phase", strategy, phase, incremental, classes, macro_f1, map, fr,
//   per_class_f1, weight_norms, lambda, labels_histogram
// and the final line is
//   record="summary", strategy, phases, avg_f1, avg_map, avg_fr.
// ---------------------------------------------------------------------------

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cil/data.hpp"
#include "cil/trainer.hpp"

namespace cil {

enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_runtime = 2 };

struct PlanSpec {
    std::size_t base = 4;
    std::size_t increment = 2;
    std::size_t increments = 3;
    std::optional<std::vector<std::vector<int>>> classes;  // explicit plan overrides the sizes
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> dataset_path;
    std::optional<std::filesystem::path> eval_path;
    double eval_fraction = 0.3;
    SynthConfig synth;
    PlanSpec plan;
    Strategy strategy = Strategy::iodfd;
    std::vector<Strategy> strategies = all_strategies();
    TrainConfig train;
    bool drop_overlap = false;
    std::filesystem::path out = "results";
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

// Overrides the seed everywhere it is used (data, plan, training).
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

struct ExperimentData {
    Dataset train;
    Dataset eval;
    PhasePlan plan;
};

// Loads or generates train/eval data and builds the validated phase plan.
ExperimentData prepare_data(const ExperimentConfig& cfg);

nlohmann::json phase_record(const PhaseReport& report, Strategy strategy);
nlohmann::json summary_record(const RunReport& run);
std::string results_jsonl(const RunReport& run);

// Returns an empty string when the record matches the documented schema,
// otherwise a description of the first violation.
std::string validate_result_record(const nlohmann::json& record);

// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

int cmd_gen_data(const ExperimentConfig& cfg, bool force, std::ostream& log);
int cmd_run(const ExperimentConfig& cfg, std::ostream& log);
int cmd_compare(const ExperimentConfig& cfg, std::ostream& log);
int cmd_gradcheck(std::ostream& log, const std::string& corrupt_item = "");

// CIL_LOG_LEVEL: 0 quiet, 1 progress (default), 2 per-epoch detail.
int log_level();

}  // namespace cil
