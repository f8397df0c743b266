#pragma once

// ---------------------------------------------------------------------------
// Phase-wise training: strategy recipes, the per-phase optimization loop and
// the full class-incremental run with expanding evaluation after each phase.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cil/data.hpp"
#include "cil/losses.hpp"
#include "cil/metrics.hpp"
#include "cil/model.hpp"

namespace cil {

enum class Strategy { ft, fe, at, indl_only, od_only, iod, ifd, iodfd };

struct StrategyFlags {
    bool indl_mask = false;
    bool use_od = false;
    bool use_fd = false;
    bool freeze_extractor = false;
    bool freeze_old_classifier = false;
    bool retrain_from_scratch = false;

    LossTerms loss_terms() const { return {indl_mask, use_od, use_fd}; }
};

StrategyFlags flags_for(Strategy s);
std::string_view to_string(Strategy s);
// Accepts the upper-case names (FT, FE, AT, INDL_ONLY, OD_ONLY, IOD, IFD, IODFD), any case.
Strategy parse_strategy(std::string_view name);
std::vector<Strategy> all_strategies();

struct TrainConfig {
    int epochs = 120;
    std::size_t batch_size = 32;
    double momentum = 0.9;
    double lr_initial = 0.01;
    double lr_incremental = 0.001;
    DistillConfig distill;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t embedding_dim = 32;
    double init_scale = 0.01;  // new classifier units: uniform [-init_scale, init_scale]

    void validate() const;
    ExtractorConfig extractor_config(std::size_t input_dim) const;
};

struct BatchLog {
    int phase = 0;
    int epoch = 0;
    std::size_t batch = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

using BatchObserver = std::function<void(const BatchLog&)>;

// Runs cfg.epochs epochs of balanced mini-batches on pd. The learner must
// already have one classifier entry per pd.output_classes. Under FE in an
// incremental phase the old entries are marked frozen and the extractor is
// held fixed.
LearnerState train_phase(LearnerState learner, const FrozenTeacher* teacher,
                         const PhaseDataset& pd, const TrainConfig& cfg, Strategy strategy,
                         const BatchObserver& observer = {});

// Scores = sigmoid(logits); F1 at cfg threshold, AP, weight norms, histogram.
PhaseReport evaluate(const LearnerState& learner, const PhaseDataset& eval, double threshold,
                     int phase);

struct RunReport {
    Strategy strategy = Strategy::iodfd;
    std::vector<PhaseReport> phases;
    RunSummary summary;
    LearnerState final_learner;
};

struct RunOptions {
    // Phase-0 learner to start from instead of training one.
    const LearnerState* base_learner = nullptr;
    BatchObserver observer;
    ViewOptions view;
};

// Trains the phase-0 learner shared by every strategy.
LearnerState train_base(const Dataset& train, const PhasePlan& plan, const TrainConfig& cfg,
                        const BatchObserver& observer = {});

RunReport run_cil(const Dataset& train, const Dataset& eval, const PhasePlan& plan,
                  Strategy strategy, const TrainConfig& cfg, const RunOptions& options = {});

// lambda_i = omega * sqrt(|classes_so_far(i)| / |plan[i]|) for i >= 1.
Vector measure_lambda_schedule(const PhasePlan& plan, double omega);

}  // namespace cil
