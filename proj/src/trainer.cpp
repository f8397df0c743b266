#include "cil/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "cil/error.hpp"
#include "cil/random.hpp"

namespace cil {

StrategyFlags flags_for(Strategy s) {
    //        indl   od     fd     frz_ex frz_old scratch
    switch (s) {
        case Strategy::ft:        return {false, false, false, false, false, false};
        case Strategy::fe:        return {true,  false, false, true,  true,  false};
        case Strategy::at:        return {false, false, false, false, false, true};
        case Strategy::indl_only: return {true,  false, false, false, false, false};
        case Strategy::od_only:   return {false, true,  false, false, false, false};
        case Strategy::iod:       return {true,  true,  false, false, false, false};
        case Strategy::ifd:       return {true,  false, true,  false, false, false};
        case Strategy::iodfd:     return {true,  true,  true,  false, false, false};
    }
    throw ConfigError("flags_for: unknown strategy");
}

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::ft: return "FT";
        case Strategy::fe: return "FE";
        case Strategy::at: return "AT";
        case Strategy::indl_only: return "INDL_ONLY";
        case Strategy::od_only: return "OD_ONLY";
        case Strategy::iod: return "IOD";
        case Strategy::ifd: return "IFD";
        case Strategy::iodfd: return "IODFD";
    }
    return "?";
}

std::vector<Strategy> all_strategies() {
    return {Strategy::ft,      Strategy::fe,  Strategy::at,  Strategy::indl_only,
            Strategy::od_only, Strategy::iod, Strategy::ifd, Strategy::iodfd};
}

Strategy parse_strategy(std::string_view name) {
    std::string upper(name);
    for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (Strategy s : all_strategies()) {
        if (to_string(s) == upper) return s;
    }
    throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("TrainConfig: momentum must lie in [0, 1)");
    if (!(lr_initial > 0.0) || !(lr_incremental > 0.0)) {
        throw ConfigError("TrainConfig: learning rates must be > 0");
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("TrainConfig: threshold must lie in [0, 1]");
    if (embedding_dim == 0) throw ConfigError("TrainConfig: embedding_dim must be >= 1");
    if (!(init_scale >= 0.0)) throw ConfigError("TrainConfig: init_scale must be >= 0");
    distill.validate();
}

ExtractorConfig TrainConfig::extractor_config(std::size_t input_dim) const {
    return {input_dim, hidden, embedding_dim};
}

namespace {

const char* worst_component(const LossBreakdown& b) {
    if (!std::isfinite(b.bce)) return "bce";
    if (!std::isfinite(b.od)) return "od";
    if (!std::isfinite(b.fd)) return "fd";
    return "total";
}

}  // namespace

LearnerState train_phase(LearnerState learner, const FrozenTeacher* teacher,
                         const PhaseDataset& pd, const TrainConfig& cfg, Strategy strategy,
                         const BatchObserver& observer) {
    cfg.validate();
    const StrategyFlags flags = flags_for(strategy);
    require_same_size(learner.classifier.class_count(), pd.output_classes.size(),
                      "train_phase learner classes vs view");
    const bool incremental = learner.phase_index >= 1 && learner.old_class_count > 0;
    if (incremental && (flags.use_od || flags.use_fd) && teacher == nullptr) {
        throw ConfigError("train_phase: strategy " + std::string(to_string(strategy)) +
                          " needs a frozen teacher");
    }
    if (cfg.epochs == 0) return learner;

    bool freeze_extractor = false;
    if (incremental && flags.freeze_old_classifier) {
        for (std::size_t k = 0; k < learner.old_class_count; ++k) learner.classifier.frozen[k] = true;
    }
    if (incremental && flags.freeze_extractor) freeze_extractor = true;

    const double base_lr =
        (learner.phase_index == 0 || flags.retrain_from_scratch) ? cfg.lr_initial : cfg.lr_incremental;
    const std::vector<char> mask = trainable_mask(learner, freeze_extractor);
    const LossTerms terms = flags.loss_terms();

    Vector params = flatten(learner);
    Vector velocity(params.size(), 0.0);
    BalancedSampler sampler(pd, cfg.batch_size,
                            Rng::derive(cfg.seed, 100 + static_cast<std::uint64_t>(learner.phase_index)));
    const std::size_t n_batches = batches_per_epoch(pd, cfg.batch_size);

    Matrix xb(cfg.batch_size, pd.inputs.cols());
    Matrix yb(cfg.batch_size, pd.targets.cols());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs, base_lr);
        for (std::size_t b = 0; b < n_batches; ++b) {
            const auto rows = sampler.next_batch();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                std::copy_n(pd.inputs.row(rows[i]).begin(), xb.cols(), xb.row(i).begin());
                std::copy_n(pd.targets.row(rows[i]).begin(), yb.cols(), yb.row(i).begin());
            }
            TotalLoss loss = total_loss(learner, teacher, xb, yb, cfg.distill, terms);
            const auto& br = loss.breakdown;
            const std::string where = "phase " + std::to_string(learner.phase_index) + " epoch " +
                                      std::to_string(epoch) + " batch " + std::to_string(b);
            if (!std::isfinite(br.total) || !all_finite(loss.grads)) {
                throw NumericError("train_phase: non-finite " + std::string(worst_component(br)) +
                                   " loss at " + where);
            }
            if (observer) observer(BatchLog{learner.phase_index, epoch, b, lr, br});

            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (!mask[i]) loss.grads[i] = 0.0;
            }
            try {
                sgd_momentum_step(params, loss.grads, velocity, lr, cfg.momentum);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at " + where);
            }
            assign_flat(learner, params);
        }
    }
    return learner;
}

PhaseReport evaluate(const LearnerState& learner, const PhaseDataset& eval, double threshold,
                     int phase) {
    require_same_size(learner.classifier.class_count(), eval.output_classes.size(),
                      "evaluate learner classes vs view");
    Matrix scores(eval.size(), eval.output_classes.size());
    for (std::size_t r = 0; r < eval.size(); ++r) {
        const Vector s = sigmoid(logits(learner, eval.inputs.row(r)));
        std::copy(s.begin(), s.end(), scores.row(r).begin());
    }
    PhaseReport rep;
    rep.phase = phase;
    rep.classes = eval.output_classes;
    const F1Result f1 = macro_f1(scores, eval.targets, threshold);
    rep.per_class_f1 = f1.per_class;
    rep.macro_f1 = f1.macro;
    const APResult ap = mean_average_precision(scores, eval.targets);
    rep.per_class_ap = ap.per_class;
    rep.map = ap.map;
    rep.weight_norms = weight_norms(learner.classifier);
    rep.labels_histogram = labels_histogram(eval);
    return rep;
}

namespace {

// Re-throws with the phase index prepended, keeping the error category.
template <typename Fn>
auto in_phase(std::size_t phase, Fn&& fn) -> decltype(fn()) {
    const std::string tag = "phase " + std::to_string(phase) + ": ";
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError(tag + e.what());
    } catch (const NumericError& e) {
        throw NumericError(tag + e.what());
    } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(tag + e.what());
    }
}

}  // namespace

LearnerState train_base(const Dataset& train, const PhasePlan& plan, const TrainConfig& cfg,
                        const BatchObserver& observer) {
    cfg.validate();
    plan.validate(train.classes);
    return in_phase(0, [&] {
        LearnerState learner = init_learner(cfg.extractor_config(train.dim), plan.phases[0].size(),
                                            cfg.init_scale, cfg.seed);
        const PhaseDataset pd = phase_view(train, plan, 0);
        return train_phase(std::move(learner), nullptr, pd, cfg, Strategy::ft, observer);
    });
}

RunReport run_cil(const Dataset& train, const Dataset& eval, const PhasePlan& plan,
                  Strategy strategy, const TrainConfig& cfg, const RunOptions& options) {
    cfg.validate();
    plan.validate(train.classes);
    require_same_size(train.dim, eval.dim, "run_cil train/eval dim");
    const StrategyFlags flags = flags_for(strategy);

    RunReport report;
    report.strategy = strategy;

    LearnerState learner = options.base_learner
                               ? *options.base_learner
                               : train_base(train, plan, cfg, options.observer);
    report.phases.push_back(in_phase(0, [&] {
        PhaseReport r = evaluate(learner, eval_view(eval, plan, 0), cfg.threshold, 0);
        r.incremental = !flags.retrain_from_scratch;
        return r;
    }));

    for (std::size_t i = 1; i < plan.phase_count(); ++i) {
        PhaseReport rep = in_phase(i, [&] {
            if (flags.retrain_from_scratch) {
                const auto classes = plan.classes_so_far(i);
                learner = init_learner(cfg.extractor_config(train.dim), classes.size(),
                                       cfg.init_scale, cfg.seed);
                learner.phase_index = static_cast<int>(i);
                const PhaseDataset pd = eval_view(train, plan, i);
                learner = train_phase(std::move(learner), nullptr, pd, cfg, strategy, options.observer);
            } else {
                const FrozenTeacher teacher = freeze(learner);
                begin_phase(learner, plan.phases[i].size(), cfg.init_scale,
                            Rng::derive(cfg.seed, 200 + i));
                const PhaseDataset pd = phase_view(train, plan, i, options.view);
                const bool distill = flags.use_od || flags.use_fd;
                learner = train_phase(std::move(learner), distill ? &teacher : nullptr, pd, cfg,
                                      strategy, options.observer);
            }
            PhaseReport r = evaluate(learner, eval_view(eval, plan, i), cfg.threshold,
                                     static_cast<int>(i));
            r.incremental = !flags.retrain_from_scratch;
            if (!flags.retrain_from_scratch) r.fr = forgetting(report.phases[0], r, plan.phases[0]);
            if (flags.use_od) {
                r.lambda = adaptive_lambda(r.classes.size(), plan.phases[i].size(), cfg.distill.omega);
            }
            return r;
        });
        report.phases.push_back(std::move(rep));
    }
    report.summary = average_over_phases(report.phases);
    report.final_learner = std::move(learner);
    return report;
}

Vector measure_lambda_schedule(const PhasePlan& plan, double omega) {
    if (plan.phase_count() < 2) throw ConfigError("measure_lambda_schedule: need >= 2 phases");
    Vector out;
    std::size_t so_far = plan.phases[0].size();
    for (std::size_t i = 1; i < plan.phase_count(); ++i) {
        so_far += plan.phases[i].size();
        out.push_back(adaptive_lambda(so_far, plan.phases[i].size(), omega));
    }
    return out;
}

}  // namespace cil
