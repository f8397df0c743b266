#pragma once

// ---------------------------------------------------------------------------
// The incremental learner: a fully-connected feature extractor followed by a
// linear multi-label classifier with one (weight vector, bias) entry per
// class. Classifier entries are append-only, so logit index k always refers
// to the same class across phases: [0, old_class_count) are the old classes
// and the remainder are the classes introduced in the current phase.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cil/gradcore.hpp"

namespace cil {

enum class Activation { relu, identity };

struct DenseLayer {
    Matrix weight;  // (out x in)
    Vector bias;
    Activation activation = Activation::relu;
};

struct ExtractorParams {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const;
    std::size_t embedding_dim() const;
};

struct ClassEntry {
    Vector weight;
    double bias = 0.0;

    bool operator==(const ClassEntry&) const = default;
};

struct ClassifierParams {
    std::size_t embedding_dim = 0;
    std::vector<ClassEntry> entries;
    std::vector<bool> frozen;  // per class; frozen entries receive no updates

    std::size_t class_count() const { return entries.size(); }
};

struct LearnerState {
    ExtractorParams extractor;
    ClassifierParams classifier;
    int phase_index = 0;
    std::size_t old_class_count = 0;
    std::size_t new_class_count = 0;
};

struct ExtractorConfig {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t embedding_dim = 32;
};

// Hidden layers He-uniform with ReLU; final embedding layer identity.
ExtractorParams init_extractor(const ExtractorConfig& cfg, std::uint64_t seed);

// Fresh phase-0 learner with n_classes classifier entries drawn uniform in
// [-init_scale, +init_scale] and zero biases.
LearnerState init_learner(const ExtractorConfig& cfg, std::size_t n_classes,
                          double init_scale, std::uint64_t seed);

Vector extract(const ExtractorParams& extractor, std::span<const double> x);
Vector classify(const ClassifierParams& classifier, std::span<const double> v);
Vector logits(const LearnerState& learner, std::span<const double> x);

ClassifierParams expand_classifier(const ClassifierParams& classifier, std::size_t n_new,
                                   double init_scale, std::uint64_t seed);

// Expands the classifier and shifts the old/new bookkeeping to the next phase.
void begin_phase(LearnerState& learner, std::size_t n_new, double init_scale,
                 std::uint64_t seed);

// Per-class L2 norm of the classifier weight vector (bias excluded).
Vector weight_norms(const ClassifierParams& classifier);

// Immutable snapshot of a learner. Copies share the same state.
class FrozenTeacher {
public:
    explicit FrozenTeacher(LearnerState state)
        : state_(std::make_shared<const LearnerState>(std::move(state))) {}

    const LearnerState& state() const { return *state_; }
    Vector features(std::span<const double> x) const { return extract(state_->extractor, x); }
    Vector logits(std::span<const double> x) const { return cil::logits(*state_, x); }

private:
    std::shared_ptr<const LearnerState> state_;
};

FrozenTeacher freeze(const LearnerState& learner);

// --- backpropagation over the flat parameter layout --------------------------
//
// Flat layout: for each extractor layer its weight (row-major) then bias;
// then for each class entry its weight then bias.

struct ForwardTrace {
    std::vector<Vector> inputs;  // input to each layer (inputs[0] = x)
    std::vector<Vector> pre;     // pre-activation of each layer
    Vector embedding;
    Vector logits;
};

ForwardTrace forward(const LearnerState& learner, std::span<const double> x);

std::size_t parameter_count(const LearnerState& learner);
std::size_t extractor_parameter_count(const ExtractorParams& extractor);
Vector flatten(const LearnerState& learner);
void assign_flat(LearnerState& learner, std::span<const double> flat);

// Accumulates dL/dparams into flat_grads given dL/d(logits) and an extra
// dL/d(embedding) term (may be empty).
void backward(const LearnerState& learner, const ForwardTrace& trace,
              std::span<const double> d_logits, std::span<const double> d_embedding,
              std::span<double> flat_grads);

// 1 for trainable coordinates, 0 for frozen ones (frozen classifier entries,
// and the whole extractor when freeze_extractor is set).
std::vector<char> trainable_mask(const LearnerState& learner, bool freeze_extractor);

// --- checkpoints ------------------------------------------------------------

std::string checkpoint_to_string(const LearnerState& learner);
LearnerState checkpoint_from_string(const std::string& text);
void save_checkpoint(const LearnerState& learner, const std::filesystem::path& path);
LearnerState load_checkpoint(const std::filesystem::path& path);

}  // namespace cil
