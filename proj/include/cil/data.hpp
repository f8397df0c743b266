#pragma once

// ---------------------------------------------------------------------------
// Multi-label datasets, the class-to-phase plan, per-phase training views,
// expanding evaluation views and class-balanced mini-batch sampling.
//
// Dataset text format (one clip per line):
//
//   #cil-dataset v1 dim=<D> classes=<K>
//   <clip_id>,<f1;f2;...;fD>,<l1;l2;...>
//
// Further lines starting with '#' are comments. Floats are written with 17
// significant digits so a save/load round trip is bit-exact.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cil/gradcore.hpp"
#include "cil/random.hpp"

namespace cil {

struct Example {
    std::string clip_id;
    Vector x;
    std::vector<int> labels;  // sorted, unique, non-empty

    bool operator==(const Example&) const = default;
};

struct Dataset {
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::vector<Example> examples;

    bool operator==(const Dataset&) const = default;
};

struct SynthConfig {
    std::size_t n_classes = 10;
    std::size_t feature_dim = 16;
    std::size_t clips_per_class = 400;  // clips whose primary label is the most frequent class
    double zipf_exponent = 1.0;
    std::size_t max_labels = 5;
    double noise_sigma = 0.2;
    double cooccur_temperature = 4.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Class k has a unit-norm Gaussian prototype and a primary-label quota of
// round(clips_per_class * (k + 1)^-zipf_exponent). Each clip carries its
// primary class plus 0..max_labels-1 co-occurring classes (count uniform,
// partners weighted by frequency times exp(cosine(prototypes) / temperature));
// x = sum of label prototypes + noise.
Dataset gen_synthetic(const SynthConfig& cfg);

// Seeded random split into (train, eval).
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double eval_fraction,
                                          std::uint64_t seed);

std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// --- phases -----------------------------------------------------------------

struct PhasePlan {
    std::vector<std::vector<int>> phases;  // phases[0] is the base task

    std::size_t phase_count() const { return phases.size(); }
    // Concatenation of phases 0..phase; position = learner output index.
    std::vector<int> classes_so_far(std::size_t phase) const;
    std::size_t total_classes() const;
    // Disjoint, non-empty phases with class IDs in [0, n_classes).
    void validate(std::size_t n_classes) const;
};

// Seeded permutation of [0, n_classes) cut into base + n_increments * increment.
PhasePlan make_phase_plan(std::size_t n_classes, std::size_t base, std::size_t increment,
                          std::size_t n_increments, std::uint64_t seed);

struct PhaseDataset {
    std::vector<int> target_classes;       // classes whose labels are kept
    std::vector<int> output_classes;       // learner output order (classes so far)
    std::vector<std::size_t> clip_indices; // into the source dataset
    Matrix inputs;                         // (clips x dim)
    Matrix targets;                        // (clips x output_classes), zero outside target_classes

    std::size_t size() const { return clip_indices.size(); }
};

struct ViewOptions {
    // Skip clips that carry a label of an earlier phase (overlap ablation).
    bool drop_overlap = false;
};

// Every clip with a label in plan[phase]; targets keep only those labels.
// Throws ConfigError if some class of the phase has no clip.
PhaseDataset phase_view(const Dataset& ds, const PhasePlan& plan, std::size_t phase,
                        const ViewOptions& options = {});

// Every clip with a label among classes_so_far(phase), targets over all of them.
// Used for evaluation and for from-scratch training on all classes seen so far.
PhaseDataset eval_view(const Dataset& ds, const PhasePlan& plan, std::size_t phase);

// Fraction of clips (among those used by any phase view) that appear in more
// than one phase view.
double phase_overlap_fraction(const Dataset& ds, const PhasePlan& plan);

// --- sampling ---------------------------------------------------------------

// Round-robin over the target classes; each class owns a shuffled queue of
// rows containing it and reshuffles when exhausted.
class BalancedSampler {
public:
    BalancedSampler(const PhaseDataset& pd, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next_batch();
    // Row index of the next slot together with the class it was drawn for.
    std::pair<std::size_t, int> next_slot();

    std::size_t batch_size() const { return batch_size_; }

private:
    struct Queue {
        int class_id;
        std::vector<std::size_t> rows;
        std::size_t pos = 0;
    };

    std::vector<Queue> queues_;
    std::size_t cursor_ = 0;
    std::size_t batch_size_;
    Rng rng_;
};

std::vector<std::vector<std::size_t>> balanced_batches(const PhaseDataset& pd,
                                                       std::size_t batch_size,
                                                       std::uint64_t seed,
                                                       std::size_t n_batches);

// ceil(clips / batch_size), at least 1.
std::size_t batches_per_epoch(const PhaseDataset& pd, std::size_t batch_size);

// label-count -> clip-count, counting only labels inside class_subset.
std::map<std::size_t, std::size_t> labels_histogram(std::span<const Example> examples,
                                                    std::span<const int> class_subset);
std::map<std::size_t, std::size_t> labels_histogram(const PhaseDataset& view);

}  // namespace cil
