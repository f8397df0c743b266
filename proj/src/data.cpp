#include "cil/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>

#include "cil/error.hpp"

namespace cil {

void SynthConfig::validate() const {
    if (n_classes < 2) throw ConfigError("SynthConfig: n_classes must be >= 2");
    if (feature_dim < 2) throw ConfigError("SynthConfig: feature_dim must be >= 2");
    if (clips_per_class < 1) throw ConfigError("SynthConfig: clips_per_class must be >= 1");
    if (max_labels < 1) throw ConfigError("SynthConfig: max_labels must be >= 1");
    if (max_labels > n_classes) throw ConfigError("SynthConfig: max_labels exceeds n_classes");
    if (!(noise_sigma >= 0.0)) throw ConfigError("SynthConfig: noise_sigma must be >= 0");
    if (!(cooccur_temperature > 0.0)) {
        throw ConfigError("SynthConfig: cooccur_temperature must be > 0");
    }
    if (!(zipf_exponent >= 0.0)) throw ConfigError("SynthConfig: zipf_exponent must be >= 0");
}

Dataset gen_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t K = cfg.n_classes;
    const std::size_t D = cfg.feature_dim;

    Rng proto_rng(Rng::derive(cfg.seed, 11));
    std::vector<Vector> protos(K, Vector(D));
    for (auto& p : protos) {
        double n = 0.0;
        do {
            for (double& v : p) v = proto_rng.normal();
            n = l2_norm(p);
        } while (n == 0.0);
        for (double& v : p) v /= n;
    }

    Vector freq(K);
    std::vector<std::size_t> primaries;
    for (std::size_t k = 0; k < K; ++k) {
        freq[k] = std::pow(static_cast<double>(k + 1), -cfg.zipf_exponent);
        const auto quota = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(static_cast<double>(cfg.clips_per_class) * freq[k])));
        primaries.insert(primaries.end(), quota, k);
    }
    Rng rng(Rng::derive(cfg.seed, 12));
    rng.shuffle(std::span<std::size_t>(primaries));


    auto pick = [&](std::span<const double> w, double total) {
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w[i] <= 0.0) continue;
            if (u < w[i]) return i;
            u -= w[i];
        }
        // rounding fallback: last positive weight
        std::size_t last = 0;
        for (std::size_t i = 0; i < w.size(); ++i) if (w[i] > 0.0) last = i;
        return last;
    };

    Dataset ds{D, K, {}};
    ds.examples.reserve(primaries.size());
    const int width = static_cast<int>(std::to_string(primaries.size()).size());
    for (std::size_t c = 0; c < primaries.size(); ++c) {
        const std::size_t primary = primaries[c];
        const std::size_t n_labels = 1 + rng.below(cfg.max_labels);
        std::vector<int> labels{static_cast<int>(primary)};
        Vector w(K);
        for (std::size_t j = 0; j < K; ++j) {
            w[j] = freq[j] * std::exp(dot(protos[primary], protos[j]) / cfg.cooccur_temperature);
        }
        w[primary] = 0.0;
        while (labels.size() < n_labels) {
            const double total = std::accumulate(w.begin(), w.end(), 0.0);
            const std::size_t j = pick(w, total);
            labels.push_back(static_cast<int>(j));
            w[j] = 0.0;
        }
        std::sort(labels.begin(), labels.end());

        Example ex;
        char id[32];
        std::snprintf(id, sizeof id, "clip%0*zu", width, c);
        ex.clip_id = id;
        ex.x.assign(D, 0.0);
        for (int l : labels) {
            for (std::size_t d = 0; d < D; ++d) ex.x[d] += protos[static_cast<std::size_t>(l)][d];
        }
        if (cfg.noise_sigma > 0.0) {
            for (double& v : ex.x) v += cfg.noise_sigma * rng.normal();
        }
        ex.labels = std::move(labels);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double eval_fraction,
                                          std::uint64_t seed) {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
        throw ConfigError("split_dataset: eval_fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> order(ds.examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_eval = static_cast<std::size_t>(
        std::llround(eval_fraction * static_cast<double>(order.size())));
    std::vector<char> is_eval(order.size(), 0);
    for (std::size_t i = 0; i < n_eval; ++i) is_eval[order[i]] = 1;

    Dataset train{ds.dim, ds.classes, {}};
    Dataset eval{ds.dim, ds.classes, {}};
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        (is_eval[i] ? eval : train).examples.push_back(ds.examples[i]);
    }
    return {std::move(train), std::move(eval)};
}

// --- text format --------------------------------------------------------------

std::string dataset_to_string(const Dataset& ds) {
    std::string out = "#cil-dataset v1 dim=" + std::to_string(ds.dim) +
                      " classes=" + std::to_string(ds.classes) + "\n";
    char buf[64];
    for (const auto& ex : ds.examples) {
        out += ex.clip_id;
        out += ',';
        for (std::size_t d = 0; d < ex.x.size(); ++d) {
            if (d) out += ';';
            std::snprintf(buf, sizeof buf, "%.17g", ex.x[d]);
            out += buf;
        }
        out += ',';
        for (std::size_t i = 0; i < ex.labels.size(); ++i) {
            if (i) out += ';';
            out += std::to_string(ex.labels[i]);
        }
        out += '\n';
    }
    return out;
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
    throw ParseError("dataset line " + std::to_string(line) + ": " + msg);
}

template <typename T>
T parse_number(std::string_view s, std::size_t line, const char* what) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        fail(line, std::string("invalid ") + what + " '" + std::string(s) + "'");
    }
    return v;
}

std::size_t header_field(std::string_view header, std::string_view key) {
    const auto pos = header.find(key);
    if (pos == std::string_view::npos) fail(1, "header lacks " + std::string(key));
    auto rest = header.substr(pos + key.size());
    rest = rest.substr(0, rest.find(' '));
    return parse_number<std::size_t>(rest, 1, "header value");
}

}  // namespace

Dataset dataset_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) fail(1, "missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#cil-dataset v1", 0) != 0) fail(1, "expected '#cil-dataset v1' header");

    Dataset ds;
    ds.dim = header_field(line, "dim=");
    ds.classes = header_field(line, "classes=");
    if (ds.dim == 0 || ds.classes == 0) fail(1, "dim and classes must be positive");

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto fields = split(line, ',');
        if (fields.size() != 3) fail(line_no, "expected 3 comma-separated fields");
        Example ex;
        ex.clip_id = std::string(fields[0]);
        if (ex.clip_id.empty()) fail(line_no, "empty clip id");
        for (auto f : split(fields[1], ';')) {
            const double v = parse_number<double>(f, line_no, "feature");
            if (!std::isfinite(v)) fail(line_no, "non-finite feature");
            ex.x.push_back(v);
        }
        if (ex.x.size() != ds.dim) {
            fail(line_no, "clip '" + ex.clip_id + "' has " + std::to_string(ex.x.size()) +
                              " features, header says dim=" + std::to_string(ds.dim));
        }
        if (fields[2].empty()) fail(line_no, "empty label field");
        for (auto f : split(fields[2], ';')) {
            const int l = parse_number<int>(f, line_no, "label");
            if (l < 0 || static_cast<std::size_t>(l) >= ds.classes) {
                fail(line_no, "label " + std::to_string(l) + " outside [0, classes)");
            }
            ex.labels.push_back(l);
        }
        std::sort(ex.labels.begin(), ex.labels.end());
        ex.labels.erase(std::unique(ex.labels.begin(), ex.labels.end()), ex.labels.end());
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_dataset: cannot open " + path.string());
    out << dataset_to_string(ds);
    if (!out) throw ConfigError("save_dataset: write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_dataset: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return dataset_from_string(ss.str());
}

// --- phases -------------------------------------------------------------------

std::vector<int> PhasePlan::classes_so_far(std::size_t phase) const {
    if (phase >= phases.size()) throw ConfigError("classes_so_far: phase out of range");
    std::vector<int> out;
    for (std::size_t i = 0; i <= phase; ++i) out.insert(out.end(), phases[i].begin(), phases[i].end());
    return out;
}

std::size_t PhasePlan::total_classes() const {
    std::size_t n = 0;
    for (const auto& p : phases) n += p.size();
    return n;
}

void PhasePlan::validate(std::size_t n_classes) const {
    if (phases.empty()) throw ConfigError("PhasePlan: no phases");
    std::set<int> seen;
    for (std::size_t i = 0; i < phases.size(); ++i) {
        if (phases[i].empty()) throw ConfigError("PhasePlan: phase " + std::to_string(i) + " is empty");
        for (int c : phases[i]) {
            if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
                throw ConfigError("PhasePlan: class " + std::to_string(c) + " outside [0, " +
                                  std::to_string(n_classes) + ")");
            }
            if (!seen.insert(c).second) {
                throw ConfigError("PhasePlan: class " + std::to_string(c) + " appears twice");
            }
        }
    }
}

PhasePlan make_phase_plan(std::size_t n_classes, std::size_t base, std::size_t increment,
                          std::size_t n_increments, std::uint64_t seed) {
    if (base == 0) throw ConfigError("make_phase_plan: base must be >= 1");
    if (n_increments > 0 && increment == 0) throw ConfigError("make_phase_plan: increment must be >= 1");
    const std::size_t needed = base + increment * n_increments;
    if (needed > n_classes) {
        throw ConfigError("make_phase_plan: plan needs " + std::to_string(needed) +
                          " classes but only " + std::to_string(n_classes) + " exist");
    }
    std::vector<int> order(n_classes);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<int>(order));

    PhasePlan plan;
    plan.phases.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(base));
    for (std::size_t i = 0; i < n_increments; ++i) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(base + i * increment);
        plan.phases.emplace_back(first, first + static_cast<std::ptrdiff_t>(increment));
    }
    return plan;
}

namespace {

PhaseDataset build_view(const Dataset& ds, std::vector<int> target_classes,
                        std::vector<int> output_classes, const std::set<int>& excluded) {
    std::vector<int> column(ds.classes, -1);
    for (std::size_t j = 0; j < output_classes.size(); ++j) {
        column[static_cast<std::size_t>(output_classes[j])] = static_cast<int>(j);
    }
    std::vector<char> is_target(ds.classes, 0);
    for (int c : target_classes) is_target[static_cast<std::size_t>(c)] = 1;

    PhaseDataset pd;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& labels = ds.examples[i].labels;
        const bool hit = std::any_of(labels.begin(), labels.end(), [&](int l) {
            return is_target[static_cast<std::size_t>(l)];
        });
        const bool skip = std::any_of(labels.begin(), labels.end(), [&](int l) {
            return excluded.count(l) > 0;
        });
        if (hit && !skip) pd.clip_indices.push_back(i);
    }
    pd.inputs = Matrix(pd.clip_indices.size(), ds.dim);
    pd.targets = Matrix(pd.clip_indices.size(), output_classes.size());
    for (std::size_t r = 0; r < pd.clip_indices.size(); ++r) {
        const auto& ex = ds.examples[pd.clip_indices[r]];
        std::copy(ex.x.begin(), ex.x.end(), pd.inputs.row(r).begin());
        for (int l : ex.labels) {
            if (is_target[static_cast<std::size_t>(l)]) {
                pd.targets(r, static_cast<std::size_t>(column[static_cast<std::size_t>(l)])) = 1.0;
            }
        }
    }
    pd.target_classes = std::move(target_classes);
    pd.output_classes = std::move(output_classes);
    return pd;
}

}  // namespace

PhaseDataset phase_view(const Dataset& ds, const PhasePlan& plan, std::size_t phase,
                        const ViewOptions& options) {
    if (phase >= plan.phase_count()) throw ConfigError("phase_view: phase out of range");
    plan.validate(ds.classes);
    std::set<int> excluded;
    if (options.drop_overlap) {
        for (std::size_t i = 0; i < phase; ++i) excluded.insert(plan.phases[i].begin(), plan.phases[i].end());
    }
    PhaseDataset pd = build_view(ds, plan.phases[phase], plan.classes_so_far(phase), excluded);
    const std::size_t first_col = pd.output_classes.size() - pd.target_classes.size();
    for (std::size_t j = 0; j < pd.target_classes.size(); ++j) {
        bool present = false;
        for (std::size_t r = 0; r < pd.size() && !present; ++r) present = pd.targets(r, first_col + j) > 0.0;
        if (!present) {
            throw ConfigError("phase_view: class " + std::to_string(pd.target_classes[j]) +
                              " has no clips in phase " + std::to_string(phase));
        }
    }
    return pd;
}

PhaseDataset eval_view(const Dataset& ds, const PhasePlan& plan, std::size_t phase) {
    if (phase >= plan.phase_count()) throw ConfigError("eval_view: phase out of range");
    plan.validate(ds.classes);
    auto classes = plan.classes_so_far(phase);
    return build_view(ds, classes, classes, {});
}

double phase_overlap_fraction(const Dataset& ds, const PhasePlan& plan) {
    std::vector<int> uses(ds.examples.size(), 0);
    for (std::size_t p = 0; p < plan.phase_count(); ++p) {
        std::vector<char> in_phase(ds.classes, 0);
        for (int c : plan.phases[p]) in_phase[static_cast<std::size_t>(c)] = 1;
        for (std::size_t i = 0; i < ds.examples.size(); ++i) {
            const auto& l = ds.examples[i].labels;
            if (std::any_of(l.begin(), l.end(), [&](int c) { return in_phase[static_cast<std::size_t>(c)]; })) {
                ++uses[i];
            }
        }
    }
    const auto used = std::count_if(uses.begin(), uses.end(), [](int u) { return u > 0; });
    const auto shared = std::count_if(uses.begin(), uses.end(), [](int u) { return u > 1; });
    return used == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(used);
}

// --- sampling -----------------------------------------------------------------

BalancedSampler::BalancedSampler(const PhaseDataset& pd, std::size_t batch_size,
                                 std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
    if (batch_size == 0) throw ConfigError("BalancedSampler: batch_size must be >= 1");
    for (int c : pd.target_classes) {
        const auto it = std::find(pd.output_classes.begin(), pd.output_classes.end(), c);
        const auto col = static_cast<std::size_t>(it - pd.output_classes.begin());
        Queue q{c, {}, 0};
        for (std::size_t r = 0; r < pd.size(); ++r) {
            if (pd.targets(r, col) > 0.0) q.rows.push_back(r);
        }
        if (q.rows.empty()) continue;
        rng_.shuffle(std::span<std::size_t>(q.rows));
        queues_.push_back(std::move(q));
    }
    if (queues_.empty()) throw ConfigError("BalancedSampler: view has no labelled clips");
}

std::pair<std::size_t, int> BalancedSampler::next_slot() {
    Queue& q = queues_[cursor_];
    cursor_ = (cursor_ + 1) % queues_.size();
    if (q.pos == q.rows.size()) {
        rng_.shuffle(std::span<std::size_t>(q.rows));
        q.pos = 0;
    }
    return {q.rows[q.pos++], q.class_id};
}

std::vector<std::size_t> BalancedSampler::next_batch() {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    for (std::size_t i = 0; i < batch_size_; ++i) batch.push_back(next_slot().first);
    return batch;
}

std::vector<std::vector<std::size_t>> balanced_batches(const PhaseDataset& pd,
                                                       std::size_t batch_size,
                                                       std::uint64_t seed,
                                                       std::size_t n_batches) {
    BalancedSampler sampler(pd, batch_size, seed);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) out.push_back(sampler.next_batch());
    return out;
}

std::size_t batches_per_epoch(const PhaseDataset& pd, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batches_per_epoch: batch_size must be >= 1");
    return std::max<std::size_t>(1, (pd.size() + batch_size - 1) / batch_size);
}

std::map<std::size_t, std::size_t> labels_histogram(std::span<const Example> examples,
                                                    std::span<const int> class_subset) {
    const std::set<int> subset(class_subset.begin(), class_subset.end());
    std::map<std::size_t, std::size_t> hist;
    for (const auto& ex : examples) {
        const auto n = static_cast<std::size_t>(std::count_if(
            ex.labels.begin(), ex.labels.end(), [&](int l) { return subset.count(l) > 0; }));
        ++hist[n];
    }
    return hist;
}

std::map<std::size_t, std::size_t> labels_histogram(const PhaseDataset& view) {
    std::map<std::size_t, std::size_t> hist;
    for (std::size_t r = 0; r < view.size(); ++r) {
        std::size_t n = 0;
        for (double t : view.targets.row(r)) n += t > 0.0 ? 1 : 0;
        ++hist[n];
    }
    return hist;
}

}  // namespace cil
