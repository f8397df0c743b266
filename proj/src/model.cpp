#include "cil/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cil/error.hpp"
#include "cil/random.hpp"

namespace cil {

std::size_t ExtractorParams::input_dim() const {
    return layers.empty() ? 0 : layers.front().weight.cols();
}

std::size_t ExtractorParams::embedding_dim() const {
    return layers.empty() ? 0 : layers.back().weight.rows();
}

ExtractorParams init_extractor(const ExtractorConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim == 0 || cfg.embedding_dim == 0) {
        throw ConfigError("init_extractor: input_dim and embedding_dim must be positive");
    }
    std::vector<std::size_t> widths{cfg.input_dim};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(cfg.embedding_dim);

    Rng rng(seed);
    ExtractorParams ex;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        if (out == 0) throw ConfigError("init_extractor: zero-width layer");
        DenseLayer layer{Matrix(out, in), Vector(out, 0.0),
                         l + 2 == widths.size() ? Activation::identity : Activation::relu};
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        for (double& w : layer.weight.flat()) w = rng.uniform(-bound, bound);
        ex.layers.push_back(std::move(layer));
    }
    return ex;
}

namespace {

ClassEntry random_entry(std::size_t dim, double init_scale, Rng& rng) {
    ClassEntry e{Vector(dim), 0.0};
    for (double& w : e.weight) w = init_scale == 0.0 ? 0.0 : rng.uniform(-init_scale, init_scale);
    return e;
}

}  // namespace

LearnerState init_learner(const ExtractorConfig& cfg, std::size_t n_classes,
                          double init_scale, std::uint64_t seed) {
    if (n_classes == 0) throw ConfigError("init_learner: at least one class required");
    LearnerState s;
    s.extractor = init_extractor(cfg, Rng::derive(seed, 1));
    s.classifier.embedding_dim = cfg.embedding_dim;
    Rng rng(Rng::derive(seed, 2));
    for (std::size_t k = 0; k < n_classes; ++k) {
        s.classifier.entries.push_back(random_entry(cfg.embedding_dim, init_scale, rng));
    }
    s.classifier.frozen.assign(n_classes, false);
    s.phase_index = 0;
    s.old_class_count = 0;
    s.new_class_count = n_classes;
    return s;
}

Vector extract(const ExtractorParams& extractor, std::span<const double> x) {
    require_same_size(x.size(), extractor.input_dim(), "extract");
    Vector h(x.begin(), x.end());
    for (const auto& layer : extractor.layers) {
        h = affine_forward(layer.weight, layer.bias, h);
        if (layer.activation == Activation::relu) h = relu(h);
    }
    return h;
}

Vector classify(const ClassifierParams& classifier, std::span<const double> v) {
    require_same_size(v.size(), classifier.embedding_dim, "classify");
    Vector o(classifier.entries.size());
    for (std::size_t k = 0; k < o.size(); ++k) {
        o[k] = dot(classifier.entries[k].weight, v) + classifier.entries[k].bias;
    }
    return o;
}

Vector logits(const LearnerState& learner, std::span<const double> x) {
    return classify(learner.classifier, extract(learner.extractor, x));
}

ClassifierParams expand_classifier(const ClassifierParams& classifier, std::size_t n_new,
                                   double init_scale, std::uint64_t seed) {
    if (n_new == 0) throw ConfigError("expand_classifier: n_new must be at least 1");
    if (init_scale < 0.0) throw ConfigError("expand_classifier: init_scale must be >= 0");
    ClassifierParams out = classifier;
    Rng rng(seed);
    for (std::size_t k = 0; k < n_new; ++k) {
        out.entries.push_back(random_entry(classifier.embedding_dim, init_scale, rng));
        out.frozen.push_back(false);
    }
    return out;
}

void begin_phase(LearnerState& learner, std::size_t n_new, double init_scale,
                 std::uint64_t seed) {
    learner.classifier = expand_classifier(learner.classifier, n_new, init_scale, seed);
    learner.old_class_count = learner.classifier.class_count() - n_new;
    learner.new_class_count = n_new;
    learner.phase_index += 1;
}

Vector weight_norms(const ClassifierParams& classifier) {
    Vector norms;
    norms.reserve(classifier.entries.size());
    for (const auto& e : classifier.entries) norms.push_back(l2_norm(e.weight));
    return norms;
}

FrozenTeacher freeze(const LearnerState& learner) { return FrozenTeacher(learner); }

ForwardTrace forward(const LearnerState& learner, std::span<const double> x) {
    require_same_size(x.size(), learner.extractor.input_dim(), "forward");
    ForwardTrace t;
    Vector h(x.begin(), x.end());
    for (const auto& layer : learner.extractor.layers) {
        t.inputs.push_back(h);
        Vector z = affine_forward(layer.weight, layer.bias, h);
        h = layer.activation == Activation::relu ? relu(z) : z;
        t.pre.push_back(std::move(z));
    }
    t.logits = classify(learner.classifier, h);
    t.embedding = std::move(h);
    return t;
}

std::size_t extractor_parameter_count(const ExtractorParams& extractor) {
    std::size_t n = 0;
    for (const auto& l : extractor.layers) n += l.weight.size() + l.bias.size();
    return n;
}

std::size_t parameter_count(const LearnerState& learner) {
    return extractor_parameter_count(learner.extractor) +
           learner.classifier.class_count() * (learner.classifier.embedding_dim + 1);
}

Vector flatten(const LearnerState& learner) {
    Vector flat;
    flat.reserve(parameter_count(learner));
    for (const auto& l : learner.extractor.layers) {
        flat.insert(flat.end(), l.weight.flat().begin(), l.weight.flat().end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    for (const auto& e : learner.classifier.entries) {
        flat.insert(flat.end(), e.weight.begin(), e.weight.end());
        flat.push_back(e.bias);
    }
    return flat;
}

void assign_flat(LearnerState& learner, std::span<const double> flat) {
    require_same_size(flat.size(), parameter_count(learner), "assign_flat");
    std::size_t pos = 0;
    auto take = [&](std::span<double> dst) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
        pos += dst.size();
    };
    for (auto& l : learner.extractor.layers) {
        take(l.weight.flat());
        take(l.bias);
    }
    for (auto& e : learner.classifier.entries) {
        take(e.weight);
        e.bias = flat[pos++];
    }
}

void backward(const LearnerState& learner, const ForwardTrace& trace,
              std::span<const double> d_logits, std::span<const double> d_embedding,
              std::span<double> flat_grads) {
    require_same_size(flat_grads.size(), parameter_count(learner), "backward grads");
    const auto& cls = learner.classifier;
    require_same_size(d_logits.size(), cls.class_count(), "backward d_logits");
    const std::size_t emb = cls.embedding_dim;

    Vector dv(emb, 0.0);
    if (!d_embedding.empty()) {
        require_same_size(d_embedding.size(), emb, "backward d_embedding");
        std::copy(d_embedding.begin(), d_embedding.end(), dv.begin());
    }

    std::size_t pos = extractor_parameter_count(learner.extractor);
    for (std::size_t k = 0; k < cls.class_count(); ++k) {
        const double g = d_logits[k];
        if (g != 0.0) {
            const auto& w = cls.entries[k].weight;
            for (std::size_t j = 0; j < emb; ++j) {
                flat_grads[pos + j] += g * trace.embedding[j];
                dv[j] += g * w[j];
            }
            flat_grads[pos + emb] += g;
        }
        pos += emb + 1;
    }

    // Walk the extractor in reverse; offsets of each layer are recomputed.
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& l : learner.extractor.layers) {
        offsets.push_back(off);
        off += l.weight.size() + l.bias.size();
    }
    Vector dh = std::move(dv);
    for (std::size_t li = learner.extractor.layers.size(); li-- > 0;) {
        const auto& layer = learner.extractor.layers[li];
        const Vector dz =
            layer.activation == Activation::relu ? relu_backward(trace.pre[li], dh) : dh;
        auto d_weight = flat_grads.subspan(offsets[li], layer.weight.size());
        auto d_bias = flat_grads.subspan(offsets[li] + layer.weight.size(), layer.bias.size());
        Vector dx(li == 0 ? 0 : layer.weight.cols());
        affine_backward(layer.weight, trace.inputs[li], dz, d_weight, d_bias, dx);
        dh = std::move(dx);
    }
}

std::vector<char> trainable_mask(const LearnerState& learner, bool freeze_extractor) {
    std::vector<char> mask(parameter_count(learner), 1);
    const std::size_t ex = extractor_parameter_count(learner.extractor);
    if (freeze_extractor) std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(ex), 0);
    const std::size_t stride = learner.classifier.embedding_dim + 1;
    for (std::size_t k = 0; k < learner.classifier.class_count(); ++k) {
        if (!learner.classifier.frozen[k]) continue;
        auto first = mask.begin() + static_cast<std::ptrdiff_t>(ex + k * stride);
        std::fill(first, first + static_cast<std::ptrdiff_t>(stride), 0);
    }
    return mask;
}

// --- checkpoints ------------------------------------------------------------

using nlohmann::json;

std::string checkpoint_to_string(const LearnerState& learner) {
    json j;
    j["format"] = "cil-checkpoint v1";
    j["phase_index"] = learner.phase_index;
    j["old_class_count"] = learner.old_class_count;
    j["new_class_count"] = learner.new_class_count;
    json layers = json::array();
    for (const auto& l : learner.extractor.layers) {
        layers.push_back({{"rows", l.weight.rows()},
                          {"cols", l.weight.cols()},
                          {"activation", l.activation == Activation::relu ? "relu" : "identity"},
                          {"weight", std::vector<double>(l.weight.flat().begin(),
                                                         l.weight.flat().end())},
                          {"bias", l.bias}});
    }
    j["extractor"] = layers;
    json entries = json::array();
    for (std::size_t k = 0; k < learner.classifier.class_count(); ++k) {
        const auto& e = learner.classifier.entries[k];
        entries.push_back({{"weight", e.weight},
                           {"bias", e.bias},
                           {"frozen", static_cast<bool>(learner.classifier.frozen[k])}});
    }
    j["classifier"] = {{"embedding_dim", learner.classifier.embedding_dim},
                       {"entries", entries}};
    return j.dump(1) + "\n";
}

LearnerState checkpoint_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    try {
        if (j.at("format") != "cil-checkpoint v1") throw ParseError("checkpoint: unknown format");
        LearnerState s;
        s.phase_index = j.at("phase_index").get<int>();
        s.old_class_count = j.at("old_class_count").get<std::size_t>();
        s.new_class_count = j.at("new_class_count").get<std::size_t>();
        for (const auto& jl : j.at("extractor")) {
            const auto rows = jl.at("rows").get<std::size_t>();
            const auto cols = jl.at("cols").get<std::size_t>();
            const auto w = jl.at("weight").get<std::vector<double>>();
            DenseLayer layer{Matrix(rows, cols), jl.at("bias").get<Vector>(),
                             jl.at("activation") == "relu" ? Activation::relu
                                                           : Activation::identity};
            require_same_size(w.size(), rows * cols, "checkpoint layer weight");
            require_same_size(layer.bias.size(), rows, "checkpoint layer bias");
            std::copy(w.begin(), w.end(), layer.weight.flat().begin());
            if (!s.extractor.layers.empty()) {
                require_same_size(cols, s.extractor.layers.back().weight.rows(),
                                  "checkpoint layer chain");
            }
            s.extractor.layers.push_back(std::move(layer));
        }
        const auto& jc = j.at("classifier");
        s.classifier.embedding_dim = jc.at("embedding_dim").get<std::size_t>();
        require_same_size(s.classifier.embedding_dim, s.extractor.embedding_dim(),
                          "checkpoint embedding_dim");
        for (const auto& je : jc.at("entries")) {
            ClassEntry e{je.at("weight").get<Vector>(), je.at("bias").get<double>()};
            require_same_size(e.weight.size(), s.classifier.embedding_dim, "checkpoint entry");
            s.classifier.entries.push_back(std::move(e));
            s.classifier.frozen.push_back(je.at("frozen").get<bool>());
        }
        require_same_size(s.old_class_count + s.new_class_count, s.classifier.class_count(),
                          "checkpoint class counts");
        return s;
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const LearnerState& learner, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("save_checkpoint: cannot open " + path.string());
    out << checkpoint_to_string(learner);
}

LearnerState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

}  // namespace cil
