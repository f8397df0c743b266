#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "cil/error.hpp"
#include "cil/model.hpp"
#include "cil/random.hpp"

using namespace cil;

namespace {

LearnerState small_learner(std::size_t classes = 3, std::uint64_t seed = 1) {
    return init_learner({4, {6, 5}, 3}, classes, 0.3, seed);
}

Vector random_vec(Rng& rng, std::size_t n) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("extractor with zero parameters maps to zero") {
    LearnerState s = small_learner();
    Vector zero(extractor_parameter_count(s.extractor), 0.0);
    Vector p = flatten(s);
    std::copy(zero.begin(), zero.end(), p.begin());
    assign_flat(s, p);
    CHECK(extract(s.extractor, Vector{1, -2, 3, 4}) == Vector(3, 0.0));
}

TEST_CASE("single identity-weight relu layer") {
    ExtractorParams e;
    DenseLayer layer;
    layer.weight = Matrix(2, 2);
    layer.weight(0, 0) = 1;
    layer.weight(1, 1) = 1;
    layer.bias = {0, 0};
    layer.activation = Activation::relu;
    e.layers.push_back(layer);
    CHECK(extract(e, Vector{1, -2}) == Vector{1, 0});
}

TEST_CASE("seeded extractor output is pinned") {
    const ExtractorParams e = init_extractor({3, {4}, 2}, 17);
    const Vector v = extract(e, Vector{0.5, -1.0, 2.0});
    // Recomputed by hand from the stored weights.
    Vector h(4);
    for (std::size_t i = 0; i < 4; ++i) {
        double z = e.layers[0].bias[i];
        const double x[3] = {0.5, -1.0, 2.0};
        for (std::size_t j = 0; j < 3; ++j) z += e.layers[0].weight(i, j) * x[j];
        h[i] = z > 0.0 ? z : 0.0;
    }
    for (std::size_t k = 0; k < 2; ++k) {
        double z = e.layers[1].bias[k];
        for (std::size_t i = 0; i < 4; ++i) z += e.layers[1].weight(k, i) * h[i];
        CHECK(v[k] == doctest::Approx(z).epsilon(1e-14));
    }
    CHECK(extract(init_extractor({3, {4}, 2}, 17), Vector{0.5, -1.0, 2.0}) == v);
    CHECK(e.input_dim() == 3);
    CHECK(e.embedding_dim() == 2);
}

TEST_CASE("classify by hand") {
    ClassifierParams c;
    c.embedding_dim = 2;
    c.entries.push_back({{1.0, 1.0}, 1.0});
    c.frozen.push_back(false);
    CHECK(classify(c, Vector{2, 3}) == Vector{6.0});

    ClassifierParams z;
    z.embedding_dim = 2;
    z.entries.push_back({{0.0, 0.0}, 0.0});
    z.frozen.push_back(false);
    CHECK(classify(z, Vector{5, -7}) == Vector{0.0});
}

TEST_CASE("weight norms exclude bias") {
    ClassifierParams c;
    c.embedding_dim = 2;
    c.entries.push_back({{3.0, 4.0}, 10.0});
    c.entries.push_back({{0.0, 0.0}, -1.0});
    c.frozen.assign(2, false);
    CHECK(weight_norms(c) == Vector{5.0, 0.0});
}

TEST_CASE("expanding 30 classes by 5") {
    const LearnerState s = small_learner(30);
    const ClassifierParams grown = expand_classifier(s.classifier, 5, 0.01, 9);
    CHECK(grown.class_count() == 35);
    for (std::size_t k = 0; k < 30; ++k) CHECK(grown.entries[k] == s.classifier.entries[k]);
    for (std::size_t k = 30; k < 35; ++k) {
        for (double w : grown.entries[k].weight) CHECK(std::abs(w) <= 0.01);
        CHECK(grown.entries[k].bias == 0.0);
    }
    CHECK(expand_classifier(s.classifier, 5, 0.01, 9).entries == grown.entries);

    const ClassifierParams zero = expand_classifier(s.classifier, 2, 0.0, 9);
    for (std::size_t k = 30; k < 32; ++k) CHECK(zero.entries[k].weight == Vector(3, 0.0));
    CHECK_THROWS_AS(expand_classifier(s.classifier, 0, 0.01, 9), ConfigError);
}

TEST_CASE("expansion leaves old logits unchanged for any input") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        LearnerState s = small_learner(1 + rng.below(5), rng.next_u64());
        const std::size_t before = s.classifier.class_count();
        const Vector x = random_vec(rng, 4);
        const Vector old = logits(s, x);
        begin_phase(s, 1 + rng.below(4), 0.5, rng.next_u64());
        const Vector now = logits(s, x);
        for (std::size_t k = 0; k < before; ++k) CHECK(now[k] == old[k]);
        CHECK(s.classifier.class_count() == s.old_class_count + s.new_class_count);
        CHECK(s.old_class_count == before);
    }
}

TEST_CASE("begin_phase bookkeeping") {
    LearnerState s = small_learner(4);
    CHECK(s.phase_index == 0);
    CHECK(s.old_class_count == 0);
    CHECK(s.new_class_count == 4);
    begin_phase(s, 2, 0.01, 5);
    CHECK(s.phase_index == 1);
    CHECK(s.old_class_count == 4);
    CHECK(s.new_class_count == 2);
    CHECK(s.classifier.frozen.size() == 6);
}

TEST_CASE("frozen teacher matches learner and survives mutation") {
    LearnerState s = small_learner();
    const Vector x = {0.2, -0.4, 1.0, 0.3};
    const FrozenTeacher t = freeze(s);
    const Vector at_freeze = t.logits(x);
    CHECK(at_freeze == logits(s, x));
    CHECK(t.features(x) == extract(s.extractor, x));

    Vector p = flatten(s);
    for (double& v : p) v += 0.5;
    assign_flat(s, p);
    begin_phase(s, 2, 0.1, 1);
    CHECK(t.logits(x) == at_freeze);
    CHECK(logits(s, x)[0] != at_freeze[0]);
}

TEST_CASE("flat layout round trip and parameter count") {
    const LearnerState s = small_learner();
    // 4*6+6 + 6*5+5 + 5*3+3 extractor, 3 classes * (3 + 1)
    CHECK(extractor_parameter_count(s.extractor) == 83);
    CHECK(parameter_count(s) == 95);
    const Vector p = flatten(s);
    LearnerState t = small_learner(3, 99);
    assign_flat(t, p);
    CHECK(flatten(t) == p);
    CHECK_THROWS_AS(assign_flat(t, Vector(3, 0.0)), ConfigError);
}

TEST_CASE("trainable mask covers frozen entries and the extractor") {
    LearnerState s = small_learner();
    s.classifier.frozen[1] = true;
    const auto mask = trainable_mask(s, false);
    const std::size_t ne = extractor_parameter_count(s.extractor);
    CHECK(mask[0] == 1);
    for (std::size_t i = ne + 4; i < ne + 8; ++i) CHECK(mask[i] == 0);
    CHECK(mask[ne] == 1);
    CHECK(mask[ne + 8] == 1);
    const auto all = trainable_mask(s, true);
    for (std::size_t i = 0; i < ne; ++i) CHECK(all[i] == 0);
}

TEST_CASE("checkpoint round trip is bit exact") {
    LearnerState s = small_learner(3, 21);
    begin_phase(s, 2, 0.3, 4);
    s.classifier.frozen[0] = true;
    const std::string text = checkpoint_to_string(s);
    const LearnerState back = checkpoint_from_string(text);
    CHECK(flatten(back) == flatten(s));
    CHECK(back.phase_index == s.phase_index);
    CHECK(back.old_class_count == s.old_class_count);
    CHECK(back.new_class_count == s.new_class_count);
    CHECK(back.classifier.frozen == s.classifier.frozen);
    CHECK(checkpoint_to_string(back) == text);

    const auto path = std::filesystem::temp_directory_path() / "cil_test_checkpoint.json";
    save_checkpoint(s, path);
    CHECK(flatten(load_checkpoint(path)) == flatten(s));
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
    CHECK_THROWS_AS(checkpoint_from_string("not json"), ParseError);
    CHECK_THROWS_AS(checkpoint_from_string("{\"format\": \"other\"}"), ParseError);
    CHECK_THROWS(load_checkpoint("/nonexistent/cil/checkpoint.json"));
}
