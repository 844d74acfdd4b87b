#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sna/errors.hpp"
#include "sna/pseudolabel.hpp"

using namespace sna;

namespace {

// Dense layer x -> x + bias.
Network shift_net(const std::vector<double>& bias) {
    const std::size_t w = bias.size();
    DenseLayer d;
    d.weight = Matrix(w, w);
    for (std::size_t i = 0; i < w; ++i) d.weight(i, i) = 1.0;
    d.bias = Matrix(1, w, bias);
    return Network({d});
}

Network identity_net(std::size_t w) { return shift_net(std::vector<double>(w, 0.0)); }

UnlabeledDataset as_target(Matrix logits, std::vector<int> labels = {}) {
    if (labels.empty()) labels.assign(logits.rows(), -1);
    const int c = static_cast<int>(logits.cols());
    return UnlabeledDataset(std::move(logits), std::move(labels), c);
}

}  // namespace

TEST_CASE("ensemble averages the two members") {
    const UnlabeledDataset data = as_target(Matrix(1, 2, {std::log(0.8), std::log(0.2)}));
    const Network fp = shift_net({std::log(0.4) - std::log(0.8), std::log(0.6) - std::log(0.2)});
    const PseudoLabelTable t = ensemble_pseudo_labels(identity_net(2), fp, identity_net(2), data);
    CHECK(t.mean_probabilities(0, 0) == doctest::Approx(0.6));
    CHECK(t.mean_probabilities(0, 1) == doctest::Approx(0.4));
    CHECK(t.labels == std::vector<int>{0});
}

TEST_CASE("identical members degenerate to the single model") {
    sna::Rng rng(3);
    const UnlabeledDataset data = as_target(oracle::random_matrix(30, 3, rng));
    const Network f = shift_net({0.1, -0.2, 0.3});
    const PseudoLabelTable e = ensemble_pseudo_labels(f, f, identity_net(3), data);
    const PseudoLabelTable s = single_backbone_pseudo_labels(f, identity_net(3), data);
    CHECK(e.labels == s.labels);
    for (std::size_t i = 0; i < e.mean_probabilities.size(); ++i)
        CHECK(e.mean_probabilities.values()[i] == doctest::Approx(s.mean_probabilities.values()[i]).epsilon(1e-15));
}

TEST_CASE("hand-built batch against a scalar oracle") {
    const Matrix logits(4, 2, {2.0, 1.0, -1.0, 0.5, 0.0, 0.0, 3.0, 3.5});
    const std::vector<double> shift{-0.5, 1.0};
    const UnlabeledDataset data = as_target(logits);
    const PseudoLabelTable t = ensemble_pseudo_labels(identity_net(2), shift_net(shift), identity_net(2), data);
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> a{logits(i, 0), logits(i, 1)};
        std::vector<double> b{logits(i, 0) + shift[0], logits(i, 1) + shift[1]};
        std::vector<double> mean(2);
        for (std::size_t j = 0; j < 2; ++j)
            mean[j] = 0.5 * (oracle::scalar_softmax_entry(a, j) + oracle::scalar_softmax_entry(b, j));
        CHECK(t.mean_probabilities(i, 0) == doctest::Approx(mean[0]));
        CHECK(t.labels[i] == oracle::scalar_argmax(mean));
    }
}

TEST_CASE("single-backbone labels") {
    const UnlabeledDataset data = as_target(Matrix(1, 3, {std::log(0.2), std::log(0.5), std::log(0.3)}));
    CHECK(single_backbone_pseudo_labels(identity_net(3), identity_net(3), data).labels == std::vector<int>{1});

    sna::Rng rng(6);
    Matrix x = oracle::random_matrix(20, 3, rng);
    const auto base = single_backbone_pseudo_labels(identity_net(3), identity_net(3), as_target(x)).labels;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (auto& v : x.row(i)) v += 5.0 * static_cast<double>(i);
    CHECK(single_backbone_pseudo_labels(identity_net(3), identity_net(3), as_target(x)).labels == base);
}

TEST_CASE("ties go to the lower class and empty buckets are kept") {
    const PseudoLabelTable t = table_from_probabilities(Matrix(2, 3, {0.4, 0.4, 0.2, 0.1, 0.45, 0.45}));
    CHECK(t.labels == std::vector<int>{0, 1});
    REQUIRE(t.per_class_indices.size() == 3);
    CHECK(t.per_class_indices[2].empty());
}

TEST_CASE("property: partition, symmetry and argmax consistency") {
    sna::Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const UnlabeledDataset data = as_target(oracle::random_matrix(40, 4, rng, 2.0));
        const Network a = shift_net({0.3, 0.0, -0.4, 0.1});
        const Network b = identity_net(4);
        const PseudoLabelTable t = ensemble_pseudo_labels(a, b, identity_net(4), data);
        CHECK(t == ensemble_pseudo_labels(b, a, identity_net(4), data));
        std::vector<int> seen(40, 0);
        std::size_t total = 0;
        for (const auto& bucket : t.per_class_indices) {
            total += bucket.size();
            for (auto i : bucket) ++seen[i];
        }
        CHECK(total == 40);
        CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
        for (std::size_t i = 0; i < 40; ++i) {
            double sum = 0.0;
            for (double v : t.mean_probabilities.row(i)) {
                CHECK(v <= t.mean_probabilities(i, static_cast<std::size_t>(t.labels[i])));
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("pseudo-label accuracy diagnostic") {
    sna::Rng rng(2);
    const Matrix x = oracle::random_matrix(4000, 3, rng);
    std::vector<int> truth(4000);
    std::uniform_int_distribution<int> cls(0, 2);
    for (auto& v : truth) v = cls(rng);
    const UnlabeledDataset data = as_target(x, truth);

    PseudoLabelTable copied = table_from_probabilities(Matrix(4000, 3, 0.0));
    copied.labels = truth;
    CHECK(pseudo_label_accuracy(copied, data) == 1.0);

    const PseudoLabelTable random = single_backbone_pseudo_labels(identity_net(3), identity_net(3), data);
    const double acc = pseudo_label_accuracy(random, data);
    const double se = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 4000.0);
    CHECK(std::abs(acc - 1.0 / 3.0) < 3.0 * se);

    const UnlabeledDataset two = as_target(Matrix(2, 2, {1.0, 0.0, 0.0, 1.0}), {1, 0});
    CHECK(pseudo_label_accuracy(single_backbone_pseudo_labels(identity_net(2), identity_net(2), two), two) == 0.0);
    CHECK_THROWS_AS(pseudo_label_accuracy(copied, two), ValidationError);
}

TEST_CASE("width mismatch is a dimension error") {
    const UnlabeledDataset data = as_target(Matrix(2, 3, 0.0));
    CHECK_THROWS_AS(single_backbone_pseudo_labels(identity_net(2), identity_net(2), data), DimensionError);
    CHECK_THROWS_AS(single_backbone_pseudo_labels(identity_net(3), identity_net(2), data), DimensionError);
}
