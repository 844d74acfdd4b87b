#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sna/baselines.hpp"
#include "sna/errors.hpp"

using namespace sna;

namespace {

Network identity_net(std::size_t w) {
    DenseLayer d;
    d.weight = Matrix(w, w);
    for (std::size_t i = 0; i < w; ++i) d.weight(i, i) = 1.0;
    d.bias = Matrix(1, w);
    return Network({d});
}

UnlabeledDataset logits_target(Matrix logits, std::vector<int> labels = {}) {
    if (labels.empty()) labels.assign(logits.rows(), 0);
    const int c = static_cast<int>(logits.cols());
    return UnlabeledDataset(std::move(logits), std::move(labels), c);
}

UnlabeledDataset balanced_target(std::size_t per_class, int classes) {
    const std::size_t m = per_class * static_cast<std::size_t>(classes);
    std::vector<int> labels(m);
    for (std::size_t i = 0; i < m; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    return UnlabeledDataset(Matrix(m, static_cast<std::size_t>(classes), 0.0), labels, classes);
}

}  // namespace

TEST_CASE("shannon entropy") {
    CHECK(shannon_entropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
    CHECK(shannon_entropy(std::vector<double>{0.0, 1.0, 0.0}) == 0.0);
    const std::vector<double> p{0.7, 0.2, 0.1};
    CHECK(shannon_entropy(p) == doctest::Approx(oracle::scalar_entropy(p)).epsilon(1e-15));
    CHECK(shannon_entropy(p) == doctest::Approx(0.8018).epsilon(1e-4));
}

TEST_CASE("random balanced selection") {
    const UnlabeledDataset data = balanced_target(20, 3);
    CHECK_THROWS_AS(random_balanced_select(data, 2, 0, false), ValidationError);

    const SupportSet whole = random_balanced_select(data, 20, 0, true);
    CHECK(whole.entries.size() == 60);

    const SupportSet a = random_balanced_select(data, 3, 5, true);
    CHECK(a.entries == random_balanced_select(data, 3, 5, true).entries);
    CHECK_FALSE(a.entries == random_balanced_select(data, 3, 6, true).entries);
    std::vector<int> per(3, 0);
    for (const auto& e : a.entries) ++per[static_cast<std::size_t>(data.hidden_labels(GroundTruthPermit::diagnostic())[e.target_index])];
    CHECK(per == std::vector<int>{3, 3, 3});

    const SupportSet over = random_balanced_select(balanced_target(2, 3), 5, 0, true);
    CHECK(over.entries.size() == 6);
    CHECK(over.notes.size() == 3);
}

TEST_CASE("random balanced marginals are uniform") {
    const UnlabeledDataset data = balanced_target(20, 2);
    const std::size_t k = 3, trials = 10000;
    std::vector<double> hits(data.size(), 0.0);
    for (std::size_t s = 0; s < trials; ++s)
        for (auto i : random_balanced_select(data, k, s, true).indices()) hits[i] += 1.0;
    const double p = 3.0 / 20.0, se = std::sqrt(p * (1 - p) / static_cast<double>(trials));
    for (double h : hits) CHECK(std::abs(h / static_cast<double>(trials) - p) < 3.5 * se);
}

TEST_CASE("top-k per group") {
    SUBCASE("full tie keeps the first K indices") {
        const std::vector<double> zero(6, 0.0);
        const std::vector<int> g{0, 1, 0, 1, 0, 1};
        const SupportSet s = top_k_per_group(zero, g, 2, 2);
        CHECK(s.indices() == std::vector<std::size_t>{0, 2, 1, 3});
    }
    SUBCASE("hand-sorted six rows") {
        const std::vector<double> scores{0.3, 0.9, 0.5, 0.1, 0.5, 0.7};
        const std::vector<int> g{0, 0, 0, 1, 1, 1};
        // class 0: 0.9(1) 0.5(2) 0.3(0); class 1: 0.7(5) 0.5(4) 0.1(3)
        CHECK(top_k_per_group(scores, g, 2, 2).indices() == std::vector<std::size_t>{1, 2, 5, 4});
    }
    SUBCASE("group out of range") {
        CHECK_THROWS_AS(top_k_per_group(std::vector<double>{1.0}, std::vector<int>{2}, 2, 1), IndexError);
    }
}

TEST_CASE("entropy selection") {
    SUBCASE("one-hot rows tie at zero") {
        const Matrix logits(4, 2, {1000.0, 0.0, 1000.0, 0.0, 0.0, 1000.0, 0.0, 1000.0});
        const SupportSet s = entropy_select(identity_net(2), identity_net(2), logits_target(logits), 1);
        CHECK(s.indices() == std::vector<std::size_t>{0, 2});
        for (const auto& e : s.entries) CHECK(e.distance_score == 0.0);
    }
    SUBCASE("the uniform row is taken first in its class") {
        const Matrix logits(3, 2, {1000.0, 0.0, 0.0, 0.0, 1000.0, 0.0});
        const SupportSet s = entropy_select(identity_net(2), identity_net(2), logits_target(logits), 1);
        CHECK(s.indices() == std::vector<std::size_t>{1});
    }
    SUBCASE("invariant under per-row logit shifts") {
        sna::Rng rng(4);
        Matrix logits = oracle::random_matrix(50, 3, rng);
        const SupportSet a = entropy_select(identity_net(3), identity_net(3), logits_target(logits), 4);
        for (std::size_t i = 0; i < logits.rows(); ++i)
            for (auto& v : logits.row(i)) v += 0.25 * static_cast<double>(i);
        const SupportSet b = entropy_select(identity_net(3), identity_net(3), logits_target(logits), 4);
        CHECK(a.indices() == b.indices());
        for (std::size_t i = 0; i < a.entries.size(); ++i)
            CHECK(a.entries[i].distance_score == doctest::Approx(b.entries[i].distance_score).epsilon(1e-12));
    }
    SUBCASE("true-class grouping needs the flag") {
        const UnlabeledDataset d = logits_target(Matrix(2, 2, {0.0, 1.0, 1.0, 0.0}), {0, 1});
        CHECK_THROWS_AS(entropy_select(identity_net(2), identity_net(2), d, 1, Grouping::true_class, false),
                        ValidationError);
        CHECK(entropy_select(identity_net(2), identity_net(2), d, 1, Grouping::true_class, true).entries.size() == 2);
    }
}

TEST_CASE("mc dropout") {
    sna::Rng rng(12);
    const UnlabeledDataset data = logits_target(oracle::random_matrix(40, 3, rng));
    const Network f = NetworkBuilder(3).dense(4).relu().build(1);
    const Network g = NetworkBuilder(4).dense(3).build(2);

    SUBCASE("one pass without dropout equals entropy selection") {
        const SupportSet mc = mc_dropout_select(f, g, data, 3, 1, 0.0, 9);
        CHECK(mc.entries == entropy_select(f, g, data, 3).entries);
    }
    SUBCASE("fixed seed reproduces scores") {
        CHECK(mc_dropout_scores(f, g, data, 10, 0.5, 3).scores == mc_dropout_scores(f, g, data, 10, 0.5, 3).scores);
        CHECK_FALSE(mc_dropout_scores(f, g, data, 10, 0.5, 3).scores ==
                    mc_dropout_scores(f, g, data, 10, 0.5, 4).scores);
    }
    SUBCASE("score is the mean of per-pass entropies") {
        const auto mc = mc_dropout_scores(f, g, data, 10, 0.5, 1);
        REQUIRE(mc.pass_probabilities.size() == 10);
        for (std::size_t r = 0; r < data.size(); ++r) {
            double acc = 0.0;
            for (const auto& p : mc.pass_probabilities) {
                const std::vector<double> row(p.row(r).begin(), p.row(r).end());
                acc += oracle::scalar_entropy(row);
            }
            CHECK(mc.scores[r] == doctest::Approx(acc / 10.0).epsilon(1e-13));
        }
    }
    SUBCASE("invalid settings") {
        CHECK_THROWS_AS(mc_dropout_scores(f, g, data, 0, 0.5, 1), ValidationError);
        CHECK_THROWS_AS(mc_dropout_scores(f, g, data, 2, 1.0, 1), ValidationError);
    }
}
