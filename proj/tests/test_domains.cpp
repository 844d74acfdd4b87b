#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sna/domains.hpp"
#include "sna/errors.hpp"

using namespace sna;
namespace fs = std::filesystem;

namespace {

fs::path workdir(const std::string& name) {
    const fs::path p = fs::path(SNA_TEST_WORKDIR) / name;
    fs::create_directories(p);
    return p;
}

// Per-class feature means, rows = classes.
Matrix class_means(const Matrix& x, const std::vector<int>& y, int classes) {
    Matrix m(static_cast<std::size_t>(classes), x.cols());
    std::vector<double> n(static_cast<std::size_t>(classes), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto c = static_cast<std::size_t>(y[i]);
        n[c] += 1.0;
        for (std::size_t j = 0; j < x.cols(); ++j) m(c, j) += x(i, j);
    }
    for (std::size_t c = 0; c < m.rows(); ++c)
        for (std::size_t j = 0; j < m.cols(); ++j) m(c, j) /= n[c];
    return m;
}

DomainSpec small_spec(std::uint64_t seed = 3) {
    DomainSpec s;
    s.num_classes = 3;
    s.input_dim = 4;
    s.samples_per_class = 50;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("generated pair shapes and balance") {
    const DomainPair p = generate_pair(small_spec(), ShiftSpec{});
    CHECK(p.source.features.rows() == 150);
    CHECK(p.source.features.cols() == 4);
    CHECK(p.target.size() == 150);
    std::vector<int> counts(3, 0);
    for (int l : p.source.labels) ++counts[static_cast<std::size_t>(l)];
    CHECK(counts == std::vector<int>{50, 50, 50});
    CHECK(p.source.meta.at("domain") == "source");
    CHECK(p.target.meta().at("domain") == "target");
}

TEST_CASE("identity shift draws from the source distribution") {
    DomainSpec spec = small_spec(8);
    spec.samples_per_class = 400;
    const DomainPair p = generate_pair(spec, ShiftSpec{});
    const auto& ty = p.target.hidden_labels(GroundTruthPermit::diagnostic());
    const Matrix ms = class_means(p.source.features, p.source.labels, 3);
    const Matrix mt = class_means(p.target.features(), ty, 3);
    // two independent means: standard error of the difference is sigma * sqrt(2/n)
    const double se = spec.within_class_std * std::sqrt(2.0 / 400.0);
    for (std::size_t i = 0; i < ms.size(); ++i) CHECK(std::abs(ms.values()[i] - mt.values()[i]) < 3.5 * se);
    CHECK_FALSE(p.source.features == p.target.features());
}

TEST_CASE("translation-only shift moves class means by t") {
    DomainSpec spec = small_spec(12);
    spec.samples_per_class = 1000;
    ShiftSpec shift;
    shift.translation = {1.0, -2.0, 0.5, 3.0};
    const DomainPair p = generate_pair(spec, shift);
    const Matrix ms = class_means(p.source.features, p.source.labels, 3);
    const Matrix mt = class_means(p.target.features(), p.target.hidden_labels(GroundTruthPermit::diagnostic()), 3);
    const double se = spec.within_class_std * std::sqrt(2.0 / 1000.0);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(mt(c, j) - ms(c, j) - shift.translation[j]) < 3.5 * se);
}

TEST_CASE("shift is invertible: undoing it recovers the source class means") {
    DomainSpec spec = small_spec(4);
    spec.samples_per_class = 1000;
    ShiftSpec shift;
    shift.rotation_angle = 0.7;
    shift.scale = 1.5;
    shift.translation = {0.5, 0.5, -1.0, 2.0};
    const DomainPair p = generate_pair(spec, shift);
    const Matrix r = rotation_matrix(4, 0.7, derive_seed(spec.seed, 4));
    Matrix back(p.target.size(), 4);
    for (std::size_t i = 0; i < back.rows(); ++i)
        for (std::size_t a = 0; a < 4; ++a) {
            double acc = 0.0;
            for (std::size_t b = 0; b < 4; ++b) acc += r(b, a) * (p.target.features()(i, b) - shift.translation[b]);
            back(i, a) = acc / shift.scale;
        }
    const Matrix ms = class_means(p.source.features, p.source.labels, 3);
    const Matrix mb = class_means(back, p.target.hidden_labels(GroundTruthPermit::diagnostic()), 3);
    const double se = spec.within_class_std * std::sqrt(2.0 / 1000.0);
    for (std::size_t i = 0; i < ms.size(); ++i) CHECK(std::abs(ms.values()[i] - mb.values()[i]) < 3.5 * se);
}

TEST_CASE("rotation matrix is orthogonal") {
    for (std::size_t dim : {2u, 3u, 16u}) {
        const Matrix r = rotation_matrix(dim, 0.5235987755982988, 77);
        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = 0; b < dim; ++b) {
                double dot = 0.0;
                for (std::size_t k = 0; k < dim; ++k) dot += r(k, a) * r(k, b);
                CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-12);
            }
    }
    const Matrix id = rotation_matrix(3, 0.0, 1);
    CHECK(id == Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
}

TEST_CASE("generation is deterministic in the seed") {
    ShiftSpec shift;
    shift.rotation_angle = 0.3;
    shift.noise_std = 0.2;
    const DomainPair a = generate_pair(small_spec(5), shift);
    const DomainPair b = generate_pair(small_spec(5), shift);
    const DomainPair c = generate_pair(small_spec(6), shift);
    CHECK(a.source == b.source);
    CHECK(a.target == b.target);
    CHECK_FALSE(a.source == c.source);
}

TEST_CASE("degenerate specs are refused") {
    DomainSpec s = small_spec();
    s.num_classes = 1;
    CHECK_THROWS_AS(generate_pair(s, ShiftSpec{}), ValidationError);
    s = small_spec();
    s.input_dim = 1;
    CHECK_THROWS_AS(generate_pair(s, ShiftSpec{}), ValidationError);
    s = small_spec();
    s.samples_per_class = 0;
    CHECK_THROWS_AS(generate_pair(s, ShiftSpec{}), ValidationError);
    ShiftSpec bad;
    bad.scale = 0.0;
    CHECK_THROWS_AS(generate_pair(small_spec(), bad), ValidationError);
    bad = ShiftSpec{};
    bad.noise_std = -1.0;
    CHECK_THROWS_AS(generate_pair(small_spec(), bad), ValidationError);
    bad = ShiftSpec{};
    bad.translation = {1.0};
    CHECK_THROWS_AS(generate_pair(small_spec(), bad), ValidationError);
}

TEST_CASE("target skew shrinks later classes") {
    DomainSpec s = small_spec();
    s.target_skew = 0.5;
    const DomainPair p = generate_pair(s, ShiftSpec{});
    std::vector<int> counts(3, 0);
    for (int l : p.target.hidden_labels(GroundTruthPermit::diagnostic())) ++counts[static_cast<std::size_t>(l)];
    CHECK(counts == std::vector<int>{50, 38, 25});
}

TEST_CASE("annotate is the label door") {
    const DomainPair p = generate_pair(small_spec(), ShiftSpec{});
    access_audit::reset();
    CHECK(p.target.annotate(std::vector<std::size_t>{}).empty());

    std::vector<std::size_t> all(p.target.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto pairs = p.target.annotate(all);
    REQUIRE(pairs.size() == p.target.size());
    const auto& truth = p.target.hidden_labels(GroundTruthPermit::diagnostic());
    for (const auto& lp : pairs) {
        CHECK(lp.label == truth[lp.index]);
        CHECK(lp.feature.size() == 4);
    }

    const std::vector<std::size_t> support{3, 10, 40, 41, 90, 120};  // K=2, C=3
    CHECK(p.target.annotate(support).size() == 6);

    CHECK_THROWS_AS(p.target.annotate(std::vector<std::size_t>{1, 1}), ValidationError);
    CHECK_THROWS_AS(p.target.annotate(std::vector<std::size_t>{150}), ValidationError);

    const UnlabeledDataset unknown(Matrix(2, 2, 0.0), {-1, 0}, 2);
    CHECK_THROWS_AS(unknown.annotate(std::vector<std::size_t>{0}), ValidationError);
    CHECK(unknown.annotate(std::vector<std::size_t>{1}).front().label == 0);
}

TEST_CASE("label reads are audited with the active stage") {
    const DomainPair p = generate_pair(small_spec(), ShiftSpec{});
    access_audit::reset();
    {
        StageScope outer("evaluate");
        p.target.hidden_labels(GroundTruthPermit::evaluation());
        {
            StageScope inner("select");
            p.target.annotate(std::vector<std::size_t>{0, 1});
        }
        CHECK(StageScope::current() == "evaluate");
    }
    const auto ev = access_audit::events();
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].purpose == GroundTruthPurpose::evaluation);
    CHECK(ev[0].stage == "evaluate");
    CHECK(ev[0].count == 150);
    CHECK(ev[1].purpose == GroundTruthPurpose::annotation);
    CHECK(ev[1].stage == "select");
    CHECK(ev[1].count == 2);
}

TEST_CASE("dataset files round trip") {
    ShiftSpec shift;
    shift.rotation_angle = 0.4;
    shift.noise_std = 0.1;
    const DomainPair p = generate_pair(small_spec(), shift);
    const fs::path dir = workdir("datasets");
    save_dataset(dir / "s.csv", p.source);
    save_dataset(dir / "t.csv", p.target);
    CHECK(load_labeled_dataset(dir / "s.csv") == p.source);
    CHECK(load_unlabeled_dataset(dir / "t.csv") == p.target);
    CHECK_THROWS_AS(load_unlabeled_dataset(dir / "s.csv"), ValidationError);
}

TEST_CASE("malformed dataset files are refused") {
    const DomainPair p = generate_pair(small_spec(), ShiftSpec{});
    const fs::path dir = workdir("datasets_bad");
    save_dataset(dir / "s.csv", p.source);
    std::ifstream in(dir / "s.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    SUBCASE("truncated") {
        std::ofstream(dir / "cut.csv") << text.substr(0, text.size() / 2);
        CHECK_THROWS_AS(load_labeled_dataset(dir / "cut.csv"), ParseError);
    }
    SUBCASE("label outside the class range") {
        std::string bad = text;
        const auto data_pos = bad.find("\ndata\n") + 6;
        const auto eol = bad.find('\n', data_pos);
        const auto comma = bad.rfind(',', eol);
        bad.replace(comma + 1, eol - comma - 1, "3");
        std::ofstream(dir / "label.csv") << bad;
        CHECK_THROWS_AS(load_labeled_dataset(dir / "label.csv"), ValidationError);
    }
    SUBCASE("garbage number reports its line") {
        std::string bad = text;
        const auto data_pos = bad.find("\ndata\n") + 6;
        bad.replace(data_pos, 3, "x,y");
        std::ofstream(dir / "garbage.csv") << bad;
        try {
            load_labeled_dataset(dir / "garbage.csv");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() > 1);
        }
    }
}
