#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sna/domains.hpp"
#include "sna/errors.hpp"
#include "sna/ssl.hpp"

using namespace sna;

namespace {

Network small_backbone(std::uint64_t seed = 1) {
    return NetworkBuilder(4).dense(8).batchnorm().relu().dense(6).batchnorm().relu().build(seed);
}

UnlabeledDataset small_target(std::uint64_t seed = 2) {
    DomainSpec s;
    s.input_dim = 4;
    s.samples_per_class = 40;
    s.seed = seed;
    ShiftSpec shift;
    shift.rotation_angle = 0.4;
    return generate_pair(s, shift).target;
}

ByolConfig small_config() {
    ByolConfig c;
    c.projection_dim = 3;
    c.predictor_hidden = 6;
    c.epochs = 8;
    c.batch_size = 32;
    c.learning_rate = 3e-3;
    c.seed = 5;
    return c;
}

bool snapshot_equal_running(const Network& a, const Network& b) {
    for (std::size_t i = 0; i < a.layers().size(); ++i) {
        const auto* x = std::get_if<BatchNormLayer>(&a.layers()[i]);
        const auto* y = std::get_if<BatchNormLayer>(&b.layers()[i]);
        if (x && y && (x->running_mean != y->running_mean || x->running_var != y->running_var)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("augment") {
    sna::Rng rng(1);
    const Matrix x = oracle::random_matrix(10, 4, rng);
    SUBCASE("identity spec returns the input") {
        AugmentSpec id{0.0, 1.0, 1.0, 0.0};
        CHECK(augment(x, id, 3) == x);
    }
    SUBCASE("deterministic in the seed") {
        AugmentSpec spec{0.1, 0.8, 1.25, 0.1};
        CHECK(augment(x, spec, 3) == augment(x, spec, 3));
        CHECK_FALSE(augment(x, spec, 3) == augment(x, spec, 4));
    }
    SUBCASE("noise-only variance") {
        const Matrix big = oracle::random_matrix(10000, 3, rng);
        const AugmentSpec spec{0.3, 1.0, 1.0, 0.0};
        const Matrix v = augment(big, spec, 9);
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0.0, s = 0.0;
            for (std::size_t i = 0; i < big.rows(); ++i) m += v(i, c) - big(i, c);
            m /= 10000.0;
            for (std::size_t i = 0; i < big.rows(); ++i) s += std::pow(v(i, c) - big(i, c) - m, 2);
            s /= 9999.0;
            CHECK(std::abs(s - 0.09) < 0.009);
        }
    }
    SUBCASE("scale is shared within a row and inside the range") {
        const AugmentSpec spec{0.0, 0.8, 1.25, 0.0};
        const Matrix v = augment(x, spec, 2);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double s = v(i, 0) / x(i, 0);
            CHECK(s >= 0.8);
            CHECK(s <= 1.25);
            for (std::size_t c = 1; c < 4; ++c) CHECK(v(i, c) / x(i, c) == doctest::Approx(s));
        }
    }
    SUBCASE("mask rate") {
        const Matrix ones(20000, 2, 1.0);
        const Matrix v = augment(ones, AugmentSpec{0.0, 1.0, 1.0, 0.25}, 4);
        double zeros = 0.0;
        for (double e : v.values()) zeros += e == 0.0;
        CHECK(zeros / 40000.0 == doctest::Approx(0.25).epsilon(0.05));
    }
    SUBCASE("invalid specs") {
        CHECK_THROWS_AS(augment(x, AugmentSpec{-1.0, 1.0, 1.0, 0.0}, 1), ValidationError);
        CHECK_THROWS_AS(augment(x, AugmentSpec{0.0, 1.5, 1.0, 0.0}, 1), ValidationError);
        CHECK_THROWS_AS(augment(x, AugmentSpec{0.0, 1.0, 1.0, 1.0}, 1), ValidationError);
    }
}

TEST_CASE("byol loss constructions") {
    const Matrix p(2, 2, {1.0, 2.0, -3.0, 0.5});
    CHECK(byol_loss(p, p) == doctest::Approx(0.0));
    Matrix scaled = p;
    for (auto& v : scaled.values()) v *= 7.0;
    CHECK(byol_loss(p, scaled) == doctest::Approx(0.0));
    CHECK(byol_loss(p, Matrix(2, 2, {-2.0, 1.0, 0.5, 3.0})) == doctest::Approx(2.0));
    Matrix anti = p;
    for (auto& v : anti.values()) v = -v;
    CHECK(byol_loss(p, anti) == doctest::Approx(4.0));

    std::size_t zero_rows = 0;
    const double l = byol_loss(Matrix(2, 2, {0.0, 0.0, 1.0, 0.0}), Matrix(2, 2, {1.0, 0.0, 1.0, 0.0}), &zero_rows);
    CHECK(zero_rows == 1);
    CHECK(l == doctest::Approx(1.0));  // the zero row contributes 2 - 0
    CHECK_THROWS_AS(byol_loss(p, Matrix(1, 2)), DimensionError);
}

TEST_CASE("byol loss gradient matches finite differences") {
    sna::Rng rng(8);
    const Matrix p = oracle::random_matrix(5, 3, rng);
    const Matrix t = oracle::random_matrix(5, 3, rng);
    const Matrix g = byol_loss_grad(p, t);
    for (std::size_t j = 0; j < p.size(); ++j) {
        Matrix a = p, b = p;
        a.values()[j] += 1e-6;
        b.values()[j] -= 1e-6;
        CHECK(g.values()[j] == doctest::Approx((byol_loss(a, t) - byol_loss(b, t)) / 2e-6).epsilon(1e-6));
    }
}

TEST_CASE("ema update on a scalar parameter") {
    DenseLayer a;
    a.weight = Matrix(1, 1, {2.0});
    a.bias = Matrix(1, 1, {0.0});
    DenseLayer b = a;
    b.weight(0, 0) = 3.0;
    Network target({a}), online({b});
    ema_update(target, online, 0.999);
    CHECK(std::get<DenseLayer>(target.layers()[0]).weight(0, 0) == doctest::Approx(0.999 * 2.0 + 0.001 * 3.0));
}

TEST_CASE("property: ema is the stated convex combination") {
    sna::Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t in = 0;
        Network t = oracle::random_small_network(rng, in, 32, false);
        Network o = t;
        for (auto* m : o.parameters())
            for (auto& v : m->values()) v += std::normal_distribution<double>(0.0, 1.0)(rng);
        const std::vector<const Matrix*> before_t = std::as_const(t).parameters();
        std::vector<Matrix> old;
        for (auto* m : before_t) old.push_back(*m);
        const double tau = std::uniform_real_distribution<double>(0.5, 0.999)(rng);
        ema_update(t, o, tau);
        const auto now = std::as_const(t).parameters();
        const auto on = std::as_const(o).parameters();
        for (std::size_t p = 0; p < now.size(); ++p)
            for (std::size_t j = 0; j < now[p]->size(); ++j)
                CHECK(std::abs(now[p]->values()[j] - (tau * old[p].values()[j] + (1 - tau) * on[p]->values()[j])) <
                      1e-12);
    }
}

TEST_CASE("zero epochs leaves the backbone untouched") {
    const Network f = small_backbone();
    const UnlabeledDataset data = small_target();
    ByolConfig cfg = small_config();
    cfg.epochs = 0;
    const ByolResult r = train_byol(f, data, cfg);
    CHECK(fingerprint(r.backbone.parameters()) == fingerprint(f.parameters()));
    CHECK(snapshot_equal_running(r.backbone, f));
    ByolConfig resolved = cfg;
    const ByolState s = init_byol(f, resolved);
    CHECK(fingerprint(r.projector.parameters()) == fingerprint(s.online_projector.parameters()));
    CHECK(r.trace.epoch_loss.empty());
}

TEST_CASE("training contracts") {
    const Network f = small_backbone();
    const UnlabeledDataset data = small_target();
    const ByolConfig cfg = small_config();

    SUBCASE("loss bounds, decrease and output width") {
        const ByolResult r = train_byol(f, data, cfg);
        REQUIRE(r.trace.epoch_loss.size() == cfg.epochs);
        CHECK(r.trace.epoch_loss.back() <= r.trace.epoch_loss.front());
        for (double l : r.trace.batch_loss_forward) CHECK((l >= 0.0 && l <= 4.0));
        for (double l : r.trace.batch_loss_reverse) CHECK((l >= 0.0 && l <= 4.0));
        const Matrix z = predict(r.projector, predict(r.backbone, data.features()));
        CHECK(z.cols() == cfg.projection_dim);
        // running statistics moved toward the target domain
        const auto& bn0 = std::get<BatchNormLayer>(r.backbone.layers()[1]);
        const auto& src0 = std::get<BatchNormLayer>(f.layers()[1]);
        CHECK_FALSE(bn0.running_mean == src0.running_mean);
    }
    SUBCASE("target networks never hold gradients") {
        ByolConfig run = cfg;
        ByolState s = init_byol(f, run);
        Optimizer opt = Optimizer::adam(run.learning_rate);
        ByolTrace trace;
        for (std::uint64_t step = 0; step < 10; ++step) {
            byol_step(s, data.features(), run, opt, step, trace);
            CHECK_FALSE(holds_any_gradient(s.target_backbone));
            CHECK_FALSE(holds_any_gradient(s.target_projector));
        }
    }
    SUBCASE("deterministic") {
        const ByolResult a = train_byol(f, data, cfg);
        const ByolResult b = train_byol(f, data, cfg);
        CHECK(fingerprint(a.backbone.parameters()) == fingerprint(b.backbone.parameters()));
        CHECK(a.trace.epoch_loss == b.trace.epoch_loss);
    }
}

TEST_CASE("config validation") {
    ByolConfig c = small_config();
    CHECK_NOTHROW(c.validate(6));
    c.projection_dim = 6;
    CHECK_THROWS_AS(c.validate(6), ValidationError);
    c = small_config();
    c.ema_decay = 1.0;
    CHECK_THROWS_AS(c.validate(6), ValidationError);
    CHECK_THROWS_AS(train_byol(NetworkBuilder(3).dense(6).build(0), small_target(), small_config()), DimensionError);
}
