#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sna/errors.hpp"
#include "sna/nn.hpp"
#include "sna/optim.hpp"

using namespace sna;

namespace {

Network single_bn() { return NetworkBuilder(1).batchnorm().build(0); }

}  // namespace

TEST_CASE("batchnorm normalizes a two-row batch") {
    Network net = single_bn();
    const Matrix y = forward(net, Matrix(2, 1, {1.0, 3.0}), Mode::train);
    CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y(1, 0) == doctest::Approx(1.0).epsilon(1e-5));
    const auto& bn = std::get<BatchNormLayer>(net.layers()[0]);
    CHECK(bn.running_mean[0] == doctest::Approx(0.2));
    CHECK(bn.running_var[0] == doctest::Approx(1.0));
}

TEST_CASE("constant column maps to zero") {
    Network net = single_bn();
    const Matrix y = forward(net, Matrix(2, 1, {5.0, 5.0}), Mode::train);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(1, 0) == 0.0);
}

TEST_CASE("dropout is the identity in eval mode") {
    Network net = NetworkBuilder(3).dropout(0.5).build(7);
    sna::Rng rng(1);
    const Matrix x = oracle::random_matrix(5, 3, rng);
    CHECK(forward(net, x, Mode::eval) == x);
    CHECK(predict(net, x) == x);
}

TEST_CASE("inverted dropout keeps the expectation") {
    Network net = NetworkBuilder(1).dropout(0.25).build(3);
    const Matrix x(20000, 1, 1.0);
    const Matrix y = forward(net, x, Mode::train);
    double mean = 0.0;
    for (double v : y.values()) mean += v;
    mean /= 20000.0;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("scalar dense layer derivative") {
    DenseLayer d;
    d.weight = Matrix(1, 1, {2.0});
    d.bias = Matrix(1, 1, {0.0});
    Network net({d});
    forward(net, Matrix(1, 1, {3.0}), Mode::train);
    const Matrix dx = backward(net, Matrix(1, 1, {1.0}));
    const auto& layer = std::get<DenseLayer>(net.layers()[0]);
    CHECK(layer.weight.grad()[0] == 3.0);
    CHECK(dx(0, 0) == 2.0);
}

TEST_CASE("frozen layers get no gradient slots") {
    Network net = NetworkBuilder(2).dense(2).relu().dense(1).build(4);
    std::get<DenseLayer>(net.layers()[0]).trainable = false;
    sna::Rng rng(2);
    forward(net, oracle::random_matrix(4, 2, rng), Mode::train);
    const Matrix dx = backward(net, Matrix(4, 1, 1.0));
    const auto& frozen = std::get<DenseLayer>(net.layers()[0]);
    CHECK_FALSE(frozen.weight.has_grad());
    CHECK_FALSE(frozen.bias.has_grad());
    CHECK(std::get<DenseLayer>(net.layers()[2]).weight.has_grad());
    CHECK(dx.rows() == 4);
    CHECK(net.parameters().size() == 2);
}

TEST_CASE("reverse-mode gradients match central differences") {
    sna::Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        std::size_t in = 0;
        const Network net = oracle::random_small_network(rng, in);
        const Matrix x = oracle::random_matrix(5, in, rng);
        Network shape = net;
        const Matrix w = oracle::random_matrix(5, predict(shape, x).cols(), rng);
        const auto r = oracle::check_gradients(net, x, w);
        CAPTURE(trial);
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("backward without forward is a protocol error") {
    Network net = NetworkBuilder(2).dense(2).build(0);
    CHECK_THROWS_AS(backward(net, Matrix(1, 2)), ProtocolError);
    forward(net, Matrix(1, 2, 1.0), Mode::train);
    backward(net, Matrix(1, 2, 1.0));
    CHECK_THROWS_AS(backward(net, Matrix(1, 2, 1.0)), ProtocolError);
}

TEST_CASE("shape and finiteness are checked on input") {
    Network net = NetworkBuilder(3).dense(2).build(0);
    CHECK_THROWS_AS(forward(net, Matrix(2, 2), Mode::train), DimensionError);
    Matrix bad(1, 3, 0.0);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(forward(net, bad, Mode::eval), NumericError);
}

TEST_CASE("softmax") {
    SUBCASE("symmetric row") {
        const Matrix p = softmax(Matrix(1, 2, {0.0, 0.0}));
        CHECK(p(0, 0) == 0.5);
        CHECK(p(0, 1) == 0.5);
    }
    SUBCASE("large logits do not overflow") {
        const Matrix p = softmax(Matrix(1, 2, {1000.0, 0.0}));
        CHECK(p(0, 0) == doctest::Approx(1.0));
        CHECK(p(0, 1) >= 0.0);
        CHECK(p.all_finite());
    }
    SUBCASE("matches direct exp/sum") {
        const std::vector<double> row{1.0, 2.0, 3.0};
        const Matrix p = softmax(Matrix(1, 3, row));
        for (std::size_t j = 0; j < 3; ++j) CHECK(p(0, j) == doctest::Approx(oracle::scalar_softmax_entry(row, j)));
    }
    SUBCASE("rows sum to one") {
        sna::Rng rng(5);
        const Matrix p = softmax(oracle::random_matrix(50, 4, rng, 10.0));
        for (std::size_t i = 0; i < 50; ++i) {
            double s = 0.0;
            for (double v : p.row(i)) s += v;
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("cross entropy") {
    const std::vector<int> zero{0};
    CHECK(cross_entropy(Matrix(1, 2, {1.0, 0.0}), zero) == 0.0);
    CHECK(cross_entropy(Matrix(1, 2, {0.5, 0.5}), zero) == doctest::Approx(std::log(2.0)));
    const Matrix p(3, 3, {0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4});
    const std::vector<int> y{0, 2, 1};
    const double expected = (-std::log(0.7) - std::log(0.1) - std::log(0.3)) / 3.0;
    CHECK(cross_entropy(p, y) == doctest::Approx(expected));
    CHECK(cross_entropy(Matrix(1, 2, {1.0, 0.0}), std::vector<int>{1}) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy(p, std::vector<int>{0, 1, 3}), IndexError);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
    sna::Rng rng(9);
    const Matrix logits = oracle::random_matrix(4, 3, rng);
    const std::vector<int> y{0, 2, 1, 1};
    const Matrix g = softmax_cross_entropy_grad(logits, y);
    for (std::size_t j = 0; j < logits.size(); ++j) {
        Matrix a = logits, b = logits;
        a.values()[j] += 1e-5;
        b.values()[j] -= 1e-5;
        const double fd = (cross_entropy(softmax(a), y) - cross_entropy(softmax(b), y)) / 2e-5;
        CHECK(g.values()[j] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("optimizer steps") {
    SUBCASE("plain sgd") {
        Matrix p(1, 1, {1.0});
        p.accumulate_grad(std::vector<double>{1.0});
        Optimizer opt = Optimizer::sgd(0.1);
        Matrix* params[] = {&p};
        opt.step(params);
        CHECK(p(0, 0) == doctest::Approx(0.9));
        CHECK_FALSE(p.has_grad());
    }
    SUBCASE("adam first step follows the recurrence") {
        const double lr = 0.01, g = -0.3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        Matrix p(1, 1, {0.5});
        p.accumulate_grad(std::vector<double>{g});
        Optimizer opt = Optimizer::adam(lr);
        Matrix* params[] = {&p};
        opt.step(params);
        const double m = (1 - b1) * g, v = (1 - b2) * g * g;
        const double mhat = m / (1 - b1), vhat = v / (1 - b2);
        CHECK(p(0, 0) == doctest::Approx(0.5 - lr * mhat / (std::sqrt(vhat) + eps)).epsilon(1e-14));
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        for (auto opt : {Optimizer::adam(0.1), Optimizer::sgd(0.1, 0.9)}) {
            Matrix p(1, 2, {0.25, -4.0});
            p.accumulate_grad(std::vector<double>{0.0, 0.0});
            Matrix* params[] = {&p};
            opt.step(params);
            CHECK(p == Matrix(1, 2, {0.25, -4.0}));
        }
    }
    SUBCASE("missing gradient is a protocol error") {
        Matrix p(1, 1, {1.0});
        Matrix* params[] = {&p};
        Optimizer opt = Optimizer::adam(0.1);
        CHECK_THROWS_AS(opt.step(params), ProtocolError);
    }
    SUBCASE("non-positive learning rate is refused") {
        CHECK_THROWS_AS(Optimizer::adam(0.0), ValidationError);
    }
}

TEST_CASE("property: batchnorm train output is standardized before the affine map") {
    sna::Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Network net = NetworkBuilder(4).batchnorm().build(1);
        const Matrix x = oracle::random_matrix(3 + static_cast<std::size_t>(trial), 4, rng, 3.0);
        const Matrix y = forward(net, x, Mode::train);
        for (std::size_t c = 0; c < 4; ++c) {
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < y.rows(); ++i) m += y(i, c);
            m /= static_cast<double>(y.rows());
            for (std::size_t i = 0; i < y.rows(); ++i) v += (y(i, c) - m) * (y(i, c) - m);
            v /= static_cast<double>(y.rows());
            CHECK(std::abs(m) < 1e-6);
            CHECK(std::abs(v - 1.0) < 1e-5 + 1e-4);  // epsilon shrinks the variance slightly
        }
    }
}

TEST_CASE("property: running statistics are fixed under eval forwards") {
    sna::Rng rng(3);
    Network net = NetworkBuilder(3).dense(4).batchnorm().relu().build(2);
    forward(net, oracle::random_matrix(8, 3, rng), Mode::train);
    const auto before = std::get<BatchNormLayer>(net.layers()[1]).running_mean;
    const auto before_var = std::get<BatchNormLayer>(net.layers()[1]).running_var;
    for (int i = 0; i < 5; ++i) forward(net, oracle::random_matrix(8, 3, rng), Mode::eval);
    CHECK(std::get<BatchNormLayer>(net.layers()[1]).running_mean == before);
    CHECK(std::get<BatchNormLayer>(net.layers()[1]).running_var == before_var);
}

TEST_CASE("property: identical seeds give bit-identical training") {
    auto train = [] {
        Network net = NetworkBuilder(3).dense(4).batchnorm().relu().dropout(0.2).dense(2).build(17);
        Optimizer opt = Optimizer::adam(0.01);
        sna::Rng rng(99);
        for (int s = 0; s < 20; ++s) {
            const Matrix x = oracle::random_matrix(6, 3, rng);
            const std::vector<int> y{0, 1, 0, 1, 1, 0};
            const Matrix logits = forward(net, x, Mode::train);
            backward(net, softmax_cross_entropy_grad(logits, y));
            step(opt, net);
        }
        return fingerprint(std::as_const(net).parameters());
    };
    CHECK(train() == train());
}

TEST_CASE("argmax ties go to the lower column") {
    CHECK(argmax_rows(Matrix(2, 3, {1.0, 1.0, 0.0, 0.0, 2.0, 2.0})) == std::vector<int>{0, 1});
}

TEST_CASE("network width validation") {
    DenseLayer a;
    a.weight = Matrix(2, 3);
    a.bias = Matrix(1, 3);
    DenseLayer b;
    b.weight = Matrix(2, 1);
    b.bias = Matrix(1, 1);
    CHECK_THROWS_AS(Network({a, b}), DimensionError);
}
