#include "sna/optim.hpp"

#include <cmath>

#include "sna/errors.hpp"

namespace sna {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::map<std::string, double> hyper)
    : kind_(kind), lr_(learning_rate), hyper_(std::move(hyper)) {
    if (!(learning_rate > 0.0)) throw ValidationError("optimizer: learning rate must be positive");
    auto def = [&](const char* k, double v) { hyper_.try_emplace(k, v); };
    if (kind_ == OptimizerKind::adam) {
        def("beta1", 0.9);
        def("beta2", 0.999);
        def("epsilon", 1e-8);
    } else {
        def("momentum", 0.0);
    }
}

Optimizer Optimizer::sgd(double learning_rate, double momentum) {
    return Optimizer(OptimizerKind::sgd_momentum, learning_rate, {{"momentum", momentum}});
}

Optimizer Optimizer::adam(double learning_rate) { return Optimizer(OptimizerKind::adam, learning_rate); }

double Optimizer::hyper(const std::string& name) const {
    auto it = hyper_.find(name);
    if (it == hyper_.end()) throw ValidationError("optimizer: unknown hyperparameter " + name);
    return it->second;
}

void Optimizer::step(std::span<Matrix* const> params) {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i]->has_grad())
            throw ProtocolError("optimizer: parameter " + std::to_string(i) + " has no gradient");

    if (first_.empty()) {
        for (const Matrix* p : params) {
            first_.emplace_back(p->size(), 0.0);
            if (kind_ == OptimizerKind::adam) second_.emplace_back(p->size(), 0.0);
        }
    }
    if (first_.size() != params.size()) throw ProtocolError("optimizer: parameter list changed");
    ++t_;

    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        if (first_[i].size() != p.size()) throw ProtocolError("optimizer: parameter shape changed");
        auto& values = p.values();
        const auto& g = p.grad();
        if (kind_ == OptimizerKind::sgd_momentum) {
            const double mu = hyper_.at("momentum");
            for (std::size_t j = 0; j < values.size(); ++j) {
                first_[i][j] = mu * first_[i][j] + g[j];
                values[j] -= lr_ * first_[i][j];
            }
        } else {
            const double b1 = hyper_.at("beta1"), b2 = hyper_.at("beta2"), eps = hyper_.at("epsilon");
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
            for (std::size_t j = 0; j < values.size(); ++j) {
                first_[i][j] = b1 * first_[i][j] + (1.0 - b1) * g[j];
                second_[i][j] = b2 * second_[i][j] + (1.0 - b2) * g[j] * g[j];
                const double mhat = first_[i][j] / c1;
                const double vhat = second_[i][j] / c2;
                values[j] -= lr_ * mhat / (std::sqrt(vhat) + eps);
            }
        }
        p.clear_grad();
    }
}

void step(Optimizer& opt, Network& net) {
    auto params = net.parameters();
    opt.step(params);
}

}  // namespace sna
