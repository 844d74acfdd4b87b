#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sna/matrix.hpp"
#include "sna/nn.hpp"

namespace sna {

enum class OptimizerKind { sgd_momentum, adam };

/// First-order optimizer. Per-parameter state is keyed by position in the parameter list,
/// so the same list order must be passed to every step.
class Optimizer {
public:
    /// Recognized hyperparameters: sgd_momentum {momentum}; adam {beta1, beta2, epsilon}.
    Optimizer(OptimizerKind kind, double learning_rate, std::map<std::string, double> hyper = {});

    static Optimizer sgd(double learning_rate, double momentum = 0.0);
    static Optimizer adam(double learning_rate);

    OptimizerKind kind() const noexcept { return kind_; }
    double learning_rate() const noexcept { return lr_; }
    double hyper(const std::string& name) const;
    std::size_t steps_taken() const noexcept { return t_; }

    /// Applies one update to every parameter and clears its gradient slot.
    /// Throws ProtocolError if any parameter has no gradient.
    void step(std::span<Matrix* const> params);

private:
    OptimizerKind kind_;
    double lr_;
    std::map<std::string, double> hyper_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
};

void step(Optimizer& opt, Network& net);

}  // namespace sna
