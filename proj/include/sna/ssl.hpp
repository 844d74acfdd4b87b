#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sna/domains.hpp"
#include "sna/nn.hpp"
#include "sna/optim.hpp"

namespace sna {

/// Vector-space augmentation: view = (x * mask) * s + noise, with s ~ U[scale_lo, scale_hi]
/// per sample, mask ~ Bernoulli(1 - mask_probability) per coordinate and noise ~ N(0, noise_std^2).
struct AugmentSpec {
    double noise_std = 0.0;
    double scale_lo = 0.8;
    double scale_hi = 1.25;
    double mask_probability = 0.1;

    void validate() const;
};

Matrix augment(const Matrix& batch, const AugmentSpec& spec, std::uint64_t seed);

struct ByolConfig {
    std::size_t projection_dim = 8;
    std::size_t predictor_hidden = 16;
    double ema_decay = 0.99;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    AugmentSpec augmentation{};
    /// When set, augmentation.noise_std is replaced by this fraction of the mean
    /// per-coordinate standard deviation of the training data.
    std::optional<double> noise_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate(std::size_t backbone_width) const;
};

/// Online/target pairs of a BYOL run. Target networks only move by EMA.
struct ByolState {
    Network online_backbone;
    Network online_projector;
    Network online_predictor;
    Network target_backbone;
    Network target_projector;
};

struct ByolTrace {
    std::vector<double> epoch_loss;          // mean symmetrized loss per epoch
    std::vector<double> batch_loss_forward;  // prediction(view 1) vs target(view 2)
    std::vector<double> batch_loss_reverse;  // prediction(view 2) vs target(view 1)
    std::size_t zero_norm_rows = 0;
};

struct ByolResult {
    Network backbone;   // f'
    Network projector;  // q
    ByolTrace trace;
};

/// Mean over rows of 2 - 2 cos(prediction_i, target_i). Row norms below 1e-12 are floored and
/// counted into *zero_norm_rows when given.
double byol_loss(const Matrix& prediction, const Matrix& target, std::size_t* zero_norm_rows = nullptr);

/// Gradient of byol_loss with respect to the prediction.
Matrix byol_loss_grad(const Matrix& prediction, const Matrix& target);

/// target <- tau * target + (1 - tau) * online, over weights, biases, gamma and beta.
void ema_update(Network& target, const Network& online, double tau);

ByolState init_byol(const Network& backbone, const ByolConfig& cfg);

/// One symmetrized update on a batch. Returns the two per-ordering losses.
std::pair<double, double> byol_step(ByolState& state, const Matrix& batch, const ByolConfig& cfg,
                                    Optimizer& opt, std::uint64_t step_seed, ByolTrace& trace);

ByolResult train_byol(const Network& backbone, const UnlabeledDataset& data, const ByolConfig& cfg);

/// Parameter list shared by the three online networks, in optimizer order.
std::vector<Matrix*> online_parameters(ByolState& state);

/// True if any parameter matrix (trainable or not) of the network holds a gradient.
bool holds_any_gradient(const Network& net);

}  // namespace sna
