#include "sna/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sna/errors.hpp"
#include "sna/rng.hpp"

namespace sna {

namespace {

constexpr double kNormFloor = 1e-12;

template <class Fn>
void for_each_affine(Network& net, Fn&& fn) {
    for (auto& layer : net.layers()) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            fn(d->weight);
            fn(d->bias);
        } else if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            fn(b->gamma);
            fn(b->beta);
            if (b->mixing) {
                fn(b->mixing->mean_logit);
                fn(b->mixing->var_logit);
            }
        }
    }
}

double mean_feature_std(const Matrix& x) {
    if (x.rows() < 2) return 1.0;
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c);
        mean /= static_cast<double>(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) sq += (x(r, c) - mean) * (x(r, c) - mean);
        total += std::sqrt(sq / static_cast<double>(x.rows()));
    }
    return total / static_cast<double>(x.cols());
}

Matrix chain_forward(std::initializer_list<Network*> nets, const Matrix& x, Mode mode) {
    Matrix h = x;
    for (Network* n : nets) h = forward(*n, h, mode);
    return h;
}

}  // namespace

void AugmentSpec::validate() const {
    if (!(noise_std >= 0.0)) throw ValidationError("augment: noise_std must be non-negative");
    if (!(scale_lo > 0.0) || scale_hi < scale_lo) throw ValidationError("augment: need 0 < scale_lo <= scale_hi");
    if (mask_probability < 0.0 || mask_probability >= 1.0)
        throw ValidationError("augment: mask_probability must lie in [0,1)");
}

Matrix augment(const Matrix& batch, const AugmentSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::uniform_real_distribution<double> scale(spec.scale_lo, spec.scale_hi);
    std::bernoulli_distribution masked(spec.mask_probability);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix out(batch.rows(), batch.cols());
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        const double s = spec.scale_lo == spec.scale_hi ? spec.scale_lo : scale(rng);
        for (std::size_t c = 0; c < batch.cols(); ++c) {
            const bool drop = spec.mask_probability > 0.0 && masked(rng);
            double v = drop ? 0.0 : batch(r, c) * s;
            if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
            out(r, c) = v;
        }
    }
    return out;
}

void ByolConfig::validate(std::size_t backbone_width) const {
    if (projection_dim == 0 || projection_dim >= backbone_width)
        throw ValidationError("byol: projection_dim must satisfy 0 < d < " + std::to_string(backbone_width));
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ValidationError("byol: ema_decay must lie in (0,1)");
    if (batch_size < 2) throw ValidationError("byol: batch_size must be at least 2");
    if (predictor_hidden == 0) throw ValidationError("byol: predictor_hidden must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("byol: learning_rate must be positive");
    augmentation.validate();
}

double byol_loss(const Matrix& prediction, const Matrix& target, std::size_t* zero_norm_rows) {
    require_shape(target, prediction.rows(), prediction.cols(), "byol_loss target");
    if (prediction.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < prediction.rows(); ++r) {
        auto p = prediction.row(r);
        auto z = target.row(r);
        double pp = 0.0, zz = 0.0, pz = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            pp += p[c] * p[c];
            zz += z[c] * z[c];
            pz += p[c] * z[c];
        }
        double np = std::sqrt(pp), nz = std::sqrt(zz);
        if (np < kNormFloor || nz < kNormFloor) {
            if (zero_norm_rows) ++*zero_norm_rows;
            np = std::max(np, kNormFloor);
            nz = std::max(nz, kNormFloor);
        }
        const double cosine = std::clamp(pz / (np * nz), -1.0, 1.0);
        total += 2.0 - 2.0 * cosine;
    }
    return total / static_cast<double>(prediction.rows());
}

Matrix byol_loss_grad(const Matrix& prediction, const Matrix& target) {
    require_shape(target, prediction.rows(), prediction.cols(), "byol_loss target");
    Matrix g(prediction.rows(), prediction.cols());
    const double n = static_cast<double>(std::max<std::size_t>(1, prediction.rows()));
    for (std::size_t r = 0; r < prediction.rows(); ++r) {
        auto p = prediction.row(r);
        auto z = target.row(r);
        double pp = 0.0, zz = 0.0, pz = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            pp += p[c] * p[c];
            zz += z[c] * z[c];
            pz += p[c] * z[c];
        }
        const double np = std::max(std::sqrt(pp), kNormFloor), nz = std::max(std::sqrt(zz), kNormFloor);
        const double cosine = pz / (np * nz);
        for (std::size_t c = 0; c < p.size(); ++c)
            g(r, c) = -2.0 / n * (z[c] / (np * nz) - cosine * p[c] / (np * np));
    }
    return g;
}

void ema_update(Network& target, const Network& online, double tau) {
    std::vector<const Matrix*> src;
    for_each_affine(const_cast<Network&>(online), [&](Matrix& m) { src.push_back(&m); });
    std::size_t i = 0;
    for_each_affine(target, [&](Matrix& m) {
        if (i >= src.size() || src[i]->size() != m.size()) throw DimensionError("ema: architectures differ");
        auto& dst = m.values();
        const auto& s = src[i]->values();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = tau * dst[j] + (1.0 - tau) * s[j];
        ++i;
    });
    if (i != src.size()) throw DimensionError("ema: architectures differ");
}

bool holds_any_gradient(const Network& net) {
    bool any = false;
    for_each_affine(const_cast<Network&>(net), [&](Matrix& m) { any = any || m.has_grad(); });
    return any;
}

ByolState init_byol(const Network& backbone, const ByolConfig& cfg) {
    const std::size_t width = backbone.output_width();
    cfg.validate(width);
    const std::size_t d = cfg.projection_dim;
    ByolState s;
    s.online_backbone = backbone;
    s.online_backbone.set_trainable(true);
    s.online_backbone.clear_caches();
    s.online_projector = NetworkBuilder(width).dense(2 * d).batchnorm().relu().dense(d).build(derive_seed(cfg.seed, 11));
    s.online_predictor =
        NetworkBuilder(d).dense(cfg.predictor_hidden).batchnorm().relu().dense(d).build(derive_seed(cfg.seed, 12));
    s.target_backbone = s.online_backbone;
    s.target_projector = s.online_projector;
    s.target_backbone.set_trainable(false);
    s.target_projector.set_trainable(false);
    return s;
}

std::vector<Matrix*> online_parameters(ByolState& state) {
    std::vector<Matrix*> out;
    for (Network* n : {&state.online_backbone, &state.online_projector, &state.online_predictor}) {
        auto p = n->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::pair<double, double> byol_step(ByolState& state, const Matrix& batch, const ByolConfig& cfg,
                                    Optimizer& opt, std::uint64_t step_seed, ByolTrace& trace) {
    const Matrix v1 = augment(batch, cfg.augmentation, derive_seed(step_seed, 1));
    const Matrix v2 = augment(batch, cfg.augmentation, derive_seed(step_seed, 2));

    const Matrix t1 = chain_forward({&state.target_backbone, &state.target_projector}, v1, Mode::train);
    const Matrix t2 = chain_forward({&state.target_backbone, &state.target_projector}, v2, Mode::train);
    state.target_backbone.clear_caches();
    state.target_projector.clear_caches();

    auto half = [&](const Matrix& view, const Matrix& target) {
        const Matrix p = chain_forward({&state.online_backbone, &state.online_projector, &state.online_predictor},
                                       view, Mode::train);
        const double loss = byol_loss(p, target, &trace.zero_norm_rows);
        Matrix g = byol_loss_grad(p, target);
        g = backward(state.online_predictor, g);
        g = backward(state.online_projector, g);
        backward(state.online_backbone, g);
        return loss;
    };
    const double forward_loss = half(v1, t2);
    const double reverse_loss = half(v2, t1);
    if (!std::isfinite(forward_loss) || !std::isfinite(reverse_loss)) {
        std::ostringstream os;
        os << "byol: non-finite loss at learning rate " << cfg.learning_rate;
        throw NumericError(os.str());
    }
    auto params = online_parameters(state);
    opt.step(params);
    ema_update(state.target_backbone, state.online_backbone, cfg.ema_decay);
    ema_update(state.target_projector, state.online_projector, cfg.ema_decay);
    trace.batch_loss_forward.push_back(forward_loss);
    trace.batch_loss_reverse.push_back(reverse_loss);
    return {forward_loss, reverse_loss};
}

ByolResult train_byol(const Network& backbone, const UnlabeledDataset& data, const ByolConfig& cfg) {
    if (backbone.input_width() != data.features().cols())
        throw DimensionError("byol: backbone input width " + std::to_string(backbone.input_width()) +
                             " does not match data width " + std::to_string(data.features().cols()));
    ByolConfig run = cfg;
    if (run.noise_fraction) run.augmentation.noise_std = *run.noise_fraction * mean_feature_std(data.features());

    ByolState state = init_byol(backbone, run);
    Optimizer opt = Optimizer::adam(run.learning_rate);
    ByolTrace trace;
    Rng order_rng(derive_seed(run.seed, 13));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uint64_t step_id = 0;

    for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += run.batch_size) {
            const std::size_t end = std::min(order.size(), start + run.batch_size);
            if (end - start < 2) continue;  // batch statistics need two rows
            std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix batch = data.features().gather_rows(idx);
            auto [a, b] = byol_step(state, batch, run, opt, derive_seed(run.seed, 1000 + step_id++), trace);
            sum += 0.5 * (a + b);
            ++batches;
        }
        trace.epoch_loss.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
    }
    state.online_backbone.clear_caches();
    state.online_projector.clear_caches();
    return {std::move(state.online_backbone), std::move(state.online_projector), std::move(trace)};
}

}  // namespace sna
