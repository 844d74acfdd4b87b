#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sna/matrix.hpp"
#include "sna/rng.hpp"

namespace sna {

enum class Mode { train, eval };

/// y = x W + b, W stored in x out.
struct DenseLayer {
    Matrix weight;
    Matrix bias;  // 1 x out
    bool trainable = true;

    std::size_t in_width() const { return weight.rows(); }
    std::size_t out_width() const { return weight.cols(); }

    // cache of the last train-mode forward
    std::optional<Matrix> cached_input;
};

/// Convex mixing of the layer's stored (source) statistics with statistics measured on
/// a labelled support set. The weights are logistic(logit); a logit of +inf reproduces the
/// stored statistics exactly.
struct BnMixing {
    Matrix mean_logit{1, 1};
    Matrix var_logit{1, 1};
    std::vector<double> support_mean;
    std::vector<double> support_var;

    double mean_weight() const;
    double var_weight() const;
};

struct BnStats {
    std::vector<double> mean;
    std::vector<double> var;
};

struct BatchNormLayer {
    Matrix gamma;  // 1 x width
    Matrix beta;   // 1 x width
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
    bool trainable = true;
    std::optional<BnMixing> mixing;

    std::size_t width() const { return gamma.cols(); }

    /// Statistics used for normalization outside of batch-statistics mode.
    BnStats effective_stats() const;

    struct Cache {
        Matrix input;
        std::vector<double> batch_mean;
        std::vector<double> used_mean;
        std::vector<double> used_var;
        double mean_coupling = 0.0;  // d(used mean)/d(batch mean)
        double var_coupling = 0.0;   // d(used var)/d(batch var)
        std::vector<double> stat_mean;  // non-source side of the mixture
        std::vector<double> stat_var;
    };
    std::optional<Cache> cache;
};

/// Inverted dropout: kept units are scaled by 1/(1-p) in train mode.
struct DropoutLayer {
    double drop_probability = 0.5;
    Rng rng{0};
    std::optional<std::vector<double>> cached_mask;
};

struct ReluLayer {
    std::optional<Matrix> cached_input;
};

using Layer = std::variant<DenseLayer, BatchNormLayer, DropoutLayer, ReluLayer>;

class Network {
public:
    Network() = default;
    explicit Network(std::vector<Layer> layers);

    std::vector<Layer>& layers() noexcept { return layers_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }

    /// Input width of the first width-bearing layer (0 for an empty or width-free stack).
    std::size_t input_width() const;
    std::size_t output_width() const;

    /// All trainable parameter matrices, in a stable layer order.
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;

    void set_trainable(bool trainable);
    void reseed_dropout(std::uint64_t seed);
    void clear_caches();

    /// Checks that adjacent widths agree; throws DimensionError otherwise.
    void validate() const;

private:
    std::vector<Layer> layers_;
};

/// Fluent builder for small multilayer stacks with seeded He-style initialization.
class NetworkBuilder {
public:
    explicit NetworkBuilder(std::size_t input_width) : width_(input_width) {}

    NetworkBuilder& dense(std::size_t out);
    NetworkBuilder& batchnorm(double momentum = 0.1, double epsilon = 1e-5);
    NetworkBuilder& relu();
    NetworkBuilder& dropout(double p);

    Network build(std::uint64_t seed) const;

private:
    struct Spec {
        enum Kind { dense, batchnorm, relu, dropout } kind;
        std::size_t in = 0, out = 0;
        double a = 0.0, b = 0.0;
    };
    std::size_t width_;
    std::vector<Spec> specs_;
};

/// Forward pass. Train mode uses batch statistics, updates running statistics by EMA
/// and records what backward needs. Eval mode delegates to predict().
Matrix forward(Network& net, const Matrix& batch, Mode mode);

/// Eval-mode forward on an unmodified network; safe to call concurrently.
Matrix predict(const Network& net, const Matrix& batch);

/// Reverse pass after a train-mode forward. Accumulates into parameter gradient slots of
/// trainable layers and returns the gradient with respect to the forward input.
Matrix backward(Network& net, const Matrix& upstream_grad);

/// Runs the batch through the net recording, for each batch-norm layer, the mean and
/// population variance of its input. Normalization inside the pass uses batch statistics
/// (mixed with source statistics where a layer carries mixing weights). Nothing is modified.
std::vector<BnStats> collect_bn_stats(const Network& net, const Matrix& batch);

Matrix softmax(const Matrix& logits);

/// Floor applied to probabilities inside cross_entropy.
inline constexpr double kProbabilityFloor = 1e-12;

/// Mean of -log p(label) over rows, with p clamped below at kProbabilityFloor.
double cross_entropy(const Matrix& probabilities, std::span<const int> labels);

/// Gradient of mean softmax cross-entropy with respect to the logits.
Matrix softmax_cross_entropy_grad(const Matrix& logits, std::span<const int> labels);

/// Row-wise argmax with ties resolved toward the lower column.
std::vector<int> argmax_rows(const Matrix& m);

/// FNV-1a hash over the bytes of the selected parameter values.
std::uint64_t fingerprint(std::span<const Matrix* const> params);

}  // namespace sna
