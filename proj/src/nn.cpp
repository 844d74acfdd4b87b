#include "sna/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "sna/errors.hpp"

namespace sna {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double logistic(double logit) {
    if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var) {
    const std::size_t n = x.rows(), w = x.cols();
    mean.assign(w, 0.0);
    var.assign(w, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) mean[c] += x(r, c);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double d = x(r, c) - mean[c];
            var[c] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(n);
}

Matrix dense_apply(const DenseLayer& layer, const Matrix& x) {
    if (x.cols() != layer.in_width()) {
        throw DimensionError("dense: input width " + std::to_string(x.cols()) + ", expected " +
                             std::to_string(layer.in_width()));
    }
    const std::size_t n = x.rows(), in = layer.in_width(), out = layer.out_width();
    Matrix y(n, out);
    for (std::size_t r = 0; r < n; ++r) {
        auto yr = y.row(r);
        for (std::size_t o = 0; o < out; ++o) yr[o] = layer.bias(0, o);
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = x(r, i);
            if (xi == 0.0) continue;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xi * layer.weight(i, o);
        }
    }
    return y;
}

Matrix normalize(const BatchNormLayer& layer, const Matrix& x, std::span<const double> mean,
                 std::span<const double> var) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        const double inv = 1.0 / std::sqrt(var[c] + layer.epsilon);
        for (std::size_t r = 0; r < x.rows(); ++r)
            y(r, c) = layer.gamma(0, c) * ((x(r, c) - mean[c]) * inv) + layer.beta(0, c);
    }
    return y;
}

void require_bn_width(const BatchNormLayer& layer, const Matrix& x) {
    if (x.cols() != layer.width()) {
        throw DimensionError("batchnorm: input width " + std::to_string(x.cols()) +
                             ", expected " + std::to_string(layer.width()));
    }
}

std::vector<double> mix(double w, std::span<const double> source, std::span<const double> other) {
    std::vector<double> out(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) out[i] = w * source[i] + (1.0 - w) * other[i];
    return out;
}

Matrix bn_forward_train(BatchNormLayer& layer, const Matrix& x) {
    require_bn_width(layer, x);
    BatchNormLayer::Cache cache;
    std::vector<double> batch_var;
    column_moments(x, cache.batch_mean, batch_var);

    if (!layer.mixing) {
        cache.used_mean = cache.batch_mean;
        cache.used_var = batch_var;
        cache.mean_coupling = 1.0;
        cache.var_coupling = 1.0;
        for (std::size_t c = 0; c < layer.width(); ++c) {
            layer.running_mean[c] =
                (1.0 - layer.momentum) * layer.running_mean[c] + layer.momentum * cache.batch_mean[c];
            layer.running_var[c] =
                (1.0 - layer.momentum) * layer.running_var[c] + layer.momentum * batch_var[c];
        }
    } else {
        const BnMixing& m = *layer.mixing;
        const double wm = m.mean_weight(), wv = m.var_weight();
        if (x.rows() >= 2) {
            cache.stat_mean = cache.batch_mean;
            cache.stat_var = batch_var;
            cache.mean_coupling = 1.0 - wm;
            cache.var_coupling = 1.0 - wv;
        } else {
            if (m.support_mean.size() != layer.width())
                throw ProtocolError("batchnorm: support statistics missing");
            cache.stat_mean = m.support_mean;
            cache.stat_var = m.support_var;
        }
        cache.used_mean = mix(wm, layer.running_mean, cache.stat_mean);
        cache.used_var = mix(wv, layer.running_var, cache.stat_var);
    }
    Matrix y = normalize(layer, x, cache.used_mean, cache.used_var);
    cache.input = x;
    layer.cache = std::move(cache);
    return y;
}

Matrix bn_backward(BatchNormLayer& layer, const Matrix& dy) {
    if (!layer.cache) throw ProtocolError("batchnorm: backward without a train-mode forward");
    const auto& k = *layer.cache;
    const Matrix& x = k.input;
    const std::size_t n = x.rows(), w = x.cols();
    require_shape(dy, n, w, "batchnorm upstream gradient");

    Matrix dx(n, w);
    std::vector<double> dgamma(w, 0.0), dbeta(w, 0.0), dmean(w, 0.0), dvar(w, 0.0);
    const double nn = static_cast<double>(n);
    for (std::size_t c = 0; c < w; ++c) {
        const double s = std::sqrt(k.used_var[c] + layer.epsilon);
        const double g = layer.gamma(0, c);
        double sum_g = 0.0, sum_gd = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double centered = x(r, c) - k.used_mean[c];
            dgamma[c] += dy(r, c) * centered / s;
            dbeta[c] += dy(r, c);
            const double gi = dy(r, c) * g;
            sum_g += gi;
            sum_gd += gi * centered;
        }
        dmean[c] = -sum_g / s;
        dvar[c] = -0.5 * sum_gd / (s * s * s);
        for (std::size_t r = 0; r < n; ++r) {
            const double gi = dy(r, c) * g;
            dx(r, c) = gi / s + dmean[c] * k.mean_coupling / nn +
                       dvar[c] * k.var_coupling * 2.0 * (x(r, c) - k.batch_mean[c]) / nn;
        }
    }
    if (layer.trainable) {
        layer.gamma.accumulate_grad(dgamma);
        layer.beta.accumulate_grad(dbeta);
        if (layer.mixing) {
            BnMixing& m = *layer.mixing;
            const double wm = m.mean_weight(), wv = m.var_weight();
            double dwm = 0.0, dwv = 0.0;
            for (std::size_t c = 0; c < w; ++c) {
                dwm += dmean[c] * (layer.running_mean[c] - k.stat_mean[c]);
                dwv += dvar[c] * (layer.running_var[c] - k.stat_var[c]);
            }
            const double dlm = dwm * wm * (1.0 - wm);
            const double dlv = dwv * wv * (1.0 - wv);
            m.mean_logit.accumulate_grad(std::span<const double>(&dlm, 1));
            m.var_logit.accumulate_grad(std::span<const double>(&dlv, 1));
        }
    }
    layer.cache.reset();
    return dx;
}

}  // namespace

double BnMixing::mean_weight() const { return logistic(mean_logit(0, 0)); }
double BnMixing::var_weight() const { return logistic(var_logit(0, 0)); }

BnStats BatchNormLayer::effective_stats() const {
    if (!mixing) return {running_mean, running_var};
    if (mixing->support_mean.size() != width())
        throw ProtocolError("batchnorm: support statistics missing");
    return {mix(mixing->mean_weight(), running_mean, mixing->support_mean),
            mix(mixing->var_weight(), running_var, mixing->support_var)};
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

std::size_t Network::input_width() const {
    for (const auto& layer : layers_) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) return d->in_width();
        if (auto* b = std::get_if<BatchNormLayer>(&layer)) return b->width();
    }
    return 0;
}

std::size_t Network::output_width() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        if (auto* d = std::get_if<DenseLayer>(&*it)) return d->out_width();
        if (auto* b = std::get_if<BatchNormLayer>(&*it)) return b->width();
    }
    return 0;
}

std::vector<Matrix*> Network::parameters() {
    std::vector<Matrix*> out;
    for (auto& layer : layers_) {
        std::visit(overloaded{[&](DenseLayer& d) {
                                  if (!d.trainable) return;
                                  out.push_back(&d.weight);
                                  out.push_back(&d.bias);
                              },
                              [&](BatchNormLayer& b) {
                                  if (!b.trainable) return;
                                  out.push_back(&b.gamma);
                                  out.push_back(&b.beta);
                                  if (b.mixing) {
                                      out.push_back(&b.mixing->mean_logit);
                                      out.push_back(&b.mixing->var_logit);
                                  }
                              },
                              [](auto&) {}},
                   layer);
    }
    return out;
}

std::vector<const Matrix*> Network::parameters() const {
    auto mut = const_cast<Network*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

void Network::set_trainable(bool trainable) {
    for (auto& layer : layers_) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) d->trainable = trainable;
        if (auto* b = std::get_if<BatchNormLayer>(&layer)) b->trainable = trainable;
    }
}

void Network::reseed_dropout(std::uint64_t seed) {
    std::uint64_t stream = 0;
    for (auto& layer : layers_)
        if (auto* d = std::get_if<DropoutLayer>(&layer)) d->rng.seed(derive_seed(seed, stream++));
}

void Network::clear_caches() {
    for (auto& layer : layers_) {
        std::visit(overloaded{[](DenseLayer& d) { d.cached_input.reset(); },
                              [](BatchNormLayer& b) { b.cache.reset(); },
                              [](DropoutLayer& d) { d.cached_mask.reset(); },
                              [](ReluLayer& r) { r.cached_input.reset(); }},
                   layer);
    }
}

void Network::validate() const {
    std::size_t width = 0;
    bool known = false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        std::size_t in = 0, out = 0;
        bool has_width = false;
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            in = d->in_width();
            out = d->out_width();
            has_width = true;
            if (d->bias.rows() != 1 || d->bias.cols() != out)
                throw DimensionError("dense layer " + std::to_string(i) + ": bias shape");
        } else if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            in = out = b->width();
            has_width = true;
            if (b->beta.cols() != in || b->running_mean.size() != in || b->running_var.size() != in)
                throw DimensionError("batchnorm layer " + std::to_string(i) + ": width mismatch");
            if (!(b->epsilon > 0.0)) throw ValidationError("batchnorm: epsilon must be positive");
            for (double v : b->running_var)
                if (v < 0.0) throw ValidationError("batchnorm: negative running variance");
        } else if (auto* d = std::get_if<DropoutLayer>(&layer)) {
            if (d->drop_probability < 0.0 || d->drop_probability >= 1.0)
                throw ValidationError("dropout: probability must lie in [0,1)");
        }
        if (has_width) {
            if (known && in != width) {
                throw DimensionError("layer " + std::to_string(i) + ": input width " +
                                     std::to_string(in) + " does not match " +
                                     std::to_string(width));
            }
            width = out;
            known = true;
        }
    }
}

NetworkBuilder& NetworkBuilder::dense(std::size_t out) {
    specs_.push_back({Spec::dense, width_, out});
    width_ = out;
    return *this;
}

NetworkBuilder& NetworkBuilder::batchnorm(double momentum, double epsilon) {
    specs_.push_back({Spec::batchnorm, width_, width_, momentum, epsilon});
    return *this;
}

NetworkBuilder& NetworkBuilder::relu() {
    specs_.push_back({Spec::relu, width_, width_});
    return *this;
}

NetworkBuilder& NetworkBuilder::dropout(double p) {
    specs_.push_back({Spec::dropout, width_, width_, p});
    return *this;
}

Network NetworkBuilder::build(std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<Layer> layers;
    std::uint64_t dropout_stream = 0;
    for (const auto& s : specs_) {
        switch (s.kind) {
            case Spec::dense: {
                DenseLayer d;
                d.weight = Matrix(s.in, s.out);
                d.bias = Matrix(1, s.out);
                std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(s.in)));
                for (auto& v : d.weight.values()) v = init(rng);
                layers.emplace_back(std::move(d));
                break;
            }
            case Spec::batchnorm: {
                BatchNormLayer b;
                b.gamma = Matrix(1, s.in, 1.0);
                b.beta = Matrix(1, s.in, 0.0);
                b.running_mean.assign(s.in, 0.0);
                b.running_var.assign(s.in, 1.0);
                b.momentum = s.a;
                b.epsilon = s.b;
                layers.emplace_back(std::move(b));
                break;
            }
            case Spec::relu:
                layers.emplace_back(ReluLayer{});
                break;
            case Spec::dropout: {
                DropoutLayer d;
                d.drop_probability = s.a;
                d.rng.seed(derive_seed(seed, 1000 + dropout_stream++));
                layers.emplace_back(std::move(d));
                break;
            }
        }
    }
    return Network(std::move(layers));
}

Matrix forward(Network& net, const Matrix& batch, Mode mode) {
    if (mode == Mode::eval) return predict(net, batch);
    require_finite(batch, "forward input");
    Matrix x = batch;
    for (auto& layer : net.layers()) {
        x = std::visit(
            overloaded{[&](DenseLayer& d) {
                           Matrix y = dense_apply(d, x);
                           d.cached_input = std::move(x);
                           return y;
                       },
                       [&](BatchNormLayer& b) { return bn_forward_train(b, x); },
                       [&](DropoutLayer& d) {
                           const double keep = 1.0 - d.drop_probability;
                           std::bernoulli_distribution draw(keep);
                           std::vector<double> mask(x.size());
                           for (auto& m : mask) m = draw(d.rng) ? 1.0 / keep : 0.0;
                           Matrix y = x;
                           for (std::size_t i = 0; i < mask.size(); ++i) y.values()[i] *= mask[i];
                           d.cached_mask = std::move(mask);
                           return y;
                       },
                       [&](ReluLayer& r) {
                           Matrix y = x;
                           for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
                           r.cached_input = std::move(x);
                           return y;
                       }},
            layer);
    }
    return x;
}

Matrix predict(const Network& net, const Matrix& batch) {
    require_finite(batch, "forward input");
    Matrix x = batch;
    for (const auto& layer : net.layers()) {
        x = std::visit(overloaded{[&](const DenseLayer& d) { return dense_apply(d, x); },
                                  [&](const BatchNormLayer& b) {
                                      require_bn_width(b, x);
                                      BnStats s = b.effective_stats();
                                      return normalize(b, x, s.mean, s.var);
                                  },
                                  [&](const DropoutLayer&) { return x; },
                                  [&](const ReluLayer&) {
                                      Matrix y = x;
                                      for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
                                      return y;
                                  }},
                       layer);
    }
    return x;
}

Matrix backward(Network& net, const Matrix& upstream_grad) {
    Matrix g = upstream_grad;
    auto& layers = net.layers();
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        g = std::visit(
            overloaded{
                [&](DenseLayer& d) {
                    if (!d.cached_input) throw ProtocolError("dense: backward without a train-mode forward");
                    const Matrix& x = *d.cached_input;
                    const std::size_t n = x.rows(), in = d.in_width(), out = d.out_width();
                    require_shape(g, n, out, "dense upstream gradient");
                    Matrix dx(n, in);
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t i = 0; i < in; ++i) {
                            double acc = 0.0;
                            for (std::size_t o = 0; o < out; ++o) acc += g(r, o) * d.weight(i, o);
                            dx(r, i) = acc;
                        }
                    if (d.trainable) {
                        std::vector<double> dw(in * out, 0.0), db(out, 0.0);
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t o = 0; o < out; ++o) {
                                db[o] += g(r, o);
                                for (std::size_t i = 0; i < in; ++i) dw[i * out + o] += x(r, i) * g(r, o);
                            }
                        d.weight.accumulate_grad(dw);
                        d.bias.accumulate_grad(db);
                    }
                    d.cached_input.reset();
                    return dx;
                },
                [&](BatchNormLayer& b) { return bn_backward(b, g); },
                [&](DropoutLayer& d) {
                    if (!d.cached_mask) throw ProtocolError("dropout: backward without a train-mode forward");
                    if (d.cached_mask->size() != g.size()) throw DimensionError("dropout upstream gradient");
                    Matrix dx = g;
                    for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= (*d.cached_mask)[i];
                    d.cached_mask.reset();
                    return dx;
                },
                [&](ReluLayer& r) {
                    if (!r.cached_input) throw ProtocolError("relu: backward without a train-mode forward");
                    if (r.cached_input->size() != g.size()) throw DimensionError("relu upstream gradient");
                    Matrix dx = g;
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        if (!(r.cached_input->values()[i] > 0.0)) dx.values()[i] = 0.0;
                    r.cached_input.reset();
                    return dx;
                }},
            *it);
    }
    return g;
}

std::vector<BnStats> collect_bn_stats(const Network& net, const Matrix& batch) {
    require_finite(batch, "statistics input");
    std::vector<BnStats> stats;
    Matrix x = batch;
    for (const auto& layer : net.layers()) {
        x = std::visit(overloaded{[&](const DenseLayer& d) { return dense_apply(d, x); },
                                  [&](const BatchNormLayer& b) {
                                      require_bn_width(b, x);
                                      BnStats s;
                                      column_moments(x, s.mean, s.var);
                                      std::vector<double> mean = s.mean, var = s.var;
                                      if (b.mixing) {
                                          mean = mix(b.mixing->mean_weight(), b.running_mean, s.mean);
                                          var = mix(b.mixing->var_weight(), b.running_var, s.var);
                                      }
                                      stats.push_back(std::move(s));
                                      return normalize(b, x, mean, var);
                                  },
                                  [&](const DropoutLayer&) { return x; },
                                  [&](const ReluLayer&) {
                                      Matrix y = x;
                                      for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
                                      return y;
                                  }},
                       layer);
    }
    return stats;
}

Matrix softmax(const Matrix& logits) {
    require_finite(logits, "softmax input");
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto out = p.row(r);
        const double shift = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            out[c] = std::exp(in[c] - shift);
            total += out[c];
        }
        for (auto& v : out) v /= total;
    }
    return p;
}

double cross_entropy(const Matrix& probabilities, std::span<const int> labels) {
    if (labels.size() != probabilities.rows()) throw DimensionError("cross_entropy: label count");
    if (labels.empty()) return 0.0;
    double total = 0.0;
    const int classes = static_cast<int>(probabilities.cols());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || labels[r] >= classes)
            throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
        total -= std::log(std::max(probabilities(r, static_cast<std::size_t>(labels[r])), kProbabilityFloor));
    }
    return total / static_cast<double>(labels.size());
}

Matrix softmax_cross_entropy_grad(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows()) throw DimensionError("cross_entropy: label count");
    Matrix g = softmax(logits);
    const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(1, labels.size()));
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= logits.cols())
            throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
        g(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    }
    for (auto& v : g.values()) v *= inv_n;
    return g;
}

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows(), 0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

std::uint64_t fingerprint(std::span<const Matrix* const> params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Matrix* p : params) {
        for (double v : p->values()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

}  // namespace sna
