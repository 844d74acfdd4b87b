#include "sna/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sna/errors.hpp"
#include "sna/optim.hpp"
#include "sna/rng.hpp"

namespace sna {

std::vector<BnSnapshot> snapshot_bn(const Network& net) {
    std::vector<BnSnapshot> out;
    for (const auto& layer : net.layers())
        if (auto* b = std::get_if<BatchNormLayer>(&layer))
            out.push_back({b->running_mean, b->running_var, b->gamma.values(), b->beta.values()});
    return out;
}

LabeledSupport labeled_support(const SupportSet& support, const UnlabeledDataset& data) {
    if (support.entries.empty()) throw ValidationError("support set is empty");
    LabeledSupport out;
    out.indices = support.indices();
    for (const auto& e : support.entries) {
        if (e.true_label < 0)
            throw ValidationError("support entry " + std::to_string(e.target_index) + " has not been annotated");
        out.labels.push_back(e.true_label);
    }
    out.features = data.features().gather_rows(out.indices);
    return out;
}

SupportStats compute_support_bn_stats(const Network& backbone, const Matrix& support_features) {
    if (support_features.rows() == 0) throw ValidationError("support statistics: empty support");
    return {collect_bn_stats(backbone, support_features), support_features.rows() == 1};
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double support_cross_entropy(const Network& backbone, const Network& classifier, const LabeledSupport& support) {
    Network b = backbone, g = classifier;
    const Matrix logits = forward(g, forward(b, support.features, Mode::train), Mode::train);
    return cross_entropy(softmax(logits), support.labels);
}

namespace {

void store_support_stats(Network& net, const SupportStats& stats) {
    std::size_t i = 0;
    for (auto& layer : net.layers())
        if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            b->mixing->support_mean = stats.layers[i].mean;
            b->mixing->support_var = stats.layers[i].var;
            ++i;
        }
}

}  // namespace

LccsResult lccs_adapt(const Network& backbone, const Network& classifier, const LabeledSupport& support,
                      const LccsConfig& cfg) {
    if (support.features.rows() == 0) throw ValidationError("lccs: empty support");
    if (support.labels.size() != support.features.rows()) throw DimensionError("lccs: label count");
    if (!(cfg.initial_source_weight > 0.0 && cfg.initial_source_weight < 1.0))
        throw ValidationError("lccs: initial source weight must lie in (0,1)");
    if (cfg.batch_size == 0) throw ValidationError("lccs: batch_size must be positive");

    LccsResult res;
    Network& net = res.backbone;
    net = backbone;
    net.clear_caches();
    for (auto& layer : net.layers()) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) d->trainable = false;
        if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            b->trainable = true;
            BnMixing m;
            m.mean_logit(0, 0) = logit(cfg.initial_source_weight);
            m.var_logit(0, 0) = logit(cfg.initial_source_weight);
            b->mixing = std::move(m);
        }
    }
    Network head = classifier;
    head.set_trainable(false);
    head.clear_caches();

    const SupportStats initial_stats = compute_support_bn_stats(net, support.features);
    if (initial_stats.single_sample) res.state.notes.push_back("single-sample support: support variance is zero");
    store_support_stats(net, initial_stats);

    res.state.initial_loss = support_cross_entropy(net, head, support);
    res.state.loss_trace.push_back(res.state.initial_loss);

    Optimizer opt = Optimizer::adam(cfg.learning_rate);
    Rng rng(derive_seed(cfg.seed, 21));
    std::vector<std::size_t> order(support.features.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix x = support.features.gather_rows(idx);
            std::vector<int> y;
            for (std::size_t i : idx) y.push_back(support.labels[i]);
            const Matrix logits = forward(head, forward(net, x, Mode::train), Mode::train);
            const double loss = cross_entropy(softmax(logits), y);
            if (!std::isfinite(loss))
                throw NumericError("lccs: non-finite support loss at epoch " + std::to_string(epoch) +
                                   ", learning rate " + std::to_string(cfg.learning_rate));
            backward(net, backward(head, softmax_cross_entropy_grad(logits, y)));
            step(opt, net);
        }
        store_support_stats(net, compute_support_bn_stats(net, support.features));
        res.state.loss_trace.push_back(support_cross_entropy(net, head, support));
    }
    store_support_stats(net, compute_support_bn_stats(net, support.features));
    res.state.final_loss = support_cross_entropy(net, head, support);

    for (const auto& layer : net.layers())
        if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            LccsLayerState s;
            s.mean_logit = b->mixing->mean_logit(0, 0);
            s.var_logit = b->mixing->var_logit(0, 0);
            s.gamma = b->gamma.values();
            s.beta = b->beta.values();
            s.source = {b->running_mean, b->running_var};
            s.support = {b->mixing->support_mean, b->mixing->support_var};
            s.effective = b->effective_stats();
            res.state.layers.push_back(std::move(s));
        }
    return res;
}

std::vector<int> CentroidClassifier::predict(const Matrix& features) const {
    if (features.cols() != centroids.cols()) throw DimensionError("centroid classifier: feature width");
    std::vector<int> out(features.rows(), 0);
    for (std::size_t r = 0; r < features.rows(); ++r) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centroids.rows(); ++c) {
            if (!present[c]) continue;
            const double d = squared_distance(features.row(r), centroids.row(c));
            if (d < best) {
                best = d;
                out[r] = static_cast<int>(c);
            }
        }
    }
    return out;
}

CentroidClassifier build_centroid_classifier(const Network& backbone, const LabeledSupport& support,
                                             int num_classes, std::vector<std::string>* notes) {
    if (support.features.rows() == 0) throw ValidationError("centroid classifier: empty support");
    const Matrix z = predict(backbone, support.features);
    CentroidClassifier cc;
    cc.centroids = Matrix(static_cast<std::size_t>(num_classes), z.cols());
    cc.present.assign(static_cast<std::size_t>(num_classes), false);
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const int label = support.labels[r];
        if (label < 0 || label >= num_classes) throw IndexError("centroid classifier: label out of range");
        const auto c = static_cast<std::size_t>(label);
        ++counts[c];
        for (std::size_t j = 0; j < z.cols(); ++j) cc.centroids(c, j) += z(r, j);
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) {
            if (notes)
                notes->push_back("class " + std::to_string(c) +
                                 " has no support samples; the centroid head cannot predict it");
            continue;
        }
        cc.present[c] = true;
        for (std::size_t j = 0; j < z.cols(); ++j) cc.centroids(c, j) /= static_cast<double>(counts[c]);
    }
    return cc;
}

HeadKind head_for_shots(std::size_t k) { return k >= 5 ? HeadKind::nearest_centroid : HeadKind::source_classifier; }

std::vector<int> AdaptedModel::predict(const Matrix& x) const {
    const Matrix z = sna::predict(backbone, x);
    if (head == HeadKind::nearest_centroid) {
        if (!centroids) throw ProtocolError("adapted model: centroid head without centroids");
        return centroids->predict(z);
    }
    return argmax_rows(sna::predict(classifier, z));
}

Metrics evaluate(const AdaptedModel& model, const UnlabeledDataset& data,
                 std::span<const std::size_t> support_indices) {
    std::vector<bool> in_support(data.size(), false);
    for (std::size_t i : support_indices) {
        if (i >= data.size()) throw ValidationError("evaluate: support index " + std::to_string(i) + " not in data");
        in_support[i] = true;
    }
    std::vector<std::size_t> eval_idx;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!in_support[i]) eval_idx.push_back(i);

    Metrics m;
    m.evaluated = eval_idx.size();
    const auto classes = static_cast<std::size_t>(data.num_classes());
    m.per_class_accuracy.assign(classes, 0.0);
    if (eval_idx.empty()) {
        m.notes.push_back("no samples left to evaluate");
        return m;
    }
    const auto& truth = data.hidden_labels(GroundTruthPermit::evaluation());
    const auto predicted = model.predict(data.features().gather_rows(eval_idx));
    std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
    std::size_t correct = 0;
    for (std::size_t j = 0; j < eval_idx.size(); ++j) {
        const int y = truth[eval_idx[j]];
        if (y < 0) throw ValidationError("evaluate: unknown label at " + std::to_string(eval_idx[j]));
        ++totals[static_cast<std::size_t>(y)];
        if (predicted[j] == y) {
            ++correct;
            ++hits[static_cast<std::size_t>(y)];
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(eval_idx.size());
    double sum = 0.0;
    std::size_t represented = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (totals[c] == 0) {
            m.notes.push_back("class " + std::to_string(c) + " has no evaluation samples");
            continue;
        }
        m.per_class_accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
        sum += m.per_class_accuracy[c];
        ++represented;
    }
    m.mean_per_class_accuracy = represented ? sum / static_cast<double>(represented) : 0.0;
    return m;
}

std::vector<const Matrix*> dense_parameters(const Network& net) {
    std::vector<const Matrix*> out;
    for (const auto& layer : net.layers())
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            out.push_back(&d->weight);
            out.push_back(&d->bias);
        }
    return out;
}

}  // namespace sna
