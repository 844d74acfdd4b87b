#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sna/domains.hpp"
#include "sna/nn.hpp"
#include "sna/select.hpp"

namespace sna {

/// Batch-norm state of a layer at the end of source training.
struct BnSnapshot {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    std::vector<double> gamma;
    std::vector<double> beta;

    friend bool operator==(const BnSnapshot&, const BnSnapshot&) = default;
};

std::vector<BnSnapshot> snapshot_bn(const Network& net);

/// h_S = classifier o backbone, plus the frozen source batch-norm snapshot.
struct SourceModel {
    Network backbone;
    Network classifier;
    std::vector<BnSnapshot> source_bn;
};

/// Labelled support rows, in support-set order.
struct LabeledSupport {
    Matrix features;
    std::vector<int> labels;
    std::vector<std::size_t> indices;
};

/// Gathers features and requires every entry to carry its annotated label.
LabeledSupport labeled_support(const SupportSet& support, const UnlabeledDataset& data);

struct SupportStats {
    std::vector<BnStats> layers;
    bool single_sample = false;  // population variance is then zero everywhere
};

/// One statistics-collection pass of the support features through the backbone.
SupportStats compute_support_bn_stats(const Network& backbone, const Matrix& support_features);

struct LccsConfig {
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    double initial_source_weight = 0.9;
    std::uint64_t seed = 0;
};

struct LccsLayerState {
    double mean_logit = 0.0;
    double var_logit = 0.0;
    std::vector<double> gamma;
    std::vector<double> beta;
    BnStats source;
    BnStats support;
    BnStats effective;
};

struct LccsState {
    std::vector<LccsLayerState> layers;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_trace;  // support cross-entropy before training and after each epoch
    std::vector<std::string> notes;
};

struct LccsResult {
    Network backbone;  // batch-norm layers carry their mixing weights and support statistics
    LccsState state;
};

double logit(double p);

/// Attaches mixing weights to every batch-norm layer (initialised at initial_source_weight),
/// freezes all other parameters and the classifier, then fits mixing logits, gamma and beta
/// with Adam to minimise support cross-entropy through the classifier.
LccsResult lccs_adapt(const Network& backbone, const Network& classifier, const LabeledSupport& support,
                      const LccsConfig& cfg);

/// Support cross-entropy of classifier o backbone with statistics as used during adaptation.
double support_cross_entropy(const Network& backbone, const Network& classifier, const LabeledSupport& support);

struct CentroidClassifier {
    Matrix centroids;            // C x width; rows of absent classes are zero
    std::vector<bool> present;

    /// Nearest present centroid; ties to the lower class.
    std::vector<int> predict(const Matrix& features) const;
};

CentroidClassifier build_centroid_classifier(const Network& backbone, const LabeledSupport& support,
                                             int num_classes, std::vector<std::string>* notes = nullptr);

enum class HeadKind { source_classifier, nearest_centroid };

/// Centroid head for K >= 5, source classifier otherwise.
HeadKind head_for_shots(std::size_t k);

struct AdaptedModel {
    Network backbone;
    Network classifier;
    HeadKind head = HeadKind::source_classifier;
    std::optional<CentroidClassifier> centroids;

    std::vector<int> predict(const Matrix& x) const;
};

struct Metrics {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    double mean_per_class_accuracy = 0.0;
    std::size_t evaluated = 0;
    std::vector<std::string> notes;
};

/// Accuracy on every target sample outside the support set.
Metrics evaluate(const AdaptedModel& model, const UnlabeledDataset& data, std::span<const std::size_t> support_indices);

/// Dense weights and biases of a network (the parameters adaptation must leave untouched).
std::vector<const Matrix*> dense_parameters(const Network& net);

}  // namespace sna
