#pragma once

#include <vector>

#include "sna/domains.hpp"
#include "sna/nn.hpp"

namespace sna {

struct PseudoLabelTable {
    std::vector<int> labels;
    Matrix mean_probabilities;  // M x C
    std::vector<std::vector<std::size_t>> per_class_indices;

    int num_classes() const noexcept { return static_cast<int>(mean_probabilities.cols()); }
    friend bool operator==(const PseudoLabelTable&, const PseudoLabelTable&) = default;
};

/// Labels are the row-wise argmax (ties toward the lower class); buckets list indices in
/// ascending order. Empty buckets are kept.
PseudoLabelTable table_from_probabilities(Matrix probabilities);

/// Averages softmax(g(f(X))) and softmax(g(f'(X))) and takes the row-wise argmax.
PseudoLabelTable ensemble_pseudo_labels(const Network& source_backbone, const Network& adapted_backbone,
                                        const Network& classifier, const UnlabeledDataset& data);

PseudoLabelTable single_backbone_pseudo_labels(const Network& backbone, const Network& classifier,
                                               const UnlabeledDataset& data);

/// Fraction of pseudo-labels matching the hidden labels. Diagnostic only.
double pseudo_label_accuracy(const PseudoLabelTable& table, const UnlabeledDataset& data);

}  // namespace sna
