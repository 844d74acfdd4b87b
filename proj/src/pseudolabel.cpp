#include "sna/pseudolabel.hpp"

#include "sna/errors.hpp"

namespace sna {

namespace {

Matrix class_probabilities(const Network& backbone, const Network& classifier, const UnlabeledDataset& data) {
    if (backbone.input_width() != data.features().cols())
        throw DimensionError("pseudo-labels: backbone expects width " + std::to_string(backbone.input_width()) +
                             ", data has " + std::to_string(data.features().cols()));
    if (classifier.input_width() != backbone.output_width())
        throw DimensionError("pseudo-labels: classifier expects width " + std::to_string(classifier.input_width()) +
                             ", backbone emits " + std::to_string(backbone.output_width()));
    return softmax(predict(classifier, predict(backbone, data.features())));
}

}  // namespace

PseudoLabelTable table_from_probabilities(Matrix probabilities) {
    PseudoLabelTable t;
    t.labels = argmax_rows(probabilities);
    t.per_class_indices.resize(probabilities.cols());
    for (std::size_t i = 0; i < t.labels.size(); ++i)
        t.per_class_indices[static_cast<std::size_t>(t.labels[i])].push_back(i);
    t.mean_probabilities = std::move(probabilities);
    return t;
}

PseudoLabelTable ensemble_pseudo_labels(const Network& source_backbone, const Network& adapted_backbone,
                                        const Network& classifier, const UnlabeledDataset& data) {
    const Matrix a = class_probabilities(source_backbone, classifier, data);
    const Matrix b = class_probabilities(adapted_backbone, classifier, data);
    Matrix mean(a.rows(), a.cols());
    for (std::size_t i = 0; i < mean.size(); ++i) mean.values()[i] = 0.5 * (a.values()[i] + b.values()[i]);
    return table_from_probabilities(std::move(mean));
}

PseudoLabelTable single_backbone_pseudo_labels(const Network& backbone, const Network& classifier,
                                               const UnlabeledDataset& data) {
    return table_from_probabilities(class_probabilities(backbone, classifier, data));
}

double pseudo_label_accuracy(const PseudoLabelTable& table, const UnlabeledDataset& data) {
    if (table.labels.size() != data.size())
        throw ValidationError("pseudo-label accuracy: table has " + std::to_string(table.labels.size()) +
                              " rows, data has " + std::to_string(data.size()));
    if (data.size() == 0) return 0.0;
    const auto& truth = data.hidden_labels(GroundTruthPermit::diagnostic());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += table.labels[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace sna
