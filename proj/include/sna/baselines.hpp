#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sna/domains.hpp"
#include "sna/nn.hpp"
#include "sna/select.hpp"

namespace sna {

enum class BaselineKind { random_balanced, entropy, mc_dropout };

struct BaselineSpec {
    BaselineKind kind = BaselineKind::random_balanced;
    std::size_t passes = 10;           // mc_dropout only
    double dropout_probability = 0.5;  // mc_dropout only

    void validate() const;
};

/// How uncertainty selectors group the target set before taking top-K.
enum class Grouping { predicted_class, true_class };

/// K samples per true class, uniformly without replacement. Reads hidden labels, so it
/// refuses unless ground_truth_permitted is set.
SupportSet random_balanced_select(const UnlabeledDataset& data, std::size_t k, std::uint64_t seed,
                                  bool ground_truth_permitted);

/// -sum p log p (natural log), with 0 log 0 = 0.
double shannon_entropy(std::span<const double> probabilities);

/// Per group, the K highest scores in descending order (ties to the lower index).
SupportSet top_k_per_group(std::span<const double> scores, std::span<const int> groups, int num_classes,
                           std::size_t k);

/// Highest-entropy samples under the source model, per predicted class by default.
SupportSet entropy_select(const Network& backbone, const Network& classifier, const UnlabeledDataset& data,
                          std::size_t k, Grouping grouping = Grouping::predicted_class,
                          bool ground_truth_permitted = false);

struct McDropoutScores {
    std::vector<double> scores;                // mean entropy over passes
    std::vector<Matrix> pass_probabilities;    // softmax output of each pass
    std::vector<int> predicted;                // argmax of the dropout-free model
};

/// Runs `passes` stochastic forwards with dropout inserted between backbone and classifier.
McDropoutScores mc_dropout_scores(const Network& backbone, const Network& classifier, const UnlabeledDataset& data,
                                  std::size_t passes, double dropout_probability, std::uint64_t seed);

SupportSet mc_dropout_select(const Network& backbone, const Network& classifier, const UnlabeledDataset& data,
                             std::size_t k, std::size_t passes, double dropout_probability, std::uint64_t seed,
                             Grouping grouping = Grouping::predicted_class, bool ground_truth_permitted = false);

}  // namespace sna
