#include "sna/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sna/errors.hpp"
#include "sna/rng.hpp"

namespace sna {

namespace {

std::vector<int> grouping_labels(const UnlabeledDataset& data, const std::vector<int>& predicted, Grouping grouping,
                                 bool ground_truth_permitted) {
    if (grouping == Grouping::predicted_class) return predicted;
    if (!ground_truth_permitted) throw ValidationError("true-class grouping reads true labels; not permitted");
    return data.hidden_labels(GroundTruthPermit::true_class_grouping());
}

}  // namespace

void BaselineSpec::validate() const {
    if (passes < 1) throw ValidationError("baseline: passes must be at least 1");
    if (dropout_probability < 0.0 || dropout_probability >= 1.0)
        throw ValidationError("baseline: dropout probability must lie in [0,1)");
}

SupportSet random_balanced_select(const UnlabeledDataset& data, std::size_t k, std::uint64_t seed,
                                  bool ground_truth_permitted) {
    if (!ground_truth_permitted)
        throw ValidationError("random balanced selection reads true labels; ground truth is not permitted");
    if (k == 0) throw ValidationError("select: K must be at least 1");
    const auto& truth = data.hidden_labels(GroundTruthPermit::random_balanced_baseline());
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes()));
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] >= 0) by_class[static_cast<std::size_t>(truth[i])].push_back(i);

    SupportSet out;
    Rng rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.size() < k)
            out.notes.push_back("class " + std::to_string(c) + ": " + std::to_string(members.size()) +
                                " members for K=" + std::to_string(k) + ", taking all");
        const std::size_t take = std::min(k, members.size());
        // partial Fisher-Yates
        for (std::size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
            std::swap(members[i], members[pick(rng)]);
        }
        std::sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
        for (std::size_t i = 0; i < take; ++i)
            out.entries.push_back({members[i], -1, static_cast<int>(c), static_cast<int>(i), 0.0});
    }
    return out;
}

double shannon_entropy(std::span<const double> probabilities) {
    double h = 0.0;
    for (double p : probabilities)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

SupportSet top_k_per_group(std::span<const double> scores, std::span<const int> groups, int num_classes,
                           std::size_t k) {
    if (scores.size() != groups.size()) throw DimensionError("top-k: score and group counts differ");
    if (k == 0) throw ValidationError("select: K must be at least 1");
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i] < 0 || groups[i] >= num_classes) throw IndexError("top-k: group out of range");
        members[static_cast<std::size_t>(groups[i])].push_back(i);
    }
    SupportSet out;
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto& m = members[c];
        if (m.empty()) {
            out.notes.push_back("class " + std::to_string(c) + ": no samples predicted");
            continue;
        }
        if (m.size() < k)
            out.notes.push_back("class " + std::to_string(c) + ": " + std::to_string(m.size()) + " members for K=" +
                                std::to_string(k) + ", taking all");
        std::stable_sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        const std::size_t take = std::min(k, m.size());
        for (std::size_t i = 0; i < take; ++i)
            out.entries.push_back({m[i], -1, static_cast<int>(c), static_cast<int>(i), scores[m[i]]});
    }
    return out;
}

SupportSet entropy_select(const Network& backbone, const Network& classifier, const UnlabeledDataset& data,
                          std::size_t k, Grouping grouping, bool ground_truth_permitted) {
    const Matrix probs = softmax(predict(classifier, predict(backbone, data.features())));
    std::vector<double> scores(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) scores[r] = shannon_entropy(probs.row(r));
    const auto groups = grouping_labels(data, argmax_rows(probs), grouping, ground_truth_permitted);
    return top_k_per_group(scores, groups, data.num_classes(), k);
}

McDropoutScores mc_dropout_scores(const Network& backbone, const Network& classifier, const UnlabeledDataset& data,
                                  std::size_t passes, double dropout_probability, std::uint64_t seed) {
    BaselineSpec{BaselineKind::mc_dropout, passes, dropout_probability}.validate();
    const Matrix features = predict(backbone, data.features());
    McDropoutScores out;
    out.predicted = argmax_rows(predict(classifier, features));
    out.scores.assign(features.rows(), 0.0);

    DropoutLayer layer;
    layer.drop_probability = dropout_probability;
    Network dropout(std::vector<Layer>{std::move(layer)});
    for (std::size_t pass = 0; pass < passes; ++pass) {
        dropout.reseed_dropout(derive_seed(seed, pass));
        Matrix probs = softmax(predict(classifier, forward(dropout, features, Mode::train)));
        dropout.clear_caches();
        for (std::size_t r = 0; r < probs.rows(); ++r) out.scores[r] += shannon_entropy(probs.row(r));
        out.pass_probabilities.push_back(std::move(probs));
    }
    for (auto& s : out.scores) s /= static_cast<double>(passes);
    return out;
}

SupportSet mc_dropout_select(const Network& backbone, const Network& classifier, const UnlabeledDataset& data,
                             std::size_t k, std::size_t passes, double dropout_probability, std::uint64_t seed,
                             Grouping grouping, bool ground_truth_permitted) {
    const auto mc = mc_dropout_scores(backbone, classifier, data, passes, dropout_probability, seed);
    const auto groups = grouping_labels(data, mc.predicted, grouping, ground_truth_permitted);
    return top_k_per_group(mc.scores, groups, data.num_classes(), k);
}

}  // namespace sna
