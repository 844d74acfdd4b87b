#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sna/matrix.hpp"

namespace sna {

struct DomainSpec {
    int num_classes = 3;
    std::size_t input_dim = 16;
    std::size_t samples_per_class = 200;
    double class_center_spread = 0.6;
    double within_class_std = 1.0;
    std::uint64_t seed = 0;
    /// Target class c keeps round(samples_per_class * (1 - skew * c / (C-1))) samples.
    double target_skew = 0.0;

    void validate() const;
};

/// Affine covariate shift x -> scale * R x + translation + N(0, noise_std^2), where R rotates
/// by rotation_angle in every coordinate pair of a random orthonormal basis.
struct ShiftSpec {
    double rotation_angle = 0.0;
    std::vector<double> translation;  // empty means zero
    double noise_std = 0.0;
    double scale = 1.0;

    void validate(std::size_t input_dim) const;
    std::string describe() const;
};

using Metadata = std::map<std::string, std::string>;

struct LabeledDataset {
    Matrix features;
    std::vector<int> labels;
    int num_classes = 0;
    Metadata meta;

    std::size_t size() const noexcept { return labels.size(); }
    void validate() const;
    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Reasons for which hidden target labels may be read.
enum class GroundTruthPurpose {
    annotation,
    evaluation,
    diagnostic,
    class_balanced_ablation,
    random_balanced_baseline,
    true_class_grouping,
    persistence,
};

std::string to_string(GroundTruthPurpose p);

/// Capability token required to read hidden labels in bulk. Every use is recorded in the
/// access audit together with the pipeline stage that was active.
class GroundTruthPermit {
public:
    static GroundTruthPermit evaluation() { return GroundTruthPermit(GroundTruthPurpose::evaluation); }
    static GroundTruthPermit diagnostic() { return GroundTruthPermit(GroundTruthPurpose::diagnostic); }
    static GroundTruthPermit class_balanced_ablation() {
        return GroundTruthPermit(GroundTruthPurpose::class_balanced_ablation);
    }
    static GroundTruthPermit random_balanced_baseline() {
        return GroundTruthPermit(GroundTruthPurpose::random_balanced_baseline);
    }
    static GroundTruthPermit true_class_grouping() {
        return GroundTruthPermit(GroundTruthPurpose::true_class_grouping);
    }
    static GroundTruthPermit persistence() { return GroundTruthPermit(GroundTruthPurpose::persistence); }
    GroundTruthPurpose purpose() const noexcept { return purpose_; }

private:
    explicit GroundTruthPermit(GroundTruthPurpose p) : purpose_(p) {}
    GroundTruthPurpose purpose_;
};

struct AccessEvent {
    GroundTruthPurpose purpose;
    std::string stage;
    std::size_t count;  // number of labels revealed
};

/// Process-wide record of hidden-label reads (thread safe).
namespace access_audit {
void record(GroundTruthPurpose purpose, std::size_t count);
std::vector<AccessEvent> events();
void reset();
}  // namespace access_audit

/// Names the pipeline stage active on this thread while in scope; nests.
class StageScope {
public:
    explicit StageScope(std::string name);
    ~StageScope();
    StageScope(const StageScope&) = delete;
    StageScope& operator=(const StageScope&) = delete;

    static std::string current();

private:
    std::string previous_;
};

struct LabeledPair {
    std::size_t index;
    std::vector<double> feature;
    int label;
};

class UnlabeledDataset {
public:
    UnlabeledDataset() = default;
    /// hidden_labels entries lie in [-1, num_classes); -1 marks a label that is truly unknown.
    UnlabeledDataset(Matrix features, std::vector<int> hidden_labels, int num_classes, Metadata meta = {});

    const Matrix& features() const noexcept { return features_; }
    std::size_t size() const noexcept { return features_.rows(); }
    int num_classes() const noexcept { return num_classes_; }
    const Metadata& meta() const noexcept { return meta_; }

    /// The annotation door: reveals true labels for exactly these indices.
    /// Throws ValidationError on duplicate, out-of-range or unknown-label indices.
    std::vector<LabeledPair> annotate(std::span<const std::size_t> indices) const;

    /// Bulk read of all hidden labels under an explicit permit.
    const std::vector<int>& hidden_labels(const GroundTruthPermit& permit) const;

    friend bool operator==(const UnlabeledDataset&, const UnlabeledDataset&) = default;

private:
    Matrix features_;
    std::vector<int> hidden_labels_;
    int num_classes_ = 0;
    Metadata meta_;
};

struct DomainPair {
    LabeledDataset source;
    UnlabeledDataset target;
};

/// Builds a seeded source/target pair: C Gaussian blobs for the source, fresh draws from the
/// same blobs passed through the shift for the target. Sample order is shuffled.
DomainPair generate_pair(const DomainSpec& spec, const ShiftSpec& shift);

/// The orthogonal mixing matrix used by generate_pair (identity when the angle is 0).
Matrix rotation_matrix(std::size_t dim, double angle, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);
void save_dataset(const std::filesystem::path& path, const UnlabeledDataset& data);
LabeledDataset load_labeled_dataset(const std::filesystem::path& path);
UnlabeledDataset load_unlabeled_dataset(const std::filesystem::path& path);

}  // namespace sna
