#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sna/domains.hpp"
#include "sna/nn.hpp"
#include "sna/pseudolabel.hpp"

namespace sna {

/// Projected features z^c = q(f'(x^c)) of the samples grouped under one class.
struct ClassFeatureBlock {
    int class_id = 0;
    std::vector<std::size_t> indices;  // into the target set, ascending
    Matrix features;                   // indices.size() x d
};

struct KMeansOptions {
    std::size_t restarts = 10;
    std::size_t max_iterations = 300;
};

struct KMeansResult {
    Matrix centers;               // clusters x d
    std::vector<int> assignment;  // one cluster id per row
    double inertia = 0.0;
    std::size_t iterations_used = 0;
    /// Fewer rows than requested clusters: one singleton cluster per row.
    bool deficient = false;
    /// Inertia after every Lloyd iteration of the kept restart.
    std::vector<double> inertia_trace;

    std::size_t num_clusters() const noexcept { return centers.rows(); }
};

/// Lloyd's algorithm with k-means++ seeding and independent restarts (lowest inertia kept,
/// earliest restart on ties). Iterates until assignments stop changing or max_iterations.
/// Empty clusters are refilled with the farthest point of a cluster holding two or more.
KMeansResult kmeans(const Matrix& features, std::size_t k, std::uint64_t seed, KMeansOptions options = {});

/// Lloyd's algorithm from the given initial centers (one row per cluster).
KMeansResult lloyd(const Matrix& features, Matrix initial_centers, std::size_t max_iterations = 300);

double squared_distance(std::span<const double> a, std::span<const double> b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

struct SupportEntry {
    std::size_t target_index = 0;
    int true_label = -1;  // filled only through UnlabeledDataset::annotate
    int pseudo_class = 0;
    int cluster_id = 0;
    double distance_score = 0.0;

    friend bool operator==(const SupportEntry&, const SupportEntry&) = default;
};

struct SupportSet {
    std::vector<SupportEntry> entries;
    std::vector<std::string> notes;  // deficiency and empty-class events

    std::vector<std::size_t> indices() const;
    bool labeled() const;
};

/// Reveals the true labels of the selected samples through the annotation door.
void attach_labels(SupportSet& support, const UnlabeledDataset& data);

/// Feature blocks for every non-empty pseudo-class. An empty projector network is the identity.
std::vector<ClassFeatureBlock> project_features(const Network& backbone, const Network& projector,
                                                const UnlabeledDataset& data, const PseudoLabelTable& table);

/// One entry per cluster: the member closest to its center (ties to the lower target index).
SupportSet select_support(std::span<const ClassFeatureBlock> blocks, std::span<const KMeansResult> clusters,
                          std::size_t k);

/// Cluster every block with K clusters (seed derived per class) and select.
SupportSet cluster_and_select(std::span<const ClassFeatureBlock> blocks, std::size_t k, std::uint64_t seed,
                              const KMeansOptions& options = {});

/// Full unsupervised selection: project, cluster per pseudo-class, select.
SupportSet selectnadapt_select(const Network& backbone, const Network& projector, const UnlabeledDataset& data,
                               const PseudoLabelTable& table, std::size_t k, std::uint64_t seed,
                               const KMeansOptions& options = {});

/// Same selection grouped by true labels. Refuses unless ground_truth_permitted is set.
SupportSet class_balanced_select(const UnlabeledDataset& data, const Network& backbone, const Network& projector,
                                 std::size_t k, std::uint64_t seed, bool ground_truth_permitted,
                                 const KMeansOptions& options = {});

struct ManifestHeader {
    std::string selector;
    std::string mode;
    std::size_t k = 0;
    int num_classes = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

void save_manifest(const std::filesystem::path& path, const ManifestHeader& header, const SupportSet& support);
std::pair<ManifestHeader, SupportSet> load_manifest(const std::filesystem::path& path);

}  // namespace sna
