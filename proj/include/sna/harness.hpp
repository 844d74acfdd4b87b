#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sna/adapt.hpp"
#include "sna/config.hpp"
#include "sna/domains.hpp"
#include "sna/pseudolabel.hpp"
#include "sna/select.hpp"
#include "sna/ssl.hpp"

namespace sna {

/// Pipeline stage names, in execution order.
namespace stage {
inline constexpr const char* generate = "generate";
inline constexpr const char* train_source = "train-source";
inline constexpr const char* adapt_ssl = "adapt-ssl";
inline constexpr const char* pseudo_label = "pseudo-label";
inline constexpr const char* select = "select";
inline constexpr const char* annotate = "annotate";
inline constexpr const char* adapt = "adapt";
inline constexpr const char* evaluate = "evaluate";
inline constexpr const char* diagnostics = "diagnostics";
}  // namespace stage

/// Sub-seeds of one run, all derived from the per-seed domain seed.
struct RunSeeds {
    std::uint64_t domain = 0;
    std::uint64_t source_init = 0;
    std::uint64_t source_shuffle = 0;
    std::uint64_t byol = 0;
    std::uint64_t selection = 0;
    std::uint64_t lccs = 0;
};

RunSeeds run_seeds(const ExperimentConfig& cfg, std::uint64_t seed);

Network make_backbone(const ExperimentConfig& cfg, std::uint64_t seed);
Network make_classifier(const ExperimentConfig& cfg, std::uint64_t seed);

struct SourceTraining {
    SourceModel model;
    double train_accuracy = 0.0;
    std::vector<double> epoch_loss;
};

/// Adam on minibatch cross-entropy over D_S. Throws NumericError on a non-finite loss.
SourceTraining train_source(const ExperimentConfig& cfg, const LabeledDataset& source, std::uint64_t init_seed,
                            std::uint64_t shuffle_seed);

/// Accuracy of classifier o backbone (eval mode) on labelled data.
double labeled_accuracy(const Network& backbone, const Network& classifier, const LabeledDataset& data);

/// Everything a seed shares across selectors and K: domains, h_S and (when enabled) f', q.
struct SeedArtifacts {
    std::uint64_t seed = 0;
    DomainPair domains;
    SourceTraining source;
    std::optional<ByolResult> ssl;
};

/// Runs generate, train-source and adapt-ssl. Persists datasets and checkpoints under
/// `dir` when it is non-empty.
SeedArtifacts prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir = {});

struct RunRow {
    std::string selector;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::string mode;
    bool ok = true;
    std::string failed_stage;
    std::string error;

    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::size_t evaluated = 0;
    std::size_t support_size = 0;
    std::string manifest;  // relative to the output directory
    std::optional<double> pseudo_label_accuracy;
    double source_train_accuracy = 0.0;
    double source_target_accuracy = 0.0;  // h_S on the whole target set, before adaptation
    std::vector<double> byol_loss;
    std::vector<double> lccs_loss;
    std::vector<std::string> notes;

    friend bool operator==(const RunRow&, const RunRow&) = default;
};

/// Algorithm body from pseudo-labelling to evaluation for one (selector, K) cell. Stage
/// errors are rethrown as StageError. Artifacts go to `cell_dir` when it is non-empty.
RunRow run_cell(const ExperimentConfig& cfg, const SeedArtifacts& artifacts, Selector selector, std::size_t k,
                const std::filesystem::path& cell_dir = {}, const std::filesystem::path& manifest_ref = {});

/// Full pipeline for one seed: prepare_seed followed by run_cell.
RunRow run_pipeline(const ExperimentConfig& cfg, Selector selector, std::size_t k, std::uint64_t seed);

struct Aggregate {
    std::string selector;
    std::size_t k = 0;
    std::size_t runs = 0;
    std::size_t failed = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single run

    friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

/// Mean and sample std of accuracy over successful rows, per (selector, K).
std::vector<Aggregate> aggregate(const std::vector<RunRow>& rows);

struct RunReport {
    std::string mode;
    std::vector<std::size_t> shots;
    std::vector<std::string> selectors;
    std::vector<RunRow> rows;
    std::vector<Aggregate> aggregates;

    const Aggregate* find(const std::string& selector, std::size_t k) const;
    /// Rows are selectors (random, entropy, mc_dropout, selectnadapt), columns are K.
    std::string table() const;
    friend bool operator==(const RunReport&, const RunReport&) = default;
};

using Progress = std::function<void(const RunRow&)>;

/// Every (selector, K, seed) cell. Failures are recorded, not thrown. Writes
/// report.json and table.txt into cfg.output_dir when it is set.
RunReport run_comparison(const ExperimentConfig& cfg, const Progress& progress = {});

void save_report(const std::filesystem::path& path, const RunReport& report);
RunReport load_report(const std::filesystem::path& path);

void save_source_checkpoint(const std::filesystem::path& path, const SourceTraining& source);
SourceTraining load_source_checkpoint(const std::filesystem::path& path);
void save_ssl_checkpoint(const std::filesystem::path& path, const ByolResult& ssl);
ByolResult load_ssl_checkpoint(const std::filesystem::path& path);
void save_adapted_checkpoint(const std::filesystem::path& path, const AdaptedModel& model);
AdaptedModel load_adapted_checkpoint(const std::filesystem::path& path);

void save_pseudo_labels(const std::filesystem::path& path, const PseudoLabelTable& table);
PseudoLabelTable load_pseudo_labels(const std::filesystem::path& path);

}  // namespace sna
