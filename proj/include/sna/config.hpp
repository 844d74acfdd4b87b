#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sna/adapt.hpp"
#include "sna/baselines.hpp"
#include "sna/domains.hpp"
#include "sna/select.hpp"
#include "sna/ssl.hpp"

namespace sna {

enum class Selector { random, entropy, mc_dropout, selectnadapt };
enum class PseudoLabelMode { ensemble, f_only, f_prime_only };
enum class AdaptBackbone { f, f_prime };

std::string to_string(Selector s);
std::string to_string(PseudoLabelMode m);
std::string to_string(AdaptBackbone b);
Selector parse_selector(const std::string& s);
PseudoLabelMode parse_pseudo_label_mode(const std::string& s);
AdaptBackbone parse_adapt_backbone(const std::string& s);

struct ModelShape {
    std::size_t hidden_width = 32;
    std::size_t feature_width = 16;  // D
};

struct SourceTrainingConfig {
    std::size_t epochs = 30;
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
};

/// Target shift as configured: the translation is translation_multiple * within_class_std
/// along a seeded random unit direction.
struct ShiftConfig {
    double rotation_angle = 0.5235987755982988;  // pi/6
    double translation_multiple = 1.5;
    double noise_std = 0.2;
    double scale = 1.0;
};

struct PipelineMode {
    PseudoLabelMode pseudo_labels = PseudoLabelMode::ensemble;
    bool class_balanced = false;
    AdaptBackbone adapt_backbone = AdaptBackbone::f_prime;
    /// When false, no BYOL is run: clustering uses source-backbone features directly.
    bool self_supervision = true;
    bool ground_truth_permitted = true;
    Grouping uncertainty_grouping = Grouping::predicted_class;

    std::string describe() const;
};

struct ExperimentConfig {
    DomainSpec domain;
    ShiftConfig shift;
    ModelShape model;
    SourceTrainingConfig source;
    ByolConfig byol;
    LccsConfig lccs;
    KMeansOptions kmeans;
    BaselineSpec mc_dropout{BaselineKind::mc_dropout, 10, 0.5};
    std::vector<std::size_t> shots{1, 5};
    std::vector<Selector> selectors{Selector::random, Selector::entropy, Selector::mc_dropout, Selector::selectnadapt};
    PipelineMode mode;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::filesystem::path output_dir;

    /// Throws ValidationError when the fields are inconsistent.
    void validate() const;
};

/// The desk-scale benchmark defaults.
ExperimentConfig default_config();

/// Flat key/value text with [section] headers; unspecified keys keep their defaults.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Domain and shift of one run seed.
DomainSpec domain_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);
ShiftSpec shift_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace sna
