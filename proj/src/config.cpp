#include "sna/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <map>
#include <set>

#include "sna/errors.hpp"
#include "sna/rng.hpp"
#include "sna/textio.hpp"

namespace sna {

namespace pt = boost::property_tree;

std::string to_string(Selector s) {
    switch (s) {
        case Selector::random: return "random";
        case Selector::entropy: return "entropy";
        case Selector::mc_dropout: return "mc_dropout";
        case Selector::selectnadapt: return "selectnadapt";
    }
    return "unknown";
}

std::string to_string(PseudoLabelMode m) {
    switch (m) {
        case PseudoLabelMode::ensemble: return "ensemble";
        case PseudoLabelMode::f_only: return "f_only";
        case PseudoLabelMode::f_prime_only: return "f_prime_only";
    }
    return "unknown";
}

std::string to_string(AdaptBackbone b) { return b == AdaptBackbone::f ? "f" : "f_prime"; }

Selector parse_selector(const std::string& s) {
    if (s == "random" || s == "random_balanced") return Selector::random;
    if (s == "entropy") return Selector::entropy;
    if (s == "mc_dropout") return Selector::mc_dropout;
    if (s == "selectnadapt" || s == "ours") return Selector::selectnadapt;
    throw ValidationError("unknown selector '" + s + "'");
}

PseudoLabelMode parse_pseudo_label_mode(const std::string& s) {
    if (s == "ensemble") return PseudoLabelMode::ensemble;
    if (s == "f_only") return PseudoLabelMode::f_only;
    if (s == "f_prime_only") return PseudoLabelMode::f_prime_only;
    throw ValidationError("unknown pseudo-label mode '" + s + "'");
}

AdaptBackbone parse_adapt_backbone(const std::string& s) {
    if (s == "f") return AdaptBackbone::f;
    if (s == "f_prime") return AdaptBackbone::f_prime;
    throw ValidationError("unknown adapt backbone '" + s + "'");
}

std::string PipelineMode::describe() const {
    std::string s = to_string(pseudo_labels) + "/adapt=" + to_string(adapt_backbone);
    if (!self_supervision) s += "/no_ssl";
    if (class_balanced) s += "/class_balanced";
    if (uncertainty_grouping == Grouping::true_class) s += "/true_class_grouping";
    return s;
}

void ExperimentConfig::validate() const {
    domain.validate();
    if (shots.empty()) throw ValidationError("config: at least one K is required");
    for (auto k : shots)
        if (k < 1) throw ValidationError("config: K must be at least 1");
    if (selectors.empty()) throw ValidationError("config: at least one selector is required");
    if (seeds.empty()) throw ValidationError("config: at least one seed is required");
    if (model.hidden_width == 0 || model.feature_width == 0) throw ValidationError("config: model widths");
    if (!(shift.scale > 0.0) || shift.noise_std < 0.0) throw ValidationError("config: shift scale/noise");
    if (source.batch_size == 0 || !(source.learning_rate > 0.0)) throw ValidationError("config: source schedule");
    byol.validate(model.feature_width);
    mc_dropout.validate();
    const bool needs_truth = mode.class_balanced || mode.uncertainty_grouping == Grouping::true_class ||
                             std::find(selectors.begin(), selectors.end(), Selector::random) != selectors.end();
    if (needs_truth && !mode.ground_truth_permitted)
        throw ValidationError("config: random/class-balanced/true-class modes require ground_truth_permitted");
    if (!mode.self_supervision &&
        (mode.pseudo_labels != PseudoLabelMode::f_only || mode.adapt_backbone != AdaptBackbone::f))
        throw ValidationError("config: without self-supervision only f_only pseudo-labels and adapt_backbone=f exist");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

DomainSpec domain_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    DomainSpec d = cfg.domain;
    d.seed = derive_seed(cfg.domain.seed, seed);
    return d;
}

ShiftSpec shift_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    const DomainSpec d = domain_for_seed(cfg, seed);
    ShiftSpec s;
    s.rotation_angle = cfg.shift.rotation_angle;
    s.noise_std = cfg.shift.noise_std;
    s.scale = cfg.shift.scale;
    s.translation.assign(d.input_dim, 0.0);
    if (cfg.shift.translation_multiple != 0.0) {
        Rng rng(derive_seed(d.seed, 5));
        std::normal_distribution<double> normal(0.0, 1.0);
        double norm = 0.0;
        for (auto& v : s.translation) {
            v = normal(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : s.translation) v *= cfg.shift.translation_multiple * d.within_class_std / norm;
    }
    return s;
}

namespace {

template <class T>
std::string list_to_string(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<T, Selector>) s += to_string(v[i]);
        else s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto f : textio::split(s, ',')) {
        std::string item(f);
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"domain", {"num_classes", "input_dim", "samples_per_class", "class_center_spread", "within_class_std", "seed",
                    "target_skew"}},
        {"shift", {"rotation_angle", "translation_multiple", "noise_std", "scale"}},
        {"model", {"hidden_width", "feature_width"}},
        {"source", {"epochs", "learning_rate", "batch_size"}},
        {"byol", {"projection_dim", "predictor_hidden", "ema_decay", "epochs", "batch_size", "learning_rate",
                  "noise_fraction", "noise_std", "scale_lo", "scale_hi", "mask_probability", "seed"}},
        {"lccs", {"epochs", "learning_rate", "batch_size", "initial_source_weight"}},
        {"kmeans", {"restarts", "max_iterations"}},
        {"mc_dropout", {"passes", "dropout_probability"}},
        {"experiment", {"shots", "selectors", "seeds", "output_dir"}},
        {"mode", {"pseudo_labels", "class_balanced", "adapt_backbone", "self_supervision", "ground_truth_permitted",
                  "uncertainty_grouping"}},
    };
    return keys;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValidationError("invalid boolean '" + s + "'");
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError(e.message(), e.line());
    }
    for (const auto& [section, body] : tree) {
        auto it = known_keys().find(section);
        if (it == known_keys().end()) throw ValidationError("config: unknown section [" + section + "]");
        for (const auto& [key, value] : body)
            if (!it->second.count(key)) throw ValidationError("config: unknown key " + section + "." + key);
    }

    ExperimentConfig c = default_config();
    auto get_str = [&](const char* key, const std::string& def) { return tree.get<std::string>(key, def); };
    auto get_real = [&](const char* key, double def) {
        auto s = tree.get_optional<std::string>(key);
        return s ? textio::parse_double(*s, 0) : def;
    };
    auto get_count = [&](const char* key, std::size_t def) {
        auto s = tree.get_optional<std::string>(key);
        if (!s) return def;
        const auto v = textio::parse_int(*s, 0);
        if (v < 0) throw ValidationError(std::string("config: ") + key + " must be non-negative");
        return static_cast<std::size_t>(v);
    };

    c.domain.num_classes = static_cast<int>(get_count("domain.num_classes", static_cast<std::size_t>(c.domain.num_classes)));
    c.domain.input_dim = get_count("domain.input_dim", c.domain.input_dim);
    c.domain.samples_per_class = get_count("domain.samples_per_class", c.domain.samples_per_class);
    c.domain.class_center_spread = get_real("domain.class_center_spread", c.domain.class_center_spread);
    c.domain.within_class_std = get_real("domain.within_class_std", c.domain.within_class_std);
    c.domain.seed = get_count("domain.seed", c.domain.seed);
    c.domain.target_skew = get_real("domain.target_skew", c.domain.target_skew);

    c.shift.rotation_angle = get_real("shift.rotation_angle", c.shift.rotation_angle);
    c.shift.translation_multiple = get_real("shift.translation_multiple", c.shift.translation_multiple);
    c.shift.noise_std = get_real("shift.noise_std", c.shift.noise_std);
    c.shift.scale = get_real("shift.scale", c.shift.scale);

    c.model.hidden_width = get_count("model.hidden_width", c.model.hidden_width);
    c.model.feature_width = get_count("model.feature_width", c.model.feature_width);

    c.source.epochs = get_count("source.epochs", c.source.epochs);
    c.source.learning_rate = get_real("source.learning_rate", c.source.learning_rate);
    c.source.batch_size = get_count("source.batch_size", c.source.batch_size);

    c.byol.projection_dim = get_count("byol.projection_dim", c.byol.projection_dim);
    c.byol.predictor_hidden = get_count("byol.predictor_hidden", c.byol.predictor_hidden);
    c.byol.ema_decay = get_real("byol.ema_decay", c.byol.ema_decay);
    c.byol.epochs = get_count("byol.epochs", c.byol.epochs);
    c.byol.batch_size = get_count("byol.batch_size", c.byol.batch_size);
    c.byol.learning_rate = get_real("byol.learning_rate", c.byol.learning_rate);
    if (auto s = tree.get_optional<std::string>("byol.noise_fraction")) {
        if (*s == "none") c.byol.noise_fraction.reset();
        else c.byol.noise_fraction = textio::parse_double(*s, 0);
    }
    c.byol.augmentation.noise_std = get_real("byol.noise_std", c.byol.augmentation.noise_std);
    c.byol.augmentation.scale_lo = get_real("byol.scale_lo", c.byol.augmentation.scale_lo);
    c.byol.augmentation.scale_hi = get_real("byol.scale_hi", c.byol.augmentation.scale_hi);
    c.byol.augmentation.mask_probability = get_real("byol.mask_probability", c.byol.augmentation.mask_probability);
    c.byol.seed = get_count("byol.seed", c.byol.seed);

    c.lccs.epochs = get_count("lccs.epochs", c.lccs.epochs);
    c.lccs.learning_rate = get_real("lccs.learning_rate", c.lccs.learning_rate);
    c.lccs.batch_size = get_count("lccs.batch_size", c.lccs.batch_size);
    c.lccs.initial_source_weight = get_real("lccs.initial_source_weight", c.lccs.initial_source_weight);

    c.kmeans.restarts = get_count("kmeans.restarts", c.kmeans.restarts);
    c.kmeans.max_iterations = get_count("kmeans.max_iterations", c.kmeans.max_iterations);

    c.mc_dropout.passes = get_count("mc_dropout.passes", c.mc_dropout.passes);
    c.mc_dropout.dropout_probability = get_real("mc_dropout.dropout_probability", c.mc_dropout.dropout_probability);

    if (auto s = tree.get_optional<std::string>("experiment.shots")) {
        c.shots.clear();
        for (const auto& item : split_list(*s)) {
            const auto k = textio::parse_int(item, 0);
            if (k < 1) throw ValidationError("config: K must be at least 1");
            c.shots.push_back(static_cast<std::size_t>(k));
        }
    }
    if (auto s = tree.get_optional<std::string>("experiment.selectors")) {
        c.selectors.clear();
        for (const auto& item : split_list(*s)) c.selectors.push_back(parse_selector(item));
    }
    if (auto s = tree.get_optional<std::string>("experiment.seeds")) {
        c.seeds.clear();
        for (const auto& item : split_list(*s))
            c.seeds.push_back(static_cast<std::uint64_t>(textio::parse_int(item, 0)));
    }
    c.output_dir = get_str("experiment.output_dir", c.output_dir.string());

    c.mode.pseudo_labels = parse_pseudo_label_mode(get_str("mode.pseudo_labels", to_string(c.mode.pseudo_labels)));
    c.mode.class_balanced = parse_bool(get_str("mode.class_balanced", c.mode.class_balanced ? "true" : "false"));
    c.mode.adapt_backbone = parse_adapt_backbone(get_str("mode.adapt_backbone", to_string(c.mode.adapt_backbone)));
    c.mode.self_supervision = parse_bool(get_str("mode.self_supervision", c.mode.self_supervision ? "true" : "false"));
    c.mode.ground_truth_permitted =
        parse_bool(get_str("mode.ground_truth_permitted", c.mode.ground_truth_permitted ? "true" : "false"));
    const std::string grouping = get_str("mode.uncertainty_grouping", "predicted_class");
    if (grouping == "predicted_class") c.mode.uncertainty_grouping = Grouping::predicted_class;
    else if (grouping == "true_class") c.mode.uncertainty_grouping = Grouping::true_class;
    else throw ValidationError("config: unknown uncertainty_grouping '" + grouping + "'");

    c.validate();
    return c;
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
    pt::ptree t;
    auto real = [](double v) { return textio::format_double(v); };
    t.put("domain.num_classes", c.domain.num_classes);
    t.put("domain.input_dim", c.domain.input_dim);
    t.put("domain.samples_per_class", c.domain.samples_per_class);
    t.put("domain.class_center_spread", real(c.domain.class_center_spread));
    t.put("domain.within_class_std", real(c.domain.within_class_std));
    t.put("domain.seed", c.domain.seed);
    t.put("domain.target_skew", real(c.domain.target_skew));
    t.put("shift.rotation_angle", real(c.shift.rotation_angle));
    t.put("shift.translation_multiple", real(c.shift.translation_multiple));
    t.put("shift.noise_std", real(c.shift.noise_std));
    t.put("shift.scale", real(c.shift.scale));
    t.put("model.hidden_width", c.model.hidden_width);
    t.put("model.feature_width", c.model.feature_width);
    t.put("source.epochs", c.source.epochs);
    t.put("source.learning_rate", real(c.source.learning_rate));
    t.put("source.batch_size", c.source.batch_size);
    t.put("byol.projection_dim", c.byol.projection_dim);
    t.put("byol.predictor_hidden", c.byol.predictor_hidden);
    t.put("byol.ema_decay", real(c.byol.ema_decay));
    t.put("byol.epochs", c.byol.epochs);
    t.put("byol.batch_size", c.byol.batch_size);
    t.put("byol.learning_rate", real(c.byol.learning_rate));
    t.put("byol.noise_fraction", c.byol.noise_fraction ? real(*c.byol.noise_fraction) : std::string("none"));
    t.put("byol.noise_std", real(c.byol.augmentation.noise_std));
    t.put("byol.scale_lo", real(c.byol.augmentation.scale_lo));
    t.put("byol.scale_hi", real(c.byol.augmentation.scale_hi));
    t.put("byol.mask_probability", real(c.byol.augmentation.mask_probability));
    t.put("byol.seed", c.byol.seed);
    t.put("lccs.epochs", c.lccs.epochs);
    t.put("lccs.learning_rate", real(c.lccs.learning_rate));
    t.put("lccs.batch_size", c.lccs.batch_size);
    t.put("lccs.initial_source_weight", real(c.lccs.initial_source_weight));
    t.put("kmeans.restarts", c.kmeans.restarts);
    t.put("kmeans.max_iterations", c.kmeans.max_iterations);
    t.put("mc_dropout.passes", c.mc_dropout.passes);
    t.put("mc_dropout.dropout_probability", real(c.mc_dropout.dropout_probability));
    t.put("experiment.shots", list_to_string(c.shots));
    t.put("experiment.selectors", list_to_string(c.selectors));
    t.put("experiment.seeds", list_to_string(c.seeds));
    t.put("experiment.output_dir", c.output_dir.string());
    t.put("mode.pseudo_labels", to_string(c.mode.pseudo_labels));
    t.put("mode.class_balanced", c.mode.class_balanced ? "true" : "false");
    t.put("mode.adapt_backbone", to_string(c.mode.adapt_backbone));
    t.put("mode.self_supervision", c.mode.self_supervision ? "true" : "false");
    t.put("mode.ground_truth_permitted", c.mode.ground_truth_permitted ? "true" : "false");
    t.put("mode.uncertainty_grouping",
          c.mode.uncertainty_grouping == Grouping::true_class ? "true_class" : "predicted_class");
    pt::write_ini(path.string(), t);
}

}  // namespace sna
