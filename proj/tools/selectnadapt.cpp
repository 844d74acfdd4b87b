// Command-line driver for the selection and adaptation pipeline.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "sna/baselines.hpp"
#include "sna/checkpoint.hpp"
#include "sna/config.hpp"
#include "sna/errors.hpp"
#include "sna/harness.hpp"
#include "sna/pseudolabel.hpp"
#include "sna/select.hpp"

namespace fs = std::filesystem;
using namespace sna;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    std::string selector = "selectnadapt";
    std::size_t k = 1;
    std::string mode = "ensemble";
    std::string adapt_backbone;
};

ExperimentConfig load(const Options& o) {
    ExperimentConfig cfg = o.config.empty() ? default_config() : load_config(o.config);
    if (!o.out.empty()) cfg.output_dir = o.out;
    return cfg;
}

// --mode picks one of the pipeline variants exposed on the command line.
void apply_mode(ExperimentConfig& cfg, const std::string& mode) {
    if (mode == "ensemble" || mode == "f_only" || mode == "f_prime_only") {
        cfg.mode.pseudo_labels = parse_pseudo_label_mode(mode);
    } else if (mode == "class_balanced") {
        cfg.mode.class_balanced = true;
        cfg.mode.ground_truth_permitted = true;
    } else if (mode == "source_only") {
        cfg.mode.self_supervision = false;
        cfg.mode.pseudo_labels = PseudoLabelMode::f_only;
        cfg.mode.adapt_backbone = AdaptBackbone::f;
    } else {
        throw ValidationError("unknown mode '" + mode + "'");
    }
}

fs::path out_dir(const Options& o) {
    if (o.out.empty()) throw ValidationError("--out is required");
    fs::create_directories(o.out);
    return o.out;
}

void cmd_generate(const Options& o) {
    const ExperimentConfig cfg = load(o);
    cfg.validate();
    const fs::path dir = out_dir(o);
    StageScope scope(stage::generate);
    const DomainPair pair = generate_pair(domain_for_seed(cfg, o.seed), shift_for_seed(cfg, o.seed));
    save_dataset(dir / "source.csv", pair.source);
    save_dataset(dir / "target.csv", pair.target);
    save_config(dir / "config.ini", cfg);
    std::cout << "source " << pair.source.size() << " rows, target " << pair.target.size() << " rows -> " << dir
              << '\n';
}

void cmd_train_source(const Options& o) {
    const ExperimentConfig cfg = load(o);
    const fs::path dir = out_dir(o);
    const RunSeeds seeds = run_seeds(cfg, o.seed);
    const LabeledDataset source = load_labeled_dataset(dir / "source.csv");
    const SourceTraining s = train_source(cfg, source, seeds.source_init, seeds.source_shuffle);
    save_source_checkpoint(dir / "source.ckpt", s);
    std::cout << "source training accuracy " << s.train_accuracy << '\n';
}

void cmd_adapt_ssl(const Options& o) {
    const ExperimentConfig cfg = load(o);
    const fs::path dir = out_dir(o);
    const SourceTraining s = load_source_checkpoint(dir / "source.ckpt");
    const UnlabeledDataset target = load_unlabeled_dataset(dir / "target.csv");
    ByolConfig bc = cfg.byol;
    bc.seed = run_seeds(cfg, o.seed).byol;
    const ByolResult r = train_byol(s.model.backbone, target, bc);
    save_ssl_checkpoint(dir / "ssl.ckpt", r);
    std::cout << "byol loss " << (r.trace.epoch_loss.empty() ? 0.0 : r.trace.epoch_loss.front()) << " -> "
              << (r.trace.epoch_loss.empty() ? 0.0 : r.trace.epoch_loss.back()) << '\n';
}

void cmd_select(const Options& o) {
    ExperimentConfig cfg = load(o);
    apply_mode(cfg, o.mode);
    cfg.validate();
    const fs::path dir = out_dir(o);
    const Selector sel = parse_selector(o.selector);
    const RunSeeds seeds = run_seeds(cfg, o.seed);
    const SourceTraining s = load_source_checkpoint(dir / "source.ckpt");
    const UnlabeledDataset target = load_unlabeled_dataset(dir / "target.csv");
    const bool gt = cfg.mode.ground_truth_permitted;
    std::optional<ByolResult> ssl;
    if (cfg.mode.self_supervision) ssl = load_ssl_checkpoint(dir / "ssl.ckpt");
    const Network& f = s.model.backbone;
    const Network& g = s.model.classifier;
    const Network identity;
    const Network& fp = ssl ? ssl->backbone : f;
    const Network& q = ssl ? ssl->projector : identity;

    SupportSet support;
    {
        StageScope scope(stage::select);
        switch (sel) {
            case Selector::random: support = random_balanced_select(target, o.k, seeds.selection, gt); break;
            case Selector::entropy:
                support = entropy_select(f, g, target, o.k, cfg.mode.uncertainty_grouping, gt);
                break;
            case Selector::mc_dropout:
                support = mc_dropout_select(f, g, target, o.k, cfg.mc_dropout.passes,
                                            cfg.mc_dropout.dropout_probability, seeds.selection,
                                            cfg.mode.uncertainty_grouping, gt);
                break;
            case Selector::selectnadapt:
                if (cfg.mode.class_balanced) {
                    support = class_balanced_select(target, fp, q, o.k, seeds.selection, gt, cfg.kmeans);
                } else {
                    PseudoLabelTable t;
                    {
                        StageScope pl(stage::pseudo_label);
                        switch (cfg.mode.pseudo_labels) {
                            case PseudoLabelMode::ensemble: t = ensemble_pseudo_labels(f, fp, g, target); break;
                            case PseudoLabelMode::f_only: t = single_backbone_pseudo_labels(f, g, target); break;
                            case PseudoLabelMode::f_prime_only:
                                t = single_backbone_pseudo_labels(fp, g, target);
                                break;
                        }
                    }
                    save_pseudo_labels(dir / "pseudo_labels.csv", t);
                    support = selectnadapt_select(fp, q, target, t, o.k, seeds.selection, cfg.kmeans);
                }
                break;
        }
    }
    save_manifest(dir / "support.txt",
                  ManifestHeader{to_string(sel), cfg.mode.describe(), o.k, target.num_classes(), o.seed}, support);
    std::cout << support.entries.size() << " samples selected -> " << (dir / "support.txt") << '\n';
}

void cmd_adapt(const Options& o) {
    ExperimentConfig cfg = load(o);
    const fs::path dir = out_dir(o);
    if (!o.adapt_backbone.empty()) cfg.mode.adapt_backbone = parse_adapt_backbone(o.adapt_backbone);
    const SourceTraining s = load_source_checkpoint(dir / "source.ckpt");
    const UnlabeledDataset target = load_unlabeled_dataset(dir / "target.csv");
    auto [header, support] = load_manifest(dir / "support.txt");
    {
        StageScope scope(stage::annotate);
        attach_labels(support, target);
    }
    save_manifest(dir / "support.txt", header, support);

    StageScope scope(stage::adapt);
    Network base = s.model.backbone;
    if (cfg.mode.adapt_backbone == AdaptBackbone::f_prime) base = load_ssl_checkpoint(dir / "ssl.ckpt").backbone;
    const LabeledSupport ls = labeled_support(support, target);
    LccsConfig lc = cfg.lccs;
    lc.seed = run_seeds(cfg, o.seed).lccs;
    LccsResult r = lccs_adapt(base, s.model.classifier, ls, lc);
    AdaptedModel m{std::move(r.backbone), s.model.classifier, head_for_shots(header.k), std::nullopt};
    if (m.head == HeadKind::nearest_centroid)
        m.centroids = build_centroid_classifier(m.backbone, ls, target.num_classes());
    save_adapted_checkpoint(dir / "adapted.ckpt", m);
    std::cout << "support cross-entropy " << r.state.initial_loss << " -> " << r.state.final_loss << '\n';
}

void cmd_evaluate(const Options& o) {
    const fs::path dir = out_dir(o);
    const AdaptedModel m = load_adapted_checkpoint(dir / "adapted.ckpt");
    const UnlabeledDataset target = load_unlabeled_dataset(dir / "target.csv");
    const auto [header, support] = load_manifest(dir / "support.txt");
    StageScope scope(stage::evaluate);
    const auto idx = support.indices();
    const Metrics metrics = evaluate(m, target, idx);
    nlohmann::json j{{"accuracy", metrics.accuracy},
                     {"per_class_accuracy", metrics.per_class_accuracy},
                     {"mean_per_class_accuracy", metrics.mean_per_class_accuracy},
                     {"evaluated", metrics.evaluated},
                     {"selector", header.selector},
                     {"k", header.k},
                     {"notes", metrics.notes}};
    std::ofstream(dir / "metrics.json") << j.dump(2) << '\n';
    std::cout << "accuracy " << metrics.accuracy << " on " << metrics.evaluated << " samples\n";
}

void cmd_compare(const Options& o, const std::vector<std::string>& selectors, const std::vector<std::size_t>& shots,
                 const std::vector<std::uint64_t>& seeds, bool quiet) {
    ExperimentConfig cfg = load(o);
    if (o.mode != "ensemble") apply_mode(cfg, o.mode);
    if (!o.adapt_backbone.empty()) cfg.mode.adapt_backbone = parse_adapt_backbone(o.adapt_backbone);
    if (!selectors.empty()) {
        cfg.selectors.clear();
        for (const auto& s : selectors) cfg.selectors.push_back(parse_selector(s));
    }
    if (!shots.empty()) cfg.shots = shots;
    if (!seeds.empty()) cfg.seeds = seeds;
    out_dir(o);
    save_config(fs::path(o.out) / "config.ini", cfg);
    const RunReport report = run_comparison(cfg, [&](const RunRow& r) {
        if (quiet) return;
        std::cerr << "seed " << r.seed << " " << r.selector << " k=" << r.k << ": "
                  << (r.ok ? std::to_string(r.accuracy) : "failed in " + r.failed_stage) << '\n';
    });
    std::cout << report.table();
    std::size_t failed = 0;
    for (const auto& r : report.rows) failed += !r.ok;
    if (failed) throw StageError("compare", std::to_string(failed) + " cell(s) failed");
}

void cmd_report(const Options& o, const std::string& report_path) {
    const fs::path path = report_path.empty() ? fs::path(o.out) / "report.json" : fs::path(report_path);
    const RunReport report = load_report(path);
    if (aggregate(report.rows) != report.aggregates)
        throw ValidationError("aggregates do not match the per-seed rows");
    std::cout << report.table();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Support-set selection and batch-norm adaptation on synthetic domain shift"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "experiment config (ini)")->check(CLI::ExistingFile);
    app.add_option("--out", o.out, "artifact directory");
    app.add_option("--seed", o.seed, "run seed");

    auto* generate = app.add_subcommand("generate", "write source and target datasets");
    auto* train = app.add_subcommand("train-source", "train f and g on the source set");
    auto* ssl = app.add_subcommand("adapt-ssl", "self-supervised adaptation of f on the target set");
    auto* select = app.add_subcommand("select", "choose the support set");
    select->add_option("--selector", o.selector, "random | entropy | mc_dropout | selectnadapt");
    select->add_option("--k", o.k, "shots per class")->check(CLI::PositiveNumber);
    select->add_option("--mode", o.mode, "ensemble | f_only | f_prime_only | class_balanced | source_only");
    auto* adapt = app.add_subcommand("adapt", "annotate the support set and adapt batch-norm statistics");
    adapt->add_option("--adapt-backbone", o.adapt_backbone, "f | f_prime");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "accuracy on the target set minus the support set");

    std::vector<std::string> selectors;
    std::vector<std::size_t> shots;
    std::vector<std::uint64_t> seeds;
    bool quiet = false;
    auto* compare = app.add_subcommand("compare", "full sweep over selectors, K and seeds");
    compare->add_option("--selectors", selectors)->delimiter(',');
    compare->add_option("--k", shots)->delimiter(',');
    compare->add_option("--seeds", seeds)->delimiter(',');
    compare->add_option("--mode", o.mode, "ensemble | f_only | f_prime_only | class_balanced | source_only");
    compare->add_option("--adapt-backbone", o.adapt_backbone, "f | f_prime");
    compare->add_flag("--quiet", quiet);

    std::string report_path;
    auto* report = app.add_subcommand("report", "render the comparison table of a finished sweep");
    report->add_option("--report", report_path, "report.json (defaults to <out>/report.json)");

    CLI11_PARSE(app, argc, argv);

    std::string verb = app.get_subcommands().front()->get_name();
    try {
        if (generate->parsed()) cmd_generate(o);
        else if (train->parsed()) cmd_train_source(o);
        else if (ssl->parsed()) cmd_adapt_ssl(o);
        else if (select->parsed()) cmd_select(o);
        else if (adapt->parsed()) cmd_adapt(o);
        else if (evaluate_cmd->parsed()) cmd_evaluate(o);
        else if (compare->parsed()) cmd_compare(o, selectors, shots, seeds, quiet);
        else if (report->parsed()) cmd_report(o, report_path);
    } catch (const StageError& e) {
        std::cerr << "error [stage " << e.stage() << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [stage " << verb << "]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
