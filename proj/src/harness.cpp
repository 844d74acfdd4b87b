#include "sna/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "sna/baselines.hpp"
#include "sna/checkpoint.hpp"
#include "sna/errors.hpp"
#include "sna/optim.hpp"
#include "sna/rng.hpp"
#include "sna/textio.hpp"

namespace sna {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const RunRow& r);
void from_json(const json& j, RunRow& r);
void to_json(json& j, const Aggregate& a);
void from_json(const json& j, Aggregate& a);

namespace {

template <class F>
auto in_stage(const char* name, F&& body) {
    StageScope scope(name);
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

const std::vector<Selector> kTableOrder{Selector::random, Selector::entropy, Selector::mc_dropout,
                                        Selector::selectnadapt};

}  // namespace

RunSeeds run_seeds(const ExperimentConfig& cfg, std::uint64_t seed) {
    RunSeeds s;
    s.domain = domain_for_seed(cfg, seed).seed;
    s.source_init = derive_seed(s.domain, 11);
    s.source_shuffle = derive_seed(s.domain, 12);
    s.byol = derive_seed(derive_seed(s.domain, 13), cfg.byol.seed);
    s.selection = derive_seed(s.domain, 14);
    s.lccs = derive_seed(derive_seed(s.domain, 15), cfg.lccs.seed);
    return s;
}

Network make_backbone(const ExperimentConfig& cfg, std::uint64_t seed) {
    return NetworkBuilder(cfg.domain.input_dim)
        .dense(cfg.model.hidden_width)
        .batchnorm()
        .relu()
        .dense(cfg.model.feature_width)
        .batchnorm()
        .relu()
        .build(seed);
}

Network make_classifier(const ExperimentConfig& cfg, std::uint64_t seed) {
    return NetworkBuilder(cfg.model.feature_width).dense(static_cast<std::size_t>(cfg.domain.num_classes)).build(seed);
}

double labeled_accuracy(const Network& backbone, const Network& classifier, const LabeledDataset& data) {
    if (data.size() == 0) return 0.0;
    const auto pred = argmax_rows(predict(classifier, predict(backbone, data.features)));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

SourceTraining train_source(const ExperimentConfig& cfg, const LabeledDataset& source, std::uint64_t init_seed,
                            std::uint64_t shuffle_seed) {
    source.validate();
    SourceTraining out;
    out.model.backbone = make_backbone(cfg, init_seed);
    out.model.classifier = make_classifier(cfg, derive_seed(init_seed, 1));
    Network& f = out.model.backbone;
    Network& g = out.model.classifier;
    Optimizer opt_f = Optimizer::adam(cfg.source.learning_rate);
    Optimizer opt_g = Optimizer::adam(cfg.source.learning_rate);

    const std::size_t n = source.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(shuffle_seed);
    const std::size_t bs = cfg.source.batch_size;

    for (std::size_t epoch = 0; epoch < cfg.source.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            if (end - start < 2) continue;  // batch statistics need two rows
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            const Matrix x = source.features.gather_rows(idx);
            std::vector<int> y(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) y[i] = source.labels[idx[i]];

            const Matrix logits = forward(g, forward(f, x, Mode::train), Mode::train);
            const double loss = cross_entropy(softmax(logits), y);
            if (!std::isfinite(loss)) {
                std::string trace;
                for (double l : out.epoch_loss) trace += " " + textio::format_double(l);
                throw NumericError("source training diverged in epoch " + std::to_string(epoch) +
                                   "; epoch losses so far:" + trace);
            }
            backward(f, backward(g, softmax_cross_entropy_grad(logits, y)));
            step(opt_g, g);
            step(opt_f, f);
            total += loss * static_cast<double>(idx.size());
            seen += idx.size();
        }
        out.epoch_loss.push_back(seen ? total / static_cast<double>(seen) : 0.0);
    }
    f.clear_caches();
    g.clear_caches();
    out.model.source_bn = snapshot_bn(f);
    out.train_accuracy = labeled_accuracy(f, g, source);
    return out;
}

SeedArtifacts prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
    cfg.validate();
    SeedArtifacts a;
    a.seed = seed;
    const RunSeeds seeds = run_seeds(cfg, seed);
    if (!dir.empty()) fs::create_directories(dir);

    a.domains = in_stage(stage::generate, [&] {
        DomainPair pair = generate_pair(domain_for_seed(cfg, seed), shift_for_seed(cfg, seed));
        if (!dir.empty()) {
            save_dataset(dir / "source.csv", pair.source);
            save_dataset(dir / "target.csv", pair.target);
        }
        return pair;
    });

    a.source = in_stage(stage::train_source, [&] {
        SourceTraining s = train_source(cfg, a.domains.source, seeds.source_init, seeds.source_shuffle);
        if (!dir.empty()) save_source_checkpoint(dir / "source.ckpt", s);
        return s;
    });

    if (cfg.mode.self_supervision) {
        a.ssl = in_stage(stage::adapt_ssl, [&] {
            ByolConfig bc = cfg.byol;
            bc.seed = seeds.byol;
            ByolResult r = train_byol(a.source.model.backbone, a.domains.target, bc);
            if (!dir.empty()) save_ssl_checkpoint(dir / "ssl.ckpt", r);
            return r;
        });
    }
    return a;
}

RunRow run_cell(const ExperimentConfig& cfg, const SeedArtifacts& a, Selector selector, std::size_t k,
                const fs::path& cell_dir, const fs::path& manifest_ref) {
    if (k < 1) throw ValidationError("K must be at least 1");
    const bool gt = cfg.mode.ground_truth_permitted;
    const RunSeeds seeds = run_seeds(cfg, a.seed);
    const UnlabeledDataset& target = a.domains.target;
    const Network& f = a.source.model.backbone;
    const Network& g = a.source.model.classifier;
    if (!cfg.mode.self_supervision && (cfg.mode.adapt_backbone == AdaptBackbone::f_prime ||
                                       cfg.mode.pseudo_labels != PseudoLabelMode::f_only))
        throw ValidationError("mode needs f' but self-supervision is disabled");
    if (cfg.mode.self_supervision && !a.ssl) throw ValidationError("seed artifacts lack the self-supervised backbone");
    const Network& f_prime = a.ssl ? a.ssl->backbone : f;
    const Network identity;
    const Network& q = a.ssl ? a.ssl->projector : identity;
    if (!cell_dir.empty()) fs::create_directories(cell_dir);

    RunRow row;
    row.selector = to_string(selector);
    row.k = k;
    row.seed = a.seed;
    row.mode = cfg.mode.describe();
    row.source_train_accuracy = a.source.train_accuracy;
    if (a.ssl) row.byol_loss = a.ssl->trace.epoch_loss;

    std::optional<PseudoLabelTable> table;
    if (selector == Selector::selectnadapt && !cfg.mode.class_balanced) {
        table = in_stage(stage::pseudo_label, [&] {
            PseudoLabelTable t;
            switch (cfg.mode.pseudo_labels) {
                case PseudoLabelMode::ensemble: t = ensemble_pseudo_labels(f, f_prime, g, target); break;
                case PseudoLabelMode::f_only: t = single_backbone_pseudo_labels(f, g, target); break;
                case PseudoLabelMode::f_prime_only: t = single_backbone_pseudo_labels(f_prime, g, target); break;
            }
            if (!cell_dir.empty()) save_pseudo_labels(cell_dir / "pseudo_labels.csv", t);
            return t;
        });
    }

    SupportSet support = in_stage(stage::select, [&] {
        switch (selector) {
            case Selector::random: return random_balanced_select(target, k, seeds.selection, gt);
            case Selector::entropy: return entropy_select(f, g, target, k, cfg.mode.uncertainty_grouping, gt);
            case Selector::mc_dropout:
                return mc_dropout_select(f, g, target, k, cfg.mc_dropout.passes, cfg.mc_dropout.dropout_probability,
                                         seeds.selection, cfg.mode.uncertainty_grouping, gt);
            case Selector::selectnadapt:
                if (cfg.mode.class_balanced)
                    return class_balanced_select(target, f_prime, q, k, seeds.selection, gt, cfg.kmeans);
                return selectnadapt_select(f_prime, q, target, *table, k, seeds.selection, cfg.kmeans);
        }
        throw ValidationError("unknown selector");
    });

    in_stage(stage::annotate, [&] {
        attach_labels(support, target);
        if (!cell_dir.empty()) {
            ManifestHeader h{row.selector, row.mode, k, target.num_classes(), a.seed};
            save_manifest(cell_dir / "support.txt", h, support);
        }
    });
    row.support_size = support.entries.size();
    row.manifest = manifest_ref.empty() ? std::string() : manifest_ref.generic_string();
    row.notes = support.notes;

    AdaptedModel model = in_stage(stage::adapt, [&] {
        const Network& base = cfg.mode.adapt_backbone == AdaptBackbone::f ? f : f_prime;
        const LabeledSupport ls = labeled_support(support, target);
        LccsConfig lc = cfg.lccs;
        lc.seed = seeds.lccs;
        LccsResult r = lccs_adapt(base, g, ls, lc);
        row.lccs_loss = r.state.loss_trace;
        row.notes.insert(row.notes.end(), r.state.notes.begin(), r.state.notes.end());
        AdaptedModel m{std::move(r.backbone), g, head_for_shots(k), std::nullopt};
        if (m.head == HeadKind::nearest_centroid)
            m.centroids = build_centroid_classifier(m.backbone, ls, target.num_classes(), &row.notes);
        if (!cell_dir.empty()) save_adapted_checkpoint(cell_dir / "adapted.ckpt", m);
        return m;
    });

    const std::vector<std::size_t> support_idx = support.indices();
    const Metrics metrics = in_stage(stage::evaluate, [&] { return evaluate(model, target, support_idx); });
    row.accuracy = metrics.accuracy;
    row.per_class_accuracy = metrics.per_class_accuracy;
    row.evaluated = metrics.evaluated;
    row.notes.insert(row.notes.end(), metrics.notes.begin(), metrics.notes.end());

    in_stage(stage::diagnostics, [&] {
        if (table) row.pseudo_label_accuracy = pseudo_label_accuracy(*table, target);
        const auto& truth = target.hidden_labels(GroundTruthPermit::evaluation());
        const auto pred = argmax_rows(predict(g, predict(f, target.features())));
        std::size_t hits = 0, total = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (truth[i] < 0) continue;
            hits += pred[i] == truth[i];
            ++total;
        }
        row.source_target_accuracy = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
        if (!cell_dir.empty()) {
            std::ofstream out(cell_dir / "row.json");
            out << json(row).dump(2) << '\n';
        }
    });
    return row;
}

RunRow run_pipeline(const ExperimentConfig& cfg, Selector selector, std::size_t k, std::uint64_t seed) {
    const SeedArtifacts a = prepare_seed(cfg, seed);
    return run_cell(cfg, a, selector, k);
}

std::vector<Aggregate> aggregate(const std::vector<RunRow>& rows) {
    std::vector<Aggregate> out;
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const Aggregate& a) { return a.selector == r.selector && a.k == r.k; });
        if (it == out.end()) {
            out.push_back(Aggregate{r.selector, r.k, 0, 0, 0.0, 0.0});
            values.emplace_back();
            it = out.end() - 1;
        }
        auto& v = values[static_cast<std::size_t>(it - out.begin())];
        if (r.ok) v.push_back(r.accuracy);
        else ++it->failed;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = values[i];
        out[i].runs = v.size();
        if (v.empty()) continue;
        double sum = 0.0;
        for (double x : v) sum += x;
        out[i].mean = sum / static_cast<double>(v.size());
        if (v.size() > 1) {
            double ss = 0.0;
            for (double x : v) ss += (x - out[i].mean) * (x - out[i].mean);
            out[i].std = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
    }
    return out;
}

const Aggregate* RunReport::find(const std::string& selector, std::size_t k) const {
    for (const auto& a : aggregates)
        if (a.selector == selector && a.k == k) return &a;
    return nullptr;
}

std::string RunReport::table() const {
    std::vector<std::string> order;
    for (auto s : kTableOrder)
        if (std::find(selectors.begin(), selectors.end(), to_string(s)) != selectors.end())
            order.push_back(to_string(s));
    for (const auto& s : selectors)
        if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);

    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"selector"};
    for (auto k : shots) header.push_back(std::to_string(k) + "-shot");
    cells.push_back(header);
    for (const auto& s : order) {
        std::vector<std::string> line{s};
        for (auto k : shots) {
            const Aggregate* a = find(s, k);
            if (!a || a->runs == 0) {
                line.push_back(a && a->failed ? "FAILED (" + std::to_string(a->failed) + ")" : "-");
                continue;
            }
            std::string c = percent(a->mean) + " +- " + percent(a->std);
            if (a->failed) c += " [" + std::to_string(a->failed) + " failed]";
            line.push_back(c);
        }
        cells.push_back(line);
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    std::string out = "mode: " + mode + "\n";
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t i = 0; i < cells[r].size(); ++i) {
            out += i ? " | " : "";
            out += cells[r][i] + std::string(width[i] - cells[r][i].size(), ' ');
        }
        out += '\n';
        if (r == 0) {
            for (std::size_t i = 0; i < width.size(); ++i) out += (i ? "-+-" : "") + std::string(width[i], '-');
            out += '\n';
        }
    }
    return out;
}

RunReport run_comparison(const ExperimentConfig& cfg, const Progress& progress) {
    cfg.validate();
    RunReport report;
    report.mode = cfg.mode.describe();
    report.shots = cfg.shots;
    for (auto s : cfg.selectors) report.selectors.push_back(to_string(s));
    const fs::path root = cfg.output_dir;

    for (auto seed : cfg.seeds) {
        const fs::path seed_ref = fs::path("seed_" + std::to_string(seed));
        std::optional<SeedArtifacts> artifacts;
        std::string failed_stage, error;
        try {
            artifacts = prepare_seed(cfg, seed, root.empty() ? fs::path() : root / seed_ref);
        } catch (const StageError& e) {
            failed_stage = e.stage();
            error = e.what();
        }
        for (auto k : cfg.shots) {
            for (auto sel : cfg.selectors) {
                RunRow row;
                if (!artifacts) {
                    row.selector = to_string(sel);
                    row.k = k;
                    row.seed = seed;
                    row.mode = report.mode;
                    row.ok = false;
                    row.failed_stage = failed_stage;
                    row.error = error;
                } else {
                    const fs::path cell_ref = seed_ref / (to_string(sel) + "_k" + std::to_string(k));
                    try {
                        row = run_cell(cfg, *artifacts, sel, k, root.empty() ? fs::path() : root / cell_ref,
                                       root.empty() ? fs::path() : cell_ref / "support.txt");
                    } catch (const StageError& e) {
                        row = RunRow{};
                        row.selector = to_string(sel);
                        row.k = k;
                        row.seed = seed;
                        row.mode = report.mode;
                        row.ok = false;
                        row.failed_stage = e.stage();
                        row.error = e.what();
                    }
                }
                if (progress) progress(row);
                report.rows.push_back(std::move(row));
            }
        }
    }
    report.aggregates = aggregate(report.rows);
    if (!root.empty()) {
        fs::create_directories(root);
        save_report(root / "report.json", report);
        std::ofstream(root / "table.txt") << report.table();
    }
    return report;
}

void to_json(json& j, const RunRow& r) {
    j = json{{"selector", r.selector},
             {"k", r.k},
             {"seed", r.seed},
             {"mode", r.mode},
             {"ok", r.ok},
             {"failed_stage", r.failed_stage},
             {"error", r.error},
             {"accuracy", r.accuracy},
             {"per_class_accuracy", r.per_class_accuracy},
             {"evaluated", r.evaluated},
             {"support_size", r.support_size},
             {"manifest", r.manifest},
             {"pseudo_label_accuracy", r.pseudo_label_accuracy ? json(*r.pseudo_label_accuracy) : json(nullptr)},
             {"source_train_accuracy", r.source_train_accuracy},
             {"source_target_accuracy", r.source_target_accuracy},
             {"byol_loss", r.byol_loss},
             {"lccs_loss", r.lccs_loss},
             {"notes", r.notes}};
}

void from_json(const json& j, RunRow& r) {
    j.at("selector").get_to(r.selector);
    j.at("k").get_to(r.k);
    j.at("seed").get_to(r.seed);
    j.at("mode").get_to(r.mode);
    j.at("ok").get_to(r.ok);
    j.at("failed_stage").get_to(r.failed_stage);
    j.at("error").get_to(r.error);
    j.at("accuracy").get_to(r.accuracy);
    j.at("per_class_accuracy").get_to(r.per_class_accuracy);
    j.at("evaluated").get_to(r.evaluated);
    j.at("support_size").get_to(r.support_size);
    j.at("manifest").get_to(r.manifest);
    const auto& pla = j.at("pseudo_label_accuracy");
    if (pla.is_null()) r.pseudo_label_accuracy.reset();
    else r.pseudo_label_accuracy = pla.get<double>();
    j.at("source_train_accuracy").get_to(r.source_train_accuracy);
    j.at("source_target_accuracy").get_to(r.source_target_accuracy);
    j.at("byol_loss").get_to(r.byol_loss);
    j.at("lccs_loss").get_to(r.lccs_loss);
    j.at("notes").get_to(r.notes);
}

void to_json(json& j, const Aggregate& a) {
    j = json{{"selector", a.selector}, {"k", a.k},     {"runs", a.runs},
             {"failed", a.failed},     {"mean", a.mean}, {"std", a.std}};
}

void from_json(const json& j, Aggregate& a) {
    j.at("selector").get_to(a.selector);
    j.at("k").get_to(a.k);
    j.at("runs").get_to(a.runs);
    j.at("failed").get_to(a.failed);
    j.at("mean").get_to(a.mean);
    j.at("std").get_to(a.std);
}

void save_report(const fs::path& path, const RunReport& report) {
    json j{{"format", "selectnadapt report v1"},
           {"mode", report.mode},
           {"shots", report.shots},
           {"selectors", report.selectors},
           {"rows", report.rows},
           {"aggregates", report.aggregates}};
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw ValidationError("cannot write " + path.string());
        out << j.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

RunReport load_report(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), 0);
    }
    if (j.value("format", "") != "selectnadapt report v1") throw ValidationError("not a report file");
    RunReport r;
    try {
        j.at("mode").get_to(r.mode);
        j.at("shots").get_to(r.shots);
        j.at("selectors").get_to(r.selectors);
        j.at("rows").get_to(r.rows);
        j.at("aggregates").get_to(r.aggregates);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed report: ") + e.what());
    }
    return r;
}

namespace {

Matrix as_row(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

std::vector<double> row_values(const Matrix& m) { return std::vector<double>(m.values().begin(), m.values().end()); }

}  // namespace

void save_source_checkpoint(const fs::path& path, const SourceTraining& s) {
    Checkpoint ck;
    ck.meta["kind"] = "source";
    ck.meta["train_accuracy"] = textio::format_double(s.train_accuracy);
    ck.networks = {{"backbone", s.model.backbone}, {"classifier", s.model.classifier}};
    ck.matrices = {{"epoch_loss", as_row(s.epoch_loss)}};
    save_checkpoint(path, ck);
}

SourceTraining load_source_checkpoint(const fs::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    SourceTraining s;
    s.model.backbone = ck.network("backbone");
    s.model.classifier = ck.network("classifier");
    s.model.source_bn = snapshot_bn(s.model.backbone);
    s.epoch_loss = row_values(ck.matrix("epoch_loss"));
    auto it = ck.meta.find("train_accuracy");
    if (it != ck.meta.end()) s.train_accuracy = textio::parse_double(it->second, 0);
    return s;
}

void save_ssl_checkpoint(const fs::path& path, const ByolResult& r) {
    Checkpoint ck;
    ck.meta["kind"] = "ssl";
    ck.meta["zero_norm_rows"] = std::to_string(r.trace.zero_norm_rows);
    ck.networks = {{"backbone", r.backbone}, {"projector", r.projector}};
    ck.matrices = {{"epoch_loss", as_row(r.trace.epoch_loss)},
                   {"batch_loss_forward", as_row(r.trace.batch_loss_forward)},
                   {"batch_loss_reverse", as_row(r.trace.batch_loss_reverse)}};
    save_checkpoint(path, ck);
}

ByolResult load_ssl_checkpoint(const fs::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    ByolResult r;
    r.backbone = ck.network("backbone");
    r.projector = ck.network("projector");
    r.trace.epoch_loss = row_values(ck.matrix("epoch_loss"));
    r.trace.batch_loss_forward = row_values(ck.matrix("batch_loss_forward"));
    r.trace.batch_loss_reverse = row_values(ck.matrix("batch_loss_reverse"));
    auto it = ck.meta.find("zero_norm_rows");
    if (it != ck.meta.end()) r.trace.zero_norm_rows = static_cast<std::size_t>(textio::parse_int(it->second, 0));
    return r;
}

void save_adapted_checkpoint(const fs::path& path, const AdaptedModel& m) {
    Checkpoint ck;
    ck.meta["kind"] = "adapted";
    ck.meta["head"] = m.head == HeadKind::nearest_centroid ? "nearest_centroid" : "source_classifier";
    ck.networks = {{"backbone", m.backbone}, {"classifier", m.classifier}};
    if (m.centroids) {
        std::vector<double> present;
        for (bool b : m.centroids->present) present.push_back(b ? 1.0 : 0.0);
        ck.matrices = {{"centroids", m.centroids->centroids}, {"present", as_row(present)}};
    }
    save_checkpoint(path, ck);
}

AdaptedModel load_adapted_checkpoint(const fs::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    AdaptedModel m;
    m.backbone = ck.network("backbone");
    m.classifier = ck.network("classifier");
    auto it = ck.meta.find("head");
    if (it == ck.meta.end()) throw ValidationError("adapted checkpoint lacks a head entry");
    if (it->second == "nearest_centroid") {
        m.head = HeadKind::nearest_centroid;
        CentroidClassifier c;
        c.centroids = ck.matrix("centroids");
        for (double v : ck.matrix("present").values()) c.present.push_back(v != 0.0);
        if (c.present.size() != c.centroids.rows()) throw ValidationError("centroid table is inconsistent");
        m.centroids = std::move(c);
    } else if (it->second == "source_classifier") {
        m.head = HeadKind::source_classifier;
    } else {
        throw ValidationError("unknown head '" + it->second + "'");
    }
    return m;
}

namespace {
constexpr const char* kPseudoMagic = "# selectnadapt pseudo-labels v1";
}

void save_pseudo_labels(const fs::path& path, const PseudoLabelTable& t) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    const Matrix& p = t.mean_probabilities;
    out << kPseudoMagic << "\nrows " << p.rows() << "\nclasses " << p.cols() << "\ndata\n";
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const auto r = p.row(i);
        out << t.labels[i] << ',' << textio::join_doubles(std::vector<double>(r.begin(), r.end())) << '\n';
    }
    out << "end\n";
}

PseudoLabelTable load_pseudo_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path.string());
    textio::LineReader reader(in);
    if (reader.expect("header") != kPseudoMagic) throw ParseError("not a pseudo-label file", reader.line());
    const auto rows = textio::parse_int(reader.expect_key("rows"), reader.line());
    const auto cols = textio::parse_int(reader.expect_key("classes"), reader.line());
    if (rows < 0 || cols < 1) throw ParseError("bad table shape", reader.line());
    if (reader.expect("data") != "data") throw ParseError("expected 'data'", reader.line());
    Matrix p(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    std::vector<int> stored;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const std::string line = reader.expect("table row");
        const auto v = textio::parse_doubles(line, reader.line());
        if (v.size() != p.cols() + 1) throw ParseError("wrong column count", reader.line());
        stored.push_back(static_cast<int>(v[0]));
        for (std::size_t c = 0; c < p.cols(); ++c) p(i, c) = v[c + 1];
    }
    if (reader.expect("end") != "end") throw ParseError("expected 'end'", reader.line());
    PseudoLabelTable t = table_from_probabilities(std::move(p));
    if (t.labels != stored) throw ValidationError("stored labels disagree with stored probabilities");
    return t;
}

}  // namespace sna
