#include "sna/select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "sna/errors.hpp"
#include "sna/rng.hpp"
#include "sna/textio.hpp"

namespace sna {

namespace {

constexpr const char* kManifestMagic = "# selectnadapt support v1";

std::vector<int> assign_nearest(const Matrix& x, const Matrix& centers) {
    std::vector<int> a(x.rows(), 0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.rows(); ++c) {
            const double d = squared_distance(x.row(r), centers.row(c));
            if (d < best) {
                best = d;
                a[r] = static_cast<int>(c);
            }
        }
    }
    return a;
}

// Moves the farthest point of a multi-member cluster into each empty cluster.
void refill_empty(const Matrix& x, const Matrix& centers, std::vector<int>& a) {
    const std::size_t k = centers.rows();
    std::vector<std::size_t> counts(k, 0);
    for (int c : a) ++counts[static_cast<std::size_t>(c)];
    for (std::size_t empty = 0; empty < k; ++empty) {
        if (counts[empty] != 0) continue;
        std::size_t pick = x.rows();
        double far = -1.0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto c = static_cast<std::size_t>(a[r]);
            if (counts[c] < 2) continue;
            const double d = squared_distance(x.row(r), centers.row(c));
            if (d > far) {
                far = d;
                pick = r;
            }
        }
        if (pick == x.rows()) return;  // fewer rows than clusters
        --counts[static_cast<std::size_t>(a[pick])];
        a[pick] = static_cast<int>(empty);
        ++counts[empty];
    }
}

Matrix cluster_means(const Matrix& x, const std::vector<int>& a, const Matrix& previous) {
    Matrix centers(previous.rows(), x.cols());
    std::vector<std::size_t> counts(previous.rows(), 0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto c = static_cast<std::size_t>(a[r]);
        ++counts[c];
        for (std::size_t j = 0; j < x.cols(); ++j) centers(c, j) += x(r, j);
    }
    for (std::size_t c = 0; c < centers.rows(); ++c) {
        if (counts[c] == 0) {
            auto prev = previous.row(c);
            std::copy(prev.begin(), prev.end(), centers.row(c).begin());
            continue;
        }
        for (std::size_t j = 0; j < x.cols(); ++j) centers(c, j) /= static_cast<double>(counts[c]);
    }
    return centers;
}

double inertia_of(const Matrix& x, const Matrix& centers, const std::vector<int>& a) {
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r)
        total += squared_distance(x.row(r), centers.row(static_cast<std::size_t>(a[r])));
    return total;
}

Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng) {
    Matrix centers(k, x.cols());
    std::uniform_int_distribution<std::size_t> first(0, x.rows() - 1);
    auto set_center = [&](std::size_t c, std::size_t r) {
        auto row = x.row(r);
        std::copy(row.begin(), row.end(), centers.row(c).begin());
    };
    set_center(0, first(rng));
    std::vector<double> d2(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) d2[r] = squared_distance(x.row(r), centers.row(0));
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng), acc = 0.0;
            pick = x.rows() - 1;
            for (std::size_t r = 0; r < x.rows(); ++r) {
                acc += d2[r];
                if (d2[r] > 0.0 && acc >= target) {
                    pick = r;
                    break;
                }
            }
        } else {
            pick = first(rng);
        }
        set_center(c, pick);
        for (std::size_t r = 0; r < x.rows(); ++r)
            d2[r] = std::min(d2[r], squared_distance(x.row(r), centers.row(c)));
    }
    return centers;
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("distance: widths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

KMeansResult lloyd(const Matrix& features, Matrix initial_centers, std::size_t max_iterations) {
    if (initial_centers.cols() != features.cols()) throw DimensionError("kmeans: center width mismatch");
    if (initial_centers.rows() == 0) throw ValidationError("kmeans: K must be at least 1");
    if (features.rows() == 0) throw ValidationError("kmeans: no rows to cluster");
    KMeansResult res;
    Matrix centers = std::move(initial_centers);
    std::vector<int> a = assign_nearest(features, centers);
    refill_empty(features, centers, a);
    centers = cluster_means(features, a, centers);
    res.iterations_used = 1;
    res.inertia_trace.push_back(inertia_of(features, centers, a));
    while (res.iterations_used < max_iterations) {
        std::vector<int> next = assign_nearest(features, centers);
        refill_empty(features, centers, next);
        if (next == a) break;
        a = std::move(next);
        centers = cluster_means(features, a, centers);
        ++res.iterations_used;
        res.inertia_trace.push_back(inertia_of(features, centers, a));
    }
    res.inertia = res.inertia_trace.back();
    res.centers = std::move(centers);
    res.assignment = std::move(a);
    return res;
}

KMeansResult kmeans(const Matrix& features, std::size_t k, std::uint64_t seed, KMeansOptions options) {
    if (k == 0) throw ValidationError("kmeans: K must be at least 1");
    if (features.rows() == 0) throw ValidationError("kmeans: no rows to cluster");
    require_finite(features, "kmeans input");
    if (features.rows() < k) {
        KMeansResult res;
        res.centers = features;
        res.assignment.resize(features.rows());
        std::iota(res.assignment.begin(), res.assignment.end(), 0);
        res.deficient = true;
        res.inertia_trace.push_back(0.0);
        return res;
    }
    Rng rng(seed);
    KMeansResult best;
    bool have = false;
    for (std::size_t restart = 0; restart < std::max<std::size_t>(1, options.restarts); ++restart) {
        KMeansResult r = lloyd(features, kmeans_plus_plus(features, k, rng), options.max_iterations);
        if (!have || r.inertia < best.inertia) {
            best = std::move(r);
            have = true;
        }
    }
    return best;
}

std::vector<std::size_t> SupportSet::indices() const {
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.target_index);
    return out;
}

bool SupportSet::labeled() const {
    return std::all_of(entries.begin(), entries.end(), [](const SupportEntry& e) { return e.true_label >= 0; });
}

void attach_labels(SupportSet& support, const UnlabeledDataset& data) {
    const auto idx = support.indices();
    const auto pairs = data.annotate(idx);
    for (std::size_t i = 0; i < pairs.size(); ++i) support.entries[i].true_label = pairs[i].label;
}

std::vector<ClassFeatureBlock> project_features(const Network& backbone, const Network& projector,
                                                const UnlabeledDataset& data, const PseudoLabelTable& table) {
    if (table.labels.size() != data.size()) throw DimensionError("project: table and data sizes differ");
    if (backbone.input_width() != data.features().cols()) throw DimensionError("project: backbone input width");
    if (!projector.layers().empty() && projector.input_width() != backbone.output_width())
        throw DimensionError("project: projector expects width " + std::to_string(projector.input_width()) +
                             ", backbone emits " + std::to_string(backbone.output_width()));
    const Matrix z = predict(projector, predict(backbone, data.features()));
    std::vector<ClassFeatureBlock> blocks;
    for (std::size_t c = 0; c < table.per_class_indices.size(); ++c) {
        const auto& idx = table.per_class_indices[c];
        if (idx.empty()) continue;
        blocks.push_back({static_cast<int>(c), idx, z.gather_rows(idx)});
    }
    return blocks;
}

SupportSet select_support(std::span<const ClassFeatureBlock> blocks, std::span<const KMeansResult> clusters,
                          std::size_t k) {
    if (blocks.empty()) throw ValidationError("select: no feature blocks");
    if (blocks.size() != clusters.size()) throw ValidationError("select: one clustering per block required");
    SupportSet out;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& block = blocks[b];
        const auto& km = clusters[b];
        if (km.assignment.size() != block.indices.size()) throw ValidationError("select: assignment size mismatch");
        const std::size_t expected = std::min(k, block.indices.size());
        if (km.num_clusters() != expected)
            throw ValidationError("select: class " + std::to_string(block.class_id) + " has " +
                                  std::to_string(km.num_clusters()) + " clusters, expected " +
                                  std::to_string(expected));
        if (block.indices.size() < k)
            out.notes.push_back("class " + std::to_string(block.class_id) + ": " +
                                std::to_string(block.indices.size()) + " members for K=" + std::to_string(k) +
                                ", taking all");
        for (std::size_t c = 0; c < km.num_clusters(); ++c) {
            std::size_t best = block.indices.size();
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < block.indices.size(); ++r) {
                if (km.assignment[r] != static_cast<int>(c)) continue;
                const double d = euclidean_distance(block.features.row(r), km.centers.row(c));
                if (d < best_d || (d == best_d && block.indices[r] < block.indices[best])) {
                    best_d = d;
                    best = r;
                }
            }
            if (best == block.indices.size()) {
                out.notes.push_back("class " + std::to_string(block.class_id) + ": cluster " + std::to_string(c) +
                                    " has no members");
                continue;
            }
            out.entries.push_back({block.indices[best], -1, block.class_id, static_cast<int>(c), best_d});
        }
    }
    return out;
}

SupportSet cluster_and_select(std::span<const ClassFeatureBlock> blocks, std::size_t k, std::uint64_t seed,
                              const KMeansOptions& options) {
    if (k == 0) throw ValidationError("select: K must be at least 1");
    std::vector<KMeansResult> clusters;
    clusters.reserve(blocks.size());
    for (const auto& b : blocks)
        clusters.push_back(kmeans(b.features, k, derive_seed(seed, static_cast<std::uint64_t>(b.class_id)), options));
    return select_support(blocks, clusters, k);
}

SupportSet selectnadapt_select(const Network& backbone, const Network& projector, const UnlabeledDataset& data,
                               const PseudoLabelTable& table, std::size_t k, std::uint64_t seed,
                               const KMeansOptions& options) {
    const auto blocks = project_features(backbone, projector, data, table);
    SupportSet out = cluster_and_select(blocks, k, seed, options);
    for (std::size_t c = 0; c < table.per_class_indices.size(); ++c)
        if (table.per_class_indices[c].empty())
            out.notes.push_back("class " + std::to_string(c) + ": no samples carry this pseudo-label");
    return out;
}

SupportSet class_balanced_select(const UnlabeledDataset& data, const Network& backbone, const Network& projector,
                                 std::size_t k, std::uint64_t seed, bool ground_truth_permitted,
                                 const KMeansOptions& options) {
    if (!ground_truth_permitted)
        throw ValidationError("class-balanced selection reads true labels; ground truth is not permitted");
    const auto& truth = data.hidden_labels(GroundTruthPermit::class_balanced_ablation());
    Matrix onehot(data.size(), static_cast<std::size_t>(data.num_classes()));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0) throw ValidationError("class-balanced selection: unknown label at " + std::to_string(i));
        onehot(i, static_cast<std::size_t>(truth[i])) = 1.0;
    }
    return selectnadapt_select(backbone, projector, data, table_from_probabilities(std::move(onehot)), k, seed,
                               options);
}

void save_manifest(const std::filesystem::path& path, const ManifestHeader& header, const SupportSet& support) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << kManifestMagic << '\n'
        << "selector " << header.selector << '\n'
        << "mode " << header.mode << '\n'
        << "k " << header.k << '\n'
        << "classes " << header.num_classes << '\n'
        << "seed " << header.seed << '\n';
    for (const auto& n : support.notes) out << "note " << n << '\n';
    out << "entries " << support.entries.size() << '\n'
        << "target_index,pseudo_class,cluster_id,distance_score,true_label\n";
    for (const auto& e : support.entries)
        out << e.target_index << ',' << e.pseudo_class << ',' << e.cluster_id << ','
            << textio::format_double(e.distance_score) << ',' << e.true_label << '\n';
    out << "end\n";
    if (!out) throw Error("write failed for " + path.string());
}

std::pair<ManifestHeader, SupportSet> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    textio::LineReader reader(in);
    if (reader.expect("header") != kManifestMagic) throw ParseError("not a support manifest", reader.line());
    ManifestHeader h;
    h.selector = reader.expect_key("selector");
    h.mode = reader.expect_key("mode");
    h.k = static_cast<std::size_t>(textio::parse_int(reader.expect_key("k"), reader.line()));
    h.num_classes = static_cast<int>(textio::parse_int(reader.expect_key("classes"), reader.line()));
    h.seed = static_cast<std::uint64_t>(textio::parse_int(reader.expect_key("seed"), reader.line()));
    SupportSet s;
    std::string line = reader.expect("entries");
    while (line.rfind("note ", 0) == 0) {
        s.notes.push_back(line.substr(5));
        line = reader.expect("entries");
    }
    if (line.rfind("entries ", 0) != 0) throw ParseError("expected 'entries'", reader.line());
    const auto count = textio::parse_int(std::string_view(line).substr(8), reader.line());
    if (count < 0) throw ParseError("negative entry count", reader.line());
    reader.expect("column header");
    for (long long i = 0; i < count; ++i) {
        line = reader.expect("manifest entry");
        auto f = textio::split(line, ',');
        if (f.size() != 5) throw ParseError("expected 5 fields", reader.line());
        SupportEntry e;
        const auto idx = textio::parse_int(f[0], reader.line());
        if (idx < 0) throw ParseError("negative target index", reader.line());
        e.target_index = static_cast<std::size_t>(idx);
        e.pseudo_class = static_cast<int>(textio::parse_int(f[1], reader.line()));
        e.cluster_id = static_cast<int>(textio::parse_int(f[2], reader.line()));
        e.distance_score = textio::parse_double(f[3], reader.line());
        e.true_label = static_cast<int>(textio::parse_int(f[4], reader.line()));
        if (e.true_label < -1 || e.true_label >= h.num_classes)
            throw ValidationError("line " + std::to_string(reader.line()) + ": label out of range");
        s.entries.push_back(e);
    }
    if (reader.expect("end") != "end") throw ParseError("expected 'end'", reader.line());
    return {h, s};
}

}  // namespace sna
