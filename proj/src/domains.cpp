#include "sna/domains.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "sna/errors.hpp"
#include "sna/rng.hpp"
#include "sna/textio.hpp"

namespace sna {

namespace {

std::mutex audit_mutex;
std::vector<AccessEvent> audit_log;
thread_local std::string current_stage = "none";

constexpr const char* kDatasetMagic = "# selectnadapt dataset v1";

}  // namespace

void DomainSpec::validate() const {
    if (num_classes < 2) throw ValidationError("domain: need at least 2 classes");
    if (input_dim < 2) throw ValidationError("domain: input_dim must be at least 2");
    if (samples_per_class < 1) throw ValidationError("domain: samples_per_class must be at least 1");
    if (!(class_center_spread > 0.0)) throw ValidationError("domain: class_center_spread must be positive");
    if (!(within_class_std > 0.0)) throw ValidationError("domain: within_class_std must be positive");
    if (target_skew < 0.0 || target_skew >= 1.0) throw ValidationError("domain: target_skew must lie in [0,1)");
}

void ShiftSpec::validate(std::size_t input_dim) const {
    if (!(scale > 0.0)) throw ValidationError("shift: scale must be positive");
    if (!(noise_std >= 0.0)) throw ValidationError("shift: noise_std must be non-negative");
    if (!std::isfinite(rotation_angle)) throw ValidationError("shift: rotation angle must be finite");
    if (!translation.empty() && translation.size() != input_dim)
        throw ValidationError("shift: translation has " + std::to_string(translation.size()) +
                              " entries, input_dim is " + std::to_string(input_dim));
}

std::string ShiftSpec::describe() const {
    std::ostringstream os;
    os << "angle=" << textio::format_double(rotation_angle) << " scale=" << textio::format_double(scale)
       << " noise=" << textio::format_double(noise_std) << " translation=["
       << textio::join_doubles(translation, ';') << "]";
    return os.str();
}

void LabeledDataset::validate() const {
    if (features.rows() != labels.size())
        throw ValidationError("dataset: " + std::to_string(features.rows()) + " rows but " +
                              std::to_string(labels.size()) + " labels");
    for (int l : labels)
        if (l < 0 || l >= num_classes)
            throw ValidationError("dataset: label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
}

std::string to_string(GroundTruthPurpose p) {
    switch (p) {
        case GroundTruthPurpose::annotation: return "annotation";
        case GroundTruthPurpose::evaluation: return "evaluation";
        case GroundTruthPurpose::diagnostic: return "diagnostic";
        case GroundTruthPurpose::class_balanced_ablation: return "class_balanced_ablation";
        case GroundTruthPurpose::random_balanced_baseline: return "random_balanced_baseline";
        case GroundTruthPurpose::true_class_grouping: return "true_class_grouping";
        case GroundTruthPurpose::persistence: return "persistence";
    }
    return "unknown";
}

namespace access_audit {
void record(GroundTruthPurpose purpose, std::size_t count) {
    std::lock_guard lock(audit_mutex);
    audit_log.push_back({purpose, current_stage, count});
}
std::vector<AccessEvent> events() {
    std::lock_guard lock(audit_mutex);
    return audit_log;
}
void reset() {
    std::lock_guard lock(audit_mutex);
    audit_log.clear();
}
}  // namespace access_audit

StageScope::StageScope(std::string name) : previous_(std::exchange(current_stage, std::move(name))) {}
StageScope::~StageScope() { current_stage = std::move(previous_); }
std::string StageScope::current() { return current_stage; }

UnlabeledDataset::UnlabeledDataset(Matrix features, std::vector<int> hidden_labels, int num_classes,
                                   Metadata meta)
    : features_(std::move(features)),
      hidden_labels_(std::move(hidden_labels)),
      num_classes_(num_classes),
      meta_(std::move(meta)) {
    if (features_.rows() != hidden_labels_.size())
        throw ValidationError("dataset: feature rows and label count differ");
    for (int l : hidden_labels_)
        if (l < -1 || l >= num_classes_)
            throw ValidationError("dataset: label " + std::to_string(l) + " outside [-1, " +
                                  std::to_string(num_classes_) + ")");
}

std::vector<LabeledPair> UnlabeledDataset::annotate(std::span<const std::size_t> indices) const {
    std::vector<bool> seen(size(), false);
    for (std::size_t i : indices) {
        if (i >= size()) throw ValidationError("annotate: index " + std::to_string(i) + " out of range");
        if (seen[i]) throw ValidationError("annotate: duplicate index " + std::to_string(i));
        if (hidden_labels_[i] < 0) throw ValidationError("annotate: label of index " + std::to_string(i) + " is unknown");
        seen[i] = true;
    }
    access_audit::record(GroundTruthPurpose::annotation, indices.size());
    std::vector<LabeledPair> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        auto row = features_.row(i);
        out.push_back({i, {row.begin(), row.end()}, hidden_labels_[i]});
    }
    return out;
}

const std::vector<int>& UnlabeledDataset::hidden_labels(const GroundTruthPermit& permit) const {
    access_audit::record(permit.purpose(), hidden_labels_.size());
    return hidden_labels_;
}

Matrix rotation_matrix(std::size_t dim, double angle, std::uint64_t seed) {
    Matrix r(dim, dim);
    if (angle == 0.0) {
        for (std::size_t i = 0; i < dim; ++i) r(i, i) = 1.0;
        return r;
    }
    // random orthonormal basis by Gram-Schmidt on Gaussian columns (stored as rows of q)
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix q(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        while (true) {
            for (std::size_t j = 0; j < dim; ++j) q(i, j) = normal(rng);
            for (std::size_t k = 0; k < i; ++k) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dot += q(i, j) * q(k, j);
                for (std::size_t j = 0; j < dim; ++j) q(i, j) -= dot * q(k, j);
            }
            double norm = 0.0;
            for (std::size_t j = 0; j < dim; ++j) norm += q(i, j) * q(i, j);
            norm = std::sqrt(norm);
            if (norm < 1e-8) continue;
            for (std::size_t j = 0; j < dim; ++j) q(i, j) /= norm;
            break;
        }
    }
    // R = sum over planes (u, v) of the 2-D rotation, identity on any leftover axis
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) {
            double acc = 0.0;
            std::size_t k = 0;
            for (; k + 1 < dim; k += 2) {
                const double ua = q(k, a), va = q(k + 1, a), ub = q(k, b), vb = q(k + 1, b);
                acc += c * (ua * ub + va * vb) + s * (va * ub - ua * vb);
            }
            if (k < dim) acc += q(k, a) * q(k, b);
            r(a, b) = acc;
        }
    return r;
}

DomainPair generate_pair(const DomainSpec& spec, const ShiftSpec& shift) {
    spec.validate();
    shift.validate(spec.input_dim);
    const std::size_t d = spec.input_dim;
    const auto classes = static_cast<std::size_t>(spec.num_classes);

    Rng center_rng(derive_seed(spec.seed, 1));
    std::normal_distribution<double> spread(0.0, spec.class_center_spread);
    Matrix centers(classes, d);
    for (auto& v : centers.values()) v = spread(center_rng);

    auto draw = [&](Rng& rng, const std::vector<std::size_t>& counts, Matrix& x, std::vector<int>& y) {
        std::normal_distribution<double> noise(0.0, spec.within_class_std);
        const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
        x = Matrix(total, d);
        y.clear();
        std::size_t r = 0;
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t i = 0; i < counts[c]; ++i, ++r) {
                for (std::size_t j = 0; j < d; ++j) x(r, j) = centers(c, j) + noise(rng);
                y.push_back(static_cast<int>(c));
            }
    };
    auto shuffle = [&](Rng& rng, Matrix& x, std::vector<int>& y) {
        std::vector<std::size_t> order(y.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        Matrix xs = x.gather_rows(order);
        std::vector<int> ys(y.size());
        for (std::size_t i = 0; i < order.size(); ++i) ys[i] = y[order[i]];
        x = std::move(xs);
        y = std::move(ys);
    };

    Metadata common{{"classes", std::to_string(spec.num_classes)},
                    {"input_dim", std::to_string(d)},
                    {"samples_per_class", std::to_string(spec.samples_per_class)},
                    {"class_center_spread", textio::format_double(spec.class_center_spread)},
                    {"within_class_std", textio::format_double(spec.within_class_std)},
                    {"seed", std::to_string(spec.seed)},
                    {"shift", shift.describe()}};

    DomainPair pair;
    {
        Rng rng(derive_seed(spec.seed, 2));
        std::vector<std::size_t> counts(classes, spec.samples_per_class);
        draw(rng, counts, pair.source.features, pair.source.labels);
        shuffle(rng, pair.source.features, pair.source.labels);
        pair.source.num_classes = spec.num_classes;
        pair.source.meta = common;
        pair.source.meta["domain"] = "source";
    }
    {
        Rng rng(derive_seed(spec.seed, 3));
        std::vector<std::size_t> counts(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            const double frac = 1.0 - spec.target_skew * static_cast<double>(c) / static_cast<double>(classes - 1);
            counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                     static_cast<double>(spec.samples_per_class) * frac)));
        }
        Matrix x;
        std::vector<int> y;
        draw(rng, counts, x, y);

        const Matrix rot = rotation_matrix(d, shift.rotation_angle, derive_seed(spec.seed, 4));
        std::normal_distribution<double> noise(0.0, 1.0);
        Matrix shifted(x.rows(), d);
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t a = 0; a < d; ++a) {
                double acc = 0.0;
                for (std::size_t b = 0; b < d; ++b) acc += rot(a, b) * x(r, b);
                double v = shift.scale * acc;
                if (!shift.translation.empty()) v += shift.translation[a];
                if (shift.noise_std > 0.0) v += shift.noise_std * noise(rng);
                shifted(r, a) = v;
            }
        shuffle(rng, shifted, y);
        Metadata meta = common;
        meta["domain"] = "target";
        pair.target = UnlabeledDataset(std::move(shifted), std::move(y), spec.num_classes, std::move(meta));
    }
    return pair;
}

namespace {

void write_dataset(const std::filesystem::path& path, const char* kind, const Matrix& x,
                   const std::vector<int>& labels, int classes, const Metadata& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << kDatasetMagic << '\n'
        << "kind " << kind << '\n'
        << "rows " << x.rows() << '\n'
        << "cols " << x.cols() << '\n'
        << "classes " << classes << '\n';
    for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
    out << "data\n";
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        out << textio::join_doubles({row.begin(), row.end()}) << ',' << labels[r] << '\n';
    }
    out << "end\n";
    if (!out) throw Error("write failed for " + path.string());
}

struct RawDataset {
    std::string kind;
    Matrix features;
    std::vector<int> labels;
    int classes = 0;
    Metadata meta;
};

RawDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    textio::LineReader reader(in);
    if (reader.expect("header") != kDatasetMagic) throw ParseError("not a dataset file", reader.line());
    RawDataset raw;
    raw.kind = reader.expect_key("kind");
    if (raw.kind != "labeled" && raw.kind != "unlabeled")
        throw ParseError("unknown dataset kind '" + raw.kind + "'", reader.line());
    const auto rows = textio::parse_int(reader.expect_key("rows"), reader.line());
    const auto cols = textio::parse_int(reader.expect_key("cols"), reader.line());
    raw.classes = static_cast<int>(textio::parse_int(reader.expect_key("classes"), reader.line()));
    if (rows < 0 || cols < 1) throw ParseError("invalid dimensions", reader.line());
    while (true) {
        std::string line = reader.expect("data");
        if (line == "data") break;
        if (line.rfind("meta ", 0) != 0) throw ParseError("expected 'meta' or 'data'", reader.line());
        const auto rest = line.substr(5);
        const auto sp = rest.find(' ');
        if (sp == std::string::npos) raw.meta[rest] = "";
        else raw.meta[rest.substr(0, sp)] = rest.substr(sp + 1);
    }
    const auto n = static_cast<std::size_t>(rows), d = static_cast<std::size_t>(cols);
    raw.features = Matrix(n, d);
    raw.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::string line = reader.expect("data row");
        auto fields = textio::split(line, ',');
        if (fields.size() != d + 1)
            throw ParseError("expected " + std::to_string(d + 1) + " fields, got " + std::to_string(fields.size()),
                             reader.line());
        for (std::size_t j = 0; j < d; ++j) raw.features(r, j) = textio::parse_double(fields[j], reader.line());
        const auto label = textio::parse_int(fields[d], reader.line());
        const bool ok = raw.kind == "labeled" ? (label >= 0 && label < raw.classes)
                                              : (label >= -1 && label < raw.classes);
        if (!ok)
            throw ValidationError("line " + std::to_string(reader.line()) + ": label " + std::to_string(label) +
                                  " outside the " + std::to_string(raw.classes) + " classes");
        raw.labels[r] = static_cast<int>(label);
    }
    if (reader.expect("end") != "end") throw ParseError("expected 'end' after " + std::to_string(n) + " rows", reader.line());
    require_finite(raw.features, "dataset features");
    return raw;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
    data.validate();
    write_dataset(path, "labeled", data.features, data.labels, data.num_classes, data.meta);
}

void save_dataset(const std::filesystem::path& path, const UnlabeledDataset& data) {
    write_dataset(path, "unlabeled", data.features(), data.hidden_labels(GroundTruthPermit::persistence()),
                  data.num_classes(), data.meta());
}

LabeledDataset load_labeled_dataset(const std::filesystem::path& path) {
    RawDataset raw = read_dataset(path);
    if (raw.kind != "labeled") throw ValidationError(path.string() + ": expected a labeled dataset");
    LabeledDataset out{std::move(raw.features), std::move(raw.labels), raw.classes, std::move(raw.meta)};
    out.validate();
    return out;
}

UnlabeledDataset load_unlabeled_dataset(const std::filesystem::path& path) {
    RawDataset raw = read_dataset(path);
    if (raw.kind != "unlabeled") throw ValidationError(path.string() + ": expected an unlabeled dataset");
    return UnlabeledDataset(std::move(raw.features), std::move(raw.labels), raw.classes, std::move(raw.meta));
}

}  // namespace sna
