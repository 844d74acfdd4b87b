#include "sna/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sna/errors.hpp"
#include "sna/textio.hpp"

namespace sna {

namespace {

constexpr const char* kMagic = "# selectnadapt checkpoint";

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

class Writer {
public:
    explicit Writer(bool hex) : hex_(hex) {}
    void line(const std::string& s) { os_ << s << '\n'; }
    void values(const std::vector<double>& v) { os_ << textio::join_doubles(v, ' ', hex_) << '\n'; }
    std::string str() const { return os_.str(); }

private:
    bool hex_;
    std::ostringstream os_;
};

void write_network(Writer& w, const std::string& name, const Network& net) {
    w.line("network " + name + " " + std::to_string(net.layers().size()));
    for (const auto& layer : net.layers()) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            w.line("dense " + std::to_string(d->in_width()) + " " + std::to_string(d->out_width()) + " trainable " +
                   std::to_string(d->trainable ? 1 : 0));
            w.values(d->weight.values());
            w.values(d->bias.values());
        } else if (auto* b = std::get_if<BatchNormLayer>(&layer)) {
            w.line("batchnorm " + std::to_string(b->width()) + " trainable " + std::to_string(b->trainable ? 1 : 0) +
                   " momentum " + textio::format_double(b->momentum) + " epsilon " +
                   textio::format_double(b->epsilon) + " mixing " + std::to_string(b->mixing ? 1 : 0));
            w.values(b->gamma.values());
            w.values(b->beta.values());
            w.values(b->running_mean);
            w.values(b->running_var);
            if (b->mixing) {
                w.values({b->mixing->mean_logit(0, 0), b->mixing->var_logit(0, 0)});
                w.values(b->mixing->support_mean);
                w.values(b->mixing->support_var);
            }
        } else if (auto* d = std::get_if<DropoutLayer>(&layer)) {
            w.line("dropout " + textio::format_double(d->drop_probability));
        } else {
            w.line("relu");
        }
    }
}

struct Tokens {
    std::vector<std::string> items;
    std::size_t line;

    const std::string& at(std::size_t i) const {
        if (i >= items.size()) throw ParseError("missing field " + std::to_string(i + 1), line);
        return items[i];
    }
    std::size_t count(std::size_t i) const {
        const auto v = textio::parse_int(at(i), line);
        if (v < 0) throw ParseError("negative count", line);
        return static_cast<std::size_t>(v);
    }
    double real(std::size_t i) const { return textio::parse_double(at(i), line); }
};

Tokens tokenize(const std::string& s, std::size_t line) {
    Tokens t{{}, line};
    std::istringstream is(s);
    std::string item;
    while (is >> item) t.items.push_back(item);
    return t;
}

std::vector<double> read_values(textio::LineReader& r, std::size_t expected) {
    const std::string s = r.expect("parameter values");
    auto v = textio::parse_doubles(s, r.line(), ' ');
    if (v.size() != expected)
        throw ParseError("expected " + std::to_string(expected) + " values, got " + std::to_string(v.size()),
                         r.line());
    return v;
}

Network read_network(textio::LineReader& r, std::size_t layer_count) {
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < layer_count; ++i) {
        const Tokens t = tokenize(r.expect("layer"), r.line());
        const std::string& kind = t.at(0);
        if (kind == "dense") {
            const std::size_t in = t.count(1), out = t.count(2);
            DenseLayer d;
            d.trainable = t.count(4) != 0;
            d.weight = Matrix(in, out, read_values(r, in * out));
            d.bias = Matrix(1, out, read_values(r, out));
            layers.emplace_back(std::move(d));
        } else if (kind == "batchnorm") {
            const std::size_t w = t.count(1);
            BatchNormLayer b;
            b.trainable = t.count(3) != 0;
            b.momentum = t.real(5);
            b.epsilon = t.real(7);
            const bool mixing = t.count(9) != 0;
            b.gamma = Matrix(1, w, read_values(r, w));
            b.beta = Matrix(1, w, read_values(r, w));
            b.running_mean = read_values(r, w);
            b.running_var = read_values(r, w);
            if (mixing) {
                BnMixing m;
                const auto logits = read_values(r, 2);
                m.mean_logit(0, 0) = logits[0];
                m.var_logit(0, 0) = logits[1];
                m.support_mean = read_values(r, w);
                m.support_var = read_values(r, w);
                b.mixing = std::move(m);
            }
            layers.emplace_back(std::move(b));
        } else if (kind == "dropout") {
            DropoutLayer d;
            d.drop_probability = t.real(1);
            layers.emplace_back(std::move(d));
        } else if (kind == "relu") {
            layers.emplace_back(ReluLayer{});
        } else {
            throw ParseError("unknown layer kind '" + kind + "'", t.line);
        }
    }
    return Network(std::move(layers));
}

}  // namespace

const Network& Checkpoint::network(const std::string& name) const {
    for (const auto& [n, net] : networks)
        if (n == name) return net;
    throw ValidationError("checkpoint has no network '" + name + "'");
}

const Matrix& Checkpoint::matrix(const std::string& name) const {
    for (const auto& [n, m] : matrices)
        if (n == name) return m;
    throw ValidationError("checkpoint has no matrix '" + name + "'");
}

bool Checkpoint::has_network(const std::string& name) const {
    for (const auto& p : networks)
        if (p.first == name) return true;
    return false;
}

bool Checkpoint::has_matrix(const std::string& name) const {
    for (const auto& p : matrices)
        if (p.first == name) return true;
    return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, CheckpointEncoding encoding) {
    const bool hex = encoding == CheckpointEncoding::hexfloat;
    Writer w(hex);
    w.line(kMagic);
    w.line("version " + std::to_string(kCheckpointVersion));
    w.line(std::string("encoding ") + (hex ? "hexfloat" : "decimal17"));
    for (const auto& [k, v] : ckpt.meta) w.line("meta " + k + " " + v);
    for (const auto& [name, net] : ckpt.networks) write_network(w, name, net);
    for (const auto& [name, m] : ckpt.matrices) {
        w.line("matrix " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()));
        w.values(m.values());
    }
    w.line("end");
    const std::string body = w.str();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot open " + tmp + " for writing");
        out << body << "checksum " << hex64(fnv1a(body)) << '\n';
        if (!out) throw Error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    const auto pos = text.rfind("checksum ");
    if (pos == std::string::npos || (pos > 0 && text[pos - 1] != '\n'))
        throw ParseError("checkpoint is truncated (no checksum line)", static_cast<std::size_t>(
                                                                          std::count(text.begin(), text.end(), '\n') + 1));
    std::string stored = text.substr(pos + 9);
    while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
    const std::string body = text.substr(0, pos);
    if (stored != hex64(fnv1a(body)))
        throw ValidationError(path.string() + ": checksum mismatch, checkpoint is corrupt");

    std::istringstream is(body);
    textio::LineReader r(is);
    if (r.expect("header") != kMagic) throw ParseError("not a checkpoint file", r.line());
    const auto version = textio::parse_int(r.expect_key("version"), r.line());
    if (version != kCheckpointVersion)
        throw ValidationError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    const std::string encoding = r.expect_key("encoding");
    if (encoding != "decimal17" && encoding != "hexfloat")
        throw ParseError("unknown encoding '" + encoding + "'", r.line());

    Checkpoint ckpt;
    while (true) {
        const std::string line = r.expect("end");
        if (line == "end") break;
        if (line.rfind("meta ", 0) == 0) {
            const auto rest = line.substr(5);
            const auto sp = rest.find(' ');
            if (sp == std::string::npos) ckpt.meta[rest] = "";
            else ckpt.meta[rest.substr(0, sp)] = rest.substr(sp + 1);
            continue;
        }
        const Tokens t = tokenize(line, r.line());
        if (t.at(0) == "network") {
            ckpt.networks.emplace_back(t.at(1), read_network(r, t.count(2)));
        } else if (t.at(0) == "matrix") {
            const std::size_t rows = t.count(2), cols = t.count(3);
            ckpt.matrices.emplace_back(t.at(1), Matrix(rows, cols, read_values(r, rows * cols)));
        } else {
            throw ParseError("unexpected line '" + line + "'", r.line());
        }
    }
    return ckpt;
}

}  // namespace sna
