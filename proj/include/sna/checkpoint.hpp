#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sna/domains.hpp"
#include "sna/nn.hpp"

namespace sna {

inline constexpr int kCheckpointVersion = 1;

/// 17 significant digits is exact for doubles; hexfloat is the bit-pattern variant.
enum class CheckpointEncoding { decimal17, hexfloat };

/// A bundle of named networks and matrices with free-form metadata.
struct Checkpoint {
    Metadata meta;
    std::vector<std::pair<std::string, Network>> networks;
    std::vector<std::pair<std::string, Matrix>> matrices;

    const Network& network(const std::string& name) const;
    const Matrix& matrix(const std::string& name) const;
    bool has_network(const std::string& name) const;
    bool has_matrix(const std::string& name) const;
};

/// Writes a self-describing text file: version header, layer kinds and widths, parameters,
/// batch-norm statistics (including mixing state), and a trailing checksum line.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                     CheckpointEncoding encoding = CheckpointEncoding::decimal17);

/// Refuses (ParseError / ValidationError) on version mismatch, checksum mismatch or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sna
