#ifndef VOXLOC_NETWORK_HPP
#define VOXLOC_NETWORK_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "voxloc/geometry.hpp"
#include "voxloc/ops.hpp"

namespace voxloc::net {

using ad::MatrixXd;
using ad::RowVectorXd;

inline constexpr double kGemEps = 1e-6;
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

struct NetworkConfig {
    // bottom-up channel widths c0..c4
    std::array<int, 5> channels{64, 64, 128, 64, 32};
    int lateral_dim = 256;
    int descriptor_dim = 256;
    double quantization_step = 0.01;

    static NetworkConfig defaults() { return {}; }

    // Shrunk preset for desk-scale runs.
    static NetworkConfig toy_scale() {
        NetworkConfig cfg;
        cfg.channels = {16, 16, 32, 16, 8};
        cfg.lateral_dim = 64;
        cfg.descriptor_dim = 64;
        return cfg;
    }

    void validate() const;
    std::string canonical_json() const;
    std::string hash() const;
};

struct GeMParams {
    double p = 3.0;
    double eps = kGemEps;
};

// The descriptor network: configuration plus all learnable parameters keyed
// by block path, batch-norm running statistics, and the GeM exponent
// (stored as the learnable parameter "gem.p").
struct Model {
    NetworkConfig config;
    std::map<std::string, ad::Parameter> params;
    std::map<std::string, ad::BnState> bn_states;

    ad::Parameter& param(const std::string& name);
    const ad::Parameter& param(const std::string& name) const;
    bool has_param(const std::string& name) const { return params.count(name) != 0; }
    ad::BnState& bn_state(const std::string& name);

    GeMParams gem() const;
    void zero_grad();
    std::size_t parameter_count() const;
};

Model build(const NetworkConfig& config, std::uint64_t seed);

enum class Mode {
    train,        // batch statistics, running stats untouched (stage-1 pass)
    train_update, // batch statistics, running stats updated (stage-3 pass)
    eval,
};

// Optional probe of per-block output strides and channel counts.
struct ForwardTrace {
    struct Entry {
        std::string block;
        int stride;
        int channels;
    };
    std::vector<Entry> entries;

    int stride_of(const std::string& block) const;
    int channels_of(const std::string& block) const;
};

// Runs the full bottom-up / top-down pass and returns the tape value holding
// the 1 x descriptor_dim pooled output.
ad::Value forward(Model& model, const geom::VoxelizedCloud& cloud, Mode mode, ad::Tape& tape,
                  ForwardTrace* trace = nullptr);

// Convenience wrapper: non-recording forward, returns the descriptor row.
RowVectorXd compute_descriptor(Model& model, const geom::VoxelizedCloud& cloud, Mode mode);

// Checkpoint: magic "VXCK", u64 header length, JSON header (config, config
// hash, tensor directory), then raw little-endian float64 blobs in header
// order.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

} // namespace voxloc::net

#endif
