#include "voxloc/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "voxloc/error.hpp"
#include "voxloc/hash.hpp"
#include "voxloc/seeds.hpp"

namespace voxloc::net {

using json = nlohmann::ordered_json;

void NetworkConfig::validate() const {
    for (int c : channels)
        if (c < 1) raise(Errc::invalid_config, "network config: channel width < 1");
    if (lateral_dim < 1 || descriptor_dim < 1)
        raise(Errc::invalid_config, "network config: dimensions must be >= 1");
    if (lateral_dim != descriptor_dim)
        raise(Errc::invalid_config,
              "network config: lateral_dim must equal descriptor_dim (GeM pools the fused map)");
    if (quantization_step <= 0.0)
        raise(Errc::invalid_config, "network config: quantization step must be positive");
}

std::string NetworkConfig::canonical_json() const {
    json j;
    j["channels"] = channels;
    j["lateral_dim"] = lateral_dim;
    j["descriptor_dim"] = descriptor_dim;
    j["quantization_step"] = quantization_step;
    return j.dump();
}

std::string NetworkConfig::hash() const { return fnv1a_hex(canonical_json()); }

ad::Parameter& Model::param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) raise(Errc::invalid_config, "model: unknown parameter " + name);
    return it->second;
}

const ad::Parameter& Model::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) raise(Errc::invalid_config, "model: unknown parameter " + name);
    return it->second;
}

ad::BnState& Model::bn_state(const std::string& name) {
    auto it = bn_states.find(name);
    if (it == bn_states.end()) raise(Errc::invalid_config, "model: unknown bn state " + name);
    return it->second;
}

GeMParams Model::gem() const { return GeMParams{param("gem.p").value(0, 0), kGemEps}; }

void Model::zero_grad() {
    for (auto& [name, p] : params) p.zero_grad();
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += static_cast<std::size_t>(p.value.size());
    return n;
}

namespace {

constexpr int kEcaKernelSize = 3;

void add_conv_weight(Model& m, Rng& rng, const std::string& name, int kernel_size, int c_in,
                     int c_out) {
    const Eigen::Index rows =
        static_cast<Eigen::Index>(kernel_size) * kernel_size * kernel_size * c_in;
    const double bound = std::sqrt(6.0 / static_cast<double>(rows));
    std::uniform_real_distribution<double> u(-bound, bound);
    MatrixXd w(rows, c_out);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    m.params.emplace(name, ad::Parameter(name, std::move(w)));
}

void add_bn(Model& m, const std::string& name, int c) {
    m.params.emplace(name + ".gamma", ad::Parameter(name + ".gamma", MatrixXd::Ones(c, 1)));
    m.params.emplace(name + ".beta", ad::Parameter(name + ".beta", MatrixXd::Zero(c, 1)));
    m.bn_states[name] = ad::BnState{ad::VectorXd::Zero(c), ad::VectorXd::Ones(c)};
}

} // namespace

Model build(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng = make_rng(derive_seed(seed, 0x696e6974)); // "init"

    const auto& c = config.channels;
    const int lateral = config.lateral_dim;

    add_conv_weight(m, rng, "conv0.conv.weight", 5, 1, c[0]);
    add_bn(m, "conv0.bn", c[0]);

    for (int k = 1; k <= 4; ++k) {
        const std::string blk = "conv" + std::to_string(k);
        const int cin = c[static_cast<std::size_t>(k - 1)];
        const int cout = c[static_cast<std::size_t>(k)];
        add_conv_weight(m, rng, blk + ".down.weight", 2, cin, cin);
        add_bn(m, blk + ".down_bn", cin);
        add_conv_weight(m, rng, blk + ".res.conv1.weight", 3, cin, cout);
        add_bn(m, blk + ".res.bn1", cout);
        add_conv_weight(m, rng, blk + ".res.conv2.weight", 3, cout, cout);
        add_bn(m, blk + ".res.bn2", cout);
        m.params.emplace(blk + ".res.eca.kernel",
                         ad::Parameter(blk + ".res.eca.kernel",
                                       MatrixXd::Zero(kEcaKernelSize, 1)));
        if (cin != cout) add_conv_weight(m, rng, blk + ".res.shortcut.weight", 1, cin, cout);
    }

    for (int k = 2; k <= 4; ++k) {
        add_conv_weight(m, rng, "lateral" + std::to_string(k) + ".weight", 1,
                        c[static_cast<std::size_t>(k)], lateral);
    }
    add_conv_weight(m, rng, "tconv3.weight", 2, lateral, lateral);
    add_conv_weight(m, rng, "tconv4.weight", 2, lateral, lateral);

    m.params.emplace("gem.p",
                     ad::Parameter("gem.p", MatrixXd::Constant(1, 1, 3.0)));
    return m;
}

int ForwardTrace::stride_of(const std::string& block) const {
    for (const auto& e : entries)
        if (e.block == block) return e.stride;
    raise(Errc::invalid_config, "trace: unknown block " + block);
}

int ForwardTrace::channels_of(const std::string& block) const {
    for (const auto& e : entries)
        if (e.block == block) return e.channels;
    raise(Errc::invalid_config, "trace: unknown block " + block);
}

namespace {

ad::BnMode to_bn_mode(Mode mode) {
    switch (mode) {
        case Mode::train: return ad::BnMode::train;
        case Mode::train_update: return ad::BnMode::train_update;
        case Mode::eval: return ad::BnMode::eval;
    }
    return ad::BnMode::eval;
}

void trace_block(ForwardTrace* trace, const std::string& name, const ad::Tape& tape,
                 ad::Value v) {
    if (!trace) return;
    trace->entries.push_back({name, tape.value(v).stride(), tape.value(v).channels()});
}

} // namespace

ad::Value forward(Model& model, const geom::VoxelizedCloud& cloud, Mode mode, ad::Tape& tape,
                  ForwardTrace* trace) {
    if (cloud.coords.empty()) raise(Errc::empty_cloud, "forward: empty voxelized cloud");
    if (std::abs(cloud.step - model.config.quantization_step) > 1e-12)
        raise(Errc::invalid_config, "forward: cloud quantization step differs from config");

    const ad::BnMode bn_mode = to_bn_mode(mode);
    const auto bn = [&](ad::Value v, const std::string& name) {
        return ad::batch_norm(tape, v, model.param(name + ".gamma"), model.param(name + ".beta"),
                              model.bn_state(name), bn_mode, kBnEps, kBnMomentum);
    };

    // single-channel constant occupancy feature
    MatrixXd ones = MatrixXd::Ones(static_cast<Eigen::Index>(cloud.coords.size()), 1);
    ad::Value x = tape.leaf(ad::SparseTensor3D::make_unchecked(cloud.coords, std::move(ones), 1));

    ad::Value f0 = ad::relu(tape, bn(ad::sparse_conv(tape, x, model.param("conv0.conv.weight"),
                                                     5, 1),
                                     "conv0.bn"));
    trace_block(trace, "conv0", tape, f0);

    std::array<ad::Value, 5> feats{f0, {}, {}, {}, {}};
    for (int k = 1; k <= 4; ++k) {
        const std::string blk = "conv" + std::to_string(k);
        ad::Value down = ad::relu(
            tape, bn(ad::sparse_conv(tape, feats[static_cast<std::size_t>(k - 1)],
                                     model.param(blk + ".down.weight"), 2, 2),
                     blk + ".down_bn"));
        ad::Value r = ad::relu(
            tape, bn(ad::sparse_conv(tape, down, model.param(blk + ".res.conv1.weight"), 3, 1),
                     blk + ".res.bn1"));
        r = ad::eca(tape,
                    bn(ad::sparse_conv(tape, r, model.param(blk + ".res.conv2.weight"), 3, 1),
                       blk + ".res.bn2"),
                    model.param(blk + ".res.eca.kernel"));
        ad::Value shortcut = down;
        if (model.has_param(blk + ".res.shortcut.weight"))
            shortcut = ad::sparse_conv(tape, down, model.param(blk + ".res.shortcut.weight"), 1, 1);
        feats[static_cast<std::size_t>(k)] = ad::relu(tape, ad::sparse_add(tape, r, shortcut));
        trace_block(trace, blk, tape, feats[static_cast<std::size_t>(k)]);
    }

    const auto lateral = [&](int k) {
        return ad::sparse_conv(tape, feats[static_cast<std::size_t>(k)],
                               model.param("lateral" + std::to_string(k) + ".weight"), 1, 1);
    };

    ad::Value t4 = lateral(4);
    trace_block(trace, "lateral4", tape, t4);
    ad::Value up4 = ad::sparse_transposed_conv(tape, t4, model.param("tconv4.weight"));
    trace_block(trace, "tconv4", tape, up4);
    ad::Value t3 = ad::sparse_add(tape, up4, lateral(3));
    trace_block(trace, "t3", tape, t3);
    ad::Value up3 = ad::sparse_transposed_conv(tape, t3, model.param("tconv3.weight"));
    trace_block(trace, "tconv3", tape, up3);
    ad::Value t2 = ad::sparse_add(tape, up3, lateral(2));
    trace_block(trace, "t2", tape, t2);

    ad::Value desc = ad::gem_pool(tape, t2, model.param("gem.p"), kGemEps);
    trace_block(trace, "descriptor", tape, desc);
    return desc;
}

RowVectorXd compute_descriptor(Model& model, const geom::VoxelizedCloud& cloud, Mode mode) {
    ad::Tape tape(false);
    ad::Value v = forward(model, cloud, mode, tape);
    return ad::pooled_row(tape, v);
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kCkptMagic[4] = {'V', 'X', 'C', 'K'};

void write_blob(std::ofstream& os, const MatrixXd& m) {
    // row-major element order for readability of the directory
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            os.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}

void read_blob(std::ifstream& is, MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v;
            is.read(reinterpret_cast<char*>(&v), sizeof v);
            if (!is) raise(Errc::corrupt_file, "checkpoint: truncated blob section");
            m(i, j) = v;
        }
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig cfg;
    auto ch = j.at("channels");
    for (std::size_t i = 0; i < 5; ++i) cfg.channels[i] = ch.at(i).get<int>();
    cfg.lateral_dim = j.at("lateral_dim").get<int>();
    cfg.descriptor_dim = j.at("descriptor_dim").get<int>();
    cfg.quantization_step = j.at("quantization_step").get<double>();
    return cfg;
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    json header;
    header["format"] = 1;
    header["config"] = json::parse(model.config.canonical_json());
    header["config_hash"] = model.config.hash();
    header["gem_eps"] = kGemEps;
    json params = json::array();
    for (const auto& [name, p] : model.params) {
        params.push_back({{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    }
    header["params"] = std::move(params);
    json buffers = json::array();
    for (const auto& [name, st] : model.bn_states) {
        buffers.push_back({{"name", name}, {"size", st.running_mean.size()}});
    }
    header["buffers"] = std::move(buffers);

    const std::string header_str = header.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(Errc::io_error, "checkpoint: cannot open for writing: " + path.string());
    os.write(kCkptMagic, 4);
    std::uint64_t len = header_str.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, p] : model.params) write_blob(os, p.value);
    for (const auto& [name, st] : model.bn_states) {
        write_blob(os, st.running_mean);
        write_blob(os, st.running_var);
    }
    if (!os) raise(Errc::io_error, "checkpoint: write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise(Errc::io_error, "checkpoint: cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
        raise(Errc::corrupt_file, "checkpoint: bad magic");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!is || len > (1ULL << 24)) raise(Errc::corrupt_file, "checkpoint: bad header length");
    std::string header_str(len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!is) raise(Errc::corrupt_file, "checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception&) {
        raise(Errc::corrupt_file, "checkpoint: malformed header json");
    }

    NetworkConfig cfg;
    try {
        cfg = config_from_json(header.at("config"));
    } catch (const json::exception&) {
        raise(Errc::corrupt_file, "checkpoint: malformed config");
    }
    if (header.value("config_hash", "") != cfg.hash())
        raise(Errc::config_hash_mismatch, "checkpoint: config hash does not match config");

    Model model = build(cfg, 0);
    if (header.at("params").size() != model.params.size() ||
        header.at("buffers").size() != model.bn_states.size())
        raise(Errc::corrupt_file, "checkpoint: tensor directory size mismatch");
    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = model.params.find(name);
        if (it == model.params.end())
            raise(Errc::corrupt_file, "checkpoint: unexpected parameter " + name);
        if (it->second.value.rows() != entry.at("rows").get<Eigen::Index>() ||
            it->second.value.cols() != entry.at("cols").get<Eigen::Index>())
            raise(Errc::corrupt_file, "checkpoint: shape mismatch for " + name);
        read_blob(is, it->second.value);
    }
    for (const auto& entry : header.at("buffers")) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = model.bn_states.find(name);
        if (it == model.bn_states.end())
            raise(Errc::corrupt_file, "checkpoint: unexpected buffer " + name);
        MatrixXd mean(it->second.running_mean.size(), 1), var(it->second.running_var.size(), 1);
        read_blob(is, mean);
        read_blob(is, var);
        it->second.running_mean = mean.col(0);
        it->second.running_var = var.col(0);
    }
    return model;
}

} // namespace voxloc::net
