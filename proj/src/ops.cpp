#include "voxloc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "voxloc/error.hpp"

namespace voxloc::ad {

namespace {

struct Offset {
    std::int32_t dx, dy, dz;
};

std::vector<Offset> kernel_offsets(int kernel_size) {
    const int lo = (kernel_size % 2 == 1) ? -(kernel_size - 1) / 2 : 0;
    const int hi = lo + kernel_size - 1;
    std::vector<Offset> offsets;
    offsets.reserve(static_cast<std::size_t>(kernel_size * kernel_size * kernel_size));
    for (int dx = lo; dx <= hi; ++dx)
        for (int dy = lo; dy <= hi; ++dy)
            for (int dz = lo; dz <= hi; ++dz) offsets.push_back({dx, dy, dz});
    return offsets;
}

// Per-tap (input_row, output_row) pair lists plus the output coordinates.
struct KernelMap {
    std::vector<std::vector<std::pair<int, int>>> taps;
    std::vector<Coord> out_coords;
    int out_stride = 1;
};

int row_of(const std::vector<Coord>& sorted, const Coord& c) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), c);
    if (it == sorted.end() || !(*it == c)) return -1;
    return static_cast<int>(it - sorted.begin());
}

KernelMap build_conv_map(const SparseTensor3D& in, int kernel_size, int factor) {
    const int s = in.stride();
    KernelMap map;

    if (factor == 1) {
        const auto offsets = kernel_offsets(kernel_size);
        map.taps.resize(offsets.size());
        map.out_stride = s;
        map.out_coords = in.coords();
        const auto& coords = in.coords();
        const int n = static_cast<int>(coords.size());
        for (std::size_t t = 0; t < offsets.size(); ++t) {
            const Offset d = offsets[t];
            auto& pairs = map.taps[t];
            for (int o = 0; o < n; ++o) {
                const Coord& base = coords[static_cast<std::size_t>(o)];
                Coord probe{base.x + d.dx * s, base.y + d.dy * s, base.z + d.dz * s};
                int i = row_of(coords, probe);
                if (i >= 0) pairs.emplace_back(i, o);
            }
        }
        return map;
    }

    // factor 2: unique parent cells on the doubled lattice
    const int out_stride = 2 * s;
    map.taps.resize(8);
    map.out_stride = out_stride;
    const auto& coords = in.coords();
    std::vector<Coord> parents(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        parents[i] = {floor_div(coords[i].x, out_stride) * out_stride,
                      floor_div(coords[i].y, out_stride) * out_stride,
                      floor_div(coords[i].z, out_stride) * out_stride};
    }
    map.out_coords = parents;
    std::sort(map.out_coords.begin(), map.out_coords.end());
    map.out_coords.erase(std::unique(map.out_coords.begin(), map.out_coords.end()),
                         map.out_coords.end());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const int t = ((coords[i].x - parents[i].x) / s) * 4 +
                      ((coords[i].y - parents[i].y) / s) * 2 + (coords[i].z - parents[i].z) / s;
        const int o = row_of(map.out_coords, parents[i]);
        map.taps[static_cast<std::size_t>(t)].emplace_back(static_cast<int>(i), o);
    }
    return map;
}

KernelMap build_tconv_map(const SparseTensor3D& in) {
    const int s = in.stride() / 2;
    KernelMap map;
    map.out_stride = s;
    map.taps.resize(8);
    const auto& coords = in.coords();

    std::vector<Coord> children;
    children.reserve(coords.size() * 8);
    for (const Coord& c : coords)
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz)
                    children.push_back({c.x + dx * s, c.y + dy * s, c.z + dz * s});
    std::sort(children.begin(), children.end());
    children.erase(std::unique(children.begin(), children.end()), children.end());
    map.out_coords = std::move(children);

    for (std::size_t i = 0; i < coords.size(); ++i) {
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz) {
                    const int t = dx * 4 + dy * 2 + dz;
                    Coord child{coords[i].x + dx * s, coords[i].y + dy * s, coords[i].z + dz * s};
                    map.taps[static_cast<std::size_t>(t)].emplace_back(
                        static_cast<int>(i), row_of(map.out_coords, child));
                }
    }
    return map;
}

// out[pair.second] += in[pair.first] * W_tap, one GEMM per tap.
void apply_taps(const KernelMap& map, const MatrixXd& in_feats, const MatrixXd& weight,
                int c_in, MatrixXd& out_feats) {
    for (std::size_t t = 0; t < map.taps.size(); ++t) {
        const auto& pairs = map.taps[t];
        if (pairs.empty()) continue;
        const auto block = weight.middleRows(static_cast<Eigen::Index>(t) * c_in, c_in);
        MatrixXd gathered(static_cast<Eigen::Index>(pairs.size()), c_in);
        for (std::size_t r = 0; r < pairs.size(); ++r)
            gathered.row(static_cast<Eigen::Index>(r)) = in_feats.row(pairs[r].first);
        MatrixXd prod = gathered * block;
        for (std::size_t r = 0; r < pairs.size(); ++r)
            out_feats.row(pairs[r].second) += prod.row(static_cast<Eigen::Index>(r));
    }
}

// Reverse pass shared by conv and transposed conv:
//   d_in[pair.first] += d_out[pair.second] * W_tap^T
//   dW_tap           += in[pair.first]^T * d_out[pair.second]
void backprop_taps(const KernelMap& map, const MatrixXd& in_feats, const MatrixXd& out_grad,
                   const MatrixXd& weight, int c_in, MatrixXd& in_grad, MatrixXd& weight_grad) {
    for (std::size_t t = 0; t < map.taps.size(); ++t) {
        const auto& pairs = map.taps[t];
        if (pairs.empty()) continue;
        const auto block = weight.middleRows(static_cast<Eigen::Index>(t) * c_in, c_in);
        MatrixXd g(static_cast<Eigen::Index>(pairs.size()), out_grad.cols());
        MatrixXd x(static_cast<Eigen::Index>(pairs.size()), c_in);
        for (std::size_t r = 0; r < pairs.size(); ++r) {
            g.row(static_cast<Eigen::Index>(r)) = out_grad.row(pairs[r].second);
            x.row(static_cast<Eigen::Index>(r)) = in_feats.row(pairs[r].first);
        }
        MatrixXd dx = g * block.transpose();
        for (std::size_t r = 0; r < pairs.size(); ++r)
            in_grad.row(pairs[r].first) += dx.row(static_cast<Eigen::Index>(r));
        weight_grad.middleRows(static_cast<Eigen::Index>(t) * c_in, c_in).noalias() +=
            x.transpose() * g;
    }
}

} // namespace

Value sparse_conv(Tape& tape, Value input, Parameter& weight, int kernel_size,
                  int out_stride_factor) {
    const SparseTensor3D& in = tape.value(input);
    if (out_stride_factor != 1 && out_stride_factor != 2)
        raise(Errc::shape_mismatch, "sparse_conv: stride factor must be 1 or 2");
    if (out_stride_factor == 2 && kernel_size != 2)
        raise(Errc::shape_mismatch, "sparse_conv: stride-2 convolution requires kernel size 2");
    if (out_stride_factor == 1 && kernel_size % 2 == 0)
        raise(Errc::shape_mismatch, "sparse_conv: stride-1 convolution requires odd kernel");

    const int c_in = in.channels();
    const Eigen::Index k3 = static_cast<Eigen::Index>(kernel_size) * kernel_size * kernel_size;
    if (weight.value.rows() != k3 * c_in)
        raise(Errc::shape_mismatch, "sparse_conv: weight rows != K^3 * C_in for " + weight.name);
    const Eigen::Index c_out = weight.value.cols();

    KernelMap map = build_conv_map(in, kernel_size, out_stride_factor);
    MatrixXd out_feats = MatrixXd::Zero(static_cast<Eigen::Index>(map.out_coords.size()), c_out);
    apply_taps(map, in.features(), weight.value, c_in, out_feats);

    const int out_stride = map.out_stride;
    std::vector<Coord> out_coords = std::move(map.out_coords);
    Value out = tape.push(
        SparseTensor3D::make_unchecked(std::move(out_coords), std::move(out_feats), out_stride));
    if (tape.recording()) {
        tape.record([&tape, &weight, input, out, map = std::move(map), c_in]() {
            const MatrixXd& og = tape.grad(out);
            MatrixXd& ig = tape.grad(input);
            backprop_taps(map, tape.value(input).features(), og, weight.value, c_in, ig,
                          weight.grad);
        });
    }
    return out;
}

Value sparse_transposed_conv(Tape& tape, Value input, Parameter& weight) {
    const SparseTensor3D& in = tape.value(input);
    if (in.stride() < 2)
        raise(Errc::stride_violation, "sparse_transposed_conv: input stride must be >= 2");
    const int c_in = in.channels();
    if (weight.value.rows() != 8 * c_in)
        raise(Errc::shape_mismatch,
              "sparse_transposed_conv: weight rows != 8 * C_in for " + weight.name);
    const Eigen::Index c_out = weight.value.cols();

    KernelMap map = build_tconv_map(in);
    MatrixXd out_feats = MatrixXd::Zero(static_cast<Eigen::Index>(map.out_coords.size()), c_out);
    apply_taps(map, in.features(), weight.value, c_in, out_feats);

    const int out_stride = map.out_stride;
    std::vector<Coord> out_coords = std::move(map.out_coords);
    Value out = tape.push(
        SparseTensor3D::make_unchecked(std::move(out_coords), std::move(out_feats), out_stride));
    if (tape.recording()) {
        tape.record([&tape, &weight, input, out, map = std::move(map), c_in]() {
            const MatrixXd& og = tape.grad(out);
            MatrixXd& ig = tape.grad(input);
            backprop_taps(map, tape.value(input).features(), og, weight.value, c_in, ig,
                          weight.grad);
        });
    }
    return out;
}

Value sparse_add(Tape& tape, Value a, Value b) {
    const SparseTensor3D& ta = tape.value(a);
    const SparseTensor3D& tb = tape.value(b);
    if (ta.channels() != tb.channels())
        raise(Errc::channel_mismatch, "sparse_add: channel counts differ");
    if (ta.stride() != tb.stride())
        raise(Errc::stride_mismatch, "sparse_add: strides differ");

    std::vector<Coord> out_coords;
    out_coords.reserve(ta.coords().size() + tb.coords().size());
    std::merge(ta.coords().begin(), ta.coords().end(), tb.coords().begin(), tb.coords().end(),
               std::back_inserter(out_coords));
    out_coords.erase(std::unique(out_coords.begin(), out_coords.end()), out_coords.end());

    std::vector<int> rows_a(ta.coords().size()), rows_b(tb.coords().size());
    for (std::size_t i = 0; i < ta.coords().size(); ++i)
        rows_a[i] = row_of(out_coords, ta.coords()[i]);
    for (std::size_t i = 0; i < tb.coords().size(); ++i)
        rows_b[i] = row_of(out_coords, tb.coords()[i]);

    MatrixXd out_feats =
        MatrixXd::Zero(static_cast<Eigen::Index>(out_coords.size()), ta.channels());
    for (std::size_t i = 0; i < rows_a.size(); ++i)
        out_feats.row(rows_a[i]) += ta.features().row(static_cast<Eigen::Index>(i));
    for (std::size_t i = 0; i < rows_b.size(); ++i)
        out_feats.row(rows_b[i]) += tb.features().row(static_cast<Eigen::Index>(i));

    Value out = tape.push(SparseTensor3D::make_unchecked(std::move(out_coords),
                                                         std::move(out_feats), ta.stride()));
    if (tape.recording()) {
        tape.record([&tape, a, b, out, rows_a = std::move(rows_a), rows_b = std::move(rows_b)]() {
            const MatrixXd& og = tape.grad(out);
            MatrixXd& ga = tape.grad(a);
            for (std::size_t i = 0; i < rows_a.size(); ++i)
                ga.row(static_cast<Eigen::Index>(i)) += og.row(rows_a[i]);
            MatrixXd& gb = tape.grad(b);
            for (std::size_t i = 0; i < rows_b.size(); ++i)
                gb.row(static_cast<Eigen::Index>(i)) += og.row(rows_b[i]);
        });
    }
    return out;
}

Value relu(Tape& tape, Value input) {
    const SparseTensor3D& in = tape.value(input);
    MatrixXd out_feats = in.features().cwiseMax(0.0);
    Value out = tape.push(
        SparseTensor3D::make_unchecked(in.coords(), std::move(out_feats), in.stride()));
    if (tape.recording()) {
        tape.record([&tape, input, out]() {
            const MatrixXd& og = tape.grad(out);
            MatrixXd mask =
                (tape.value(input).features().array() > 0.0).cast<double>().matrix();
            tape.grad(input) += og.cwiseProduct(mask);
        });
    }
    return out;
}

Value batch_norm(Tape& tape, Value input, Parameter& gamma, Parameter& beta, BnState& state,
                 BnMode mode, double eps, double momentum) {
    const SparseTensor3D& in = tape.value(input);
    const int c = in.channels();
    if (gamma.value.rows() != c || beta.value.rows() != c || gamma.value.cols() != 1 ||
        beta.value.cols() != 1)
        raise(Errc::shape_mismatch, "batch_norm: gamma/beta must be C x 1");
    const Eigen::Index n = in.size();

    RowVectorXd mean;
    VectorXd inv_std;
    if (mode == BnMode::eval) {
        mean = state.running_mean.transpose();
        inv_std = (state.running_var.array() + eps).rsqrt().matrix();
    } else {
        if (n < 2) raise(Errc::degenerate_batch, "batch_norm: fewer than 2 active voxels");
        mean = in.features().colwise().mean();
        VectorXd var =
            (in.features().rowwise() - mean).cwiseAbs2().colwise().mean().transpose();
        inv_std = (var.array() + eps).rsqrt().matrix();
        if (mode == BnMode::train_update) {
            const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
            state.running_mean =
                (1.0 - momentum) * state.running_mean + momentum * mean.transpose();
            state.running_var = (1.0 - momentum) * state.running_var + momentum * (unbias * var);
        }
    }

    MatrixXd x_hat = (in.features().rowwise() - mean) * inv_std.asDiagonal();
    MatrixXd out_feats = x_hat * gamma.value.col(0).asDiagonal();
    out_feats.rowwise() += beta.value.col(0).transpose();

    Value out = tape.push(
        SparseTensor3D::make_unchecked(in.coords(), std::move(out_feats), in.stride()));
    if (tape.recording()) {
        const bool batch_stats = (mode != BnMode::eval);
        tape.record([&tape, &gamma, &beta, input, out, x_hat = std::move(x_hat),
                     inv_std = std::move(inv_std), batch_stats]() {
            const MatrixXd& og = tape.grad(out);
            const Eigen::Index n_rows = og.rows();
            RowVectorXd sum_dy = og.colwise().sum();
            RowVectorXd sum_dy_xhat = og.cwiseProduct(x_hat).colwise().sum();
            gamma.grad.col(0) += sum_dy_xhat.transpose();
            beta.grad.col(0) += sum_dy.transpose();

            VectorXd scale = gamma.value.col(0).cwiseProduct(inv_std);
            MatrixXd& ig = tape.grad(input);
            if (batch_stats) {
                const double inv_n = 1.0 / static_cast<double>(n_rows);
                MatrixXd centered = og.rowwise() - (sum_dy * inv_n);
                centered -= x_hat * (sum_dy_xhat * inv_n).asDiagonal();
                ig += centered * scale.asDiagonal();
            } else {
                ig += og * scale.asDiagonal();
            }
        });
    }
    return out;
}

Value eca(Tape& tape, Value input, Parameter& kernel) {
    const SparseTensor3D& in = tape.value(input);
    if (kernel.value.cols() != 1 || kernel.value.rows() % 2 == 0)
        raise(Errc::shape_mismatch, "eca: kernel must be an odd-length column vector");
    const int c = in.channels();
    const int k = static_cast<int>(kernel.value.rows());
    const int r = (k - 1) / 2;
    const Eigen::Index n = in.size();
    if (n == 0) raise(Errc::empty_tensor, "eca: empty input");

    VectorXd s = in.features().colwise().mean().transpose();
    VectorXd z = VectorXd::Zero(c);
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
            const int src = ch + j - r;
            if (src >= 0 && src < c) acc += kernel.value(j, 0) * s(src);
        }
        z(ch) = acc;
    }
    VectorXd a = ((-z.array()).exp() + 1.0).inverse().matrix();

    MatrixXd out_feats = in.features() * a.asDiagonal();
    Value out = tape.push(
        SparseTensor3D::make_unchecked(in.coords(), std::move(out_feats), in.stride()));
    if (tape.recording()) {
        tape.record([&tape, &kernel, input, out, s = std::move(s), a = std::move(a), c, k, r,
                     n]() {
            const MatrixXd& og = tape.grad(out);
            const MatrixXd& x = tape.value(input).features();
            // through the per-channel scaling
            VectorXd da = og.cwiseProduct(x).colwise().sum().transpose();
            VectorXd dz = (da.array() * a.array() * (1.0 - a.array())).matrix();
            // through the zero-padded 1D convolution over channels
            VectorXd ds = VectorXd::Zero(c);
            for (int ch = 0; ch < c; ++ch) {
                for (int j = 0; j < k; ++j) {
                    const int src = ch + j - r;
                    if (src >= 0 && src < c) {
                        kernel.grad(j, 0) += dz(ch) * s(src);
                        ds(src) += dz(ch) * kernel.value(j, 0);
                    }
                }
            }
            MatrixXd& ig = tape.grad(input);
            ig += og * a.asDiagonal();
            ig.rowwise() += ds.transpose() / static_cast<double>(n);
        });
    }
    return out;
}

Value gem_pool(Tape& tape, Value input, Parameter& p, double eps) {
    const SparseTensor3D& in = tape.value(input);
    if (in.size() == 0) raise(Errc::empty_tensor, "gem_pool: empty input");
    if (p.value.rows() != 1 || p.value.cols() != 1)
        raise(Errc::shape_mismatch, "gem_pool: p must be a 1x1 parameter");
    const double pv = p.value(0, 0);
    const Eigen::Index n = in.size();

    MatrixXd clamped = in.features().cwiseMax(eps);
    MatrixXd powed = clamped.array().pow(pv).matrix();
    RowVectorXd s = powed.colwise().mean();
    RowVectorXd y = s.array().pow(1.0 / pv).matrix();

    MatrixXd out_feats = y;
    Value out = tape.push(SparseTensor3D::make_unchecked({Coord{0, 0, 0}},
                                                         std::move(out_feats), in.stride()));
    if (tape.recording()) {
        tape.record([&tape, &p, input, out, clamped = std::move(clamped),
                     powed = std::move(powed), s = std::move(s), y = std::move(y), pv, eps,
                     n]() {
            const RowVectorXd dy = tape.grad(out).row(0);
            // dS_c = dy_c * y_c / (p * S_c)
            RowVectorXd ds = (dy.array() * y.array() / (pv * s.array())).matrix();
            // dm[v,c] = dS_c * p * m^(p-1) / n, masked by the clamp
            const MatrixXd& x = tape.value(input).features();
            MatrixXd dm = clamped.array().pow(pv - 1.0).matrix() *
                          (ds * (pv / static_cast<double>(n))).asDiagonal();
            MatrixXd mask = (x.array() > eps).cast<double>().matrix();
            tape.grad(input) += dm.cwiseProduct(mask);
            // dy_c/dp = y_c * (-ln(S_c)/p^2 + mean_v(m^p ln m)_c / (p S_c))
            RowVectorXd mean_pow_log =
                powed.cwiseProduct(clamped.array().log().matrix()).colwise().mean();
            RowVectorXd dy_dp = (y.array() * (-s.array().log() / (pv * pv) +
                                              mean_pow_log.array() / (pv * s.array())))
                                    .matrix();
            p.grad(0, 0) += (dy.array() * dy_dp.array()).sum();
        });
    }
    return out;
}

} // namespace voxloc::ad
