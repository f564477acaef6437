#ifndef VOXLOC_TEST_ORACLES_HPP
#define VOXLOC_TEST_ORACLES_HPP

// Independent reference implementations used to validate the sparse engine
// and the evaluation protocol. Deliberately written as plain nested loops
// over dense arrays; nothing here shares code with the library paths under
// test.

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "voxloc/coord.hpp"

namespace oracles {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using voxloc::Coord;

// Dense zero-padded stride-1 3D convolution over a fully occupied cube
// [0,dim)^3. Feature rows are ordered x-major (x*dim*dim + y*dim + z), which
// coincides with the sparse engine's lexicographic coordinate order for
// non-negative cubes. Weight layout: tap-major blocks of c_in rows, taps
// enumerated x-major over offsets in [-(K-1)/2, (K-1)/2].
inline MatrixXd dense_conv3d(int dim, const MatrixXd& feats, const MatrixXd& weight, int k) {
    const int c_in = static_cast<int>(feats.cols());
    const int c_out = static_cast<int>(weight.cols());
    const int r = (k - 1) / 2;
    MatrixXd out = MatrixXd::Zero(feats.rows(), c_out);
    for (int x = 0; x < dim; ++x)
        for (int y = 0; y < dim; ++y)
            for (int z = 0; z < dim; ++z) {
                const int row = (x * dim + y) * dim + z;
                int tap = 0;
                for (int dx = -r; dx <= r; ++dx)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dz = -r; dz <= r; ++dz, ++tap) {
                            const int sx = x + dx, sy = y + dy, sz = z + dz;
                            if (sx < 0 || sx >= dim || sy < 0 || sy >= dim || sz < 0 ||
                                sz >= dim)
                                continue;
                            const int src = (sx * dim + sy) * dim + sz;
                            for (int ci = 0; ci < c_in; ++ci)
                                for (int co = 0; co < c_out; ++co)
                                    out(row, co) +=
                                        feats(src, ci) * weight(tap * c_in + ci, co);
                        }
            }
    return out;
}

// Dense 2x2x2 stride-2 downsampling convolution over [0,dim)^3 (dim even).
// Output cell (X,Y,Z) covers inputs (2X+dx, 2Y+dy, 2Z+dz).
inline MatrixXd dense_conv3d_stride2(int dim, const MatrixXd& feats, const MatrixXd& weight) {
    const int c_in = static_cast<int>(feats.cols());
    const int c_out = static_cast<int>(weight.cols());
    const int odim = dim / 2;
    MatrixXd out = MatrixXd::Zero(odim * odim * odim, c_out);
    for (int x = 0; x < odim; ++x)
        for (int y = 0; y < odim; ++y)
            for (int z = 0; z < odim; ++z) {
                const int row = (x * odim + y) * odim + z;
                for (int dx = 0; dx <= 1; ++dx)
                    for (int dy = 0; dy <= 1; ++dy)
                        for (int dz = 0; dz <= 1; ++dz) {
                            const int tap = dx * 4 + dy * 2 + dz;
                            const int sx = 2 * x + dx, sy = 2 * y + dy, sz = 2 * z + dz;
                            if (sx >= dim || sy >= dim || sz >= dim) continue;
                            const int src = (sx * dim + sy) * dim + sz;
                            for (int ci = 0; ci < c_in; ++ci)
                                for (int co = 0; co < c_out; ++co)
                                    out(row, co) +=
                                        feats(src, ci) * weight(tap * c_in + ci, co);
                        }
            }
    return out;
}

// Reference batch norm: normalize with biased batch statistics, then affine.
inline MatrixXd batch_norm_reference(const MatrixXd& x, const VectorXd& gamma,
                                     const VectorXd& beta, double eps) {
    MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double mean = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) mean += x(i, c);
        mean /= static_cast<double>(x.rows());
        double var = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) var += (x(i, c) - mean) * (x(i, c) - mean);
        var /= static_cast<double>(x.rows());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            out(i, c) = gamma(c) * ((x(i, c) - mean) * inv) + beta(c);
    }
    return out;
}

// Reference ECA gate: channel means, zero-padded 1D convolution, sigmoid.
inline MatrixXd eca_reference(const MatrixXd& x, const VectorXd& kernel) {
    const int c = static_cast<int>(x.cols());
    const int k = static_cast<int>(kernel.size());
    const int r = (k - 1) / 2;
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
    for (int ch = 0; ch < c; ++ch) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) mean[static_cast<std::size_t>(ch)] += x(i, ch);
        mean[static_cast<std::size_t>(ch)] /= static_cast<double>(x.rows());
    }
    MatrixXd out(x.rows(), x.cols());
    for (int ch = 0; ch < c; ++ch) {
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            const int src = ch + j - r;
            if (src >= 0 && src < c) z += kernel(j) * mean[static_cast<std::size_t>(src)];
        }
        const double gate = 1.0 / (1.0 + std::exp(-z));
        for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, ch) = x(i, ch) * gate;
    }
    return out;
}

// Reference GeM: scalar loops, std::pow.
inline RowVectorXd gem_reference(const MatrixXd& x, double p, double eps) {
    RowVectorXd out(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            acc += std::pow(std::max(x(i, c), eps), p);
        out(c) = std::pow(acc / static_cast<double>(x.rows()), 1.0 / p);
    }
    return out;
}

// Scalar re-implementation of the truncated smooth average precision for one
// query: distances indexed by batch position, boolean relation rows.
inline double scalar_tsap(const std::vector<double>& dists, const std::vector<int>& is_pos,
                          const std::vector<int>& is_neg, int k, double tau) {
    std::vector<int> pos;
    for (std::size_t j = 0; j < dists.size(); ++j)
        if (is_pos[j]) pos.push_back(static_cast<int>(j));
    std::stable_sort(pos.begin(), pos.end(),
                     [&](int a, int b) { return dists[static_cast<std::size_t>(a)] <
                                                dists[static_cast<std::size_t>(b)]; });
    if (static_cast<int>(pos.size()) > k) pos.resize(static_cast<std::size_t>(k));

    const auto sigmoid = [&](double v) { return 1.0 / (1.0 + std::exp(-v / tau)); };
    double ap = 0.0;
    for (int i : pos) {
        double num = 1.0, den = 1.0;
        for (int j : pos)
            if (j != i)
                num += sigmoid(dists[static_cast<std::size_t>(i)] -
                               dists[static_cast<std::size_t>(j)]);
        for (std::size_t j = 0; j < dists.size(); ++j)
            if (static_cast<int>(j) != i && (is_pos[j] || is_neg[j]))
                den += sigmoid(dists[static_cast<std::size_t>(i)] - dists[j]);
        ap += num / den;
    }
    return ap / static_cast<double>(pos.size());
}

// Brute-force retrieval: full distance matrix, full sort, boolean radius
// matrix. Returns the percentage of queries whose top-n contains a record
// within `radius` meters.
struct FlatRecord {
    VectorXd descriptor;
    double easting;
    double northing;
};

inline double brute_force_recall(const std::vector<FlatRecord>& queries,
                                 const std::vector<FlatRecord>& database, int n, double radius) {
    int hits = 0;
    for (const auto& q : queries) {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t i = 0; i < database.size(); ++i)
            order.emplace_back((database[i].descriptor - q.descriptor).norm(), i);
        std::stable_sort(order.begin(), order.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), order.size());
        for (std::size_t r = 0; r < take; ++r) {
            const auto& rec = database[order[r].second];
            const double dx = rec.easting - q.easting, dy = rec.northing - q.northing;
            if (std::sqrt(dx * dx + dy * dy) <= radius) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * hits / static_cast<double>(queries.size());
}

} // namespace oracles

#endif
