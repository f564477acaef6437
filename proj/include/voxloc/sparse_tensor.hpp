#ifndef VOXLOC_SPARSE_TENSOR_HPP
#define VOXLOC_SPARSE_TENSOR_HPP

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "voxloc/coord.hpp"

namespace voxloc::ad {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// Sparse 3D feature map: a sorted list of unique voxel coordinates with one
// dense feature row per voxel. `stride` is the lattice spacing; every
// coordinate component is divisible by it.
class SparseTensor3D {
public:
    SparseTensor3D() = default;

    // Validating constructor: sorts coordinates (permuting feature rows in
    // step), rejects duplicates, off-lattice coordinates and shape mismatch.
    SparseTensor3D(std::vector<Coord> coords, MatrixXd features, int stride);

    // Trusted path for operator outputs: coords already sorted, unique and
    // on-lattice.
    static SparseTensor3D make_unchecked(std::vector<Coord> coords, MatrixXd features,
                                         int stride);

    const std::vector<Coord>& coords() const { return coords_; }
    const MatrixXd& features() const { return feats_; }
    MatrixXd& features() { return feats_; }
    int stride() const { return stride_; }
    int channels() const { return static_cast<int>(feats_.cols()); }
    Eigen::Index size() const { return static_cast<Eigen::Index>(coords_.size()); }

    // Row of `c`, or -1 when the voxel is not occupied.
    int find(const Coord& c) const;

private:
    std::vector<Coord> coords_;
    MatrixXd feats_;
    int stride_ = 1;
};

} // namespace voxloc::ad

#endif
