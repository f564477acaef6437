#include "voxloc/sparse_tensor.hpp"

#include <algorithm>
#include <numeric>

#include "voxloc/error.hpp"

namespace voxloc::ad {

SparseTensor3D::SparseTensor3D(std::vector<Coord> coords, MatrixXd features, int stride) {
    if (stride < 1 || (stride & (stride - 1)) != 0)
        raise(Errc::stride_violation, "sparse tensor: stride must be a positive power of two");
    if (static_cast<Eigen::Index>(coords.size()) != features.rows())
        raise(Errc::shape_mismatch, "sparse tensor: feature rows != coordinate count");
    for (const Coord& c : coords) {
        if (c.x % stride != 0 || c.y % stride != 0 || c.z % stride != 0)
            raise(Errc::stride_violation, "sparse tensor: coordinate off the stride lattice");
    }

    std::vector<std::size_t> perm(coords.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::sort(perm.begin(), perm.end(),
              [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });

    coords_.resize(coords.size());
    feats_.resize(features.rows(), features.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        coords_[i] = coords[perm[i]];
        feats_.row(static_cast<Eigen::Index>(i)) =
            features.row(static_cast<Eigen::Index>(perm[i]));
    }
    for (std::size_t i = 1; i < coords_.size(); ++i) {
        if (coords_[i] == coords_[i - 1])
            raise(Errc::shape_mismatch, "sparse tensor: duplicate coordinate");
    }
    stride_ = stride;
}

SparseTensor3D SparseTensor3D::make_unchecked(std::vector<Coord> coords, MatrixXd features,
                                              int stride) {
    SparseTensor3D t;
    t.coords_ = std::move(coords);
    t.feats_ = std::move(features);
    t.stride_ = stride;
    return t;
}

int SparseTensor3D::find(const Coord& c) const {
    auto it = std::lower_bound(coords_.begin(), coords_.end(), c);
    if (it == coords_.end() || !(*it == c)) return -1;
    return static_cast<int>(it - coords_.begin());
}

} // namespace voxloc::ad
