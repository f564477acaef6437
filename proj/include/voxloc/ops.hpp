#ifndef VOXLOC_OPS_HPP
#define VOXLOC_OPS_HPP

#include "voxloc/tape.hpp"

namespace voxloc::ad {

// Differentiable sparse operators. Each takes input value handles plus
// parameters, computes the output onto the tape, and (when the tape is
// recording) appends the matching backward closure.
//
// Convolution weights are (K^3 * C_in) x C_out matrices. Tap t covers rows
// [t*C_in, (t+1)*C_in) and corresponds to the kernel offset enumerated
// x-major: t = ((dx-lo)*K + (dy-lo))*K + (dz-lo), where lo = -(K-1)/2 for
// odd K and lo = 0 for the 2x2x2 stride-2 kernels.

// Stride factor 1 (odd K) preserves the input coordinate set; factor 2
// (K = 2) emits the unique downsampled cells and doubles the stride.
Value sparse_conv(Tape& tape, Value input, Parameter& weight, int kernel_size,
                  int out_stride_factor);

// 2x2x2 stride-2 transposed convolution: halves the stride and generates all
// 8 child coordinates of every input voxel.
Value sparse_transposed_conv(Tape& tape, Value input, Parameter& weight);

// Union of coordinate sets; features summed where they coincide.
Value sparse_add(Tape& tape, Value a, Value b);

Value relu(Tape& tape, Value input);

enum class BnMode {
    train,        // batch statistics, running stats untouched
    train_update, // batch statistics, running stats updated
    eval,         // running statistics
};

struct BnState {
    VectorXd running_mean;
    VectorXd running_var;
};

Value batch_norm(Tape& tape, Value input, Parameter& gamma, Parameter& beta, BnState& state,
                 BnMode mode, double eps = 1e-5, double momentum = 0.1);

// Efficient channel attention: per-channel gate from the voxel-mean channel
// vector passed through a zero-padded 1D convolution and a sigmoid.
Value eca(Tape& tape, Value input, Parameter& kernel);

// Generalized-mean pooling over voxels; the result is a single-row tensor at
// coordinate (0,0,0) holding the descriptor. `p` is a learnable 1x1 matrix.
Value gem_pool(Tape& tape, Value input, Parameter& p, double eps = 1e-6);

inline RowVectorXd pooled_row(const Tape& tape, Value v) {
    return tape.value(v).features().row(0);
}

} // namespace voxloc::ad

#endif
