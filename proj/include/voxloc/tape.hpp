#ifndef VOXLOC_TAPE_HPP
#define VOXLOC_TAPE_HPP

#include <atomic>
#include <functional>
#include <string>
#include <vector>

#include "voxloc/sparse_tensor.hpp"

namespace voxloc::ad {

// Learnable weight array with its gradient accumulator. Convolution weights
// are stored as (K^3 * C_in) x C_out with tap-major row blocks; vectors
// (batch-norm affine, ECA kernel) are column matrices; scalars are 1x1.
struct Parameter {
    std::string name;
    MatrixXd value;
    MatrixXd grad;

    Parameter() = default;
    Parameter(std::string n, MatrixXd v)
        : name(std::move(n)), value(std::move(v)), grad(MatrixXd::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

// Handle to a value stored on a tape.
struct Value {
    int id = -1;
};

// Append-only record of one forward pass. Operators store their output on
// the tape and, when the tape is recording, append a closure that routes the
// output gradient to input values and parameters. backward() replays the
// closures in exact reverse order and may be invoked once per tape.
//
// Non-recording tapes hold forward values only (inference, and the
// gradient-free first stage of multistaged training); they never appear in
// the live-tape instrumentation below.
class Tape {
public:
    explicit Tape(bool recording = true);
    ~Tape();

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }

    Value leaf(SparseTensor3D v);

    const SparseTensor3D& value(Value v) const;

    // Gradient buffer of `v`, allocated (zeroed) on first access.
    MatrixXd& grad(Value v);
    const MatrixXd& grad_of(Value v) const;

    // Operator support.
    Value push(SparseTensor3D out);
    void record(std::function<void()> fn);

    void backward(Value seed, const MatrixXd& seed_grad);
    void backward_multi(const std::vector<std::pair<Value, MatrixXd>>& seeds);

    std::size_t node_count() const { return backward_ops_.size(); }

    // Instrumentation: number of recording tapes currently alive, and the
    // high-water mark since the last reset. The multistage trainer's memory
    // contract is asserted against the peak.
    static int live_recording();
    static int peak_recording();
    static void reset_peak();

private:
    void check_value(Value v, const char* op) const;

    bool recording_;
    bool consumed_ = false;
    std::vector<SparseTensor3D> values_;
    std::vector<MatrixXd> grads_;
    std::vector<std::function<void()>> backward_ops_;

    static std::atomic<int> live_count_;
    static std::atomic<int> peak_count_;
};

} // namespace voxloc::ad

#endif
