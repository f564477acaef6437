#include "voxloc/tape.hpp"

#include "voxloc/error.hpp"

namespace voxloc::ad {

std::atomic<int> Tape::live_count_{0};
std::atomic<int> Tape::peak_count_{0};

Tape::Tape(bool recording) : recording_(recording) {
    if (recording_) {
        int live = live_count_.fetch_add(1) + 1;
        int peak = peak_count_.load();
        while (live > peak && !peak_count_.compare_exchange_weak(peak, live)) {
        }
    }
}

Tape::~Tape() {
    if (recording_) live_count_.fetch_sub(1);
}

Value Tape::leaf(SparseTensor3D v) { return push(std::move(v)); }

Value Tape::push(SparseTensor3D out) {
    values_.push_back(std::move(out));
    grads_.emplace_back();
    return Value{static_cast<int>(values_.size()) - 1};
}

void Tape::check_value(Value v, const char* op) const {
    if (v.id < 0 || v.id >= static_cast<int>(values_.size()))
        raise(Errc::incomplete_tape, std::string(op) + ": value does not belong to this tape");
}

const SparseTensor3D& Tape::value(Value v) const {
    check_value(v, "tape.value");
    return values_[static_cast<std::size_t>(v.id)];
}

MatrixXd& Tape::grad(Value v) {
    check_value(v, "tape.grad");
    auto& g = grads_[static_cast<std::size_t>(v.id)];
    const auto& t = values_[static_cast<std::size_t>(v.id)];
    if (g.rows() != t.features().rows() || g.cols() != t.features().cols())
        g = MatrixXd::Zero(t.features().rows(), t.features().cols());
    return g;
}

const MatrixXd& Tape::grad_of(Value v) const {
    check_value(v, "tape.grad_of");
    return grads_[static_cast<std::size_t>(v.id)];
}

void Tape::record(std::function<void()> fn) {
    if (recording_) backward_ops_.push_back(std::move(fn));
}

void Tape::backward(Value seed, const MatrixXd& seed_grad) {
    backward_multi({{seed, seed_grad}});
}

void Tape::backward_multi(const std::vector<std::pair<Value, MatrixXd>>& seeds) {
    if (!recording_)
        raise(Errc::incomplete_tape, "backward: tape was not recording");
    if (consumed_)
        raise(Errc::incomplete_tape, "backward: tape already consumed");
    if (seeds.empty())
        raise(Errc::incomplete_tape, "backward: no seed");
    for (const auto& [v, g] : seeds) {
        check_value(v, "backward");
        const auto& feats = value(v).features();
        if (g.rows() != feats.rows() || g.cols() != feats.cols())
            raise(Errc::shape_mismatch, "backward: seed gradient shape mismatch");
        grad(v) += g;
    }
    for (auto it = backward_ops_.rbegin(); it != backward_ops_.rend(); ++it) (*it)();
    consumed_ = true;
}

int Tape::live_recording() { return live_count_.load(); }
int Tape::peak_recording() { return peak_count_.load(); }
void Tape::reset_peak() { peak_count_.store(live_count_.load()); }

} // namespace voxloc::ad
