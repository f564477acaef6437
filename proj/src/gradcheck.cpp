#include "voxloc/gradcheck.hpp"

#include <cmath>

#include "voxloc/error.hpp"
#include "voxloc/losses.hpp"
#include "voxloc/seeds.hpp"

namespace voxloc::check {

using ad::MatrixXd;
using ad::RowVectorXd;
using ad::SparseTensor3D;

double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-3});
    return std::abs(a - b) / scale;
}

double fd_max_rel_err(MatrixXd& storage, const MatrixXd& analytic,
                      const std::function<double()>& f, double h) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < storage.rows(); ++i) {
        for (Eigen::Index j = 0; j < storage.cols(); ++j) {
            const double saved = storage(i, j);
            storage(i, j) = saved + h;
            const double fp = f();
            storage(i, j) = saved - h;
            const double fm = f();
            storage(i, j) = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(numeric, analytic(i, j)));
        }
    }
    return worst;
}

namespace {

SparseTensor3D random_tensor(Rng& rng, int n_voxels, int channels, int stride, int coord_range) {
    std::uniform_int_distribution<int> ci(-coord_range, coord_range);
    std::vector<Coord> coords;
    while (static_cast<int>(coords.size()) < n_voxels) {
        Coord c{ci(rng) * stride, ci(rng) * stride, ci(rng) * stride};
        if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatrixXd feats(n_voxels, channels);
    for (Eigen::Index i = 0; i < feats.rows(); ++i)
        for (Eigen::Index j = 0; j < feats.cols(); ++j) feats(i, j) = gauss(rng);
    return SparseTensor3D(std::move(coords), std::move(feats), stride);
}

MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
    return m;
}

// One operator check: runs `apply` under a recording tape, seeds the output
// with a fixed probe, then finite-differences every listed parameter and the
// input features against the accumulated gradients.
struct OpCheck {
    std::string name;
    SparseTensor3D input;
    std::vector<ad::Parameter*> params;
    std::function<ad::Value(ad::Tape&, ad::Value)> apply;
};

void run_op_check(OpCheck& chk, Rng& rng, double tolerance,
                  std::vector<CheckResult>& results) {
    for (ad::Parameter* p : chk.params) p->zero_grad();

    MatrixXd analytic_input;
    MatrixXd probe;
    {
        ad::Tape tape(true);
        ad::Value x = tape.leaf(chk.input);
        ad::Value y = chk.apply(tape, x);
        probe = random_matrix(rng, tape.value(y).features().rows(),
                              tape.value(y).features().cols());
        tape.backward(y, probe);
        analytic_input = tape.grad_of(x);
    }

    const auto forward_probe = [&]() {
        ad::Tape tape(false);
        ad::Value x = tape.leaf(chk.input);
        ad::Value y = chk.apply(tape, x);
        return tape.value(y).features().cwiseProduct(probe).sum();
    };

    for (ad::Parameter* p : chk.params) {
        CheckResult r;
        r.name = chk.name + " / " + p->name;
        r.tolerance = tolerance;
        r.max_rel_err = fd_max_rel_err(p->value, p->grad, forward_probe);
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    }
    {
        // input features live inside the tensor; rebuild it around the
        // perturbed matrix on every evaluation
        MatrixXd feats = chk.input.features();
        const auto forward_with_input = [&]() {
            chk.input = SparseTensor3D::make_unchecked(chk.input.coords(), feats,
                                                       chk.input.stride());
            return forward_probe();
        };
        CheckResult r;
        r.name = chk.name + " / input";
        r.tolerance = tolerance;
        r.max_rel_err = fd_max_rel_err(feats, analytic_input, forward_with_input);
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    }
}

} // namespace

std::vector<CheckResult> operator_gradient_suite(std::uint64_t seed, double tolerance) {
    Rng rng = make_rng(derive_seed(seed, 0x6f706772));
    std::vector<CheckResult> results;

    {
        ad::Parameter w("conv_k1.weight", random_matrix(rng, 3, 4));
        OpCheck chk{"conv_k1", random_tensor(rng, 12, 3, 1, 4), {&w},
                    [&](ad::Tape& t, ad::Value x) { return ad::sparse_conv(t, x, w, 1, 1); }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        ad::Parameter w("conv_k3.weight", random_matrix(rng, 27 * 2, 3));
        OpCheck chk{"conv_k3", random_tensor(rng, 15, 2, 1, 3), {&w},
                    [&](ad::Tape& t, ad::Value x) { return ad::sparse_conv(t, x, w, 3, 1); }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        ad::Parameter w("conv_k5.weight", random_matrix(rng, 125 * 2, 2));
        OpCheck chk{"conv_k5", random_tensor(rng, 10, 2, 1, 3), {&w},
                    [&](ad::Tape& t, ad::Value x) { return ad::sparse_conv(t, x, w, 5, 1); }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        ad::Parameter w("conv_s2.weight", random_matrix(rng, 8 * 3, 3));
        OpCheck chk{"conv_stride2", random_tensor(rng, 16, 3, 1, 4), {&w},
                    [&](ad::Tape& t, ad::Value x) { return ad::sparse_conv(t, x, w, 2, 2); }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        ad::Parameter w("tconv.weight", random_matrix(rng, 8 * 3, 2));
        OpCheck chk{"transposed_conv", random_tensor(rng, 8, 3, 2, 3), {&w},
                    [&](ad::Tape& t, ad::Value x) {
                        return ad::sparse_transposed_conv(t, x, w);
                    }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        // second operand held as a constant leaf; its gradient flows through
        // the same closure, checked via the first operand
        SparseTensor3D other = random_tensor(rng, 10, 3, 1, 3);
        OpCheck chk{"sparse_add", random_tensor(rng, 10, 3, 1, 3), {},
                    [other](ad::Tape& t, ad::Value x) {
                        ad::Value b = t.leaf(other);
                        return ad::sparse_add(t, x, b);
                    }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        // keep features away from the kink at zero
        SparseTensor3D input = random_tensor(rng, 12, 3, 1, 3);
        MatrixXd f = input.features();
        for (Eigen::Index i = 0; i < f.rows(); ++i)
            for (Eigen::Index j = 0; j < f.cols(); ++j)
                if (std::abs(f(i, j)) < 0.05) f(i, j) = 0.1;
        input = SparseTensor3D::make_unchecked(input.coords(), f, input.stride());
        OpCheck chk{"relu", std::move(input), {},
                    [](ad::Tape& t, ad::Value x) { return ad::relu(t, x); }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        ad::Parameter gamma("bn.gamma", random_matrix(rng, 4, 1));
        ad::Parameter beta("bn.beta", random_matrix(rng, 4, 1));
        auto state = std::make_shared<ad::BnState>(
            ad::BnState{ad::VectorXd::Zero(4), ad::VectorXd::Ones(4)});
        OpCheck chk{"batch_norm_train", random_tensor(rng, 10, 4, 1, 3), {&gamma, &beta},
                    [&gamma, &beta, state](ad::Tape& t, ad::Value x) {
                        return ad::batch_norm(t, x, gamma, beta, *state, ad::BnMode::train);
                    }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        ad::Parameter gamma("bn.gamma", random_matrix(rng, 4, 1));
        ad::Parameter beta("bn.beta", random_matrix(rng, 4, 1));
        auto state = std::make_shared<ad::BnState>(
            ad::BnState{ad::VectorXd::Zero(4), ad::VectorXd::Ones(4)});
        state->running_mean = random_matrix(rng, 4, 1).col(0);
        state->running_var = (random_matrix(rng, 4, 1).col(0).cwiseAbs().array() + 0.5).matrix();
        OpCheck chk{"batch_norm_eval", random_tensor(rng, 10, 4, 1, 3), {&gamma, &beta},
                    [&gamma, &beta, state](ad::Tape& t, ad::Value x) {
                        return ad::batch_norm(t, x, gamma, beta, *state, ad::BnMode::eval);
                    }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        MatrixXd k(3, 1);
        k << 0.4, -0.3, 0.6;
        ad::Parameter kernel("eca.kernel", k);
        OpCheck chk{"eca", random_tensor(rng, 10, 8, 1, 3), {&kernel},
                    [&kernel](ad::Tape& t, ad::Value x) { return ad::eca(t, x, kernel); }};
        run_op_check(chk, rng, tolerance, results);
    }
    {
        // mix of clearly-positive and clearly-negative features so both
        // clamp branches are exercised away from the boundary
        SparseTensor3D input = random_tensor(rng, 12, 4, 1, 3);
        MatrixXd f = input.features();
        for (Eigen::Index i = 0; i < f.rows(); ++i)
            for (Eigen::Index j = 0; j < f.cols(); ++j)
                if (std::abs(f(i, j)) < 0.05) f(i, j) = 0.5;
        input = SparseTensor3D::make_unchecked(input.coords(), f, input.stride());
        ad::Parameter p("gem.p", MatrixXd::Constant(1, 1, 2.7));
        OpCheck chk{"gem_pool", std::move(input), {&p},
                    [&p](ad::Tape& t, ad::Value x) { return ad::gem_pool(t, x, p); }};
        run_op_check(chk, rng, tolerance, results);
    }

    return results;
}

std::vector<CheckResult> network_gradient_suite(std::uint64_t seed, double tolerance,
                                                const net::NetworkConfig& cfg) {
    Rng rng = make_rng(derive_seed(seed, 0x6e657467));
    net::Model model = net::build(cfg, seed);

    // four separated voxel clusters with distinct local shapes: every
    // pyramid level keeps at least two active voxels and a nonzero
    // batch-norm variance
    geom::VoxelizedCloud cloud;
    cloud.step = cfg.quantization_step;
    const auto cluster = [&](Coord base, std::initializer_list<Coord> offsets) {
        for (const Coord& o : offsets)
            cloud.coords.push_back({base.x + o.x, base.y + o.y, base.z + o.z});
    };
    cluster({-64, -64, -64}, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
    cluster({-64, 64, 16}, {{0, 0, 0}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1}});
    cluster({64, -64, 0}, {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}, {0, 0, 2}, {2, 2, 0}});
    cluster({64, 64, 64}, {{0, 0, 0}, {3, 1, 0}, {1, 3, 2}, {2, 2, 2}, {0, 3, 3}, {3, 3, 3}});
    std::sort(cloud.coords.begin(), cloud.coords.end());

    RowVectorXd probe = random_matrix(rng, 1, cfg.descriptor_dim).row(0);
    model.zero_grad();
    {
        ad::Tape tape(true);
        ad::Value v = net::forward(model, cloud, net::Mode::train, tape);
        tape.backward(v, probe);
    }
    const auto forward_probe = [&]() {
        ad::Tape tape(false);
        ad::Value v = net::forward(model, cloud, net::Mode::train, tape);
        return tape.value(v).features().row(0).cwiseProduct(probe).sum();
    };

    std::vector<CheckResult> results;
    for (auto& [name, param] : model.params) {
        CheckResult r;
        r.name = "network / " + name;
        r.tolerance = tolerance;
        MatrixXd analytic = param.grad;
        r.max_rel_err = fd_max_rel_err(param.value, analytic, forward_probe);
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    }
    return results;
}

std::vector<CheckResult> loss_gradient_suite(std::uint64_t seed, double tolerance) {
    Rng rng = make_rng(derive_seed(seed, 0x6c6f7373));
    const Eigen::Index m = 8, dim = 5;
    MatrixXd descriptors = 0.3 * random_matrix(rng, m, dim);

    loss::BatchRelations rel;
    rel.positive = loss::BoolMatrix::Constant(m, m, false);
    rel.negative = loss::BoolMatrix::Constant(m, m, false);
    const auto set_pos = [&](Eigen::Index a, Eigen::Index b) {
        rel.positive(a, b) = rel.positive(b, a) = true;
    };
    set_pos(0, 1);
    set_pos(0, 2);
    set_pos(1, 2);
    set_pos(3, 4);
    set_pos(3, 5);
    set_pos(4, 5);
    set_pos(6, 7);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j)
            if (!rel.positive(i, j)) rel.negative(i, j) = rel.negative(j, i) = true;
    // a couple of indeterminate pairs, excluded from both masks
    rel.negative(2, 3) = rel.negative(3, 2) = false;
    rel.negative(0, 6) = rel.negative(6, 0) = false;
    rel.validate();

    std::vector<CheckResult> results;
    {
        loss::LossConfig cfg;
        cfg.tau = 0.05;
        cfg.k = 2;
        loss::LossResult res = loss::tsap_loss(descriptors, rel, cfg);
        CheckResult r;
        r.name = "tsap_loss";
        r.tolerance = tolerance;
        r.max_rel_err = fd_max_rel_err(
            descriptors, res.grad,
            [&]() { return loss::tsap_loss(descriptors, rel, cfg).loss; });
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    }
    {
        const double margin = 0.4;
        loss::LossResult res = loss::triplet_loss_batch_hard(descriptors, rel, margin);
        CheckResult r;
        r.name = "triplet_loss";
        r.tolerance = tolerance;
        r.max_rel_err = fd_max_rel_err(descriptors, res.grad, [&]() {
            return loss::triplet_loss_batch_hard(descriptors, rel, margin).loss;
        });
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    }
    return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

} // namespace voxloc::check
