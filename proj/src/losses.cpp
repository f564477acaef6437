#include "voxloc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "voxloc/error.hpp"

namespace voxloc::loss {

namespace {

thread_local TsapProbe g_probe;

constexpr double kDistFloor = 1e-12;

// Distances from descriptor row q to every other row.
VectorXd distances_from(const MatrixXd& descriptors, Eigen::Index q) {
    VectorXd d(descriptors.rows());
    for (Eigen::Index j = 0; j < descriptors.rows(); ++j)
        d(j) = (descriptors.row(q) - descriptors.row(j)).norm();
    return d;
}

// Indices of the min(k, #positives) positives closest to q; ties broken by
// batch index (the sort is stable over an index-ordered range).
std::vector<Eigen::Index> topk_positives(Eigen::Index q, const VectorXd& dists,
                                         const BatchRelations& rel, int k) {
    std::vector<Eigen::Index> pos;
    for (Eigen::Index j = 0; j < rel.size(); ++j)
        if (rel.positive(q, j)) pos.push_back(j);
    std::stable_sort(pos.begin(), pos.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return dists(a) < dists(b); });
    if (static_cast<int>(pos.size()) > k) pos.resize(static_cast<std::size_t>(k));
    return pos;
}

std::vector<Eigen::Index> omega_of(Eigen::Index q, const BatchRelations& rel) {
    std::vector<Eigen::Index> omega;
    for (Eigen::Index j = 0; j < rel.size(); ++j)
        if (rel.positive(q, j) || rel.negative(q, j)) omega.push_back(j);
    return omega;
}

} // namespace

void BatchRelations::validate() const {
    if (positive.rows() != positive.cols() || negative.rows() != negative.cols() ||
        positive.rows() != negative.rows())
        raise(Errc::shape_mismatch, "relations: masks must be square and equally sized");
    for (Eigen::Index i = 0; i < positive.rows(); ++i) {
        if (positive(i, i) || negative(i, i))
            raise(Errc::shape_mismatch, "relations: diagonal must be false");
        for (Eigen::Index j = 0; j < positive.cols(); ++j) {
            if (positive(i, j) != positive(j, i) || negative(i, j) != negative(j, i))
                raise(Errc::shape_mismatch, "relations: masks must be symmetric");
            if (positive(i, j) && negative(i, j))
                raise(Errc::shape_mismatch, "relations: pair marked both positive and negative");
        }
    }
}

double sigmoid_indicator(double x, double tau) {
    if (tau <= 0.0) raise(Errc::out_of_range, "sigmoid_indicator: tau must be positive");
    const double t = x / tau;
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double truncated_smooth_ap(Eigen::Index q, const VectorXd& dists, const BatchRelations& rel,
                           const LossConfig& cfg) {
    const auto p_set = topk_positives(q, dists, rel, cfg.k);
    if (p_set.empty()) raise(Errc::no_positives, "truncated_smooth_ap: query has no positives");
    const auto omega = omega_of(q, rel);

    double ap = 0.0;
    for (Eigen::Index i : p_set) {
        double num = 1.0, den = 1.0;
        for (Eigen::Index j : p_set)
            if (j != i) num += sigmoid_indicator(dists(i) - dists(j), cfg.tau);
        for (Eigen::Index j : omega)
            if (j != i) den += sigmoid_indicator(dists(i) - dists(j), cfg.tau);
        ap += num / den;
    }
    return ap / static_cast<double>(p_set.size());
}

double hard_truncated_ap(Eigen::Index q, const VectorXd& dists, const BatchRelations& rel,
                         int k) {
    const auto p_set = topk_positives(q, dists, rel, k);
    if (p_set.empty()) raise(Errc::no_positives, "hard_truncated_ap: query has no positives");
    const auto omega = omega_of(q, rel);

    double ap = 0.0;
    for (Eigen::Index i : p_set) {
        double num = 1.0, den = 1.0;
        for (Eigen::Index j : p_set)
            if (j != i && dists(i) - dists(j) > 0.0) num += 1.0;
        for (Eigen::Index j : omega)
            if (j != i && dists(i) - dists(j) > 0.0) den += 1.0;
        ap += num / den;
    }
    return ap / static_cast<double>(p_set.size());
}

LossResult tsap_loss(const MatrixXd& descriptors, const BatchRelations& rel,
                     const LossConfig& cfg) {
    const Eigen::Index m = descriptors.rows();
    if (m < 2) raise(Errc::shape_mismatch, "tsap_loss: batch must contain at least 2 elements");
    if (rel.size() != m) raise(Errc::shape_mismatch, "tsap_loss: relations size != batch size");
    if (cfg.tau <= 0.0 || cfg.k < 1) raise(Errc::out_of_range, "tsap_loss: invalid config");

    g_probe = TsapProbe{};

    // first pass: which queries participate
    Eigen::Index n_valid = 0;
    for (Eigen::Index q = 0; q < m; ++q)
        if ((rel.positive.row(q).cast<int>().sum()) > 0) ++n_valid;
    if (n_valid == 0) raise(Errc::no_valid_queries, "tsap_loss: no query has a positive");

    LossResult out;
    out.grad = MatrixXd::Zero(m, descriptors.cols());
    double total = 0.0;

    VectorXd dd = VectorXd::Zero(m); // d loss / d dists for the current query
    for (Eigen::Index q = 0; q < m; ++q) {
        const VectorXd dists = distances_from(descriptors, q);
        const auto p_set = topk_positives(q, dists, rel, cfg.k);
        if (p_set.empty()) continue;
        const auto omega = omega_of(q, rel);
        const auto a = static_cast<Eigen::Index>(p_set.size());
        const auto b = static_cast<Eigen::Index>(omega.size());
        g_probe.max_rows = std::max(g_probe.max_rows, a);
        g_probe.max_cols = std::max(g_probe.max_cols, b);

        // position of each top-k positive inside omega, and omega membership in P
        std::vector<Eigen::Index> p_in_omega(static_cast<std::size_t>(a));
        std::vector<bool> omega_in_p(static_cast<std::size_t>(b), false);
        for (Eigen::Index ii = 0; ii < a; ++ii) {
            auto it = std::lower_bound(omega.begin(), omega.end(), p_set[static_cast<std::size_t>(ii)]);
            p_in_omega[static_cast<std::size_t>(ii)] = it - omega.begin();
            omega_in_p[static_cast<std::size_t>(it - omega.begin())] = true;
        }

        // the k x |omega| sigmoid matrix — the only per-query quadratic object
        MatrixXd g(a, b);
        for (Eigen::Index ii = 0; ii < a; ++ii)
            for (Eigen::Index jj = 0; jj < b; ++jj)
                g(ii, jj) = sigmoid_indicator(
                    dists(p_set[static_cast<std::size_t>(ii)]) -
                        dists(omega[static_cast<std::size_t>(jj)]),
                    cfg.tau);

        VectorXd num = VectorXd::Ones(a), den = VectorXd::Ones(a);
        for (Eigen::Index ii = 0; ii < a; ++ii) {
            for (Eigen::Index jj = 0; jj < a; ++jj)
                if (jj != ii) num(ii) += g(ii, p_in_omega[static_cast<std::size_t>(jj)]);
            den(ii) += g.row(ii).sum() - g(ii, p_in_omega[static_cast<std::size_t>(ii)]);
        }
        const double ap = (num.array() / den.array()).mean();
        total += 1.0 - ap;

        // backward through AP_q
        dd.setZero();
        const double inv_a = 1.0 / static_cast<double>(a);
        for (Eigen::Index ii = 0; ii < a; ++ii) {
            const double d_num = inv_a / den(ii);
            const double d_den = -inv_a * num(ii) / (den(ii) * den(ii));
            for (Eigen::Index jj = 0; jj < b; ++jj) {
                if (jj == p_in_omega[static_cast<std::size_t>(ii)]) continue;
                double w = d_den;
                if (omega_in_p[static_cast<std::size_t>(jj)]) w += d_num;
                const double gp = g(ii, jj) * (1.0 - g(ii, jj)) / cfg.tau;
                const double c = w * gp;
                dd(p_set[static_cast<std::size_t>(ii)]) += c;
                dd(omega[static_cast<std::size_t>(jj)]) -= c;
            }
        }
        // loss contribution is (1 - AP_q) / n_valid
        const double scale = -1.0 / static_cast<double>(n_valid);
        for (Eigen::Index j = 0; j < m; ++j) {
            if (dd(j) == 0.0 || j == q) continue;
            const double denom = std::max(dists(j), kDistFloor);
            Eigen::RowVectorXd u = (descriptors.row(q) - descriptors.row(j)) / denom;
            out.grad.row(q) += scale * dd(j) * u;
            out.grad.row(j) -= scale * dd(j) * u;
        }
    }

    out.loss = total / static_cast<double>(n_valid);
    return out;
}

LossResult triplet_loss_batch_hard(const MatrixXd& descriptors, const BatchRelations& rel,
                                   double margin) {
    const Eigen::Index m = descriptors.rows();
    if (rel.size() != m)
        raise(Errc::shape_mismatch, "triplet_loss: relations size != batch size");

    LossResult out;
    out.grad = MatrixXd::Zero(m, descriptors.cols());

    struct Active {
        Eigen::Index a, p, n;
        double d_ap, d_an;
    };
    std::vector<Active> active;
    Eigen::Index n_valid = 0;
    double total = 0.0;

    for (Eigen::Index anchor = 0; anchor < m; ++anchor) {
        const VectorXd dists = distances_from(descriptors, anchor);
        Eigen::Index hardest_pos = -1, hardest_neg = -1;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (rel.positive(anchor, j) &&
                (hardest_pos < 0 || dists(j) > dists(hardest_pos)))
                hardest_pos = j;
            if (rel.negative(anchor, j) &&
                (hardest_neg < 0 || dists(j) < dists(hardest_neg)))
                hardest_neg = j;
        }
        if (hardest_pos < 0 || hardest_neg < 0) continue;
        ++n_valid;
        const double l = dists(hardest_pos) - dists(hardest_neg) + margin;
        if (l > 0.0) {
            total += l;
            active.push_back({anchor, hardest_pos, hardest_neg, dists(hardest_pos),
                              dists(hardest_neg)});
        }
    }
    if (n_valid == 0)
        raise(Errc::no_valid_anchors, "triplet_loss: no anchor has both a positive and a negative");

    const double inv = 1.0 / static_cast<double>(n_valid);
    for (const Active& t : active) {
        Eigen::RowVectorXd u_ap = (descriptors.row(t.a) - descriptors.row(t.p)) /
                                  std::max(t.d_ap, kDistFloor);
        Eigen::RowVectorXd u_an = (descriptors.row(t.a) - descriptors.row(t.n)) /
                                  std::max(t.d_an, kDistFloor);
        out.grad.row(t.a) += inv * (u_ap - u_an);
        out.grad.row(t.p) -= inv * u_ap;
        out.grad.row(t.n) += inv * u_an;
    }
    out.loss = total * inv;
    return out;
}

TsapProbe tsap_last_probe() { return g_probe; }

} // namespace voxloc::loss
