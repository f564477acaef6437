#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "voxloc/error.hpp"
#include "voxloc/gradcheck.hpp"
#include "voxloc/losses.hpp"
#include "voxloc/seeds.hpp"

using namespace voxloc;
using loss::BatchRelations;
using loss::BoolMatrix;
using loss::LossConfig;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

BatchRelations empty_relations(Eigen::Index m) {
    BatchRelations rel;
    rel.positive = BoolMatrix::Constant(m, m, false);
    rel.negative = BoolMatrix::Constant(m, m, false);
    return rel;
}

void set_pos(BatchRelations& rel, Eigen::Index a, Eigen::Index b) {
    rel.positive(a, b) = rel.positive(b, a) = true;
}

void set_neg(BatchRelations& rel, Eigen::Index a, Eigen::Index b) {
    rel.negative(a, b) = rel.negative(b, a) = true;
}

// two well-separated clusters of `per` elements each, in 2-D
MatrixXd cluster_descriptors(Eigen::Index per, double gap) {
    MatrixXd d(2 * per, 2);
    for (Eigen::Index i = 0; i < per; ++i) {
        d.row(i) << 0.001 * static_cast<double>(i), 0.0;
        d.row(per + i) << gap + 0.001 * static_cast<double>(i), 0.0;
    }
    return d;
}

BatchRelations cluster_relations(Eigen::Index per) {
    BatchRelations rel = empty_relations(2 * per);
    for (Eigen::Index i = 0; i < per; ++i)
        for (Eigen::Index j = i + 1; j < per; ++j) {
            set_pos(rel, i, j);
            set_pos(rel, per + i, per + j);
        }
    for (Eigen::Index i = 0; i < per; ++i)
        for (Eigen::Index j = 0; j < per; ++j) set_neg(rel, i, per + j);
    return rel;
}

} // namespace

TEST_CASE("sigmoid indicator basics") {
    CHECK(loss::sigmoid_indicator(0.0, 0.01) == 0.5);
    CHECK(loss::sigmoid_indicator(-0.8, 0.01) < 1e-30);
    CHECK(loss::sigmoid_indicator(0.01, 0.01) ==
          doctest::Approx(0.7310585786300049).epsilon(1e-12));
    // stable at extreme arguments
    CHECK(std::isfinite(loss::sigmoid_indicator(100.0, 0.01)));
    CHECK(std::isfinite(loss::sigmoid_indicator(-100.0, 0.01)));
    CHECK(loss::sigmoid_indicator(100.0, 0.01) == 1.0);
    CHECK(loss::sigmoid_indicator(-100.0, 0.01) == 0.0);
    // monotone
    Rng rng = make_rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double a = u(rng), b = u(rng);
        if (a < b)
            CHECK(loss::sigmoid_indicator(a, 0.05) <= loss::sigmoid_indicator(b, 0.05));
    }
}

TEST_CASE("truncated smooth AP: single positive ranked first") {
    // query 0; positive 1 at d=0.2; negatives 2,3 at d=0.8, 0.9
    BatchRelations rel = empty_relations(4);
    set_pos(rel, 0, 1);
    set_neg(rel, 0, 2);
    set_neg(rel, 0, 3);
    VectorXd dists(4);
    dists << 0.0, 0.2, 0.8, 0.9;
    LossConfig cfg; // tau 0.01, k 4
    const double ap = loss::truncated_smooth_ap(0, dists, rel, cfg);
    CHECK(ap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("truncated smooth AP: single positive ranked last") {
    BatchRelations rel = empty_relations(4);
    set_pos(rel, 0, 1);
    set_neg(rel, 0, 2);
    set_neg(rel, 0, 3);
    VectorXd dists(4);
    dists << 0.0, 0.9, 0.2, 0.3;
    LossConfig cfg;
    const double ap = loss::truncated_smooth_ap(0, dists, rel, cfg);
    const double expected =
        1.0 / (1.0 + loss::sigmoid_indicator(0.7, 0.01) + loss::sigmoid_indicator(0.6, 0.01));
    CHECK(ap == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ap == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("truncated smooth AP: two positives and no negatives") {
    BatchRelations rel = empty_relations(3);
    set_pos(rel, 0, 1);
    set_pos(rel, 0, 2);
    VectorXd dists(3);
    dists << 0.0, 0.1, 0.2;
    LossConfig cfg;
    const double ap = loss::truncated_smooth_ap(0, dists, rel, cfg);
    CHECK(ap == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("truncated smooth AP requires a positive") {
    BatchRelations rel = empty_relations(3);
    set_neg(rel, 0, 1);
    set_neg(rel, 0, 2);
    VectorXd dists(3);
    dists << 0.0, 0.1, 0.2;
    LossConfig cfg;
    try {
        loss::truncated_smooth_ap(0, dists, rel, cfg);
        FAIL("expected NoPositives");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::no_positives);
    }
}

TEST_CASE("hard truncated AP rank formulas") {
    // positive ranked first
    BatchRelations rel = empty_relations(4);
    set_pos(rel, 0, 1);
    set_neg(rel, 0, 2);
    set_neg(rel, 0, 3);
    VectorXd dists(4);
    dists << 0.0, 0.1, 0.5, 0.9;
    CHECK(loss::hard_truncated_ap(0, dists, rel, 4) == 1.0);

    // single positive with r negatives strictly closer -> 1 / (1 + r)
    for (int r = 1; r <= 2; ++r) {
        VectorXd d(4);
        d << 0.0, 0.5, (r >= 1 ? 0.1 : 0.8), (r >= 2 ? 0.2 : 0.8);
        CHECK(loss::hard_truncated_ap(0, d, rel, 4) ==
              doctest::Approx(1.0 / (1.0 + r)).epsilon(1e-12));
    }
}

TEST_CASE("smooth AP converges to the hard oracle at small temperature") {
    // 1000 random instances with all pairwise gaps > 10 * tau at tau = 1e-4
    Rng rng = make_rng(99);
    std::uniform_int_distribution<int> m_dist(4, 10);
    LossConfig cfg;
    cfg.tau = 1e-4;
    cfg.k = 4;
    int checked = 0;
    while (checked < 1000) {
        const Eigen::Index m = m_dist(rng);
        // distances on a jittered grid with spacing 0.01 >> 10 * tau
        VectorXd dists(m);
        std::vector<int> slots(static_cast<std::size_t>(m));
        std::iota(slots.begin(), slots.end(), 1);
        std::shuffle(slots.begin(), slots.end(), rng);
        std::uniform_real_distribution<double> jit(0.0, 0.002);
        for (Eigen::Index i = 0; i < m; ++i)
            dists(i) = 0.01 * slots[static_cast<std::size_t>(i)] + jit(rng);

        BatchRelations rel = empty_relations(m);
        std::uniform_int_distribution<int> coin(0, 2);
        bool has_pos = false;
        for (Eigen::Index j = 1; j < m; ++j) {
            const int c = coin(rng);
            if (c == 0) {
                set_pos(rel, 0, j);
                has_pos = true;
            } else if (c == 1) {
                set_neg(rel, 0, j);
            } // else: excluded from omega
        }
        if (!has_pos) continue;
        const double smooth = loss::truncated_smooth_ap(0, dists, rel, cfg);
        const double hard = loss::hard_truncated_ap(0, dists, rel, cfg.k);
        CHECK(std::abs(smooth - hard) < 1e-3);
        ++checked;
    }
}

TEST_CASE("AP stays in (0, 1] under fuzzing") {
    Rng rng = make_rng(123);
    std::uniform_int_distribution<int> m_dist(3, 12);
    std::uniform_real_distribution<double> d_dist(0.0, 2.0);
    std::uniform_int_distribution<int> coin(0, 2);
    std::uniform_int_distribution<int> k_dist(1, 6);
    for (int iter = 0; iter < 20000; ++iter) {
        const Eigen::Index m = m_dist(rng);
        VectorXd dists(m);
        for (Eigen::Index i = 0; i < m; ++i) dists(i) = d_dist(rng);
        BatchRelations rel = empty_relations(m);
        bool has_pos = false;
        for (Eigen::Index j = 1; j < m; ++j) {
            const int c = coin(rng);
            if (c == 0) {
                set_pos(rel, 0, j);
                has_pos = true;
            } else if (c == 1) {
                set_neg(rel, 0, j);
            }
        }
        if (!has_pos) continue;
        LossConfig cfg;
        cfg.k = k_dist(rng);
        cfg.tau = 0.01;
        const double ap = loss::truncated_smooth_ap(0, dists, rel, cfg);
        CHECK(ap > 0.0);
        CHECK(ap <= 1.0);
    }
}

TEST_CASE("tsap loss on perfectly separated clusters is near zero") {
    MatrixXd d = cluster_descriptors(3, 10.0);
    BatchRelations rel = cluster_relations(3);
    LossConfig cfg; // tau 0.01
    auto res = loss::tsap_loss(d, rel, cfg);
    CHECK(res.loss < 1e-6);
    CHECK(res.grad.cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("tsap loss matches an independent scalar oracle") {
    // hand-placed 2-D descriptors, m = 4
    MatrixXd d(4, 2);
    d << 0.00, 0.00,
         0.30, 0.10,
         0.90, -0.20,
         1.20, 0.50;
    BatchRelations rel = empty_relations(4);
    set_pos(rel, 0, 1);
    set_pos(rel, 2, 3);
    set_neg(rel, 0, 2);
    set_neg(rel, 0, 3);
    set_neg(rel, 1, 2);
    set_neg(rel, 1, 3);
    LossConfig cfg;
    cfg.tau = 0.05;
    cfg.k = 4;
    auto res = loss::tsap_loss(d, rel, cfg);

    double expected = 0.0;
    for (Eigen::Index q = 0; q < 4; ++q) {
        std::vector<double> dists(4);
        std::vector<int> is_pos(4, 0), is_neg(4, 0);
        for (Eigen::Index j = 0; j < 4; ++j) {
            dists[static_cast<std::size_t>(j)] = (d.row(q) - d.row(j)).norm();
            is_pos[static_cast<std::size_t>(j)] = rel.positive(q, j);
            is_neg[static_cast<std::size_t>(j)] = rel.negative(q, j);
        }
        expected += 1.0 - oracles::scalar_tsap(dists, is_pos, is_neg, cfg.k, cfg.tau);
    }
    expected /= 4.0;
    CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("tsap loss skips queries without positives and errors when none remain") {
    MatrixXd d(3, 2);
    d << 0.0, 0.0, 0.2, 0.0, 5.0, 0.0;
    BatchRelations rel = empty_relations(3);
    set_pos(rel, 0, 1);
    set_neg(rel, 0, 2);
    set_neg(rel, 1, 2); // element 2 has no positive: skipped
    LossConfig cfg;
    auto res = loss::tsap_loss(d, rel, cfg);
    CHECK(std::isfinite(res.loss));

    BatchRelations none = empty_relations(3);
    set_neg(none, 0, 1);
    set_neg(none, 0, 2);
    try {
        loss::tsap_loss(d, none, cfg);
        FAIL("expected NoValidQueries");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::no_valid_queries);
    }
}

TEST_CASE("tsap gradient agrees with finite differences") {
    auto results = check::loss_gradient_suite(31, 1e-5);
    for (const auto& r : results) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("per-query structures are capped at k rows") {
    // 12 mutual positives plus negatives: |P_all| = 11 >> k = 3
    const Eigen::Index m = 16;
    Rng rng = make_rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    MatrixXd d(m, 3);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) d(i, j) = g(rng);
    BatchRelations rel = empty_relations(m);
    for (Eigen::Index i = 0; i < 12; ++i)
        for (Eigen::Index j = i + 1; j < 12; ++j) set_pos(rel, i, j);
    for (Eigen::Index i = 0; i < 12; ++i)
        for (Eigen::Index j = 12; j < m; ++j) set_neg(rel, i, j);
    LossConfig cfg;
    cfg.k = 3;
    loss::tsap_loss(d, rel, cfg);
    auto probe = loss::tsap_last_probe();
    CHECK(probe.max_rows == 3);       // k, not |positives| = 11
    CHECK(probe.max_cols <= m);
}

TEST_CASE("tsap loss is permutation equivariant and shift invariant") {
    Rng rng = make_rng(17);
    std::normal_distribution<double> g(0.0, 0.3);
    const Eigen::Index m = 6;
    MatrixXd d(m, 4);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < 4; ++j) d(i, j) = g(rng);
    BatchRelations rel = cluster_relations(3);
    LossConfig cfg;
    cfg.tau = 0.1;
    auto base = loss::tsap_loss(d, rel, cfg);

    // reversal permutation
    MatrixXd dp(m, 4);
    BatchRelations relp = empty_relations(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        dp.row(i) = d.row(m - 1 - i);
        for (Eigen::Index j = 0; j < m; ++j) {
            relp.positive(i, j) = rel.positive(m - 1 - i, m - 1 - j);
            relp.negative(i, j) = rel.negative(m - 1 - i, m - 1 - j);
        }
    }
    auto perm = loss::tsap_loss(dp, relp, cfg);
    CHECK(perm.loss == doctest::Approx(base.loss).epsilon(1e-12));
    for (Eigen::Index i = 0; i < m; ++i)
        CHECK((perm.grad.row(i) - base.grad.row(m - 1 - i)).cwiseAbs().maxCoeff() < 1e-12);

    // common shift of every descriptor
    MatrixXd shifted = d;
    Eigen::RowVectorXd offset(4);
    offset << 3.0, -1.0, 0.5, 2.0;
    shifted.rowwise() += offset;
    auto shift = loss::tsap_loss(shifted, rel, cfg);
    CHECK(shift.loss == doctest::Approx(base.loss).epsilon(1e-12));
}

TEST_CASE("hard AP is exactly monotone when a kept positive moves closer") {
    Rng rng = make_rng(23);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    const int k = 3;
    for (int iter = 0; iter < 2000; ++iter) {
        const Eigen::Index m = 6;
        VectorXd dists(m);
        for (Eigen::Index i = 0; i < m; ++i) dists(i) = u(rng);
        BatchRelations rel = empty_relations(m);
        set_pos(rel, 0, 1);
        set_pos(rel, 0, 2);
        set_neg(rel, 0, 3);
        set_neg(rel, 0, 4);
        set_neg(rel, 0, 5);
        const double before = loss::hard_truncated_ap(0, dists, rel, k);
        // move the closest positive (certainly in P) closer; it stays in P
        VectorXd moved = dists;
        const Eigen::Index target = dists(1) <= dists(2) ? 1 : 2;
        moved(target) = dists(target) * 0.5;
        const double after = loss::hard_truncated_ap(0, moved, rel, k);
        CHECK(after >= before - 1e-12);
    }
}

TEST_CASE("smooth AP is monotone up to the sigmoid smoothing slack") {
    // exact monotonicity holds for the hard indicator; the smooth
    // approximation can dip by at most its distance to the hard value on
    // each side of the move, which vanishes with tau
    Rng rng = make_rng(29);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    LossConfig cfg;
    cfg.k = 3;
    cfg.tau = 1e-4;
    for (int iter = 0; iter < 500; ++iter) {
        const Eigen::Index m = 6;
        VectorXd dists(m);
        for (Eigen::Index i = 0; i < m; ++i) dists(i) = u(rng);
        BatchRelations rel = empty_relations(m);
        set_pos(rel, 0, 1);
        set_pos(rel, 0, 2);
        set_neg(rel, 0, 3);
        set_neg(rel, 0, 4);
        set_neg(rel, 0, 5);
        const double before = loss::truncated_smooth_ap(0, dists, rel, cfg);
        VectorXd moved = dists;
        const Eigen::Index target = dists(1) <= dists(2) ? 1 : 2;
        moved(target) = dists(target) * 0.5;
        const double after = loss::truncated_smooth_ap(0, moved, rel, cfg);
        CHECK(after >= before - 2e-3);
    }
}

TEST_CASE("triplet loss: separated clusters give zero") {
    MatrixXd d = cluster_descriptors(3, 10.0);
    BatchRelations rel = cluster_relations(3);
    auto res = loss::triplet_loss_batch_hard(d, rel, 0.2);
    CHECK(res.loss == 0.0);
    CHECK(res.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("triplet loss: direct substitution example") {
    // anchor 0: positive at distance 0.8, negative at 0.3, margin 0.2
    MatrixXd d(3, 1);
    d << 0.0, 0.8, 0.3;
    BatchRelations rel = empty_relations(3);
    set_pos(rel, 0, 1);
    set_neg(rel, 0, 2);
    // anchors 1 and 2 have no positive+negative pair of their own... 1 has
    // positive 0 and no negative; 2 has negative 0 and no positive, so only
    // anchor 0 contributes
    auto res = loss::triplet_loss_batch_hard(d, rel, 0.2);
    CHECK(res.loss == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("triplet loss without valid anchors") {
    MatrixXd d(2, 1);
    d << 0.0, 1.0;
    BatchRelations rel = empty_relations(2);
    set_pos(rel, 0, 1);
    try {
        loss::triplet_loss_batch_hard(d, rel, 0.2);
        FAIL("expected NoValidAnchors");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::no_valid_anchors);
    }
}

TEST_CASE("relations validation rejects inconsistent masks") {
    BatchRelations rel = empty_relations(3);
    rel.positive(0, 1) = true; // asymmetric
    CHECK_THROWS_AS(rel.validate(), Error);
    BatchRelations rel2 = empty_relations(3);
    set_pos(rel2, 0, 1);
    rel2.negative(0, 1) = rel2.negative(1, 0) = true; // both masks
    CHECK_THROWS_AS(rel2.validate(), Error);
    BatchRelations rel3 = empty_relations(2);
    rel3.positive(0, 0) = true; // diagonal
    CHECK_THROWS_AS(rel3.validate(), Error);
}
