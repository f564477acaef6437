#ifndef VOXLOC_LOSSES_HPP
#define VOXLOC_LOSSES_HPP

#include <Eigen/Core>

namespace voxloc::loss {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct LossConfig {
    double tau = 0.01;  // sigmoid temperature
    int k = 4;          // positives kept per query
    double margin = 0.2; // triplet baseline only
};

// Pairwise training relations within a batch: positives are elements known
// to be at most 10 m apart, negatives at least 50 m apart. Pairs in between
// belong to neither mask and are excluded from ranking targets.
struct BatchRelations {
    BoolMatrix positive;
    BoolMatrix negative;

    Eigen::Index size() const { return positive.rows(); }
    // symmetric masks, disjoint, false diagonal
    void validate() const;
};

// Smoothed step function G(x; tau) = sigmoid(x / tau), evaluated without
// overflow for |x / tau| up to at least 1e4.
double sigmoid_indicator(double x, double tau);

// Smooth average precision of query q against the rest of the batch, using
// the min(k, #positives) descriptor-space closest positives. `dists` holds
// the descriptor distances from q to every batch element (entry q ignored).
double truncated_smooth_ap(Eigen::Index q, const VectorXd& dists, const BatchRelations& rel,
                           const LossConfig& cfg);

// Same quantity with the exact indicator [x > 0] (ties contribute zero).
double hard_truncated_ap(Eigen::Index q, const VectorXd& dists, const BatchRelations& rel,
                         int k);

struct LossResult {
    double loss = 0.0;
    MatrixXd grad; // d loss / d descriptors, same shape as the input matrix
};

// Mean of (1 - AP_q) over the queries that have at least one positive, with
// the exact analytic gradient w.r.t. the descriptor matrix.
LossResult tsap_loss(const MatrixXd& descriptors, const BatchRelations& rel,
                     const LossConfig& cfg);

// Batch-hard triplet baseline: per anchor, hinge on (farthest positive,
// nearest negative) distances; mean over anchors owning both.
LossResult triplet_loss_batch_hard(const MatrixXd& descriptors, const BatchRelations& rel,
                                   double margin);

// Size of the largest per-query sigmoid matrix materialized by the most
// recent tsap_loss call on this thread; rows never exceed k and cols never
// exceed the batch size regardless of how many positives a query has.
struct TsapProbe {
    Eigen::Index max_rows = 0;
    Eigen::Index max_cols = 0;
};
TsapProbe tsap_last_probe();

} // namespace voxloc::loss

#endif
