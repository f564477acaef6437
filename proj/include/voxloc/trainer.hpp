#ifndef VOXLOC_TRAINER_HPP
#define VOXLOC_TRAINER_HPP

#include <functional>
#include <map>
#include <vector>

#include "voxloc/datasets.hpp"
#include "voxloc/losses.hpp"
#include "voxloc/network.hpp"

namespace voxloc::train {

enum class LossKind { tsap, triplet };

struct TrainConfig {
    int batch_size = 2048;
    int epochs = 400;
    double initial_lr = 1e-3;
    std::vector<int> lr_decay_epochs{250, 350};
    double lr_decay_factor = 10.0;
    double weight_decay = 1e-4;
    loss::LossConfig loss;
    LossKind loss_kind = LossKind::tsap;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    geom::AugmentConfig augment;
    std::uint64_t seed = 0;
    int threads = 1;

    // Table of hyperparameters for the two training protocols.
    static TrainConfig baseline();
    static TrainConfig refined();
    // Desk-scale sizes: batch 64, shorter schedule.
    void apply_toy_sizes();

    void validate() const;
};

struct TrainingBatch {
    std::vector<geom::VoxelizedCloud> clouds;
    loss::BatchRelations relations;
};

// Assembles a batch of m clouds from whole location clusters. Group size is
// min(k+1, smallest cluster size); every element gets group_size - 1 in-batch
// positives (the loss caps P at min(k, available)). Augmentation is applied
// here, once per element.
TrainingBatch sample_batch(const data::Dataset& ds, int m, int k, double quantization_step,
                           const geom::AugmentConfig& aug, Rng& rng);

// Same assembly from an explicit list of cluster ids (the epoch loop rotates
// through a shuffled partition).
TrainingBatch build_batch(const data::Dataset& ds, const std::vector<std::vector<int>>& clusters,
                          const std::vector<int>& cluster_ids, int group_size,
                          double quantization_step, const geom::AugmentConfig& aug, Rng& rng);

int batch_group_size(const data::Dataset& ds, int m, int k);

struct AdamSlot {
    ad::MatrixXd m1;
    ad::MatrixXd m2;
};

struct AdamState {
    std::map<std::string, AdamSlot> slots;
    long step = 0;
};

// One Adam update with bias correction; weight decay enters as an L2 term
// added to the gradient before the moment updates.
void adam_update(ad::Parameter& param, AdamSlot& slot, long step, double lr, double beta1,
                 double beta2, double eps, double weight_decay);

double lr_at(int epoch, const TrainConfig& cfg);

using LossFn =
    std::function<loss::LossResult(const ad::MatrixXd&, const loss::BatchRelations&)>;

LossFn make_loss_fn(const TrainConfig& cfg);

// Multistaged backpropagation over one batch: gradient-free descriptor pass,
// loss gradient w.r.t. descriptors, then per-element recomputation with
// recording and chain-rule accumulation into the parameter gradients. At
// most one recording tape is alive at any time; threads only parallelize
// the gradient-free first stage.
double multistage_gradients(net::Model& model, const TrainingBatch& batch,
                            const LossFn& loss_fn, int threads);

// multistage_gradients followed by one Adam step over every parameter.
double multistage_step(net::Model& model, const TrainingBatch& batch, const LossFn& loss_fn,
                       AdamState& opt, const TrainConfig& cfg, double lr);

struct LogEntry {
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    long wall_ms = 0;
};

struct Callbacks {
    // Return false to stop training after this epoch.
    std::function<bool(int epoch, double mean_loss, net::Model& model)> on_epoch;
    std::function<void(const LogEntry&)> on_step;
};

struct TrainResult {
    std::vector<LogEntry> log;
    int epochs_run = 0;
};

TrainResult train(net::Model& model, const data::Dataset& ds, const TrainConfig& cfg,
                  const Callbacks& callbacks = {});

} // namespace voxloc::train

#endif
