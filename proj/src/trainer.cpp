#include "voxloc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "voxloc/error.hpp"
#include "voxloc/parallel.hpp"

namespace voxloc::train {

TrainConfig TrainConfig::baseline() {
    TrainConfig cfg;
    cfg.epochs = 400;
    cfg.lr_decay_epochs = {250, 350};
    return cfg;
}

TrainConfig TrainConfig::refined() {
    TrainConfig cfg;
    cfg.epochs = 500;
    cfg.lr_decay_epochs = {350, 450};
    return cfg;
}

void TrainConfig::apply_toy_sizes() {
    batch_size = 64;
    epochs = 60;
    // only ~180 optimizer steps fit in a desk-scale run; raise the rate and
    // decay late
    initial_lr = 3e-3;
    lr_decay_epochs = {45, 55};
}

void TrainConfig::validate() const {
    if (batch_size < 2) raise(Errc::invalid_config, "train: batch_size must be >= 2");
    if (epochs < 0) raise(Errc::invalid_config, "train: negative epochs");
    if (initial_lr <= 0.0) raise(Errc::invalid_config, "train: initial_lr must be positive");
    if (lr_decay_factor <= 1.0) raise(Errc::invalid_config, "train: decay factor must exceed 1");
    for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
        if (lr_decay_epochs[i] >= epochs)
            raise(Errc::invalid_config, "train: decay epoch beyond schedule");
        if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
            raise(Errc::invalid_config, "train: decay epochs must be strictly increasing");
    }
    if (loss.tau <= 0.0 || loss.k < 1) raise(Errc::invalid_config, "train: invalid loss config");
    if (weight_decay < 0.0) raise(Errc::invalid_config, "train: negative weight decay");
}

int batch_group_size(const data::Dataset& ds, int m, int k) {
    const auto clusters = ds.clusters(false);
    if (clusters.empty()) raise(Errc::insufficient_data, "sampler: no training clusters");
    std::size_t min_size = clusters.front().size();
    for (const auto& c : clusters) min_size = std::min(min_size, c.size());
    const int g = std::min(k + 1, static_cast<int>(min_size));
    if (g < 2)
        raise(Errc::insufficient_data,
              "sampler: clusters too small to provide any in-batch positive");
    if (m % g != 0)
        raise(Errc::insufficient_data, "sampler: batch size not divisible by group size");
    if (m / g > static_cast<int>(clusters.size()))
        raise(Errc::insufficient_data, "sampler: not enough clusters for one batch");
    return g;
}

TrainingBatch build_batch(const data::Dataset& ds, const std::vector<std::vector<int>>& clusters,
                          const std::vector<int>& cluster_ids, int group_size,
                          double quantization_step, const geom::AugmentConfig& aug, Rng& rng) {
    std::vector<const geom::PointCloud*> members;
    for (int cid : cluster_ids) {
        auto group = clusters[static_cast<std::size_t>(cid)];
        std::shuffle(group.begin(), group.end(), rng);
        group.resize(static_cast<std::size_t>(group_size));
        std::sort(group.begin(), group.end());
        for (int idx : group) members.push_back(&ds.clouds[static_cast<std::size_t>(idx)]);
    }

    TrainingBatch batch;
    const auto m = static_cast<Eigen::Index>(members.size());
    std::vector<geom::PointCloud> augmented;
    augmented.reserve(members.size());
    for (const geom::PointCloud* c : members) {
        geom::AugmentConfig cfg = aug;
        cfg.rng_seed = rng();
        Rng elem_rng = make_rng(cfg.rng_seed);
        augmented.push_back(geom::augment(*c, cfg, elem_rng));
    }
    for (const geom::PointCloud& c : augmented)
        batch.clouds.push_back(geom::quantize(c, quantization_step));

    batch.relations.positive = loss::BoolMatrix::Constant(m, m, false);
    batch.relations.negative = loss::BoolMatrix::Constant(m, m, false);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            switch (data::label_pair(augmented[static_cast<std::size_t>(i)],
                                     augmented[static_cast<std::size_t>(j)])) {
                case data::PairLabel::positive:
                    batch.relations.positive(i, j) = batch.relations.positive(j, i) = true;
                    break;
                case data::PairLabel::negative:
                    batch.relations.negative(i, j) = batch.relations.negative(j, i) = true;
                    break;
                case data::PairLabel::indeterminate:
                    break;
            }
        }
    }
    return batch;
}

TrainingBatch sample_batch(const data::Dataset& ds, int m, int k, double quantization_step,
                           const geom::AugmentConfig& aug, Rng& rng) {
    const int g = batch_group_size(ds, m, k);
    const auto clusters = ds.clusters(false);
    std::vector<int> ids(clusters.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(m / g));
    return build_batch(ds, clusters, ids, g, quantization_step, aug, rng);
}

void adam_update(ad::Parameter& param, AdamSlot& slot, long step, double lr, double beta1,
                 double beta2, double eps, double weight_decay) {
    if (slot.m1.rows() != param.value.rows() || slot.m1.cols() != param.value.cols()) {
        slot.m1 = ad::MatrixXd::Zero(param.value.rows(), param.value.cols());
        slot.m2 = ad::MatrixXd::Zero(param.value.rows(), param.value.cols());
    }
    ad::MatrixXd g = param.grad;
    if (weight_decay != 0.0) g += weight_decay * param.value;

    slot.m1 = beta1 * slot.m1 + (1.0 - beta1) * g;
    slot.m2 = beta2 * slot.m2 + (1.0 - beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    ad::MatrixXd m_hat = slot.m1 / bc1;
    ad::MatrixXd v_hat = slot.m2 / bc2;
    param.value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        raise(Errc::out_of_range, "lr_at: epoch outside schedule");
    int drops = 0;
    for (int e : cfg.lr_decay_epochs)
        if (e <= epoch) ++drops;
    return cfg.initial_lr / std::pow(cfg.lr_decay_factor, drops);
}

LossFn make_loss_fn(const TrainConfig& cfg) {
    if (cfg.loss_kind == LossKind::tsap) {
        return [loss_cfg = cfg.loss](const ad::MatrixXd& d, const loss::BatchRelations& rel) {
            return loss::tsap_loss(d, rel, loss_cfg);
        };
    }
    return [margin = cfg.loss.margin](const ad::MatrixXd& d, const loss::BatchRelations& rel) {
        return loss::triplet_loss_batch_hard(d, rel, margin);
    };
}

double multistage_gradients(net::Model& model, const TrainingBatch& batch,
                            const LossFn& loss_fn, int threads) {
    const auto m = static_cast<int>(batch.clouds.size());
    const Eigen::Index dim = model.config.descriptor_dim;

    // stage 1: descriptors with gradient computation switched off
    ad::MatrixXd descriptors(m, dim);
    parallel_for(m, threads, [&](int i) {
        descriptors.row(i) = net::compute_descriptor(
            model, batch.clouds[static_cast<std::size_t>(i)], net::Mode::train);
    });

    // stage 2: loss and its gradient w.r.t. the descriptor matrix
    loss::LossResult res = loss_fn(descriptors, batch.relations);

    // stage 3: per-element recomputation with recording; gradients accumulate
    // one element at a time so only one tape is ever alive
    model.zero_grad();
    for (int i = 0; i < m; ++i) {
        ad::Tape tape(true);
        ad::Value v = net::forward(model, batch.clouds[static_cast<std::size_t>(i)],
                                   net::Mode::train_update, tape);
        tape.backward(v, res.grad.row(i));
    }
    return res.loss;
}

double multistage_step(net::Model& model, const TrainingBatch& batch, const LossFn& loss_fn,
                       AdamState& opt, const TrainConfig& cfg, double lr) {
    const double loss = multistage_gradients(model, batch, loss_fn, cfg.threads);

    opt.step += 1;
    for (auto& [name, param] : model.params) {
        adam_update(param, opt.slots[name], opt.step, lr, cfg.adam_beta1, cfg.adam_beta2,
                    cfg.adam_eps, cfg.weight_decay);
    }
    // GeM exponent stays in its valid domain
    auto& gem_p = model.param("gem.p").value(0, 0);
    if (gem_p < 1.0) gem_p = 1.0;

    return loss;
}

TrainResult train(net::Model& model, const data::Dataset& ds, const TrainConfig& cfg,
                  const Callbacks& callbacks) {
    cfg.validate();
    TrainResult result;
    if (cfg.epochs == 0) return result;

    const int g = batch_group_size(ds, cfg.batch_size, cfg.loss.k);
    const auto clusters = ds.clusters(false);
    const int groups_per_batch = cfg.batch_size / g;
    const int steps_per_epoch = static_cast<int>(clusters.size()) / groups_per_batch;
    if (steps_per_epoch == 0)
        raise(Errc::insufficient_data, "train: dataset provides no full batch");

    AdamState opt;
    const LossFn loss_fn = make_loss_fn(cfg);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        std::vector<int> order(clusters.size());
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng = make_rng(derive_seed(cfg.seed, 0x6f726465,
                                             static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), order_rng);

        double loss_sum = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            Rng step_rng = make_rng(derive_seed(cfg.seed, 0x73746570,
                                                static_cast<std::uint64_t>(epoch),
                                                static_cast<std::uint64_t>(step)));
            std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(step) * groups_per_batch,
                                 order.begin() +
                                     static_cast<std::ptrdiff_t>(step + 1) * groups_per_batch);
            TrainingBatch batch = build_batch(ds, clusters, ids, g,
                                              model.config.quantization_step, cfg.augment,
                                              step_rng);
            const auto t0 = std::chrono::steady_clock::now();
            const double loss = multistage_step(model, batch, loss_fn, opt, cfg, lr);
            const auto t1 = std::chrono::steady_clock::now();
            loss_sum += loss;

            LogEntry entry{epoch, step, loss, lr,
                           static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                 t1 - t0)
                                                 .count())};
            result.log.push_back(entry);
            if (callbacks.on_step) callbacks.on_step(entry);
        }
        result.epochs_run = epoch + 1;
        if (callbacks.on_epoch &&
            !callbacks.on_epoch(epoch, loss_sum / steps_per_epoch, model))
            break;
    }
    return result;
}

} // namespace voxloc::train
