#include "voxloc/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "voxloc/error.hpp"
#include "voxloc/gradcheck.hpp"
#include "voxloc/parallel.hpp"

namespace voxloc::cli {

using json = nlohmann::ordered_json;

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// Every file-producing command drops one manifest next to its outputs.
void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        const json& config, std::uint64_t seed,
                        const std::vector<std::string>& outputs, const std::string& started,
                        const std::string& finished) {
    json m;
    m["command"] = command;
    m["version"] = kVersion;
    m["seed"] = seed;
    m["config"] = config;
    m["outputs"] = outputs;
    m["started_utc"] = started;
    m["finished_utc"] = finished;
    std::ofstream os(dir / "run_manifest.json");
    if (!os) raise(Errc::io_error, "cannot write run manifest in " + dir.string());
    os << m.dump(2) << "\n";
}

int usage_error(const std::string& message) {
    std::cerr << "error: " << message << "\n";
    return kExitUsage;
}

} // namespace

eval::DescriptorDB compute_descriptor_db(net::Model& model, const data::Dataset& ds,
                                         bool test_split, int threads) {
    std::vector<int> selected;
    for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
        const auto loc = static_cast<std::size_t>(ds.cloud_location[i]);
        if (ds.locations[loc].is_test == test_split) selected.push_back(static_cast<int>(i));
    }
    eval::DescriptorDB db;
    db.records.resize(selected.size());
    parallel_for(static_cast<int>(selected.size()), threads, [&](int s) {
        const geom::PointCloud& cloud =
            ds.clouds[static_cast<std::size_t>(selected[static_cast<std::size_t>(s)])];
        auto voxels = geom::quantize(cloud, model.config.quantization_step);
        auto d = net::compute_descriptor(model, voxels, net::Mode::eval);
        db.records[static_cast<std::size_t>(s)] =
            eval::Record{cloud.cloud_id, d.transpose(), cloud.easting, cloud.northing,
                         cloud.traversal_id};
    });
    db.validate();
    return db;
}

eval::EvalReport evaluate_dataset(net::Model& model, const data::Dataset& ds, bool test_split,
                                  int threads) {
    eval::DescriptorDB db = compute_descriptor_db(model, ds, test_split, threads);
    return eval::evaluate_rotating(db, {1, 5, 10, 20});
}

std::string report_to_json(const eval::EvalReport& report) {
    json j;
    json recall;
    for (const auto& [n, value] : report.recall_at) recall[std::to_string(n)] = value;
    j["recall_at"] = std::move(recall);
    j["ar_at_1pct"] = report.ar_at_1pct;
    j["n_queries"] = report.n_queries;
    j["n_db"] = report.n_db;
    json per_t;
    for (const auto& [t, value] : report.per_traversal_ar1) per_t[t] = value;
    j["per_traversal_ar1"] = std::move(per_t);
    return j.dump(2);
}

int cmd_gen_data(const GenDataOptions& opts) {
    const std::string started = utc_timestamp();
    if (opts.out_dir.empty()) return usage_error("gen-data: --out is required");

    data::WorldConfig cfg;
    if (opts.preset == "toy-oxford") {
        cfg = data::WorldConfig::toy_oxford(opts.seed);
    } else if (opts.preset == "custom") {
        cfg.n_locations = opts.locations;
        cfg.n_test_locations = opts.test_locations;
        cfg.n_traversals = opts.traversals;
        cfg.points_per_cloud = opts.points;
        cfg.location_spacing = opts.spacing;
        cfg.dropout = opts.dropout;
        cfg.seed = opts.seed;
    } else {
        return usage_error("gen-data: unknown preset " + opts.preset);
    }

    try {
        data::Dataset ds = data::generate_world(cfg);
        data::save_dataset(ds, opts.out_dir);
        write_run_manifest(opts.out_dir, "gen-data", json::parse(cfg.canonical_json()),
                           opts.seed, {"manifest.json", "clouds/"}, started, utc_timestamp());
        std::cout << "generated " << ds.clouds.size() << " clouds (" << cfg.n_locations
                  << " locations x " << cfg.n_traversals << " traversals) in " << opts.out_dir
                  << "\n";
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}

int cmd_train(const TrainOptions& opts) {
    const std::string started = utc_timestamp();
    if (opts.data_dir.empty()) return usage_error("train: --data is required");
    if (opts.out_dir.empty()) return usage_error("train: --out is required");

    train::TrainConfig cfg;
    if (opts.protocol == "baseline") {
        cfg = train::TrainConfig::baseline();
    } else if (opts.protocol == "refined") {
        cfg = train::TrainConfig::refined();
    } else {
        return usage_error("train: unknown protocol " + opts.protocol);
    }
    net::NetworkConfig netcfg =
        opts.toy ? net::NetworkConfig::toy_scale() : net::NetworkConfig::defaults();
    if (opts.toy) cfg.apply_toy_sizes();
    if (opts.batch > 0) cfg.batch_size = opts.batch;
    if (opts.epochs >= 0) cfg.epochs = opts.epochs;
    if (opts.lr > 0.0) cfg.initial_lr = opts.lr;
    if (opts.loss == "tsap") {
        cfg.loss_kind = train::LossKind::tsap;
    } else if (opts.loss == "triplet") {
        cfg.loss_kind = train::LossKind::triplet;
    } else {
        return usage_error("train: unknown loss " + opts.loss);
    }
    cfg.seed = opts.seed;
    cfg.threads = opts.threads;

    std::cout << "protocol " << opts.protocol << ": lr " << cfg.initial_lr << ", tau "
              << cfg.loss.tau << ", k " << cfg.loss.k << ", weight decay " << cfg.weight_decay
              << ", batch " << cfg.batch_size << ", epochs " << cfg.epochs << ", decay {";
    for (std::size_t i = 0; i < cfg.lr_decay_epochs.size(); ++i)
        std::cout << (i ? "," : "") << cfg.lr_decay_epochs[i];
    std::cout << "}, loss " << opts.loss << ", descriptor " << netcfg.descriptor_dim << "\n";

    // keep the decay schedule inside a shortened run
    std::erase_if(cfg.lr_decay_epochs, [&](int e) { return e >= cfg.epochs; });

    try {
        std::filesystem::create_directories(opts.out_dir);
        data::Dataset ds = data::load_dataset(opts.data_dir);
        net::Model model = net::build(netcfg, opts.seed);

        std::ofstream log(std::filesystem::path(opts.out_dir) / "train_log.jsonl");
        if (!log) return usage_error("train: cannot write log in " + opts.out_dir);

        train::Callbacks callbacks;
        callbacks.on_step = [&](const train::LogEntry& e) {
            json j;
            j["epoch"] = e.epoch;
            j["step"] = e.step;
            j["loss"] = e.loss;
            j["lr"] = e.lr;
            j["wall_ms"] = e.wall_ms;
            log << j.dump() << "\n";
        };
        callbacks.on_epoch = [&](int epoch, double mean_loss, net::Model& m) {
            std::cout << "epoch " << epoch << " loss " << mean_loss << "\n";
            if (opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0) {
                char name[32];
                std::snprintf(name, sizeof name, "checkpoint_%04d.bin", epoch);
                net::save_checkpoint(m, std::filesystem::path(opts.out_dir) / name);
            }
            if (opts.eval_every > 0 && (epoch + 1) % opts.eval_every == 0) {
                auto report = evaluate_dataset(m, ds, true, opts.threads);
                const double ar1 = report.recall_at.front().second;
                json j;
                j["epoch"] = epoch;
                j["heldout_ar1"] = ar1;
                log << j.dump() << "\n";
                std::cout << "epoch " << epoch << " held-out AR@1 " << ar1 << "\n";
                if (opts.target_ar1 >= 0.0 && ar1 >= opts.target_ar1) return false;
            }
            return true;
        };

        auto result = train::train(model, ds, cfg, callbacks);
        const auto ckpt = std::filesystem::path(opts.out_dir) / "checkpoint.bin";
        net::save_checkpoint(model, ckpt);

        json config_snapshot;
        config_snapshot["network"] = json::parse(model.config.canonical_json());
        config_snapshot["world"] = json::parse(ds.config.canonical_json());
        config_snapshot["protocol"] = opts.protocol;
        config_snapshot["loss"] = opts.loss;
        config_snapshot["batch_size"] = cfg.batch_size;
        config_snapshot["epochs_requested"] = cfg.epochs;
        config_snapshot["epochs_run"] = result.epochs_run;
        config_snapshot["initial_lr"] = cfg.initial_lr;
        config_snapshot["weight_decay"] = cfg.weight_decay;
        config_snapshot["tau"] = cfg.loss.tau;
        config_snapshot["k"] = cfg.loss.k;
        write_run_manifest(opts.out_dir, "train", config_snapshot, opts.seed,
                           {"checkpoint.bin", "train_log.jsonl"}, started, utc_timestamp());
        std::cout << "saved " << ckpt.string() << " after " << result.epochs_run
                  << " epochs\n";
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}

int cmd_evaluate(const EvaluateOptions& opts) {
    const std::string started = utc_timestamp();
    if (opts.checkpoint.empty()) return usage_error("evaluate: --checkpoint is required");
    if (opts.data_dir.empty()) return usage_error("evaluate: --data is required");

    try {
        net::Model model = net::load_checkpoint(opts.checkpoint);
        data::Dataset ds = data::load_dataset(opts.data_dir);
        eval::DescriptorDB db =
            compute_descriptor_db(model, ds, !opts.train_split, opts.threads);
        if (!opts.save_db_path.empty()) eval::save_db(db, opts.save_db_path);
        eval::EvalReport report = eval::evaluate_rotating(db, {1, 5, 10, 20});

        std::cout << "queries " << report.n_queries << ", database " << report.n_db
                  << " per rotation\n";
        for (const auto& [n, value] : report.recall_at)
            std::printf("recall@%-3d %8.3f\n", n, value);
        std::printf("AR@1%%     %8.3f\n", report.ar_at_1pct);
        for (const auto& [t, value] : report.per_traversal_ar1)
            std::printf("  %s AR@1 %8.3f\n", t.c_str(), value);

        if (!opts.report_path.empty()) {
            std::ofstream os(opts.report_path);
            if (!os) return usage_error("evaluate: cannot write " + opts.report_path);
            os << report_to_json(report) << "\n";
            const auto dir = std::filesystem::path(opts.report_path).parent_path();
            json config;
            config["checkpoint"] = opts.checkpoint;
            config["data"] = opts.data_dir;
            config["network"] = json::parse(model.config.canonical_json());
            write_run_manifest(dir.empty() ? "." : dir, "evaluate", config, 0,
                               {std::filesystem::path(opts.report_path).filename().string()},
                               started, utc_timestamp());
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}

int cmd_query(const QueryOptions& opts) {
    if (opts.checkpoint.empty() || opts.db_path.empty() || opts.cloud_path.empty())
        return usage_error("query: --checkpoint, --db and --cloud are required");
    if (opts.n < 1) return usage_error("query: --n must be >= 1");

    try {
        net::Model model = net::load_checkpoint(opts.checkpoint);
        eval::DescriptorDB db = eval::load_db(opts.db_path);
        geom::PointCloud cloud = geom::load_pcv(opts.cloud_path);
        auto voxels = geom::quantize(cloud, model.config.quantization_step);
        auto d = net::compute_descriptor(model, voxels, net::Mode::eval);
        auto neighbours = eval::knn(d.transpose(), db, opts.n);

        std::printf("%-4s %-16s %10s\n", "rank", "cloud", "distance");
        for (std::size_t i = 0; i < neighbours.size(); ++i)
            std::printf("%-4zu %-16s %10.6f\n", i + 1, neighbours[i].cloud_id.c_str(),
                        neighbours[i].distance);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opts) {
    if (opts.tolerance <= 0.0) return usage_error("gradcheck: tolerance must be positive");
    // the loss gradients carry a tighter default bound
    const double loss_tol = std::min(opts.tolerance, 1e-5);

    std::vector<check::CheckResult> all;
    auto ops = check::operator_gradient_suite(opts.seed, opts.tolerance);
    all.insert(all.end(), ops.begin(), ops.end());

    net::NetworkConfig netcfg;
    if (opts.full) {
        netcfg = net::NetworkConfig::toy_scale();
    } else {
        netcfg.channels = {2, 2, 3, 3, 2};
        netcfg.lateral_dim = 4;
        netcfg.descriptor_dim = 4;
    }
    auto nets = check::network_gradient_suite(opts.seed, opts.tolerance, netcfg);
    all.insert(all.end(), nets.begin(), nets.end());
    auto losses = check::loss_gradient_suite(opts.seed, loss_tol);
    all.insert(all.end(), losses.begin(), losses.end());

    int failures = 0;
    for (const auto& r : all) {
        std::printf("%-6s %-42s max rel err %.3e (tol %.1e)\n", r.pass ? "[ok]" : "[FAIL]",
                    r.name.c_str(), r.max_rel_err, r.tolerance);
        if (!r.pass) ++failures;
    }
    std::printf("%d checks, %d failures\n", static_cast<int>(all.size()), failures);

    if (!opts.report_path.empty()) {
        json j = json::array();
        for (const auto& r : all)
            j.push_back({{"name", r.name},
                         {"max_rel_err", r.max_rel_err},
                         {"tolerance", r.tolerance},
                         {"pass", r.pass}});
        std::ofstream os(opts.report_path);
        if (!os) return usage_error("gradcheck: cannot write " + opts.report_path);
        os << j.dump(2) << "\n";
    }
    return failures == 0 ? kExitOk : kExitCheckFailed;
}

} // namespace voxloc::cli
