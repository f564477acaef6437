#ifndef VOXLOC_CLI_HPP
#define VOXLOC_CLI_HPP

#include <cstdint>
#include <string>

#include "voxloc/datasets.hpp"
#include "voxloc/retrieval.hpp"
#include "voxloc/trainer.hpp"

namespace voxloc::cli {

// Exit codes: 0 success, 1 check failure, 2 usage / IO error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kVersion = "voxloc 0.1.0";

struct GenDataOptions {
    std::string out_dir;
    std::string preset = "toy-oxford";
    std::uint64_t seed = 0;
    // custom preset knobs (ignored for toy-oxford)
    int locations = 70;
    int test_locations = 20;
    int traversals = 4;
    int points = 1500;
    double spacing = 60.0;
    double dropout = 0.10;
};
int cmd_gen_data(const GenDataOptions& opts);

struct TrainOptions {
    std::string data_dir;
    std::string out_dir;
    std::string protocol = "baseline"; // baseline | refined
    bool toy = false;                  // toy_scale model + desk-scale sizes
    int batch = 0;                     // 0: protocol default
    int epochs = -1;                   // <0: protocol default
    std::string loss = "tsap"; // tsap | triplet
    double lr = 0.0;           // 0: protocol default
    std::uint64_t seed = 0;
    int threads = 1;
    int eval_every = 0;     // epochs between held-out AR@1 probes (0: never)
    double target_ar1 = -1; // stop once held-out AR@1 reaches this (needs eval_every)
    int checkpoint_every = 0; // epochs between intermediate checkpoints
};
int cmd_train(const TrainOptions& opts);

struct EvaluateOptions {
    std::string checkpoint;
    std::string data_dir;
    std::string report_path; // optional
    std::string save_db_path; // optional: dump the descriptor database
    int threads = 1;
    bool train_split = false; // evaluate the train locations instead
};
int cmd_evaluate(const EvaluateOptions& opts);

struct QueryOptions {
    std::string checkpoint;
    std::string db_path;
    std::string cloud_path;
    int n = 5;
};
int cmd_query(const QueryOptions& opts);

struct GradcheckOptions {
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    bool full = false; // include the toy_scale composed network
    std::string report_path;
};
int cmd_gradcheck(const GradcheckOptions& opts);

// Shared pipeline helpers (also used by the acceptance suite).
eval::DescriptorDB compute_descriptor_db(net::Model& model, const data::Dataset& ds,
                                         bool test_split, int threads);
eval::EvalReport evaluate_dataset(net::Model& model, const data::Dataset& ds, bool test_split,
                                  int threads);
std::string report_to_json(const eval::EvalReport& report);

} // namespace voxloc::cli

#endif
