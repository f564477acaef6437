#include <CLI11.hpp>

#include "voxloc/cli.hpp"

// Sparse-voxel point-cloud place recognition: synthetic world generation,
// descriptor network training, retrieval evaluation, and gradient checks.
int main(int argc, char** argv) {
    CLI::App app{"voxloc - point cloud place recognition pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", voxloc::cli::kVersion);

    voxloc::cli::GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic multi-traversal world");
    gen_cmd->add_option("--out", gen.out_dir, "output dataset directory")->required();
    gen_cmd->add_option("--preset", gen.preset, "toy-oxford | custom");
    gen_cmd->add_option("--seed", gen.seed, "world seed");
    gen_cmd->add_option("--locations", gen.locations, "custom: number of locations");
    gen_cmd->add_option("--test-locations", gen.test_locations, "custom: held-out locations");
    gen_cmd->add_option("--traversals", gen.traversals, "custom: traversal count");
    gen_cmd->add_option("--points", gen.points, "custom: points per cloud");
    gen_cmd->add_option("--spacing", gen.spacing, "custom: location spacing in meters");
    gen_cmd->add_option("--dropout", gen.dropout, "custom: per-revisit point dropout");

    voxloc::cli::TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "train the descriptor network");
    train_cmd->add_option("--data", tr.data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", tr.out_dir, "output directory")->required();
    train_cmd->add_option("--protocol", tr.protocol, "baseline | refined");
    train_cmd->add_flag("--toy", tr.toy, "toy-scale model and batch sizes");
    train_cmd->add_option("--batch", tr.batch, "batch size override");
    train_cmd->add_option("--epochs", tr.epochs, "epoch count override");
    train_cmd->add_option("--loss", tr.loss, "tsap | triplet");
    train_cmd->add_option("--lr", tr.lr, "initial learning rate override");
    train_cmd->add_option("--seed", tr.seed, "training seed");
    train_cmd->add_option("--threads", tr.threads, "worker threads for descriptor passes");
    train_cmd->add_option("--eval-every", tr.eval_every, "held-out AR@1 probe cadence (epochs)");
    train_cmd->add_option("--target-ar1", tr.target_ar1,
                          "stop once held-out AR@1 reaches this percentage");
    train_cmd->add_option("--checkpoint-every", tr.checkpoint_every,
                          "intermediate checkpoint cadence (epochs)");

    voxloc::cli::EvaluateOptions ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "run the retrieval evaluation protocol");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--data", ev.data_dir, "dataset directory")->required();
    eval_cmd->add_option("--report", ev.report_path, "write the metrics report JSON here");
    eval_cmd->add_option("--save-db", ev.save_db_path, "dump the descriptor database (jsonl)");
    eval_cmd->add_option("--threads", ev.threads, "worker threads");
    eval_cmd->add_flag("--train-split", ev.train_split, "evaluate train locations instead");

    voxloc::cli::QueryOptions qu;
    auto* query_cmd = app.add_subcommand("query", "rank database entries against one cloud");
    query_cmd->add_option("--checkpoint", qu.checkpoint, "model checkpoint")->required();
    query_cmd->add_option("--db", qu.db_path, "descriptor database (jsonl)")->required();
    query_cmd->add_option("--cloud", qu.cloud_path, "query cloud (.pcv)")->required();
    query_cmd->add_option("--n", qu.n, "neighbours to list");

    voxloc::cli::GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    gc_cmd->add_option("--seed", gc.seed, "instance seed");
    gc_cmd->add_option("--tolerance", gc.tolerance, "relative error tolerance");
    gc_cmd->add_flag("--full", gc.full, "include the toy-scale composed network (slow)");
    gc_cmd->add_option("--report", gc.report_path, "write the per-check report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return voxloc::cli::kExitUsage;
    }

    if (gen_cmd->parsed()) return voxloc::cli::cmd_gen_data(gen);
    if (train_cmd->parsed()) return voxloc::cli::cmd_train(tr);
    if (eval_cmd->parsed()) return voxloc::cli::cmd_evaluate(ev);
    if (query_cmd->parsed()) return voxloc::cli::cmd_query(qu);
    if (gc_cmd->parsed()) return voxloc::cli::cmd_gradcheck(gc);
    return voxloc::cli::kExitUsage;
}
