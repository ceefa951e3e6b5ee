#include <iostream>

#include <CLI11.hpp>

#include "gastgrn/commands.hpp"

namespace {

void add_common(CLI::App* cmd, gastgrn::cli::CommonOptions& opt) {
    cmd->add_option("--config", opt.config_path, "JSON run config");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_option("--seed", opt.seed, "run seed (overrides the config)");
    cmd->add_option("--set", opt.overrides, "config override KEY=VALUE (repeatable)")->take_all();
}

}  // namespace

int main(int argc, char** argv) {
    using namespace gastgrn::cli;
    CLI::App app{"Spatio-temporal graph recurrent traffic forecaster"};
    app.require_subcommand(1);

    CommonOptions train_opt;
    auto* train = app.add_subcommand("train", "train a model and evaluate it on the test split");
    add_common(train, train_opt);

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint directory or manifest")->required();
    eval->add_option("--series", eval_opt.series_path, "series CSV (defaults to the training data)");
    eval->add_option("--adjacency", eval_opt.adjacency_path, "adjacency CSV");
    eval->add_option("--out", eval_opt.out_dir, "output directory");

    CommonOptions ablate_opt;
    ablate_opt.out_dir = "ablation";
    std::string grid_path;
    std::size_t jobs = 1;
    auto* ablate = app.add_subcommand("ablate", "train every graph mode x awareness variant cell");
    add_common(ablate, ablate_opt);
    ablate->add_option("--grid", grid_path, "JSON grid spec {\"graph_mode\": [...], \"gst2_variant\": [...]}");
    ablate->add_option("--jobs", jobs, "cells trained concurrently")->check(CLI::PositiveNumber);

    CommonOptions grad_opt;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check on a tiny model");
    add_common(gradcheck, grad_opt);

    gastgrn::SynthOptions synth_opt;
    std::string synth_out = "synth";
    auto* synth = app.add_subcommand("synth", "write a synthetic series and adjacency");
    synth->add_option("--nodes", synth_opt.nodes, "number of nodes");
    synth->add_option("--steps", synth_opt.steps, "number of time steps");
    synth->add_option("--seed", synth_opt.seed, "generator seed");
    synth->add_option("--noise", synth_opt.noise_level, "noise level relative to amplitude");
    synth->add_option("--diffusion", synth_opt.diffusion, "neighbor mixing weight per step");
    synth->add_option("--out", synth_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    if (*train) return cmd_train(train_opt);
    if (*eval) return cmd_eval(eval_opt);
    if (*ablate) return cmd_ablate(ablate_opt, grid_path, jobs);
    if (*gradcheck) return cmd_gradcheck(grad_opt);
    return cmd_synth(synth_opt, synth_out);
}
