#pragma once

#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gastgrn/checkpoint.hpp"
#include "gastgrn/data.hpp"
#include "gastgrn/io.hpp"
#include "gastgrn/model.hpp"
#include "gastgrn/run_config.hpp"
#include "gastgrn/train.hpp"

namespace gastgrn::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kDivergence = 3 };

/// Flags shared by every command.
struct CommonOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

// ---------------------------------------------------------------------------
// Serialization of run artifacts

inline json to_json(const MetricsSummary& m) {
    json j{{"mae", m.mae}, {"rmse", m.rmse}, {"mape", nullptr}, {"mape_mask_count", m.mape_mask_count}, {"count", m.count}};
    if (m.mape) j["mape"] = *m.mape;
    return j;
}

inline json to_json(const MetricsReport& r) {
    json j = to_json(static_cast<const MetricsSummary&>(r));
    json horizons = json::array();
    for (std::size_t h = 0; h < r.horizons.size(); ++h) {
        json row = to_json(r.horizons[h]);
        row["horizon"] = h + 1;
        horizons.push_back(std::move(row));
    }
    j["horizons"] = std::move(horizons);
    return j;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_mae,val_rmse,val_mape\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + ',' + format_double(r.train_loss) + ',' + format_double(r.val_mae) + ',' +
               format_double(r.val_rmse) + ',' + (r.val_mape ? format_double(*r.val_mape) : std::string("nan")) + '\n';
    }
    return out;
}

/// One row per forecast step: sample index, then one denormalized value per node.
inline std::string predictions_csv(const Tensor& predictions, const Normalizer& normalizer) {
    const std::size_t samples = predictions.dim(0), horizon = predictions.dim(1), n = predictions.dim(2);
    const auto v = predictions.values();
    std::string out;
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t h = 0; h < horizon; ++h) {
            out += std::to_string(s);
            for (std::size_t i = 0; i < n; ++i) {
                out += ',';
                out += format_double(normalizer.denormalize(v[(s * horizon + h) * n + i]));
            }
            out += '\n';
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config and data preparation

inline RunConfig resolve_config(const CommonOptions& opt) {
    json j = opt.config_path.empty() ? json::object() : load_config_json(opt.config_path);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& o : opt.overrides) apply_override(j, o);
    if (opt.seed) j["seed"] = *opt.seed;
    RunConfig cfg = run_config_from_json(j);
    cfg.validate();
    return cfg;
}

struct PreparedData {
    TrafficSeries series;
    std::optional<Tensor> adjacency;
    Normalizer normalizer;
    std::optional<WindowSet> train, val, test;
};

/// Loads or synthesizes the series, splits it 6:2:2, normalizes with train
/// statistics and windows each segment. Fills `cfg.model.nodes`.
inline PreparedData prepare_data(RunConfig& cfg, std::optional<Normalizer> fixed_normalizer = std::nullopt) {
    PreparedData d;
    if (cfg.uses_synth() && cfg.series_path.empty()) {
        SynthData s;
        try {
            s = synthesize(cfg.synth_options());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("synthetic data: ") + e.what());
        }
        d.series = std::move(s.series);
        d.adjacency = std::move(s.adjacency);
    } else {
        d.series = load_series(cfg.series_path);
    }
    if (!cfg.adjacency_path.empty()) d.adjacency = load_adjacency(cfg.adjacency_path);
    const std::size_t n = d.series.nodes();
    if (cfg.model.nodes != 0 && cfg.model.nodes != n) {
        throw DataError("config expects " + std::to_string(cfg.model.nodes) + " nodes but data has " + std::to_string(n));
    }
    if (d.adjacency && d.adjacency->dim(0) != n) {
        throw DataError("adjacency has " + std::to_string(d.adjacency->dim(0)) + " nodes but series has " + std::to_string(n));
    }
    if (cfg.model.graph_mode == GraphMode::static_graph && !d.adjacency) {
        throw ConfigError("graph_mode static requires 'adjacency_path' (or synthetic data)");
    }
    cfg.model.nodes = n;
    const Splits splits = chronological_split(d.series, cfg.model.input_steps, cfg.model.output_steps);
    d.normalizer = fixed_normalizer ? *fixed_normalizer : Normalizer::fit(splits.train.values);
    const auto T = cfg.model.input_steps, T_out = cfg.model.output_steps;
    d.train.emplace(d.normalizer.normalize(splits.train.values), T, T_out);
    d.val.emplace(d.normalizer.normalize(splits.val.values), T, T_out);
    d.test.emplace(d.normalizer.normalize(splits.test.values), T, T_out);
    return d;
}

inline Model build_model(const RunConfig& cfg, const PreparedData& data) {
    return Model(cfg.model, cfg.model.graph_mode == GraphMode::static_graph ? data.adjacency : std::nullopt);
}

/// Maps library exceptions onto exit codes, reporting to `err`.
template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const DivergenceError& e) {
        err << "training error: " << e.what() << '\n';
        return kDivergence;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const InvalidGraph& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
    TrainResult result;
    MetricsReport test_metrics;
};

inline json checkpoint_extra(const RunConfig& cfg, const Normalizer& normalizer, const TrainResult& result) {
    return json{{"config", to_json(cfg)},
                {"normalizer", {{"mean", normalizer.mean}, {"std", normalizer.std}}},
                {"best_epoch", result.best_epoch}};
}

/// Trains one configuration and writes checkpoint, history and test metrics to `out`.
inline TrainOutcome run_training(RunConfig cfg, PreparedData& data, const fs::path& out, std::ostream& log) {
    Model model = build_model(cfg, data);
    log << "training " << to_string(cfg.model.graph_mode) << "/" << to_string(cfg.model.gst2_variant) << " with "
        << model.parameters().total_elements() << " parameters on " << data.train->size() << " windows\n";
    TrainOutcome o;
    o.result = train(model, *data.train, *data.val, data.normalizer, cfg.train);
    o.test_metrics = evaluate(model, *data.test, data.normalizer, cfg.train.batch_size).metrics;
    save_checkpoint(out, model.parameters(), checkpoint_extra(cfg, data.normalizer, o.result));
    write_file_atomic(out / "history.csv", history_csv(o.result.history));
    write_file_atomic(out / "metrics.json", to_json(o.test_metrics).dump(2) + "\n");
    log << "best epoch " << o.result.best_epoch << " of " << o.result.history.size() << ", test MAE "
        << o.test_metrics.mae << "\n";
    return o;
}

inline int cmd_train(const CommonOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        RunConfig cfg = resolve_config(opt);
        PreparedData data = prepare_data(cfg);
        run_training(cfg, data, opt.out_dir, log);
        return int{kOk};
    });
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string checkpoint;
    std::string series_path;     // optional; defaults to the data recorded in the checkpoint
    std::string adjacency_path;  // optional
    std::string out_dir = "eval";
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        const json manifest = read_manifest(opt.checkpoint);
        RunConfig cfg = run_config_from_json(manifest.at("config"));
        const std::size_t trained_nodes = cfg.model.nodes;
        if (!opt.series_path.empty()) {
            cfg.series_path = opt.series_path;
            cfg.synth_nodes = 0;
        }
        if (!opt.adjacency_path.empty()) cfg.adjacency_path = opt.adjacency_path;
        const Normalizer normalizer{manifest.at("normalizer").at("mean").get<double>(),
                                    manifest.at("normalizer").at("std").get<double>()};
        cfg.model.nodes = 0;
        PreparedData data = prepare_data(cfg, normalizer);
        if (cfg.model.nodes != trained_nodes) {
            throw DataError("checkpoint was trained on " + std::to_string(trained_nodes) + " nodes but data has " +
                            std::to_string(cfg.model.nodes));
        }
        Model model = build_model(cfg, data);
        load_checkpoint(opt.checkpoint, model.parameters());
        const Evaluation e = evaluate(model, *data.test, data.normalizer, cfg.train.batch_size);
        const fs::path out = opt.out_dir;
        write_file_atomic(out / "metrics.json", to_json(e.metrics).dump(2) + "\n");
        write_file_atomic(out / "predictions.csv", predictions_csv(e.predictions, data.normalizer));
        log << "test MAE " << e.metrics.mae << " RMSE " << e.metrics.rmse << "\n";
        return int{kOk};
    });
}

// ---------------------------------------------------------------------------
// ablate

struct AblationGrid {
    std::vector<GraphMode> graph_modes{GraphMode::static_graph, GraphMode::adaptive, GraphMode::sequence_aware};
    std::vector<Gst2Variant> variants{Gst2Variant::ta_only, Gst2Variant::sa_only, Gst2Variant::parallel,
                                      Gst2Variant::serial,  Gst2Variant::fused,   Gst2Variant::none};

    static AblationGrid from_json(const json& j) {
        if (!j.is_object()) throw ConfigError("grid spec must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key != "graph_mode" && key != "gst2_variant") throw ConfigError("unknown grid key '" + key + "'");
        }
        AblationGrid g;
        if (j.contains("graph_mode")) {
            g.graph_modes.clear();
            for (const auto& v : j.at("graph_mode")) g.graph_modes.push_back(parse_graph_mode(v.get<std::string>()));
        }
        if (j.contains("gst2_variant")) {
            g.variants.clear();
            for (const auto& v : j.at("gst2_variant")) g.variants.push_back(parse_gst2_variant(v.get<std::string>()));
        }
        if (g.graph_modes.empty() || g.variants.empty()) throw ConfigError("grid spec lists no cells");
        return g;
    }
};

struct AblationCell {
    GraphMode graph_mode;
    Gst2Variant variant;
    std::optional<TrainOutcome> outcome;
    std::string error;

    std::string label() const { return std::string(to_string(graph_mode)) + "__" + std::string(to_string(variant)); }
};

/// Epoch at which validation MAE first reaches `target`, empty if never.
inline std::optional<std::size_t> epochs_to_reach(const std::vector<EpochRecord>& history, double target) {
    for (const auto& r : history) {
        if (r.val_mae <= target) return r.epoch;
    }
    return std::nullopt;
}

inline std::vector<AblationCell> run_ablation(const RunConfig& base, const AblationGrid& grid, const fs::path& out,
                                              std::size_t jobs, std::ostream& log) {
    std::vector<AblationCell> cells;
    for (auto m : grid.graph_modes) {
        for (auto v : grid.variants) cells.push_back({m, v, std::nullopt, {}});
    }
    std::mutex log_mutex;
    auto run_cell = [&](AblationCell& cell) {
        RunConfig cfg = base;
        cfg.model.graph_mode = cell.graph_mode;
        cfg.model.gst2_variant = cell.variant;
        std::ostringstream cell_log;
        try {
            PreparedData data = prepare_data(cfg);
            cell.outcome = run_training(cfg, data, out / "cells" / cell.label(), cell_log);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
        std::lock_guard lock(log_mutex);
        log << "[" << cell.label() << "] " << (cell.error.empty() ? cell_log.str() : "failed: " + cell.error + "\n");
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, cells.size()));
    if (jobs == 1) {
        for (auto& c : cells) run_cell(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
            });
        }
        for (auto& t : workers) t.join();
    }

    std::string table = "graph_mode,variant,mae,rmse,mape\n";
    std::string failures = "graph_mode,variant,error\n";
    std::string convergence = "graph_mode,variant,epochs_run,best_epoch,best_val_mae,epochs_to_baseline_best\n";
    for (const auto& c : cells) {
        const std::string prefix = std::string(to_string(c.graph_mode)) + ',' + std::string(to_string(c.variant));
        if (!c.outcome) {
            std::string msg = c.error;
            for (auto& ch : msg) {
                if (ch == ',' || ch == '\n') ch = ' ';
            }
            failures += prefix + ',' + msg + '\n';
            continue;
        }
        const auto& m = c.outcome->test_metrics;
        table += prefix + ',' + format_double(m.mae) + ',' + format_double(m.rmse) + ',' +
                 (m.mape ? format_double(*m.mape) : std::string("nan")) + '\n';
        // convergence relative to the plain recurrent baseline of the same graph mode
        std::optional<double> baseline;
        for (const auto& b : cells) {
            if (b.graph_mode == c.graph_mode && b.variant == Gst2Variant::none && b.outcome) {
                baseline = b.outcome->result.best_val_mae;
            }
        }
        const auto& r = c.outcome->result;
        const auto reach = baseline ? epochs_to_reach(r.history, *baseline) : std::nullopt;
        convergence += prefix + ',' + std::to_string(r.history.size()) + ',' + std::to_string(r.best_epoch) + ',' +
                       format_double(r.best_val_mae) + ',' + (reach ? std::to_string(*reach) : std::string("")) + '\n';
    }
    write_file_atomic(out / "ablation.csv", table);
    write_file_atomic(out / "convergence.csv", convergence);
    write_file_atomic(out / "failures.csv", failures);
    return cells;
}

inline int cmd_ablate(const CommonOptions& opt, const std::string& grid_path = {}, std::size_t jobs = 1,
                      std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        RunConfig cfg = resolve_config(opt);
        const AblationGrid grid = grid_path.empty() ? AblationGrid{} : AblationGrid::from_json(load_config_json(grid_path));
        const auto cells = run_ablation(cfg, grid, opt.out_dir, jobs, log);
        std::size_t failed = 0;
        for (const auto& c : cells) failed += c.outcome ? 0 : 1;
        log << cells.size() - failed << " of " << cells.size() << " cells completed\n";
        return int{kOk};
    });
}

// ---------------------------------------------------------------------------
// gradcheck

/// Shrinks a configuration to the gradient-check size, keeping its graph
/// mode, variant and Chebyshev order.
inline ModelConfig tiny_config(const ModelConfig& base) {
    ModelConfig c = base;
    c.nodes = 4;
    c.input_steps = 6;
    c.output_steps = 3;
    c.input_channels = 1;
    c.embed_dim = 2;
    c.hidden_dim = 4;
    c.heads = 2;
    c.dropout_input = 0.0;
    c.dropout_inner = 0.0;
    c.ff_dim = 8;
    c.fc_hidden = 16;
    return c;
}

/// Ring graph over `n` nodes.
inline Tensor ring_adjacency(std::size_t n) {
    auto a = Tensor::zeros({n, n});
    auto v = a.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
        v[i * n + (i + 1) % n] = 1.0;
        v[((i + 1) % n) * n + i] = 1.0;
    }
    return a;
}

/// Seeded random batch for a model configuration.
inline SampleBatch random_batch(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(batch * c.input_steps * c.nodes * c.input_channels), y(batch * c.output_steps * c.nodes);
    for (auto& v : x) v = standard_normal(rng);
    for (auto& v : y) v = standard_normal(rng);
    return {Tensor({batch, c.input_steps, c.nodes, c.input_channels}, std::move(x)),
            Tensor({batch, c.output_steps, c.nodes}, std::move(y))};
}

inline GradCheckReport run_grad_check(const ModelConfig& base, const GradCheckOptions& options = {}) {
    const ModelConfig c = tiny_config(base);
    Model model(c, c.graph_mode == GraphMode::static_graph ? std::optional<Tensor>(ring_adjacency(c.nodes)) : std::nullopt);
    return grad_check(model, random_batch(c, 2, c.seed + 1), options);
}

inline int cmd_gradcheck(const CommonOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        json j = opt.config_path.empty() ? json::object() : load_config_json(opt.config_path);
        for (const auto& o : opt.overrides) apply_override(j, o);
        if (opt.seed) j["seed"] = *opt.seed;
        RunConfig cfg = run_config_from_json(j);
        const GradCheckReport r = run_grad_check(cfg.model);
        log << "gradient check " << to_string(cfg.model.graph_mode) << "/" << to_string(cfg.model.gst2_variant)
            << ": " << r.checked << " elements, max relative error " << r.max_relative_error << " (worst "
            << r.worst.name << "[" << r.worst.index << "]: autodiff " << r.worst.analytic << ", numeric "
            << r.worst.numeric << "), tolerance " << r.tolerance << "\n";
        for (const auto& f : r.failures) {
            log << "  FAIL " << f.name << "[" << f.index << "] autodiff " << f.analytic << " numeric " << f.numeric
                << " rel " << f.relative_error << "\n";
        }
        return r.passed() ? int{kOk} : int{kDivergence};
    });
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const SynthOptions& synth, const std::string& out_dir, std::ostream& log = std::cout,
                     std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        SynthData d;
        try {
            d = synthesize(synth);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        const fs::path out = out_dir;
        write_file_atomic(out / "series.csv", to_csv(d.series.values));
        write_file_atomic(out / "adjacency.csv", to_csv(d.adjacency));
        log << "wrote " << d.series.steps() << " steps x " << d.series.nodes() << " nodes to " << out.string() << "\n";
        return int{kOk};
    });
}

}  // namespace gastgrn::cli
