#pragma once

#include <charconv>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gastgrn/data.hpp"
#include "gastgrn/io.hpp"
#include "gastgrn/model.hpp"
#include "gastgrn/train.hpp"

namespace gastgrn {

using json = nlohmann::json;

/// Everything one run needs: model, optimizer and data source.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string series_path;
    std::string adjacency_path;
    std::size_t synth_nodes = 0;  // > 0 generates data instead of reading series_path
    std::size_t synth_steps = 2016;
    std::uint64_t synth_seed = 7;
    double synth_noise = 0.02;
    double synth_diffusion = 0.3;

    bool uses_synth() const { return synth_nodes > 0; }

    SynthOptions synth_options() const {
        SynthOptions o;
        o.nodes = synth_nodes;
        o.steps = synth_steps;
        o.seed = synth_seed;
        o.noise_level = synth_noise;
        o.diffusion = synth_diffusion;
        return o;
    }

    /// Checks everything that does not depend on the data itself.
    void validate() const {
        if (series_path.empty() && !uses_synth()) {
            throw ConfigError("config field 'series_path' is required (or set 'synth_nodes' to generate data)");
        }
        if (model.input_channels != 1) throw ConfigError("input_channels must be 1: only flow is modeled");
        ModelConfig probe = model;
        if (probe.nodes == 0) probe.nodes = 1;
        probe.validate();
        train.validate();
    }
};

inline json to_json(const RunConfig& c) {
    const auto& m = c.model;
    const auto& t = c.train;
    return json{
        {"nodes", m.nodes},
        {"input_steps", m.input_steps},
        {"output_steps", m.output_steps},
        {"input_channels", m.input_channels},
        {"embed_dim", m.embed_dim},
        {"hidden_dim", m.hidden_dim},
        {"cheb_order", m.cheb_order},
        {"heads", m.heads},
        {"graph_mode", std::string(to_string(m.graph_mode))},
        {"gst2_variant", std::string(to_string(m.gst2_variant))},
        {"dropout_input", m.dropout_input},
        {"dropout_inner", m.dropout_inner},
        {"ff_dim", m.ff_dim},
        {"fc_hidden", m.fc_hidden},
        {"seed", m.seed},
        {"lr", t.lr},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"eps", t.eps},
        {"weight_decay", t.weight_decay},
        {"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"batch_size", t.batch_size},
        {"series_path", c.series_path},
        {"adjacency_path", c.adjacency_path},
        {"synth_nodes", c.synth_nodes},
        {"synth_steps", c.synth_steps},
        {"synth_seed", c.synth_seed},
        {"synth_noise", c.synth_noise},
        {"synth_diffusion", c.synth_diffusion},
    };
}

namespace detail {

template <class T>
T config_field(const json& j, const char* key, const T& fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) {
                if (it->is_number_integer() || (it->is_number_float() && it->get<double>() < 0)) {
                    throw ConfigError(std::string("config field '") + key + "' must be nonnegative");
                }
                if (!it->is_number_integer()) throw ConfigError(std::string("config field '") + key + "' must be an integer");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw ConfigError(std::string("config field '") + key + "' must be a number");
        } else {
            if (!it->is_string()) throw ConfigError(std::string("config field '") + key + "' must be a string");
        }
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

}  // namespace detail

/// Parses a flat config object; unknown keys are rejected.
inline RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const RunConfig defaults;
    const json known = to_json(defaults);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    RunConfig c;
    auto& m = c.model;
    auto& t = c.train;
    using detail::config_field;
    m.nodes = config_field(j, "nodes", m.nodes);
    m.input_steps = config_field(j, "input_steps", m.input_steps);
    m.output_steps = config_field(j, "output_steps", m.output_steps);
    m.input_channels = config_field(j, "input_channels", m.input_channels);
    m.embed_dim = config_field(j, "embed_dim", m.embed_dim);
    m.hidden_dim = config_field(j, "hidden_dim", m.hidden_dim);
    m.cheb_order = config_field(j, "cheb_order", m.cheb_order);
    m.heads = config_field(j, "heads", m.heads);
    m.graph_mode = parse_graph_mode(config_field(j, "graph_mode", std::string(to_string(m.graph_mode))));
    m.gst2_variant = parse_gst2_variant(config_field(j, "gst2_variant", std::string(to_string(m.gst2_variant))));
    m.dropout_input = config_field(j, "dropout_input", m.dropout_input);
    m.dropout_inner = config_field(j, "dropout_inner", m.dropout_inner);
    m.ff_dim = config_field(j, "ff_dim", m.ff_dim);
    m.fc_hidden = config_field(j, "fc_hidden", m.fc_hidden);
    m.seed = config_field(j, "seed", m.seed);
    t.seed = m.seed;
    t.lr = config_field(j, "lr", t.lr);
    t.beta1 = config_field(j, "beta1", t.beta1);
    t.beta2 = config_field(j, "beta2", t.beta2);
    t.eps = config_field(j, "eps", t.eps);
    t.weight_decay = config_field(j, "weight_decay", t.weight_decay);
    t.max_epochs = config_field(j, "max_epochs", t.max_epochs);
    t.patience = config_field(j, "patience", t.patience);
    t.batch_size = config_field(j, "batch_size", t.batch_size);
    c.series_path = config_field(j, "series_path", c.series_path);
    c.adjacency_path = config_field(j, "adjacency_path", c.adjacency_path);
    c.synth_nodes = config_field(j, "synth_nodes", c.synth_nodes);
    c.synth_steps = config_field(j, "synth_steps", c.synth_steps);
    c.synth_seed = config_field(j, "synth_seed", c.synth_seed);
    c.synth_noise = config_field(j, "synth_noise", c.synth_noise);
    c.synth_diffusion = config_field(j, "synth_diffusion", c.synth_diffusion);
    return c;
}

/// Applies one `key=value` override, parsing the value with the type of the
/// key's default.
inline void apply_override(json& j, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override '" + std::string(assignment) + "' must have the form key=value");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string value(assignment.substr(eq + 1));
    const json known = to_json(RunConfig{});
    auto it = known.find(key);
    if (it == known.end()) throw ConfigError("unknown config key '" + key + "'");
    if (it->is_string()) {
        j[key] = value;
        return;
    }
    if (it->is_number_unsigned()) {
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc{} || ptr != value.data() + value.size()) {
            throw ConfigError("override for '" + key + "' needs a nonnegative integer, got '" + value + "'");
        }
        j[key] = v;
        return;
    }
    double v = 0.0;
    if (!detail::parse_double(value, v)) throw ConfigError("override for '" + key + "' needs a number, got '" + value + "'");
    j[key] = v;
}

inline json load_config_json(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
}

}  // namespace gastgrn
