#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "gastgrn/attention.hpp"
#include "gastgrn/errors.hpp"
#include "gastgrn/graph.hpp"
#include "gastgrn/recurrent.hpp"

namespace gastgrn {

enum class GraphMode { static_graph, adaptive, sequence_aware };

inline std::string_view to_string(GraphMode m) {
    switch (m) {
        case GraphMode::static_graph: return "static";
        case GraphMode::adaptive: return "adaptive";
        case GraphMode::sequence_aware: return "sequence_aware";
    }
    return "?";
}

inline GraphMode parse_graph_mode(std::string_view s) {
    for (auto m : {GraphMode::static_graph, GraphMode::adaptive, GraphMode::sequence_aware}) {
        if (s == to_string(m)) return m;
    }
    throw ConfigError("unknown graph_mode '" + std::string(s) + "'");
}

struct ModelConfig {
    std::size_t nodes = 0;
    std::size_t input_steps = 12;
    std::size_t output_steps = 12;
    std::size_t input_channels = 1;
    std::size_t embed_dim = 4;
    std::size_t hidden_dim = 32;
    std::size_t cheb_order = 1;
    std::size_t heads = 4;
    GraphMode graph_mode = GraphMode::sequence_aware;
    Gst2Variant gst2_variant = Gst2Variant::parallel;
    double dropout_input = 0.0;
    double dropout_inner = 0.0;
    std::size_t ff_dim = 0;  // 0 selects 4 * hidden_dim
    std::size_t fc_hidden = 256;
    std::uint64_t seed = 42;

    std::size_t effective_ff_dim() const { return ff_dim ? ff_dim : 4 * hidden_dim; }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (nodes == 0) fail("nodes must be positive");
        if (input_steps == 0) fail("input_steps must be positive");
        if (output_steps == 0) fail("output_steps must be at least 1");
        if (input_channels == 0) fail("input_channels must be positive");
        if (embed_dim < 1 || embed_dim > 10) fail("embed_dim must lie in 1..10");
        if (hidden_dim == 0) fail("hidden_dim must be positive");
        if (cheb_order < 1 || cheb_order > 3) fail("cheb_order must lie in 1..3");
        if (heads == 0 || hidden_dim % heads != 0) {
            fail("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by heads " + std::to_string(heads));
        }
        for (double p : {dropout_input, dropout_inner}) {
            if (!(p >= 0.0) || p >= 1.0) fail("dropout rates must lie in [0, 1)");
        }
        if (fc_hidden == 0) fail("fc_hidden must be positive");
    }
};

/// Recurrent graph encoder + global awareness layer + two-layer output head.
class Model {
public:
    explicit Model(ModelConfig cfg, std::optional<Tensor> adjacency = std::nullopt) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.graph_mode == GraphMode::static_graph) {
            if (!adjacency) throw ConfigError("graph_mode static requires an adjacency matrix");
            if (adjacency->rank() != 2 || adjacency->dim(0) != cfg_.nodes) {
                throw ConfigError("adjacency shape " + to_string(adjacency->shape()) + " does not match " +
                                  std::to_string(cfg_.nodes) + " nodes");
            }
            static_graph_ = StaticGraph::from_adjacency(*adjacency);
        }
        Rng rng(cfg_.seed);
        const std::size_t d = cfg_.hidden_dim;
        bank_ = EmbeddingBank::create(store_, "embedding.", cfg_.nodes, cfg_.input_steps, cfg_.embed_dim,
                                      cfg_.graph_mode == GraphMode::sequence_aware, rng);
        cell_ = GruCellParams::create(store_, "encoder.", cfg_.embed_dim, cfg_.cheb_order, cfg_.input_channels, d, rng);
        gst2_ = Gst2Params::create(store_, "gst2.", cfg_.gst2_variant, d, cfg_.heads, cfg_.effective_ff_dim(), rng);
        const std::size_t flat = cfg_.input_steps * d;
        head_hidden_w_ = store_.glorot("head.hidden.weight", {flat, cfg_.fc_hidden}, flat, cfg_.fc_hidden, rng);
        head_hidden_b_ = store_.constant("head.hidden.bias", {cfg_.fc_hidden}, 0.0);
        head_out_w_ = store_.glorot("head.out.weight", {cfg_.fc_hidden, cfg_.output_steps}, cfg_.fc_hidden,
                                    cfg_.output_steps, rng);
        head_out_b_ = store_.constant("head.out.bias", {cfg_.output_steps}, 0.0);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }
    const EmbeddingBank& embeddings() const { return bank_; }
    const GruCellParams& cell() const { return cell_; }
    const Gst2Params& gst2() const { return gst2_; }
    const std::optional<StaticGraph>& static_graph() const { return static_graph_; }

    GraphBundle build_graphs() const {
        switch (cfg_.graph_mode) {
            case GraphMode::sequence_aware: return build_sequence_graphs(bank_, cfg_.cheb_order);
            case GraphMode::adaptive: return build_adaptive_graph(bank_.node, cfg_.input_steps, cfg_.cheb_order);
            case GraphMode::static_graph:
                return build_static_graph(*static_graph_, bank_.node, cfg_.input_steps, cfg_.cheb_order);
        }
        throw ConfigError("unsupported graph mode");
    }

    /// Hidden representation after the global awareness layer, [B,N,T,d_h].
    Tensor encode(const Tensor& x, const ForwardContext& ctx = {}) const {
        check_input(x);
        const GraphBundle bundle = build_graphs();
        const Tensor h = encode_sequence(x, cell_, bundle);
        return gst2_forward(h, gst2_, {cfg_.dropout_input, cfg_.dropout_inner}, ctx);
    }

    /// X [B,T,N,C] -> predictions [B,T_out,N].
    Tensor forward(const Tensor& x, const ForwardContext& ctx = {}) const {
        const Tensor ho = encode(x, ctx);
        const std::size_t batch = x.dim(0), n = cfg_.nodes;
        const Tensor flat = reshape(ho, {batch, n, cfg_.input_steps * cfg_.hidden_dim});
        const Tensor hidden = relu(add(matmul(flat, head_hidden_w_), head_hidden_b_));
        const Tensor out = add(matmul(hidden, head_out_w_), head_out_b_);  // [B, N, T_out]
        return permute(out, {0, 2, 1});
    }

private:
    void check_input(const Tensor& x) const {
        if (x.rank() != 4 || x.dim(1) != cfg_.input_steps || x.dim(2) != cfg_.nodes || x.dim(3) != cfg_.input_channels) {
            throw ShapeError("model input " + to_string(x.shape()) + " does not match [B," +
                             std::to_string(cfg_.input_steps) + "," + std::to_string(cfg_.nodes) + "," +
                             std::to_string(cfg_.input_channels) + "]");
        }
    }

    ModelConfig cfg_;
    ParameterStore store_;
    std::optional<StaticGraph> static_graph_;
    EmbeddingBank bank_;
    GruCellParams cell_;
    Gst2Params gst2_;
    Tensor head_hidden_w_, head_hidden_b_, head_out_w_, head_out_b_;
};

/// Mean absolute error over every element.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("loss shapes differ: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    }
    return mean(abs(sub(pred, target)));
}

}  // namespace gastgrn
