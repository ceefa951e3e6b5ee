#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "gastgrn/errors.hpp"
#include "gastgrn/hooks.hpp"
#include "gastgrn/ops.hpp"
#include "gastgrn/parameters.hpp"

namespace gastgrn {

/// Training flag plus the generator that drives dropout masks.
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;
};

namespace detail {

inline Tensor maybe_dropout(const Tensor& x, double p, const ForwardContext& ctx) {
    if (!ctx.training || p == 0.0) return x;
    if (!ctx.rng) throw std::invalid_argument("training forward pass needs a random generator");
    return dropout(x, p, true, *ctx.rng);
}

}  // namespace detail

/// PE[t, 2c] = sin(t / 1000^(2c/d)), PE[t, 2c+1] = cos(t / 1000^(2c/d)).
inline Tensor positional_encoding(std::size_t steps, std::size_t dim) {
    if (dim == 0 || steps == 0) throw std::invalid_argument("positional encoding sizes must be positive");
    std::vector<double> pe(steps * dim);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < dim; ++j) {
            const std::size_t even = j - (j % 2);
            const double angle = static_cast<double>(t) /
                                 std::pow(1000.0, static_cast<double>(even) / static_cast<double>(dim));
            pe[t * dim + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor({steps, dim}, std::move(pe));
}

/// softmax(Q K^T / sqrt(d_k)) V over the second-to-last axis.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double weight_dropout = 0.0,
                                   const ForwardContext& ctx = {}) {
    if (q.rank() < 2 || q.rank() != k.rank() || k.rank() != v.rank()) {
        throw ShapeError("attention operands " + to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                         to_string(v.shape()) + " have inconsistent ranks");
    }
    if (q.dim(-1) != k.dim(-1) || k.dim(-2) != v.dim(-2)) {
        throw ShapeError("attention operands " + to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                         to_string(v.shape()) + " are incompatible");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
    Tensor weights = softmax(mul_scalar(matmul(q, transpose(k, -1, -2)), scale), -1);
    hooks::notify(hooks::Site::attention_weights, weights);
    return matmul(detail::maybe_dropout(weights, weight_dropout, ctx), v);
}

/// Per-head query/key/value projections and the shared output projection.
struct AttentionParams {
    std::vector<Tensor> query;  // h x [d, d/h]
    std::vector<Tensor> key;
    std::vector<Tensor> value;
    Tensor output;  // [d, d]

    std::size_t heads() const { return query.size(); }
    std::size_t model_dim() const { return output.dim(0); }

    static AttentionParams create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                  std::size_t heads, Rng& rng) {
        if (heads == 0 || dim % heads != 0) {
            throw ConfigError("hidden dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                              " heads");
        }
        const std::size_t head_dim = dim / heads;
        AttentionParams p;
        for (std::size_t j = 0; j < heads; ++j) {
            const std::string h = std::to_string(j);
            p.query.push_back(store.glorot(prefix + "query." + h, {dim, head_dim}, dim, head_dim, rng));
            p.key.push_back(store.glorot(prefix + "key." + h, {dim, head_dim}, dim, head_dim, rng));
            p.value.push_back(store.glorot(prefix + "value." + h, {dim, head_dim}, dim, head_dim, rng));
        }
        p.output = store.glorot(prefix + "output", {dim, dim}, dim, dim, rng);
        return p;
    }
};

/// Multi-head attention along axis -2. Queries and keys are projected from
/// `x`, values from `value_source`.
inline Tensor multi_head_attention(const Tensor& x, const Tensor& value_source, const AttentionParams& p,
                                   double weight_dropout = 0.0, const ForwardContext& ctx = {}) {
    if (x.dim(-1) != p.model_dim() || value_source.dim(-1) != p.model_dim()) {
        throw ShapeError("attention input " + to_string(x.shape()) + " does not match model dim " +
                         std::to_string(p.model_dim()));
    }
    std::vector<Tensor> heads;
    heads.reserve(p.heads());
    for (std::size_t j = 0; j < p.heads(); ++j) {
        heads.push_back(scaled_dot_attention(matmul(x, p.query[j]), matmul(x, p.key[j]),
                                             matmul(value_source, p.value[j]), weight_dropout, ctx));
    }
    return matmul(heads.size() == 1 ? heads.front() : concat(heads, -1), p.output);
}

namespace detail {

inline void require_hidden_sequence(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("expected [B,N,T,d] hidden sequence, got " + to_string(x.shape()));
}

}  // namespace detail

/// Attention across time steps for each (batch, node).
inline Tensor temporal_attention(const Tensor& x, const AttentionParams& p, double weight_dropout = 0.0,
                                 const ForwardContext& ctx = {}) {
    detail::require_hidden_sequence(x);
    return multi_head_attention(x, x, p, weight_dropout, ctx);
}

/// Attention across nodes for each (batch, time step).
inline Tensor spatial_attention(const Tensor& x, const AttentionParams& p, double weight_dropout = 0.0,
                                const ForwardContext& ctx = {}) {
    detail::require_hidden_sequence(x);
    const Tensor xt = permute(x, {0, 2, 1, 3});
    return permute(multi_head_attention(xt, xt, p, weight_dropout, ctx), {0, 2, 1, 3});
}

/// Temporal attention whose value stream is the spatial attention output.
inline Tensor stfa(const Tensor& x, const AttentionParams& fusion, const AttentionParams& spatial,
                   double weight_dropout = 0.0, const ForwardContext& ctx = {}) {
    detail::require_hidden_sequence(x);
    const Tensor s = spatial_attention(x, spatial, weight_dropout, ctx);
    return multi_head_attention(x, s, fusion, weight_dropout, ctx);
}

// ---------------------------------------------------------------------------
// Global awareness layers

enum class Gst2Variant { none, ta_only, sa_only, parallel, serial, fused };

inline std::string_view to_string(Gst2Variant v) {
    switch (v) {
        case Gst2Variant::none: return "none";
        case Gst2Variant::ta_only: return "ta_only";
        case Gst2Variant::sa_only: return "sa_only";
        case Gst2Variant::parallel: return "parallel";
        case Gst2Variant::serial: return "serial";
        case Gst2Variant::fused: return "fused";
    }
    return "?";
}

inline Gst2Variant parse_gst2_variant(std::string_view s) {
    for (auto v : {Gst2Variant::none, Gst2Variant::ta_only, Gst2Variant::sa_only, Gst2Variant::parallel,
                   Gst2Variant::serial, Gst2Variant::fused}) {
        if (s == to_string(v)) return v;
    }
    throw ConfigError("unknown gst2_variant '" + std::string(s) + "'");
}

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

struct Gst2Params {
    Gst2Variant variant = Gst2Variant::none;
    AttentionParams temporal;  // ta_only, parallel, serial
    AttentionParams spatial;   // sa_only, parallel, serial, fused
    AttentionParams fusion;    // fused
    Tensor concat_proj;        // parallel: [2d, d]
    Tensor ff_in_w, ff_in_b, ff_out_w, ff_out_b;
    std::vector<LayerNormParams> norms;

    static Gst2Params create(ParameterStore& store, const std::string& prefix, Gst2Variant variant, std::size_t dim,
                             std::size_t heads, std::size_t ff_dim, Rng& rng) {
        Gst2Params p;
        p.variant = variant;
        if (variant == Gst2Variant::none) return p;
        std::size_t norm_count = 2;
        switch (variant) {
            case Gst2Variant::ta_only:
                p.temporal = AttentionParams::create(store, prefix + "temporal.", dim, heads, rng);
                break;
            case Gst2Variant::sa_only:
                p.spatial = AttentionParams::create(store, prefix + "spatial.", dim, heads, rng);
                break;
            case Gst2Variant::parallel:
                p.temporal = AttentionParams::create(store, prefix + "temporal.", dim, heads, rng);
                p.spatial = AttentionParams::create(store, prefix + "spatial.", dim, heads, rng);
                p.concat_proj = store.glorot(prefix + "concat_proj", {2 * dim, dim}, 2 * dim, dim, rng);
                break;
            case Gst2Variant::serial:
                p.temporal = AttentionParams::create(store, prefix + "temporal.", dim, heads, rng);
                p.spatial = AttentionParams::create(store, prefix + "spatial.", dim, heads, rng);
                norm_count = 3;
                break;
            case Gst2Variant::fused:
                p.fusion = AttentionParams::create(store, prefix + "fusion.", dim, heads, rng);
                p.spatial = AttentionParams::create(store, prefix + "spatial.", dim, heads, rng);
                break;
            case Gst2Variant::none: break;
        }
        p.ff_in_w = store.glorot(prefix + "ff_in.weight", {dim, ff_dim}, dim, ff_dim, rng);
        p.ff_in_b = store.constant(prefix + "ff_in.bias", {ff_dim}, 0.0);
        p.ff_out_w = store.glorot(prefix + "ff_out.weight", {ff_dim, dim}, ff_dim, dim, rng);
        p.ff_out_b = store.constant(prefix + "ff_out.bias", {dim}, 0.0);
        for (std::size_t i = 0; i < norm_count; ++i) {
            const std::string n = prefix + "norm" + std::to_string(i) + ".";
            p.norms.push_back({store.constant(n + "gamma", {dim}, 1.0), store.constant(n + "beta", {dim}, 0.0)});
        }
        return p;
    }
};

/// Dropout rates: `input` on H + PE, `inner` on attention weights and the
/// feed-forward activation.
struct Gst2Dropout {
    double input = 0.0;
    double inner = 0.0;
};

namespace detail {

inline void require_variant(const Gst2Params& p, Gst2Variant expected) {
    if (p.variant != expected) {
        throw ConfigError("layer expects variant " + std::string(to_string(expected)) + " but parameters are " +
                          std::string(to_string(p.variant)));
    }
}

inline Tensor norm(const Tensor& x, const LayerNormParams& ln) { return layer_norm(x, ln.gamma, ln.beta, 1e-5); }

inline Tensor feed_forward(const Tensor& x, const Gst2Params& p, double inner_dropout, const ForwardContext& ctx) {
    Tensor hidden = relu(add(matmul(x, p.ff_in_w), p.ff_in_b));
    hidden = maybe_dropout(hidden, inner_dropout, ctx);
    return add(matmul(hidden, p.ff_out_w), p.ff_out_b);
}

inline Tensor embed_positions(const Tensor& h, const Gst2Dropout& rates, const ForwardContext& ctx) {
    require_hidden_sequence(h);
    return maybe_dropout(add(h, positional_encoding(h.dim(2), h.dim(3))), rates.input, ctx);
}

inline Tensor residual_ff(const Tensor& x, const Gst2Params& p, const LayerNormParams& ln, double inner,
                          const ForwardContext& ctx) {
    return norm(add(feed_forward(x, p, inner, ctx), x), ln);
}

}  // namespace detail

/// H_e = H + PE; H_p = LN(Concat(TA, SA) W_c + H_e); H_o = LN(FC(H_p) + H_p).
inline Tensor pgst2_layer(const Tensor& h, const Gst2Params& p, const Gst2Dropout& rates = {},
                          const ForwardContext& ctx = {}) {
    detail::require_variant(p, Gst2Variant::parallel);
    const Tensor he = detail::embed_positions(h, rates, ctx);
    const Tensor merged = matmul(concat_lastdim(temporal_attention(he, p.temporal, rates.inner, ctx),
                                                spatial_attention(he, p.spatial, rates.inner, ctx)),
                                 p.concat_proj);
    const Tensor hp = detail::norm(add(merged, he), p.norms[0]);
    return detail::residual_ff(hp, p, p.norms[1], rates.inner, ctx);
}

/// TA then SA in series, each with residual and layer norm, then FC.
inline Tensor sgst2_layer(const Tensor& h, const Gst2Params& p, const Gst2Dropout& rates = {},
                          const ForwardContext& ctx = {}) {
    detail::require_variant(p, Gst2Variant::serial);
    const Tensor he = detail::embed_positions(h, rates, ctx);
    const Tensor ht = detail::norm(add(temporal_attention(he, p.temporal, rates.inner, ctx), he), p.norms[0]);
    const Tensor hs = detail::norm(add(spatial_attention(ht, p.spatial, rates.inner, ctx), ht), p.norms[1]);
    return detail::residual_ff(hs, p, p.norms[2], rates.inner, ctx);
}

/// H_f = LN(STFA(H_e) + H_e); H_o = LN(FC(H_f) + H_f).
inline Tensor fgst2_layer(const Tensor& h, const Gst2Params& p, const Gst2Dropout& rates = {},
                          const ForwardContext& ctx = {}) {
    detail::require_variant(p, Gst2Variant::fused);
    const Tensor he = detail::embed_positions(h, rates, ctx);
    const Tensor hf = detail::norm(add(stfa(he, p.fusion, p.spatial, rates.inner, ctx), he), p.norms[0]);
    return detail::residual_ff(hf, p, p.norms[1], rates.inner, ctx);
}

/// Single-attention ablation layers: H_a = LN(Att(H_e) + H_e); H_o = LN(FC(H_a) + H_a).
inline Tensor single_attention_layer(const Tensor& h, const Gst2Params& p, const Gst2Dropout& rates = {},
                                     const ForwardContext& ctx = {}) {
    if (p.variant != Gst2Variant::ta_only && p.variant != Gst2Variant::sa_only) {
        throw ConfigError("single attention layer needs ta_only or sa_only, got " + std::string(to_string(p.variant)));
    }
    const Tensor he = detail::embed_positions(h, rates, ctx);
    const Tensor att = p.variant == Gst2Variant::ta_only ? temporal_attention(he, p.temporal, rates.inner, ctx)
                                                         : spatial_attention(he, p.spatial, rates.inner, ctx);
    const Tensor ha = detail::norm(add(att, he), p.norms[0]);
    return detail::residual_ff(ha, p, p.norms[1], rates.inner, ctx);
}

inline Tensor gst2_forward(const Tensor& h, const Gst2Params& p, const Gst2Dropout& rates = {},
                           const ForwardContext& ctx = {}) {
    switch (p.variant) {
        case Gst2Variant::none: return h;
        case Gst2Variant::ta_only:
        case Gst2Variant::sa_only: return single_attention_layer(h, p, rates, ctx);
        case Gst2Variant::parallel: return pgst2_layer(h, p, rates, ctx);
        case Gst2Variant::serial: return sgst2_layer(h, p, rates, ctx);
        case Gst2Variant::fused: return fgst2_layer(h, p, rates, ctx);
    }
    return h;
}

}  // namespace gastgrn
