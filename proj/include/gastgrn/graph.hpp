#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gastgrn/hooks.hpp"
#include "gastgrn/ops.hpp"
#include "gastgrn/parameters.hpp"
#include "gastgrn/random.hpp"

namespace gastgrn {

class InvalidGraph : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Learnable node and position embeddings.
///
/// `position`, `ln_gamma` and `ln_beta` are only allocated when the bank
/// feeds sequence-aware graph learning.
struct EmbeddingBank {
    Tensor node;      // [N, d_e]
    Tensor position;  // [T, 1, d_e]
    Tensor ln_gamma;  // [d_e]
    Tensor ln_beta;   // [d_e]

    std::size_t nodes() const { return node.dim(0); }
    std::size_t embed_dim() const { return node.dim(1); }
    bool sequence_aware() const { return position.defined(); }

    static EmbeddingBank create(ParameterStore& store, const std::string& prefix, std::size_t nodes,
                                std::size_t steps, std::size_t embed_dim, bool with_position, Rng& rng) {
        if (embed_dim == 0 || nodes == 0 || steps == 0) throw std::invalid_argument("embedding sizes must be positive");
        const double bound = std::sqrt(1.0 / static_cast<double>(embed_dim));
        EmbeddingBank bank;
        bank.node = store.uniform(prefix + "node", {nodes, embed_dim}, bound, rng);
        if (with_position) {
            bank.position = store.uniform(prefix + "position", {steps, 1, embed_dim}, bound, rng);
            bank.ln_gamma = store.constant(prefix + "ln_gamma", {embed_dim}, 1.0);
            bank.ln_beta = store.constant(prefix + "ln_beta", {embed_dim}, 0.0);
        }
        return bank;
    }
};

/// Per-step propagation matrices and their Chebyshev stack.
struct GraphBundle {
    Tensor laplacians;  // [T, N, N]
    Tensor cheb_stack;  // [K+1, T, N, N]
    Tensor embeddings;  // [T, N, d_e]: node embedding used for node-adaptive parameters at each step

    std::size_t steps() const { return laplacians.dim(0); }
    std::size_t nodes() const { return laplacians.dim(1); }
    std::size_t order() const { return cheb_stack.dim(0) - 1; }
};

/// Everything a graph convolution needs at one time step.
struct StepGraph {
    Tensor cheb;       // [K+1, N, N]
    Tensor embedding;  // [N, d_e]
};

inline StepGraph step_graph(const GraphBundle& bundle, std::size_t t) {
    if (t >= bundle.steps()) {
        throw std::out_of_range("time index " + std::to_string(t) + " out of range for " +
                                std::to_string(bundle.steps()) + " steps");
    }
    return {select(bundle.cheb_stack, 1, t), select(bundle.embeddings, 0, t)};
}

/// [T_0(L), ..., T_K(L)] for a batch of matrices `lap` of shape [T, N, N].
inline Tensor chebyshev_stack(const Tensor& lap, std::size_t order) {
    if (lap.rank() != 3 || lap.dim(1) != lap.dim(2)) {
        throw ShapeError("chebyshev_stack expects [T,N,N], got " + to_string(lap.shape()));
    }
    const std::size_t steps = lap.dim(0), n = lap.dim(1);
    std::vector<double> eye(steps * n * n, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t i = 0; i < n; ++i) eye[(t * n + i) * n + i] = 1.0;
    }
    std::vector<Tensor> terms{Tensor({steps, n, n}, std::move(eye))};
    if (order >= 1) terms.push_back(lap);
    for (std::size_t k = 2; k <= order; ++k) {
        terms.push_back(sub(mul_scalar(matmul(lap, terms[k - 1]), 2.0), terms[k - 2]));
    }
    return stack(terms, 0);
}

namespace detail {

inline Tensor replicate_steps(const Tensor& x, std::size_t steps) { return stack(std::vector<Tensor>(steps, x), 0); }

}  // namespace detail

/// E[i] = LayerNorm(E_n + E_p[i]); L[i] = softmax(E[i] E[i]^T) over rows.
inline GraphBundle build_sequence_graphs(const EmbeddingBank& bank, std::size_t order) {
    if (!bank.sequence_aware()) throw std::invalid_argument("embedding bank has no position embedding");
    const std::size_t d = bank.embed_dim(), steps = bank.position.dim(0);
    if (bank.position.shape() != Shape{steps, 1, d}) {
        throw ShapeError("position embedding shape " + to_string(bank.position.shape()) + " inconsistent with node embedding " +
                         to_string(bank.node.shape()));
    }
    Tensor e = layer_norm(add(bank.node, bank.position), bank.ln_gamma, bank.ln_beta);  // [T, N, d]
    Tensor lap = softmax(matmul(e, transpose(e, 1, 2)), -1);
    hooks::notify(hooks::Site::learned_adjacency, lap);
    GraphBundle bundle;
    bundle.laplacians = lap;
    bundle.cheb_stack = chebyshev_stack(lap, order);
    bundle.embeddings = e;
    return bundle;
}

/// Time-invariant L = softmax(E_n E_n^T), replicated over `steps`.
inline GraphBundle build_adaptive_graph(const Tensor& node_embedding, std::size_t steps, std::size_t order) {
    if (node_embedding.rank() != 2) throw ShapeError("node embedding must be [N,d], got " + to_string(node_embedding.shape()));
    const std::size_t n = node_embedding.dim(0);
    Tensor lap = softmax(matmul(node_embedding, transpose(node_embedding, 0, 1)), -1);
    hooks::notify(hooks::Site::learned_adjacency, lap);
    Tensor single = chebyshev_stack(reshape(lap, {1, n, n}), order);  // [K+1, 1, N, N]
    GraphBundle bundle;
    bundle.laplacians = detail::replicate_steps(lap, steps);
    bundle.cheb_stack = concat(std::vector<Tensor>(steps, single), 1);
    bundle.embeddings = detail::replicate_steps(node_embedding, steps);
    return bundle;
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration with a Rayleigh-quotient estimate. Stops once the eigen-residual
/// ||M v - lambda v|| drops below `tol`; returns `fallback` after `max_iter`
/// iterations without convergence.
inline double estimate_lambda_max(const Tensor& matrix, double tol = 1e-6, int max_iter = 1000, double fallback = 2.0,
                                  bool* converged = nullptr) {
    const std::size_t n = matrix.dim(0);
    const auto m = matrix.values();
    Rng rng(0x5eed);
    std::vector<double> v(n), w(n);
    double norm = 0.0;
    for (auto& x : v) {
        x = uniform(rng, 0.5, 1.5) * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    if (converged) *converged = false;
    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += m[i * n + j] * v[j];
            w[i] = s;
        }
        double lambda = 0.0, wn = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            lambda += v[i] * w[i];
            wn += w[i] * w[i];
        }
        double residual = 0.0;
        for (std::size_t i = 0; i < n; ++i) residual += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
        if (std::sqrt(residual) < tol) {
            if (converged) *converged = true;
            return lambda;
        }
        wn = std::sqrt(wn);
        if (wn == 0.0) break;
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
    }
    return fallback;
}

/// Fixed road-network graph and its scaled Laplacian (2/lambda_max) L - I.
struct StaticGraph {
    Tensor adjacency;  // [N, N]
    Tensor laplacian;  // I - D^{-1/2} A D^{-1/2}
    Tensor scaled;     // (2 / lambda_max) L - I
    double lambda_max = 2.0;
    bool converged = false;

    std::size_t nodes() const { return adjacency.dim(0); }

    static StaticGraph from_adjacency(const Tensor& adjacency) {
        if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
            throw InvalidGraph("adjacency must be square, got " + to_string(adjacency.shape()));
        }
        const std::size_t n = adjacency.dim(0);
        const auto a = adjacency.values();
        std::vector<double> degree(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double x = a[i * n + j];
                if (!std::isfinite(x) || x < 0) throw InvalidGraph("adjacency entries must be finite and nonnegative");
                if (std::abs(x - a[j * n + i]) > 1e-12) {
                    throw InvalidGraph("adjacency is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
                }
                degree[i] += x;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (degree[i] <= 0) throw InvalidGraph("node " + std::to_string(i) + " has zero degree");
        }
        std::vector<double> lap(n * n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                lap[i * n + j] = (i == j ? 1.0 : 0.0) - a[i * n + j] / std::sqrt(degree[i] * degree[j]);
            }
        }
        StaticGraph g;
        g.adjacency = adjacency.clone();
        g.laplacian = Tensor({n, n}, lap);
        g.lambda_max = estimate_lambda_max(g.laplacian, 1e-6, 1000, 2.0, &g.converged);
        const double scale = 2.0 / g.lambda_max;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) lap[i * n + j] = scale * lap[i * n + j] - (i == j ? 1.0 : 0.0);
        }
        g.scaled = Tensor({n, n}, std::move(lap));
        return g;
    }
};

/// Constant scaled Laplacian replicated over `steps`; node-adaptive
/// parameters still come from the learnable `node_embedding`.
inline GraphBundle build_static_graph(const StaticGraph& graph, const Tensor& node_embedding, std::size_t steps,
                                      std::size_t order) {
    const std::size_t n = graph.nodes();
    if (node_embedding.dim(0) != n) {
        throw ShapeError("node embedding has " + std::to_string(node_embedding.dim(0)) + " rows but graph has " +
                         std::to_string(n) + " nodes");
    }
    GraphBundle bundle;
    {
        NoGradGuard no_grad;
        Tensor single = chebyshev_stack(reshape(graph.scaled, {1, n, n}), order);
        bundle.laplacians = detail::replicate_steps(graph.scaled, steps);
        bundle.cheb_stack = concat(std::vector<Tensor>(steps, single), 1);
    }
    bundle.embeddings = detail::replicate_steps(node_embedding, steps);
    return bundle;
}

/// Node-adaptive weight and bias pools shared across time steps.
struct SgcnParams {
    Tensor weight_pool;  // [d_e, K+1, C_in, C_out]
    Tensor bias_pool;    // [d_e, C_out]

    std::size_t order() const { return weight_pool.dim(1) - 1; }
    std::size_t in_channels() const { return weight_pool.dim(2); }
    std::size_t out_channels() const { return weight_pool.dim(3); }

    static SgcnParams create(ParameterStore& store, const std::string& prefix, std::size_t embed_dim,
                             std::size_t order, std::size_t in_channels, std::size_t out_channels, Rng& rng) {
        SgcnParams p;
        p.weight_pool = store.glorot(prefix + "weight_pool", {embed_dim, order + 1, in_channels, out_channels},
                                     (order + 1) * in_channels, out_channels, rng);
        p.bias_pool = store.constant(prefix + "bias_pool", {embed_dim, out_channels}, 0.0);
        return p;
    }
};

/// Z[b,n] = sum_k (T_k X[b])[n] . Theta[n,k] + beta[n], with Theta = E W and
/// beta = E b generated from the step's node embedding E.
inline Tensor sgcn_forward(const Tensor& x, const StepGraph& step, const SgcnParams& params) {
    if (x.rank() != 3) throw ShapeError("graph convolution input must be [B,N,C], got " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), n = x.dim(1), c_in = x.dim(2);
    const std::size_t terms = step.cheb.dim(0), d = step.embedding.dim(1), c_out = params.out_channels();
    if (step.cheb.dim(1) != n || step.embedding.dim(0) != n) {
        throw ShapeError("graph has " + std::to_string(step.cheb.dim(1)) + " nodes but input " + to_string(x.shape()));
    }
    if (params.in_channels() != c_in || params.weight_pool.dim(1) != terms || params.weight_pool.dim(0) != d) {
        throw ShapeError("weight pool " + to_string(params.weight_pool.shape()) + " incompatible with input " +
                         to_string(x.shape()) + " and " + std::to_string(terms) + " Chebyshev terms");
    }
    Tensor propagated = matmul(step.cheb, reshape(x, {batch, 1, n, c_in}));  // [B, K+1, N, C_in]
    propagated = reshape(permute(propagated, {0, 2, 1, 3}), {batch, n, 1, terms * c_in});
    Tensor theta = reshape(matmul(step.embedding, reshape(params.weight_pool, {d, terms * c_in * c_out})),
                           {n, terms * c_in, c_out});
    Tensor z = reshape(matmul(propagated, theta), {batch, n, c_out});
    return add(z, matmul(step.embedding, params.bias_pool));
}

inline Tensor sgcn_forward(const Tensor& x, const GraphBundle& bundle, const SgcnParams& params, std::size_t t) {
    return sgcn_forward(x, step_graph(bundle, t), params);
}

}  // namespace gastgrn
