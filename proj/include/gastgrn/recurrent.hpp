#pragma once

#include <string>
#include <vector>

#include "gastgrn/graph.hpp"

namespace gastgrn {

/// Three independent graph convolutions: update gate, reset gate, candidate.
struct GruCellParams {
    SgcnParams gate_z;
    SgcnParams gate_r;
    SgcnParams candidate;

    std::size_t hidden_dim() const { return gate_z.out_channels(); }
    std::size_t input_channels() const { return gate_z.in_channels() - hidden_dim(); }

    static GruCellParams create(ParameterStore& store, const std::string& prefix, std::size_t embed_dim,
                                std::size_t order, std::size_t input_channels, std::size_t hidden_dim, Rng& rng) {
        const std::size_t c_in = input_channels + hidden_dim;
        return {SgcnParams::create(store, prefix + "gate_z.", embed_dim, order, c_in, hidden_dim, rng),
                SgcnParams::create(store, prefix + "gate_r.", embed_dim, order, c_in, hidden_dim, rng),
                SgcnParams::create(store, prefix + "candidate.", embed_dim, order, c_in, hidden_dim, rng)};
    }
};

inline Tensor gru_cell_step(const Tensor& x_t, const Tensor& h_prev, const GruCellParams& cell, const StepGraph& step) {
    if (x_t.rank() != 3 || h_prev.rank() != 3 || x_t.dim(0) != h_prev.dim(0) || x_t.dim(1) != h_prev.dim(1) ||
        h_prev.dim(2) != cell.hidden_dim() || x_t.dim(2) != cell.input_channels()) {
        throw ShapeError("recurrent step input " + to_string(x_t.shape()) + " / state " + to_string(h_prev.shape()) +
                         " do not match the cell");
    }
    const Tensor xh = concat_lastdim(x_t, h_prev);
    const Tensor z = sigmoid(sgcn_forward(xh, step, cell.gate_z));
    const Tensor r = sigmoid(sgcn_forward(xh, step, cell.gate_r));
    const Tensor candidate = tanh(sgcn_forward(concat_lastdim(x_t, mul(r, h_prev)), step, cell.candidate));
    return add(mul(z, h_prev), mul(rsub_scalar(1.0, z), candidate));
}

inline Tensor gru_cell_step(const Tensor& x_t, const Tensor& h_prev, const GruCellParams& cell,
                            const GraphBundle& bundle, std::size_t t) {
    return gru_cell_step(x_t, h_prev, cell, step_graph(bundle, t));
}

/// Runs the cell over X [B,T,N,C] from a zero state and returns the stacked
/// hidden sequence [B,N,T,d_h].
inline Tensor encode_sequence(const Tensor& x, const GruCellParams& cell, const GraphBundle& bundle) {
    if (x.rank() != 4) throw ShapeError("sequence input must be [B,T,N,C], got " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), steps = x.dim(1), n = x.dim(2);
    if (steps > bundle.steps()) {
        throw ShapeError("input has " + std::to_string(steps) + " steps but graphs cover " + std::to_string(bundle.steps()));
    }
    Tensor h = Tensor::zeros({batch, n, cell.hidden_dim()});
    std::vector<Tensor> states;
    states.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        h = gru_cell_step(select(x, 1, t), h, cell, step_graph(bundle, t));
        states.push_back(h);
    }
    return stack(states, 2);
}

}  // namespace gastgrn
