#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gastgrn/random.hpp"
#include "gastgrn/tensor.hpp"

namespace testutil {

using gastgrn::Rng;
using gastgrn::Shape;
using gastgrn::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(gastgrn::numel_of(shape));
    for (auto& x : v) x = gastgrn::uniform(rng, lo, hi);
    return Tensor(shape, std::move(v), requires_grad);
}

/// Largest error |autodiff - numeric| / max(1, |numeric|) over every element
/// of every input. `f` must build a scalar from the inputs.
inline double max_fd_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-6) {
    for (auto& t : inputs) t.clear_grad();
    gastgrn::Tape::current().clear();
    gastgrn::backward(f());
    double worst = 0.0;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        auto v = t.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            double fp = 0.0, fm = 0.0;
            {
                gastgrn::NoGradGuard guard;
                v[i] = saved + h;
                fp = f().item();
                v[i] = saved - h;
                fm = f().item();
            }
            v[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max(1.0, std::abs(numeric));
            worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
        }
    }
    gastgrn::Tape::current().clear();
    return worst;
}

/// Weighted scalar sum with fixed pseudo-random weights so every output
/// element contributes a distinct gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor w = random_tensor(y.shape(), rng, false);
    return gastgrn::sum(gastgrn::mul(y, w));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return a.size() == b.size() ? m : INFINITY;
}

}  // namespace testutil
