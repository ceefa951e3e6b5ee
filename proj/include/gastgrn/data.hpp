#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gastgrn/errors.hpp"
#include "gastgrn/random.hpp"
#include "gastgrn/tensor.hpp"

namespace gastgrn {

class ParseError : public DataError {
public:
    using DataError::DataError;
};

/// Flow readings, rows = time steps, columns = nodes.
struct TrafficSeries {
    Tensor values;  // [S, N]
    std::size_t interval_minutes = 5;

    std::size_t steps() const { return values.dim(0); }
    std::size_t nodes() const { return values.dim(1); }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view cell, double& out) {
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    if (cell.empty()) return false;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc{} && ptr == cell.data() + cell.size() && std::isfinite(out);
}

}  // namespace detail

/// Parses a headerless numeric CSV into a [rows, cols] tensor. Blank lines
/// are skipped.
inline Tensor parse_csv_matrix(std::istream& in, const std::string& source = "<stream>") {
    std::vector<double> values;
    std::size_t cols = 0, rows = 0, line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = detail::trim(line);
        if (row.empty()) continue;
        std::size_t count = 0, start = 0;
        while (true) {
            const std::size_t comma = row.find(',', start);
            const std::string_view cell =
                detail::trim(row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            double v = 0.0;
            if (!detail::parse_double(cell, v)) {
                throw ParseError(source + ": line " + std::to_string(line_no) + ", column " + std::to_string(count + 1) +
                                 ": non-numeric cell '" + std::string(cell) + "'");
            }
            values.push_back(v);
            ++count;
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (rows == 0) {
            cols = count;
        } else if (count != cols) {
            throw ParseError(source + ": line " + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                             " cells, found " + std::to_string(count));
        }
        ++rows;
    }
    if (rows == 0) throw ParseError(source + ": no data rows");
    return Tensor({rows, cols}, std::move(values));
}

inline Tensor read_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return parse_csv_matrix(in, path);
}

inline TrafficSeries load_series(const std::string& path) { return {read_csv_matrix(path), 5}; }

inline Tensor load_adjacency(const std::string& path) {
    Tensor a = read_csv_matrix(path);
    if (a.dim(0) != a.dim(1)) {
        throw ParseError(path + ": adjacency must be square, got " + std::to_string(a.dim(0)) + "x" + std::to_string(a.dim(1)));
    }
    return a;
}

inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/// Shortest round-trip decimal text, one row per leading index.
inline std::string to_csv(const Tensor& matrix) {
    const std::size_t rows = matrix.dim(0), cols = matrix.numel() / rows;
    std::string out;
    const auto v = matrix.values();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) out += ',';
            out += format_double(v[r * cols + c]);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting and windowing

struct Segment {
    Tensor values;  // [L, N]
    std::size_t offset = 0;

    std::size_t steps() const { return values.dim(0); }
};

struct Splits {
    Segment train, val, test;
};

namespace detail {

inline Segment slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
    const std::size_t cols = m.dim(1);
    const auto v = m.values();
    return {Tensor({end - begin, cols}, std::vector<double>(v.begin() + begin * cols, v.begin() + end * cols)), begin};
}

}  // namespace detail

/// Contiguous train/val/test segments; the first two cuts are floored and the
/// remainder goes to test. Each segment must hold at least one window.
inline Splits chronological_split(const TrafficSeries& series, std::size_t input_steps, std::size_t output_steps,
                                  std::size_t train_ratio = 6, std::size_t val_ratio = 2, std::size_t test_ratio = 2) {
    const std::size_t s = series.steps();
    const std::size_t total = train_ratio + val_ratio + test_ratio;
    if (total == 0) throw ConfigError("split ratios must not all be zero");
    const std::size_t n_train = s * train_ratio / total;
    const std::size_t n_val = s * val_ratio / total;
    const std::size_t need = input_steps + output_steps;
    const std::size_t n_test = s - n_train - n_val;
    for (auto [name, len] : {std::pair{"train", n_train}, std::pair{"val", n_val}, std::pair{"test", n_test}}) {
        if (len < need) {
            throw DataError(std::string("insufficient data: ") + name + " segment has " + std::to_string(len) +
                            " steps, needs at least " + std::to_string(need));
        }
    }
    return {detail::slice_rows(series.values, 0, n_train), detail::slice_rows(series.values, n_train, n_train + n_val),
            detail::slice_rows(series.values, n_train + n_val, s)};
}

/// Z-score statistics over a training segment.
struct Normalizer {
    double mean = 0.0;
    double std = 1.0;

    static Normalizer fit(const Tensor& values) {
        const auto v = values.values();
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var /= static_cast<double>(v.size());
        if (!(var > 0.0)) throw DataError("training segment has zero variance");
        return {m, std::sqrt(var)};
    }

    double normalize(double x) const { return (x - mean) / std; }
    double denormalize(double z) const { return z * std + mean; }

    Tensor normalize(const Tensor& t) const {
        std::vector<double> out(t.values().begin(), t.values().end());
        for (auto& x : out) x = normalize(x);
        return Tensor(t.shape(), std::move(out));
    }

    Tensor denormalize(const Tensor& t) const {
        std::vector<double> out(t.values().begin(), t.values().end());
        for (auto& x : out) x = denormalize(x);
        return Tensor(t.shape(), std::move(out));
    }
};

struct SampleBatch {
    Tensor x;  // [B, T, N, 1]
    Tensor y;  // [B, T_out, N]
};

/// Stride-1 sliding windows inside one segment.
class WindowSet {
public:
    WindowSet(Tensor values, std::size_t input_steps, std::size_t output_steps)
        : values_(std::move(values)), input_steps_(input_steps), output_steps_(output_steps) {
        if (values_.rank() != 2) throw ShapeError("window source must be [L,N], got " + to_string(values_.shape()));
        if (input_steps == 0 || output_steps == 0) throw ConfigError("window lengths must be positive");
        if (values_.dim(0) < input_steps + output_steps) {
            throw DataError("insufficient data: segment of " + std::to_string(values_.dim(0)) +
                            " steps is shorter than " + std::to_string(input_steps + output_steps));
        }
    }

    std::size_t size() const { return values_.dim(0) - input_steps_ - output_steps_ + 1; }
    std::size_t nodes() const { return values_.dim(1); }
    std::size_t input_steps() const { return input_steps_; }
    std::size_t output_steps() const { return output_steps_; }
    const Tensor& values() const { return values_; }

    /// X covers steps [i, i+T), Y covers [i+T, i+T+T_out).
    SampleBatch batch(std::span<const std::size_t> indices) const {
        const std::size_t n = nodes(), b = indices.size();
        const auto v = values_.values();
        std::vector<double> x(b * input_steps_ * n), y(b * output_steps_ * n);
        for (std::size_t k = 0; k < b; ++k) {
            const std::size_t i = indices[k];
            if (i >= size()) throw std::out_of_range("window index " + std::to_string(i) + " out of range");
            std::copy_n(v.begin() + i * n, input_steps_ * n, x.begin() + k * input_steps_ * n);
            std::copy_n(v.begin() + (i + input_steps_) * n, output_steps_ * n, y.begin() + k * output_steps_ * n);
        }
        return {Tensor({b, input_steps_, n, 1}, std::move(x)), Tensor({b, output_steps_, n}, std::move(y))};
    }

    SampleBatch sample(std::size_t i) const {
        const std::size_t idx[] = {i};
        return batch(idx);
    }

private:
    Tensor values_;
    std::size_t input_steps_, output_steps_;
};

inline WindowSet make_windows(const Tensor& segment, std::size_t input_steps, std::size_t output_steps) {
    return WindowSet(segment, input_steps, output_steps);
}

// ---------------------------------------------------------------------------
// Metrics

/// Truth values with magnitude at or below this are excluded from MAPE.
inline constexpr double kMapeZeroTolerance = 1e-6;

struct MetricsSummary {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape;     // percent; empty when every truth value is zero
    std::size_t mape_mask_count = 0;  // entries excluded from MAPE
    std::size_t count = 0;
};

struct MetricsReport : MetricsSummary {
    std::vector<MetricsSummary> horizons;
};

/// Metrics over raw (denormalized) values.
inline MetricsSummary compute_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size() || pred.empty()) throw ShapeError("metric inputs must be non-empty and equal in size");
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    std::size_t pct_count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (std::abs(truth[i]) > kMapeZeroTolerance) {
            pct_sum += std::abs(e / truth[i]);
            ++pct_count;
        }
    }
    MetricsSummary m;
    m.count = pred.size();
    m.mae = abs_sum / static_cast<double>(m.count);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(m.count));
    m.mape_mask_count = m.count - pct_count;
    if (pct_count > 0) m.mape = 100.0 * pct_sum / static_cast<double>(pct_count);
    return m;
}

/// Metrics of normalized predictions [B, T_out, N] against normalized truth,
/// reported in original units, overall and per horizon step.
inline MetricsReport metrics(const Tensor& pred, const Tensor& truth, const Normalizer& normalizer) {
    if (pred.shape() != truth.shape()) {
        throw ShapeError("metric shapes differ: " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
    }
    const Tensor p = normalizer.denormalize(pred);
    const Tensor t = normalizer.denormalize(truth);
    MetricsReport report;
    static_cast<MetricsSummary&>(report) = compute_metrics(p.values(), t.values());
    if (pred.rank() == 3) {
        const std::size_t b = pred.dim(0), horizon = pred.dim(1), n = pred.dim(2);
        for (std::size_t h = 0; h < horizon; ++h) {
            std::vector<double> ph, th;
            ph.reserve(b * n);
            th.reserve(b * n);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t base = (i * horizon + h) * n;
                ph.insert(ph.end(), p.values().begin() + base, p.values().begin() + base + n);
                th.insert(th.end(), t.values().begin() + base, t.values().begin() + base + n);
            }
            report.horizons.push_back(compute_metrics(ph, th));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
    std::size_t nodes = 8;
    std::size_t steps = 2016;
    std::uint64_t seed = 7;
    double noise_level = 0.02;  // Gaussian noise std as a fraction of each node's amplitude
    double diffusion = 0.3;     // weight of the neighbor-mixing term per tick
    std::size_t period = 288;
};

struct SynthData {
    TrafficSeries series;
    Tensor adjacency;  // [N, N], symmetric, zero diagonal
};

/// Random geometric graph plus daily sinusoids mixed by one diffusion step
/// per tick through the row-normalized adjacency.
inline SynthData synthesize(const SynthOptions& opt) {
    if (opt.nodes < 2) throw std::invalid_argument("synthetic data needs at least 2 nodes");
    if (opt.steps < opt.period) throw std::invalid_argument("synthetic data needs at least one full period of steps");
    if (opt.noise_level < 0 || opt.diffusion < 0 || opt.diffusion >= 1) {
        throw std::invalid_argument("noise_level must be >= 0 and diffusion in [0, 1)");
    }
    const std::size_t n = opt.nodes;
    Rng rng(opt.seed);
    std::vector<double> px(n), py(n);
    for (std::size_t i = 0; i < n; ++i) {
        px[i] = uniform01(rng);
        py[i] = uniform01(rng);
    }
    const double radius = std::sqrt(2.5 * std::log(static_cast<double>(n)) / (std::numbers::pi * static_cast<double>(n)));
    auto dist = [&](std::size_t i, std::size_t j) { return std::hypot(px[i] - px[j], py[i] - py[j]); };
    std::vector<double> adj(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dist(i, j) < radius) adj[i * n + j] = adj[j * n + i] = 1.0;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        bool isolated = true;
        for (std::size_t j = 0; j < n; ++j) isolated = isolated && adj[i * n + j] == 0.0;
        if (!isolated) continue;
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && dist(i, j) < dist(i, best)) best = j;
        }
        adj[i * n + best] = adj[best * n + i] = 1.0;
    }
    std::vector<double> amp(n), offset(n), phase(n);
    for (std::size_t i = 0; i < n; ++i) {
        amp[i] = uniform(rng, 40.0, 120.0);
        offset[i] = amp[i] + uniform(rng, 20.0, 60.0);
        phase[i] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    std::vector<double> degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) degree[i] += adj[i * n + j];
    }
    const double w = opt.diffusion;
    std::vector<double> state(n), next(n), values(opt.steps * n);
    for (std::size_t t = 0; t < opt.steps; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double base =
                offset[i] + amp[i] * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(opt.period) + phase[i]);
            double mixed = 0.0;
            if (t > 0 && w > 0) {
                for (std::size_t j = 0; j < n; ++j) mixed += adj[i * n + j] * state[j];
                mixed /= degree[i];
            }
            next[i] = t == 0 || w == 0 ? base : (1.0 - w) * base + w * mixed;
        }
        state.swap(next);
        for (std::size_t i = 0; i < n; ++i) {
            double v = state[i];
            if (opt.noise_level > 0) v += opt.noise_level * amp[i] * standard_normal(rng);
            values[t * n + i] = std::max(0.0, v);
        }
    }
    return {{Tensor({opt.steps, n}, std::move(values)), 5}, Tensor({n, n}, std::move(adj))};
}

}  // namespace gastgrn
