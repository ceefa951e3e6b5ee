#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gastgrn/random.hpp"
#include "gastgrn/tensor.hpp"

namespace gastgrn {

/// Ordered registry of every learnable tensor in a model.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    Tensor add(const std::string& name, Tensor tensor) {
        if (index_.contains(name)) throw std::logic_error("duplicate parameter name: " + name);
        tensor.set_requires_grad(true);
        index_.emplace(name, entries_.size());
        entries_.push_back({name, tensor});
        return tensor;
    }

    Tensor uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
        std::vector<double> v(numel_of(shape));
        for (auto& x : v) x = gastgrn::uniform(rng, -bound, bound);
        return add(name, Tensor(std::move(shape), std::move(v)));
    }

    /// Glorot-uniform with explicit fan sizes.
    Tensor glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        return uniform(name, std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
    }

    Tensor constant(const std::string& name, Shape shape, double value) {
        return add(name, Tensor::full(std::move(shape), value));
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool contains(const std::string& name) const { return index_.contains(name); }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return entries_[it->second].tensor;
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void clear_grads() {
        for (auto& e : entries_) e.tensor.clear_grad();
    }

    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
        return out;
    }

    void restore(const std::vector<std::vector<double>>& values) {
        if (values.size() != entries_.size()) throw std::invalid_argument("snapshot size mismatch");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            auto dst = entries_[i].tensor.mutable_values();
            if (values[i].size() != dst.size()) throw std::invalid_argument("snapshot shape mismatch for " + entries_[i].name);
            std::copy(values[i].begin(), values[i].end(), dst.begin());
        }
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace gastgrn
