#pragma once

#include <functional>

#include "gastgrn/tensor.hpp"

namespace gastgrn::hooks {

enum class Site { attention_weights, learned_adjacency };

using Observer = std::function<void(Site, const Tensor&)>;

inline Observer& observer_slot() {
    thread_local Observer observer;
    return observer;
}

inline void notify(Site site, const Tensor& t) {
    if (auto& obs = observer_slot()) obs(site, t);
}

/// Installs an observer for stochastic matrices produced on this thread.
class ScopedObserver {
public:
    explicit ScopedObserver(Observer obs) : previous_(std::move(observer_slot())) { observer_slot() = std::move(obs); }
    ~ScopedObserver() { observer_slot() = std::move(previous_); }
    ScopedObserver(const ScopedObserver&) = delete;
    ScopedObserver& operator=(const ScopedObserver&) = delete;

private:
    Observer previous_;
};

}  // namespace gastgrn::hooks
