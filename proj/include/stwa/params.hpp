#pragma once

#include <string>
#include <vector>

#include "stwa/common.hpp"
#include "stwa/tensor.hpp"

namespace stwa {

// Named trainable array. The value lives detached; forward passes mount
// it on a tape through BoundParams.
struct Parameter {
    std::string name;
    Tensor value;
};

class ParamStore {
public:
    std::size_t add(std::string name, Tensor value) {
        if (value.on_tape()) throw ValueError("ParamStore::add: value must be detached");
        for (const auto& p : params_)
            if (p.name == name) throw ValueError("ParamStore::add: duplicate parameter '" + name + "'");
        params_.push_back(Parameter{std::move(name), std::move(value)});
        return params_.size() - 1;
    }

    Parameter& at(std::size_t i) { return params_.at(i); }
    const Parameter& at(std::size_t i) const { return params_.at(i); }
    std::size_t count() const { return params_.size(); }

    std::size_t find(const std::string& name) const {
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name == name) return i;
        throw ValueError("ParamStore: no parameter named '" + name + "'");
    }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }

private:
    std::vector<Parameter> params_;
};

// Per-tape view of a ParamStore. Each parameter is mounted as a leaf at
// most once per tape, so gradients from every use accumulate into one
// node. With a null tape (evaluation) the detached values come back
// directly and nothing is recorded.
class BoundParams {
public:
    BoundParams(ParamStore& store, Tape* tape)
        : store_(store), tape_(tape), mounted_(store.count()) {}

    const Tensor& operator[](std::size_t idx) {
        if (!tape_) return store_.at(idx).value;
        Tensor& slot = mounted_[idx];
        if (slot.node < 0) slot = tape_->leaf(store_.at(idx).value);
        return slot;
    }

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }

    // Gradient of the mounted parameter after backward(); zeros if the
    // parameter was never used or never reached.
    Tensor grad(std::size_t idx) const {
        const Tensor& slot = mounted_.at(idx);
        if (!tape_ || slot.node < 0) return zeros(store_.at(idx).value.shape);
        return tape_->grad(slot);
    }

    ParamStore& store() { return store_; }

private:
    ParamStore& store_;
    Tape* tape_;
    std::vector<Tensor> mounted_;
};

// Shared initializer: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Tensor init_weight(Shape s, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return uniform(std::move(s), rng, -bound, bound);
}

}  // namespace stwa
