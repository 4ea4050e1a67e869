#pragma once

#include <map>
#include <string>

#include "psra/rng.hpp"
#include "psra/tape.hpp"

namespace psra {

using GradMap = std::map<std::string, Array>;

// Named parameter set. Names are stable dotted paths (see README); iteration
// order is lexicographic, which pins the checkpoint byte layout.
class ParamStore {
public:
    void add(const std::string& name, Array a);
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    const Array& get(const std::string& name) const;
    Array& ref(const std::string& name);
    std::size_t size() const { return params_.size(); }

    const std::map<std::string, Array>& items() const { return params_; }
    std::map<std::string, Array>& items() { return params_; }

    // Checkpoint format: magic "PSRACKPT", u32 version, then per parameter
    // {u32 name length, name bytes, u32 rank, u32 dims..., f64 payload},
    // little-endian throughout.
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

private:
    std::map<std::string, Array> params_;
};

// View of a ParamStore for one forward pass. Trainable vars become tape
// leaves (created once, cached); frozen vars come out as constants, so the
// backward pass cannot reach them at all.
class ModelVars {
public:
    ModelVars(const ParamStore& store, Tape* tape, bool trainable)
        : store_(&store), tape_(tape), trainable_(trainable && tape != nullptr) {}

    TracedValue operator()(const std::string& name);

    // gradients of the given loss for every leaf this view created
    GradMap gradients(const TracedValue& loss);

    bool trainable() const { return trainable_; }

private:
    const ParamStore* store_;
    Tape* tape_;
    bool trainable_;
    std::map<std::string, int> leaves_;
};

// grads[name] += other[name] (missing entries are created); used for the
// fixed-order batch reduction
void grad_accumulate(GradMap& into, const GradMap& other);
void grad_scale(GradMap& g, double s);

Array init_normal(Shape shape, double std, Rng& rng);

}  // namespace psra
