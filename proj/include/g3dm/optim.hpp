#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "g3dm/tensor.hpp"

namespace g3dm {

// Ordered, name-addressed collection of parameter tensors (weights, biases,
// normalization statistics). Order is insertion order and is preserved by
// checkpoints.
class ParamSet {
public:
    void add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamSet: no tensor named " + name);
        return tensors_[it->second];
    }

    Tensor& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamSet: no tensor named " + name);
        return tensors_[it->second];
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const Tensor& at(std::size_t i) const { return tensors_[i]; }
    Tensor& at(std::size_t i) { return tensors_[i]; }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamHyper {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;  // decoupled
};

// First/second-moment accumulators, keyed the same way as the ParamSet they
// follow.
struct AdamState {
    std::unordered_map<std::string, Tensor> m;
    std::unordered_map<std::string, Tensor> v;
    long step = 0;
};

// One Adam step with decoupled weight decay. Entries of `params` without a
// gradient in `grads` (for example running statistics) are left untouched.
inline ParamSet adam_update(const ParamSet& params,
                            const std::unordered_map<std::string, Tensor>& grads,
                            AdamState& state, const AdamHyper& hyper) {
    ParamSet out;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names()[i];
        const Tensor& p = params.at(i);
        auto git = grads.find(name);
        if (git == grads.end()) {
            out.add(name, p);
            continue;
        }
        const Tensor& g = git->second;
        if (!g.same_shape(p))
            throw std::invalid_argument("adam_update: gradient shape mismatch for " + name);
        for (std::size_t j = 0; j < g.size(); ++j)
            if (!std::isfinite(g[j]))
                throw std::runtime_error("adam_update: non-finite gradient in parameter " + name);

        Tensor& m = state.m.try_emplace(name, Tensor(p.shape())).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor(p.shape())).first->second;
        Tensor np = p;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            np[j] -= hyper.lr * (mhat / (std::sqrt(vhat) + hyper.eps) +
                                 hyper.weight_decay * np[j]);
        }
        out.add(name, std::move(np));
    }
    return out;
}

}  // namespace g3dm
