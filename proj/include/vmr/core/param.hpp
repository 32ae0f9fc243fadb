#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vmr/core/error.hpp"
#include "vmr/core/matrix.hpp"
#include "vmr/core/rng.hpp"

namespace vmr {

// One trainable tensor. Gradients accumulate into `grad` during backward;
// the optimizer consumes and clears them.
struct Param {
    std::string name;
    Mat value;
    Mat grad;

    int64_t count() const { return static_cast<int64_t>(value.size()); }
    void zero_grad() { grad.resize(0, 0); }
};

// Flat registry of every trainable tensor, in registration order. The
// order is part of the checkpoint contract: tensors serialize by name and
// the optimizer state is kept positionally.
class ParamSet {
public:
    Param* add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        params_.push_back(std::make_unique<Param>());
        Param* p = params_.back().get();
        p->name = name;
        p->value = Mat::Zero(rows, cols);
        return p;
    }

    Param* add_gaussian(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                        double std = 0.02) {
        Param* p = add(name, rows, cols);
        p->value = gaussian_mat(rows, cols, rng, std);
        return p;
    }

    Param* add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double v) {
        Param* p = add(name, rows, cols);
        p->value.setConstant(v);
        return p;
    }

    std::vector<Param*> all() const {
        std::vector<Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    Param* find(const std::string& name) const {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (auto& p : params_) n += p->count();
        return n;
    }

    // Sum of parameter counts whose names start with `prefix`.
    int64_t count_prefix(const std::string& prefix) const {
        int64_t n = 0;
        for (auto& p : params_)
            if (p->name.rfind(prefix, 0) == 0) n += p->count();
        return n;
    }

    size_t size() const { return params_.size(); }

private:
    std::vector<std::unique_ptr<Param>> params_;
};

}  // namespace vmr
