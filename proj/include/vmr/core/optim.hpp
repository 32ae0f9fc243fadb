#pragma once

#include <cmath>
#include <vector>

#include "vmr/core/error.hpp"
#include "vmr/core/param.hpp"

namespace vmr {

// Adam with decoupled weight decay. Both the update and the decay term are
// scaled by lr, so lr = 0 leaves parameters bit-identical.
class AdamW {
public:
    AdamW(std::vector<Param*> params, double lr, double weight_decay = 0.01, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)),
          lr_(lr),
          wd_(weight_decay),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i] = Mat::Zero(params_[i]->value.rows(), params_[i]->value.cols());
            v_[i] = Mat::Zero(params_[i]->value.rows(), params_[i]->value.cols());
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    void zero_grad() {
        for (Param* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Param* p = params_[i];
            if (p->grad.size() == 0) {
                // parameter unused this step; moments still decay
                m_[i] *= beta1_;
                v_[i] *= beta2_;
            } else {
                m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
                v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
            }
            if (lr_ == 0.0) continue;
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            p->value -=
                lr_ * (mhat.array() / (vhat.array().sqrt() + eps_) + wd_ * p->value.array()).matrix();
        }
    }

    // Checkpoint access (positional, matches the ParamSet order used to build).
    std::vector<Mat>& moment1() { return m_; }
    std::vector<Mat>& moment2() { return v_; }
    const std::vector<Mat>& moment1() const { return m_; }
    const std::vector<Mat>& moment2() const { return v_; }
    void set_step_count(int64_t t) { t_ = t; }
    const std::vector<Param*>& params() const { return params_; }

private:
    std::vector<Param*> params_;
    std::vector<Mat> m_, v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace vmr
