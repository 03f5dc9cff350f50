#pragma once

#include <cmath>
#include <vector>

#include "mote/params.hpp"

namespace mote {

// Linear warmup followed by linear decay to zero.
struct LinearSchedule {
  double base_lr = 3e-4;
  int total_steps = 1;
  double warmup_ratio = 0.1;

  double at(int step) const {  // step counts from 1
    int warmup = int(std::lround(warmup_ratio * total_steps));
    if (warmup > 0 && step <= warmup)
      return base_lr * double(step) / double(warmup);
    if (total_steps <= warmup) return base_lr;
    double frac = double(total_steps - step) / double(total_steps - warmup);
    return base_lr * std::max(0.0, frac);
  }
};

// AdamW with decoupled weight decay. Decay applies only to tensors flagged
// in the layout (weight matrices and embeddings, not biases or layer norms).
class AdamW {
 public:
  AdamW(const ModelParams& params, LinearSchedule schedule,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.01, double clip_norm = 0.0)
      : schedule_(schedule),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        weight_decay_(weight_decay),
        clip_norm_(clip_norm),
        m_(params.data.size(), 0.0),
        v_(params.data.size(), 0.0) {}

  int step_count() const { return t_; }
  double last_lr() const { return last_lr_; }

  void step(ModelParams& params, const Grads& grads) {
    ++t_;
    double lr = schedule_.at(t_);
    last_lr_ = lr;
    // Global-norm gradient clipping (0 disables it).
    double gscale = 1.0;
    if (clip_norm_ > 0.0) {
      double norm2 = 0.0;
      for (double g : grads.data) norm2 += g * g;
      double norm = std::sqrt(norm2);
      if (norm > clip_norm_) gscale = clip_norm_ / norm;
    }
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (const TensorInfo& info : params.layout->tensors) {
      // Copy-initialized tensors are independent after init; every tensor
      // gets its own optimizer state.
      size_t n = size_t(info.rows) * size_t(info.cols);
      double* p = params.data.data() + info.offset;
      const double* g = grads.data.data() + info.offset;
      double* m = m_.data() + info.offset;
      double* v = v_.data() + info.offset;
      for (size_t i = 0; i < n; ++i) {
        double gi = g[i] * gscale;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        double update = mhat / (std::sqrt(vhat) + eps_);
        if (info.decay) update += weight_decay_ * p[i];
        p[i] -= lr * update;
      }
    }
  }

 private:
  LinearSchedule schedule_;
  double beta1_, beta2_, eps_, weight_decay_, clip_norm_;
  double last_lr_ = 0.0;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace mote
