#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tensorfact/common.hpp"

namespace tensorfact {

// One optimizable tensor: parameter storage, matching gradient, and whether
// the update may touch it. Gradients of frozen parameters are still
// computed upstream; the freeze is enforced here, at the update.
template <typename S>
struct ParamSlot {
  std::vector<S>* values = nullptr;
  const std::vector<S>* grads = nullptr;
  bool trainable = true;
};

// ADAM with bias correction. Moments are kept per parameter tensor in the
// order the slots are first presented; that order must stay stable across
// steps.
template <typename S>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t t = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;
};

template <typename S>
void adam_step(AdamState<S>& state, const std::vector<ParamSlot<S>>& slots) {
  if (state.m.empty()) {
    state.m.resize(slots.size());
    state.v.resize(slots.size());
    for (size_t i = 0; i < slots.size(); ++i) {
      state.m[i].assign(slots[i].values->size(), S(0));
      state.v[i].assign(slots[i].values->size(), S(0));
    }
  }
  if (state.m.size() != slots.size()) throw state_error("adam_step: slot count changed");
  state.t += 1;
  const double corr1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < slots.size(); ++i) {
    const ParamSlot<S>& slot = slots[i];
    if (!slot.trainable) continue;
    if (slot.values->size() != state.m[i].size()) throw state_error("adam_step: shape changed");
    std::vector<S>& m = state.m[i];
    std::vector<S>& v = state.v[i];
    for (size_t j = 0; j < slot.values->size(); ++j) {
      const double g = static_cast<double>((*slot.grads)[j]);
      const double mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * g;
      const double vj = state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * g * g;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double mhat = mj / corr1;
      const double vhat = vj / corr2;
      (*slot.values)[j] =
          static_cast<S>(static_cast<double>((*slot.values)[j]) -
                         state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

// Reduce-on-plateau: when the validation loss has not improved by more than
// the threshold for `patience` consecutive epochs, multiply the rate by
// `factor` and restart the count.
struct PlateauScheduler {
  double lr = 1e-3;
  int patience = 10;
  double factor = 0.1;
  double threshold = 1e-8;
  double best = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
};

inline double plateau_step(PlateauScheduler& sched, double val_loss) {
  if (val_loss < sched.best - sched.threshold) {
    sched.best = val_loss;
    sched.epochs_since_improvement = 0;
  } else {
    sched.epochs_since_improvement += 1;
    if (sched.epochs_since_improvement >= sched.patience) {
      sched.lr *= sched.factor;
      sched.epochs_since_improvement = 0;
    }
  }
  return sched.lr;
}

}  // namespace tensorfact
