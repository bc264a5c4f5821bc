#pragma once

#include <functional>
#include <vector>

#include "cast/matrix.hpp"

namespace cast {

/// Flow time tau in [0, 1]; 0 is data, 1 is the Gaussian prior.
class FlowStep {
 public:
  explicit FlowStep(double tau);
  double tau() const { return tau_; }

 private:
  double tau_;
};

/// Classifier-free guidance scale w >= 0.
class GuidanceScale {
 public:
  static constexpr double kDefault = 3.0;

  explicit GuidanceScale(double w = kDefault);
  double w() const { return w_; }

 private:
  double w_;
};

/// A training draw on the straight path between data and noise.
struct FlowSample {
  MelGrid x0;
  MelGrid x1;
  FlowStep tau;
  MelGrid x_tau;

  static FlowSample make(MelGrid x0, MelGrid x1, FlowStep tau);
};

inline constexpr int kDefaultOdeSteps = 32;

/// (1 - tau) * x0 + tau * x1, exact at both endpoints.
MelGrid interpolate(const MelGrid& x0, const MelGrid& x1, FlowStep tau);

/// x1 - x0; the velocity of the straight path at every tau.
MelGrid target_velocity(const MelGrid& x0, const MelGrid& x1);

/// Mean squared error between `v_pred` and x1 - x0 over frames whose mask
/// entry is true.
double fm_loss(const MelGrid& v_pred, const MelGrid& x0, const MelGrid& x1, const std::vector<bool>& frame_mask);

/// (1 - w) * v_uncond + w * v_cond.
MelGrid cfg_combine(const MelGrid& v_uncond, const MelGrid& v_cond, GuidanceScale w);

using VelocityFn = std::function<MelGrid(const MelGrid& x, FlowStep tau)>;

/// Integrates dx/dtau = v from tau = 1 to tau = 0 with `num_steps` uniform
/// explicit-Euler steps, x <- x - v(x, tau) / num_steps.
MelGrid euler_sample(const VelocityFn& velocity, MelGrid x1, int num_steps);

}  // namespace cast
