#include "cast/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cast {

FlowStep::FlowStep(double tau) : tau_(tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("flow step outside [0, 1]: " + std::to_string(tau));
}

GuidanceScale::GuidanceScale(double w) : w_(w) {
  if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("guidance scale must be finite and >= 0");
}

FlowSample FlowSample::make(MelGrid x0, MelGrid x1, FlowStep tau) {
  MelGrid xt = interpolate(x0, x1, tau);
  return FlowSample{std::move(x0), std::move(x1), tau, std::move(xt)};
}

MelGrid interpolate(const MelGrid& x0, const MelGrid& x1, FlowStep tau) {
  require_same_shape(x0, x1, "interpolate");
  const double t = tau.tau();
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  MelGrid out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
  return out;
}

MelGrid target_velocity(const MelGrid& x0, const MelGrid& x1) {
  require_same_shape(x0, x1, "target_velocity");
  MelGrid out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x1[i] - x0[i];
  return out;
}

double fm_loss(const MelGrid& v_pred, const MelGrid& x0, const MelGrid& x1, const std::vector<bool>& frame_mask) {
  require_same_shape(v_pred, x0, "fm_loss");
  require_same_shape(x0, x1, "fm_loss");
  if (static_cast<int>(frame_mask.size()) != v_pred.rows())
    throw std::invalid_argument("fm_loss: mask length differs from frame count");
  int valid = 0;
  double total = 0.0;
  for (int r = 0; r < v_pred.rows(); ++r) {
    if (!frame_mask[static_cast<std::size_t>(r)]) continue;
    ++valid;
    for (int c = 0; c < v_pred.cols(); ++c) {
      const double d = v_pred(r, c) - (x1(r, c) - x0(r, c));
      total += d * d;
    }
  }
  if (valid == 0) throw std::invalid_argument("fm_loss: mask selects no frames");
  return total / (static_cast<double>(valid) * v_pred.cols());
}

MelGrid cfg_combine(const MelGrid& v_uncond, const MelGrid& v_cond, GuidanceScale w) {
  require_same_shape(v_uncond, v_cond, "cfg_combine");
  const double s = w.w();
  if (s == 1.0) return v_cond;
  if (s == 0.0) return v_uncond;
  MelGrid out(v_cond.rows(), v_cond.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - s) * v_uncond[i] + s * v_cond[i];
  return out;
}

MelGrid euler_sample(const VelocityFn& velocity, MelGrid x1, int num_steps) {
  if (num_steps < 1) throw std::invalid_argument("euler_sample: num_steps must be >= 1");
  const double h = 1.0 / num_steps;
  MelGrid x = std::move(x1);
  for (int i = 0; i < num_steps; ++i) {
    const FlowStep tau(1.0 - static_cast<double>(i) / num_steps);
    const MelGrid v = velocity(x, tau);
    require_same_shape(x, v, "euler_sample velocity");
    for (std::size_t k = 0; k < x.size(); ++k) x[k] -= h * v[k];
  }
  return x;
}

}  // namespace cast
