#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "disclabel/errors.hpp"
#include "disclabel/image.hpp"

namespace disclabel {

struct LossWeights {
  double dice = 1.0;
  double awing = 1.0;
  double l2 = 1.0;
  double l1 = 0.0;

  void validate() const {
    if (dice < 0.0 || awing < 0.0 || l2 < 0.0 || l1 < 0.0)
      throw ValidationError("loss weights must be non-negative");
    if (dice == 0.0 && awing == 0.0 && l2 == 0.0 && l1 == 0.0)
      throw ValidationError("at least one loss weight must be positive");
  }
};

struct AWingParams {
  double alpha = 2.1;
  double omega = 14.0;
  double epsilon = 1.0;
  double theta = 0.5;

  void validate() const {
    if (alpha <= 1.0) throw ValidationError("awing alpha must exceed the max target value 1");
    if (omega <= 0.0 || epsilon <= 0.0 || theta <= 0.0)
      throw ValidationError("awing omega, epsilon, theta must be positive");
  }
};

namespace detail {
template <class S>
inline void check_same_size(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size())
    throw ShapeError("loss inputs differ in size: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
}
}  // namespace detail

// Soft dice loss 1 - (2*sum(p*g)+s)/(sum(p^2)+sum(g^2)+s). If grad is
// non-empty it receives dL/dpred (same length as pred).
template <class S>
S dice_loss(std::span<const S> pred, std::span<const S> target, std::span<S> grad = {},
            S smooth = S(1)) {
  detail::check_same_size(pred, target);
  S dot = 0, p2 = 0, g2 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    dot += pred[i] * target[i];
    p2 += pred[i] * pred[i];
    g2 += target[i] * target[i];
  }
  const S num = S(2) * dot + smooth;
  const S den = p2 + g2 + smooth;
  if (!grad.empty()) {
    if (grad.size() != pred.size()) throw ShapeError("dice_loss: bad gradient buffer size");
    for (std::size_t i = 0; i < pred.size(); ++i)
      grad[i] = -(S(2) * target[i] * den - num * S(2) * pred[i]) / (den * den);
  }
  return S(1) - num / den;
}

// Adaptive wing loss, mean over pixels. The linear tail uses the continuity
// constants A and C so both branches agree at |y-x| = theta.
template <class S>
S adaptive_wing_loss(std::span<const S> pred, std::span<const S> target, std::span<S> grad = {},
                     const AWingParams& params = {}) {
  detail::check_same_size(pred, target);
  params.validate();
  if (!grad.empty() && grad.size() != pred.size())
    throw ShapeError("adaptive_wing_loss: bad gradient buffer size");

  const S alpha = S(params.alpha), omega = S(params.omega);
  const S eps = S(params.epsilon), theta = S(params.theta);
  S total = 0;
  const S inv_n = S(1) / S(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const S y = target[i];
    const S e = alpha - y;  // pixel-dependent exponent, > 1 for y in [0,1]
    const S d = std::abs(y - pred[i]);
    const S sgn = pred[i] > y ? S(1) : (pred[i] < y ? S(-1) : S(0));
    if (d < theta) {
      const S t = std::pow(d / eps, e);
      total += omega * std::log(S(1) + t);
      if (!grad.empty()) {
        const S dt = e * std::pow(d / eps, e - S(1)) / eps;
        grad[i] = sgn * omega * dt / (S(1) + t) * inv_n;
      }
    } else {
      const S th_pow = std::pow(theta / eps, e);
      const S a_const = omega * (S(1) / (S(1) + th_pow)) * e *
                        std::pow(theta / eps, e - S(1)) / eps;
      const S c_const = theta * a_const - omega * std::log(S(1) + th_pow);
      total += a_const * d - c_const;
      if (!grad.empty()) grad[i] = sgn * a_const * inv_n;
    }
  }
  return total * inv_n;
}

// Mean |p-g|^order, order 1 or 2.
template <class S>
S pixel_mean_loss(std::span<const S> pred, std::span<const S> target, int order,
                  std::span<S> grad = {}) {
  detail::check_same_size(pred, target);
  if (order != 1 && order != 2) throw ValidationError("pixel_mean_loss: order must be 1 or 2");
  if (!grad.empty() && grad.size() != pred.size())
    throw ShapeError("pixel_mean_loss: bad gradient buffer size");

  S total = 0;
  const S inv_n = S(1) / S(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const S diff = pred[i] - target[i];
    if (order == 2) {
      total += diff * diff;
      if (!grad.empty()) grad[i] = S(2) * diff * inv_n;
    } else {
      total += std::abs(diff);
      if (!grad.empty()) grad[i] = (diff > 0 ? S(1) : (diff < 0 ? S(-1) : S(0))) * inv_n;
    }
  }
  return total * inv_n;
}

// w_dice*dice + w_awing*awing + w_l2*L2 + w_l1*L1; the gradient (if requested)
// is the matching weighted sum.
template <class S>
S composite_loss(std::span<const S> pred, std::span<const S> target, const LossWeights& weights,
                 const AWingParams& awing_params = {}, std::span<S> grad = {}) {
  weights.validate();
  detail::check_same_size(pred, target);
  if (!grad.empty()) {
    if (grad.size() != pred.size()) throw ShapeError("composite_loss: bad gradient buffer size");
    std::fill(grad.begin(), grad.end(), S(0));
  }

  std::vector<S> scratch(grad.empty() ? 0 : pred.size());
  auto accumulate = [&](S weight, S value, std::span<S> part) {
    if (!grad.empty())
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += S(weight) * part[i];
    return S(weight) * value;
  };

  S total = 0;
  std::span<S> part(scratch);
  if (weights.dice > 0.0)
    total += accumulate(S(weights.dice), dice_loss<S>(pred, target, part), part);
  if (weights.awing > 0.0)
    total +=
        accumulate(S(weights.awing), adaptive_wing_loss<S>(pred, target, part, awing_params), part);
  if (weights.l2 > 0.0)
    total += accumulate(S(weights.l2), pixel_mean_loss<S>(pred, target, 2, part), part);
  if (weights.l1 > 0.0)
    total += accumulate(S(weights.l1), pixel_mean_loss<S>(pred, target, 1, part), part);
  return total;
}

// Heatmap-level wrappers with full shape checks.
namespace detail {
inline void check_same_shape(const Heatmap& a, const Heatmap& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("heatmap shapes differ: " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
}
}  // namespace detail

inline float dice_loss(const Heatmap& pred, const Heatmap& target, float smooth = 1.0f) {
  detail::check_same_shape(pred, target);
  return dice_loss<float>(pred.pixels, target.pixels, {}, smooth);
}

inline float adaptive_wing_loss(const Heatmap& pred, const Heatmap& target,
                                const AWingParams& params = {}) {
  detail::check_same_shape(pred, target);
  return adaptive_wing_loss<float>(pred.pixels, target.pixels, {}, params);
}

inline float pixel_mean_loss(const Heatmap& pred, const Heatmap& target, int order) {
  detail::check_same_shape(pred, target);
  return pixel_mean_loss<float>(pred.pixels, target.pixels, order);
}

inline float composite_loss(const Heatmap& pred, const Heatmap& target,
                            const LossWeights& weights, const AWingParams& awing_params = {}) {
  detail::check_same_shape(pred, target);
  return composite_loss<float>(pred.pixels, target.pixels, weights, awing_params);
}

}  // namespace disclabel
