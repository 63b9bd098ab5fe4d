#pragma once

#include "mman/tensor.hpp"

namespace mman {

// Weights of the combined objective; defaults follow the training recipe
// (lambda1 low-res cross-entropy, lambda2 patch adversarial, lambda3
// high-res cross-entropy, lambda_mix the single-adversarial mixing weight).
struct LossWeights {
  double lambda1 = 25.0;
  double lambda2 = 1.0;
  double lambda3 = 100.0;
  double lambda_mix = 1.0;
};

// Probabilities are clamped here before any log.
inline constexpr double kProbFloor = 1e-12;

enum class AdvSide { discriminator, generator };

// Pixel-averaged multi-class cross-entropy between a predicted per-pixel
// distribution and a constant one-hot target of the same shape.
template <typename Real>
Tensor<Real> mce_loss(const Tensor<Real>& pred, const Tensor<Real>& target);

// Minimax value log(d_real) + log(1 - d_fake): what the discriminator
// maximizes and the generator minimizes.
double adversarial_objective(double d_real, double d_fake);

// discriminator side: -(log d_real + log(1 - d_fake));
// generator side: -log d_fake (non-saturating surrogate, same fixed points).
// Scores must be scalars in [0,1]; values outside are rejected.
template <typename Real>
Tensor<Real> adver_loss(const Tensor<Real>& d_real, const Tensor<Real>& d_fake,
                        AdvSide side);

// mce + lambda * adver; the single-adversarial-network objective.
template <typename Real>
Tensor<Real> mix_loss(const Tensor<Real>& pred, const Tensor<Real>& target,
                      const Tensor<Real>& d_real, const Tensor<Real>& d_fake,
                      double lambda, AdvSide side);

template <typename Real>
struct MmanLossResult {
  Tensor<Real> total;
  double mce_low = 0;
  double mce_high = 0;
  double adv_macro = 0;
  double adv_micro = 0;
};

// adv(macro) + lambda1 * mce(low) + lambda2 * adv(micro) + lambda3 * mce(high),
// with both adversarial terms on the side of the current update phase.
template <typename Real>
MmanLossResult<Real> mman_loss(const Tensor<Real>& low_pred,
                               const Tensor<Real>& high_pred,
                               const Tensor<Real>& y_low, const Tensor<Real>& y,
                               const Tensor<Real>& macro_real,
                               const Tensor<Real>& macro_fake,
                               const Tensor<Real>& micro_real,
                               const Tensor<Real>& micro_fake,
                               const LossWeights& weights, AdvSide side);

#define MMAN_EXTERN_LOSSES(Real)                                              \
  extern template Tensor<Real> mce_loss<Real>(const Tensor<Real>&,            \
                                              const Tensor<Real>&);           \
  extern template Tensor<Real> adver_loss<Real>(                              \
      const Tensor<Real>&, const Tensor<Real>&, AdvSide);                     \
  extern template Tensor<Real> mix_loss<Real>(                                \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
      const Tensor<Real>&, double, AdvSide);                                  \
  extern template MmanLossResult<Real> mman_loss<Real>(                       \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
      const Tensor<Real>&, const Tensor<Real>&, const LossWeights&, AdvSide);

MMAN_EXTERN_LOSSES(float)
MMAN_EXTERN_LOSSES(double)
#undef MMAN_EXTERN_LOSSES

}  // namespace mman
