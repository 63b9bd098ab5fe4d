#include "mman/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mman/ops.hpp"

namespace mman {

namespace {

template <typename Real>
void check_score(const Tensor<Real>& s, const char* what) {
  if (!s.defined() || s.numel() != 1)
    throw std::invalid_argument(std::string("adver_loss: ") + what +
                                " must be a scalar score");
  const double v = static_cast<double>(s.item());
  if (!(v >= 0.0 && v <= 1.0) || !std::isfinite(v))
    throw std::invalid_argument(std::string("adver_loss: ") + what + " = " +
                                std::to_string(v) + " outside (0,1)");
}

}  // namespace

template <typename Real>
Tensor<Real> mce_loss(const Tensor<Real>& pred, const Tensor<Real>& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("mce_loss: prediction " + shape_str(pred.shape()) +
                                " vs target " + shape_str(target.shape()));
  if (pred.shape().size() != 4)
    throw std::invalid_argument("mce_loss: expected N x C x H x W maps");
  const Shape& s = pred.shape();
  const std::int64_t pixels = static_cast<std::int64_t>(s[0]) * s[2] * s[3];
  const Real floor = static_cast<Real>(kProbFloor);

  double acc = 0;
  const Real* p = pred.data();
  const Real* y = target.data();
  for (std::int64_t i = 0; i < pred.numel(); ++i)
    if (y[i] != Real(0))
      acc -= static_cast<double>(y[i]) *
             std::log(static_cast<double>(std::max(p[i], floor)));
  acc /= static_cast<double>(pixels);

  auto p_node = pred.node();
  auto y_node = target.node();
  auto backward = [p_node, y_node, pixels, floor](detail::TensorNode<Real>& node) {
    if (!p_node->requires_grad) return;
    p_node->ensure_grad();
    const Real g = node.grad[0] / static_cast<Real>(pixels);
    for (std::size_t i = 0; i < p_node->values.size(); ++i) {
      const Real yi = y_node->values[i];
      if (yi != Real(0) && p_node->values[i] > floor)
        p_node->grad[i] -= g * yi / p_node->values[i];
    }
  };
  return Tensor<Real>::make_node({1}, {static_cast<Real>(acc)}, {p_node, y_node},
                                 std::move(backward), "mce_loss");
}

double adversarial_objective(double d_real, double d_fake) {
  return std::log(std::max(d_real, kProbFloor)) +
         std::log(std::max(1.0 - d_fake, kProbFloor));
}

template <typename Real>
Tensor<Real> adver_loss(const Tensor<Real>& d_real, const Tensor<Real>& d_fake,
                        AdvSide side) {
  check_score(d_real, "d_real");
  check_score(d_fake, "d_fake");
  const Real floor = static_cast<Real>(kProbFloor);
  auto r_node = d_real.node();
  auto f_node = d_fake.node();

  if (side == AdvSide::discriminator) {
    const Real r = d_real.item();
    const Real f = d_fake.item();
    const Real value = -(std::log(std::max(r, floor)) +
                         std::log(std::max(Real(1) - f, floor)));
    auto backward = [r_node, f_node, floor](detail::TensorNode<Real>& node) {
      const Real g = node.grad[0];
      if (r_node->requires_grad && r_node->values[0] > floor) {
        r_node->ensure_grad();
        r_node->grad[0] -= g / r_node->values[0];
      }
      if (f_node->requires_grad && Real(1) - f_node->values[0] > floor) {
        f_node->ensure_grad();
        f_node->grad[0] += g / (Real(1) - f_node->values[0]);
      }
    };
    return Tensor<Real>::make_node({1}, {value}, {r_node, f_node},
                                   std::move(backward), "adver_loss_d");
  }

  const Real f = d_fake.item();
  const Real value = -std::log(std::max(f, floor));
  auto backward = [f_node, floor](detail::TensorNode<Real>& node) {
    if (!f_node->requires_grad || f_node->values[0] <= floor) return;
    f_node->ensure_grad();
    f_node->grad[0] -= node.grad[0] / f_node->values[0];
  };
  return Tensor<Real>::make_node({1}, {value}, {f_node}, std::move(backward),
                                 "adver_loss_g");
}

template <typename Real>
Tensor<Real> mix_loss(const Tensor<Real>& pred, const Tensor<Real>& target,
                      const Tensor<Real>& d_real, const Tensor<Real>& d_fake,
                      double lambda, AdvSide side) {
  Tensor<Real> ce = mce_loss(pred, target);
  Tensor<Real> adv = adver_loss(d_real, d_fake, side);
  return add(ce, scale(adv, static_cast<Real>(lambda)));
}

template <typename Real>
MmanLossResult<Real> mman_loss(const Tensor<Real>& low_pred,
                               const Tensor<Real>& high_pred,
                               const Tensor<Real>& y_low, const Tensor<Real>& y,
                               const Tensor<Real>& macro_real,
                               const Tensor<Real>& macro_fake,
                               const Tensor<Real>& micro_real,
                               const Tensor<Real>& micro_fake,
                               const LossWeights& weights, AdvSide side) {
  Tensor<Real> ce_low = mce_loss(low_pred, y_low);
  Tensor<Real> ce_high = mce_loss(high_pred, y);
  Tensor<Real> adv_ma = adver_loss(macro_real, macro_fake, side);
  Tensor<Real> adv_mi = adver_loss(micro_real, micro_fake, side);

  MmanLossResult<Real> out;
  out.mce_low = static_cast<double>(ce_low.item());
  out.mce_high = static_cast<double>(ce_high.item());
  out.adv_macro = static_cast<double>(adv_ma.item());
  out.adv_micro = static_cast<double>(adv_mi.item());
  out.total = add(add(adv_ma, scale(ce_low, static_cast<Real>(weights.lambda1))),
                  add(scale(adv_mi, static_cast<Real>(weights.lambda2)),
                      scale(ce_high, static_cast<Real>(weights.lambda3))));
  return out;
}

#define MMAN_INSTANTIATE_LOSSES(Real)                                         \
  template Tensor<Real> mce_loss<Real>(const Tensor<Real>&,                   \
                                       const Tensor<Real>&);                  \
  template Tensor<Real> adver_loss<Real>(const Tensor<Real>&,                 \
                                         const Tensor<Real>&, AdvSide);       \
  template Tensor<Real> mix_loss<Real>(                                       \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
      const Tensor<Real>&, double, AdvSide);                                  \
  template MmanLossResult<Real> mman_loss<Real>(                              \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
      const Tensor<Real>&, const Tensor<Real>&, const LossWeights&, AdvSide);

MMAN_INSTANTIATE_LOSSES(float)
MMAN_INSTANTIATE_LOSSES(double)
#undef MMAN_INSTANTIATE_LOSSES

}  // namespace mman
