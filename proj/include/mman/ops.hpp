#pragma once

#include <random>

#include "mman/tensor.hpp"

namespace mman {

// All image tensors are N x C x H x W. Every op below is differentiable and
// deterministic given identical inputs (and rng state, for dropout).

// weight: Cout x Cin x k x k. Output H' = floor((H + 2p - keff)/s) + 1 with
// keff = (k-1)*dilation + 1.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, int stride, int padding,
                    int dilation = 1);

// Transposed convolution, the adjoint of conv2d: forward(deconv2d) with a
// weight W equals backward-data of conv2d with the same W. weight layout is
// therefore Cin x Cout x k x k (deconv input channels first).
// Output H' = (H-1)*s - 2p + k.
template <typename Real>
Tensor<Real> deconv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                      const Tensor<Real>& bias, int stride, int padding);

// Per-(n,c) plane normalization: (x - mean) / sqrt(var + eps) * gamma + beta.
template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& input, const Tensor<Real>& gamma,
                           const Tensor<Real>& beta, Real epsilon);

template <typename Real>
Tensor<Real> leaky_relu(const Tensor<Real>& x, Real slope);

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x);

// Per-pixel softmax across the channel axis of N x C x H x W.
template <typename Real>
Tensor<Real> softmax_channels(const Tensor<Real>& x);

// b's channels appended after a's; gradients split accordingly.
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

// Bilinear interpolation with half-pixel centers; scale 1.0 is the identity.
template <typename Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& x, int out_h, int out_w);

template <typename Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& x, double scale);

// Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate).
// Identity when training is false.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, bool training,
                     std::mt19937_64& rng);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s);

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s);

// s - a, elementwise.
template <typename Real>
Tensor<Real> rsub_scalar(Real s, const Tensor<Real>& a);

// log(max(x, floor)); the clamp keeps adversarial losses finite.
template <typename Real>
Tensor<Real> log_clamped(const Tensor<Real>& x, Real floor);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x);

#define MMAN_EXTERN_OPS(Real)                                                   \
  extern template Tensor<Real> conv2d<Real>(const Tensor<Real>&,               \
                                            const Tensor<Real>&,               \
                                            const Tensor<Real>&, int, int,     \
                                            int);                              \
  extern template Tensor<Real> deconv2d<Real>(const Tensor<Real>&,             \
                                              const Tensor<Real>&,             \
                                              const Tensor<Real>&, int, int);  \
  extern template Tensor<Real> instance_norm<Real>(                            \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Real);    \
  extern template Tensor<Real> leaky_relu<Real>(const Tensor<Real>&, Real);    \
  extern template Tensor<Real> sigmoid<Real>(const Tensor<Real>&);             \
  extern template Tensor<Real> softmax_channels<Real>(const Tensor<Real>&);    \
  extern template Tensor<Real> concat_channels<Real>(const Tensor<Real>&,      \
                                                     const Tensor<Real>&);     \
  extern template Tensor<Real> resize_bilinear<Real>(const Tensor<Real>&, int, \
                                                     int);                     \
  extern template Tensor<Real> resize_bilinear<Real>(const Tensor<Real>&,      \
                                                     double);                  \
  extern template Tensor<Real> dropout<Real>(const Tensor<Real>&, double,      \
                                             bool, std::mt19937_64&);          \
  extern template Tensor<Real> add<Real>(const Tensor<Real>&,                  \
                                         const Tensor<Real>&);                 \
  extern template Tensor<Real> sub<Real>(const Tensor<Real>&,                  \
                                         const Tensor<Real>&);                 \
  extern template Tensor<Real> mul<Real>(const Tensor<Real>&,                  \
                                         const Tensor<Real>&);                 \
  extern template Tensor<Real> scale<Real>(const Tensor<Real>&, Real);         \
  extern template Tensor<Real> add_scalar<Real>(const Tensor<Real>&, Real);    \
  extern template Tensor<Real> rsub_scalar<Real>(Real, const Tensor<Real>&);   \
  extern template Tensor<Real> log_clamped<Real>(const Tensor<Real>&, Real);   \
  extern template Tensor<Real> sum<Real>(const Tensor<Real>&);                 \
  extern template Tensor<Real> mean<Real>(const Tensor<Real>&);

MMAN_EXTERN_OPS(float)
MMAN_EXTERN_OPS(double)
#undef MMAN_EXTERN_OPS

}  // namespace mman
