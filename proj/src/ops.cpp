#include "mman/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mman {
namespace {

template <typename Real>
using NodePtr = std::shared_ptr<detail::TensorNode<Real>>;

// C[M x N] += A[M x K] * B[K x N]
template <typename Real>
void gemm_acc(const Real* __restrict__ a, const Real* __restrict__ b,
              Real* __restrict__ c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    Real* crow = c + static_cast<std::size_t>(i) * n;
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x N] += A[M x P] * B[N x P]^T
template <typename Real>
void gemm_abt_acc(const Real* __restrict__ a, const Real* __restrict__ b,
                  Real* __restrict__ c, int m, int n, int p) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * p;
    Real* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Real* brow = b + static_cast<std::size_t>(j) * p;
      Real acc = 0;
      for (int q = 0; q < p; ++q) acc += arow[q] * brow[q];
      crow[j] += acc;
    }
  }
}

// C[K x N] += A[M x K]^T * B[M x N]
template <typename Real>
void gemm_atb_acc(const Real* __restrict__ a, const Real* __restrict__ b,
                  Real* __restrict__ c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    const Real* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      Real* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvGeom {
  int c_in, h_in, w_in;
  int kernel, stride, padding, dilation;
  int h_out, w_out;
  int k_eff() const { return (kernel - 1) * dilation + 1; }
  int patch() const { return c_in * kernel * kernel; }
  std::int64_t positions() const {
    return static_cast<std::int64_t>(h_out) * w_out;
  }
};

// col[(c*k*k + ki*k + kj) * P + p] = image value under the kernel tap, zero
// where the tap falls into padding.
template <typename Real>
void im2col(const Real* __restrict__ im, const ConvGeom& g,
            Real* __restrict__ col) {
  const int p_total = g.h_out * g.w_out;
  for (int c = 0; c < g.c_in; ++c) {
    const Real* plane = im + static_cast<std::size_t>(c) * g.h_in * g.w_in;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        Real* dst = col + (static_cast<std::size_t>(c) * g.kernel * g.kernel +
                           static_cast<std::size_t>(ki) * g.kernel + kj) *
                              p_total;
        for (int oh = 0; oh < g.h_out; ++oh) {
          const int ih = oh * g.stride - g.padding + ki * g.dilation;
          Real* drow = dst + static_cast<std::size_t>(oh) * g.w_out;
          if (ih < 0 || ih >= g.h_in) {
            std::fill(drow, drow + g.w_out, Real(0));
            continue;
          }
          const Real* srow = plane + static_cast<std::size_t>(ih) * g.w_in;
          for (int ow = 0; ow < g.w_out; ++ow) {
            const int iw = ow * g.stride - g.padding + kj * g.dilation;
            drow[ow] = (iw < 0 || iw >= g.w_in) ? Real(0) : srow[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add column entries back onto the image.
template <typename Real>
void col2im_acc(const Real* __restrict__ col, const ConvGeom& g,
                Real* __restrict__ im) {
  const int p_total = g.h_out * g.w_out;
  for (int c = 0; c < g.c_in; ++c) {
    Real* plane = im + static_cast<std::size_t>(c) * g.h_in * g.w_in;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const Real* src = col + (static_cast<std::size_t>(c) * g.kernel * g.kernel +
                                 static_cast<std::size_t>(ki) * g.kernel + kj) *
                                    p_total;
        for (int oh = 0; oh < g.h_out; ++oh) {
          const int ih = oh * g.stride - g.padding + ki * g.dilation;
          if (ih < 0 || ih >= g.h_in) continue;
          const Real* srow = src + static_cast<std::size_t>(oh) * g.w_out;
          Real* drow = plane + static_cast<std::size_t>(ih) * g.w_in;
          for (int ow = 0; ow < g.w_out; ++ow) {
            const int iw = ow * g.stride - g.padding + kj * g.dilation;
            if (iw >= 0 && iw < g.w_in) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

void check_image_rank(const Shape& s, const char* what) {
  if (s.size() != 4)
    throw std::invalid_argument(std::string(what) + ": expected N x C x H x W, got " +
                                shape_str(s));
}

ConvGeom conv_geometry(const Shape& in, int kernel, int stride, int padding,
                       int dilation, const char* op) {
  if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0)
    throw std::invalid_argument(std::string(op) + ": invalid kernel/stride/padding");
  ConvGeom g{in[1], in[2], in[3], kernel, stride, padding, dilation, 0, 0};
  const int keff = g.k_eff();
  if (g.h_in + 2 * padding < keff || g.w_in + 2 * padding < keff)
    throw std::invalid_argument(std::string(op) + ": padded extent of " + shape_str(in) +
                                " smaller than kernel " + std::to_string(keff));
  g.h_out = (g.h_in + 2 * padding - keff) / stride + 1;
  g.w_out = (g.w_in + 2 * padding - keff) / stride + 1;
  return g;
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, int stride, int padding,
                    int dilation) {
  check_image_rank(input.shape(), "conv2d input");
  check_image_rank(weight.shape(), "conv2d weight");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws[2] != ws[3]) throw std::invalid_argument("conv2d: non-square kernel");
  if (is[1] != ws[1])
    throw std::invalid_argument("conv2d: input channels of " + shape_str(is) +
                                " do not match weight " + shape_str(ws));
  const int n_batch = is[0], c_out = ws[0], kernel = ws[2];
  if (bias.defined() && bias.numel() != c_out)
    throw std::invalid_argument("conv2d: bias size mismatch");
  ConvGeom g = conv_geometry(is, kernel, stride, padding, dilation, "conv2d");

  const int p_total = g.h_out * g.w_out;
  const int patch = g.patch();
  std::vector<Real> out(static_cast<std::size_t>(n_batch) * c_out * p_total, Real(0));
  std::vector<Real> col(static_cast<std::size_t>(patch) * p_total);
  const std::size_t in_plane = static_cast<std::size_t>(g.c_in) * g.h_in * g.w_in;
  for (int n = 0; n < n_batch; ++n) {
    im2col(input.data() + n * in_plane, g, col.data());
    Real* on = out.data() + static_cast<std::size_t>(n) * c_out * p_total;
    gemm_acc(weight.data(), col.data(), on, c_out, patch, p_total);
    if (bias.defined()) {
      for (int c = 0; c < c_out; ++c) {
        const Real b = bias.data()[c];
        Real* row = on + static_cast<std::size_t>(c) * p_total;
        for (int p = 0; p < p_total; ++p) row[p] += b;
      }
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;
  std::vector<NodePtr<Real>> parents{in_node, w_node};
  if (b_node) parents.push_back(b_node);

  auto backward = [in_node, w_node, b_node, g, n_batch, c_out,
                   patch](detail::TensorNode<Real>& node) {
    const int p_total = g.h_out * g.w_out;
    const std::size_t in_plane = static_cast<std::size_t>(g.c_in) * g.h_in * g.w_in;
    std::vector<Real> col(static_cast<std::size_t>(patch) * p_total);
    std::vector<Real> gcol;
    if (in_node->requires_grad) {
      in_node->ensure_grad();
      gcol.resize(col.size());
    }
    if (w_node->requires_grad) w_node->ensure_grad();
    if (b_node && b_node->requires_grad) b_node->ensure_grad();
    for (int n = 0; n < n_batch; ++n) {
      const Real* gout = node.grad.data() + static_cast<std::size_t>(n) * c_out * p_total;
      if (w_node->requires_grad) {
        im2col(in_node->values.data() + n * in_plane, g, col.data());
        gemm_abt_acc(gout, col.data(), w_node->grad.data(), c_out, patch, p_total);
      }
      if (in_node->requires_grad) {
        std::fill(gcol.begin(), gcol.end(), Real(0));
        gemm_atb_acc(w_node->values.data(), gout, gcol.data(), c_out, patch, p_total);
        col2im_acc(gcol.data(), g, in_node->grad.data() + n * in_plane);
      }
      if (b_node && b_node->requires_grad) {
        for (int c = 0; c < c_out; ++c) {
          const Real* row = gout + static_cast<std::size_t>(c) * p_total;
          Real acc = 0;
          for (int p = 0; p < p_total; ++p) acc += row[p];
          b_node->grad[c] += acc;
        }
      }
    }
  };

  return Tensor<Real>::make_node({n_batch, c_out, g.h_out, g.w_out}, std::move(out),
                                 std::move(parents), std::move(backward), "conv2d");
}

template <typename Real>
Tensor<Real> deconv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                      const Tensor<Real>& bias, int stride, int padding) {
  check_image_rank(input.shape(), "deconv2d input");
  check_image_rank(weight.shape(), "deconv2d weight");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws[2] != ws[3]) throw std::invalid_argument("deconv2d: non-square kernel");
  if (is[1] != ws[0])
    throw std::invalid_argument("deconv2d: input channels of " + shape_str(is) +
                                " do not match weight " + shape_str(ws));
  const int n_batch = is[0], c_in = is[1], c_out = ws[1], kernel = ws[2];
  if (kernel < 1 || stride < 1 || padding < 0)
    throw std::invalid_argument("deconv2d: invalid kernel/stride/padding");
  if (bias.defined() && bias.numel() != c_out)
    throw std::invalid_argument("deconv2d: bias size mismatch");
  const int h_out = (is[2] - 1) * stride - 2 * padding + kernel;
  const int w_out = (is[3] - 1) * stride - 2 * padding + kernel;
  if (h_out < 1 || w_out < 1)
    throw std::invalid_argument("deconv2d: output extent underflows for " + shape_str(is));

  // The output plays the role of a conv2d input with this geometry.
  ConvGeom g{c_out, h_out, w_out, kernel, stride, padding, 1, is[2], is[3]};
  const int patch = g.patch();
  const int p_total = is[2] * is[3];
  const std::size_t out_plane = static_cast<std::size_t>(c_out) * h_out * w_out;
  std::vector<Real> out(static_cast<std::size_t>(n_batch) * out_plane, Real(0));
  std::vector<Real> gcol(static_cast<std::size_t>(patch) * p_total);
  for (int n = 0; n < n_batch; ++n) {
    const Real* in_n = input.data() + static_cast<std::size_t>(n) * c_in * p_total;
    std::fill(gcol.begin(), gcol.end(), Real(0));
    gemm_atb_acc(weight.data(), in_n, gcol.data(), c_in, patch, p_total);
    col2im_acc(gcol.data(), g, out.data() + n * out_plane);
    if (bias.defined()) {
      Real* on = out.data() + n * out_plane;
      for (int c = 0; c < c_out; ++c) {
        const Real b = bias.data()[c];
        Real* plane = on + static_cast<std::size_t>(c) * h_out * w_out;
        for (int p = 0; p < h_out * w_out; ++p) plane[p] += b;
      }
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;
  std::vector<NodePtr<Real>> parents{in_node, w_node};
  if (b_node) parents.push_back(b_node);

  auto backward = [in_node, w_node, b_node, g, n_batch, c_in, c_out, patch,
                   p_total](detail::TensorNode<Real>& node) {
    const std::size_t out_plane = static_cast<std::size_t>(c_out) * g.h_in * g.w_in;
    std::vector<Real> col(static_cast<std::size_t>(patch) * p_total);
    if (in_node->requires_grad) in_node->ensure_grad();
    if (w_node->requires_grad) w_node->ensure_grad();
    if (b_node && b_node->requires_grad) b_node->ensure_grad();
    for (int n = 0; n < n_batch; ++n) {
      const Real* gout = node.grad.data() + n * out_plane;
      if (in_node->requires_grad || w_node->requires_grad)
        im2col(gout, g, col.data());
      if (in_node->requires_grad)
        gemm_acc(w_node->values.data(), col.data(),
                 in_node->grad.data() + static_cast<std::size_t>(n) * c_in * p_total,
                 c_in, patch, p_total);
      if (w_node->requires_grad)
        gemm_abt_acc(in_node->values.data() + static_cast<std::size_t>(n) * c_in * p_total,
                     col.data(), w_node->grad.data(), c_in, patch, p_total);
      if (b_node && b_node->requires_grad) {
        for (int c = 0; c < c_out; ++c) {
          const Real* plane = gout + static_cast<std::size_t>(c) * g.h_in * g.w_in;
          Real acc = 0;
          for (int p = 0; p < g.h_in * g.w_in; ++p) acc += plane[p];
          b_node->grad[c] += acc;
        }
      }
    }
  };

  return Tensor<Real>::make_node({n_batch, c_out, h_out, w_out}, std::move(out),
                                 std::move(parents), std::move(backward), "deconv2d");
}

template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& input, const Tensor<Real>& gamma,
                           const Tensor<Real>& beta, Real epsilon) {
  check_image_rank(input.shape(), "instance_norm input");
  const Shape& is = input.shape();
  const int n_batch = is[0], channels = is[1];
  const int m = is[2] * is[3];
  if (gamma.numel() != channels || beta.numel() != channels)
    throw std::invalid_argument("instance_norm: gamma/beta must have " +
                                std::to_string(channels) + " entries");
  if (m < 1) throw std::invalid_argument("instance_norm: empty plane");

  std::vector<Real> out(input.numel());
  std::vector<Real> means(static_cast<std::size_t>(n_batch) * channels);
  std::vector<Real> invstds(means.size());
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * m;
      const Real* x = input.data() + base;
      Real mu = 0;
      for (int i = 0; i < m; ++i) mu += x[i];
      mu /= m;
      Real var = 0;
      for (int i = 0; i < m; ++i) {
        const Real d = x[i] - mu;
        var += d * d;
      }
      var /= m;
      const Real invstd = Real(1) / std::sqrt(var + epsilon);
      means[n * channels + c] = mu;
      invstds[n * channels + c] = invstd;
      const Real gc = gamma.data()[c], bc = beta.data()[c];
      Real* y = out.data() + base;
      for (int i = 0; i < m; ++i) y[i] = (x[i] - mu) * invstd * gc + bc;
    }
  }

  auto in_node = input.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  auto backward = [in_node, g_node, b_node, n_batch, channels, m,
                   means = std::move(means),
                   invstds = std::move(invstds)](detail::TensorNode<Real>& node) {
    if (in_node->requires_grad) in_node->ensure_grad();
    if (g_node->requires_grad) g_node->ensure_grad();
    if (b_node->requires_grad) b_node->ensure_grad();
    for (int n = 0; n < n_batch; ++n) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * m;
        const Real* dy = node.grad.data() + base;
        const Real* x = in_node->values.data() + base;
        const Real mu = means[n * channels + c];
        const Real invstd = invstds[n * channels + c];
        Real s1 = 0, s2 = 0;
        for (int i = 0; i < m; ++i) {
          const Real xh = (x[i] - mu) * invstd;
          s1 += dy[i];
          s2 += dy[i] * xh;
        }
        if (g_node->requires_grad) g_node->grad[c] += s2;
        if (b_node->requires_grad) b_node->grad[c] += s1;
        if (in_node->requires_grad) {
          const Real gc = g_node->values[c];
          Real* dx = in_node->grad.data() + base;
          const Real inv_m = Real(1) / m;
          for (int i = 0; i < m; ++i) {
            const Real xh = (x[i] - mu) * invstd;
            dx[i] += gc * invstd * (dy[i] - s1 * inv_m - xh * s2 * inv_m);
          }
        }
      }
    }
  };

  return Tensor<Real>::make_node(is, std::move(out), {in_node, g_node, b_node},
                                 std::move(backward), "instance_norm");
}

template <typename Real>
Tensor<Real> leaky_relu(const Tensor<Real>& x, Real slope) {
  std::vector<Real> out(x.numel());
  const Real* in = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out[i] = in[i] > Real(0) ? in[i] : slope * in[i];
  auto in_node = x.node();
  auto backward = [in_node, slope](detail::TensorNode<Real>& node) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      in_node->grad[i] +=
          node.grad[i] * (in_node->values[i] > Real(0) ? Real(1) : slope);
  };
  return Tensor<Real>::make_node(x.shape(), std::move(out), {in_node},
                                 std::move(backward), "leaky_relu");
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  const Real* in = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out[i] = Real(1) / (Real(1) + std::exp(-in[i]));
  auto in_node = x.node();
  auto backward = [in_node](detail::TensorNode<Real>& node) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const Real y = node.values[i];
      in_node->grad[i] += node.grad[i] * y * (Real(1) - y);
    }
  };
  return Tensor<Real>::make_node(x.shape(), std::move(out), {in_node},
                                 std::move(backward), "sigmoid");
}

template <typename Real>
Tensor<Real> softmax_channels(const Tensor<Real>& x) {
  check_image_rank(x.shape(), "softmax_channels input");
  const Shape& s = x.shape();
  const int n_batch = s[0], channels = s[1];
  const std::int64_t pixels = static_cast<std::int64_t>(s[2]) * s[3];
  std::vector<Real> out(x.numel());
  const Real* in = x.data();
  for (int n = 0; n < n_batch; ++n) {
    const std::size_t nb = static_cast<std::size_t>(n) * channels * pixels;
    for (std::int64_t p = 0; p < pixels; ++p) {
      Real mx = in[nb + p];
      for (int c = 1; c < channels; ++c)
        mx = std::max(mx, in[nb + static_cast<std::size_t>(c) * pixels + p]);
      Real denom = 0;
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = nb + static_cast<std::size_t>(c) * pixels + p;
        out[i] = std::exp(in[i] - mx);
        denom += out[i];
      }
      const Real inv = Real(1) / denom;
      for (int c = 0; c < channels; ++c)
        out[nb + static_cast<std::size_t>(c) * pixels + p] *= inv;
    }
  }
  auto in_node = x.node();
  auto backward = [in_node, n_batch, channels, pixels](detail::TensorNode<Real>& node) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t nb = static_cast<std::size_t>(n) * channels * pixels;
      for (std::int64_t p = 0; p < pixels; ++p) {
        Real dot = 0;
        for (int c = 0; c < channels; ++c) {
          const std::size_t i = nb + static_cast<std::size_t>(c) * pixels + p;
          dot += node.grad[i] * node.values[i];
        }
        for (int c = 0; c < channels; ++c) {
          const std::size_t i = nb + static_cast<std::size_t>(c) * pixels + p;
          in_node->grad[i] += node.values[i] * (node.grad[i] - dot);
        }
      }
    }
  };
  return Tensor<Real>::make_node(s, std::move(out), {in_node}, std::move(backward),
                                 "softmax_channels");
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_image_rank(a.shape(), "concat_channels a");
  check_image_rank(b.shape(), "concat_channels b");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw std::invalid_argument("concat_channels: spatial mismatch between " +
                                shape_str(sa) + " and " + shape_str(sb));
  const int n_batch = sa[0], ca = sa[1], cb = sb[1];
  const std::size_t plane = static_cast<std::size_t>(sa[2]) * sa[3];
  std::vector<Real> out(static_cast<std::size_t>(n_batch) * (ca + cb) * plane);
  for (int n = 0; n < n_batch; ++n) {
    std::memcpy(out.data() + static_cast<std::size_t>(n) * (ca + cb) * plane,
                a.data() + static_cast<std::size_t>(n) * ca * plane,
                sizeof(Real) * ca * plane);
    std::memcpy(out.data() + (static_cast<std::size_t>(n) * (ca + cb) + ca) * plane,
                b.data() + static_cast<std::size_t>(n) * cb * plane,
                sizeof(Real) * cb * plane);
  }
  auto a_node = a.node();
  auto b_node = b.node();
  auto backward = [a_node, b_node, n_batch, ca, cb, plane](detail::TensorNode<Real>& node) {
    for (int n = 0; n < n_batch; ++n) {
      const Real* g = node.grad.data() + static_cast<std::size_t>(n) * (ca + cb) * plane;
      if (a_node->requires_grad) {
        a_node->ensure_grad();
        Real* ga = a_node->grad.data() + static_cast<std::size_t>(n) * ca * plane;
        for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * plane; ++i)
          ga[i] += g[i];
      }
      if (b_node->requires_grad) {
        b_node->ensure_grad();
        Real* gb = b_node->grad.data() + static_cast<std::size_t>(n) * cb * plane;
        const Real* gsrc = g + static_cast<std::size_t>(ca) * plane;
        for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * plane; ++i)
          gb[i] += gsrc[i];
      }
    }
  };
  return Tensor<Real>::make_node({n_batch, ca + cb, sa[2], sa[3]}, std::move(out),
                                 {a_node, b_node}, std::move(backward),
                                 "concat_channels");
}

namespace {

struct LerpTap {
  int lo, hi;
  double w_hi;  // weight of hi; lo gets 1 - w_hi
};

// Half-pixel-center source coordinate, clamped to the valid range.
std::vector<LerpTap> bilinear_taps(int in_extent, int out_extent) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out_extent));
  const double ratio = static_cast<double>(in_extent) / out_extent;
  for (int i = 0; i < out_extent; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in_extent - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in_extent - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

template <typename Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& x, int out_h, int out_w) {
  check_image_rank(x.shape(), "resize_bilinear input");
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize_bilinear: target extent must be positive");
  const Shape& s = x.shape();
  const int n_batch = s[0], channels = s[1], h = s[2], w = s[3];
  auto rows = bilinear_taps(h, out_h);
  auto cols = bilinear_taps(w, out_w);
  std::vector<Real> out(static_cast<std::size_t>(n_batch) * channels * out_h * out_w);
  const Real* in = x.data();
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const Real* plane =
          in + (static_cast<std::size_t>(n) * channels + c) * h * w;
      Real* oplane =
          out.data() + (static_cast<std::size_t>(n) * channels + c) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const LerpTap& ry = rows[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const LerpTap& rx = cols[ox];
          const double v00 = plane[static_cast<std::size_t>(ry.lo) * w + rx.lo];
          const double v01 = plane[static_cast<std::size_t>(ry.lo) * w + rx.hi];
          const double v10 = plane[static_cast<std::size_t>(ry.hi) * w + rx.lo];
          const double v11 = plane[static_cast<std::size_t>(ry.hi) * w + rx.hi];
          const double top = v00 + (v01 - v00) * rx.w_hi;
          const double bot = v10 + (v11 - v10) * rx.w_hi;
          oplane[static_cast<std::size_t>(oy) * out_w + ox] =
              static_cast<Real>(top + (bot - top) * ry.w_hi);
        }
      }
    }
  }
  auto in_node = x.node();
  auto backward = [in_node, n_batch, channels, h, w, out_h, out_w,
                   rows = std::move(rows),
                   cols = std::move(cols)](detail::TensorNode<Real>& node) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (int n = 0; n < n_batch; ++n) {
      for (int c = 0; c < channels; ++c) {
        Real* gplane =
            in_node->grad.data() + (static_cast<std::size_t>(n) * channels + c) * h * w;
        const Real* g =
            node.grad.data() + (static_cast<std::size_t>(n) * channels + c) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const LerpTap& ry = rows[oy];
          for (int ox = 0; ox < out_w; ++ox) {
            const LerpTap& rx = cols[ox];
            const double gv = g[static_cast<std::size_t>(oy) * out_w + ox];
            gplane[static_cast<std::size_t>(ry.lo) * w + rx.lo] +=
                static_cast<Real>(gv * (1 - ry.w_hi) * (1 - rx.w_hi));
            gplane[static_cast<std::size_t>(ry.lo) * w + rx.hi] +=
                static_cast<Real>(gv * (1 - ry.w_hi) * rx.w_hi);
            gplane[static_cast<std::size_t>(ry.hi) * w + rx.lo] +=
                static_cast<Real>(gv * ry.w_hi * (1 - rx.w_hi));
            gplane[static_cast<std::size_t>(ry.hi) * w + rx.hi] +=
                static_cast<Real>(gv * ry.w_hi * rx.w_hi);
          }
        }
      }
    }
  };
  return Tensor<Real>::make_node({n_batch, channels, out_h, out_w}, std::move(out),
                                 {in_node}, std::move(backward), "resize_bilinear");
}

template <typename Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& x, double scale) {
  if (!(scale > 0)) throw std::invalid_argument("resize_bilinear: scale must be > 0");
  check_image_rank(x.shape(), "resize_bilinear input");
  const int out_h = static_cast<int>(std::lround(x.dim(2) * scale));
  const int out_w = static_cast<int>(std::lround(x.dim(3) * scale));
  return resize_bilinear(x, out_h, out_w);
}

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, bool training,
                     std::mt19937_64& rng) {
  if (rate < 0 || rate >= 1)
    throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(x.numel()));
  std::vector<Real> out(x.numel());
  const Real* in = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double u = (rng() >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
    mask[i] = u >= rate;
    out[i] = mask[i] ? in[i] * keep_scale : Real(0);
  }
  auto in_node = x.node();
  auto backward = [in_node, keep_scale,
                   mask = std::move(mask)](detail::TensorNode<Real>& node) {
    if (!in_node->requires_grad) return;
    in_node->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (mask[i]) in_node->grad[i] += node.grad[i] * keep_scale;
  };
  return Tensor<Real>::make_node(x.shape(), std::move(out), {in_node},
                                 std::move(backward), "dropout");
}

namespace {

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  auto backward = [an, bn](detail::TensorNode<Real>& node) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) bn->grad[i] += node.grad[i];
    }
  };
  return Tensor<Real>::make_node(a.shape(), std::move(out), {an, bn},
                                 std::move(backward), "add");
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  auto backward = [an, bn](detail::TensorNode<Real>& node) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) bn->grad[i] -= node.grad[i];
    }
  };
  return Tensor<Real>::make_node(a.shape(), std::move(out), {an, bn},
                                 std::move(backward), "sub");
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  auto backward = [an, bn](detail::TensorNode<Real>& node) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        an->grad[i] += node.grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        bn->grad[i] += node.grad[i] * an->values[i];
    }
  };
  return Tensor<Real>::make_node(a.shape(), std::move(out), {an, bn},
                                 std::move(backward), "mul");
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * s;
  auto an = a.node();
  auto backward = [an, s](detail::TensorNode<Real>& node) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i] * s;
  };
  return Tensor<Real>::make_node(a.shape(), std::move(out), {an},
                                 std::move(backward), "scale");
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + s;
  auto an = a.node();
  auto backward = [an](detail::TensorNode<Real>& node) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
  };
  return Tensor<Real>::make_node(a.shape(), std::move(out), {an},
                                 std::move(backward), "add_scalar");
}

template <typename Real>
Tensor<Real> rsub_scalar(Real s, const Tensor<Real>& a) {
  std::vector<Real> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = s - a.data()[i];
  auto an = a.node();
  auto backward = [an](detail::TensorNode<Real>& node) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] -= node.grad[i];
  };
  return Tensor<Real>::make_node(a.shape(), std::move(out), {an},
                                 std::move(backward), "rsub_scalar");
}

template <typename Real>
Tensor<Real> log_clamped(const Tensor<Real>& x, Real floor) {
  std::vector<Real> out(x.numel());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out[i] = std::log(std::max(x.data()[i], floor));
  auto xn = x.node();
  auto backward = [xn, floor](detail::TensorNode<Real>& node) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (xn->values[i] > floor) xn->grad[i] += node.grad[i] / xn->values[i];
  };
  return Tensor<Real>::make_node(x.shape(), std::move(out), {xn},
                                 std::move(backward), "log_clamped");
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  auto xn = x.node();
  auto backward = [xn](detail::TensorNode<Real>& node) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const Real g = node.grad[0];
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  };
  return Tensor<Real>::make_node({1}, {acc}, {xn}, std::move(backward), "sum");
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  const Real inv = Real(1) / static_cast<Real>(x.numel());
  Real acc = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  acc *= inv;
  auto xn = x.node();
  auto backward = [xn, inv](detail::TensorNode<Real>& node) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const Real g = node.grad[0] * inv;
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  };
  return Tensor<Real>::make_node({1}, {acc}, {xn}, std::move(backward), "mean");
}

#define MMAN_INSTANTIATE_OPS(Real)                                              \
  template Tensor<Real> conv2d<Real>(const Tensor<Real>&, const Tensor<Real>&, \
                                     const Tensor<Real>&, int, int, int);      \
  template Tensor<Real> deconv2d<Real>(const Tensor<Real>&,                    \
                                       const Tensor<Real>&,                    \
                                       const Tensor<Real>&, int, int);         \
  template Tensor<Real> instance_norm<Real>(                                   \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Real);    \
  template Tensor<Real> leaky_relu<Real>(const Tensor<Real>&, Real);           \
  template Tensor<Real> sigmoid<Real>(const Tensor<Real>&);                    \
  template Tensor<Real> softmax_channels<Real>(const Tensor<Real>&);           \
  template Tensor<Real> concat_channels<Real>(const Tensor<Real>&,             \
                                              const Tensor<Real>&);            \
  template Tensor<Real> resize_bilinear<Real>(const Tensor<Real>&, int, int);  \
  template Tensor<Real> resize_bilinear<Real>(const Tensor<Real>&, double);    \
  template Tensor<Real> dropout<Real>(const Tensor<Real>&, double, bool,       \
                                      std::mt19937_64&);                       \
  template Tensor<Real> add<Real>(const Tensor<Real>&, const Tensor<Real>&);   \
  template Tensor<Real> sub<Real>(const Tensor<Real>&, const Tensor<Real>&);   \
  template Tensor<Real> mul<Real>(const Tensor<Real>&, const Tensor<Real>&);   \
  template Tensor<Real> scale<Real>(const Tensor<Real>&, Real);                \
  template Tensor<Real> add_scalar<Real>(const Tensor<Real>&, Real);           \
  template Tensor<Real> rsub_scalar<Real>(Real, const Tensor<Real>&);          \
  template Tensor<Real> log_clamped<Real>(const Tensor<Real>&, Real);          \
  template Tensor<Real> sum<Real>(const Tensor<Real>&);                        \
  template Tensor<Real> mean<Real>(const Tensor<Real>&);

MMAN_INSTANTIATE_OPS(float)
MMAN_INSTANTIATE_OPS(double)
#undef MMAN_INSTANTIATE_OPS

}  // namespace mman
