#include "mman/models.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mman/rng.hpp"

namespace mman {

namespace {

template <typename Real>
Tensor<Real> he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (auto& x : v) x = static_cast<Real>(normal01(rng) * std_dev);
  return Tensor<Real>::parameter(std::move(shape), std::move(v));
}

bool power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

}  // namespace

template <typename Real>
StackNet<Real>::StackNet(LayerStack spec, std::mt19937_64& rng)
    : spec_(std::move(spec)) {
  primary_.resize(spec_.layers.size());
  secondary_.resize(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        const int fan_in = l.in_channels * l.kernel * l.kernel;
        primary_[i] = he_normal<Real>(
            {l.out_channels, l.in_channels, l.kernel, l.kernel}, fan_in, rng);
        if (l.bias)
          secondary_[i] = Tensor<Real>::parameter(
              {l.out_channels}, std::vector<Real>(l.out_channels, Real(0)));
        break;
      }
      case LayerKind::deconv: {
        const int fan_in = l.in_channels * l.kernel * l.kernel;
        primary_[i] = he_normal<Real>(
            {l.in_channels, l.out_channels, l.kernel, l.kernel}, fan_in, rng);
        if (l.bias)
          secondary_[i] = Tensor<Real>::parameter(
              {l.out_channels}, std::vector<Real>(l.out_channels, Real(0)));
        break;
      }
      case LayerKind::instance_norm:
        primary_[i] = Tensor<Real>::parameter(
            {l.in_channels}, std::vector<Real>(l.in_channels, Real(1)));
        secondary_[i] = Tensor<Real>::parameter(
            {l.in_channels}, std::vector<Real>(l.in_channels, Real(0)));
        break;
      case LayerKind::concat_marker:
        throw std::invalid_argument(
            "StackNet: concat_marker cannot be realized inside a linear stack");
      default:
        break;
    }
  }
}

template <typename Real>
Tensor<Real> StackNet<Real>::forward(const Tensor<Real>& x, bool training,
                                     std::mt19937_64& rng) const {
  Tensor<Real> cur = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    switch (l.kind) {
      case LayerKind::conv:
        cur = conv2d(cur, primary_[i], secondary_[i], l.stride, l.padding,
                     l.dilation);
        break;
      case LayerKind::deconv:
        cur = deconv2d(cur, primary_[i], secondary_[i], l.stride, l.padding);
        break;
      case LayerKind::instance_norm:
        cur = instance_norm(cur, primary_[i], secondary_[i], Real(1e-5));
        break;
      case LayerKind::leaky_relu:
        cur = leaky_relu(cur, static_cast<Real>(l.slope));
        break;
      case LayerKind::sigmoid:
        cur = sigmoid(cur);
        break;
      case LayerKind::softmax:
        cur = softmax_channels(cur);
        break;
      case LayerKind::dropout:
        cur = dropout(cur, l.rate, training, rng);
        break;
      case LayerKind::concat_marker:
        throw std::logic_error("StackNet: unexpected concat_marker");
    }
  }
  return cur;
}

template <typename Real>
void StackNet<Real>::collect_params(const std::string& prefix,
                                    std::vector<NamedParam<Real>>& out) const {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string base = prefix + ".L" + std::to_string(i);
    if (l.kind == LayerKind::conv || l.kind == LayerKind::deconv) {
      out.push_back({base + ".weight", primary_[i], true});
      if (l.bias) out.push_back({base + ".bias", secondary_[i], false});
    } else if (l.kind == LayerKind::instance_norm) {
      out.push_back({base + ".gamma", primary_[i], false});
      out.push_back({base + ".beta", secondary_[i], false});
    }
  }
}

template <typename Real>
std::int64_t StackNet<Real>::realized_param_count() const {
  std::int64_t total = 0;
  for (const auto& t : primary_)
    if (t.defined()) total += t.numel();
  for (const auto& t : secondary_)
    if (t.defined()) total += t.numel();
  return total;
}

template <typename Real>
DualOutputGenerator<Real>::DualOutputGenerator(GeneratorConfig cfg,
                                               std::mt19937_64& rng)
    : cfg_(std::move(cfg)) {
  const auto& w = cfg_.encoder_widths;
  if (w.size() < 2)
    throw std::invalid_argument("generator: need at least two encoder widths");
  const int depth = static_cast<int>(w.size());
  for (int i = 0; i < depth; ++i) {
    LayerStack block = build_block(i == 0 ? cfg_.in_channels : w[i - 1], w[i],
                                   BlockKind::down);
    block.name = "enc" + std::to_string(i + 1);
    enc_.emplace_back(std::move(block), rng);
  }
  const int bottom = w.back();
  for (int d : cfg_.bridge_dilations) {
    LayerStack b;
    b.name = "bridge_d" + std::to_string(d);
    b.push(LayerSpec::conv(bottom, bottom, 3, 1, d, d));
    bridge_.emplace_back(std::move(b), rng);
  }
  {
    LayerStack b;
    b.name = "bridge_post";
    b.push(LayerSpec::instance_norm(bottom));
    b.push(LayerSpec::leaky_relu(0.2));
    bridge_post_ = StackNet<Real>(std::move(b), rng);
  }
  {
    LayerStack h;
    h.name = "low_head";
    h.push(LayerSpec::conv(bottom, cfg_.classes, 3, 1, 1));
    h.push(LayerSpec::softmax());
    low_head_ = StackNet<Real>(std::move(h), rng);
  }
  for (int j = 0; j < depth; ++j) {
    const int in_ch = j == 0 ? w[depth - 1] : 2 * w[depth - 1 - j];
    const int out_ch = j < depth - 1 ? w[depth - 2 - j] : w[0];
    LayerStack block =
        build_block(in_ch, out_ch, BlockKind::up, true, cfg_.dropout_rate);
    block.name = "dec" + std::to_string(j + 1);
    dec_.emplace_back(std::move(block), rng);
  }
  if (cfg_.mid_head) {
    LayerStack h;
    h.name = "mid_head";
    h.push(LayerSpec::conv(2 * w[0], cfg_.classes, 3, 1, 1));
    h.push(LayerSpec::softmax());
    mid_head_ = StackNet<Real>(std::move(h), rng);
  }
  {
    LayerStack h;
    h.name = "high_head";
    h.push(LayerSpec::conv(w[0], cfg_.classes, 3, 1, 1));
    h.push(LayerSpec::softmax());
    high_head_ = StackNet<Real>(std::move(h), rng);
  }
}

template <typename Real>
GeneratorOutputs<Real> DualOutputGenerator<Real>::forward(
    const Tensor<Real>& image, bool training, std::mt19937_64& rng) const {
  if (image.shape().size() != 4 || image.dim(1) != cfg_.in_channels)
    throw std::invalid_argument("generator: expected N x " +
                                std::to_string(cfg_.in_channels) +
                                " x H x W image, got " + shape_str(image.shape()));
  const int h = image.dim(2), w = image.dim(3);
  const int factor = downscale();
  if (h % factor || w % factor || h < factor || w < factor)
    throw std::invalid_argument("generator: extent " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by " +
                                std::to_string(factor));

  std::vector<Tensor<Real>> skips;
  Tensor<Real> cur = image;
  for (const auto& block : enc_) {
    cur = block.forward(cur, training, rng);
    skips.push_back(cur);
  }

  Tensor<Real> bridged;
  for (const auto& b : bridge_) {
    Tensor<Real> y = b.forward(cur, training, rng);
    bridged = bridged.defined() ? add(bridged, y) : y;
  }
  bridged = bridge_post_.forward(bridged, training, rng);

  GeneratorOutputs<Real> out;
  out.low = low_head_.forward(bridged, training, rng);

  const int depth = static_cast<int>(enc_.size());
  cur = bridged;
  for (int j = 0; j < depth; ++j) {
    cur = dec_[j].forward(cur, training, rng);
    if (j < depth - 1)
      cur = concat_channels(cur, skips[static_cast<std::size_t>(depth - 2 - j)]);
    if (cfg_.mid_head && j == 2)
      out.mid = mid_head_.forward(cur, training, rng);
  }
  out.high = high_head_.forward(cur, training, rng);
  return out;
}

template <typename Real>
std::vector<NamedParam<Real>> DualOutputGenerator<Real>::named_params() const {
  std::vector<NamedParam<Real>> out;
  for (std::size_t i = 0; i < enc_.size(); ++i)
    enc_[i].collect_params("g.enc" + std::to_string(i + 1), out);
  for (std::size_t i = 0; i < bridge_.size(); ++i)
    bridge_[i].collect_params("g.bridge" + std::to_string(i + 1), out);
  bridge_post_.collect_params("g.bridge_post", out);
  low_head_.collect_params("g.low_head", out);
  for (std::size_t i = 0; i < dec_.size(); ++i)
    dec_[i].collect_params("g.dec" + std::to_string(i + 1), out);
  if (cfg_.mid_head) mid_head_.collect_params("g.mid_head", out);
  high_head_.collect_params("g.high_head", out);
  return out;
}

template <typename Real>
std::int64_t DualOutputGenerator<Real>::realized_param_count() const {
  std::int64_t total = 0;
  for (const auto& b : enc_) total += b.realized_param_count();
  for (const auto& b : bridge_) total += b.realized_param_count();
  total += bridge_post_.realized_param_count();
  total += low_head_.realized_param_count();
  for (const auto& b : dec_) total += b.realized_param_count();
  if (cfg_.mid_head) total += mid_head_.realized_param_count();
  total += high_head_.realized_param_count();
  return total;
}

template <typename Real>
std::string DualOutputGenerator<Real>::manifest() const {
  std::ostringstream os;
  for (const auto& b : enc_) os << to_manifest(b.spec());
  for (const auto& b : bridge_) os << to_manifest(b.spec());
  os << to_manifest(bridge_post_.spec());
  os << to_manifest(low_head_.spec());
  const auto& w = cfg_.encoder_widths;
  const int depth = static_cast<int>(w.size());
  for (int j = 0; j < depth; ++j) {
    LayerStack display = dec_[static_cast<std::size_t>(j)].spec();
    if (j < depth - 1) {
      const int out_ch = w[static_cast<std::size_t>(depth - 2 - j)];
      display.push(LayerSpec::concat_marker(out_ch, out_ch));
    }
    os << to_manifest(display);
  }
  if (cfg_.mid_head) os << to_manifest(mid_head_.spec());
  os << to_manifest(high_head_.spec());
  return os.str();
}

template <typename Real>
Discriminator<Real>::Discriminator(DiscMode mode, int label_channels,
                                   int image_channels, int extent,
                                   std::mt19937_64& rng)
    : mode_(mode), extent_(extent) {
  const int in_ch = label_channels + image_channels;
  LayerStack stack;
  if (mode == DiscMode::macro) {
    if (!power_of_two(extent) || extent < 2)
      throw std::invalid_argument("macro discriminator: extent " +
                                  std::to_string(extent) +
                                  " is not reducible to 1x1 by stride-2 convs");
    stack.name = "macro_d" + std::to_string(extent);
    int ch = in_ch;
    int width = 64;
    for (int e = extent; e > 2; e /= 2) {
      stack.push(LayerSpec::conv(ch, width, 4, 2, 1));
      stack.push(LayerSpec::instance_norm(width));
      stack.push(LayerSpec::leaky_relu(0.2));
      ch = width;
      width = std::min(width * 2, 256);
    }
    stack.push(LayerSpec::conv(ch, 1, 4, 2, 1));  // 2x2 -> 1x1 scoring conv
    stack.push(LayerSpec::sigmoid());
  } else {
    if (extent < 22)
      throw std::invalid_argument("micro discriminator: extent " +
                                  std::to_string(extent) +
                                  " smaller than one 22-pixel field of view");
    stack.name = "micro_d";
    stack.push(LayerSpec::conv(in_ch, 64, 4, 2, 1));
    stack.push(LayerSpec::instance_norm(64));
    stack.push(LayerSpec::leaky_relu(0.2));
    stack.push(LayerSpec::conv(64, 128, 4, 2, 1));
    stack.push(LayerSpec::instance_norm(128));
    stack.push(LayerSpec::leaky_relu(0.2));
    stack.push(LayerSpec::conv(128, 1, 4, 2, 1));  // per-patch scoring conv
    stack.push(LayerSpec::sigmoid());
  }
  net_ = StackNet<Real>(std::move(stack), rng);
}

template <typename Real>
int Discriminator<Real>::fov() const {
  return mode_ == DiscMode::macro ? extent_ : receptive_field(net_.spec());
}

template <typename Real>
typename Discriminator<Real>::Out Discriminator<Real>::forward(
    const Tensor<Real>& label_prob, const Tensor<Real>& image) const {
  if (label_prob.shape().size() != 4 || image.shape().size() != 4)
    throw std::invalid_argument("discriminator: expected N x C x H x W inputs");
  const int h = label_prob.dim(2), w = label_prob.dim(3);
  if (mode_ == DiscMode::macro && (h != extent_ || w != extent_))
    throw std::invalid_argument("macro discriminator: extent " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                " is not reducible to 1x1 by this stack (expects " +
                                std::to_string(extent_) + ")");
  if (mode_ == DiscMode::micro && (h < fov() || w < fov()))
    throw std::invalid_argument("micro discriminator: input " + std::to_string(h) +
                                "x" + std::to_string(w) +
                                " smaller than one field of view (" +
                                std::to_string(fov()) + ")");
  Tensor<Real> joint = concat_channels(label_prob, image);
  std::mt19937_64 unused(0);  // discriminators have no dropout layers
  Tensor<Real> grid = net_.forward(joint, false, unused);
  Out out;
  out.grid = grid;
  out.score = mean(grid);
  return out;
}

template <typename Real>
std::vector<NamedParam<Real>> Discriminator<Real>::named_params(
    const std::string& prefix) const {
  std::vector<NamedParam<Real>> out;
  net_.collect_params(prefix, out);
  return out;
}

template <typename Real>
std::int64_t Discriminator<Real>::realized_param_count() const {
  return net_.realized_param_count();
}

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::baseline: return "baseline";
    case VariantKind::single_an: return "single_an";
    case VariantKind::double_an: return "double_an";
    case VariantKind::multiple_an: return "multiple_an";
    case VariantKind::mman: return "mman";
  }
  return "?";
}

VariantKind variant_from_string(const std::string& s) {
  if (s == "baseline") return VariantKind::baseline;
  if (s == "single_an") return VariantKind::single_an;
  if (s == "double_an") return VariantKind::double_an;
  if (s == "multiple_an") return VariantKind::multiple_an;
  if (s == "mman") return VariantKind::mman;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

template <typename Real>
std::vector<NamedParam<Real>> ModelSet<Real>::generator_params() const {
  return generator.named_params();
}

template <typename Real>
std::vector<NamedParam<Real>> ModelSet<Real>::discriminator_params() const {
  std::vector<NamedParam<Real>> out;
  for (const auto& a : discs) {
    auto p = a.disc.named_params("d." + a.slot);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename Real>
std::string ModelSet<Real>::manifest() const {
  std::ostringstream os;
  os << "variant " << to_string(kind) << "\n";
  os << generator.manifest();
  for (const auto& a : discs) os << to_manifest(a.disc.stack());
  return os.str();
}

template <typename Real>
ModelSet<Real> build_variant(VariantKind kind, int image_extent, int classes,
                             double lambda2, double lambda_mix,
                             std::uint64_t seed) {
  GeneratorConfig gcfg;
  gcfg.classes = classes;
  gcfg.mid_head = kind == VariantKind::multiple_an;
  auto grng = make_rng(seed, 0x67656eull);  // generator stream
  DualOutputGenerator<Real> gen(gcfg, grng);

  const int factor = gen.downscale();
  if (image_extent % factor || image_extent / factor < 2)
    throw std::invalid_argument("build_variant: image extent " +
                                std::to_string(image_extent) +
                                " incompatible with 1/" + std::to_string(factor) +
                                " low-resolution output");
  const int low_extent = image_extent / factor;
  const int mid_extent = image_extent / 2;
  const int img_ch = gcfg.in_channels;

  ModelSet<Real> set{kind, std::move(gen), {}};
  auto drng = make_rng(seed, 0x646973ull);  // discriminator stream
  switch (kind) {
    case VariantKind::baseline:
      break;
    case VariantKind::single_an:
      set.discs.push_back({"macro", AttachPoint::high,
                           Discriminator<Real>(DiscMode::macro, classes, img_ch,
                                               image_extent, drng),
                           lambda_mix});
      break;
    case VariantKind::double_an:
      set.discs.push_back({"macro", AttachPoint::high,
                           Discriminator<Real>(DiscMode::macro, classes, img_ch,
                                               image_extent, drng),
                           1.0});
      set.discs.push_back({"micro", AttachPoint::high,
                           Discriminator<Real>(DiscMode::micro, classes, img_ch,
                                               image_extent, drng),
                           lambda2});
      break;
    case VariantKind::multiple_an:
      set.discs.push_back({"macro", AttachPoint::low,
                           Discriminator<Real>(DiscMode::macro, classes, img_ch,
                                               low_extent, drng),
                           1.0});
      set.discs.push_back({"micro", AttachPoint::high,
                           Discriminator<Real>(DiscMode::micro, classes, img_ch,
                                               image_extent, drng),
                           lambda2});
      set.discs.push_back({"extra", AttachPoint::mid,
                           Discriminator<Real>(DiscMode::micro, classes, img_ch,
                                               mid_extent, drng),
                           lambda2});
      break;
    case VariantKind::mman:
      set.discs.push_back({"macro", AttachPoint::low,
                           Discriminator<Real>(DiscMode::macro, classes, img_ch,
                                               low_extent, drng),
                           1.0});
      set.discs.push_back({"micro", AttachPoint::high,
                           Discriminator<Real>(DiscMode::micro, classes, img_ch,
                                               image_extent, drng),
                           lambda2});
      break;
  }
  return set;
}

#define MMAN_INSTANTIATE_MODELS(Real)                                \
  template class StackNet<Real>;                                     \
  template class DualOutputGenerator<Real>;                          \
  template class Discriminator<Real>;                                \
  template struct ModelSet<Real>;                                    \
  template ModelSet<Real> build_variant<Real>(VariantKind, int, int, \
                                              double, double, std::uint64_t);

MMAN_INSTANTIATE_MODELS(float)
MMAN_INSTANTIATE_MODELS(double)
#undef MMAN_INSTANTIATE_MODELS

}  // namespace mman
