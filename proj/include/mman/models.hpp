#pragma once

#include <random>
#include <string>
#include <vector>

#include "mman/blocks.hpp"
#include "mman/ops.hpp"
#include "mman/tensor.hpp"

namespace mman {

template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
  bool decay;  // weight decay applies to conv/deconv weights only
};

// Realized linear layer stack owning its parameter tensors.
template <typename Real>
class StackNet {
 public:
  StackNet() = default;
  StackNet(LayerStack spec, std::mt19937_64& rng);

  Tensor<Real> forward(const Tensor<Real>& x, bool training,
                       std::mt19937_64& rng) const;
  const LayerStack& spec() const { return spec_; }
  void collect_params(const std::string& prefix,
                      std::vector<NamedParam<Real>>& out) const;
  std::int64_t realized_param_count() const;

 private:
  LayerStack spec_;
  std::vector<Tensor<Real>> primary_;    // weight or gamma, aligned with layers
  std::vector<Tensor<Real>> secondary_;  // bias or beta
};

struct GeneratorConfig {
  int in_channels = 3;
  int classes = 7;
  std::vector<int> encoder_widths{32, 64, 128, 256};
  std::vector<int> bridge_dilations{1, 2, 4};
  double dropout_rate = 0.5;
  bool mid_head = false;  // extra label head at the 3rd deconvolution
};

template <typename Real>
struct GeneratorOutputs {
  Tensor<Real> low;   // C x H/16 x W/16 class distribution
  Tensor<Real> high;  // C x H x W class distribution
  Tensor<Real> mid;   // defined only when the mid head is enabled
};

// Encoder / dilated-conv bridge / skip-connected decoder with two softmax
// heads: one on the bridge output (1/16 scale), one at full resolution.
template <typename Real>
class DualOutputGenerator {
 public:
  DualOutputGenerator(GeneratorConfig cfg, std::mt19937_64& rng);

  GeneratorOutputs<Real> forward(const Tensor<Real>& image, bool training,
                                 std::mt19937_64& rng) const;
  int downscale() const { return 1 << static_cast<int>(enc_.size()); }
  const GeneratorConfig& config() const { return cfg_; }
  std::vector<NamedParam<Real>> named_params() const;
  std::int64_t realized_param_count() const;
  std::string manifest() const;

 private:
  GeneratorConfig cfg_;
  std::vector<StackNet<Real>> enc_;
  std::vector<StackNet<Real>> bridge_;  // parallel dilated convs, summed
  StackNet<Real> bridge_post_;
  StackNet<Real> low_head_;
  std::vector<StackNet<Real>> dec_;
  StackNet<Real> mid_head_;
  StackNet<Real> high_head_;
};

enum class DiscMode { macro, micro };

// Conditioned on label (+) RGB concatenation. Macro mode reduces its extent
// to 1x1 (global score); micro mode scores a grid of 22-pixel patches at
// stride 8 and reports their mean.
template <typename Real>
class Discriminator {
 public:
  Discriminator(DiscMode mode, int label_channels, int image_channels,
                int extent, std::mt19937_64& rng);

  struct Out {
    Tensor<Real> score;  // scalar in (0,1)
    Tensor<Real> grid;   // per-patch sigmoid scores (1x1 for macro)
  };
  Out forward(const Tensor<Real>& label_prob, const Tensor<Real>& image) const;

  DiscMode mode() const { return mode_; }
  int extent() const { return extent_; }
  // Side of the square input patch behind one score, in pixels of the map the
  // discriminator sees; macro mode covers the whole extent.
  int fov() const;
  const LayerStack& stack() const { return net_.spec(); }
  std::vector<NamedParam<Real>> named_params(const std::string& prefix) const;
  std::int64_t realized_param_count() const;

 private:
  DiscMode mode_;
  int extent_;
  StackNet<Real> net_;
};

enum class VariantKind { baseline, single_an, double_an, multiple_an, mman };

std::string to_string(VariantKind kind);
VariantKind variant_from_string(const std::string& s);

enum class AttachPoint { low, high, mid };

// Generator plus the discriminators the variant attaches, with the weight of
// each adversarial term in the generator objective.
template <typename Real>
struct ModelSet {
  VariantKind kind;
  DualOutputGenerator<Real> generator;
  struct AttachedDisc {
    std::string slot;  // trace column slot: "macro", "micro" or "extra"
    AttachPoint point;
    Discriminator<Real> disc;
    double adv_weight;
  };
  std::vector<AttachedDisc> discs;

  std::vector<NamedParam<Real>> generator_params() const;
  std::vector<NamedParam<Real>> discriminator_params() const;
  std::string manifest() const;
};

// image_extent must be divisible by 16 with a power-of-two 1/16 extent.
// lambda2 weights patch discriminators, lambda_mix the single-AN term.
template <typename Real>
ModelSet<Real> build_variant(VariantKind kind, int image_extent, int classes,
                             double lambda2, double lambda_mix,
                             std::uint64_t seed);

#define MMAN_EXTERN_MODELS(Real)                                              \
  extern template class StackNet<Real>;                                       \
  extern template class DualOutputGenerator<Real>;                            \
  extern template class Discriminator<Real>;                                  \
  extern template struct ModelSet<Real>;                                      \
  extern template ModelSet<Real> build_variant<Real>(                         \
      VariantKind, int, int, double, double, std::uint64_t);

MMAN_EXTERN_MODELS(float)
MMAN_EXTERN_MODELS(double)
#undef MMAN_EXTERN_MODELS

}  // namespace mman
