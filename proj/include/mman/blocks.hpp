#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mman {

enum class LayerKind {
  conv,
  deconv,
  instance_norm,
  leaky_relu,
  sigmoid,
  softmax,
  dropout,
  concat_marker,  // skip connection joins here; channels jump by skip width
};

struct LayerSpec {
  LayerKind kind;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int in_channels = 0;
  int out_channels = 0;
  bool bias = true;      // conv/deconv
  double slope = 0.2;    // leaky_relu
  double rate = 0.5;     // dropout

  static LayerSpec conv(int in_ch, int out_ch, int k, int s, int p, int d = 1,
                        bool bias = true);
  static LayerSpec deconv(int in_ch, int out_ch, int k, int s, int p,
                          bool bias = true);
  static LayerSpec instance_norm(int channels);
  static LayerSpec leaky_relu(double slope = 0.2);
  static LayerSpec sigmoid();
  static LayerSpec softmax();
  static LayerSpec dropout(double rate = 0.5);
  static LayerSpec concat_marker(int in_ch, int joined_ch);
};

// Linear sequence of layers; the declarative source of the shape,
// receptive-field and parameter calculus and of architecture manifests.
struct LayerStack {
  std::string name;
  std::vector<LayerSpec> layers;

  LayerStack& push(LayerSpec spec);
  // out_channels of the last channel-bearing layer, or fallback when none.
  int out_channels_or(int fallback) const;
};

struct ShapeCHW {
  int c = 0, h = 0, w = 0;
  bool operator==(const ShapeCHW&) const = default;
};

// Per-layer output shapes; the final entry is the stack output. Throws,
// naming the layer, as soon as an extent underflows.
std::vector<ShapeCHW> shape_trace(const LayerStack& stack, ShapeCHW input);

// Square field-of-view side in input pixels, via
// rf += (k_eff - 1) * prod(previous strides), starting at 1.
// Defined for stacks of convolutions and pointwise layers only.
int receptive_field(const LayerStack& stack);

// Product of the strides of all conv layers (score-grid stride in pixels).
int stride_product(const LayerStack& stack);

// conv/deconv: Cin*Cout*k^2 (+Cout when biased); instance_norm: 2*C.
std::int64_t param_count(const LayerStack& stack);

enum class BlockKind { down, up };

// down: conv(k4,s2,p1) + instance_norm + leaky_relu(0.2)
// up:   deconv(k4,s2,p1) + instance_norm + leaky_relu(0.2) [+ dropout]
LayerStack build_block(int in_ch, int out_ch, BlockKind kind,
                       bool with_dropout = false, double dropout_rate = 0.5);

// Human-readable architecture manifest; embedded in checkpoints and reports.
std::string to_manifest(const LayerStack& stack);

}  // namespace mman
