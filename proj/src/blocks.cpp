#include "mman/blocks.hpp"

#include <sstream>
#include <stdexcept>

namespace mman {

LayerSpec LayerSpec::conv(int in_ch, int out_ch, int k, int s, int p, int d,
                          bool bias) {
  LayerSpec l{LayerKind::conv};
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = k;
  l.stride = s;
  l.padding = p;
  l.dilation = d;
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::deconv(int in_ch, int out_ch, int k, int s, int p, bool bias) {
  LayerSpec l{LayerKind::deconv};
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = k;
  l.stride = s;
  l.padding = p;
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::instance_norm(int channels) {
  LayerSpec l{LayerKind::instance_norm};
  l.in_channels = channels;
  l.out_channels = channels;
  return l;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec l{LayerKind::leaky_relu};
  l.slope = slope;
  return l;
}

LayerSpec LayerSpec::sigmoid() { return LayerSpec{LayerKind::sigmoid}; }

LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::softmax}; }

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l{LayerKind::dropout};
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::concat_marker(int in_ch, int joined_ch) {
  LayerSpec l{LayerKind::concat_marker};
  l.in_channels = in_ch;
  l.out_channels = in_ch + joined_ch;
  return l;
}

LayerStack& LayerStack::push(LayerSpec spec) {
  layers.push_back(spec);
  return *this;
}

int LayerStack::out_channels_or(int fallback) const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->out_channels > 0) return it->out_channels;
  return fallback;
}

namespace {

bool spatial(const LayerSpec& l) {
  return l.kind == LayerKind::conv || l.kind == LayerKind::deconv;
}

int k_eff(const LayerSpec& l) { return (l.kernel - 1) * l.dilation + 1; }

}  // namespace

std::vector<ShapeCHW> shape_trace(const LayerStack& stack, ShapeCHW input) {
  if (stack.layers.empty())
    throw std::invalid_argument("shape_trace: stack '" + stack.name + "' is empty");
  std::vector<ShapeCHW> out;
  ShapeCHW cur = input;
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const LayerSpec& l = stack.layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.c != l.in_channels)
          throw std::invalid_argument("shape_trace: layer " + std::to_string(i) +
                                      " of '" + stack.name + "' expects " +
                                      std::to_string(l.in_channels) +
                                      " channels, got " + std::to_string(cur.c));
        const int he = cur.h + 2 * l.padding - k_eff(l);
        const int we = cur.w + 2 * l.padding - k_eff(l);
        if (he < 0 || we < 0)
          throw std::invalid_argument(
              "shape_trace: layer " + std::to_string(i) + " of '" + stack.name +
              "' underflows " + std::to_string(cur.h) + "x" + std::to_string(cur.w));
        cur = {l.out_channels, he / l.stride + 1, we / l.stride + 1};
        break;
      }
      case LayerKind::deconv: {
        if (cur.c != l.in_channels)
          throw std::invalid_argument("shape_trace: layer " + std::to_string(i) +
                                      " of '" + stack.name + "' expects " +
                                      std::to_string(l.in_channels) +
                                      " channels, got " + std::to_string(cur.c));
        const int h = (cur.h - 1) * l.stride - 2 * l.padding + l.kernel;
        const int w = (cur.w - 1) * l.stride - 2 * l.padding + l.kernel;
        if (h < 1 || w < 1)
          throw std::invalid_argument("shape_trace: layer " + std::to_string(i) +
                                      " of '" + stack.name + "' underflows");
        cur = {l.out_channels, h, w};
        break;
      }
      case LayerKind::instance_norm:
        if (cur.c != l.in_channels)
          throw std::invalid_argument("shape_trace: instance_norm channel mismatch at layer " +
                                      std::to_string(i) + " of '" + stack.name + "'");
        break;
      case LayerKind::concat_marker:
        if (cur.c != l.in_channels)
          throw std::invalid_argument("shape_trace: concat channel mismatch at layer " +
                                      std::to_string(i) + " of '" + stack.name + "'");
        cur.c = l.out_channels;
        break;
      case LayerKind::leaky_relu:
      case LayerKind::sigmoid:
      case LayerKind::softmax:
      case LayerKind::dropout:
        break;
    }
    out.push_back(cur);
  }
  return out;
}

int receptive_field(const LayerStack& stack) {
  int rf = 1;
  int jump = 1;
  for (const LayerSpec& l : stack.layers) {
    if (l.kind == LayerKind::conv) {
      rf += (k_eff(l) - 1) * jump;
      jump *= l.stride;
    } else if (l.kind == LayerKind::deconv || l.kind == LayerKind::concat_marker) {
      throw std::invalid_argument(
          "receptive_field: stack '" + stack.name + "' contains non-conv spatial ops");
    }
  }
  return rf;
}

int stride_product(const LayerStack& stack) {
  int s = 1;
  for (const LayerSpec& l : stack.layers)
    if (l.kind == LayerKind::conv) s *= l.stride;
  return s;
}

std::int64_t param_count(const LayerStack& stack) {
  std::int64_t total = 0;
  for (const LayerSpec& l : stack.layers) {
    if (spatial(l)) {
      total += static_cast<std::int64_t>(l.in_channels) * l.out_channels * l.kernel *
               l.kernel;
      if (l.bias) total += l.out_channels;
    } else if (l.kind == LayerKind::instance_norm) {
      total += 2 * static_cast<std::int64_t>(l.in_channels);
    }
  }
  return total;
}

LayerStack build_block(int in_ch, int out_ch, BlockKind kind, bool with_dropout,
                       double dropout_rate) {
  if (in_ch < 1 || out_ch < 1)
    throw std::invalid_argument("build_block: channels must be positive");
  LayerStack stack;
  if (kind == BlockKind::down) {
    stack.name = "down";
    stack.push(LayerSpec::conv(in_ch, out_ch, 4, 2, 1));
  } else {
    stack.name = "up";
    stack.push(LayerSpec::deconv(in_ch, out_ch, 4, 2, 1));
  }
  stack.push(LayerSpec::instance_norm(out_ch));
  stack.push(LayerSpec::leaky_relu(0.2));
  if (with_dropout) stack.push(LayerSpec::dropout(dropout_rate));
  return stack;
}

std::string to_manifest(const LayerStack& stack) {
  std::ostringstream os;
  os << "stack " << stack.name << "\n";
  for (const LayerSpec& l : stack.layers) {
    os << "  ";
    switch (l.kind) {
      case LayerKind::conv:
        os << "conv " << l.in_channels << "->" << l.out_channels << " k" << l.kernel
           << " s" << l.stride << " p" << l.padding;
        if (l.dilation != 1) os << " d" << l.dilation;
        if (!l.bias) os << " nobias";
        break;
      case LayerKind::deconv:
        os << "deconv " << l.in_channels << "->" << l.out_channels << " k" << l.kernel
           << " s" << l.stride << " p" << l.padding;
        if (!l.bias) os << " nobias";
        break;
      case LayerKind::instance_norm:
        os << "instance_norm " << l.in_channels;
        break;
      case LayerKind::leaky_relu:
        os << "leaky_relu " << l.slope;
        break;
      case LayerKind::sigmoid:
        os << "sigmoid";
        break;
      case LayerKind::softmax:
        os << "softmax";
        break;
      case LayerKind::dropout:
        os << "dropout " << l.rate;
        break;
      case LayerKind::concat_marker:
        os << "concat " << l.in_channels << "->" << l.out_channels;
        break;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mman
