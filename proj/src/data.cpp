#include "mman/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mman/ops.hpp"
#include "mman/rng.hpp"

namespace mman {

template <typename Real>
Tensor<Real> onehot(const IndexMap& map) {
  if (map.classes < 1 || map.h < 1 || map.w < 1)
    throw std::invalid_argument("onehot: empty label map");
  std::vector<Real> v(static_cast<std::size_t>(map.classes) * map.h * map.w, Real(0));
  const std::size_t plane = static_cast<std::size_t>(map.h) * map.w;
  for (std::size_t i = 0; i < plane; ++i) {
    const std::int32_t c = map.at[i];
    if (c < 0 || c >= map.classes)
      throw std::invalid_argument("onehot: class " + std::to_string(c) +
                                  " out of range at pixel " + std::to_string(i));
    v[static_cast<std::size_t>(c) * plane + i] = Real(1);
  }
  return Tensor<Real>::from_data({1, map.classes, map.h, map.w}, std::move(v));
}

template <typename Real>
IndexMap argmax_map(const Tensor<Real>& prob) {
  if (prob.shape().size() != 4 || prob.dim(0) != 1)
    throw std::invalid_argument("argmax_map: expected 1 x C x H x W, got " +
                                shape_str(prob.shape()));
  const int classes = prob.dim(1), h = prob.dim(2), w = prob.dim(3);
  IndexMap out{classes, h, w, std::vector<std::int32_t>(static_cast<std::size_t>(h) * w)};
  const Real* p = prob.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    Real best_v = p[i];
    for (int c = 1; c < classes; ++c) {
      const Real v = p[static_cast<std::size_t>(c) * plane + i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.at[i] = best;
  }
  return out;
}

namespace {

struct Vec2 {
  double x, y;
};

double sq(double v) { return v * v; }

// Anchor points and limb endpoints derived from a pose.
struct FigureGeometry {
  Vec2 shoulder_l, shoulder_r, hip_l, hip_r, head_c;
  Vec2 arm_l_end, arm_r_end, leg_l_end, leg_r_end;
};

FigureGeometry figure_geometry(const FigureSpec& f) {
  const double ca = std::cos(f.torso_angle), sa = std::sin(f.torso_angle);
  auto torso_frame = [&](double lx, double ly) {
    return Vec2{f.torso_cx + ca * lx - sa * ly, f.torso_cy + sa * lx + ca * ly};
  };
  // straight down, tilted outward by `angle` (side -1 left, +1 right)
  auto limb_dir = [&](double angle, double side) {
    const double a = f.torso_angle + side * angle;
    return Vec2{std::sin(a) * side, std::cos(a)};
  };
  FigureGeometry g;
  g.shoulder_l = torso_frame(-f.torso_halfw, -0.8 * f.torso_halfh);
  g.shoulder_r = torso_frame(f.torso_halfw, -0.8 * f.torso_halfh);
  g.hip_l = torso_frame(-0.6 * f.torso_halfw, f.torso_halfh);
  g.hip_r = torso_frame(0.6 * f.torso_halfw, f.torso_halfh);
  g.head_c = torso_frame(0, -(f.torso_halfh + 0.7 * f.head_radius));
  const Vec2 al = limb_dir(f.arm_angle_left, -1.0);
  g.arm_l_end = {g.shoulder_l.x + al.x * f.arm_length_left,
                 g.shoulder_l.y + al.y * f.arm_length_left};
  const Vec2 ar = limb_dir(f.arm_angle_right, 1.0);
  g.arm_r_end = {g.shoulder_r.x + ar.x * f.arm_length_right,
                 g.shoulder_r.y + ar.y * f.arm_length_right};
  const Vec2 ll = limb_dir(f.leg_angle_left, -1.0);
  g.leg_l_end = {g.hip_l.x + ll.x * f.leg_length_left,
                 g.hip_l.y + ll.y * f.leg_length_left};
  const Vec2 lr = limb_dir(f.leg_angle_right, 1.0);
  g.leg_r_end = {g.hip_r.x + lr.x * f.leg_length_right,
                 g.hip_r.y + lr.y * f.leg_length_right};
  return g;
}

}  // namespace

void FigureSpec::validate(int h, int w) const {
  if (torso_halfw < 1 || torso_halfh < 1)
    throw std::invalid_argument("figure: degenerate torso");
  if (head_radius < 1) throw std::invalid_argument("figure: degenerate head");
  if (arm_radius < 0.5 || leg_radius < 0.5)
    throw std::invalid_argument("figure: degenerate limb radius");
  if (arm_length_left <= 0 || arm_length_right <= 0 || leg_length_left <= 0 ||
      leg_length_right <= 0)
    throw std::invalid_argument("figure: zero-length limb");

  const FigureGeometry g = figure_geometry(*this);
  double lo_x = g.head_c.x - head_radius, hi_x = g.head_c.x + head_radius;
  double lo_y = g.head_c.y - head_radius, hi_y = g.head_c.y + head_radius;
  auto cover_capsule = [&](Vec2 a, Vec2 b, double r) {
    lo_x = std::min({lo_x, a.x - r, b.x - r});
    hi_x = std::max({hi_x, a.x + r, b.x + r});
    lo_y = std::min({lo_y, a.y - r, b.y - r});
    hi_y = std::max({hi_y, a.y + r, b.y + r});
  };
  cover_capsule(g.shoulder_l, g.arm_l_end, arm_radius);
  cover_capsule(g.shoulder_r, g.arm_r_end, arm_radius);
  cover_capsule(g.hip_l, g.leg_l_end, leg_radius);
  cover_capsule(g.hip_r, g.leg_r_end, leg_radius);
  const double diag = std::hypot(torso_halfw, torso_halfh);
  lo_x = std::min(lo_x, torso_cx - diag);
  hi_x = std::max(hi_x, torso_cx + diag);
  lo_y = std::min(lo_y, torso_cy - diag);
  hi_y = std::max(hi_y, torso_cy + diag);
  if (lo_x < 0 || lo_y < 0 || hi_x > w || hi_y > h)
    throw std::invalid_argument("figure: parts leave the canvas");
}

FigureSpec FigureSpec::sample(std::mt19937_64& rng, int h, int w) {
  const double s = std::min(h, w);
  FigureSpec f;
  f.torso_cx = w * uniform_in(rng, 0.46, 0.54);
  f.torso_cy = h * uniform_in(rng, 0.42, 0.48);
  f.torso_halfw = s * uniform_in(rng, 0.085, 0.115);
  f.torso_halfh = s * uniform_in(rng, 0.15, 0.19);
  f.torso_angle = uniform_in(rng, -0.10, 0.10);
  f.head_radius = s * uniform_in(rng, 0.065, 0.09);
  f.arm_radius = s * uniform_in(rng, 0.028, 0.04);
  f.arm_length_left = s * uniform_in(rng, 0.16, 0.24);
  f.arm_length_right = s * uniform_in(rng, 0.16, 0.24);
  f.arm_angle_left = uniform_in(rng, 0.35, 1.05);
  f.arm_angle_right = uniform_in(rng, 0.35, 1.05);
  f.leg_radius = s * uniform_in(rng, 0.03, 0.042);
  f.leg_length_left = s * uniform_in(rng, 0.16, 0.23);
  f.leg_length_right = s * uniform_in(rng, 0.16, 0.23);
  f.leg_angle_left = uniform_in(rng, 0.12, 0.38);
  f.leg_angle_right = uniform_in(rng, 0.12, 0.38);
  return f;
}

namespace {

double dist_to_segment(double px, double py, Vec2 a, Vec2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::min(std::max(t, 0.0), 1.0);
  return std::sqrt(sq(px - (a.x + t * vx)) + sq(py - (a.y + t * vy)));
}

// Rasterizes the label map. Limbs and head are painted first and the torso
// last, so every part is a convex shape minus at most one half-plane-like
// cut, which keeps all parts 4-connected.
IndexMap render_labels(const FigureSpec& f, int h, int w) {
  IndexMap map{kDeskClasses, h, w,
               std::vector<std::int32_t>(static_cast<std::size_t>(h) * w, 0)};
  const FigureGeometry g = figure_geometry(f);
  const double ca = std::cos(f.torso_angle), sa = std::sin(f.torso_angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      std::int32_t label = 0;
      if (sq(px - g.head_c.x) + sq(py - g.head_c.y) <= sq(f.head_radius)) label = 1;
      if (dist_to_segment(px, py, g.shoulder_l, g.arm_l_end) <= f.arm_radius)
        label = kClassLeftArm;
      if (dist_to_segment(px, py, g.shoulder_r, g.arm_r_end) <= f.arm_radius)
        label = kClassRightArm;
      if (dist_to_segment(px, py, g.hip_l, g.leg_l_end) <= f.leg_radius)
        label = kClassLeftLeg;
      if (dist_to_segment(px, py, g.hip_r, g.leg_r_end) <= f.leg_radius)
        label = kClassRightLeg;
      // torso frame coordinates (inverse rotation)
      const double rx = px - f.torso_cx, ry = py - f.torso_cy;
      const double ux = ca * rx + sa * ry, uy = -sa * rx + ca * ry;
      if (std::abs(ux) <= f.torso_halfw && std::abs(uy) <= f.torso_halfh) label = 2;
      map(y, x) = label;
    }
  }
  return map;
}

}  // namespace

void render_figure_rgb8(const FigureSpec& spec, std::uint64_t noise_seed, int h,
                        int w, std::vector<std::uint8_t>& rgb, IndexMap& labels) {
  if (h < 32 || w < 32)
    throw std::invalid_argument("synth_figure: canvas must be at least 32x32");
  spec.validate(h, w);
  labels = render_labels(spec, h, w);

  // Base palette (RGB in [0,1]); arms share one color and legs another, so
  // telling left from right requires pose, not color.
  static constexpr double kPalette[kDeskClasses][3] = {
      {0.32, 0.35, 0.40},  // background (textured below)
      {0.87, 0.71, 0.53},  // head
      {0.78, 0.21, 0.23},  // torso
      {0.22, 0.68, 0.30},  // left arm
      {0.22, 0.68, 0.30},  // right arm
      {0.22, 0.42, 0.82},  // left leg
      {0.22, 0.42, 0.82},  // right leg
  };

  auto rng = make_rng(noise_seed, 0x706978ull);
  double jitter[kDeskClasses][3];
  for (auto& row : jitter)
    for (double& v : row) v = uniform_in(rng, -0.04, 0.04);
  const double phase_x = uniform_in(rng, 0.0, 6.283);
  const double phase_y = uniform_in(rng, 0.0, 6.283);
  const double freq = uniform_in(rng, 0.05, 0.12);

  rgb.assign(static_cast<std::size_t>(h) * w * 3, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const std::int32_t c = labels.at[i];
      for (int ch = 0; ch < 3; ++ch) {
        double v = kPalette[c][ch] + jitter[c][ch];
        if (c == 0)
          v += 0.06 * std::sin(freq * x + phase_x + ch) *
               std::cos(freq * y + phase_y);
        v += uniform_in(rng, -0.08, 0.08);
        v = std::min(std::max(v, 0.0), 1.0);
        rgb[i * 3 + static_cast<std::size_t>(ch)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
}

template <typename Real>
Sample<Real> sample_from_rgb8(const std::vector<std::uint8_t>& rgb,
                              const IndexMap& label) {
  const int h = label.h, w = label.w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (rgb.size() != plane * 3)
    throw std::invalid_argument("sample_from_rgb8: pixel buffer size mismatch");
  std::vector<Real> img(3 * plane);
  for (int ch = 0; ch < 3; ++ch) {
    double m = 0;
    for (std::size_t i = 0; i < plane; ++i)
      m += rgb[i * 3 + static_cast<std::size_t>(ch)];
    const double mean_v = m / (255.0 * static_cast<double>(plane));
    for (std::size_t i = 0; i < plane; ++i)
      img[static_cast<std::size_t>(ch) * plane + i] = static_cast<Real>(
          rgb[i * 3 + static_cast<std::size_t>(ch)] / 255.0 - mean_v);
  }
  Sample<Real> s;
  s.image = Tensor<Real>::from_data({1, 3, h, w}, std::move(img));
  s.label = label;
  return s;
}

template <typename Real>
Sample<Real> synth_figure(const FigureSpec& spec, std::uint64_t noise_seed, int h,
                          int w) {
  std::vector<std::uint8_t> rgb;
  IndexMap labels;
  render_figure_rgb8(spec, noise_seed, h, w, rgb, labels);
  Sample<Real> s = sample_from_rgb8<Real>(rgb, labels);
  s.seed = noise_seed;
  s.pose = spec;
  return s;
}

template <typename Real>
Sample<Real> synth_figure(std::uint64_t seed, int h, int w) {
  auto rng = make_rng(seed, 0x706f7365ull);
  FigureSpec spec = FigureSpec::sample(rng, h, w);
  return synth_figure<Real>(spec, seed, h, w);
}

IndexMap corrupt_holes(const IndexMap& map, int count, int radius,
                       std::uint64_t seed) {
  if (radius >= std::min(map.h, map.w))
    throw std::invalid_argument("corrupt_holes: radius " + std::to_string(radius) +
                                " exceeds the canvas");
  if (count < 0) throw std::invalid_argument("corrupt_holes: negative count");
  if (count > 0 && map.classes < 2)
    throw std::invalid_argument("corrupt_holes: need at least two classes");
  IndexMap out = map;
  auto rng = make_rng(seed, 0x686f6c65ull);
  for (int k = 0; k < count; ++k) {
    const int cy = static_cast<int>(rng() % static_cast<std::uint64_t>(map.h));
    const int cx = static_cast<int>(rng() % static_cast<std::uint64_t>(map.w));
    const std::int32_t was = out(cy, cx);
    std::int32_t to =
        static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(map.classes - 1));
    if (to >= was) ++to;  // uniform over the other classes
    for (int y = std::max(0, cy - radius); y <= std::min(map.h - 1, cy + radius); ++y)
      for (int x = std::max(0, cx - radius); x <= std::min(map.w - 1, cx + radius); ++x)
        if (sq(x - cx) + sq(y - cy) <= sq(radius)) out(y, x) = to;
  }
  return out;
}

IndexMap corrupt_limb_swap(const IndexMap& map, int class_a, int class_b) {
  int row_min = map.h, row_max = -1;
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x)
      if (map(y, x) == class_a || map(y, x) == class_b) {
        row_min = std::min(row_min, y);
        row_max = std::max(row_max, y);
      }
  if (row_max < 0) return map;  // no such limbs
  const int elbow_row = (row_min + row_max) / 2;
  IndexMap out = map;
  for (int y = elbow_row; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x) {
      if (out(y, x) == class_a)
        out(y, x) = class_b;
      else if (out(y, x) == class_b)
        out(y, x) = class_a;
    }
  return out;
}

IndexMap nn_resize(const IndexMap& map, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("nn_resize: target extent must be positive");
  IndexMap out{map.classes, out_h, out_w,
               std::vector<std::int32_t>(static_cast<std::size_t>(out_h) * out_w)};
  const double ry = static_cast<double>(map.h) / out_h;
  const double rx = static_cast<double>(map.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(
        map.h - 1,
        std::max(0, static_cast<int>(std::lround((y + 0.5) * ry - 0.5))));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(
          map.w - 1,
          std::max(0, static_cast<int>(std::lround((x + 0.5) * rx - 0.5))));
      out(y, x) = map(sy, sx);
    }
  }
  return out;
}

template <typename Real>
Sample<Real> hflip_sample(const Sample<Real>& s,
                          const std::vector<std::pair<int, int>>& flip_swap) {
  const int h = s.label.h, w = s.label.w;
  Sample<Real> out = s;
  std::vector<Real> img(s.image.values());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img[ch * plane + static_cast<std::size_t>(y) * w + x] =
            s.image.data()[ch * plane + static_cast<std::size_t>(y) * w + (w - 1 - x)];
  out.image = Tensor<Real>::from_data({1, 3, h, w}, std::move(img));

  IndexMap lbl = s.label;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) lbl(y, x) = s.label(y, w - 1 - x);
  for (auto& px : lbl.at)
    for (const auto& [a, b] : flip_swap) {
      if (px == a) {
        px = b;
        break;
      }
      if (px == b) {
        px = a;
        break;
      }
    }
  out.label = std::move(lbl);
  return out;
}

template <typename Real>
Sample<Real> augment(const Sample<Real>& s, const AugmentConfig& cfg,
                     std::mt19937_64& rng) {
  const int h = s.label.h, w = s.label.w;
  const int shorter = std::min(h, w);
  const double scl = static_cast<double>(cfg.shorter_side) / shorter;
  const int rh = static_cast<int>(std::lround(h * scl));
  const int rw = static_cast<int>(std::lround(w * scl));
  if (cfg.crop > rh || cfg.crop > rw)
    throw std::invalid_argument("augment: crop " + std::to_string(cfg.crop) +
                                " larger than resized image " + std::to_string(rh) +
                                "x" + std::to_string(rw));

  Tensor<Real> img = resize_bilinear(s.image.detach(), rh, rw);
  IndexMap lbl = nn_resize(s.label, rh, rw);

  const int y0 = cfg.crop < rh
                     ? static_cast<int>(rng() % static_cast<std::uint64_t>(rh - cfg.crop + 1))
                     : 0;
  const int x0 = cfg.crop < rw
                     ? static_cast<int>(rng() % static_cast<std::uint64_t>(rw - cfg.crop + 1))
                     : 0;

  const std::size_t rplane = static_cast<std::size_t>(rh) * rw;
  const std::size_t cplane = static_cast<std::size_t>(cfg.crop) * cfg.crop;
  std::vector<Real> cropped(3 * cplane);
  IndexMap clbl{s.label.classes, cfg.crop, cfg.crop,
                std::vector<std::int32_t>(cplane)};
  for (int y = 0; y < cfg.crop; ++y)
    for (int x = 0; x < cfg.crop; ++x) {
      for (int ch = 0; ch < 3; ++ch)
        cropped[ch * cplane + static_cast<std::size_t>(y) * cfg.crop + x] =
            img.data()[ch * rplane + static_cast<std::size_t>(y0 + y) * rw + (x0 + x)];
      clbl(y, x) = lbl(y0 + y, x0 + x);
    }

  Sample<Real> out;
  out.image = Tensor<Real>::from_data({1, 3, cfg.crop, cfg.crop}, std::move(cropped));
  out.label = std::move(clbl);
  out.seed = s.seed;
  out.pose = s.pose;

  if (cfg.hflip && uniform01(rng) < 0.5) out = hflip_sample(out, cfg.flip_swap);

  // per-channel mean subtraction on the final crop
  std::vector<Real> img2(out.image.values());
  for (int ch = 0; ch < 3; ++ch) {
    Real* p = img2.data() + static_cast<std::size_t>(ch) * cplane;
    double m = 0;
    for (std::size_t i = 0; i < cplane; ++i) m += p[i];
    const Real mv = static_cast<Real>(m / static_cast<double>(cplane));
    for (std::size_t i = 0; i < cplane; ++i) p[i] -= mv;
  }
  out.image = Tensor<Real>::from_data({1, 3, cfg.crop, cfg.crop}, std::move(img2));
  return out;
}

namespace {

void write_pnm_header(std::ofstream& f, const char* magic, int w, int h) {
  f << magic << "\n" << w << " " << h << "\n255\n";
}

void read_pnm_header(std::ifstream& f, const char* magic, int& w, int& h,
                     const std::string& path) {
  std::string m;
  int maxval = 0;
  f >> m >> w >> h >> maxval;
  if (m != magic || w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("pnm: '" + path + "' is not an 8-bit " + magic +
                             " raster");
  f.get();  // single whitespace before binary payload
}

}  // namespace

IndexMap load_label_image(const std::string& path, int classes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("label image: cannot open '" + path + "'");
  int w = 0, h = 0;
  read_pnm_header(f, "P5", w, h, path);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("label image: truncated file '" + path + "'");
  IndexMap map{classes, h, w, std::vector<std::int32_t>(bytes.size())};
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] >= classes)
      throw std::runtime_error("label image: class " + std::to_string(bytes[i]) +
                               " >= " + std::to_string(classes) + " at pixel (" +
                               std::to_string(i / static_cast<std::size_t>(w)) + "," +
                               std::to_string(i % static_cast<std::size_t>(w)) +
                               ") of '" + path + "'");
    map.at[i] = bytes[i];
  }
  return map;
}

void save_label_image(const IndexMap& map, const std::string& path) {
  if (map.classes > 256)
    throw std::invalid_argument("label image: more than 256 classes");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("label image: cannot write '" + path + "'");
  write_pnm_header(f, "P5", map.w, map.h);
  std::vector<unsigned char> bytes(map.at.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(map.at[i]);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

void save_image_ppm(const std::vector<std::uint8_t>& rgb, int h, int w,
                    const std::string& path) {
  if (rgb.size() != static_cast<std::size_t>(h) * w * 3)
    throw std::invalid_argument("ppm: buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot write '" + path + "'");
  write_pnm_header(f, "P6", w, h);
  f.write(reinterpret_cast<const char*>(rgb.data()),
          static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::uint8_t> load_image_ppm(const std::string& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open '" + path + "'");
  read_pnm_header(f, "P6", w, h, path);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw std::runtime_error("ppm: truncated file '" + path + "'");
  return rgb;
}

void TaxonomyMap::validate() const {
  if (source_classes < 1 || target_classes < 1 ||
      table.size() != static_cast<std::size_t>(source_classes))
    throw std::invalid_argument("taxonomy: every source class must be mapped");
  std::vector<bool> used(static_cast<std::size_t>(target_classes), false);
  for (int t : table) {
    if (t < 0 || t >= target_classes)
      throw std::invalid_argument("taxonomy: target id " + std::to_string(t) +
                                  " out of range");
    used[static_cast<std::size_t>(t)] = true;
  }
  for (std::size_t t = 0; t < used.size(); ++t)
    if (!used[t])
      throw std::invalid_argument("taxonomy: target id " + std::to_string(t) +
                                  " unused; target ids must be dense");
}

TaxonomyMap TaxonomyMap::identity(int classes) {
  TaxonomyMap t{classes, classes, std::vector<int>(static_cast<std::size_t>(classes))};
  for (int i = 0; i < classes; ++i) t.table[static_cast<std::size_t>(i)] = i;
  return t;
}

TaxonomyMap TaxonomyMap::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("taxonomy: cannot open '" + path + "'");
  std::map<int, int> entries;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    entries[std::stoi(line.substr(0, eq))] = std::stoi(line.substr(eq + 1));
  }
  if (entries.empty()) throw std::runtime_error("taxonomy: '" + path + "' is empty");
  TaxonomyMap t;
  t.source_classes = entries.rbegin()->first + 1;
  t.table.assign(static_cast<std::size_t>(t.source_classes), -1);
  for (const auto& [src, dst] : entries) {
    if (src < 0) throw std::runtime_error("taxonomy: negative source class");
    t.table[static_cast<std::size_t>(src)] = dst;
    t.target_classes = std::max(t.target_classes, dst + 1);
  }
  for (std::size_t i = 0; i < t.table.size(); ++i)
    if (t.table[i] < 0)
      throw std::runtime_error("taxonomy: source class " + std::to_string(i) +
                               " unmapped in '" + path + "'");
  t.validate();
  return t;
}

TaxonomyMap TaxonomyMap::lip_to_ppss() {
  // 20 fine person-part classes onto 8 coarse ones:
  // 0 bg, 1 hair, 2 face, 3 upper-clothes, 4 arms, 5 lower-clothes,
  // 6 legs, 7 shoes.
  TaxonomyMap t;
  t.source_classes = 20;
  t.target_classes = 8;
  t.table = {0,  // background
             1,  // hat -> hair
             1,  // hair
             4,  // glove -> arms
             2,  // sunglasses -> face
             3,  // upper-clothes
             3,  // dress -> upper-clothes
             3,  // coat -> upper-clothes
             6,  // socks -> legs
             5,  // pants -> lower-clothes
             3,  // jumpsuits -> upper-clothes
             3,  // scarf -> upper-clothes
             5,  // skirt -> lower-clothes
             2,  // face
             4,  // left arm
             4,  // right arm
             6,  // left leg
             6,  // right leg
             7,  // left shoe
             7}; // right shoe
  t.validate();
  return t;
}

IndexMap merge_taxonomy(const IndexMap& map, const TaxonomyMap& t) {
  t.validate();
  IndexMap out{t.target_classes, map.h, map.w, map.at};
  for (auto& px : out.at) {
    if (px < 0 || px >= t.source_classes)
      throw std::invalid_argument("merge_taxonomy: class " + std::to_string(px) +
                                  " outside the source taxonomy");
    px = t.table[static_cast<std::size_t>(px)];
  }
  return out;
}

IndexMap low_res_target(const IndexMap& map, int factor, bool majority) {
  if (factor < 1 || map.h % factor || map.w % factor)
    throw std::invalid_argument("low_res_target: extent " + std::to_string(map.h) +
                                "x" + std::to_string(map.w) +
                                " not divisible by " + std::to_string(factor));
  const int oh = map.h / factor, ow = map.w / factor;
  if (!majority) return nn_resize(map, oh, ow);
  IndexMap out{map.classes, oh, ow,
               std::vector<std::int32_t>(static_cast<std::size_t>(oh) * ow)};
  std::vector<int> counts(static_cast<std::size_t>(map.classes));
  for (int by = 0; by < oh; ++by)
    for (int bx = 0; bx < ow; ++bx) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int y = by * factor; y < (by + 1) * factor; ++y)
        for (int x = bx * factor; x < (bx + 1) * factor; ++x)
          ++counts[static_cast<std::size_t>(map(y, x))];
      int best = 0;
      for (int c = 1; c < map.classes; ++c)
        if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)])
          best = c;  // ties keep the lowest id
      out(by, bx) = best;
    }
  return out;
}

void write_synth_dataset(const std::string& dir, std::uint64_t seed, int count,
                         int size) {
  if (count < 1) throw std::invalid_argument("dataset: count must be positive");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("dataset: cannot write manifest in '" + dir + "'");
  for (int i = 0; i < count; ++i) {
    auto rng = make_rng(seed, 0x706f7365ull, static_cast<std::uint64_t>(i));
    const FigureSpec spec = FigureSpec::sample(rng, size, size);
    std::vector<std::uint8_t> rgb;
    IndexMap labels;
    render_figure_rgb8(spec, derive_seed(seed, static_cast<std::uint64_t>(i)), size,
                       size, rgb, labels);
    char name[32];
    std::snprintf(name, sizeof name, "%04d", i);
    const std::string img_rel = std::string("images/") + name + ".ppm";
    const std::string lbl_rel = std::string("labels/") + name + ".pgm";
    save_image_ppm(rgb, size, size, (fs::path(dir) / img_rel).string());
    save_label_image(labels, (fs::path(dir) / lbl_rel).string());
    manifest << img_rel << " " << lbl_rel << "\n";
  }
}

template <typename Real>
std::vector<Sample<Real>> load_dataset(const std::string& dir, int classes) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest)
    throw std::runtime_error("dataset: cannot open manifest in '" + dir + "'");
  std::vector<Sample<Real>> out;
  std::string img_rel, lbl_rel;
  while (manifest >> img_rel >> lbl_rel) {
    int h = 0, w = 0;
    const std::vector<std::uint8_t> rgb =
        load_image_ppm((fs::path(dir) / img_rel).string(), h, w);
    IndexMap labels = load_label_image((fs::path(dir) / lbl_rel).string(), classes);
    if (labels.h != h || labels.w != w)
      throw std::runtime_error("dataset: extent mismatch between '" + img_rel +
                               "' and '" + lbl_rel + "'");
    Sample<Real> s = sample_from_rgb8<Real>(rgb, labels);
    s.seed = static_cast<std::uint64_t>(out.size());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("dataset: empty manifest in '" + dir + "'");
  return out;
}

#define MMAN_INSTANTIATE_DATA(Real)                                          \
  template Tensor<Real> onehot<Real>(const IndexMap&);                       \
  template IndexMap argmax_map<Real>(const Tensor<Real>&);                   \
  template Sample<Real> sample_from_rgb8<Real>(                              \
      const std::vector<std::uint8_t>&, const IndexMap&);                    \
  template Sample<Real> synth_figure<Real>(std::uint64_t, int, int);         \
  template Sample<Real> synth_figure<Real>(const FigureSpec&, std::uint64_t, \
                                           int, int);                        \
  template Sample<Real> hflip_sample<Real>(                                  \
      const Sample<Real>&, const std::vector<std::pair<int, int>>&);         \
  template Sample<Real> augment<Real>(const Sample<Real>&,                   \
                                      const AugmentConfig&, std::mt19937_64&); \
  template std::vector<Sample<Real>> load_dataset<Real>(const std::string&, int);

MMAN_INSTANTIATE_DATA(float)
MMAN_INSTANTIATE_DATA(double)
#undef MMAN_INSTANTIATE_DATA

}  // namespace mman
