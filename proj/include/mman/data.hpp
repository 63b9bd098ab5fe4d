#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mman/tensor.hpp"

namespace mman {

// Per-pixel class assignment: the index form of a label map.
struct IndexMap {
  int classes = 0;
  int h = 0;
  int w = 0;
  std::vector<std::int32_t> at;  // row-major, h*w entries

  std::int32_t& operator()(int y, int x) { return at[static_cast<std::size_t>(y) * w + x]; }
  std::int32_t operator()(int y, int x) const { return at[static_cast<std::size_t>(y) * w + x]; }
  bool operator==(const IndexMap&) const = default;
};

// One-hot probability form, 1 x C x H x W.
template <typename Real>
Tensor<Real> onehot(const IndexMap& map);

// Argmax over channels of a 1 x C x H x W distribution; ties take the lowest
// class id.
template <typename Real>
IndexMap argmax_map(const Tensor<Real>& prob);

// Desk palette: background, head, torso, left arm, right arm, left leg,
// right leg.
inline constexpr int kDeskClasses = 7;
inline constexpr int kClassLeftArm = 3;
inline constexpr int kClassRightArm = 4;
inline constexpr int kClassLeftLeg = 5;
inline constexpr int kClassRightLeg = 6;

// Pose of a 2-D articulated figure, in pixel units of its canvas.
struct FigureSpec {
  double torso_cx = 0, torso_cy = 0;
  double torso_halfw = 0, torso_halfh = 0, torso_angle = 0;
  double head_radius = 0;
  double arm_radius = 0, arm_length_left = 0, arm_length_right = 0;
  double arm_angle_left = 0, arm_angle_right = 0;  // outward tilt from vertical
  double leg_radius = 0, leg_length_left = 0, leg_length_right = 0;
  double leg_angle_left = 0, leg_angle_right = 0;

  void validate(int h, int w) const;
  static FigureSpec sample(std::mt19937_64& rng, int h, int w);
};

template <typename Real>
struct Sample {
  Tensor<Real> image;  // 1 x 3 x H x W, per-channel mean subtracted
  IndexMap label;
  std::uint64_t seed = 0;
  FigureSpec pose;
};

// Renders quantized 8-bit RGB plus the exact label map; the canonical pixel
// source for both in-memory samples and datasets on disk.
void render_figure_rgb8(const FigureSpec& spec, std::uint64_t noise_seed, int h,
                        int w, std::vector<std::uint8_t>& rgb, IndexMap& labels);

// Mean-subtracted float image from 8-bit pixels; shared by the synthesizer
// and the dataset loader so both paths see identical values.
template <typename Real>
Sample<Real> sample_from_rgb8(const std::vector<std::uint8_t>& rgb,
                              const IndexMap& label);

template <typename Real>
Sample<Real> synth_figure(std::uint64_t seed, int h, int w);

template <typename Real>
Sample<Real> synth_figure(const FigureSpec& spec, std::uint64_t noise_seed, int h,
                          int w);

// `count` discs of the given radius, each re-labeled to a random other class.
IndexMap corrupt_holes(const IndexMap& map, int count, int radius,
                       std::uint64_t seed);

// Exchanges the two arm labels below the elbow row (midpoint of their shared
// row extent).
IndexMap corrupt_limb_swap(const IndexMap& map, int class_a = kClassLeftArm,
                           int class_b = kClassRightArm);

struct AugmentConfig {
  int shorter_side = 72;
  int crop = 64;
  bool hflip = true;
  // Involution table of paired left/right classes swapped on flip.
  std::vector<std::pair<int, int>> flip_swap{{kClassLeftArm, kClassRightArm},
                                             {kClassLeftLeg, kClassRightLeg}};
};

// Horizontal mirror with paired class re-swap; an involution.
template <typename Real>
Sample<Real> hflip_sample(const Sample<Real>& s,
                          const std::vector<std::pair<int, int>>& flip_swap);

// Resize shorter side, random crop, random flip, per-channel mean
// subtraction. Labels move with nearest-neighbor lookups.
template <typename Real>
Sample<Real> augment(const Sample<Real>& s, const AugmentConfig& cfg,
                     std::mt19937_64& rng);

// Nearest-neighbor resize with the same half-pixel convention as
// resize_bilinear; keeps maps one-hot.
IndexMap nn_resize(const IndexMap& map, int out_h, int out_w);

// 8-bit single-channel indexed raster (binary PGM).
IndexMap load_label_image(const std::string& path, int classes);
void save_label_image(const IndexMap& map, const std::string& path);

// 8-bit RGB raster (binary PPM), row-major interleaved.
void save_image_ppm(const std::vector<std::uint8_t>& rgb, int h, int w,
                    const std::string& path);
std::vector<std::uint8_t> load_image_ppm(const std::string& path, int& h, int& w);

// Surjective source->target class table.
struct TaxonomyMap {
  int source_classes = 0;
  int target_classes = 0;
  std::vector<int> table;

  void validate() const;
  static TaxonomyMap identity(int classes);
  static TaxonomyMap from_file(const std::string& path);
  // Default 20-class fine -> 8-class coarse person-part merge.
  static TaxonomyMap lip_to_ppss();
};

IndexMap merge_taxonomy(const IndexMap& map, const TaxonomyMap& t);

// Per-block majority class (ties to the lowest id); nearest-neighbor when
// majority is false.
IndexMap low_res_target(const IndexMap& map, int factor, bool majority = true);

// Dataset directory: images/NNNN.ppm, labels/NNNN.pgm and a manifest.txt of
// "image label" path pairs relative to the directory.
void write_synth_dataset(const std::string& dir, std::uint64_t seed, int count,
                         int size);

template <typename Real>
std::vector<Sample<Real>> load_dataset(const std::string& dir, int classes);

#define MMAN_EXTERN_DATA(Real)                                                \
  extern template Tensor<Real> onehot<Real>(const IndexMap&);                 \
  extern template IndexMap argmax_map<Real>(const Tensor<Real>&);             \
  extern template Sample<Real> sample_from_rgb8<Real>(                        \
      const std::vector<std::uint8_t>&, const IndexMap&);                     \
  extern template Sample<Real> synth_figure<Real>(std::uint64_t, int, int);   \
  extern template Sample<Real> synth_figure<Real>(const FigureSpec&,          \
                                                  std::uint64_t, int, int);   \
  extern template Sample<Real> hflip_sample<Real>(                            \
      const Sample<Real>&, const std::vector<std::pair<int, int>>&);          \
  extern template Sample<Real> augment<Real>(const Sample<Real>&,             \
                                             const AugmentConfig&,            \
                                             std::mt19937_64&);               \
  extern template std::vector<Sample<Real>> load_dataset<Real>(               \
      const std::string&, int);

MMAN_EXTERN_DATA(float)
MMAN_EXTERN_DATA(double)
#undef MMAN_EXTERN_DATA

}  // namespace mman
