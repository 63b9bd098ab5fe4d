#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mman/data.hpp"
#include "mman/losses.hpp"
#include "mman/models.hpp"
#include "mman/trace.hpp"

namespace mman {

struct ProfileConfig {
  std::string name = "desk";
  int canvas = 64;
  int classes = 7;
  int shorter_side = 72;
  int crop = 64;
};

ProfileConfig desk_profile();
ProfileConfig full_profile();
ProfileConfig profile_from_string(const std::string& name);

enum class Precision { single, dbl };

struct TrainConfig {
  LossWeights weights;
  double lr0 = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  int batch = 1;
  int epochs = 30;
  int decay_epoch = 15;  // lr drops to lr0/10 from this epoch on
  std::uint64_t seed = 1;
  Precision precision = Precision::single;
  VariantKind variant = VariantKind::mman;
  ProfileConfig profile = desk_profile();
  std::vector<double> scales{0.8, 1.0, 1.2};
  int d_steps = 1;  // discriminator phases per generator step
  bool augment = true;

  void validate() const;
  std::string to_text() const;  // canonical key=value form
  static TrainConfig from_text(const std::string& text);
  static TrainConfig from_file(const std::string& path);
  std::uint64_t digest() const;
};

double lr_at(int epoch, const TrainConfig& cfg);

// Bias-corrected Adam; weight decay enters as an additive decay*theta
// gradient term on parameters flagged for decay. step() consumes and clears
// the parameter gradients.
template <typename Real>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const std::vector<NamedParam<Real>>& params);

  void step(std::vector<NamedParam<Real>>& params, double lr, double beta1,
            double beta2, double eps, double weight_decay);
  std::int64_t steps() const { return t_; }

  const std::vector<std::vector<Real>>& first_moments() const { return m_; }
  const std::vector<std::vector<Real>>& second_moments() const { return v_; }
  void restore(std::vector<std::vector<Real>> m, std::vector<std::vector<Real>> v,
               std::int64_t t);

 private:
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
  std::int64_t t_ = 0;
};

template <typename Real>
struct TrainSession {
  TrainConfig config;
  ModelSet<Real> models;
  std::vector<NamedParam<Real>> g_params;
  std::vector<NamedParam<Real>> d_params;
  Adam<Real> opt_g;
  Adam<Real> opt_d;
  std::int64_t iteration = 0;
  ConvergenceTrace trace;
};

template <typename Real>
TrainSession<Real> make_session(const TrainConfig& cfg);

// Alternating minimax: per iteration one (or d_steps) discriminator phases on
// a detached fake pair, then one generator phase. Runs `iters` iterations, or
// to cfg.epochs * data.size() when iters < 0. Aborts on non-finite losses,
// naming the offending component.
template <typename Real>
void train_alternating(TrainSession<Real>& session,
                       const std::vector<Sample<Real>>& data,
                       std::int64_t iters = -1);

// Forward at every scale (extents snapped to the nearest legal multiple of
// the generator stride), resize the score maps back, average and renormalize.
template <typename Real>
Tensor<Real> multi_scale_infer(const DualOutputGenerator<Real>& generator,
                               const Tensor<Real>& image,
                               const std::vector<double>& scales);

// Versioned binary container: header, config, architecture manifest, raw
// little-endian parameter and optimizer blocks, trailing checksum.
template <typename Real>
void checkpoint_save(const TrainSession<Real>& session, const std::string& path);

template <typename Real>
TrainSession<Real> checkpoint_load(const std::string& path);

Precision checkpoint_precision(const std::string& path);

#define MMAN_EXTERN_TRAIN(Real)                                                \
  extern template class Adam<Real>;                                           \
  extern template struct TrainSession<Real>;                                  \
  extern template TrainSession<Real> make_session<Real>(const TrainConfig&);  \
  extern template void train_alternating<Real>(                               \
      TrainSession<Real>&, const std::vector<Sample<Real>>&, std::int64_t);   \
  extern template Tensor<Real> multi_scale_infer<Real>(                       \
      const DualOutputGenerator<Real>&, const Tensor<Real>&,                  \
      const std::vector<double>&);                                            \
  extern template void checkpoint_save<Real>(const TrainSession<Real>&,       \
                                             const std::string&);             \
  extern template TrainSession<Real> checkpoint_load<Real>(const std::string&);

MMAN_EXTERN_TRAIN(float)
MMAN_EXTERN_TRAIN(double)
#undef MMAN_EXTERN_TRAIN

}  // namespace mman
