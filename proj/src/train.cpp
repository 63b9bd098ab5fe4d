#include "mman/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mman/ops.hpp"
#include "mman/rng.hpp"

namespace mman {

namespace {

constexpr std::uint64_t kSaltOrder = 0x6f72646572ull;
constexpr std::uint64_t kSaltAugment = 0x617567ull;
constexpr std::uint64_t kSaltDropout = 0x64726f70ull;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

ProfileConfig desk_profile() { return {"desk", 64, 7, 72, 64}; }

ProfileConfig full_profile() { return {"full", 256, 20, 288, 256}; }

ProfileConfig profile_from_string(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "full") return full_profile();
  throw std::invalid_argument("unknown profile '" + name + "'");
}

void TrainConfig::validate() const {
  if (lr0 <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 ||
      adam_eps <= 0)
    throw std::invalid_argument("config: optimizer rates must be positive");
  if (weight_decay < 0) throw std::invalid_argument("config: negative weight_decay");
  if (batch != 1) throw std::invalid_argument("config: only batch=1 is supported");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (decay_epoch < 0 || decay_epoch >= epochs)
    throw std::invalid_argument("config: decay_epoch must lie in [0, epochs)");
  if (profile.crop % 16 || profile.crop < 16)
    throw std::invalid_argument("config: crop must be a positive multiple of 16");
  if (profile.classes < 2) throw std::invalid_argument("config: need >= 2 classes");
  if (scales.empty()) throw std::invalid_argument("config: scales must be nonempty");
  if (d_steps < 1) throw std::invalid_argument("config: d_steps must be >= 1");
  if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0 ||
      weights.lambda_mix < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "adam_eps=" << fmt_double(adam_eps) << "\n";
  os << "augment=" << (augment ? 1 : 0) << "\n";
  os << "batch=" << batch << "\n";
  os << "beta1=" << fmt_double(beta1) << "\n";
  os << "beta2=" << fmt_double(beta2) << "\n";
  os << "canvas=" << profile.canvas << "\n";
  os << "classes=" << profile.classes << "\n";
  os << "crop=" << profile.crop << "\n";
  os << "d_steps=" << d_steps << "\n";
  os << "decay_epoch=" << decay_epoch << "\n";
  os << "epochs=" << epochs << "\n";
  os << "lambda1=" << fmt_double(weights.lambda1) << "\n";
  os << "lambda2=" << fmt_double(weights.lambda2) << "\n";
  os << "lambda3=" << fmt_double(weights.lambda3) << "\n";
  os << "lambda_mix=" << fmt_double(weights.lambda_mix) << "\n";
  os << "lr0=" << fmt_double(lr0) << "\n";
  os << "precision=" << (precision == Precision::single ? "single" : "double") << "\n";
  os << "profile=" << profile.name << "\n";
  os << "scales=";
  for (std::size_t i = 0; i < scales.size(); ++i)
    os << (i ? "," : "") << fmt_double(scales[i]);
  os << "\n";
  os << "seed=" << seed << "\n";
  os << "shorter_side=" << profile.shorter_side << "\n";
  os << "variant=" << to_string(variant) << "\n";
  os << "weight_decay=" << fmt_double(weight_decay) << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "adam_eps") cfg.adam_eps = std::stod(val);
    else if (key == "augment") cfg.augment = std::stoi(val) != 0;
    else if (key == "batch") cfg.batch = std::stoi(val);
    else if (key == "beta1") cfg.beta1 = std::stod(val);
    else if (key == "beta2") cfg.beta2 = std::stod(val);
    else if (key == "canvas") cfg.profile.canvas = std::stoi(val);
    else if (key == "classes") cfg.profile.classes = std::stoi(val);
    else if (key == "crop") cfg.profile.crop = std::stoi(val);
    else if (key == "d_steps") cfg.d_steps = std::stoi(val);
    else if (key == "decay_epoch") cfg.decay_epoch = std::stoi(val);
    else if (key == "epochs") cfg.epochs = std::stoi(val);
    else if (key == "lambda1") cfg.weights.lambda1 = std::stod(val);
    else if (key == "lambda2") cfg.weights.lambda2 = std::stod(val);
    else if (key == "lambda3") cfg.weights.lambda3 = std::stod(val);
    else if (key == "lambda_mix") cfg.weights.lambda_mix = std::stod(val);
    else if (key == "lr0") cfg.lr0 = std::stod(val);
    else if (key == "precision") {
      if (val == "single") cfg.precision = Precision::single;
      else if (val == "double") cfg.precision = Precision::dbl;
      else throw std::invalid_argument("config: precision must be single or double");
    } else if (key == "profile") cfg.profile.name = val;
    else if (key == "scales") {
      cfg.scales.clear();
      std::istringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) cfg.scales.push_back(std::stod(tok));
    } else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "shorter_side") cfg.profile.shorter_side = std::stoi(val);
    else if (key == "variant") cfg.variant = variant_from_string(val);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
    else throw std::invalid_argument("config: unknown field '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return from_text(os.str());
}

std::uint64_t TrainConfig::digest() const {
  const std::string text = to_text();
  return fnv1a(text.data(), text.size());
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) +
                                " outside [0, " + std::to_string(cfg.epochs) + ")");
  return epoch < cfg.decay_epoch ? cfg.lr0 : cfg.lr0 / 10.0;
}

template <typename Real>
Adam<Real>::Adam(const std::vector<NamedParam<Real>>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), Real(0));
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), Real(0));
  }
}

template <typename Real>
void Adam<Real>::step(std::vector<NamedParam<Real>>& params, double lr,
                      double beta1, double beta2, double eps,
                      double weight_decay) {
  if (params.size() != m_.size())
    throw std::invalid_argument("adam: parameter list does not match state");
  if (lr <= 0) throw std::invalid_argument("adam: learning rate must be positive");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (static_cast<std::size_t>(p.tensor.numel()) != m_[k].size())
      throw std::invalid_argument("adam: shape mismatch for " + p.name);
    Real* theta = p.tensor.mutable_data();
    const Real* grad = p.tensor.grad_data();
    Real* m = m_[k].data();
    Real* v = v_[k].data();
    const double wd = p.decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < m_[k].size(); ++i) {
      const double g = (grad ? static_cast<double>(grad[i]) : 0.0) +
                       wd * static_cast<double>(theta[i]);
      const double mi = beta1 * m[i] + (1.0 - beta1) * g;
      const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      theta[i] -= static_cast<Real>(lr * (mi / bc1) /
                                    (std::sqrt(vi / bc2) + eps));
    }
    p.tensor.zero_grad();
  }
}

template <typename Real>
void Adam<Real>::restore(std::vector<std::vector<Real>> m,
                         std::vector<std::vector<Real>> v, std::int64_t t) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw std::invalid_argument("adam: restored state does not match parameters");
  for (std::size_t k = 0; k < m.size(); ++k)
    if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size())
      throw std::invalid_argument("adam: restored buffer shape mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

template <typename Real>
TrainSession<Real> make_session(const TrainConfig& cfg) {
  cfg.validate();
  TrainSession<Real> s{cfg,
                       build_variant<Real>(cfg.variant, cfg.profile.crop,
                                           cfg.profile.classes, cfg.weights.lambda2,
                                           cfg.weights.lambda_mix, cfg.seed),
                       {},
                       {},
                       {},
                       {},
                       0,
                       {}};
  s.g_params = s.models.generator_params();
  s.d_params = s.models.discriminator_params();
  s.opt_g = Adam<Real>(s.g_params);
  s.opt_d = Adam<Real>(s.d_params);
  for (const auto& a : s.models.discs) s.trace.disc_names.push_back(a.slot);
  return s;
}

namespace {

template <typename Real>
void zero_grads(std::vector<NamedParam<Real>>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void check_finite(double v, const char* component, std::int64_t iter) {
  if (!std::isfinite(v))
    throw std::runtime_error("training: non-finite " + std::string(component) +
                             " at iteration " + std::to_string(iter));
}

// Ground truth and conditioning for one attachment point.
template <typename Real>
struct PointData {
  Tensor<Real> target;  // one-hot at the point's resolution
  Tensor<Real> rgb;     // image resized to the point's resolution
};

template <typename Real>
PointData<Real> point_data(AttachPoint point, const Sample<Real>& sample,
                           const Tensor<Real>& y_full, int canvas) {
  switch (point) {
    case AttachPoint::high:
      return {y_full, sample.image};
    case AttachPoint::low: {
      const int e = canvas / 16;
      return {onehot<Real>(low_res_target(sample.label, 16)),
              resize_bilinear(sample.image, e, e)};
    }
    case AttachPoint::mid: {
      const int e = canvas / 2;
      return {onehot<Real>(low_res_target(sample.label, 2)),
              resize_bilinear(sample.image, e, e)};
    }
  }
  throw std::logic_error("point_data: bad attachment point");
}

template <typename Real>
const Tensor<Real>& output_at(const GeneratorOutputs<Real>& outs, AttachPoint p) {
  switch (p) {
    case AttachPoint::low: return outs.low;
    case AttachPoint::high: return outs.high;
    case AttachPoint::mid: return outs.mid;
  }
  throw std::logic_error("output_at: bad attachment point");
}

}  // namespace

template <typename Real>
void train_alternating(TrainSession<Real>& session,
                       const std::vector<Sample<Real>>& data,
                       std::int64_t iters) {
  const TrainConfig& cfg = session.config;
  if (data.empty()) throw std::invalid_argument("training: empty dataset");
  const std::int64_t per_epoch = static_cast<std::int64_t>(data.size());
  const std::int64_t total = cfg.epochs * per_epoch;
  std::int64_t target = iters < 0 ? total : session.iteration + iters;
  target = std::min(target, total);

  AugmentConfig aug;
  aug.shorter_side = cfg.profile.shorter_side;
  aug.crop = cfg.profile.crop;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t order_epoch = -1;

  while (session.iteration < target) {
    const std::int64_t iter = session.iteration;
    const int epoch = static_cast<int>(iter / per_epoch);
    const double lr = lr_at(epoch, cfg);

    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = make_rng(cfg.seed, kSaltOrder, static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), rng);
      order_epoch = epoch;
    }
    const Sample<Real>& raw = data[order[static_cast<std::size_t>(iter % per_epoch)]];

    Sample<Real> sample;
    if (cfg.augment) {
      auto arng = make_rng(cfg.seed, kSaltAugment, static_cast<std::uint64_t>(iter));
      sample = augment(raw, aug, arng);
    } else {
      if (raw.label.h != cfg.profile.crop || raw.label.w != cfg.profile.crop)
        throw std::invalid_argument("training: sample extent does not match crop");
      sample = raw;
    }

    const Tensor<Real> y_full = onehot<Real>(sample.label);
    auto drop_rng = make_rng(cfg.seed, kSaltDropout, static_cast<std::uint64_t>(iter));
    GeneratorOutputs<Real> outs =
        session.models.generator.forward(sample.image, true, drop_rng);

    TraceRow row;
    row.iter = iter;

    // Discriminator phase(s): real pair vs detached fake pair.
    std::vector<PointData<Real>> points;
    points.reserve(session.models.discs.size());
    for (const auto& a : session.models.discs)
      points.push_back(point_data(a.point, sample, y_full, cfg.profile.crop));

    for (int ds = 0; ds < cfg.d_steps && !session.models.discs.empty(); ++ds) {
      zero_grads(session.d_params);
      Tensor<Real> d_total;
      row.d.clear();
      for (std::size_t k = 0; k < session.models.discs.size(); ++k) {
        const auto& a = session.models.discs[k];
        auto real = a.disc.forward(points[k].target, points[k].rgb);
        auto fake =
            a.disc.forward(output_at(outs, a.point).detach(), points[k].rgb);
        row.d.push_back({static_cast<double>(real.score.item()),
                         static_cast<double>(fake.score.item())});
        Tensor<Real> dl = adver_loss(real.score, fake.score, AdvSide::discriminator);
        check_finite(dl.item(), ("L_d_" + a.slot).c_str(), iter);
        d_total = d_total.defined() ? add(d_total, dl) : dl;
      }
      d_total.backward();
      session.opt_d.step(session.d_params, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                         cfg.weight_decay);
    }

    // Generator phase: cross-entropy supervision plus the adversarial terms
    // through the (just updated) discriminators.
    zero_grads(session.g_params);
    const Tensor<Real> y_low = onehot<Real>(low_res_target(sample.label, 16));
    Tensor<Real> ce_low = mce_loss(outs.low, y_low);
    Tensor<Real> ce_high = mce_loss(outs.high, y_full);
    row.mce_low = static_cast<double>(ce_low.item());
    row.mce_high = static_cast<double>(ce_high.item());
    check_finite(row.mce_low, "L_mce_low", iter);
    check_finite(row.mce_high, "L_mce_high", iter);

    Tensor<Real> g_total =
        add(scale(ce_low, static_cast<Real>(cfg.weights.lambda1)),
            scale(ce_high, static_cast<Real>(cfg.weights.lambda3)));
    for (std::size_t k = 0; k < session.models.discs.size(); ++k) {
      const auto& a = session.models.discs[k];
      auto real = a.disc.forward(points[k].target, points[k].rgb);
      auto fake = a.disc.forward(output_at(outs, a.point), points[k].rgb);
      Tensor<Real> gl = adver_loss(real.score, fake.score, AdvSide::generator);
      const double v = static_cast<double>(gl.item());
      check_finite(v, ("L_adv_" + a.slot).c_str(), iter);
      if (a.slot == "macro") row.adv_macro = v;
      else if (a.slot == "micro") row.adv_micro = v;
      g_total = add(g_total, scale(gl, static_cast<Real>(a.adv_weight)));
    }
    g_total.backward();
    session.opt_g.step(session.g_params, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                       cfg.weight_decay);

    if (session.models.discs.empty()) row.d.clear();
    session.trace.rows.push_back(std::move(row));
    ++session.iteration;
  }
}

template <typename Real>
Tensor<Real> multi_scale_infer(const DualOutputGenerator<Real>& generator,
                               const Tensor<Real>& image,
                               const std::vector<double>& scales) {
  if (scales.empty())
    throw std::invalid_argument("multi_scale_infer: scales must be nonempty");
  const int h = image.dim(2), w = image.dim(3);
  const int factor = generator.downscale();
  auto snap = [factor](int extent, double s) {
    const double t = extent * s;
    int snapped = static_cast<int>(std::llround(t / factor)) * factor;
    return snapped;
  };

  std::vector<double> acc;
  int used = 0;
  int classes = 0;
  std::mt19937_64 unused(0);
  for (double s : scales) {
    const int sh = snap(h, s), sw = snap(w, s);
    if (sh < factor || sw < factor) {
      std::cerr << "multi_scale_infer: skipping scale " << s
                << " (no legal extent)\n";
      continue;
    }
    Tensor<Real> input = (sh == h && sw == w)
                             ? image
                             : resize_bilinear(image, sh, sw);
    GeneratorOutputs<Real> outs = generator.forward(input, false, unused);
    Tensor<Real> back = (sh == h && sw == w)
                            ? outs.high
                            : resize_bilinear(outs.high, h, w);
    classes = back.dim(1);
    if (acc.empty()) acc.assign(static_cast<std::size_t>(back.numel()), 0.0);
    const Real* p = back.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(p[i]);
    ++used;
  }
  if (!used)
    throw std::invalid_argument("multi_scale_infer: no scale produced a legal extent");

  // average and renormalize per pixel
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Real> out(acc.size());
  for (std::size_t i = 0; i < plane; ++i) {
    double denom = 0;
    for (int c = 0; c < classes; ++c) denom += acc[static_cast<std::size_t>(c) * plane + i];
    const double inv = denom > 0 ? 1.0 / denom : 0.0;
    for (int c = 0; c < classes; ++c)
      out[static_cast<std::size_t>(c) * plane + i] =
          static_cast<Real>(acc[static_cast<std::size_t>(c) * plane + i] * inv);
  }
  return Tensor<Real>::from_data({1, classes, h, w}, std::move(out));
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'M', 'A', 'N', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

struct ByteWriter {
  std::string bytes;
  void raw(const void* p, std::size_t n) {
    bytes.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  template <typename Real>
  void block(const std::vector<Real>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(Real));
  }
};

struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;
  void raw(void* p, std::size_t n) {
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  template <typename Real>
  std::vector<Real> block() {
    const std::uint64_t n = u64();
    std::vector<Real> v(static_cast<std::size_t>(n));
    raw(v.data(), v.size() * sizeof(Real));
    return v;
  }
};

template <typename Real>
void write_params(ByteWriter& w, const std::vector<NamedParam<Real>>& params) {
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    const Shape& s = p.tensor.shape();
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (int d : s) w.u32(static_cast<std::uint32_t>(d));
    w.block(p.tensor.values());
  }
}

template <typename Real>
void read_params(ByteReader& r, std::vector<NamedParam<Real>>& params) {
  const std::uint32_t n = r.u32();
  if (n != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name)
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' does not match expected '" + p.name + "'");
    const std::uint32_t nd = r.u32();
    Shape s(nd);
    for (auto& d : s) d = static_cast<int>(r.u32());
    if (s != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    std::vector<Real> vals = r.template block<Real>();
    if (vals.size() != static_cast<std::size_t>(p.tensor.numel()))
      throw std::runtime_error("checkpoint: value count mismatch for '" + name + "'");
    std::copy(vals.begin(), vals.end(), p.tensor.mutable_data());
  }
}

template <typename Real>
void write_adam(ByteWriter& w, const Adam<Real>& opt) {
  w.i64(opt.steps());
  w.u32(static_cast<std::uint32_t>(opt.first_moments().size()));
  for (std::size_t k = 0; k < opt.first_moments().size(); ++k) {
    w.block(opt.first_moments()[k]);
    w.block(opt.second_moments()[k]);
  }
}

template <typename Real>
void read_adam(ByteReader& r, Adam<Real>& opt) {
  const std::int64_t t = r.i64();
  const std::uint32_t n = r.u32();
  std::vector<std::vector<Real>> m(n), v(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    m[k] = r.template block<Real>();
    v[k] = r.template block<Real>();
  }
  opt.restore(std::move(m), std::move(v), t);
}

}  // namespace

template <typename Real>
void checkpoint_save(const TrainSession<Real>& session, const std::string& path) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(sizeof(Real) == 4 ? 0u : 1u);
  w.u64(session.config.digest());
  w.i64(session.iteration);
  w.str(session.config.to_text());
  w.str(session.models.manifest());
  // rng state: every stream is re-derived from (seed, salt, iteration)
  w.str("seed=" + std::to_string(session.config.seed) +
        " iter=" + std::to_string(session.iteration));
  write_params(w, session.g_params);
  write_params(w, session.d_params);
  write_adam(w, session.opt_g);
  write_adam(w, session.opt_d);
  const std::uint64_t digest = fnv1a(w.bytes.data(), w.bytes.size());
  w.u64(digest);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  f.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
}

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void verify_envelope(const std::string& bytes, const std::string& path) {
  if (bytes.size() < sizeof(kMagic) + 16)
    throw std::runtime_error("checkpoint: '" + path + "' too short");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const std::uint64_t computed = fnv1a(bytes.data(), bytes.size() - 8);
  if (stored != computed)
    throw std::runtime_error("checkpoint: checksum failure in '" + path + "'");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' has wrong magic");
}

}  // namespace

Precision checkpoint_precision(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  verify_envelope(bytes, path);
  ByteReader r{bytes, sizeof(kMagic)};
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  return r.u32() == 0 ? Precision::single : Precision::dbl;
}

template <typename Real>
TrainSession<Real> checkpoint_load(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  verify_envelope(bytes, path);
  ByteReader r{bytes, sizeof(kMagic)};
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const std::uint32_t dtype = r.u32();
  if ((sizeof(Real) == 4 && dtype != 0) || (sizeof(Real) == 8 && dtype != 1))
    throw std::runtime_error("checkpoint: precision mismatch");
  const std::uint64_t digest = r.u64();
  const std::int64_t iteration = r.i64();
  const std::string config_text = r.str();
  const std::string manifest = r.str();
  r.str();  // rng state, re-derived from (seed, iteration)

  TrainConfig cfg = TrainConfig::from_text(config_text);
  if (cfg.digest() != digest)
    throw std::runtime_error("checkpoint: config digest mismatch");
  TrainSession<Real> session = make_session<Real>(cfg);
  if (session.models.manifest() != manifest)
    throw std::runtime_error("checkpoint: architecture manifest mismatch");
  session.iteration = iteration;
  read_params(r, session.g_params);
  read_params(r, session.d_params);
  read_adam(r, session.opt_g);
  read_adam(r, session.opt_d);
  return session;
}

#define MMAN_INSTANTIATE_TRAIN(Real)                                           \
  template class Adam<Real>;                                                   \
  template struct TrainSession<Real>;                                          \
  template TrainSession<Real> make_session<Real>(const TrainConfig&);          \
  template void train_alternating<Real>(                                       \
      TrainSession<Real>&, const std::vector<Sample<Real>>&, std::int64_t);    \
  template Tensor<Real> multi_scale_infer<Real>(                               \
      const DualOutputGenerator<Real>&, const Tensor<Real>&,                   \
      const std::vector<double>&);                                             \
  template void checkpoint_save<Real>(const TrainSession<Real>&,               \
                                      const std::string&);                     \
  template TrainSession<Real> checkpoint_load<Real>(const std::string&);

MMAN_INSTANTIATE_TRAIN(float)
MMAN_INSTANTIATE_TRAIN(double)
#undef MMAN_INSTANTIATE_TRAIN

}  // namespace mman
