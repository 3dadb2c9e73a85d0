#pragma once
// Procedural MNIST-1D generation.
//
// Each example starts from one of ten 12-point digit templates and goes
// through: zero padding -> circular shift -> amplitude scaling -> i.i.d.
// Gaussian noise -> Gaussian smoothing -> resampling to `out_len` points.
//
// Random draws per example, in order: padding (next_int), shift (next_int),
// scale (next_uniform), then one next_gauss per padded point.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnist1d/io.hpp"
#include "mnist1d/prng.hpp"

namespace mnist1d {

inline constexpr std::size_t kNumClasses = 10;
inline constexpr std::size_t kTemplateLen = 12;

enum class Downsample { kLinear, kStrided };

struct GenConfig {
  std::size_t template_len = kTemplateLen;
  std::size_t pad_lo = 36;
  std::size_t pad_hi = 60;
  std::size_t max_shift = 48;  // inclusive
  double noise_sigma = 0.25;
  double scale_lo = 0.75;
  double scale_hi = 1.25;
  double smooth_sigma = 2.0;
  std::size_t out_len = 40;
  std::size_t n_train = 4000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;
  Downsample downsample = Downsample::kLinear;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("GenConfig: " + m); };
    if (template_len != kTemplateLen) fail("template_len must be 12");
    if (pad_lo > pad_hi) fail("pad_lo > pad_hi");
    if (out_len == 0) fail("out_len must be positive");
    if (!(smooth_sigma > 0.0)) fail("smooth_sigma must be positive");
    if (!(scale_lo <= scale_hi)) fail("scale_lo > scale_hi");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
    if (n_train == 0 || n_test == 0) fail("n_train and n_test must be positive");
  }

  bool operator==(const GenConfig&) const = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(Downsample, {{Downsample::kLinear, "linear"}, {Downsample::kStrided, "strided"}})

inline void to_json(nlohmann::json& j, const GenConfig& c) {
  j = nlohmann::json{{"template_len", c.template_len}, {"pad_lo", c.pad_lo},
                     {"pad_hi", c.pad_hi},             {"max_shift", c.max_shift},
                     {"noise_sigma", c.noise_sigma},   {"scale_lo", c.scale_lo},
                     {"scale_hi", c.scale_hi},         {"smooth_sigma", c.smooth_sigma},
                     {"out_len", c.out_len},           {"n_train", c.n_train},
                     {"n_test", c.n_test},             {"seed", c.seed},
                     {"downsample", c.downsample}};
}

/// Missing keys keep their defaults, so partial config files are accepted.
inline void from_json(const nlohmann::json& j, GenConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("template_len", c.template_len);
  get("pad_lo", c.pad_lo);
  get("pad_hi", c.pad_hi);
  get("max_shift", c.max_shift);
  get("noise_sigma", c.noise_sigma);
  get("scale_lo", c.scale_lo);
  get("scale_hi", c.scale_hi);
  get("smooth_sigma", c.smooth_sigma);
  get("out_len", c.out_len);
  get("n_train", c.n_train);
  get("n_test", c.n_test);
  get("seed", c.seed);
  get("downsample", c.downsample);
}

struct Template {
  int digit;
  std::array<double, kTemplateLen> ys;
};

/// The ten digit templates.
///
/// Raw ordinates are the standard hand-drawn MNIST-1D tables. Each row is
/// standardized to zero mean and unit (population) std, shifted so it starts
/// at 0, and divided by 6.
inline std::array<Template, kNumClasses> templates() {
  static constexpr double raw[kNumClasses][kTemplateLen] = {
      {5, 6, 6.5, 6.75, 7, 7, 7, 7, 6.75, 6.5, 6, 5},
      {5, 3, 3, 3.4, 3.8, 4.2, 4.6, 5, 5.4, 5.8, 5, 5},
      {5, 6, 6.5, 6.5, 6, 5.25, 4.75, 4, 3.5, 3.5, 4, 5},
      {5, 6, 6.5, 6.5, 6, 5, 5, 6, 6.5, 6.5, 6, 5},
      {5, 4.4, 3.8, 3.2, 2.6, 2.6, 5, 5, 5, 5, 5, 5},
      {5, 3, 3, 3, 3, 5, 6, 6.5, 6.5, 6, 4.5, 5},
      {5, 4, 3.5, 3.25, 3, 3, 3, 3, 3.25, 3.5, 4, 5},
      {5, 7, 7, 6.6, 6.2, 5.8, 5.4, 5, 4.6, 4.2, 5, 5},
      {5, 4, 3.5, 3.5, 4, 5, 5, 4, 3.5, 3.5, 4, 5},
      {5, 4, 3.5, 3.5, 4, 5, 5, 5, 5, 4.7, 4.3, 5},
  };
  std::array<Template, kNumClasses> out{};
  for (std::size_t d = 0; d < kNumClasses; ++d) {
    double mu = 0.0;
    for (double v : raw[d]) mu += v;
    mu /= kTemplateLen;
    double var = 0.0;
    for (double v : raw[d]) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / kTemplateLen);
    const double first = (raw[d][0] - mu) / sd;
    out[d].digit = static_cast<int>(d);
    for (std::size_t i = 0; i < kTemplateLen; ++i) out[d].ys[i] = ((raw[d][i] - mu) / sd - first) / 6.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline stages

inline std::vector<double> pad_signal(std::span<const double> ys, std::size_t n_zeros) {
  std::vector<double> out(ys.begin(), ys.end());
  out.resize(ys.size() + n_zeros, 0.0);
  return out;
}

/// Rotates right: out[(i + shift) mod n] = in[i].
inline std::vector<double> circular_shift(std::span<const double> xs, std::size_t shift) {
  const std::size_t n = xs.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[(i + shift) % n] = xs[i];
  return out;
}

/// Normalized Gaussian weights for offsets -r..r with r = ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const auto r = static_cast<std::size_t>(std::ceil(4.0 * sigma));
  std::vector<double> w(2 * r + 1);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(r);
    s += (w[i] = std::exp(-0.5 * d * d / (sigma * sigma)));
  }
  for (auto& v : w) v /= s;
  return w;
}

/// Convolution with a symmetric kernel, reflecting at the boundaries
/// (half-sample symmetric: ... x1 x0 | x0 x1 ... x_{n-1} | x_{n-1} x_{n-2} ...).
inline std::vector<double> smooth_reflect(std::span<const double> xs, std::span<const double> kernel) {
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
  const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> out(xs.size(), 0.0);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::ptrdiff_t j = -r; j <= r; ++j) {
      std::ptrdiff_t t = i + j;
      while (t < 0 || t >= n) t = t < 0 ? -t - 1 : 2 * n - t - 1;
      acc += kernel[static_cast<std::size_t>(j + r)] * xs[static_cast<std::size_t>(t)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

/// Linear interpolation at m equally spaced positions spanning [0, n-1].
inline std::vector<double> resample_linear(std::span<const double> xs, std::size_t m) {
  std::vector<double> out(m);
  const std::size_t n = xs.size();
  if (n == 1 || m == 1) {
    std::fill(out.begin(), out.end(), xs[0]);
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(m - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), n - 2);
    const double frac = pos - static_cast<double>(lo);
    out[i] = xs[lo] * (1.0 - frac) + xs[lo + 1] * frac;
  }
  return out;
}

/// Picks x[floor(i * n / m)].
inline std::vector<double> resample_strided(std::span<const double> xs, std::size_t m) {
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = xs[i * xs.size() / m];
  return out;
}

inline std::vector<double> synthesize(const Template& t, const GenConfig& cfg, RngStream& rng) {
  const auto n_pad = static_cast<std::size_t>(
      rng.next_int(static_cast<std::int64_t>(cfg.pad_lo), static_cast<std::int64_t>(cfg.pad_hi)));
  const auto shift = static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(cfg.max_shift)));
  const double amp = cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * rng.next_uniform();

  auto xs = circular_shift(pad_signal(t.ys, n_pad), shift);
  for (auto& v : xs) v = v * amp + rng.next_gauss(0.0, cfg.noise_sigma);
  xs = smooth_reflect(xs, gaussian_kernel(cfg.smooth_sigma));
  return cfg.downsample == Downsample::kLinear ? resample_linear(xs, cfg.out_len)
                                               : resample_strided(xs, cfg.out_len);
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::vector<double> x_train;  // n_train x out_len, row-major
  std::vector<int> y_train;
  std::vector<double> x_test;
  std::vector<int> y_test;
  std::size_t out_len = 0;
  GenConfig config;
  /// shuffled[j] = original[feature_perm[j]] for every signal.
  std::optional<std::vector<std::size_t>> feature_perm;

  std::size_t n_train() const { return y_train.size(); }
  std::size_t n_test() const { return y_test.size(); }

  bool operator==(const Dataset&) const = default;
};

/// Base stream for per-example substreams. Test examples use ids offset by
/// 2^32 so the test split does not depend on n_train.
inline constexpr std::uint64_t kTestIndexOffset = std::uint64_t{1} << 32;

inline Dataset generate(const GenConfig& cfg) {
  cfg.validate();
  const auto tpl = templates();
  const RngStream base = derive(cfg.seed, stream_id::kDataset);
  Dataset d;
  d.out_len = cfg.out_len;
  d.config = cfg;
  auto fill = [&](std::size_t count, std::uint64_t offset, std::vector<double>& xs, std::vector<int>& ys) {
    xs.reserve(count * cfg.out_len);
    ys.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto label = static_cast<int>(i % kNumClasses);
      RngStream rng = base.split(offset + i);
      const auto sig = synthesize(tpl[static_cast<std::size_t>(label)], cfg, rng);
      xs.insert(xs.end(), sig.begin(), sig.end());
      ys.push_back(label);
    }
  };
  fill(cfg.n_train, 0, d.x_train, d.y_train);
  fill(cfg.n_test, kTestIndexOffset, d.x_test, d.y_test);
  return d;
}

/// Applies shuffled[j] = original[perm[j]] to every train and test signal.
/// Composes with a permutation already recorded on the dataset.
inline Dataset apply_feature_permutation(const Dataset& d, const std::vector<std::size_t>& perm) {
  if (perm.size() != d.out_len) throw std::invalid_argument("feature permutation length mismatch");
  Dataset out = d;
  auto apply = [&](const std::vector<double>& src, std::vector<double>& dst) {
    for (std::size_t row = 0; row < src.size() / d.out_len; ++row)
      for (std::size_t j = 0; j < d.out_len; ++j) dst[row * d.out_len + j] = src[row * d.out_len + perm[j]];
  };
  apply(d.x_train, out.x_train);
  apply(d.x_test, out.x_test);
  std::vector<std::size_t> total(perm);
  if (d.feature_perm)
    for (std::size_t j = 0; j < perm.size(); ++j) total[j] = (*d.feature_perm)[perm[j]];
  out.feature_perm = std::move(total);
  return out;
}

/// One permutation of the feature axis, drawn once and applied to all signals.
inline Dataset shuffle_features(const Dataset& d, RngStream& rng) {
  return apply_feature_permutation(d, rng.permutation(d.out_len));
}

/// Undoes the recorded permutation, returning signals in original order.
inline Dataset unshuffle_features(const Dataset& d) {
  if (!d.feature_perm) return d;
  const auto& p = *d.feature_perm;
  std::vector<std::size_t> inv(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) inv[p[j]] = j;
  Dataset out = apply_feature_permutation(d, inv);
  out.feature_perm.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
//
//   "MNIST1DD" | u32 format version | payload | u32 CRC-32(payload)
//   payload: u32-length-prefixed canonical JSON header (GenConfig under
//            "config", generator version under "generator", keys sorted),
//            u64 n_train, u64 n_test, u32 out_len,
//            f64 x_train[n_train*out_len], u8 y_train[n_train],
//            f64 x_test[n_test*out_len],   u8 y_test[n_test],
//            u8 has_perm, then (u32 len, u32 perm[len]) when has_perm = 1.
//   All integers and floats little-endian.

inline constexpr std::string_view kDatasetMagic = "MNIST1DD";
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

#ifndef MNIST1D_VERSION
#define MNIST1D_VERSION "0.0.0"
#endif
inline constexpr std::string_view kGeneratorVersion = MNIST1D_VERSION;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d,
                                                std::uint32_t format_version = kDatasetFormatVersion,
                                                std::string_view generator = kGeneratorVersion) {
  ByteWriter w;
  const nlohmann::json header = {{"config", d.config}, {"generator", std::string(generator)}};
  w.str(header.dump());
  w.u64(d.n_train());
  w.u64(d.n_test());
  w.u32(static_cast<std::uint32_t>(d.out_len));
  w.f64s(d.x_train);
  for (int y : d.y_train) w.u8(static_cast<std::uint8_t>(y));
  w.f64s(d.x_test);
  for (int y : d.y_test) w.u8(static_cast<std::uint8_t>(y));
  w.u8(d.feature_perm ? 1 : 0);
  if (d.feature_perm) {
    w.u32(static_cast<std::uint32_t>(d.feature_perm->size()));
    for (auto p : *d.feature_perm) w.u32(static_cast<std::uint32_t>(p));
  }
  return frame(kDatasetMagic, format_version, w.bytes());
}

inline Dataset decode_dataset(std::span<const std::uint8_t> file) {
  const auto payload = unframe(file, kDatasetMagic, kDatasetFormatVersion);
  ByteReader r(payload);
  Dataset d;
  std::string generator;
  try {
    const auto header = nlohmann::json::parse(r.str());
    d.config = header.at("config").get<GenConfig>();
    generator = header.at("generator").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, std::string("bad dataset header: ") + e.what());
  }
  if (generator != kGeneratorVersion)
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "dataset written by generator " + generator + ", this is " + std::string(kGeneratorVersion));
  const auto n_train = r.u64(), n_test = r.u64();
  d.out_len = r.u32();
  auto labels = [&r](std::uint64_t n) {
    std::vector<int> ys;
    for (std::uint64_t i = 0; i < n; ++i) {
      const int y = r.u8();
      if (y >= static_cast<int>(kNumClasses)) throw FormatError(FormatError::Kind::kMalformed, "label out of range");
      ys.push_back(y);
    }
    return ys;
  };
  d.x_train = r.f64s(n_train * d.out_len);
  d.y_train = labels(n_train);
  d.x_test = r.f64s(n_test * d.out_len);
  d.y_test = labels(n_test);
  if (r.u8()) {
    std::vector<std::size_t> perm(r.u32());
    for (auto& p : perm) p = r.u32();
    d.feature_perm = std::move(perm);
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::kMalformed, "trailing bytes in dataset payload");
  return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(d));
}

inline Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

/// One row per example: x0..x{L-1},label. Values printed with 17 significant digits.
inline std::string dataset_csv(const std::vector<double>& xs, const std::vector<int>& ys, std::size_t len) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t j = 0; j < len; ++j) os << 'x' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    for (std::size_t j = 0; j < len; ++j) os << xs[i * len + j] << ',';
    os << ys[i] << '\n';
  }
  return os.str();
}

}  // namespace mnist1d
