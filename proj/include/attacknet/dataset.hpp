#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "attacknet/errors.hpp"
#include "attacknet/io_util.hpp"
#include "attacknet/rng.hpp"
#include "attacknet/tensor.hpp"

namespace attacknet {

// ---------------------------------------------------------------------------
// Labeled two-class image dataset. Pixels live in [0,1] as doubles (the
// packed file stores uint8; values are divided by 255 on load and quantized
// back with llround on save, which round trips exactly).
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kBonafideLabel = 0;
inline constexpr std::uint8_t kAttackerLabel = 1;

struct Dataset {
  Tensor samples;  // [N,H,W,C]
  std::vector<std::uint8_t> labels;
  std::string name;
  std::string source;

  std::int64_t count() const { return samples.dim(0); }
  std::int64_t height() const { return samples.dim(1); }
  std::int64_t width() const { return samples.dim(2); }
  std::int64_t channels() const { return samples.dim(3); }

  std::int64_t bonafide_count() const {
    return static_cast<std::int64_t>(
        std::count(labels.begin(), labels.end(), kBonafideLabel));
  }
  std::int64_t attacker_count() const {
    return static_cast<std::int64_t>(
        std::count(labels.begin(), labels.end(), kAttackerLabel));
  }

  void validate() const {
    if (samples.rank() != 4) {
      throw InputError("dataset samples must be rank-4 [N,H,W,C], got " +
                       samples.shape_string());
    }
    if (static_cast<std::int64_t>(labels.size()) != count()) {
      throw InputError("dataset has " + std::to_string(count()) +
                       " samples but " + std::to_string(labels.size()) +
                       " labels");
    }
    if (count() < 1) {
      throw InputError("dataset is empty");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] > 1) {
        throw LabelError("label at index " + std::to_string(i) +
                         " must be 0 or 1, got " +
                         std::to_string(static_cast<int>(labels[i])));
      }
    }
    for (std::int64_t i = 0; i < samples.size(); ++i) {
      if (!(samples[i] >= 0.0 && samples[i] <= 1.0)) {
        throw InputError("sample value outside [0,1] at flat index " +
                         std::to_string(i));
      }
    }
  }

  // [n,H,W,C] slice starting at sample `start`.
  Tensor batch_tensor(std::int64_t start, std::int64_t n) const {
    if (start < 0 || n < 1 || start + n > count()) {
      throw InputError("batch range [" + std::to_string(start) + ", " +
                       std::to_string(start + n) + ") outside dataset of " +
                       std::to_string(count()));
    }
    const std::int64_t per = height() * width() * channels();
    Tensor out({n, height(), width(), channels()});
    std::copy(samples.data() + start * per, samples.data() + (start + n) * per,
              out.data());
    return out;
  }

  // New dataset holding the given samples, in the given order.
  Dataset subset(const std::vector<std::int64_t>& indices,
                 std::string subset_name) const {
    if (indices.empty()) {
      throw InputError("subset needs at least one index");
    }
    const std::int64_t per = height() * width() * channels();
    Dataset out;
    out.samples = Tensor({static_cast<std::int64_t>(indices.size()), height(),
                          width(), channels()});
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::int64_t src = indices[i];
      if (src < 0 || src >= count()) {
        throw InputError("subset index " + std::to_string(src) +
                         " out of range");
      }
      std::copy(samples.data() + src * per, samples.data() + (src + 1) * per,
                out.samples.data() + static_cast<std::int64_t>(i) * per);
      out.labels.push_back(labels[static_cast<std::size_t>(src)]);
    }
    out.name = std::move(subset_name);
    out.source = source;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Packed file format, little-endian:
//   magic "LVDS1\0" | u16 version | u32 N | u16 H | u16 W | u16 C (= 3) |
//   u8 encoding tag (0 = uint8 RGB) | N x [u8 label | H*W*C pixel bytes] |
//   u32 CRC-32 over all preceding bytes
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[6] = {'L', 'V', 'D', 'S', '1', '\0'};
inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderSize = 6 + 2 + 4 + 2 + 2 + 2 + 1;

inline std::string serialize_dataset(const Dataset& d) {
  d.validate();
  if (d.channels() != 3) {
    throw FormatError("packed datasets hold 3-channel images, got " +
                      std::to_string(d.channels()));
  }
  if (d.count() > 0xFFFFFFFFll || d.height() > 0xFFFF || d.width() > 0xFFFF) {
    throw FormatError("dataset dimensions exceed the packed format limits");
  }
  ByteWriter w;
  w.put_bytes(std::string_view(kDatasetMagic, sizeof(kDatasetMagic)));
  w.put_u16(kDatasetVersion);
  w.put_u32(static_cast<std::uint32_t>(d.count()));
  w.put_u16(static_cast<std::uint16_t>(d.height()));
  w.put_u16(static_cast<std::uint16_t>(d.width()));
  w.put_u16(static_cast<std::uint16_t>(d.channels()));
  w.put_u8(0);  // encoding tag: uint8 RGB
  const std::int64_t per = d.height() * d.width() * d.channels();
  for (std::int64_t i = 0; i < d.count(); ++i) {
    w.put_u8(d.labels[static_cast<std::size_t>(i)]);
    const double* row = d.samples.data() + i * per;
    for (std::int64_t j = 0; j < per; ++j) {
      const double v = std::clamp(row[j], 0.0, 1.0);
      w.put_u8(static_cast<std::uint8_t>(std::llround(v * 255.0)));
    }
  }
  w.put_crc32();
  return std::move(w).bytes();
}

inline Dataset deserialize_dataset(std::string_view bytes, std::string name) {
  if (bytes.size() < kDatasetHeaderSize) {
    throw FormatError("not a packed dataset (" + std::to_string(bytes.size()) +
                      " bytes)");
  }
  ByteReader r(bytes);
  const std::string_view magic = r.get_bytes(sizeof(kDatasetMagic));
  if (magic != std::string_view(kDatasetMagic, sizeof(kDatasetMagic))) {
    throw FormatError("bad dataset magic");
  }
  const std::uint16_t version = r.get_u16();
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " +
                      std::to_string(version));
  }
  const std::uint32_t n = r.get_u32();
  const std::uint16_t h = r.get_u16();
  const std::uint16_t w = r.get_u16();
  const std::uint16_t c = r.get_u16();
  const std::uint8_t tag = r.get_u8();
  if (c != 3) {
    throw FormatError("packed datasets hold 3-channel images, got " +
                      std::to_string(c));
  }
  if (tag != 0) {
    throw FormatError("unknown pixel encoding tag " + std::to_string(tag));
  }
  if (n == 0) {
    throw FormatError("dataset declares zero samples");
  }
  const std::uint64_t per = static_cast<std::uint64_t>(h) * w * c;
  const std::uint64_t expected =
      kDatasetHeaderSize + static_cast<std::uint64_t>(n) * (1 + per) + 4;
  if (bytes.size() != expected) {
    throw CorruptionError("dataset declares " + std::to_string(n) +
                          " samples (" + std::to_string(expected) +
                          " bytes) but the file has " +
                          std::to_string(bytes.size()));
  }
  ByteReader trailer(bytes.substr(bytes.size() - 4));
  if (trailer.get_u32() != crc32(bytes.substr(0, bytes.size() - 4))) {
    throw CorruptionError("dataset checksum mismatch");
  }

  Dataset d;
  d.samples = Tensor({static_cast<std::int64_t>(n), h, w, c});
  d.labels.reserve(n);
  double* out = d.samples.data();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint8_t label = r.get_u8();
    if (label > 1) {
      throw CorruptionError("sample " + std::to_string(i) +
                            " has label " + std::to_string(label));
    }
    d.labels.push_back(label);
    const std::string_view pixels = r.get_bytes(per);
    for (std::uint64_t j = 0; j < per; ++j) {
      *out++ = static_cast<double>(static_cast<std::uint8_t>(pixels[j])) / 255.0;
    }
  }
  d.name = std::move(name);
  d.source = "packed file";
  return d;
}

inline void save_packed_dataset(const Dataset& d, const std::string& path) {
  atomic_write_file(path, serialize_dataset(d));
}

inline Dataset load_packed_dataset(const std::string& path) {
  // Name the dataset after the file stem; reports key off it.
  std::string stem = path;
  if (const auto slash = stem.find_last_of("/\\"); slash != std::string::npos) {
    stem = stem.substr(slash + 1);
  }
  if (const auto dot = stem.find_last_of('.'); dot != std::string::npos && dot > 0) {
    stem = stem.substr(0, dot);
  }
  return deserialize_dataset(read_file(path), stem);
}

// ---------------------------------------------------------------------------
// Synthetic data: bonafide images are a smooth radial gradient plus
// Gaussian-blurred seeded noise; attacker images add a periodic vertical
// stripe pattern with a random per-sample phase (a stand-in for the
// high-frequency artifacts of presentation attacks).
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::int64_t per_class = 256;
  std::int64_t height = 64;
  std::int64_t width = 64;
  double noise_sigma = 0.05;
  std::int64_t stripe_period = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (per_class < 1) throw InputError("per_class must be positive");
    if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
      throw InputError("synthetic image dims must be multiples of 4, got " +
                       std::to_string(height) + "x" + std::to_string(width));
    }
    if (!(noise_sigma >= 0.0)) {
      throw InputError("noise_sigma must be >= 0");
    }
    if (stripe_period < 1) throw InputError("stripe_period must be positive");
  }
};

namespace detail {

// Separable Gaussian blur (sigma 2, radius 4) with replicated edges.
inline void gaussian_blur_inplace(std::vector<double>& img, std::int64_t h,
                                  std::int64_t w) {
  constexpr std::int64_t kRadius = 4;
  constexpr double kBlurSigma = 2.0;
  static const std::vector<double> kKernel = [] {
    std::vector<double> k(2 * kRadius + 1);
    double sum = 0.0;
    for (std::int64_t i = -kRadius; i <= kRadius; ++i) {
      k[static_cast<std::size_t>(i + kRadius)] =
          std::exp(-static_cast<double>(i * i) / (2.0 * kBlurSigma * kBlurSigma));
      sum += k[static_cast<std::size_t>(i + kRadius)];
    }
    for (double& v : k) v /= sum;
    return k;
  }();

  std::vector<double> tmp(img.size());
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::int64_t i = -kRadius; i <= kRadius; ++i) {
        const std::int64_t xi = std::clamp<std::int64_t>(x + i, 0, w - 1);
        acc += kKernel[static_cast<std::size_t>(i + kRadius)] *
               img[static_cast<std::size_t>(y * w + xi)];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::int64_t i = -kRadius; i <= kRadius; ++i) {
        const std::int64_t yi = std::clamp<std::int64_t>(y + i, 0, h - 1);
        acc += kKernel[static_cast<std::size_t>(i + kRadius)] *
               tmp[static_cast<std::size_t>(yi * w + x)];
      }
      img[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
}

// Base brightness at (y,x): 0.85 at the center falling linearly to 0.15 at
// the farthest corner.
inline double radial_base(std::int64_t y, std::int64_t x, std::int64_t h,
                          std::int64_t w) {
  const double cy = static_cast<double>(h - 1) / 2.0;
  const double cx = static_cast<double>(w - 1) / 2.0;
  const double dy = static_cast<double>(y) - cy;
  const double dx = static_cast<double>(x) - cx;
  const double max_dist = std::sqrt(cy * cy + cx * cx);
  const double r = std::sqrt(dy * dy + dx * dx) / max_dist;
  return 0.15 + 0.7 * (1.0 - r);
}

}  // namespace detail

inline Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const std::int64_t h = spec.height, w = spec.width;
  const std::int64_t n = 2 * spec.per_class;
  SeededRng rng(spec.seed);

  Dataset d;
  d.samples = Tensor({n, h, w, 3});
  d.labels.assign(static_cast<std::size_t>(n), kBonafideLabel);
  for (std::int64_t i = spec.per_class; i < n; ++i) {
    d.labels[static_cast<std::size_t>(i)] = kAttackerLabel;
  }

  // Draw order is fixed: samples in storage order (all bonafide, then all
  // attacker); per attacker sample one stripe-phase uniform, then, when
  // noise_sigma > 0, one normal per pixel per channel in flat (y,x,c) order.
  // With noise_sigma == 0 no noise draws are consumed at all, which keeps
  // the bonafide images an exact closed-form radial gradient.
  std::vector<double> noise[3];
  double* out = d.samples.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const bool attacker = i >= spec.per_class;
    double phase = 0.0;
    if (attacker) {
      phase = rng.uniform() * static_cast<double>(spec.stripe_period);
    }
    if (spec.noise_sigma > 0.0) {
      for (auto& ch : noise) ch.assign(static_cast<std::size_t>(h * w), 0.0);
      for (std::int64_t p = 0; p < h * w; ++p) {
        for (auto& ch : noise) {
          ch[static_cast<std::size_t>(p)] = rng.normal(0.0, spec.noise_sigma);
        }
      }
      for (auto& ch : noise) detail::gaussian_blur_inplace(ch, h, w);
    }
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double v = detail::radial_base(y, x, h, w);
        if (attacker) {
          v += 0.15 * std::sin(2.0 * std::numbers::pi *
                               (static_cast<double>(x) + phase) /
                               static_cast<double>(spec.stripe_period));
        }
        for (std::int64_t c = 0; c < 3; ++c) {
          double value = v;
          if (spec.noise_sigma > 0.0) {
            value += noise[c][static_cast<std::size_t>(y * w + x)];
          }
          value = std::clamp(value, 0.0, 1.0);
          // Quantize to uint8 so in-memory data matches a save/load cycle.
          *out++ = static_cast<double>(static_cast<std::uint8_t>(
                       std::llround(value * 255.0))) /
                   255.0;
        }
      }
    }
  }
  d.name = "synthetic";
  d.source = "generated (per_class=" + std::to_string(spec.per_class) +
             ", noise_sigma=" + std::to_string(spec.noise_sigma) +
             ", stripe_period=" + std::to_string(spec.stripe_period) +
             ", seed=" + std::to_string(spec.seed) + ")";
  return d;
}

// ---------------------------------------------------------------------------
// Stratified split. Each class is shuffled independently (bonafide first),
// the first llround(fraction*count) shuffled members become holdout, and
// both parts keep ascending original sample order.
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train;
  Dataset holdout;
};

inline SplitResult split_dataset(const Dataset& d, double holdout_fraction,
                                 std::uint64_t seed) {
  d.validate();
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw SplitError("holdout fraction must lie in (0,1), got " +
                     std::to_string(holdout_fraction));
  }
  SeededRng rng(seed);
  std::vector<std::int64_t> train_idx, holdout_idx;
  for (std::uint8_t cls : {kBonafideLabel, kAttackerLabel}) {
    std::vector<std::int64_t> members;
    for (std::int64_t i = 0; i < d.count(); ++i) {
      if (d.labels[static_cast<std::size_t>(i)] == cls) members.push_back(i);
    }
    if (members.empty()) {
      throw SplitError("dataset has no samples of class " +
                       std::to_string(static_cast<int>(cls)));
    }
    const std::int64_t take = std::llround(
        holdout_fraction * static_cast<double>(members.size()));
    if (take < 1 || take >= static_cast<std::int64_t>(members.size())) {
      throw SplitError("fraction " + std::to_string(holdout_fraction) +
                       " leaves an empty partition for class " +
                       std::to_string(static_cast<int>(cls)) + " (" +
                       std::to_string(members.size()) + " samples)");
    }
    rng.shuffle(members);
    holdout_idx.insert(holdout_idx.end(), members.begin(),
                       members.begin() + take);
    train_idx.insert(train_idx.end(), members.begin() + take, members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(holdout_idx.begin(), holdout_idx.end());
  return SplitResult{d.subset(train_idx, d.name + "-train"),
                     d.subset(holdout_idx, d.name + "-holdout")};
}

}  // namespace attacknet
