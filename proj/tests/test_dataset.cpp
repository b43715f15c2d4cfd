#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "attacknet/dataset.hpp"
#include "attacknet/errors.hpp"
#include "attacknet/io_util.hpp"
#include "attacknet/rng.hpp"

using namespace attacknet;
using Catch::Matchers::WithinAbs;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.per_class = 8;
  s.height = 16;
  s.width = 16;
  s.noise_sigma = 0.05;
  s.stripe_period = 4;
  s.seed = 7;
  return s;
}

double quantized(double v) {
  return static_cast<double>(
             static_cast<std::uint8_t>(std::llround(std::clamp(v, 0.0, 1.0) * 255.0))) /
         255.0;
}

double radial(std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
  const double cy = static_cast<double>(h - 1) / 2.0;
  const double cx = static_cast<double>(w - 1) / 2.0;
  const double dy = static_cast<double>(y) - cy;
  const double dx = static_cast<double>(x) - cx;
  const double r = std::sqrt(dy * dy + dx * dx) / std::sqrt(cy * cy + cx * cx);
  return 0.15 + 0.7 * (1.0 - r);
}

// Mean squared horizontal second difference, a high-frequency energy proxy.
double hf_energy(const Dataset& d, std::int64_t sample) {
  const std::int64_t h = d.height(), w = d.width(), c = d.channels();
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 1; x + 1 < w; ++x) {
      const double d2 = d.samples(sample, y, x + 1, 0) -
                        2.0 * d.samples(sample, y, x, 0) +
                        d.samples(sample, y, x - 1, 0);
      acc += d2 * d2;
      ++count;
    }
  }
  (void)c;
  return acc / static_cast<double>(count);
}

}  // namespace

TEST_CASE("synthetic generation is seed-deterministic") {
  Dataset a = generate_synthetic(small_spec());
  Dataset b = generate_synthetic(small_spec());
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::int64_t i = 0; i < a.samples.size(); ++i) {
    REQUIRE(a.samples[i] == b.samples[i]);
  }
  CHECK(a.labels == b.labels);

  SynthSpec other = small_spec();
  other.seed = 8;
  Dataset c = generate_synthetic(other);
  bool differs = false;
  for (std::int64_t i = 0; i < a.samples.size(); ++i) {
    differs = differs || a.samples[i] != c.samples[i];
  }
  CHECK(differs);
}

TEST_CASE("synthetic datasets are balanced, bonafide block first") {
  Dataset d = generate_synthetic(small_spec());
  CHECK(d.count() == 16);
  CHECK(d.bonafide_count() == 8);
  CHECK(d.attacker_count() == 8);
  for (std::int64_t i = 0; i < 8; ++i) {
    CHECK(d.labels[static_cast<std::size_t>(i)] == kBonafideLabel);
    CHECK(d.labels[static_cast<std::size_t>(8 + i)] == kAttackerLabel);
  }
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("noise-free bonafide images are the exact radial gradient") {
  SynthSpec s = small_spec();
  s.noise_sigma = 0.0;
  Dataset d = generate_synthetic(s);
  for (std::int64_t y = 0; y < s.height; ++y) {
    for (std::int64_t x = 0; x < s.width; ++x) {
      const double expected = quantized(radial(y, x, s.height, s.width));
      for (std::int64_t c = 0; c < 3; ++c) {
        REQUIRE(d.samples(0, y, x, c) == expected);
        REQUIRE(d.samples(3, y, x, c) == expected);  // same for every sample
      }
    }
  }
}

TEST_CASE("noise-free attacker images are base plus a phased stripe") {
  SynthSpec s = small_spec();
  s.noise_sigma = 0.0;
  s.per_class = 2;
  Dataset d = generate_synthetic(s);
  // Noise-free generation consumes exactly one uniform per attacker sample,
  // in storage order; reconstruct both attacker images from a twin stream.
  SeededRng twin(s.seed);
  for (std::int64_t a = 0; a < 2; ++a) {
    const double phase = twin.uniform() * static_cast<double>(s.stripe_period);
    const std::int64_t sample = 2 + a;
    for (std::int64_t y = 0; y < s.height; ++y) {
      for (std::int64_t x = 0; x < s.width; ++x) {
        const double stripe =
            0.15 * std::sin(2.0 * std::numbers::pi *
                            (static_cast<double>(x) + phase) /
                            static_cast<double>(s.stripe_period));
        const double expected =
            quantized(radial(y, x, s.height, s.width) + stripe);
        for (std::int64_t c = 0; c < 3; ++c) {
          REQUIRE(d.samples(sample, y, x, c) == expected);
        }
      }
    }
  }
}

TEST_CASE("attacker images carry far more high-frequency energy") {
  Dataset d = generate_synthetic(small_spec());
  double bonafide = 0.0, attacker = 0.0;
  for (std::int64_t i = 0; i < 8; ++i) {
    bonafide += hf_energy(d, i);
    attacker += hf_energy(d, 8 + i);
  }
  CHECK(attacker > 10.0 * bonafide);
}

TEST_CASE("class-mean images differ") {
  Dataset d = generate_synthetic(small_spec());
  const std::int64_t per = d.height() * d.width() * d.channels();
  double diff = 0.0;
  for (std::int64_t j = 0; j < per; ++j) {
    double mb = 0.0, ma = 0.0;
    for (std::int64_t i = 0; i < 8; ++i) {
      mb += d.samples[i * per + j];
      ma += d.samples[(8 + i) * per + j];
    }
    diff += std::abs(ma - mb) / 8.0;
  }
  CHECK(diff / static_cast<double>(per) > 0.0);
}

TEST_CASE("pixel values sit on the uint8/255 grid inside [0,1]") {
  Dataset d = generate_synthetic(small_spec());
  for (std::int64_t i = 0; i < d.samples.size(); ++i) {
    REQUIRE(d.samples[i] >= 0.0);
    REQUIRE(d.samples[i] <= 1.0);
    const double scaled = d.samples[i] * 255.0;
    REQUIRE(std::abs(scaled - std::llround(scaled)) < 1e-9);
  }
}

TEST_CASE("datasets serialize and round trip bit-exactly") {
  Dataset d = generate_synthetic(small_spec());
  const std::string bytes = serialize_dataset(d);
  Dataset back = deserialize_dataset(bytes, d.name);
  REQUIRE(back.count() == d.count());
  CHECK(back.labels == d.labels);
  for (std::int64_t i = 0; i < d.samples.size(); ++i) {
    REQUIRE(back.samples[i] == d.samples[i]);
  }
  CHECK(serialize_dataset(back) == bytes);
}

TEST_CASE("packed header layout is as documented") {
  SynthSpec s = small_spec();
  s.per_class = 2;
  Dataset d = generate_synthetic(s);
  const std::string bytes = serialize_dataset(d);
  CHECK(bytes.compare(0, 6, std::string("LVDS1\0", 6)) == 0);
  ByteReader r(std::string_view(bytes).substr(6));
  CHECK(r.get_u16() == 1);   // version
  CHECK(r.get_u32() == 4);   // N
  CHECK(r.get_u16() == 16);  // H
  CHECK(r.get_u16() == 16);  // W
  CHECK(r.get_u16() == 3);   // C
  CHECK(r.get_u8() == 0);    // encoding tag
  CHECK(bytes.size() == 19 + 4 * (1 + 16 * 16 * 3) + 4);  // header 6+2+4+2+2+2+1
}

TEST_CASE("dataset loading rejects malformed files with the right errors") {
  Dataset d = generate_synthetic(small_spec());
  const std::string bytes = serialize_dataset(d);

  CHECK_THROWS_AS(deserialize_dataset("", "x"), FormatError);
  CHECK_THROWS_AS(deserialize_dataset("short", "x"), FormatError);

  std::string bad_magic = bytes;
  bad_magic[0] = 'Z';
  CHECK_THROWS_AS(deserialize_dataset(bad_magic, "x"), FormatError);

  std::string bad_version = bytes;
  bad_version[6] = 3;
  CHECK_THROWS_AS(deserialize_dataset(bad_version, "x"), FormatError);

  // Truncation makes the payload disagree with the declared count.
  CHECK_THROWS_AS(deserialize_dataset(bytes.substr(0, bytes.size() / 2), "x"),
                  CorruptionError);
  CHECK_THROWS_AS(deserialize_dataset(bytes + "junk", "x"), CorruptionError);

  std::string flipped = bytes;
  flipped[100] = static_cast<char>(static_cast<unsigned char>(flipped[100]) ^ 0x10);
  CHECK_THROWS_AS(deserialize_dataset(flipped, "x"), CorruptionError);
}

TEST_CASE("a bad label byte inside a valid checksum is corruption") {
  // Craft a tiny file by hand: 1 sample, 4x4x3, label 2.
  ByteWriter w;
  w.put_bytes(std::string_view("LVDS1\0", 6));
  w.put_u16(1);
  w.put_u32(1);
  w.put_u16(4);
  w.put_u16(4);
  w.put_u16(3);
  w.put_u8(0);
  w.put_u8(2);  // invalid label
  for (int i = 0; i < 4 * 4 * 3; ++i) w.put_u8(128);
  w.put_crc32();
  CHECK_THROWS_AS(deserialize_dataset(std::move(w).bytes(), "x"),
                  CorruptionError);
}

TEST_CASE("non-3-channel or unknown encodings are format errors") {
  ByteWriter w;
  w.put_bytes(std::string_view("LVDS1\0", 6));
  w.put_u16(1);
  w.put_u32(1);
  w.put_u16(4);
  w.put_u16(4);
  w.put_u16(1);  // wrong channel count
  w.put_u8(0);
  w.put_u8(0);
  for (int i = 0; i < 4 * 4; ++i) w.put_u8(0);
  w.put_crc32();
  CHECK_THROWS_AS(deserialize_dataset(std::move(w).bytes(), "x"), FormatError);
}

TEST_CASE("datasets round trip through files, named by stem") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "attacknet_dataset_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "corpus_a.lvds").string();

  Dataset d = generate_synthetic(small_spec());
  save_packed_dataset(d, path);
  Dataset back = load_packed_dataset(path);
  CHECK(back.name == "corpus_a");
  CHECK(back.labels == d.labels);
  for (std::int64_t i = 0; i < d.samples.size(); ++i) {
    REQUIRE(back.samples[i] == d.samples[i]);
  }
  CHECK_THROWS_AS(load_packed_dataset((dir / "missing.lvds").string()),
                  IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest counts follow the labels") {
  SynthSpec s = small_spec();
  s.per_class = 2;
  Dataset d = generate_synthetic(s);
  CHECK(d.bonafide_count() == 2);
  CHECK(d.attacker_count() == 2);
}

TEST_CASE("dataset validation catches inconsistencies") {
  Dataset d = generate_synthetic(small_spec());
  Dataset short_labels = d;
  short_labels.labels.pop_back();
  CHECK_THROWS_AS(short_labels.validate(), InputError);

  Dataset bad_label = d;
  bad_label.labels[0] = 5;
  CHECK_THROWS_AS(bad_label.validate(), LabelError);

  Dataset bad_value = d;
  bad_value.samples[0] = 1.5;
  CHECK_THROWS_AS(bad_value.validate(), InputError);
}

TEST_CASE("batch_tensor slices rows and checks bounds") {
  Dataset d = generate_synthetic(small_spec());
  Tensor b = d.batch_tensor(3, 2);
  REQUIRE(b.dim(0) == 2);
  const std::int64_t per = d.height() * d.width() * d.channels();
  for (std::int64_t j = 0; j < 2 * per; ++j) {
    REQUIRE(b[j] == d.samples[3 * per + j]);
  }
  CHECK_THROWS_AS(d.batch_tensor(15, 2), InputError);
  CHECK_THROWS_AS(d.batch_tensor(-1, 1), InputError);
}

TEST_CASE("stratified split preserves class proportions and order") {
  SynthSpec s = small_spec();
  s.per_class = 50;
  Dataset d = generate_synthetic(s);
  SplitResult r = split_dataset(d, 0.2, 5);
  CHECK(r.train.count() == 80);
  CHECK(r.holdout.count() == 20);
  CHECK(r.train.bonafide_count() == 40);
  CHECK(r.train.attacker_count() == 40);
  CHECK(r.holdout.bonafide_count() == 10);
  CHECK(r.holdout.attacker_count() == 10);
  // Ascending original order means bonafide still precede attackers.
  for (std::int64_t i = 1; i < r.train.count(); ++i) {
    CHECK(r.train.labels[static_cast<std::size_t>(i - 1)] <=
          r.train.labels[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("split is an exact partition of the original samples") {
  Dataset d = generate_synthetic(small_spec());
  SplitResult r = split_dataset(d, 0.25, 11);
  CHECK(r.train.count() + r.holdout.count() == d.count());

  const std::int64_t per = d.height() * d.width() * d.channels();
  const auto key = [&](const Dataset& ds, std::int64_t i) {
    std::string k(reinterpret_cast<const char*>(ds.samples.data() + i * per),
                  sizeof(double) * static_cast<std::size_t>(per));
    k.push_back(static_cast<char>(ds.labels[static_cast<std::size_t>(i)]));
    return k;
  };
  std::multiset<std::string> original, parts;
  for (std::int64_t i = 0; i < d.count(); ++i) original.insert(key(d, i));
  for (std::int64_t i = 0; i < r.train.count(); ++i) {
    parts.insert(key(r.train, i));
  }
  for (std::int64_t i = 0; i < r.holdout.count(); ++i) {
    parts.insert(key(r.holdout, i));
  }
  CHECK(original == parts);
}

TEST_CASE("split is deterministic in the seed") {
  Dataset d = generate_synthetic(small_spec());
  SplitResult a = split_dataset(d, 0.25, 3);
  SplitResult b = split_dataset(d, 0.25, 3);
  SplitResult c = split_dataset(d, 0.25, 4);
  bool same = a.holdout.labels == b.holdout.labels;
  for (std::int64_t i = 0; same && i < a.holdout.samples.size(); ++i) {
    same = a.holdout.samples[i] == b.holdout.samples[i];
  }
  CHECK(same);
  bool differs = false;
  for (std::int64_t i = 0; i < a.holdout.samples.size(); ++i) {
    differs = differs || a.holdout.samples[i] != c.holdout.samples[i];
  }
  CHECK(differs);
}

TEST_CASE("degenerate splits are rejected") {
  SynthSpec s = small_spec();
  s.per_class = 1;
  Dataset two = generate_synthetic(s);
  CHECK_THROWS_AS(split_dataset(two, 0.99, 0), SplitError);
  CHECK_THROWS_AS(split_dataset(two, 0.5, 0), SplitError);

  Dataset d = generate_synthetic(small_spec());
  CHECK_THROWS_AS(split_dataset(d, 0.0, 0), SplitError);
  CHECK_THROWS_AS(split_dataset(d, 1.0, 0), SplitError);
  // 8 per class, fraction 0.01 -> llround(0.08) == 0 holdout members.
  CHECK_THROWS_AS(split_dataset(d, 0.01, 0), SplitError);
}
