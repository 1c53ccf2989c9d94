#include "fusestyle/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "fusestyle/error.hpp"
#include "fusestyle/rng.hpp"

namespace fusestyle {

namespace {

namespace fs = std::filesystem;

// Neutral content palette shared by every domain.
constexpr std::array<double, 3> kBackground = {0.30, 0.32, 0.34};
constexpr std::array<double, 3> kTint = {0.85, 0.70, 0.55};
// The structured texture scales with the noise amplitude so a fully neutral
// DomainSpec (zero noise) reduces the style transform to the identity.
constexpr double kTextureScale = 0.75;
constexpr double kPi = 3.14159265358979323846;

// Polynomial sine, basic IEEE arithmetic only: libm sin() is not guaranteed
// bit-identical across platforms, which would break shard reproducibility.
double det_sin(double x) {
  // Reduce to [-pi, pi], then fold into [-pi/2, pi/2].
  x -= std::floor((x + kPi) / (2.0 * kPi)) * (2.0 * kPi);
  if (x > kPi / 2.0) x = kPi - x;
  if (x < -kPi / 2.0) x = -kPi - x;
  const double x2 = x * x;
  return x * (1.0 + x2 * (-1.0 / 6.0 + x2 * (1.0 / 120.0 + x2 * (-1.0 / 5040.0))));
}

double det3(const std::array<double, 9>& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

uint64_t fnv1a64(const uint8_t* data, size_t n) {
  uint64_t h = 1469598103934665603ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t fnv1a64_str(const std::string& s) {
  return fnv1a64(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

std::string shard_name(const std::string& domain, const std::string& split) {
  return fmt::format("shard_{}_{}.bin", domain, split);
}

int64_t train_count(int64_t n) { return (n * 4) / 5; }

nlohmann::json spec_to_json(const DomainSpec& d) {
  nlohmann::json j;
  j["domain_id"] = d.domain_id;
  j["color_matrix"] = d.color_matrix;
  j["brightness_offset"] = d.brightness_offset;
  j["noise_amplitude"] = d.noise_amplitude;
  j["texture_frequency"] = d.texture_frequency;
  return j;
}

DomainSpec spec_from_json(const nlohmann::json& j) {
  DomainSpec d;
  d.domain_id = j.at("domain_id").get<std::string>();
  d.color_matrix = j.at("color_matrix").get<std::array<double, 9>>();
  d.brightness_offset = j.at("brightness_offset").get<std::array<double, 3>>();
  d.noise_amplitude = j.at("noise_amplitude").get<double>();
  d.texture_frequency = j.at("texture_frequency").get<double>();
  return d;
}

}  // namespace

void DomainSpec::validate() const {
  if (domain_id.empty() || domain_id.size() > 255) {
    throw ValidationError("domain_id must be 1..255 bytes");
  }
  if (std::abs(det3(color_matrix)) <= 1e-3) {
    throw ValidationError(fmt::format("domain {}: color matrix is near-singular (|det| <= 1e-3)", domain_id));
  }
  if (noise_amplitude < 0.0) throw ValidationError("noise_amplitude must be >= 0");
  if (!(texture_frequency > 0.0)) throw ValidationError("texture_frequency must be > 0");
}

std::vector<DomainSpec> default_domains(int64_t n) {
  static const std::vector<DomainSpec> presets = {
      {"D0", {1.40, 0.10, 0.00, 0.05, 1.05, 0.05, 0.00, 0.10, 0.60}, {-0.18, -0.08, -0.14}, 0.03, 5.0},
      {"D1", {0.60, 0.35, 0.05, 0.10, 1.15, 0.10, 0.05, 0.35, 0.70}, {0.08, 0.12, -0.04}, 0.06, 9.0},
      {"D2", {0.55, 0.05, 0.35, 0.00, 0.70, 0.40, 0.10, 0.15, 1.45}, {0.20, 0.12, 0.30}, 0.09, 14.0},
      {"D3", {0.90, 0.00, 0.20, 0.20, 0.80, 0.00, 0.00, 0.30, 0.90}, {-0.02, 0.08, -0.06}, 0.06, 7.0},
      {"D4", {1.10, 0.05, 0.05, 0.05, 0.75, 0.25, 0.25, 0.05, 0.75}, {0.06, -0.04, 0.10}, 0.08, 11.0},
      {"D5", {0.80, 0.25, 0.05, 0.00, 0.95, 0.15, 0.15, 0.00, 0.85}, {0.00, 0.02, 0.06}, 0.05, 17.0},
  };
  if (n < 1 || n > static_cast<int64_t>(presets.size())) {
    throw ValidationError(fmt::format("default_domains supports 1..{} domains, got {}", presets.size(), n));
  }
  return {presets.begin(), presets.begin() + n};
}

const DomainSpec& DatasetManifest::domain(const std::string& id) const {
  for (const auto& d : domains) {
    if (d.domain_id == id) return d;
  }
  throw ValidationError(fmt::format("unknown domain '{}'", id));
}

namespace {

std::vector<double> render_content_stream(int label, SeededRng& rng) {
  std::vector<double> g(static_cast<size_t>(kImageSize * kImageSize), 0.0);

  struct Blob {
    double cx, cy, r;
  };
  std::vector<Blob> blobs;
  if (label == 0) {
    // One large blob.
    blobs.push_back({12.0 + rng.uniform01() * 8.0, 12.0 + rng.uniform01() * 8.0, 7.5 + rng.uniform01() * 2.0});
  } else {
    // Several small blobs with roughly the same total mass.
    for (int i = 0; i < 4; ++i) {
      blobs.push_back({6.0 + rng.uniform01() * 20.0, 6.0 + rng.uniform01() * 20.0, 3.4 + rng.uniform01()});
    }
  }
  for (const Blob& b : blobs) {
    const double r2 = b.r * b.r;
    for (int64_t y = 0; y < kImageSize; ++y) {
      for (int64_t x = 0; x < kImageSize; ++x) {
        const double dx = static_cast<double>(x) - b.cx;
        const double dy = static_cast<double>(y) - b.cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 < r2) {
          const double t = 1.0 - d2 / r2;
          g[static_cast<size_t>(y * kImageSize + x)] += t * t;
        }
      }
    }
  }
  for (double& v : g) v = std::min(v, 1.0);
  return g;
}

}  // namespace

std::vector<double> render_content(int label, uint64_t sample_seed) {
  SeededRng rng(sample_seed);
  return render_content_stream(label, rng);
}

SampleRecord render_sample(int label, uint64_t sample_seed, const DomainSpec& spec) {
  spec.validate();
  SeededRng rng(sample_seed);
  const std::vector<double> g = render_content_stream(label, rng);
  const double phase = rng.uniform01() * 2.0 * kPi;
  const double tex_amp = kTextureScale * spec.noise_amplitude;
  const double inv_sqrt2 = 0.70710678118654752440;

  SampleRecord rec;
  rec.label = label;
  rec.domain_id = spec.domain_id;
  rec.sample_seed = sample_seed;

  std::array<double, 3> base;
  for (int64_t y = 0; y < kImageSize; ++y) {
    for (int64_t x = 0; x < kImageSize; ++x) {
      const double content = g[static_cast<size_t>(y * kImageSize + x)];
      for (int c = 0; c < 3; ++c) base[static_cast<size_t>(c)] = kBackground[static_cast<size_t>(c)] + content * (kTint[static_cast<size_t>(c)] - kBackground[static_cast<size_t>(c)]);
      const double tex =
          tex_amp * det_sin(2.0 * kPi * (static_cast<double>(x) + static_cast<double>(y)) * inv_sqrt2 / spec.texture_frequency + phase);
      for (int c = 0; c < 3; ++c) {
        double v = spec.color_matrix[static_cast<size_t>(3 * c)] * base[0] +
                   spec.color_matrix[static_cast<size_t>(3 * c + 1)] * base[1] +
                   spec.color_matrix[static_cast<size_t>(3 * c + 2)] * base[2];
        v += spec.brightness_offset[static_cast<size_t>(c)];
        v += tex;
        v += spec.noise_amplitude * (2.0 * rng.uniform01() - 1.0);
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        // Fixed-point quantization; floor and the scale are exact.
        const auto q = static_cast<int64_t>(std::floor(v * 255.0 + 0.5));
        rec.image[static_cast<size_t>((c * kImageSize + y) * kImageSize + x)] =
            static_cast<uint8_t>(std::clamp<int64_t>(q, 0, 255));
      }
    }
  }
  return rec;
}

uint64_t sample_seed_for(uint64_t dataset_seed, const std::string& domain_id, const std::string& split, int label,
                         int64_t index) {
  uint64_t h = splitmix64(dataset_seed);
  h = splitmix64(h ^ fnv1a64_str(domain_id));
  h = splitmix64(h ^ fnv1a64_str(split));
  h = splitmix64(h ^ static_cast<uint64_t>(label));
  h = splitmix64(h ^ static_cast<uint64_t>(index));
  return h;
}

std::string fnv1a64_hex(const std::vector<uint8_t>& bytes) {
  return fmt::format("{:016x}", fnv1a64(bytes.data(), bytes.size()));
}

namespace {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open {}", path));
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return bytes;
}

void append_record(std::vector<uint8_t>& out, const SampleRecord& rec) {
  out.push_back(static_cast<uint8_t>(rec.label));
  out.push_back(static_cast<uint8_t>(rec.domain_id.size()));
  out.insert(out.end(), rec.domain_id.begin(), rec.domain_id.end());
  out.insert(out.end(), rec.image.begin(), rec.image.end());
}

}  // namespace

DatasetManifest generate_dataset(const std::vector<DomainSpec>& specs, int64_t n_per_class_per_domain,
                                 uint64_t seed, const std::string& out_dir) {
  if (specs.empty()) throw ValidationError("generate_dataset: need at least one domain");
  if (n_per_class_per_domain < 1) throw ValidationError("generate_dataset: n_per_class_per_domain must be >= 1");
  for (size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    for (size_t j = i + 1; j < specs.size(); ++j) {
      if (specs[i].domain_id == specs[j].domain_id) {
        throw ValidationError(fmt::format("duplicate domain_id '{}'", specs[i].domain_id));
      }
    }
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir, ec.message()));

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.n_per_class_per_domain = n_per_class_per_domain;
  manifest.domains = specs;

  const int64_t n_train = train_count(n_per_class_per_domain);
  const int64_t n_test = n_per_class_per_domain - n_train;

  for (const DomainSpec& spec : specs) {
    for (const std::string split : {"train", "test"}) {
      const int64_t per_class = split == std::string("train") ? n_train : n_test;
      std::vector<uint8_t> bytes;
      bytes.reserve(static_cast<size_t>(2 * per_class * (kImageBytes + 16)));
      for (int label = 0; label < 2; ++label) {
        for (int64_t i = 0; i < per_class; ++i) {
          const uint64_t s = sample_seed_for(seed, spec.domain_id, split, label, i);
          append_record(bytes, render_sample(label, s, spec));
        }
      }
      const std::string name = shard_name(spec.domain_id, split);
      const std::string path = (fs::path(out_dir) / name).string();
      std::ofstream os(path, std::ios::binary);
      if (!os) throw IoError(fmt::format("cannot write {}", path));
      os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!os) throw IoError(fmt::format("write failed: {}", path));
      manifest.checksums[name] = fnv1a64_hex(bytes);
      manifest.counts[spec.domain_id][split] = {per_class, per_class};
    }
  }

  nlohmann::json j;
  j["format_version"] = manifest.format_version;
  j["seed"] = manifest.seed;
  j["n_per_class_per_domain"] = manifest.n_per_class_per_domain;
  j["domains"] = nlohmann::json::array();
  for (const auto& d : manifest.domains) j["domains"].push_back(spec_to_json(d));
  j["checksums"] = manifest.checksums;
  for (const auto& [dom, splits] : manifest.counts) {
    for (const auto& [split, c] : splits) {
      j["counts"][dom][split] = {{"0", c[0]}, {"1", c[1]}};
    }
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  std::ofstream os(manifest_path);
  if (!os) throw IoError(fmt::format("cannot write {}", manifest_path));
  os << j.dump(2) << "\n";
  if (!os) throw IoError(fmt::format("write failed: {}", manifest_path));
  return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open {}", path));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(fmt::format("bad manifest {}: {}", path, e.what()));
  }
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.n_per_class_per_domain = j.at("n_per_class_per_domain").get<int64_t>();
  for (const auto& d : j.at("domains")) m.domains.push_back(spec_from_json(d));
  m.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
  for (const auto& [dom, splits] : j.at("counts").items()) {
    for (const auto& [split, c] : splits.items()) {
      m.counts[dom][split] = {c.at("0").get<int64_t>(), c.at("1").get<int64_t>()};
    }
  }
  return m;
}

std::string manifest_checksum(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.txt").string();
  return fnv1a64_hex(read_file_bytes(path));
}

std::vector<LoadedSample> load_shard(const std::string& dir, const DatasetManifest& manifest,
                                     const std::string& domain, const std::string& split) {
  const std::string name = shard_name(domain, split);
  const auto it = manifest.checksums.find(name);
  if (it == manifest.checksums.end()) throw ValidationError(fmt::format("shard {} not in manifest", name));
  const std::string path = (fs::path(dir) / name).string();
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (fnv1a64_hex(bytes) != it->second) {
    throw CorruptionError(fmt::format("checksum mismatch for {}", path));
  }

  std::vector<LoadedSample> out;
  size_t pos = 0;
  int64_t ordinal = 0;
  while (pos < bytes.size()) {
    if (pos + 2 > bytes.size()) throw CorruptionError(fmt::format("truncated record in {}", path));
    LoadedSample s;
    s.label = bytes[pos++];
    const size_t id_len = bytes[pos++];
    if (pos + id_len + kImageBytes > bytes.size()) throw CorruptionError(fmt::format("truncated record in {}", path));
    s.domain_id.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + id_len));
    pos += id_len;
    s.pixels.resize(static_cast<size_t>(kImageBytes));
    for (int64_t i = 0; i < kImageBytes; ++i) {
      s.pixels[static_cast<size_t>(i)] = static_cast<double>(bytes[pos + static_cast<size_t>(i)]) / 255.0;
    }
    pos += static_cast<size_t>(kImageBytes);
    s.sample_id = fmt::format("{}:{}:{}", domain, split, ordinal++);
    out.push_back(std::move(s));
  }
  return out;
}

LeaveOneOutSplit leave_one_out_splits(const DatasetManifest& manifest, const std::string& held_out) {
  manifest.domain(held_out);  // validates existence
  if (manifest.domains.size() < 2) {
    throw ValidationError("leave-one-domain-out needs at least 2 domains in the dataset");
  }
  LeaveOneOutSplit split;
  split.held_out = held_out;
  for (const auto& d : manifest.domains) {
    if (d.domain_id != held_out) split.train.push_back({d.domain_id, "train"});
    split.test_per_domain.push_back({d.domain_id, "test"});
  }
  return split;
}

BatchStream::BatchStream(std::vector<const LoadedSample*> samples, int64_t batch_size, uint64_t shuffle_seed)
    : samples_(std::move(samples)), batch_size_(batch_size) {
  if (batch_size_ < 1) throw ValidationError("batch_size must be >= 1");
  SeededRng rng(shuffle_seed);
  order_ = rng.permutation(static_cast<int64_t>(samples_.size()));
}

std::optional<Batch> BatchStream::next() {
  const auto total = static_cast<int64_t>(order_.size());
  if (cursor_ >= total) return std::nullopt;
  const int64_t b = std::min(batch_size_, total - cursor_);
  Batch batch;
  std::vector<double> values(static_cast<size_t>(b * kImageBytes));
  for (int64_t i = 0; i < b; ++i) {
    const LoadedSample* s = samples_[static_cast<size_t>(order_[static_cast<size_t>(cursor_ + i)])];
    std::copy(s->pixels.begin(), s->pixels.end(), values.begin() + i * kImageBytes);
    batch.labels.push_back(s->label);
    batch.domain_ids.push_back(s->domain_id);
    batch.sample_ids.push_back(s->sample_id);
  }
  batch.images = Tensor(Shape{b, kImageChannels, kImageSize, kImageSize}, std::move(values));
  cursor_ += b;
  return batch;
}

std::vector<LoadedSample> load_samples(const std::string& dir, const DatasetManifest& manifest,
                                       const std::vector<ShardKey>& keys) {
  std::vector<LoadedSample> out;
  for (const auto& key : keys) {
    auto shard = load_shard(dir, manifest, key.domain, key.split);
    out.insert(out.end(), std::make_move_iterator(shard.begin()), std::make_move_iterator(shard.end()));
  }
  return out;
}

BatchStream load_batches(const std::vector<LoadedSample>& samples, int64_t batch_size, uint64_t shuffle_seed) {
  std::vector<const LoadedSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return BatchStream(std::move(ptrs), batch_size, shuffle_seed);
}

}  // namespace fusestyle
