#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fusestyle/tensor.hpp"

namespace fusestyle {

inline constexpr int64_t kImageSize = 32;
inline constexpr int64_t kImageChannels = 3;
inline constexpr int64_t kImageBytes = kImageChannels * kImageSize * kImageSize;

// A synthetic acquisition domain: a fixed style transform applied to the
// rendered class content. Class geometry is shared across domains, so the
// label is invariant to every domain's transform by construction.
struct DomainSpec {
  std::string domain_id;
  std::array<double, 9> color_matrix;        // row-major 3x3 channel mixing
  std::array<double, 3> brightness_offset;   // per output channel
  double noise_amplitude = 0.0;              // uniform pixel noise, [0,1] units
  double texture_frequency = 8.0;            // background sinusoid period, pixels

  void validate() const;  // requires |det(color_matrix)| > 1e-3
};

// Built-in domain presets D0..D5.
std::vector<DomainSpec> default_domains(int64_t n);

// One labeled image. Regenerating with the same sample_seed reproduces the
// bytes exactly on any platform.
struct SampleRecord {
  std::array<uint8_t, kImageBytes> image;  // channel-planar, row-major
  int label = 0;
  std::string domain_id;
  uint64_t sample_seed = 0;
};

struct DatasetManifest {
  int format_version = 1;
  uint64_t seed = 0;
  int64_t n_per_class_per_domain = 0;
  std::vector<DomainSpec> domains;
  // shard file name -> fnv1a-64 checksum (16 hex digits)
  std::map<std::string, std::string> checksums;
  // domain -> split -> {count label 0, count label 1}
  std::map<std::string, std::map<std::string, std::array<int64_t, 2>>> counts;

  const DomainSpec& domain(const std::string& id) const;
};

// Grayscale class content in [0,1] (kImageSize^2 values): label 0 renders
// one large blob, label 1 several small ones, style-free.
std::vector<double> render_content(int label, uint64_t sample_seed);

// Content + domain style transform + quantization to bytes.
SampleRecord render_sample(int label, uint64_t sample_seed, const DomainSpec& spec);

// Per-sample seed derivation (pure function of the arguments).
uint64_t sample_seed_for(uint64_t dataset_seed, const std::string& domain_id, const std::string& split, int label,
                         int64_t index);

// FNV-1a 64-bit checksum, rendered as 16 hex digits.
std::string fnv1a64_hex(const std::vector<uint8_t>& bytes);

// Writes shard_<domain>_<split>.bin files plus manifest.txt (canonical
// JSON, sorted keys). Train/test split is floor(0.8 n) / remainder per
// class per domain. Fully deterministic from (specs, n, seed).
DatasetManifest generate_dataset(const std::vector<DomainSpec>& specs, int64_t n_per_class_per_domain,
                                 uint64_t seed, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);
std::string manifest_checksum(const std::string& dir);

struct LoadedSample {
  std::vector<double> pixels;  // kImageBytes values, bytes / 255
  int label = 0;
  std::string domain_id;
  std::string sample_id;  // "<domain>:<split>:<ordinal>"
};

// Reads one shard, verifying its checksum against the manifest.
std::vector<LoadedSample> load_shard(const std::string& dir, const DatasetManifest& manifest,
                                     const std::string& domain, const std::string& split);

struct ShardKey {
  std::string domain;
  std::string split;
};

struct LeaveOneOutSplit {
  std::string held_out;
  std::vector<ShardKey> train;               // train shards of the seen domains
  std::vector<ShardKey> test_per_domain;     // one test shard per domain, seen and unseen
};

LeaveOneOutSplit leave_one_out_splits(const DatasetManifest& manifest, const std::string& held_out);

struct Batch {
  Tensor images;  // [B,3,32,32] in [0,1]
  std::vector<int> labels;
  std::vector<std::string> domain_ids;
  std::vector<std::string> sample_ids;
};

// One epoch over the named shards in a shuffle_seed-determined order; the
// last partial batch is retained.
class BatchStream {
 public:
  BatchStream(std::vector<const LoadedSample*> samples, int64_t batch_size, uint64_t shuffle_seed);

  std::optional<Batch> next();
  int64_t size() const { return static_cast<int64_t>(order_.size()); }
  void rewind() { cursor_ = 0; }

 private:
  std::vector<const LoadedSample*> samples_;
  std::vector<int64_t> order_;
  int64_t batch_size_;
  int64_t cursor_ = 0;
};

// Loads and concatenates the requested shards, then streams batches.
std::vector<LoadedSample> load_samples(const std::string& dir, const DatasetManifest& manifest,
                                       const std::vector<ShardKey>& keys);
BatchStream load_batches(const std::vector<LoadedSample>& samples, int64_t batch_size, uint64_t shuffle_seed);

}  // namespace fusestyle
