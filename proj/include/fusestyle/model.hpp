#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fusestyle/layer.hpp"
#include "fusestyle/tensor.hpp"

namespace fusestyle {

// Small CNN binary classifier: a chain of conv3x3 -> relu -> avgpool2
// blocks with style-mixing layers wired after the designated blocks, then
// flatten -> dense -> single logit.
struct ModelConfig {
  int64_t in_channels = 3;
  int64_t height = 32;
  int64_t width = 32;
  std::vector<int64_t> block_channels = {16, 32, 64, 64};
  std::set<int64_t> mix_points = {1, 4};  // 1-based block index; mixing runs after the block
  FuseStyleConfig fusestyle;
  uint64_t init_seed = 0;

  void validate() const;
  // Closed-form parameter count implied by the layer dimensions.
  int64_t parameter_count() const;
  int64_t flattened_size() const;
};

struct ConvBlock {
  Tensor kernels;  // [F,C,3,3]
  Tensor bias;     // [F]
};

struct Model {
  ModelConfig config;
  std::vector<ConvBlock> blocks;
  Tensor fc_weight;  // [1, flattened]
  Tensor fc_bias;    // [1]

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  int64_t parameter_count() const;
  void zero_grad();
};

struct ForwardResult {
  Tensor logits;  // [B,1]
  std::vector<MixDecision> decisions;  // one per mix point, in block order
};

// Deterministic initialization: every weight and bias is uniform in
// +-sqrt(1/fan_in), drawn from a stream seeded by config.init_seed.
Model build_model(const ModelConfig& config);

// Train mode consults each mixing layer's gate independently (in block
// order) from `rng`; Eval mode never touches rng and is deterministic.
ForwardResult forward(Model& model, const Tensor& batch, LayerMode mode, SeededRng& rng);

// Replays frozen decisions instead of sampling; decisions must hold one
// entry per mix point. Used for gradient checking and recomposition tests.
ForwardResult forward_with_decisions(Model& model, const Tensor& batch, const std::vector<MixDecision>& decisions);

// label = 1 iff logit >= 0 (boundary assigned to the positive class).
std::vector<int> predict(Model& model, const Tensor& batch);

// Versioned binary checkpoint: magic "FSMODEL1", a canonical config line,
// then parameters as little-endian 64-bit floats in declaration order.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace fusestyle
