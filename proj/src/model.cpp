#include "fusestyle/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "fusestyle/error.hpp"
#include "fusestyle/ops.hpp"

namespace fusestyle {

namespace {

constexpr char kMagic[] = "FSMODEL1";

Tensor init_uniform(Shape shape, double bound, SeededRng& rng) {
  std::vector<double> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = (rng.uniform01() * 2.0 - 1.0) * bound;
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

void ModelConfig::validate() const {
  if (block_channels.empty()) throw ValidationError("model: block_channels must be non-empty");
  const auto n_blocks = static_cast<int64_t>(block_channels.size());
  for (int64_t p : mix_points) {
    if (p < 1 || p > n_blocks) {
      throw ValidationError(fmt::format("model: mix point {} outside blocks 1..{}", p, n_blocks));
    }
  }
  int64_t h = height, w = width;
  for (int64_t i = 0; i < n_blocks; ++i) {
    if (h % 2 != 0 || w % 2 != 0) {
      throw ValidationError(fmt::format("model: spatial extent {}x{} not divisible by 2 at block {}", h, w, i + 1));
    }
    h /= 2;
    w /= 2;
  }
  fusestyle.validate();
}

int64_t ModelConfig::flattened_size() const {
  const auto n_blocks = static_cast<int64_t>(block_channels.size());
  int64_t h = height, w = width;
  for (int64_t i = 0; i < n_blocks; ++i) {
    h /= 2;
    w /= 2;
  }
  return block_channels.back() * h * w;
}

int64_t ModelConfig::parameter_count() const {
  int64_t count = 0;
  int64_t c = in_channels;
  for (int64_t f : block_channels) {
    count += f * c * 9 + f;
    c = f;
  }
  count += flattened_size() + 1;
  return count;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& b : blocks) {
    out.push_back(&b.kernels);
    out.push_back(&b.bias);
  }
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& b : blocks) {
    out.push_back(&b.kernels);
    out.push_back(&b.bias);
  }
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

void Model::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

Model build_model(const ModelConfig& config) {
  config.validate();
  Model model;
  model.config = config;
  SeededRng rng(config.init_seed);
  int64_t c = config.in_channels;
  for (int64_t f : config.block_channels) {
    const double bound = std::sqrt(1.0 / static_cast<double>(c * 9));
    ConvBlock block;
    block.kernels = init_uniform(Shape{f, c, 3, 3}, bound, rng);
    block.bias = init_uniform(Shape{f}, bound, rng);
    model.blocks.push_back(std::move(block));
    c = f;
  }
  const int64_t flat = config.flattened_size();
  const double bound = std::sqrt(1.0 / static_cast<double>(flat));
  model.fc_weight = init_uniform(Shape{1, flat}, bound, rng);
  model.fc_bias = init_uniform(Shape{1}, bound, rng);
  return model;
}

namespace {

ForwardResult run_forward(Model& model, const Tensor& batch, LayerMode mode, SeededRng* rng,
                          const std::vector<MixDecision>* frozen) {
  const ModelConfig& cfg = model.config;
  if (batch.shape().rank() != 4 || batch.shape()[1] != cfg.in_channels || batch.shape()[2] != cfg.height ||
      batch.shape()[3] != cfg.width) {
    throw DimensionError(fmt::format("model: batch shape {} does not match config [*,{},{},{}]",
                                     batch.shape().to_string(), cfg.in_channels, cfg.height, cfg.width));
  }
  ForwardResult result;
  Tensor x = batch;
  size_t frozen_used = 0;
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    x = conv2d(x, model.blocks[i].kernels, model.blocks[i].bias, 1, 1);
    x = relu(x);
    x = avgpool2d(x, 2);
    if (cfg.mix_points.count(static_cast<int64_t>(i) + 1) > 0) {
      FuseStyleConfig layer_cfg = cfg.fusestyle;
      layer_cfg.mode = mode;
      if (frozen) {
        if (frozen_used >= frozen->size()) {
          throw ContractError(fmt::format("model: {} frozen decisions for {} mix points", frozen->size(),
                                          cfg.mix_points.size()));
        }
        const MixDecision& d = (*frozen)[frozen_used++];
        x = apply_mix(x, layer_cfg, d);
        result.decisions.push_back(d);
      } else {
        auto [mixed, decision] = fusestyle_forward(x, layer_cfg, *rng);
        x = mixed;
        result.decisions.push_back(std::move(decision));
      }
    }
  }
  x = flatten2d(x);
  result.logits = dense(x, model.fc_weight, model.fc_bias);
  return result;
}

}  // namespace

ForwardResult forward(Model& model, const Tensor& batch, LayerMode mode, SeededRng& rng) {
  return run_forward(model, batch, mode, &rng, nullptr);
}

ForwardResult forward_with_decisions(Model& model, const Tensor& batch, const std::vector<MixDecision>& decisions) {
  if (decisions.size() != model.config.mix_points.size()) {
    throw ContractError(fmt::format("model: {} frozen decisions for {} mix points", decisions.size(),
                                    model.config.mix_points.size()));
  }
  return run_forward(model, batch, LayerMode::Train, nullptr, &decisions);
}

std::vector<int> predict(Model& model, const Tensor& batch) {
  SeededRng unused(0);
  ForwardResult r = forward(model, batch, LayerMode::Eval, unused);
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(r.logits.shape()[0]));
  for (double z : r.logits.values()) labels.push_back(z >= 0.0 ? 1 : 0);
  return labels;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["in_channels"] = c.in_channels;
  j["height"] = c.height;
  j["width"] = c.width;
  j["block_channels"] = c.block_channels;
  j["mix_points"] = std::vector<int64_t>(c.mix_points.begin(), c.mix_points.end());
  j["init_seed"] = c.init_seed;
  j["fusestyle"] = {{"alpha", c.fusestyle.alpha},
                    {"p_apply", c.fusestyle.p_apply},
                    {"epsilon", c.fusestyle.epsilon},
                    {"strategy", to_string(c.fusestyle.strategy)},
                    {"detach_reference_stats", c.fusestyle.detach_reference_stats}};
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.in_channels = j.at("in_channels").get<int64_t>();
  c.height = j.at("height").get<int64_t>();
  c.width = j.at("width").get<int64_t>();
  c.block_channels = j.at("block_channels").get<std::vector<int64_t>>();
  auto points = j.at("mix_points").get<std::vector<int64_t>>();
  c.mix_points = std::set<int64_t>(points.begin(), points.end());
  c.init_seed = j.at("init_seed").get<uint64_t>();
  const auto& fs = j.at("fusestyle");
  c.fusestyle.alpha = fs.at("alpha").get<double>();
  c.fusestyle.p_apply = fs.at("p_apply").get<double>();
  c.fusestyle.epsilon = fs.at("epsilon").get<double>();
  c.fusestyle.strategy = parse_strategy(fs.at("strategy").get<std::string>());
  c.fusestyle.detach_reference_stats = fs.at("detach_reference_stats").get<bool>();
  return c;
}

void write_le_double(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

double read_le_double(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open checkpoint for writing: {}", path));
  os << kMagic << "\n";
  os << config_to_json(model.config).dump() << "\n";
  for (const Tensor* p : model.parameters()) {
    for (double v : p->values()) write_le_double(os, v);
  }
  if (!os) throw IoError(fmt::format("checkpoint write failed: {}", path));
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open checkpoint: {}", path));
  std::string magic, config_line;
  std::getline(is, magic);
  if (magic != kMagic) throw CorruptionError(fmt::format("bad checkpoint magic '{}' in {}", magic, path));
  std::getline(is, config_line);
  ModelConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(config_line));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(fmt::format("bad checkpoint config in {}: {}", path, e.what()));
  }
  Model model = build_model(config);
  for (Tensor* p : model.parameters()) {
    for (double& v : p->values()) v = read_le_double(is);
  }
  if (!is) throw CorruptionError(fmt::format("checkpoint truncated: {}", path));
  return model;
}

}  // namespace fusestyle
