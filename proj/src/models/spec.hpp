#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace infusion::models {

enum class Arch { mlp, res_cnn, tiny_decoder };

const char* arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct ModelSpec {
  Arch arch = Arch::mlp;

  // mlp: layer widths including input and output, e.g. {2, 8, 2}.
  std::vector<int> mlp_dims;

  // res-cnn: image geometry, one conv stage per entry of `channels` (each stage
  // is stem conv + one residual block + 2x2 average pool), then a linear head.
  int in_channels = 3;
  int height = 32;
  int width = 32;
  std::vector<int> channels;
  bool residual = true;

  int num_classes = 10;

  // tiny-decoder
  int vocab = 0;
  int context = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;

  // Final layer starts at zero (uniform predictions before training).
  bool zero_init_head = false;

  static ModelSpec paper_res_cnn();            // 32 -> 64 -> 128 channels on 32x32x3
  static ModelSpec paper_tiny_decoder(int vocab, int context);  // 4 layers, 16 heads, 512 dims
  static ModelSpec desk_tiny_decoder(int vocab, int context);   // 2 layers, 4 heads, 64 dims

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  bool checkpoint_every_epoch = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace infusion::models
