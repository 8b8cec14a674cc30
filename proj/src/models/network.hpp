#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "models/spec.hpp"
#include "tensor/autodiff.hpp"

namespace infusion::models {

enum class ParamInit { fan_in_uniform, ones, zeros };

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  ParamInit init = ParamInit::fan_in_uniform;
  std::size_t fan_in = 1;
  std::size_t size() const { return shape_size(shape); }
};

enum class LayerKind { linear, conv, embedding };

// A layer whose weight gradient factorizes as (output grads)^T (inputs), i.e.
// every layer the curvature module approximates with Kronecker factors.
struct LinearLayer {
  std::string name;
  LayerKind kind = LayerKind::linear;
  int weight = -1;  // index into params(); weight shape [d_out, d_in]
  int bias = -1;    // index into params(), or -1
  std::size_t d_in = 0;
  std::size_t d_out = 0;
};

struct ExcludedParam {
  int param = -1;
  std::string reason;
};

// Input rows and output rows of one LinearLayer in a forward pass.
struct LayerTap {
  std::size_t layer = 0;
  ad::Var input;   // [rows, d_in]
  ad::Var output;  // [rows, d_out]
};

struct ForwardPass {
  ad::Var logits;  // [batch, classes] or [batch*seq, vocab]
  std::vector<LayerTap> taps;
};

struct NetInput {
  ad::Var x;          // features [B, ...] or token distribution [B*T, V]
  std::size_t batch = 0;
  std::size_t seq = 0;
  ad::Var embed_offset;  // optional [B*T, d_model]
};

class Network {
 public:
  explicit Network(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Network() = default;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<ParamInfo>& params() const { return params_; }
  std::size_t param_count() const { return param_count_; }
  const std::vector<LinearLayer>& linear_layers() const { return layers_; }
  const std::vector<ExcludedParam>& excluded() const { return excluded_; }
  std::size_t output_dim() const;

  std::vector<double> init_params(std::uint64_t seed) const;

  virtual ForwardPass forward(ad::Tape& tape, std::span<const ad::Var> params, const NetInput& in) const = 0;

 protected:
  int add_param(std::string name, Shape shape, std::size_t fan_in, ParamInit init = ParamInit::fan_in_uniform);
  void add_linear(std::string name, LayerKind kind, int weight, int bias);
  void exclude(int param, std::string reason) { excluded_.push_back({param, std::move(reason)}); }

  // Index of the output layer's weight (zeroed when spec.zero_init_head).
  int head_weight_ = -1;
  int head_bias_ = -1;

 private:
  ModelSpec spec_;
  std::vector<ParamInfo> params_;
  std::vector<LinearLayer> layers_;
  std::vector<ExcludedParam> excluded_;
  std::size_t param_count_ = 0;
};

std::unique_ptr<Network> make_network(const ModelSpec& spec);

}  // namespace infusion::models
