#include "models/spec.hpp"

#include "common/error.hpp"

namespace infusion::models {

const char* arch_name(Arch arch) {
  switch (arch) {
    case Arch::mlp: return "mlp";
    case Arch::res_cnn: return "res-cnn";
    case Arch::tiny_decoder: return "tiny-decoder";
  }
  return "?";
}

Arch parse_arch(const std::string& name) {
  if (name == "mlp") return Arch::mlp;
  if (name == "res-cnn") return Arch::res_cnn;
  if (name == "tiny-decoder") return Arch::tiny_decoder;
  fail(ErrorCode::config, "unknown architecture '" + name + "' (expected mlp, res-cnn or tiny-decoder)");
}

ModelSpec ModelSpec::paper_res_cnn() {
  ModelSpec s;
  s.arch = Arch::res_cnn;
  s.channels = {32, 64, 128};
  return s;
}

ModelSpec ModelSpec::paper_tiny_decoder(int vocab, int context) {
  ModelSpec s;
  s.arch = Arch::tiny_decoder;
  s.vocab = vocab;
  s.context = context;
  s.n_layers = 4;
  s.n_heads = 16;
  s.d_model = 512;
  s.d_ff = 2048;
  return s;
}

ModelSpec ModelSpec::desk_tiny_decoder(int vocab, int context) {
  ModelSpec s;
  s.arch = Arch::tiny_decoder;
  s.vocab = vocab;
  s.context = context;
  s.n_layers = 2;
  s.n_heads = 4;
  s.d_model = 64;
  s.d_ff = 256;
  return s;
}

void ModelSpec::validate() const {
  switch (arch) {
    case Arch::mlp:
      require(mlp_dims.size() >= 2, ErrorCode::config, "mlp needs at least input and output widths");
      for (int d : mlp_dims) require(d > 0, ErrorCode::config, "mlp widths must be positive");
      break;
    case Arch::res_cnn: {
      require(!channels.empty(), ErrorCode::config, "res-cnn needs at least one channel stage");
      require(in_channels > 0 && num_classes > 1, ErrorCode::config, "res-cnn needs channels and >= 2 classes");
      const int div = 1 << channels.size();
      require(height % div == 0 && width % div == 0, ErrorCode::config,
              "res-cnn image size must be divisible by 2^stages = " + std::to_string(div));
      for (int c : channels) require(c > 0, ErrorCode::config, "res-cnn channel counts must be positive");
      break;
    }
    case Arch::tiny_decoder:
      require(vocab > 1 && context > 1, ErrorCode::config, "tiny-decoder needs vocab > 1 and context > 1");
      require(d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0, ErrorCode::config,
              "tiny-decoder dimensions must be positive");
      require(d_model % n_heads == 0, ErrorCode::config, "d_model must be divisible by n_heads");
      break;
  }
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j;
  j["arch"] = arch_name(arch);
  switch (arch) {
    case Arch::mlp:
      j["mlp_dims"] = mlp_dims;
      break;
    case Arch::res_cnn:
      j["in_channels"] = in_channels;
      j["height"] = height;
      j["width"] = width;
      j["channels"] = channels;
      j["residual"] = residual;
      j["num_classes"] = num_classes;
      break;
    case Arch::tiny_decoder:
      j["vocab"] = vocab;
      j["context"] = context;
      j["d_model"] = d_model;
      j["n_layers"] = n_layers;
      j["n_heads"] = n_heads;
      j["d_ff"] = d_ff;
      break;
  }
  j["zero_init_head"] = zero_init_head;
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  switch (s.arch) {
    case Arch::mlp:
      s.mlp_dims = j.at("mlp_dims").get<std::vector<int>>();
      s.num_classes = s.mlp_dims.back();
      break;
    case Arch::res_cnn:
      s.in_channels = j.at("in_channels");
      s.height = j.at("height");
      s.width = j.at("width");
      s.channels = j.at("channels").get<std::vector<int>>();
      s.residual = j.value("residual", true);
      s.num_classes = j.at("num_classes");
      break;
    case Arch::tiny_decoder:
      s.vocab = j.at("vocab");
      s.context = j.at("context");
      s.d_model = j.at("d_model");
      s.n_layers = j.at("n_layers");
      s.n_heads = j.at("n_heads");
      s.d_ff = j.at("d_ff");
      break;
  }
  s.zero_init_head = j.value("zero_init_head", false);
  return s;
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::config, "learning rate must be > 0");
  require(batch_size >= 1, ErrorCode::config, "batch size must be >= 1");
  require(epochs >= 0, ErrorCode::config, "epochs must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::config, "momentum must be in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"optimizer", optimizer == OptimizerKind::sgd ? "sgd" : "adam"},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"checkpoint_every_epoch", checkpoint_every_epoch}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  const std::string opt = j.at("optimizer");
  if (opt == "sgd")
    c.optimizer = OptimizerKind::sgd;
  else if (opt == "adam")
    c.optimizer = OptimizerKind::adam;
  else
    fail(ErrorCode::config, "unknown optimizer '" + opt + "'");
  c.learning_rate = j.at("learning_rate");
  c.momentum = j.at("momentum");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.adam_eps = j.at("adam_eps");
  c.weight_decay = j.at("weight_decay");
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.seed = j.at("seed");
  c.checkpoint_every_epoch = j.at("checkpoint_every_epoch");
  return c;
}

}  // namespace infusion::models
