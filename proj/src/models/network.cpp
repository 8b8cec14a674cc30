#include "models/network.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace infusion::models {

using ad::Var;

std::size_t Network::output_dim() const {
  return spec_.arch == Arch::tiny_decoder ? static_cast<std::size_t>(spec_.vocab)
                                          : static_cast<std::size_t>(spec_.num_classes);
}

int Network::add_param(std::string name, Shape shape, std::size_t fan_in, ParamInit init) {
  ParamInfo p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.offset = param_count_;
  p.fan_in = fan_in;
  p.init = init;
  param_count_ += p.size();
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size() - 1);
}

void Network::add_linear(std::string name, LayerKind kind, int weight, int bias) {
  LinearLayer l;
  l.name = std::move(name);
  l.kind = kind;
  l.weight = weight;
  l.bias = bias;
  l.d_out = params_[weight].shape[0];
  l.d_in = params_[weight].shape[1];
  layers_.push_back(std::move(l));
}

std::vector<double> Network::init_params(std::uint64_t seed) const {
  std::vector<double> flat(param_count_, 0.0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const ParamInfo& p = params_[i];
    const bool zero_head = spec_.zero_init_head &&
                           (static_cast<int>(i) == head_weight_ || static_cast<int>(i) == head_bias_);
    double* dst = flat.data() + p.offset;
    if (zero_head || p.init == ParamInit::zeros) continue;
    if (p.init == ParamInit::ones) {
      for (std::size_t k = 0; k < p.size(); ++k) dst[k] = 1.0;
      continue;
    }
    Rng rng = make_rng(seed, {0x1417, i});
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in));
    for (std::size_t k = 0; k < p.size(); ++k) dst[k] = uniform(rng, -bound, bound);
  }
  return flat;
}

namespace {

// ---------------------------------------------------------------------------
class Mlp final : public Network {
 public:
  explicit Mlp(const ModelSpec& spec) : Network(spec) {
    const auto& d = spec.mlp_dims;
    for (std::size_t l = 0; l + 1 < d.size(); ++l) {
      const auto in = static_cast<std::size_t>(d[l]), out = static_cast<std::size_t>(d[l + 1]);
      const std::string name = "fc" + std::to_string(l);
      int w = add_param(name + ".weight", {out, in}, in);
      int b = add_param(name + ".bias", {out}, in);
      add_linear(name, LayerKind::linear, w, b);
      head_weight_ = w;
      head_bias_ = b;
    }
  }

  ForwardPass forward(ad::Tape&, std::span<const Var> p, const NetInput& in) const override {
    ForwardPass fp;
    Var h = in.x;
    if (h.shape().size() != 2 || h.shape()[0] != in.batch)
      h = ad::reshape(h, {in.batch, h.value().size() / in.batch});
    const auto& layers = linear_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Var out = ad::linear(h, p[layers[l].weight], p[layers[l].bias]);
      fp.taps.push_back({l, h, out});
      h = (l + 1 < layers.size()) ? ad::relu(out) : out;
    }
    fp.logits = h;
    return fp;
  }
};

// ---------------------------------------------------------------------------
class ResCnn final : public Network {
 public:
  explicit ResCnn(const ModelSpec& spec) : Network(spec) {
    std::size_t cin = static_cast<std::size_t>(spec.in_channels);
    for (std::size_t s = 0; s < spec.channels.size(); ++s) {
      const auto c = static_cast<std::size_t>(spec.channels[s]);
      conv("stage" + std::to_string(s) + ".stem", cin, c);
      conv("stage" + std::to_string(s) + ".block.conv1", c, c);
      conv("stage" + std::to_string(s) + ".block.conv2", c, c);
      cin = c;
    }
    const std::size_t hw = static_cast<std::size_t>(spec.height * spec.width) >> (2 * spec.channels.size());
    const std::size_t feat = hw * cin;
    const auto classes = static_cast<std::size_t>(spec.num_classes);
    int w = add_param("head.weight", {classes, feat}, feat);
    int b = add_param("head.bias", {classes}, feat);
    add_linear("head", LayerKind::linear, w, b);
    head_weight_ = w;
    head_bias_ = b;
  }

  ForwardPass forward(ad::Tape&, std::span<const Var> p, const NetInput& in) const override {
    const ModelSpec& s = spec();
    const auto& layers = linear_layers();
    ForwardPass fp;
    const std::size_t B = in.batch;
    std::size_t H = static_cast<std::size_t>(s.height), W = static_cast<std::size_t>(s.width);
    Var x = in.x;
    const Shape expected{B, static_cast<std::size_t>(s.in_channels), H, W};
    if (x.shape() != expected) x = ad::reshape(x, expected);
    x = ad::chw_to_hwc(x);
    std::size_t li = 0;
    auto conv = [&](Var input) {
      const LinearLayer& l = layers[li];
      Var patches;
      Var out = ad::conv3x3(input, p[l.weight], p[l.bias], B, H, W, &patches);
      fp.taps.push_back({li, patches, out});
      ++li;
      return out;
    };
    for (std::size_t st = 0; st < s.channels.size(); ++st) {
      x = ad::relu(conv(x));
      Var y = ad::relu(conv(x));
      y = conv(y);
      x = ad::relu(s.residual ? ad::add(x, y) : y);
      x = ad::avgpool2x2(x, B, H, W);
      H /= 2;
      W /= 2;
    }
    x = ad::reshape(x, {B, x.value().size() / B});
    const LinearLayer& head = layers[li];
    Var logits = ad::linear(x, p[head.weight], p[head.bias]);
    fp.taps.push_back({li, x, logits});
    fp.logits = logits;
    return fp;
  }

 private:
  void conv(const std::string& name, std::size_t cin, std::size_t cout) {
    int w = add_param(name + ".weight", {cout, 9 * cin}, 9 * cin);
    int b = add_param(name + ".bias", {cout}, 9 * cin);
    add_linear(name, LayerKind::conv, w, b);
  }
};

// ---------------------------------------------------------------------------
class TinyDecoder final : public Network {
 public:
  explicit TinyDecoder(const ModelSpec& spec) : Network(spec) {
    const auto V = static_cast<std::size_t>(spec.vocab), T = static_cast<std::size_t>(spec.context);
    const auto D = static_cast<std::size_t>(spec.d_model), F = static_cast<std::size_t>(spec.d_ff);
    tok_ = add_param("tok_embed.weight", {D, V}, V);
    add_linear("tok_embed", LayerKind::embedding, tok_, -1);
    pos_ = add_param("pos_embed.weight", {D, T}, T);
    add_linear("pos_embed", LayerKind::embedding, pos_, -1);
    for (int l = 0; l < spec.n_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      Block b;
      b.ln1_g = add_param(pre + "ln1.gain", {D}, D, ParamInit::ones);
      b.ln1_b = add_param(pre + "ln1.bias", {D}, D, ParamInit::zeros);
      exclude(b.ln1_g, "layer-norm gain (no Kronecker factorization)");
      exclude(b.ln1_b, "layer-norm bias (no Kronecker factorization)");
      b.q = lin(pre + "attn.q", D, D);
      b.k = lin(pre + "attn.k", D, D);
      b.v = lin(pre + "attn.v", D, D);
      b.o = lin(pre + "attn.o", D, D);
      b.ln2_g = add_param(pre + "ln2.gain", {D}, D, ParamInit::ones);
      b.ln2_b = add_param(pre + "ln2.bias", {D}, D, ParamInit::zeros);
      exclude(b.ln2_g, "layer-norm gain (no Kronecker factorization)");
      exclude(b.ln2_b, "layer-norm bias (no Kronecker factorization)");
      b.ff1 = lin(pre + "mlp.fc1", D, F);
      b.ff2 = lin(pre + "mlp.fc2", F, D);
      blocks_.push_back(b);
    }
    lnf_g_ = add_param("ln_f.gain", {D}, D, ParamInit::ones);
    lnf_b_ = add_param("ln_f.bias", {D}, D, ParamInit::zeros);
    exclude(lnf_g_, "layer-norm gain (no Kronecker factorization)");
    exclude(lnf_b_, "layer-norm bias (no Kronecker factorization)");
    head_ = lin("head", D, V);
    head_weight_ = linear_layers()[head_].weight;
    head_bias_ = linear_layers()[head_].bias;
  }

  ForwardPass forward(ad::Tape& tape, std::span<const Var> p, const NetInput& in) const override {
    const ModelSpec& s = spec();
    const std::size_t B = in.batch, T = in.seq, R = B * T;
    const auto V = static_cast<std::size_t>(s.vocab), Tmax = static_cast<std::size_t>(s.context);
    if (T == 0 || T > Tmax)
      fail(ErrorCode::shape, "tiny-decoder: sequence length " + std::to_string(T) + " outside [1, " +
                                 std::to_string(Tmax) + "]");
    if (in.x.shape() != Shape{R, V})
      fail(ErrorCode::shape, "tiny-decoder: token input expected " + shape_string({R, V}) + ", got " +
                                 shape_string(in.x.shape()));
    ForwardPass fp;
    const auto& layers = linear_layers();
    auto apply = [&](std::size_t li, Var x) {
      const LinearLayer& l = layers[li];
      Var out = l.bias >= 0 ? ad::linear(x, p[l.weight], p[l.bias]) : ad::linear(x, p[l.weight], std::nullopt);
      fp.taps.push_back({li, x, out});
      return out;
    };

    Tensor pos_onehot({R, Tmax}, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) pos_onehot.at(b * T + t, t) = 1.0;
    Var h = ad::add(apply(0, in.x), apply(1, tape.constant(std::move(pos_onehot))));
    if (in.embed_offset.valid()) h = ad::add(h, in.embed_offset);

    for (const Block& blk : blocks_) {
      Var a = ad::layer_norm(h, p[blk.ln1_g], p[blk.ln1_b]);
      Var q = apply(blk.q, a);
      Var k = apply(blk.k, a);
      Var v = apply(blk.v, a);
      Var att = ad::causal_attention(q, k, v, B, T, static_cast<std::size_t>(s.n_heads));
      h = ad::add(h, apply(blk.o, att));
      Var m = ad::layer_norm(h, p[blk.ln2_g], p[blk.ln2_b]);
      m = ad::relu(apply(blk.ff1, m));
      h = ad::add(h, apply(blk.ff2, m));
    }
    Var f = ad::layer_norm(h, p[lnf_g_], p[lnf_b_]);
    fp.logits = apply(head_, f);
    return fp;
  }

 private:
  struct Block {
    int ln1_g, ln1_b, ln2_g, ln2_b;
    std::size_t q, k, v, o, ff1, ff2;
  };

  std::size_t lin(const std::string& name, std::size_t in, std::size_t out) {
    int w = add_param(name + ".weight", {out, in}, in);
    int b = add_param(name + ".bias", {out}, in);
    add_linear(name, LayerKind::linear, w, b);
    return linear_layers().size() - 1;
  }

  int tok_ = -1, pos_ = -1, lnf_g_ = -1, lnf_b_ = -1;
  std::size_t head_ = 0;
  std::vector<Block> blocks_;
};

}  // namespace

std::unique_ptr<Network> make_network(const ModelSpec& spec) {
  spec.validate();
  switch (spec.arch) {
    case Arch::mlp: return std::make_unique<Mlp>(spec);
    case Arch::res_cnn: return std::make_unique<ResCnn>(spec);
    case Arch::tiny_decoder: return std::make_unique<TinyDecoder>(spec);
  }
  fail(ErrorCode::unsupported, "unsupported architecture");
}

}  // namespace infusion::models
