#include "models/model.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/parallel.hpp"

namespace infusion::models {

using ad::Var;

namespace {

std::size_t max_len(std::span<const Example* const> batch) {
  std::size_t T = 0;
  for (const Example* e : batch) T = std::max(T, e->tokens.size());
  return T;
}

double mask_at(const Example& e, std::size_t t) { return e.loss_mask.empty() ? 1.0 : e.loss_mask[t]; }

}  // namespace

std::vector<const Example*> pointers(std::span<const Example> data) {
  std::vector<const Example*> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(&e);
  return out;
}

LossGraph build_loss(ad::Tape& tape, const Network& net, std::span<const double> params,
                     std::span<const Example* const> batch, const LossRequest& req) {
  require(!batch.empty(), ErrorCode::empty, "loss over an empty batch");
  require(params.size() == net.param_count(), ErrorCode::shape,
          "parameter vector has " + std::to_string(params.size()) + " entries, model expects " +
              std::to_string(net.param_count()));
  LossGraph g;
  for (const ParamInfo& p : net.params()) {
    Tensor t(p.shape, std::vector<double>(params.begin() + p.offset, params.begin() + p.offset + p.size()));
    g.params.push_back(tape.leaf(std::move(t), req.param_grad, p.name));
  }
  const std::size_t B = batch.size();
  const std::size_t C = net.output_dim();
  NetInput in;
  in.batch = B;
  Var targets;

  if (!batch[0]->is_sequence()) {
    const Shape& fs = batch[0]->features.shape();
    Shape xs{B};
    xs.insert(xs.end(), fs.begin(), fs.end());
    Tensor x(xs);
    const std::size_t per = batch[0]->features.size();
    Tensor y({B, C}, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const Example& e = *batch[b];
      require(!e.is_sequence() && e.features.shape() == fs, ErrorCode::shape,
              "batch mixes feature shapes " + shape_string(fs) + " and " + shape_string(e.features.shape()));
      std::copy(e.features.data().begin(), e.features.data().end(), x.data().begin() + b * per);
      if (!req.target_rows) {
        require(e.label >= 0 && static_cast<std::size_t>(e.label) < C, ErrorCode::invalid_argument,
                "label " + std::to_string(e.label) + " outside [0, " + std::to_string(C) + ")");
        y.at(b, static_cast<std::size_t>(e.label)) = 1.0;
      }
      g.row_weights.push_back(e.weight / static_cast<double>(B));
    }
    in.x = tape.leaf(std::move(x), req.input == InputLeaf::features);
    if (req.input == InputLeaf::features) g.input = in.x;
    targets = tape.constant(req.target_rows ? *req.target_rows : std::move(y));
  } else {
    const std::size_t T = max_len(batch);
    const std::size_t V = C;
    const std::size_t R = B * T;
    in.seq = T;
    g.seq = T;
    const bool relaxed = req.input == InputLeaf::tokens;
    const bool offset_leaf = req.input == InputLeaf::embed_offset;
    require(!(relaxed || offset_leaf) || B == 1, ErrorCode::invalid_argument,
            "token and embedding-offset leaves take a single sequence");
    Tensor x({R, V}, 0.0), y({R, V}, 0.0);
    bool any_offset = offset_leaf;
    g.row_weights.assign(R, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const Example& e = *batch[b];
      require(e.is_sequence(), ErrorCode::shape, "batch mixes sequence and feature examples");
      require(e.loss_mask.empty() || e.loss_mask.size() == e.tokens.size(), ErrorCode::shape,
              "loss mask length differs from token count");
      const std::size_t L = e.tokens.size();
      double msum = 0.0;
      for (std::size_t t = 1; t < L; ++t) msum += mask_at(e, t);
      require(msum > 0.0, ErrorCode::invalid_argument, "sequence has no loss positions");
      for (std::size_t t = 0; t < L; ++t) {
        const int tok = e.tokens[t];
        require(tok >= 0 && static_cast<std::size_t>(tok) < V, ErrorCode::invalid_argument,
                "token id " + std::to_string(tok) + " outside vocabulary of " + std::to_string(V));
        x.at(b * T + t, static_cast<std::size_t>(tok)) = 1.0;
        if (t + 1 < L) {
          y.at(b * T + t, static_cast<std::size_t>(e.tokens[t + 1])) = 1.0;
          g.row_weights[b * T + t] = e.weight * mask_at(e, t + 1) / (msum * static_cast<double>(B));
        }
      }
      if (!e.embed_offset.empty()) any_offset = true;
    }
    if (relaxed) {
      require(req.token_dist && req.token_dist->shape() == Shape{T, V}, ErrorCode::shape,
              "relaxed token distribution must be [" + std::to_string(T) + ", " + std::to_string(V) + "]");
      in.x = tape.leaf(*req.token_dist, true);
      g.input = in.x;
      Tensor shift({T, T}, 0.0);
      for (std::size_t t = 0; t + 1 < T; ++t) shift.at(t, t + 1) = 1.0;
      targets = req.target_rows ? tape.constant(*req.target_rows) : ad::matmul(tape.constant(std::move(shift)), in.x);
    } else {
      in.x = tape.constant(std::move(x));
      targets = tape.constant(req.target_rows ? *req.target_rows : std::move(y));
    }
    if (any_offset) {
      const auto D = static_cast<std::size_t>(net.spec().d_model);
      Tensor off({R, D}, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        const Tensor& eo = batch[b]->embed_offset;
        if (eo.empty()) continue;
        require(eo.shape() == Shape{batch[b]->tokens.size(), D}, ErrorCode::shape,
                "embedding offset must be " + shape_string({batch[b]->tokens.size(), D}) + ", got " +
                    shape_string(eo.shape()));
        std::copy(eo.data().begin(), eo.data().end(), off.data().begin() + b * T * D);
      }
      in.embed_offset = tape.leaf(std::move(off), offset_leaf);
      if (offset_leaf) g.input = in.embed_offset;
    }
  }

  g.forward = net.forward(tape, g.params, in);
  g.loss = ad::softmax_cross_entropy(g.forward.logits, targets, g.row_weights);
  return g;
}

std::vector<double> flat_param_grad(const ad::Tape& tape, const Network& net, const LossGraph& graph) {
  std::vector<double> out(net.param_count(), 0.0);
  for (std::size_t i = 0; i < graph.params.size(); ++i) {
    Tensor gi = tape.gradient(graph.params[i]);
    std::copy(gi.data().begin(), gi.data().end(), out.begin() + net.params()[i].offset);
  }
  return out;
}

double batch_loss(const Network& net, std::span<const double> params, std::span<const Example* const> batch) {
  ad::Tape tape;
  LossRequest req;
  req.param_grad = false;
  return build_loss(tape, net, params, batch, req).loss.value().item();
}

std::vector<double> batch_grad(const Network& net, std::span<const double> params,
                               std::span<const Example* const> batch, double* loss_out) {
  ad::Tape tape;
  LossGraph g = build_loss(tape, net, params, batch);
  tape.backward(g.loss);
  if (loss_out) *loss_out = g.loss.value().item();
  return flat_param_grad(tape, net, g);
}

double example_loss(const Network& net, std::span<const double> params, const Example& ex) {
  const Example* one[] = {&ex};
  return batch_loss(net, params, one);
}

std::vector<double> example_grad(const Network& net, std::span<const double> params, const Example& ex) {
  const Example* one[] = {&ex};
  return batch_grad(net, params, one);
}

std::vector<std::vector<double>> per_example_grads(const Network& net, std::span<const double> params,
                                                   std::span<const Example> batch) {
  require(!batch.empty(), ErrorCode::empty, "per-example gradients of an empty batch");
  std::vector<std::vector<double>> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { out[i] = example_grad(net, params, batch[i]); });
  return out;
}

Tensor log_probs(const Network& net, std::span<const double> params, const Example& ex) {
  ad::Tape tape;
  LossRequest req;
  req.param_grad = false;
  const Example* one[] = {&ex};
  LossGraph g = build_loss(tape, net, params, one, req);
  Tensor lp = ad::log_softmax(g.forward.logits).value();
  if (!ex.is_sequence()) return lp.reshaped({lp.size()});
  return lp;
}

std::vector<Tensor> log_probs(const Network& net, std::span<const double> params, std::span<const Example> batch) {
  std::vector<Tensor> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { out[i] = log_probs(net, params, batch[i]); });
  return out;
}

void validate_dataset(const Network& net, std::span<const Example> data) {
  require(!data.empty(), ErrorCode::empty, "dataset is empty");
  const bool seq = net.spec().arch == Arch::tiny_decoder;
  const std::size_t C = net.output_dim();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example& e = data[i];
    const std::string where = "example " + std::to_string(i) + ": ";
    if (seq) {
      require(e.is_sequence(), ErrorCode::invalid_argument, where + "tiny-decoder needs token sequences");
      require(e.tokens.size() >= 2 && e.tokens.size() <= static_cast<std::size_t>(net.spec().context),
              ErrorCode::invalid_argument, where + "sequence length outside [2, context]");
      for (int t : e.tokens)
        require(t >= 0 && static_cast<std::size_t>(t) < C, ErrorCode::invalid_argument,
                where + "token id " + std::to_string(t) + " outside vocabulary");
    } else {
      require(!e.is_sequence(), ErrorCode::invalid_argument, where + "classifier needs feature tensors");
      require(e.label >= 0 && static_cast<std::size_t>(e.label) < C, ErrorCode::invalid_argument,
              where + "label " + std::to_string(e.label) + " outside [0, " + std::to_string(C) + ")");
    }
  }
}

}  // namespace infusion::models
