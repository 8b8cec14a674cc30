#include "tensor/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace infusion::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor value, bool requires_grad, std::string name) {
  if (std::size_t bad = value.first_non_finite(); bad != value.size())
    fail(ErrorCode::non_finite, "leaf '" + name + "' has non-finite value at index " + std::to_string(bad));
  Node n;
  n.op = name.empty() ? "leaf" : std::move(name);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(const char* op, Tensor value, std::vector<int> inputs, Backward backward) {
  if (std::size_t bad = value.first_non_finite(); bad != value.size())
    fail(ErrorCode::non_finite, std::string("non-finite output of op '") + op + "' at node " +
                                    std::to_string(nodes_.size()) + ", element " + std::to_string(bad));
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::check_owned(Var v, const char* what) const {
  if (&v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size())
    fail(ErrorCode::invalid_argument, std::string(what) + ": variable is not part of this graph");
}

Tensor* Tape::grad_slot(int id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::backward(Var output) {
  check_owned(output, "backward");
  if (output.value().size() != 1)
    fail(ErrorCode::shape, "backward requires a scalar output, got shape " + shape_string(output.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  last_output_ = output.id();
  if (!nodes_[output.id()].requires_grad) return;
  Tensor* g = grad_slot(output.id());
  (*g)[0] = 1.0;
  for (int id = output.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

Tensor Tape::gradient(Var v) const {
  check_owned(v, "gradient");
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

std::vector<Tensor> Tape::grad(Var output, std::span<const Var> wrt) {
  for (const Var& w : wrt) check_owned(w, "grad");
  backward(output);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) out.push_back(gradient(w));
  return out;
}

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& expected, const Shape& actual) {
  fail(ErrorCode::shape, std::string(op) + ": expected " + expected + ", got " + shape_string(actual));
}

void expect_rank(const char* op, const Var& v, std::size_t rank) {
  if (v.shape().size() != rank) shape_error(op, "rank " + std::to_string(rank), v.shape());
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) fail(ErrorCode::invalid_argument, std::string(op) + ": operands from different graphs");
  return a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape("matmul", a, b);
  expect_rank("matmul", a, 2);
  expect_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) shape_error("matmul", "rhs [" + std::to_string(k) + ", *]", b.shape());
  Tensor out({m, n}, 0.0);
  gemm_nn(m, n, k, a.value().data().data(), b.value().data().data(), out.data().data());
  const int ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {ia, ib}, [=](Tape& tp, int self) {
    const Tensor& g = tp.out_grad(self);
    if (Tensor* ga = tp.grad_slot(ia))
      gemm_nt(m, k, n, g.data().data(), tp.value(ib).data().data(), ga->data().data());
    if (Tensor* gb = tp.grad_slot(ib))
      gemm_tn(k, n, m, tp.value(ia).data().data(), g.data().data(), gb->data().data());
  });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  Tape& t = same_tape("linear", x, weight);
  expect_rank("linear", x, 2);
  expect_rank("linear", weight, 2);
  const std::size_t rows = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in)
    shape_error("linear", "weight [*, " + std::to_string(in) + "]", weight.shape());
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != out_dim))
    shape_error("linear", "bias [" + std::to_string(out_dim) + "]", bias->shape());
  Tensor out({rows, out_dim}, 0.0);
  if (bias) {
    const auto& b = bias->value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out.at(r, j) = b[j];
  }
  gemm_nt(rows, out_dim, in, x.value().data().data(), weight.value().data().data(), out.data().data());
  const int ix = x.id(), iw = weight.id(), ib = bias ? bias->id() : -1;
  std::vector<int> inputs{ix, iw};
  if (bias) inputs.push_back(ib);
  return t.record("linear", std::move(out), std::move(inputs), [=](Tape& tp, int self) {
    const Tensor& g = tp.out_grad(self);
    if (Tensor* gx = tp.grad_slot(ix))
      gemm_nn(rows, in, out_dim, g.data().data(), tp.value(iw).data().data(), gx->data().data());
    if (Tensor* gw = tp.grad_slot(iw))
      gemm_tn(out_dim, in, rows, g.data().data(), tp.value(ix).data().data(), gw->data().data());
    if (ib >= 0) {
      if (Tensor* gb = tp.grad_slot(ib))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g.at(r, j);
    }
  });
}

Var embedding(Var distribution, Var table) { return linear(distribution, table, std::nullopt); }

Var add(Var a, Var b) {
  Tape& t = same_tape("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const int ia = a.id(), ib = b.id();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return t.record("add", std::move(out), {ia, ib}, [=](Tape& tp, int self) {
      const Tensor& g = tp.out_grad(self);
      if (Tensor* ga = tp.grad_slot(ia)) axpy(1.0, g.data(), ga->data());
      if (Tensor* gb = tp.grad_slot(ib)) axpy(1.0, g.data(), gb->data());
    });
  }
  if (bv.rank() == 1 && av.rank() >= 1 && av.shape().back() == bv.size()) {
    const std::size_t cols = bv.size(), rows = av.size() / cols;
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
    return t.record("broadcast_add", std::move(out), {ia, ib}, [=](Tape& tp, int self) {
      const Tensor& g = tp.out_grad(self);
      if (Tensor* ga = tp.grad_slot(ia)) axpy(1.0, g.data(), ga->data());
      if (Tensor* gb = tp.grad_slot(ib))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
    });
  }
  shape_error("add", shape_string(av.shape()) + " or a trailing-dimension vector", bv.shape());
}

Var mul(Var a, Var b) {
  Tape& t = same_tape("mul", a, b);
  if (a.shape() != b.shape()) shape_error("mul", shape_string(a.shape()), b.shape());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.record("mul", std::move(out), {ia, ib}, [=](Tape& tp, int self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& av2 = tp.value(ia);
    const Tensor& bv2 = tp.value(ib);
    if (Tensor* ga = tp.grad_slot(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i];
    if (Tensor* gb = tp.grad_slot(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av2[i];
  });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= c;
  const int ix = x.id();
  return x.tape().record("scale", std::move(out), {ix}, [=](Tape& tp, int self) {
    if (Tensor* gx = tp.grad_slot(ix)) axpy(c, tp.out_grad(self).data(), gx->data());
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const int ix = x.id();
  return x.tape().record("sum", Tensor::scalar(s), {ix}, [=](Tape& tp, int self) {
    const double g = tp.out_grad(self)[0];
    if (Tensor* gx = tp.grad_slot(ix))
      for (auto& v : gx->data()) v += g;
  });
}

Var weighted_sum(Var x, const Tensor& weights) {
  if (weights.size() != x.value().size())
    shape_error("weighted_sum", shape_string(x.shape()) + " weights", weights.shape());
  double s = dot(x.value().data(), weights.data());
  const int ix = x.id();
  return x.tape().record("weighted_sum", Tensor::scalar(s), {ix}, [=, w = weights](Tape& tp, int self) {
    if (Tensor* gx = tp.grad_slot(ix)) axpy(tp.out_grad(self)[0], w.data(), gx->data());
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const int ix = x.id();
  return x.tape().record("relu", std::move(out), {ix}, [=](Tape& tp, int self) {
    if (Tensor* gx = tp.grad_slot(ix)) {
      const Tensor& g = tp.out_grad(self);
      const Tensor& xv = tp.value(ix);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const int ix = x.id();
  return x.tape().record("reshape", std::move(out), {ix}, [=](Tape& tp, int self) {
    if (Tensor* gx = tp.grad_slot(ix)) axpy(1.0, tp.out_grad(self).data(), gx->data());
  });
}

Var chw_to_hwc(Var x) {
  expect_rank("chw_to_hwc", x, 4);
  const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  Tensor out({B * H * W, C});
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < H * W; ++p) out[(b * H * W + p) * C + c] = xv[(b * C + c) * H * W + p];
  const int ix = x.id();
  return x.tape().record("chw_to_hwc", std::move(out), {ix}, [=](Tape& tp, int self) {
    if (Tensor* gx = tp.grad_slot(ix)) {
      const Tensor& g = tp.out_grad(self);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < H * W; ++p) (*gx)[(b * C + c) * H * W + p] += g[(b * H * W + p) * C + c];
    }
  });
}

Var im2col3x3(Var x, std::size_t B, std::size_t H, std::size_t W) {
  expect_rank("im2col3x3", x, 2);
  if (x.shape()[0] != B * H * W)
    shape_error("im2col3x3", "[" + std::to_string(B * H * W) + ", C]", x.shape());
  const std::size_t C = x.shape()[1];
  Tensor out({B * H * W, 9 * C}, 0.0);
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        double* row = out.data().data() + ((b * H + h) * W + w) * 9 * C;
        for (int ky = 0; ky < 3; ++ky) {
          const long hh = static_cast<long>(h) + ky - 1;
          if (hh < 0 || hh >= static_cast<long>(H)) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const long ww = static_cast<long>(w) + kx - 1;
            if (ww < 0 || ww >= static_cast<long>(W)) continue;
            const double* src = xv.data().data() + ((b * H + hh) * W + ww) * C;
            std::copy(src, src + C, row + (ky * 3 + kx) * C);
          }
        }
      }
  const int ix = x.id();
  return x.tape().record("im2col3x3", std::move(out), {ix}, [=](Tape& tp, int self) {
    Tensor* gx = tp.grad_slot(ix);
    if (!gx) return;
    const Tensor& g = tp.out_grad(self);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const double* row = g.data().data() + ((b * H + h) * W + w) * 9 * C;
          for (int ky = 0; ky < 3; ++ky) {
            const long hh = static_cast<long>(h) + ky - 1;
            if (hh < 0 || hh >= static_cast<long>(H)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const long ww = static_cast<long>(w) + kx - 1;
              if (ww < 0 || ww >= static_cast<long>(W)) continue;
              double* dst = gx->data().data() + ((b * H + hh) * W + ww) * C;
              const double* src = row + (ky * 3 + kx) * C;
              for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
            }
          }
        }
  });
}

Var avgpool2x2(Var x, std::size_t B, std::size_t H, std::size_t W) {
  expect_rank("avgpool2x2", x, 2);
  if (x.shape()[0] != B * H * W || H % 2 || W % 2)
    shape_error("avgpool2x2", "[" + std::to_string(B * H * W) + ", C] with even H, W", x.shape());
  const std::size_t C = x.shape()[1], Ho = H / 2, Wo = W / 2;
  Tensor out({B * Ho * Wo, C}, 0.0);
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const double* src = xv.data().data() + ((b * H + h) * W + w) * C;
        double* dst = out.data().data() + ((b * Ho + h / 2) * Wo + w / 2) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += 0.25 * src[c];
      }
  const int ix = x.id();
  return x.tape().record("avgpool2x2", std::move(out), {ix}, [=](Tape& tp, int self) {
    Tensor* gx = tp.grad_slot(ix);
    if (!gx) return;
    const Tensor& g = tp.out_grad(self);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          double* dst = gx->data().data() + ((b * H + h) * W + w) * C;
          const double* src = g.data().data() + ((b * Ho + h / 2) * Wo + w / 2) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += 0.25 * src[c];
        }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape("layer_norm", x, gain);
  expect_rank("layer_norm", x, 2);
  const std::size_t R = x.shape()[0], D = x.shape()[1];
  if (gain.value().size() != D || bias.value().size() != D)
    shape_error("layer_norm", "gain/bias [" + std::to_string(D) + "]", gain.shape());
  Tensor out({R, D});
  Tensor xhat({R, D});
  std::vector<double> inv_std(R);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = xv.data().data() + r * D;
    double mean = 0.0;
    for (std::size_t j = 0; j < D; ++j) mean += row[j];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(D);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (row[j] - mean) * inv_std[r];
      xhat.at(r, j) = h;
      out.at(r, j) = gv[j] * h + bv[j];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.record("layer_norm", std::move(out), {ix, ig, ib},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                    const Tensor& g = tp.out_grad(self);
                    const Tensor& gain_v = tp.value(ig);
                    if (Tensor* gg = tp.grad_slot(ig))
                      for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t j = 0; j < D; ++j) (*gg)[j] += g.at(r, j) * xhat.at(r, j);
                    if (Tensor* gb = tp.grad_slot(ib))
                      for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t j = 0; j < D; ++j) (*gb)[j] += g.at(r, j);
                    if (Tensor* gx = tp.grad_slot(ix)) {
                      for (std::size_t r = 0; r < R; ++r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < D; ++j) {
                          const double d = g.at(r, j) * gain_v[j];
                          m1 += d;
                          m2 += d * xhat.at(r, j);
                        }
                        m1 /= static_cast<double>(D);
                        m2 /= static_cast<double>(D);
                        for (std::size_t j = 0; j < D; ++j) {
                          const double d = g.at(r, j) * gain_v[j];
                          gx->at(r, j) += inv_std[r] * (d - m1 - xhat.at(r, j) * m2);
                        }
                      }
                    }
                  });
}

Var causal_attention(Var q, Var k, Var v, std::size_t B, std::size_t T, std::size_t heads) {
  Tape& t = same_tape("causal_attention", q, k);
  expect_rank("causal_attention", q, 2);
  const std::size_t D = q.shape()[1];
  if (q.shape()[0] != B * T || k.shape() != q.shape() || v.shape() != q.shape() || heads == 0 || D % heads)
    shape_error("causal_attention", "q, k, v of shape [" + std::to_string(B * T) + ", heads*dh]", k.shape());
  const std::size_t dh = D / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({B * T, D}, 0.0);
  // probs[((b*heads + h)*T + i)*T + j], zero above the diagonal.
  std::vector<double> probs(B * heads * T * T, 0.0);
  const double* qd = q.value().data().data();
  const double* kd = k.value().data().data();
  const double* vd = v.value().data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < T; ++i) {
        double* p = probs.data() + ((b * heads + h) * T + i) * T;
        const double* qi = qd + (b * T + i) * D + h * dh;
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = kd + (b * T + j) * D + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * inv_scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* oi = out.data().data() + (b * T + i) * D + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= z;
          const double* vj = vd + (b * T + j) * D + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return t.record("causal_attention", std::move(out), {iq, ik, iv},
                  [=, probs = std::move(probs)](Tape& tp, int self) {
                    const double* g = tp.out_grad(self).data().data();
                    const double* qv = tp.value(iq).data().data();
                    const double* kv = tp.value(ik).data().data();
                    const double* vv = tp.value(iv).data().data();
                    Tensor* gq = tp.grad_slot(iq);
                    Tensor* gk = tp.grad_slot(ik);
                    Tensor* gv = tp.grad_slot(iv);
                    std::vector<double> dp(T);
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t h = 0; h < heads; ++h)
                        for (std::size_t i = 0; i < T; ++i) {
                          const double* p = probs.data() + ((b * heads + h) * T + i) * T;
                          const double* gi = g + (b * T + i) * D + h * dh;
                          double acc = 0.0;
                          for (std::size_t j = 0; j <= i; ++j) {
                            const double* vj = vv + (b * T + j) * D + h * dh;
                            double s = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                            dp[j] = s;
                            acc += p[j] * s;
                            if (gv) {
                              double* gvj = gv->data().data() + (b * T + j) * D + h * dh;
                              for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
                            }
                          }
                          const double* qi = qv + (b * T + i) * D + h * dh;
                          for (std::size_t j = 0; j <= i; ++j) {
                            const double ds = p[j] * (dp[j] - acc) * inv_scale;
                            if (ds == 0.0) continue;
                            const double* kj = kv + (b * T + j) * D + h * dh;
                            if (gq) {
                              double* gqi = gq->data().data() + (b * T + i) * D + h * dh;
                              for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                            }
                            if (gk) {
                              double* gkj = gk->data().data() + (b * T + j) * D + h * dh;
                              for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                            }
                          }
                        }
                  });
}

namespace {

// Row-wise log-softmax of a [R, C] array.
Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  Tensor out({R, C});
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = x.data().data() + r * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out.at(r, c) = row[c] - lse;
  }
  return out;
}

}  // namespace

Var log_softmax(Var logits) {
  expect_rank("log_softmax", logits, 2);
  Tensor out = log_softmax_rows(logits.value());
  const std::size_t R = out.shape()[0], C = out.shape()[1];
  const int ix = logits.id();
  return logits.tape().record("log_softmax", std::move(out), {ix}, [=](Tape& tp, int self) {
    Tensor* gx = tp.grad_slot(ix);
    if (!gx) return;
    const Tensor& g = tp.out_grad(self);
    const Tensor& y = tp.value(self);
    for (std::size_t r = 0; r < R; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < C; ++c) gs += g.at(r, c);
      for (std::size_t c = 0; c < C; ++c) gx->at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gs;
    }
  });
}

Var softmax_cross_entropy(Var logits, Var targets, std::span<const double> row_weights) {
  Tape& t = same_tape("softmax_cross_entropy", logits, targets);
  expect_rank("softmax_cross_entropy", logits, 2);
  if (targets.shape() != logits.shape())
    shape_error("softmax_cross_entropy", "targets " + shape_string(logits.shape()), targets.shape());
  const std::size_t R = logits.shape()[0], C = logits.shape()[1];
  if (row_weights.size() != R)
    fail(ErrorCode::shape, "softmax_cross_entropy: " + std::to_string(row_weights.size()) +
                               " row weights for " + std::to_string(R) + " rows");
  Tensor logp = log_softmax_rows(logits.value());
  const Tensor& tv = targets.value();
  double total = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (row_weights[r] == 0.0) continue;
    double ce = 0.0;
    for (std::size_t c = 0; c < C; ++c) ce -= tv.at(r, c) * logp.at(r, c);
    total += row_weights[r] * ce;
  }
  std::vector<double> w(row_weights.begin(), row_weights.end());
  const int il = logits.id(), it = targets.id();
  return t.record("softmax_cross_entropy", Tensor::scalar(total), {il, it},
                  [=, logp = std::move(logp), w = std::move(w)](Tape& tp, int self) {
                    const double g = tp.out_grad(self)[0];
                    const Tensor& tv2 = tp.value(it);
                    if (Tensor* gl = tp.grad_slot(il))
                      for (std::size_t r = 0; r < R; ++r) {
                        if (w[r] == 0.0) continue;
                        double tsum = 0.0;
                        for (std::size_t c = 0; c < C; ++c) tsum += tv2.at(r, c);
                        for (std::size_t c = 0; c < C; ++c)
                          gl->at(r, c) += g * w[r] * (std::exp(logp.at(r, c)) * tsum - tv2.at(r, c));
                      }
                    if (Tensor* gt = tp.grad_slot(it))
                      for (std::size_t r = 0; r < R; ++r) {
                        if (w[r] == 0.0) continue;
                        for (std::size_t c = 0; c < C; ++c) gt->at(r, c) -= g * w[r] * logp.at(r, c);
                      }
                  });
}

Var gather(Var x, std::span<const int> columns) {
  expect_rank("gather", x, 2);
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  if (columns.size() != R)
    fail(ErrorCode::shape, "gather: " + std::to_string(columns.size()) + " indices for " + std::to_string(R) + " rows");
  std::vector<int> cols(columns.begin(), columns.end());
  Tensor out({R});
  for (std::size_t r = 0; r < R; ++r) {
    if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= C)
      fail(ErrorCode::invalid_argument, "gather: column " + std::to_string(cols[r]) + " out of range");
    out[r] = x.value().at(r, cols[r]);
  }
  const int ix = x.id();
  return x.tape().record("gather", std::move(out), {ix}, [=, cols = std::move(cols)](Tape& tp, int self) {
    if (Tensor* gx = tp.grad_slot(ix)) {
      const Tensor& g = tp.out_grad(self);
      for (std::size_t r = 0; r < R; ++r) gx->at(r, cols[r]) += g[r];
    }
  });
}

Var conv3x3(Var x, Var weight, Var bias, std::size_t batch, std::size_t height, std::size_t width,
            Var* patches_out) {
  Var patches = im2col3x3(x, batch, height, width);
  if (patches_out) *patches_out = patches;
  return linear(patches, weight, bias);
}

}  // namespace infusion::ad
