#include "curvature/ekfac.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/container.hpp"
#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "models/model.hpp"

namespace infusion::curvature {

using models::Example;
using models::LinearLayer;
using models::Network;

const char* fisher_mode_name(FisherMode mode) { return mode == FisherMode::sampled ? "sampled" : "empirical"; }

FisherMode parse_fisher_mode(const std::string& name) {
  if (name == "sampled") return FisherMode::sampled;
  if (name == "empirical") return FisherMode::empirical;
  fail(ErrorCode::config, "unknown fisher mode '" + name + "' (expected sampled or empirical)");
}

// ---- symmetric eigendecomposition ------------------------------------------

SymEigen jacobi_eigen(const Tensor& input, double tol, const std::string& what) {
  require(input.rank() == 2 && input.dim(0) == input.dim(1), ErrorCode::shape,
          what + ": eigendecomposition needs a square matrix, got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0);
  std::vector<double> a(input.data().begin(), input.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = a[j * n + i] = 0.5 * (a[i * n + j] + a[j * n + i]);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double total = 0.0;
  for (double x : a) total += x * x;
  total = std::sqrt(total);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };

  SymEigen out;
  constexpr std::size_t kMaxSweeps = 100;
  while (total > 0.0 && off_norm() > tol * total) {
    if (out.sweeps == kMaxSweeps) {
      double hi = 0.0, lo = INFINITY;
      for (std::size_t i = 0; i < n; ++i) {
        hi = std::max(hi, std::abs(a[i * n + i]));
        lo = std::min(lo, std::abs(a[i * n + i]));
      }
      fail(ErrorCode::numeric, what + ": Jacobi eigendecomposition did not converge after " +
                                   std::to_string(kMaxSweeps) + " sweeps (condition estimate " +
                                   std::to_string(lo > 0.0 ? hi / lo : INFINITY) + ")");
    }
    ++out.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + q] = a[q * n + p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
  out.values.resize(n);
  out.vectors = Tensor({n, n});
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = a[order[c] * n + order[c]];
    for (std::size_t r = 0; r < n; ++r) out.vectors.at(r, c) = v[r * n + order[c]];
  }
  return out;
}

// ---- per-example layer statistics -------------------------------------------

namespace {

constexpr std::uint64_t kFisherStream = 0xF15E;
constexpr std::size_t kChunks = 32;

struct LayerRows {
  Tensor a;  // [R, d_in] with bias coordinate
  Tensor g;  // [R, d_out]
};

Tensor sample_targets(const Tensor& logits, std::span<const double> row_weights, Rng& rng) {
  const std::size_t R = logits.dim(0), C = logits.dim(1);
  Tensor y({R, C}, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    if (row_weights[r] == 0.0) continue;
    double m = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.at(r, c) - m);
    double u = uniform01(rng) * z, acc = 0.0;
    std::size_t pick = C - 1;
    for (std::size_t c = 0; c < C; ++c) {
      acc += std::exp(logits.at(r, c) - m);
      if (u < acc) {
        pick = c;
        break;
      }
    }
    y.at(r, pick) = 1.0;
  }
  return y;
}

// Layer inputs/output-gradients of one example's loss, grouped per factored layer.
std::vector<LayerRows> example_rows(const Network& net, std::span<const double> params, const Example& ex,
                                    FisherMode mode, std::uint64_t seed, std::size_t index) {
  const Example* one[] = {&ex};
  Tensor sampled;
  models::LossRequest req;
  if (mode == FisherMode::sampled) {
    ad::Tape probe;
    models::LossRequest nograd;
    nograd.param_grad = false;
    auto g0 = models::build_loss(probe, net, params, one, nograd);
    Rng rng = make_rng(seed, {kFisherStream, index});
    sampled = sample_targets(g0.forward.logits.value(), g0.row_weights, rng);
    req.target_rows = &sampled;
  }
  ad::Tape tape;
  auto g = models::build_loss(tape, net, params, one, req);
  tape.backward(g.loss);

  const auto& layers = net.linear_layers();
  std::vector<LayerRows> out(layers.size());
  for (const auto& tap : g.forward.taps) {
    const LinearLayer& l = layers[tap.layer];
    const Tensor& x = tap.input.value();
    Tensor go = tape.gradient(tap.output);
    const std::size_t R = x.dim(0);
    const std::size_t din = l.d_in + (l.bias >= 0 ? 1 : 0);
    Tensor a({R, din});
    for (std::size_t r = 0; r < R; ++r) {
      std::copy(x.data().begin() + r * l.d_in, x.data().begin() + (r + 1) * l.d_in, a.data().begin() + r * din);
      if (l.bias >= 0) a.at(r, l.d_in) = 1.0;
    }
    LayerRows& dst = out[tap.layer];
    if (dst.a.empty()) {
      dst.a = std::move(a);
      dst.g = std::move(go);
    } else {  // layer applied more than once: stack the rows
      Tensor na({dst.a.dim(0) + R, din}), ng({dst.g.dim(0) + R, l.d_out});
      std::copy(dst.a.data().begin(), dst.a.data().end(), na.data().begin());
      std::copy(a.data().begin(), a.data().end(), na.data().begin() + dst.a.size());
      std::copy(dst.g.data().begin(), dst.g.data().end(), ng.data().begin());
      std::copy(go.data().begin(), go.data().end(), ng.data().begin() + dst.g.size());
      dst.a = std::move(na);
      dst.g = std::move(ng);
    }
  }
  return out;
}

// Runs body(example index, rows) over the data in kChunks fixed chunks and
// reduces the chunk accumulators in chunk order, so the result does not
// depend on the worker count.
template <class Acc, class Body>
Acc chunked_reduce(std::size_t n, const Acc& zero, Body body) {
  const std::size_t chunks = std::min(n, kChunks);
  std::vector<Acc> partial(chunks, zero);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = n * c / chunks, hi = n * (c + 1) / chunks;
    for (std::size_t i = lo; i < hi; ++i) body(i, partial[c]);
  });
  Acc total = zero;
  for (auto& p : partial)
    for (std::size_t k = 0; k < total.size(); ++k)
      for (std::size_t j = 0; j < total[k].size(); ++j) total[k][j] += p[k][j];
  return total;
}

void check_coverage(const Network& net) {
  std::vector<int> owner(net.params().size(), 0);
  for (const auto& l : net.linear_layers()) {
    owner[l.weight]++;
    if (l.bias >= 0) owner[l.bias]++;
  }
  for (const auto& e : net.excluded()) owner[e.param]++;
  for (std::size_t i = 0; i < owner.size(); ++i)
    require(owner[i] == 1, ErrorCode::unsupported,
            "parameter " + net.params()[i].name + " is neither factored nor excluded with a reason");
}

Tensor layer_block(const Network& net, const LayerFactors& f, std::span<const double> v) {
  const LinearLayer& l = net.linear_layers()[f.layer];
  Tensor V({f.d_out, f.d_in});
  const std::size_t ow = net.params()[l.weight].offset;
  for (std::size_t i = 0; i < f.d_out; ++i) {
    for (std::size_t j = 0; j < l.d_in; ++j) V.at(i, j) = v[ow + i * l.d_in + j];
    if (f.has_bias) V.at(i, l.d_in) = v[net.params()[l.bias].offset + i];
  }
  return V;
}

void scatter_block(const Network& net, const LayerFactors& f, const Tensor& V, std::span<double> out) {
  const LinearLayer& l = net.linear_layers()[f.layer];
  const std::size_t ow = net.params()[l.weight].offset;
  for (std::size_t i = 0; i < f.d_out; ++i) {
    for (std::size_t j = 0; j < l.d_in; ++j) out[ow + i * l.d_in + j] = V.at(i, j);
    if (f.has_bias) out[net.params()[l.bias].offset + i] = V.at(i, l.d_in);
  }
}

// Q_S^T V Q_A
Tensor to_eigenbasis(const LayerFactors& f, const Tensor& V) {
  Tensor t1({f.d_out, f.d_in}, 0.0), m({f.d_out, f.d_in}, 0.0);
  gemm_tn(f.d_out, f.d_in, f.d_out, f.QS.data().data(), V.data().data(), t1.data().data());
  gemm_nn(f.d_out, f.d_in, f.d_in, t1.data().data(), f.QA.data().data(), m.data().data());
  return m;
}

// Q_S M Q_A^T
Tensor from_eigenbasis(const LayerFactors& f, const Tensor& M) {
  Tensor t2({f.d_out, f.d_in}, 0.0), r({f.d_out, f.d_in}, 0.0);
  gemm_nn(f.d_out, f.d_in, f.d_out, f.QS.data().data(), M.data().data(), t2.data().data());
  gemm_nt(f.d_out, f.d_in, f.d_in, t2.data().data(), f.QA.data().data(), r.data().data());
  return r;
}

void require_finalized(const EkfacState& s) {
  require(s.finalized, ErrorCode::invalid_argument, "curvature state is not finalized");
}

}  // namespace

// ---- factor estimation -------------------------------------------------------

EkfacState accumulate_factors(const models::Checkpoint& ckpt, std::span<const Example> data, FisherMode mode,
                              std::uint64_t seed, double damping) {
  require(!data.empty(), ErrorCode::empty, "curvature needs a nonempty dataset");
  require(damping > 0.0, ErrorCode::config, "damping must be > 0");
  auto net = models::make_network(ckpt.spec);
  models::validate_dataset(*net, data);
  check_coverage(*net);

  EkfacState st;
  st.spec = ckpt.spec;
  st.damping = damping;
  st.mode = mode;
  st.seed = seed;
  st.excluded = net->excluded();
  const auto& layers = net->linear_layers();
  using Acc = std::vector<std::vector<double>>;  // [2*layer] = A, [2*layer+1] = S
  Acc zero;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    LayerFactors f;
    f.name = layers[k].name;
    f.layer = k;
    f.has_bias = layers[k].bias >= 0;
    f.d_in = layers[k].d_in + (f.has_bias ? 1 : 0);
    f.d_out = layers[k].d_out;
    f.n_samples = data.size();
    zero.emplace_back(f.d_in * f.d_in, 0.0);
    zero.emplace_back(f.d_out * f.d_out, 0.0);
    st.layers.push_back(std::move(f));
  }
  Acc sums = chunked_reduce(data.size(), zero, [&](std::size_t i, Acc& acc) {
    auto rows = example_rows(*net, ckpt.params, data[i], mode, seed, i);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].a.empty()) continue;
      const auto& f = st.layers[k];
      const std::size_t R = rows[k].a.dim(0);
      gemm_tn(f.d_in, f.d_in, R, rows[k].a.data().data(), rows[k].a.data().data(), acc[2 * k].data());
      gemm_tn(f.d_out, f.d_out, R, rows[k].g.data().data(), rows[k].g.data().data(), acc[2 * k + 1].data());
    }
  });
  const double inv = 1.0 / static_cast<double>(data.size());
  for (std::size_t k = 0; k < st.layers.size(); ++k) {
    auto& f = st.layers[k];
    f.A = Tensor({f.d_in, f.d_in}, std::move(sums[2 * k]));
    f.S = Tensor({f.d_out, f.d_out}, std::move(sums[2 * k + 1]));
    for (auto& x : f.A.data()) x *= inv;
    for (auto& x : f.S.data()) x *= inv;
  }
  return st;
}

void finalize(EkfacState& st, const models::Checkpoint& ckpt, std::span<const Example> data) {
  require(!data.empty(), ErrorCode::empty, "curvature needs a nonempty dataset");
  require(ckpt.spec == st.spec, ErrorCode::invalid_argument, "checkpoint architecture differs from curvature state");
  auto net = models::make_network(ckpt.spec);
  for (auto& f : st.layers) {
    auto ea = jacobi_eigen(f.A, 1e-12, "layer " + f.name + " input factor");
    auto es = jacobi_eigen(f.S, 1e-12, "layer " + f.name + " output-gradient factor");
    f.QA = std::move(ea.vectors);
    f.eig_A = std::move(ea.values);
    f.QS = std::move(es.vectors);
    f.eig_S = std::move(es.values);
  }
  using Acc = std::vector<std::vector<double>>;
  Acc zero;
  for (const auto& f : st.layers) zero.emplace_back(f.d_out * f.d_in, 0.0);
  Acc sums = chunked_reduce(data.size(), zero, [&](std::size_t i, Acc& acc) {
    auto rows = example_rows(*net, ckpt.params, data[i], st.mode, st.seed, i);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].a.empty()) continue;
      const auto& f = st.layers[k];
      Tensor G({f.d_out, f.d_in}, 0.0);
      gemm_tn(f.d_out, f.d_in, rows[k].a.dim(0), rows[k].g.data().data(), rows[k].a.data().data(), G.data().data());
      Tensor M = to_eigenbasis(f, G);
      for (std::size_t j = 0; j < M.size(); ++j) acc[k][j] += M[j] * M[j];
    }
  });
  const double inv = 1.0 / static_cast<double>(data.size());
  for (std::size_t k = 0; k < st.layers.size(); ++k) {
    auto& f = st.layers[k];
    f.lambda = Tensor({f.d_out, f.d_in}, std::move(sums[k]));
    for (auto& x : f.lambda.data()) x *= inv;
  }
  st.finalized = true;
}

EkfacState build_ekfac(const models::Checkpoint& ckpt, std::span<const Example> data, FisherMode mode,
                       std::uint64_t seed, double damping) {
  EkfacState st = accumulate_factors(ckpt, data, mode, seed, damping);
  finalize(st, ckpt, data);
  return st;
}

// ---- operators ------------------------------------------------------------------

std::size_t state_param_count(const EkfacState& state) { return models::make_network(state.spec)->param_count(); }

std::vector<double> ihvp(const EkfacState& state, std::span<const double> v) { return ihvp(state, v, state.damping); }

std::vector<double> ihvp(const EkfacState& state, std::span<const double> v, double damping) {
  require_finalized(state);
  require(damping > 0.0, ErrorCode::invalid_argument, "damping must be > 0");
  auto net = models::make_network(state.spec);
  require(v.size() == net->param_count(), ErrorCode::shape,
          "ihvp: vector has " + std::to_string(v.size()) + " entries, model has " +
              std::to_string(net->param_count()) + " parameters");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / damping;
  for (const auto& f : state.layers) {
    Tensor M = to_eigenbasis(f, layer_block(*net, f, v));
    for (std::size_t j = 0; j < M.size(); ++j) M[j] /= f.lambda[j] + damping;
    scatter_block(*net, f, from_eigenbasis(f, M), out);
  }
  return out;
}

std::vector<double> gvp(const EkfacState& state, std::span<const double> v) {
  require_finalized(state);
  auto net = models::make_network(state.spec);
  require(v.size() == net->param_count(), ErrorCode::shape, "gvp: vector length does not match the model");
  std::vector<double> out(v.size(), 0.0);
  for (const auto& f : state.layers) {
    Tensor M = to_eigenbasis(f, layer_block(*net, f, v));
    for (std::size_t j = 0; j < M.size(); ++j) M[j] *= f.lambda[j];
    scatter_block(*net, f, from_eigenbasis(f, M), out);
  }
  return out;
}

double quadratic_form(const EkfacState& state, std::span<const double> v) {
  require_finalized(state);
  auto net = models::make_network(state.spec);
  require(v.size() == net->param_count(), ErrorCode::shape, "quadratic form: vector length does not match the model");
  double q = 0.0;
  for (const auto& f : state.layers) {
    Tensor M = to_eigenbasis(f, layer_block(*net, f, v));
    for (std::size_t j = 0; j < M.size(); ++j) q += f.lambda[j] * M[j] * M[j];
  }
  return q;
}

Tensor materialize_dense(const EkfacState& state) {
  require_finalized(state);
  auto net = models::make_network(state.spec);
  const std::size_t P = net->param_count();
  require(P <= kDenseCap, ErrorCode::invalid_argument,
          "materialize_dense: " + std::to_string(P) + " parameters exceeds the cap of " + std::to_string(kDenseCap));
  Tensor D({P, P}, 0.0);
  for (const auto& f : state.layers) {
    const LinearLayer& l = net->linear_layers()[f.layer];
    // parameter index of block entry (i, j)
    std::vector<std::size_t> idx(f.d_out * f.d_in);
    for (std::size_t i = 0; i < f.d_out; ++i) {
      for (std::size_t j = 0; j < l.d_in; ++j) idx[i * f.d_in + j] = net->params()[l.weight].offset + i * l.d_in + j;
      if (f.has_bias) idx[i * f.d_in + l.d_in] = net->params()[l.bias].offset + i;
    }
    std::vector<double> u(f.d_out * f.d_in);
    for (std::size_t p = 0; p < f.d_out; ++p) {
      for (std::size_t q = 0; q < f.d_in; ++q) {
        const double lam = f.lambda.at(p, q);
        if (lam == 0.0) continue;
        for (std::size_t i = 0; i < f.d_out; ++i)
          for (std::size_t j = 0; j < f.d_in; ++j) u[i * f.d_in + j] = f.QS.at(i, p) * f.QA.at(j, q);
        for (std::size_t x = 0; x < u.size(); ++x) {
          const double ux = lam * u[x];
          double* row = D.data().data() + idx[x] * P;
          for (std::size_t y = 0; y < u.size(); ++y) row[idx[y]] += ux * u[y];
        }
      }
    }
  }
  return D;
}

// ---- serialization -----------------------------------------------------------------

namespace {

void put_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  w.f64s(t.data());
}

Tensor get_tensor(ByteReader& r) {
  Shape s(r.u32());
  for (auto& d : s) d = r.u64();
  auto data = r.f64s();
  require(shape_size(s) == data.size(), ErrorCode::format, "tensor payload does not match its shape");
  return Tensor(std::move(s), std::move(data));
}

}  // namespace

std::vector<std::uint8_t> encode_ekfac(const EkfacState& st) {
  ByteWriter spec;
  spec.str(st.spec.to_json().dump());
  ByteWriter w;
  w.f64(st.damping);
  w.u8(st.mode == FisherMode::sampled ? 0 : 1);
  w.u64(st.seed);
  w.u8(st.finalized ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(st.layers.size()));
  for (const auto& f : st.layers) {
    w.str(f.name);
    w.u64(f.layer);
    w.u64(f.d_in);
    w.u64(f.d_out);
    w.u8(f.has_bias ? 1 : 0);
    w.u64(f.n_samples);
    put_tensor(w, f.A);
    put_tensor(w, f.S);
    put_tensor(w, f.QA);
    put_tensor(w, f.QS);
    w.f64s(f.eig_A);
    w.f64s(f.eig_S);
    put_tensor(w, f.lambda);
  }
  w.u32(static_cast<std::uint32_t>(st.excluded.size()));
  for (const auto& e : st.excluded) {
    w.u32(static_cast<std::uint32_t>(e.param));
    w.str(e.reason);
  }
  return encode_container({{make_tag("SPEC"), spec.take()}, {make_tag("EKFC"), w.take()}});
}

EkfacState decode_ekfac(std::span<const std::uint8_t> bytes, const std::string& source) {
  const auto sections = decode_container(bytes, source);
  const Section* sp = find_section(sections, "SPEC");
  const Section* ek = find_section(sections, "EKFC");
  if (!sp || !ek) fail(ErrorCode::format, source + ": not a curvature file (missing SPEC/EKFC section)");
  EkfacState st;
  ByteReader rs(sp->payload, source);
  try {
    st.spec = models::ModelSpec::from_json(nlohmann::json::parse(rs.str()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, source + ": malformed spec: " + e.what());
  }
  ByteReader r(ek->payload, source);
  st.damping = r.f64();
  st.mode = r.u8() == 0 ? FisherMode::sampled : FisherMode::empirical;
  st.seed = r.u64();
  st.finalized = r.u8() != 0;
  st.layers.resize(r.u32());
  for (auto& f : st.layers) {
    f.name = r.str();
    f.layer = r.u64();
    f.d_in = r.u64();
    f.d_out = r.u64();
    f.has_bias = r.u8() != 0;
    f.n_samples = r.u64();
    f.A = get_tensor(r);
    f.S = get_tensor(r);
    f.QA = get_tensor(r);
    f.QS = get_tensor(r);
    f.eig_A = r.f64s();
    f.eig_S = r.f64s();
    f.lambda = get_tensor(r);
  }
  st.excluded.resize(r.u32());
  for (auto& e : st.excluded) {
    e.param = static_cast<int>(r.u32());
    e.reason = r.str();
  }
  require(r.done(), ErrorCode::format, source + ": trailing bytes in EKFC section");
  return st;
}

void save_ekfac(const EkfacState& state, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ekfac(state));
}

EkfacState load_ekfac(const std::filesystem::path& path) { return decode_ekfac(read_file_bytes(path), path.string()); }

}  // namespace infusion::curvature
