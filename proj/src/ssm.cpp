#include "hybridlab/ssm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "hybridlab/nn.hpp"
#include "hybridlab/ops.hpp"

namespace hybridlab {

void SsmConfig::validate() const {
  if (d_model <= 0 || d_ssm <= 0 || d_head_ssm <= 0) throw ContractError("SsmConfig: widths must be positive");
  if (d_ssm % d_head_ssm != 0) throw ContractError("SsmConfig: d_ssm must be divisible by d_head_ssm");
  if (n_conv < 1 || d_state < 1) throw ContractError("SsmConfig: need n_conv >= 1 and d_state >= 1");
  if (n_groups < 1 || n_heads() % n_groups != 0) throw ContractError("SsmConfig: heads must split evenly into groups");
  if (chunk < 1) throw ContractError("SsmConfig: chunk must be >= 1");
}

SsmParams SsmParams::init(const SsmConfig& cfg, CounterRng& rng, bool with_output) {
  cfg.validate();
  const std::int64_t h = cfg.n_heads();
  SsmParams p;
  p.in_proj = randn({cfg.d_model, cfg.in_proj_width()}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
  const double cb = 1.0 / std::sqrt(static_cast<double>(cfg.n_conv));
  p.conv_w = rand_uniform({cfg.conv_channels(), cfg.n_conv}, rng, -cb, cb);
  p.conv_b = rand_uniform({cfg.conv_channels()}, rng, -cb, cb);
  p.a_log = Tensor::zeros({h});
  p.dt_bias = Tensor::zeros({h});
  auto al = p.a_log.mutable_data();
  auto db = p.dt_bias.mutable_data();
  for (std::int64_t i = 0; i < h; ++i) {
    al[i] = std::log(rng.uniform(1.0, 16.0));
    // inverse softplus of a log-uniform step in [0.001, 0.1]
    const double dt = std::exp(rng.uniform(std::log(0.001), std::log(0.1)));
    db[i] = dt + std::log(-std::expm1(-dt));
  }
  p.d_skip = Tensor::full({h}, 1.0);
  p.norm_w = Tensor::full({cfg.d_ssm}, 1.0);
  if (with_output) {
    p.out_proj = randn({cfg.d_ssm, cfg.d_model}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_ssm)));
  }
  return p;
}

std::vector<Tensor*> SsmParams::tensors() {
  std::vector<Tensor*> out{&in_proj, &conv_w, &conv_b, &a_log, &d_skip, &dt_bias, &norm_w};
  if (out_proj.defined()) out.push_back(&out_proj);
  return out;
}

Tensor causal_conv1d(const Tensor& u, const Tensor& w, const Tensor& b) {
  if (u.rank() != 2 || w.rank() != 2 || b.rank() != 1 || w.dim(0) != u.dim(1) || b.dim(0) != u.dim(1)) {
    throw DimensionError("causal_conv1d: u " + shape_str(u.shape()) + ", w " + shape_str(w.shape()) + ", b " +
                         shape_str(b.shape()));
  }
  const std::int64_t len = u.dim(0);
  const std::int64_t ch = u.dim(1);
  const std::int64_t k = w.dim(1);
  auto us = u.data();
  auto ws = w.data();
  auto bs = b.data();
  std::vector<double> out(static_cast<std::size_t>(len * ch));
  for (std::int64_t t = 0; t < len; ++t) {
    for (std::int64_t c = 0; c < ch; ++c) {
      double acc = bs[c];
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t src = t - (k - 1) + j;
        if (src >= 0) acc += ws[c * k + j] * us[src * ch + c];
      }
      out[t * ch + c] = acc;
    }
  }
  Tensor y = detail::make_result({len, ch}, std::move(out), "causal_conv1d");
  if (detail::should_record({&u, &w, &b})) {
    detail::attach(y, [u, w, b, len, ch, k](std::span<const double> g) {
      auto us = u.data();
      auto ws = w.data();
      if (u.requires_grad()) {
        auto gu = detail::grad_buffer(u);
        for (std::int64_t t = 0; t < len; ++t) {
          for (std::int64_t c = 0; c < ch; ++c) {
            for (std::int64_t j = 0; j < k; ++j) {
              const std::int64_t src = t - (k - 1) + j;
              if (src >= 0) gu[src * ch + c] += ws[c * k + j] * g[t * ch + c];
            }
          }
        }
      }
      if (w.requires_grad()) {
        auto gw = detail::grad_buffer(w);
        for (std::int64_t t = 0; t < len; ++t) {
          for (std::int64_t c = 0; c < ch; ++c) {
            for (std::int64_t j = 0; j < k; ++j) {
              const std::int64_t src = t - (k - 1) + j;
              if (src >= 0) gw[c * k + j] += us[src * ch + c] * g[t * ch + c];
            }
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = detail::grad_buffer(b);
        for (std::int64_t t = 0; t < len; ++t) {
          for (std::int64_t c = 0; c < ch; ++c) gb[c] += g[t * ch + c];
        }
      }
    });
  }
  return y;
}

DecayState combine(const DecayState& first, const DecayState& second) {
  DecayState out;
  out.decay = first.decay * second.decay;
  out.state.resize(second.state.size());
  for (std::size_t i = 0; i < out.state.size(); ++i) out.state[i] = second.decay * first.state[i] + second.state[i];
  return out;
}

std::vector<DecayState> blelloch_exclusive_scan(std::span<const DecayState> items, std::size_t width) {
  const DecayState identity{1.0, std::vector<double>(width, 0.0)};
  const std::size_t n = items.size();
  if (n == 0) return {};
  const std::size_t padded = std::bit_ceil(n);
  std::vector<DecayState> a(items.begin(), items.end());
  a.resize(padded, identity);
  // up-sweep: a[right] holds the fold of its subtree
  for (std::size_t stride = 1; stride < padded; stride *= 2) {
    for (std::size_t i = 0; i + 2 * stride - 1 < padded; i += 2 * stride) {
      a[i + 2 * stride - 1] = combine(a[i + stride - 1], a[i + 2 * stride - 1]);
    }
  }
  // down-sweep: a[right] holds the prefix before its subtree
  a[padded - 1] = identity;
  for (std::size_t stride = padded / 2; stride >= 1; stride /= 2) {
    for (std::size_t i = 0; i + 2 * stride - 1 < padded; i += 2 * stride) {
      DecayState left = std::move(a[i + stride - 1]);
      a[i + stride - 1] = a[i + 2 * stride - 1];
      a[i + 2 * stride - 1] = combine(a[i + 2 * stride - 1], left);
    }
  }
  a.resize(n);
  return a;
}

namespace {

struct ScanDims {
  std::int64_t len, heads, p, groups, n;
  std::int64_t group_of(std::int64_t h) const { return h / (heads / groups); }
};

ScanDims scan_dims(const Tensor& x, const Tensor& dt, const Tensor& rate, const Tensor& b, const Tensor& c,
                   const Tensor& d) {
  if (x.rank() != 3 || dt.rank() != 2 || rate.rank() != 1 || b.rank() != 3 || c.rank() != 3 || d.rank() != 1) {
    throw DimensionError("selective_scan: expected x[L,H,P], dt[L,H], rate[H], B/C[L,G,N], D[H]");
  }
  ScanDims s{x.dim(0), x.dim(1), x.dim(2), b.dim(1), b.dim(2)};
  if (dt.shape() != Shape{s.len, s.heads} || rate.dim(0) != s.heads || d.dim(0) != s.heads ||
      b.dim(0) != s.len || c.shape() != b.shape() || s.groups < 1 || s.heads % s.groups != 0) {
    throw DimensionError("selective_scan: inconsistent shapes x " + shape_str(x.shape()) + ", B " +
                         shape_str(b.shape()));
  }
  for (double v : dt.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("selective_scan: step size must be finite and >= 0");
  }
  return s;
}

std::vector<double> scan_sequential(const ScanDims& s, std::span<const double> x, std::span<const double> dt,
                                    std::span<const double> rate, std::span<const double> b,
                                    std::span<const double> c, std::span<const double> d) {
  std::vector<double> y(static_cast<std::size_t>(s.len * s.heads * s.p), 0.0);
  std::vector<double> h(static_cast<std::size_t>(s.heads * s.p * s.n), 0.0);
  for (std::int64_t t = 0; t < s.len; ++t) {
    for (std::int64_t hd = 0; hd < s.heads; ++hd) {
      const std::int64_t g = s.group_of(hd);
      const double step = dt[t * s.heads + hd];
      const double a = std::exp(-step * rate[hd]);
      const double* bt = b.data() + (t * s.groups + g) * s.n;
      const double* ct = c.data() + (t * s.groups + g) * s.n;
      for (std::int64_t pi = 0; pi < s.p; ++pi) {
        const double xv = x[(t * s.heads + hd) * s.p + pi];
        double* hr = h.data() + (hd * s.p + pi) * s.n;
        double acc = 0.0;
        for (std::int64_t ni = 0; ni < s.n; ++ni) {
          hr[ni] = a * hr[ni] + step * xv * bt[ni];
          acc += ct[ni] * hr[ni];
        }
        y[(t * s.heads + hd) * s.p + pi] = acc + d[hd] * xv;
      }
    }
  }
  return y;
}

std::vector<double> scan_chunked(const ScanDims& s, std::int64_t chunk, std::span<const double> x,
                                 std::span<const double> dt, std::span<const double> rate, std::span<const double> b,
                                 std::span<const double> c, std::span<const double> d) {
  const std::int64_t n_chunks = (s.len + chunk - 1) / chunk;
  const std::int64_t width = s.p * s.n;
  std::vector<double> y(static_cast<std::size_t>(s.len * s.heads * s.p), 0.0);
  std::vector<double> cum(static_cast<std::size_t>(chunk));
  std::vector<double> cb(static_cast<std::size_t>(chunk * chunk));
  std::vector<DecayState> summaries(static_cast<std::size_t>(n_chunks));
  for (std::int64_t hd = 0; hd < s.heads; ++hd) {
    const std::int64_t g = s.group_of(hd);
    auto xrow = [&](std::int64_t t) { return x.data() + (t * s.heads + hd) * s.p; };
    auto brow = [&](std::int64_t t) { return b.data() + (t * s.groups + g) * s.n; };
    auto crow = [&](std::int64_t t) { return c.data() + (t * s.groups + g) * s.n; };
    // intra-chunk: y = (L o C B^T o dt) X, plus the chunk's own end state
    for (std::int64_t ci = 0; ci < n_chunks; ++ci) {
      const std::int64_t s0 = ci * chunk;
      const std::int64_t q = std::min(chunk, s.len - s0);
      double run = 0.0;
      for (std::int64_t i = 0; i < q; ++i) {
        run -= dt[(s0 + i) * s.heads + hd] * rate[hd];
        cum[i] = run;
      }
      for (std::int64_t i = 0; i < q; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          const double* ct = crow(s0 + i);
          const double* bs = brow(s0 + j);
          for (std::int64_t ni = 0; ni < s.n; ++ni) dot += ct[ni] * bs[ni];
          cb[i * chunk + j] = std::exp(cum[i] - cum[j]) * dt[(s0 + j) * s.heads + hd] * dot;
        }
      }
      for (std::int64_t i = 0; i < q; ++i) {
        double* yr = y.data() + ((s0 + i) * s.heads + hd) * s.p;
        for (std::int64_t j = 0; j <= i; ++j) {
          const double m = cb[i * chunk + j];
          const double* xs = xrow(s0 + j);
          for (std::int64_t pi = 0; pi < s.p; ++pi) yr[pi] += m * xs[pi];
        }
      }
      DecayState& sum = summaries[ci];
      sum.decay = std::exp(cum[q - 1]);
      sum.state.assign(static_cast<std::size_t>(width), 0.0);
      for (std::int64_t j = 0; j < q; ++j) {
        const double w = std::exp(cum[q - 1] - cum[j]) * dt[(s0 + j) * s.heads + hd];
        const double* xs = xrow(s0 + j);
        const double* bs = brow(s0 + j);
        for (std::int64_t pi = 0; pi < s.p; ++pi) {
          const double wx = w * xs[pi];
          for (std::int64_t ni = 0; ni < s.n; ++ni) sum.state[pi * s.n + ni] += wx * bs[ni];
        }
      }
    }
    // inter-chunk: incoming state of every chunk
    const std::vector<DecayState> carry = blelloch_exclusive_scan(summaries, static_cast<std::size_t>(width));
    for (std::int64_t ci = 0; ci < n_chunks; ++ci) {
      const std::int64_t s0 = ci * chunk;
      const std::int64_t q = std::min(chunk, s.len - s0);
      const std::vector<double>& hin = carry[ci].state;
      double run = 0.0;
      for (std::int64_t i = 0; i < q; ++i) {
        run -= dt[(s0 + i) * s.heads + hd] * rate[hd];
        const double decay = std::exp(run);
        const double* ct = crow(s0 + i);
        const double* xs = xrow(s0 + i);
        double* yr = y.data() + ((s0 + i) * s.heads + hd) * s.p;
        for (std::int64_t pi = 0; pi < s.p; ++pi) {
          double acc = 0.0;
          for (std::int64_t ni = 0; ni < s.n; ++ni) acc += ct[ni] * hin[pi * s.n + ni];
          yr[pi] += decay * acc + d[hd] * xs[pi];
        }
      }
    }
  }
  return y;
}

}  // namespace

Tensor selective_scan_sequential(const Tensor& x, const Tensor& dt, const Tensor& rate, const Tensor& b,
                                 const Tensor& c, const Tensor& d) {
  const ScanDims s = scan_dims(x, dt, rate, b, c, d);
  return detail::make_result(x.shape(),
                             scan_sequential(s, x.data(), dt.data(), rate.data(), b.data(), c.data(), d.data()),
                             "selective_scan_sequential");
}

Tensor selective_scan(const Tensor& x, const Tensor& dt, const Tensor& rate, const Tensor& b, const Tensor& c,
                      const Tensor& d, std::int64_t chunk) {
  if (chunk < 1) throw ContractError("selective_scan: chunk must be >= 1");
  const ScanDims s = scan_dims(x, dt, rate, b, c, d);
  Tensor y = detail::make_result(
      x.shape(), scan_chunked(s, chunk, x.data(), dt.data(), rate.data(), b.data(), c.data(), d.data()),
      "selective_scan");
  if (!detail::should_record({&x, &dt, &rate, &b, &c, &d})) return y;
  detail::attach(y, [x, dt, rate, b, c, d, s](std::span<const double> gy) {
    auto xs = x.data();
    auto dts = dt.data();
    auto rs = rate.data();
    auto bs = b.data();
    auto cs = c.data();
    auto ds = d.data();
    const std::int64_t hw = s.p * s.n;
    // forward states h_t for every step, recomputed sequentially
    std::vector<double> hist(static_cast<std::size_t>((s.len + 1) * s.heads * hw), 0.0);
    for (std::int64_t t = 0; t < s.len; ++t) {
      for (std::int64_t hd = 0; hd < s.heads; ++hd) {
        const std::int64_t g = s.group_of(hd);
        const double step = dts[t * s.heads + hd];
        const double a = std::exp(-step * rs[hd]);
        const double* prev = hist.data() + (t * s.heads + hd) * hw;
        double* cur = hist.data() + ((t + 1) * s.heads + hd) * hw;
        for (std::int64_t pi = 0; pi < s.p; ++pi) {
          const double xv = xs[(t * s.heads + hd) * s.p + pi];
          for (std::int64_t ni = 0; ni < s.n; ++ni) {
            cur[pi * s.n + ni] = a * prev[pi * s.n + ni] + step * xv * bs[(t * s.groups + g) * s.n + ni];
          }
        }
      }
    }
    std::vector<double> gx(xs.size(), 0.0), gdt(dts.size(), 0.0), gr(rs.size(), 0.0), gb(bs.size(), 0.0),
        gc(cs.size(), 0.0), gd(ds.size(), 0.0);
    std::vector<double> gh(static_cast<std::size_t>(s.heads * hw), 0.0);  // dL/dh_t carried backwards
    for (std::int64_t t = s.len - 1; t >= 0; --t) {
      for (std::int64_t hd = 0; hd < s.heads; ++hd) {
        const std::int64_t g = s.group_of(hd);
        const double step = dts[t * s.heads + hd];
        const double a = std::exp(-step * rs[hd]);
        const double* cur = hist.data() + ((t + 1) * s.heads + hd) * hw;
        const double* prev = hist.data() + (t * s.heads + hd) * hw;
        const double* bt = bs.data() + (t * s.groups + g) * s.n;
        const double* ct = cs.data() + (t * s.groups + g) * s.n;
        double* G = gh.data() + hd * hw;
        double da = 0.0;
        double dstep = 0.0;
        for (std::int64_t pi = 0; pi < s.p; ++pi) {
          const std::int64_t yi = (t * s.heads + hd) * s.p + pi;
          const double dy = gy[yi];
          const double xv = xs[yi];
          gd[hd] += dy * xv;
          double dx = ds[hd] * dy;
          for (std::int64_t ni = 0; ni < s.n; ++ni) {
            const std::int64_t k = pi * s.n + ni;
            gc[(t * s.groups + g) * s.n + ni] += dy * cur[k];
            G[k] += dy * ct[ni];
            dx += step * G[k] * bt[ni];
            gb[(t * s.groups + g) * s.n + ni] += step * G[k] * xv;
            dstep += G[k] * xv * bt[ni];
            da += G[k] * prev[k];
            G[k] *= a;  // becomes a_t * G_t, the carry into h_{t-1}
          }
          gx[yi] += dx;
        }
        gdt[t * s.heads + hd] += dstep - rs[hd] * a * da;
        gr[hd] += -step * a * da;
      }
    }
    auto flush = [](const Tensor& t, const std::vector<double>& acc) {
      if (!t.requires_grad()) return;
      auto buf = detail::grad_buffer(t);
      for (std::size_t i = 0; i < acc.size(); ++i) buf[i] += acc[i];
    };
    flush(x, gx);
    flush(dt, gdt);
    flush(rate, gr);
    flush(b, gb);
    flush(c, gc);
    flush(d, gd);
  });
  return y;
}

SsmState SsmState::zeros(const SsmConfig& cfg) {
  cfg.validate();
  SsmState s;
  s.conv.assign(static_cast<std::size_t>(cfg.n_conv * cfg.conv_channels()), 0.0);
  s.h.assign(static_cast<std::size_t>(cfg.d_ssm * cfg.d_state), 0.0);
  return s;
}

namespace {

void check_params(const SsmConfig& cfg, const SsmParams& p) {
  cfg.validate();
  const std::int64_t h = cfg.n_heads();
  if (p.in_proj.shape() != Shape{cfg.d_model, cfg.in_proj_width()} ||
      p.conv_w.shape() != Shape{cfg.conv_channels(), cfg.n_conv} || p.conv_b.shape() != Shape{cfg.conv_channels()} ||
      p.a_log.shape() != Shape{h} || p.d_skip.shape() != Shape{h} || p.dt_bias.shape() != Shape{h} ||
      p.norm_w.shape() != Shape{cfg.d_ssm}) {
    throw DimensionError("ssm: parameter shapes do not match SsmConfig");
  }
  if (p.out_proj.defined() && p.out_proj.shape() != Shape{cfg.d_ssm, cfg.d_model}) {
    throw DimensionError("ssm: out_proj shape does not match SsmConfig");
  }
}

Tensor project_out(const Tensor& inner, const SsmParams& p) {
  if (!p.out_proj.defined()) throw ContractError("ssm: parameters have no output projection");
  return matmul(inner, p.out_proj);
}

}  // namespace

Tensor ssm_inner_forward(const Tensor& x, const SsmConfig& cfg, const SsmParams& p, std::int64_t chunk) {
  check_params(cfg, p);
  if (x.rank() != 2 || x.dim(1) != cfg.d_model) throw DimensionError("ssm: expected x[L, d_model]");
  const std::int64_t len = x.dim(0);
  const std::int64_t h = cfg.n_heads();
  const std::int64_t gn = cfg.n_groups * cfg.d_state;
  Tensor proj = matmul(x, p.in_proj);
  Tensor z = slice_last(proj, 0, cfg.d_ssm);
  Tensor xbc = silu(causal_conv1d(slice_last(proj, cfg.d_ssm, cfg.conv_channels()), p.conv_w, p.conv_b));
  Tensor dt = softplus(broadcast_add(slice_last(proj, cfg.d_ssm + cfg.conv_channels(), h), p.dt_bias));
  Tensor xi = reshape(slice_last(xbc, 0, cfg.d_ssm), {len, h, cfg.d_head_ssm});
  Tensor bm = reshape(slice_last(xbc, cfg.d_ssm, gn), {len, cfg.n_groups, cfg.d_state});
  Tensor cm = reshape(slice_last(xbc, cfg.d_ssm + gn, gn), {len, cfg.n_groups, cfg.d_state});
  Tensor y = selective_scan(xi, dt, exponential(p.a_log), bm, cm, p.d_skip, chunk);
  return rms_norm(mul(reshape(y, {len, cfg.d_ssm}), silu(z)), p.norm_w);
}

Tensor ssm_scan(const Tensor& x, const SsmConfig& cfg, const SsmParams& p, std::int64_t chunk) {
  return project_out(ssm_inner_forward(x, cfg, p, chunk), p);
}

Tensor ssm_forward(const Tensor& x, const SsmConfig& cfg, const SsmParams& p) {
  return ssm_scan(x, cfg, p, cfg.chunk);
}

Tensor ssm_inner_step(SsmState& state, const Tensor& x_t, const SsmConfig& cfg, const SsmParams& p) {
  check_params(cfg, p);
  if (x_t.shape() != Shape{1, cfg.d_model}) throw DimensionError("ssm_step: expected x_t[1, d_model]");
  const std::int64_t ch = cfg.conv_channels();
  const std::int64_t k = cfg.n_conv;
  const std::int64_t h = cfg.n_heads();
  const std::int64_t pw = cfg.d_head_ssm;
  const std::int64_t n = cfg.d_state;
  const std::int64_t gn = cfg.n_groups * n;
  if (static_cast<std::int64_t>(state.conv.size()) != k * ch || static_cast<std::int64_t>(state.h.size()) != cfg.d_ssm * n) {
    throw DimensionError("ssm_step: state does not match SsmConfig");
  }
  Tensor proj = matmul(x_t, p.in_proj);
  Tensor z = slice_last(proj, 0, cfg.d_ssm);
  auto ps = proj.data();
  // shift the conv window and append the new featurized input
  std::copy(state.conv.begin() + ch, state.conv.end(), state.conv.begin());
  std::copy(ps.begin() + cfg.d_ssm, ps.begin() + cfg.d_ssm + ch, state.conv.begin() + (k - 1) * ch);
  auto ws = p.conv_w.data();
  auto bs = p.conv_b.data();
  std::vector<double> conv(static_cast<std::size_t>(ch));
  for (std::int64_t c = 0; c < ch; ++c) {
    double acc = bs[c];
    for (std::int64_t j = 0; j < k; ++j) acc += ws[c * k + j] * state.conv[j * ch + c];
    conv[c] = acc;
  }
  Tensor xbc = silu(Tensor::from_vector({1, ch}, std::move(conv)));
  Tensor dt = softplus(broadcast_add(slice_last(proj, cfg.d_ssm + ch, h), p.dt_bias));
  auto xs = xbc.data();
  auto dts = dt.data();
  auto al = p.a_log.data();
  auto dsk = p.d_skip.data();
  const std::int64_t heads_per_group = h / cfg.n_groups;
  std::vector<double> y(static_cast<std::size_t>(cfg.d_ssm));
  for (std::int64_t hd = 0; hd < h; ++hd) {
    const std::int64_t g = hd / heads_per_group;
    const double step = dts[hd];
    const double a = std::exp(-step * std::exp(al[hd]));
    const double* bt = xs.data() + cfg.d_ssm + g * n;
    const double* ct = xs.data() + cfg.d_ssm + gn + g * n;
    for (std::int64_t pi = 0; pi < pw; ++pi) {
      const double xv = xs[hd * pw + pi];
      double* hr = state.h.data() + (hd * pw + pi) * n;
      double acc = 0.0;
      for (std::int64_t ni = 0; ni < n; ++ni) {
        hr[ni] = a * hr[ni] + step * xv * bt[ni];
        acc += ct[ni] * hr[ni];
      }
      y[hd * pw + pi] = acc + dsk[hd] * xv;
    }
  }
  for (double v : state.h) {
    if (!std::isfinite(v)) throw NumericError("ssm_step: non-finite state");
  }
  ++state.position;
  return rms_norm(mul(Tensor::from_vector({1, cfg.d_ssm}, std::move(y)), silu(z)), p.norm_w);
}

Tensor ssm_step(SsmState& state, const Tensor& x_t, const SsmConfig& cfg, const SsmParams& p) {
  return project_out(ssm_inner_step(state, x_t, cfg, p), p);
}

}  // namespace hybridlab
