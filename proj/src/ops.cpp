#include "hybridlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hybridlab {

using detail::attach;
using detail::grad_buffer;
using detail::make_result;
using detail::should_record;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_scalar(double v) {
  if (v > 30.0) return v;
  return std::log1p(std::exp(v));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  Tensor y = make_result(x.shape(), std::move(out), name);
  if (should_record({&x})) {
    attach(y, [x, deriv](std::span<const double> g) {
      auto gx = grad_buffer(x);
      auto xs = x.data();
      for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += g[i] * deriv(xs[i]);
    });
  }
  return y;
}

// Row count / width split for ops that act on the last axis.
struct Rows {
  std::int64_t n;
  std::int64_t width;
};

Rows last_axis_rows(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": rank-0 input");
  const std::int64_t w = x.dim(-1);
  if (w < 1) throw DimensionError(std::string(op) + ": empty last dimension");
  return {x.numel() / w, w};
}

// Broadcast bookkeeping: x viewed as [outer, inner] where inner = numel(w-aligned axes),
// each aligned axis either matches or has w extent 1.
std::vector<std::int64_t> broadcast_index(const Tensor& x, const Tensor& w, const char* op) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws.size() > xs.size()) throw DimensionError(std::string(op) + ": weight rank exceeds input rank");
  const std::size_t off = xs.size() - ws.size();
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (ws[i] != xs[off + i] && ws[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(ws) + " onto " +
                           shape_str(xs));
    }
  }
  // map every x element to a w element
  std::int64_t inner = 1;
  for (std::size_t i = off; i < xs.size(); ++i) inner *= xs[i];
  std::vector<std::int64_t> map(static_cast<std::size_t>(inner));
  std::vector<std::int64_t> coord(ws.size(), 0);
  for (std::int64_t k = 0; k < inner; ++k) {
    std::int64_t wi = 0;
    for (std::size_t a = 0; a < ws.size(); ++a) wi = wi * ws[a] + (ws[a] == 1 ? 0 : coord[a]);
    map[static_cast<std::size_t>(k)] = wi;
    for (std::size_t a = ws.size(); a-- > 0;) {
      if (++coord[a] < xs[off + a]) break;
      coord[a] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[i];
  Tensor y = make_result(a.shape(), std::move(out), "add");
  if (should_record({&a, &b})) {
    attach(y, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] - bs[i];
  Tensor y = make_result(a.shape(), std::move(out), "sub");
  if (should_record({&a, &b})) {
    attach(y, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  Tensor y = make_result(a.shape(), std::move(out), "mul");
  if (should_record({&a, &b})) {
    attach(y, [a, b](std::span<const double> g) {
      auto as = a.data();
      auto bs = b.data();
      if (a.requires_grad()) {
        auto ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor broadcast_mul(const Tensor& x, const Tensor& w) {
  auto map = broadcast_index(x, w, "broadcast_mul");
  const auto inner = static_cast<std::int64_t>(map.size());
  auto xs = x.data();
  auto ws = w.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * ws[map[i % inner]];
  Tensor y = make_result(x.shape(), std::move(out), "broadcast_mul");
  if (should_record({&x, &w})) {
    attach(y, [x, w, map = std::move(map), inner](std::span<const double> g) {
      auto xs = x.data();
      auto ws = w.data();
      if (x.requires_grad()) {
        auto gx = grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ws[map[i % inner]];
      }
      if (w.requires_grad()) {
        auto gw = grad_buffer(w);
        for (std::size_t i = 0; i < g.size(); ++i) gw[map[i % inner]] += g[i] * xs[i];
      }
    });
  }
  return y;
}

Tensor broadcast_add(const Tensor& x, const Tensor& w) {
  auto map = broadcast_index(x, w, "broadcast_add");
  const auto inner = static_cast<std::int64_t>(map.size());
  auto xs = x.data();
  auto ws = w.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] + ws[map[i % inner]];
  Tensor y = make_result(x.shape(), std::move(out), "broadcast_add");
  if (should_record({&x, &w})) {
    attach(y, [x, w, map = std::move(map), inner](std::span<const double> g) {
      if (x.requires_grad()) {
        auto gx = grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (w.requires_grad()) {
        auto gw = grad_buffer(w);
        for (std::size_t i = 0; i < g.size(); ++i) gw[map[i % inner]] += g[i];
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2) {
    throw DimensionError("matmul: expected a[..., k] and b[k, n], got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::int64_t k = a.dim(-1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::int64_t n = b.dim(1);
  const std::int64_t m = k == 0 ? 0 : a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;

  const double* ap = a.data().data();
  const double* bp = b.data().data();
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = ap + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = bp + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor y = make_result(std::move(out_shape), std::move(out), "matmul");
  if (should_record({&a, &b})) {
    attach(y, [a, b, m, k, n](std::span<const double> g) {
      const double* ap = a.data().data();
      const double* bp = b.data().data();
      const double* gp = g.data();
      if (a.requires_grad()) {
        double* ga = grad_buffer(a).data();
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = gp + i * n;
          for (std::int64_t p = 0; p < k; ++p) {
            const double* brow = bp + p * n;
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        double* gb = grad_buffer(b).data();
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = gp + i * n;
          const double* arow = ap + i * k;
          for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* gbrow = gb + p * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid", [](double v) { return sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 - s);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_scalar, sigmoid_scalar);
}

Tensor exponential(const Tensor& x) {
  return unary(
      x, "exponential", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = make_result({1}, {acc}, "sum");
  if (should_record({&x})) {
    attach(y, [x](std::span<const double> g) {
      auto gx = grad_buffer(x);
      for (auto& v : gx) v += g[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax_lastdim(const Tensor& x) {
  const Rows r = last_axis_rows(x, "softmax_lastdim");
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::int64_t i = 0; i < r.n; ++i) {
    const double* row = xs.data() + i * r.width;
    double* orow = out.data() + i * r.width;
    const double mx = *std::max_element(row, row + r.width);
    double z = 0.0;
    for (std::int64_t j = 0; j < r.width; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::int64_t j = 0; j < r.width; ++j) orow[j] /= z;
  }
  Tensor y = make_result(x.shape(), std::move(out), "softmax_lastdim");
  if (should_record({&x})) {
    attach(y, [x, r, yimpl = y.impl()](std::span<const double> g) {
      auto gx = grad_buffer(x);
      const auto& ys = yimpl->data;
      for (std::int64_t i = 0; i < r.n; ++i) {
        const std::int64_t o = i * r.width;
        double dotp = 0.0;
        for (std::int64_t j = 0; j < r.width; ++j) dotp += g[o + j] * ys[o + j];
        for (std::int64_t j = 0; j < r.width; ++j) gx[o + j] += ys[o + j] * (g[o + j] - dotp);
      }
    });
  }
  return y;
}

Tensor rms_normalize(const Tensor& x, double eps) {
  const Rows r = last_axis_rows(x, "rms_normalize");
  auto xs = x.data();
  std::vector<double> out(xs.size());
  std::vector<double> inv(static_cast<std::size_t>(r.n));
  for (std::int64_t i = 0; i < r.n; ++i) {
    const double* row = xs.data() + i * r.width;
    double ss = 0.0;
    for (std::int64_t j = 0; j < r.width; ++j) ss += row[j] * row[j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(r.width) + eps);
    for (std::int64_t j = 0; j < r.width; ++j) out[i * r.width + j] = row[j] * inv[i];
  }
  Tensor y = make_result(x.shape(), std::move(out), "rms_normalize");
  if (should_record({&x})) {
    attach(y, [x, r, inv = std::move(inv)](std::span<const double> g) {
      auto gx = grad_buffer(x);
      auto xs = x.data();
      const double w = static_cast<double>(r.width);
      for (std::int64_t i = 0; i < r.n; ++i) {
        const std::int64_t o = i * r.width;
        double gxdot = 0.0;
        for (std::int64_t j = 0; j < r.width; ++j) gxdot += g[o + j] * xs[o + j];
        const double c = inv[i] * inv[i] * inv[i] * gxdot / w;
        for (std::int64_t j = 0; j < r.width; ++j) gx[o + j] += g[o + j] * inv[i] - c * xs[o + j];
      }
    });
  }
  return y;
}

Tensor standardize(const Tensor& x, double eps) {
  const Rows r = last_axis_rows(x, "standardize");
  auto xs = x.data();
  const double w = static_cast<double>(r.width);
  std::vector<double> out(xs.size());
  std::vector<double> inv(static_cast<std::size_t>(r.n));
  for (std::int64_t i = 0; i < r.n; ++i) {
    const double* row = xs.data() + i * r.width;
    double mu = 0.0;
    for (std::int64_t j = 0; j < r.width; ++j) mu += row[j];
    mu /= w;
    double var = 0.0;
    for (std::int64_t j = 0; j < r.width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= w;
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < r.width; ++j) out[i * r.width + j] = (row[j] - mu) * inv[i];
  }
  Tensor y = make_result(x.shape(), std::move(out), "standardize");
  if (should_record({&x})) {
    attach(y, [x, r, inv = std::move(inv), yimpl = y.impl()](std::span<const double> g) {
      auto gx = grad_buffer(x);
      const auto& ys = yimpl->data;
      const double w = static_cast<double>(r.width);
      for (std::int64_t i = 0; i < r.n; ++i) {
        const std::int64_t o = i * r.width;
        double gsum = 0.0;
        double gydot = 0.0;
        for (std::int64_t j = 0; j < r.width; ++j) {
          gsum += g[o + j];
          gydot += g[o + j] * ys[o + j];
        }
        for (std::int64_t j = 0; j < r.width; ++j) {
          gx[o + j] += inv[i] * (g[o + j] - gsum / w - ys[o + j] * gydot / w);
        }
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto xs = x.data();
  Tensor y = Tensor::from_vector(std::move(shape), std::vector<double>(xs.begin(), xs.end()));
  if (should_record({&x})) {
    attach(y, [x](std::span<const double> g) {
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t length) {
  const Rows r = last_axis_rows(x, "slice_last");
  if (start < 0 || length < 0 || start + length > r.width) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") outside last extent " + std::to_string(r.width));
  }
  auto xs = x.data();
  std::vector<double> out(static_cast<std::size_t>(r.n * length));
  for (std::int64_t i = 0; i < r.n; ++i) {
    std::copy_n(xs.data() + i * r.width + start, length, out.data() + i * length);
  }
  Shape shape = x.shape();
  shape.back() = length;
  Tensor y = Tensor::from_vector(std::move(shape), std::move(out));
  if (should_record({&x})) {
    attach(y, [x, r, start, length](std::span<const double> g) {
      auto gx = grad_buffer(x);
      for (std::int64_t i = 0; i < r.n; ++i) {
        for (std::int64_t j = 0; j < length; ++j) gx[i * r.width + start + j] += g[i * length + j];
      }
    });
  }
  return y;
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    pl.pop_back();
    if (pl != lead) throw DimensionError("concat_last: leading extents differ");
    total += p.dim(-1);
  }
  const std::int64_t rows = shape_numel(lead);
  std::vector<double> out(static_cast<std::size_t>(rows * total));
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(-1);
    auto ps = p.data();
    for (std::int64_t i = 0; i < rows; ++i) std::copy_n(ps.data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor y = Tensor::from_vector(std::move(shape), std::move(out));
  bool record = false;
  for (const auto& p : parts) record = record || should_record({&p});
  if (record) {
    std::vector<Tensor> keep(parts.begin(), parts.end());
    attach(y, [keep, rows, total](std::span<const double> g) {
      std::int64_t off = 0;
      for (const auto& p : keep) {
        const std::int64_t w = p.dim(-1);
        if (p.requires_grad()) {
          auto gp = grad_buffer(p);
          for (std::int64_t i = 0; i < rows; ++i) {
            for (std::int64_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
          }
        }
        off += w;
      }
    });
  }
  return y;
}

Tensor take_rows(const Tensor& table, std::span<const std::int64_t> idx) {
  if (table.rank() != 2) throw DimensionError("take_rows: table must be 2-D");
  const std::int64_t n = table.dim(0);
  const std::int64_t w = table.dim(1);
  auto ts = table.data();
  std::vector<double> out(idx.size() * static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw DimensionError("take_rows: index out of range");
    std::copy_n(ts.data() + idx[i] * w, w, out.data() + static_cast<std::int64_t>(i) * w);
  }
  Tensor y = Tensor::from_vector({static_cast<std::int64_t>(idx.size()), w}, std::move(out));
  if (should_record({&table})) {
    std::vector<std::int64_t> ids(idx.begin(), idx.end());
    attach(y, [table, ids = std::move(ids), w](std::span<const double> g) {
      auto gt = grad_buffer(table);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::int64_t j = 0; j < w; ++j) gt[ids[i] * w + j] += g[static_cast<std::int64_t>(i) * w + j];
      }
    });
  }
  return y;
}

Tensor scatter_rows(const Tensor& rows, std::span<const std::int64_t> idx, std::int64_t n_rows) {
  if (rows.rank() != 2 || rows.dim(0) != static_cast<std::int64_t>(idx.size())) {
    throw DimensionError("scatter_rows: rows must be [len(idx), w]");
  }
  const std::int64_t w = rows.dim(1);
  auto rs = rows.data();
  std::vector<double> out(static_cast<std::size_t>(n_rows * w), 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n_rows) throw DimensionError("scatter_rows: index out of range");
    for (std::int64_t j = 0; j < w; ++j) out[idx[i] * w + j] += rs[static_cast<std::int64_t>(i) * w + j];
  }
  Tensor y = make_result({n_rows, w}, std::move(out), "scatter_rows");
  if (should_record({&rows})) {
    std::vector<std::int64_t> ids(idx.begin(), idx.end());
    attach(y, [rows, ids = std::move(ids), w](std::span<const double> g) {
      auto gr = grad_buffer(rows);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::int64_t j = 0; j < w; ++j) gr[static_cast<std::int64_t>(i) * w + j] += g[ids[i] * w + j];
      }
    });
  }
  return y;
}

Tensor pick_cols(const Tensor& x, std::span<const std::int64_t> cols) {
  if (x.rank() != 2 || x.dim(0) != static_cast<std::int64_t>(cols.size())) {
    throw DimensionError("pick_cols: x must be [len(cols), e]");
  }
  const std::int64_t e = x.dim(1);
  auto xs = x.data();
  std::vector<double> out(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] < 0 || cols[i] >= e) throw DimensionError("pick_cols: column out of range");
    out[i] = xs[static_cast<std::int64_t>(i) * e + cols[i]];
  }
  Tensor y = Tensor::from_vector({static_cast<std::int64_t>(cols.size()), 1}, std::move(out));
  if (should_record({&x})) {
    std::vector<std::int64_t> cs(cols.begin(), cols.end());
    attach(y, [x, cs = std::move(cs), e](std::span<const double> g) {
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < cs.size(); ++i) gx[static_cast<std::int64_t>(i) * e + cs[i]] += g[i];
    });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(targets.size())) {
    throw DimensionError("cross_entropy: logits must be [len(targets), vocab]");
  }
  const std::int64_t n = logits.dim(0);
  const std::int64_t v = logits.dim(1);
  auto ls = logits.data();
  std::vector<double> probs(ls.size(), 0.0);
  double total = 0.0;
  std::int64_t counted = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (targets[i] < 0) continue;
    if (targets[i] >= v) throw DimensionError("cross_entropy: target id out of range");
    const double* row = ls.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double logz = mx + std::log(z);
    total += logz - row[targets[i]];
    for (std::int64_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - logz);
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy: every target is ignored");
  Tensor y = make_result({1}, {total / static_cast<double>(counted)}, "cross_entropy");
  if (should_record({&logits})) {
    std::vector<std::int64_t> ts(targets.begin(), targets.end());
    attach(y, [logits, ts = std::move(ts), probs = std::move(probs), n, v,
               counted](std::span<const double> g) {
      auto gl = grad_buffer(logits);
      const double s = g[0] / static_cast<double>(counted);
      for (std::int64_t i = 0; i < n; ++i) {
        if (ts[i] < 0) continue;
        for (std::int64_t j = 0; j < v; ++j) gl[i * v + j] += s * probs[i * v + j];
        gl[i * v + ts[i]] -= s;
      }
    });
  }
  return y;
}

}  // namespace hybridlab
