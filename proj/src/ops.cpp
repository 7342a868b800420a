#include "retro3d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "kernels.hpp"

namespace retro3d {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto x = a.value().data(), y = b.value().data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, b},
                         [](std::span<const double> g, GradAccumulator& acc) {
                           for (std::size_t s = 0; s < 2; ++s) {
                             if (!acc.wants(s)) continue;
                             auto d = acc[s];
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                         });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto x = a.value().data(), y = b.value().data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, b},
                         [](std::span<const double> g, GradAccumulator& acc) {
                           if (acc.wants(0)) {
                             auto d = acc[0];
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (acc.wants(1)) {
                             auto d = acc[1];
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                           }
                         });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor av = a.value(), bv = b.value();
  auto x = av.data(), y = bv.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, b},
                         [av, bv](std::span<const double> g, GradAccumulator& acc) {
                           if (acc.wants(0)) {
                             auto d = acc[0];
                             auto y = bv.data();
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
                           }
                           if (acc.wants(1)) {
                             auto d = acc[1];
                             auto x = av.data();
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
                           }
                         });
}

Var scale(const Var& a, double factor) {
  auto x = a.value().data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a},
                         [factor](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
                         });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw DimensionError("scale_by: factor must have one element");
  Tensor av = a.value();
  double factor = s.value()[0];
  auto x = av.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, s},
                         [av, factor](std::span<const double> g, GradAccumulator& acc) {
                           auto x = av.data();
                           if (acc.wants(0)) {
                             auto d = acc[0];
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
                           }
                           if (acc.wants(1)) {
                             double total = 0.0;
                             for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * x[i];
                             acc[1][0] += total;
                           }
                         });
}

Var add_rowvec(const Var& x, const Var& b) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  if (b.value().size() != cols) {
    throw DimensionError("add_rowvec: vector of " + std::to_string(b.value().size()) +
                         " values for " + std::to_string(cols) + " columns");
  }
  auto xv = x.value().data(), bv = b.value().data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  return x.tape().record(Tensor(x.shape(), std::move(out)), {x, b},
                         [rows, cols](std::span<const double> g, GradAccumulator& acc) {
                           if (acc.wants(0)) {
                             auto d = acc[0];
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (acc.wants(1)) {
                             auto d = acc[1];
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
                           }
                         });
}

Var scale_rows(const Var& x, std::span<const double> factors) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  if (factors.size() != rows) throw DimensionError("scale_rows: one factor per row required");
  std::vector<double> f(factors.begin(), factors.end());
  auto xv = x.value().data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * f[r];
  return x.tape().record(Tensor(x.shape(), std::move(out)), {x},
                         [f = std::move(f), cols](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t r = 0; r < f.size(); ++r)
                             for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[r * cols + c] * f[r];
                         });
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor av = a.value(), bv = b.value();
  std::vector<double> out(m * n, 0.0);
  kernels::gemm(av.data().data(), bv.data().data(), out.data(), m, k, n);
  return a.tape().record(
      Tensor({m, n}, std::move(out)), {a, b},
      [av, bv, m, k, n](std::span<const double> g, GradAccumulator& acc) {
        if (acc.wants(0)) {  // dA = G Bᵀ
          kernels::gemm_nt(g.data(), bv.data().data(), acc[0].data(), m, n, k);
        }
        if (acc.wants(1)) {  // dB = Aᵀ G
          kernels::gemm_tn(av.data().data(), g.data(), acc[1].data(), m, k, n);
        }
      });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "ᵀ");
  }
  Tensor av = a.value(), bv = b.value();
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nt(av.data().data(), bv.data().data(), out.data(), m, k, n);
  return a.tape().record(
      Tensor({m, n}, std::move(out)), {a, b},
      [av, bv, m, k, n](std::span<const double> g, GradAccumulator& acc) {
        if (acc.wants(0)) {  // dA = G B
          kernels::gemm(g.data(), bv.data().data(), acc[0].data(), m, n, k);
        }
        if (acc.wants(1)) {  // dB = Gᵀ A
          kernels::gemm_tn(g.data(), av.data().data(), acc[1].data(), m, n, k);
        }
      });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  kernels::transpose(a.value().data().data(), out.data(), m, n);
  return a.tape().record(Tensor({n, m}, std::move(out)), {a},
                         [m, n](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[j * m + i];
                         });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](std::span<const double> g, GradAccumulator& acc) {
    auto d = acc[0];
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record(Tensor::scalar(total), {a},
                         [](std::span<const double> g, GradAccumulator& acc) {
                           for (double& d : acc[0]) d += g[0];
                         });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var relu(const Var& x) {
  Tensor xv = x.value();
  auto in = xv.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return x.tape().record(Tensor(x.shape(), std::move(out)), {x},
                         [xv](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           auto in = xv.data();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (in[i] > 0.0) d[i] += g[i];
                         });
}

Var gelu(const Var& x) {
  Tensor xv = x.value();
  auto in = xv.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
  return x.tape().record(
      Tensor(x.shape(), std::move(out)), {x}, [xv](std::span<const double> g, GradAccumulator& acc) {
        auto d = acc[0];
        auto in = xv.data();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double cdf = 0.5 * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
          double pdf = inv_sqrt_2pi * std::exp(-0.5 * in[i] * in[i]);
          d[i] += g[i] * (cdf + in[i] * pdf);
        }
      });
}

Var softmax_lastdim(const Var& x, std::span<const std::uint8_t> mask) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  if (!mask.empty() && mask.size() != x.value().size()) {
    throw DimensionError("softmax_lastdim: mask size differs from input");
  }
  auto in = x.value().data();
  std::vector<double> out(in.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask.empty() || mask[r * cols + c]) peak = std::max(peak, row[c]);
    if (!std::isfinite(peak)) throw DimensionError("softmax_lastdim: fully masked row");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask.empty() || mask[r * cols + c]) {
        dst[c] = std::exp(row[c] - peak);
        total += dst[c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  Tensor y(x.shape(), std::move(out));
  return x.tape().record(y, {x}, [y, rows, cols](std::span<const double> g, GradAccumulator& acc) {
    auto d = acc[0];
    auto p = y.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * p[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        d[r * cols + c] += p[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

Var log_softmax_lastdim(const Var& x) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  auto in = x.value().data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - peak);
    double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  Tensor y(x.shape(), std::move(out));
  return x.tape().record(y, {x}, [y, rows, cols](std::span<const double> g, GradAccumulator& acc) {
    auto d = acc[0];
    auto ls = y.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        d[r * cols + c] += g[r * cols + c] - std::exp(ls[r * cols + c]) * gsum;
    }
  });
}

Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw DimensionError("layernorm: gain/bias must match the last dimension");
  }
  auto in = x.value().data();
  auto gv = gain.value().data(), bv = bias.value().data();
  std::vector<double> xhat(in.size()), inv_std(rows), out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[r * cols + c] = (row[c] - mu) * inv_std[r];
      out[r * cols + c] = xhat[r * cols + c] * gv[c] + bv[c];
    }
  }
  Tensor gain_v = gain.value();
  return x.tape().record(
      Tensor(x.shape(), std::move(out)), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gain_v, rows, cols](
          std::span<const double> g, GradAccumulator& acc) {
        auto gv = gain_v.data();
        if (acc.wants(0)) {
          auto d = acc[0];
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              double gh = g[r * cols + c] * gv[c];
              s1 += gh;
              s2 += gh * xhat[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
              double gh = g[r * cols + c] * gv[c];
              d[r * cols + c] += inv_std[r] * (gh - s1 / n - xhat[r * cols + c] * s2 / n);
            }
          }
        }
        if (acc.wants(1)) {
          auto d = acc[1];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c] * xhat[r * cols + c];
        }
        if (acc.wants(2)) {
          auto d = acc[2];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
        }
      });
}

Var dropout(const Var& x, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? 0.0 : keep_scale;
  }
  auto in = x.value().data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask[i];
  return x.tape().record(Tensor(x.shape(), std::move(out)), {x},
                         [mask = std::move(mask)](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * mask[i];
                         });
}

Var gather_rows(const Var& x, std::span<const int> index) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  std::vector<int> idx(index.begin(), index.end());
  auto in = x.value().data();
  std::vector<double> out(idx.size() * cols, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= rows) throw DimensionError("gather_rows: index out of range");
    std::copy_n(in.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  Tensor value({idx.size(), cols}, std::move(out));
  return x.tape().record(std::move(value), {x},
                         [idx = std::move(idx), cols](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             if (idx[r] < 0) continue;
                             for (std::size_t c = 0; c < cols; ++c) d[idx[r] * cols + c] += g[r * cols + c];
                           }
                         });
}

Var scatter_add_rows(const Var& x, std::span<const int> index, std::size_t rows) {
  const std::size_t cols = x.value().cols();
  if (index.size() != x.value().rows()) throw DimensionError("scatter_add_rows: one index per row");
  std::vector<int> idx(index.begin(), index.end());
  auto in = x.value().data();
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= rows) {
      throw DimensionError("scatter_add_rows: index out of range");
    }
    for (std::size_t c = 0; c < cols; ++c) out[idx[r] * cols + c] += in[r * cols + c];
  }
  return x.tape().record(Tensor({rows, cols}, std::move(out)), {x},
                         [idx = std::move(idx), cols](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t r = 0; r < idx.size(); ++r)
                             for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[idx[r] * cols + c];
                         });
}

Var concat_lastdim(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_lastdim: nothing to concatenate");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) throw DimensionError("concat_lastdim: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(in.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = parts[0].shape();
  shape.back() = total;
  return parts[0].tape().record(
      Tensor(std::move(shape), std::move(out)), parts,
      [widths, rows, total](std::span<const double> g, GradAccumulator& acc) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (acc.wants(k)) {
            auto d = acc[k];
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] += g[r * total + offset + c];
          }
          offset += widths[k];
        }
      });
}

Var slice_lastdim(const Var& x, std::size_t start, std::size_t length) {
  const std::size_t cols = x.value().cols(), rows = x.value().rows();
  if (length == 0 || start + length > cols) throw DimensionError("slice_lastdim: range out of bounds");
  auto in = x.value().data();
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(in.data() + r * cols + start, length, out.data() + r * length);
  Shape shape = x.shape();
  shape.back() = length;
  return x.tape().record(Tensor(std::move(shape), std::move(out)), {x},
                         [rows, cols, start, length](std::span<const double> g, GradAccumulator& acc) {
                           auto d = acc[0];
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < length; ++c) d[r * cols + start + c] += g[r * length + c];
                         });
}

Var pair_sum(const Var& u, const Var& v) {
  require_same_shape(u, v, "pair_sum");
  require_matrix(u, "pair_sum");
  const std::size_t m = u.shape()[0], c = u.shape()[1];
  auto uv = u.value().data(), vv = v.value().data();
  std::vector<double> out(m * m * c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < c; ++k) out[(i * m + j) * c + k] = uv[i * c + k] + vv[j * c + k];
  return u.tape().record(Tensor({m * m, c}, std::move(out)), {u, v},
                         [m, c](std::span<const double> g, GradAccumulator& acc) {
                           if (acc.wants(0)) {
                             auto d = acc[0];
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < m; ++j)
                                 for (std::size_t k = 0; k < c; ++k) d[i * c + k] += g[(i * m + j) * c + k];
                           }
                           if (acc.wants(1)) {
                             auto d = acc[1];
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < m; ++j)
                                 for (std::size_t k = 0; k < c; ++k) d[j * c + k] += g[(i * m + j) * c + k];
                           }
                         });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, int pad_index) {
  const std::size_t cols = logits.value().cols(), rows = logits.value().rows();
  if (targets.size() != rows) throw DimensionError("cross_entropy: one target per row required");
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t counted = 0;
  for (int t : tgt) {
    if (t == pad_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= cols) throw DimensionError("cross_entropy: target out of vocab range");
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: no non-pad targets");
  auto in = logits.value().data();
  std::vector<double> probs(in.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - peak);
    double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - lse);
    if (tgt[r] != pad_index) loss += lse - row[tgt[r]];
  }
  const double inv = 1.0 / static_cast<double>(counted);
  return logits.tape().record(
      Tensor::scalar(loss * inv), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), pad_index, cols, inv](std::span<const double> g,
                                                                              GradAccumulator& acc) {
        auto d = acc[0];
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          if (tgt[r] == pad_index) continue;
          for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[0] * inv * probs[r * cols + c];
          d[r * cols + tgt[r]] -= g[0] * inv;
        }
      });
}

Var kl_divergence(const Var& p_logits, const Var& q_logits, std::span<const std::uint8_t> row_mask) {
  require_same_shape(p_logits, q_logits, "kl_divergence");
  const std::size_t cols = p_logits.value().cols(), rows = p_logits.value().rows();
  if (!row_mask.empty() && row_mask.size() != rows) throw DimensionError("kl_divergence: row mask size");
  std::vector<std::uint8_t> use(rows, 1);
  if (!row_mask.empty()) use.assign(row_mask.begin(), row_mask.end());
  std::size_t counted = 0;
  for (auto u : use) counted += u ? 1 : 0;
  if (counted == 0) throw std::invalid_argument("kl_divergence: no rows selected");

  auto log_softmax = [cols, rows](std::span<const double> in) {
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = in.data() + r * cols;
      double peak = *std::max_element(row, row + cols);
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - peak);
      double lse = peak + std::log(total);
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
    }
    return out;
  };
  std::vector<double> lp = log_softmax(p_logits.value().data());
  std::vector<double> lq = log_softmax(q_logits.value().data());
  const double inv = 1.0 / static_cast<double>(counted);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!use[r]) continue;
    double row_kl = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t i = r * cols + c;
      double diff = lp[i] - lq[i];
      row_kl += (std::exp(lp[i]) - std::exp(lq[i])) * diff;
    }
    loss += 0.5 * row_kl;
  }
  return p_logits.tape().record(
      Tensor::scalar(loss * inv), {p_logits, q_logits},
      [lp = std::move(lp), lq = std::move(lq), use = std::move(use), cols, inv](std::span<const double> g,
                                                                                GradAccumulator& acc) {
        // J = ½ Σ (p - q)(log p - log q). With a = log p - log q and u = p - q:
        // ∂J/∂zp_k = ½ [p_k (a_k - Σ p a) + u_k],  ∂J/∂zq_k = ½ [q_k (Σ q a - a_k) - u_k]
        for (std::size_t r = 0; r < use.size(); ++r) {
          if (!use[r]) continue;
          double pa = 0.0, qa = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            std::size_t i = r * cols + c;
            double a = lp[i] - lq[i];
            pa += std::exp(lp[i]) * a;
            qa += std::exp(lq[i]) * a;
          }
          const double w = 0.5 * g[0] * inv;
          for (std::size_t c = 0; c < cols; ++c) {
            std::size_t i = r * cols + c;
            double p = std::exp(lp[i]), q = std::exp(lq[i]);
            double a = lp[i] - lq[i];
            if (acc.wants(0)) acc[0][i] += w * (p * (a - pa) + (p - q));
            if (acc.wants(1)) acc[1][i] += w * (q * (qa - a) - (p - q));
          }
        }
      });
}

Var soft_target_cross_entropy(const Var& probs, const Tensor& target, std::span<const std::uint8_t> row_mask) {
  const std::size_t cols = probs.value().cols(), rows = probs.value().rows();
  if (target.size() != probs.value().size()) throw DimensionError("soft_target_cross_entropy: target shape");
  if (row_mask.size() != rows) throw DimensionError("soft_target_cross_entropy: row mask size");
  std::vector<std::uint8_t> use(row_mask.begin(), row_mask.end());
  std::size_t counted = 0;
  for (auto u : use) counted += u ? 1 : 0;
  if (counted == 0) return probs.tape().constant(Tensor::scalar(0.0));
  Tensor pv = probs.value();
  auto p = pv.data();
  auto t = target.data();
  const double inv = 1.0 / static_cast<double>(counted);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!use[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t i = r * cols + c;
      if (t[i] != 0.0) loss -= t[i] * std::log(p[i]);
    }
  }
  return probs.tape().record(Tensor::scalar(loss * inv), {probs},
                             [pv, target, use = std::move(use), cols, inv](std::span<const double> g,
                                                                           GradAccumulator& acc) {
                               auto d = acc[0];
                               auto p = pv.data();
                               auto t = target.data();
                               for (std::size_t r = 0; r < use.size(); ++r) {
                                 if (!use[r]) continue;
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   std::size_t i = r * cols + c;
                                   if (t[i] != 0.0) d[i] -= g[0] * inv * t[i] / p[i];
                                 }
                               }
                             });
}

}  // namespace retro3d
