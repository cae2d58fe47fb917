// SPDX-License-Identifier: Apache-2.0
#include "evf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace evf {

using detail::make_result;
using detail::Node;

namespace {

// Gradient buffer of a parent, or nullptr when it does not require grad.
double *grad_of(Node &self, std::size_t parent) {
  auto &p = *self.parents[parent];
  if (!p.requires_grad)
    return nullptr;
  return p.ensure_grad().data();
}

const std::vector<double> &data_of(const Node &self, std::size_t parent) {
  return self.parents[parent]->data;
}

// Flat index into b for every flat index of a, or empty when shapes match.
std::vector<std::size_t> broadcast_map(const Shape &a, const Shape &b,
                                       const char *op) {
  if (a == b)
    return {};
  auto fail = [&] {
    throw std::invalid_argument(std::string(op) + ": cannot broadcast " +
                                shape_str(b) + " into " + shape_str(a));
  };
  if (b.size() > a.size()) {
    // Allow leading unit extents on b.
    for (std::size_t i = 0; i + a.size() < b.size(); ++i)
      if (b[i] != 1)
        fail();
  }
  const std::size_t nd = a.size();
  std::vector<std::size_t> stride(nd, 0);
  std::size_t running = 1;
  for (std::size_t k = 0; k < std::min(nd, b.size()); ++k) {
    const std::size_t da = nd - 1 - k;
    const std::size_t bext = b[b.size() - 1 - k];
    if (bext != 1 && bext != a[da])
      fail();
    stride[da] = bext == 1 ? 0 : running;
    running *= bext;
  }
  const std::size_t n = shape_numel(a);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = offset;
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      offset += stride[d];
      if (idx[d] < a[d])
        break;
      offset -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape &s, std::size_t axis, const char *op) {
  if (axis >= s.size())
    throw std::invalid_argument(std::string(op) + ": axis " +
                                std::to_string(axis) +
                                " out of range for shape " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i)
    r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i)
    r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape &s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty())
      out = {1};
  }
  return out;
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor &a, const Tensor &b, BinOp op, const char *name) {
  auto map = broadcast_map(a.shape(), b.shape(), name);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  std::vector<double> out(n);
  auto bi = [&map](std::size_t i) { return map.empty() ? i : map[i]; };
  switch (op) {
  case BinOp::Add:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = ad[i] + bd[bi(i)];
    break;
  case BinOp::Sub:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = ad[i] - bd[bi(i)];
    break;
  case BinOp::Mul:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = ad[i] * bd[bi(i)];
    break;
  case BinOp::Div:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = ad[i] / bd[bi(i)];
    break;
  }
  return make_result(
      a.shape(), std::move(out), name, {a, b},
      [op, map = std::move(map)](Node &self) {
        const auto &g = self.grad;
        const auto &av = data_of(self, 0);
        const auto &bv = data_of(self, 1);
        double *ga = grad_of(self, 0);
        double *gb = grad_of(self, 1);
        auto bi = [&map](std::size_t i) { return map.empty() ? i : map[i]; };
        const std::size_t n = g.size();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = bi(i);
          switch (op) {
          case BinOp::Add:
            if (ga)
              ga[i] += g[i];
            if (gb)
              gb[j] += g[i];
            break;
          case BinOp::Sub:
            if (ga)
              ga[i] += g[i];
            if (gb)
              gb[j] -= g[i];
            break;
          case BinOp::Mul:
            if (ga)
              ga[i] += g[i] * bv[j];
            if (gb)
              gb[j] += g[i] * av[i];
            break;
          case BinOp::Div:
            if (ga)
              ga[i] += g[i] / bv[j];
            if (gb)
              gb[j] -= g[i] * av[i] / (bv[j] * bv[j]);
            break;
          }
        }
      });
}

// Elementwise map with derivative expressed from (x, y).
template <class F, class DF>
Tensor unary(const Tensor &x, const char *name, F f, DF df) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i)
    out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), name, {x}, [df](Node &self) {
    double *gx = grad_of(self, 0);
    if (!gx)
      return;
    const auto &xv = data_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      gx[i] += self.grad[i] * df(xv[i], self.data[i]);
  });
}

} // namespace

Tensor add(const Tensor &a, const Tensor &b) {
  return binary(a, b, BinOp::Add, "add");
}
Tensor sub(const Tensor &a, const Tensor &b) {
  return binary(a, b, BinOp::Sub, "sub");
}
Tensor mul(const Tensor &a, const Tensor &b) {
  return binary(a, b, BinOp::Mul, "mul");
}
Tensor div(const Tensor &a, const Tensor &b) {
  return binary(a, b, BinOp::Div, "div");
}

Tensor add_scalar(const Tensor &x, double c) {
  return unary(
      x, "add_scalar", [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor &x, double c) {
  return unary(
      x, "mul_scalar", [c](double v) { return v * c; },
      [c](double, double) { return c; });
}

Tensor neg(const Tensor &x) { return mul_scalar(x, -1.0); }

Tensor rsub_scalar(double c, const Tensor &x) {
  return unary(
      x, "rsub_scalar", [c](double v) { return c - v; },
      [](double, double) { return -1.0; });
}

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double *row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double *brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j)
        row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), "matmul", {a, b},
                     [m, k, n](Node &self) {
                       const auto &g = self.grad;
                       const auto &av = data_of(self, 0);
                       const auto &bv = data_of(self, 1);
                       if (double *ga = grad_of(self, 0)) {
                         // dA = dC * B^T
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               acc += g[i * n + j] * bv[p * n + j];
                             ga[i * k + p] += acc;
                           }
                       }
                       if (double *gb = grad_of(self, 1)) {
                         // dB = A^T * dC
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av_ip = av[i * k + p];
                             for (std::size_t j = 0; j < n; ++j)
                               gb[p * n + j] += av_ip * g[i * n + j];
                           }
                       }
                     });
}

Tensor transpose(const Tensor &x) {
  if (x.dim() != 2)
    throw std::invalid_argument("transpose requires a matrix, got " +
                                shape_str(x.shape()));
  const std::size_t r = x.size(0), c = x.size(1);
  const auto xd = x.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[j * r + i] = xd[i * c + j];
  return make_result({c, r}, std::move(out), "transpose", {x},
                     [r, c](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           gx[i * c + j] += self.grad[j * r + i];
                     });
}

Tensor reshape(const Tensor &x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(x.shape()) + " as " +
                                shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x},
                     [](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         gx[i] += self.grad[i];
                     });
}

Tensor slice(const Tensor &x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  auto s = split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.n)
    throw std::invalid_argument("slice: range [" + std::to_string(begin) +
                                "," + std::to_string(end) +
                                ") invalid for shape " + shape_str(x.shape()));
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  const auto xd = x.data();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(
                                 (o * s.n + begin) * s.inner),
                len * s.inner, out.begin() + static_cast<std::ptrdiff_t>(
                                                 o * len * s.inner));
  return make_result(std::move(out_shape), std::move(out), "slice", {x},
                     [s, begin, len](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < len * s.inner; ++i)
                           gx[(o * s.n + begin) * s.inner + i] +=
                               self.grad[o * len * s.inner + i];
                     });
}

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
  if (parts.empty())
    throw std::invalid_argument("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size())
    throw std::invalid_argument("concat: axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto &p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size())
      throw std::invalid_argument("concat: rank mismatch " + shape_str(s) +
                                  " vs " + shape_str(out_shape));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != out_shape[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s) +
                                    " vs " + shape_str(out_shape));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  out_shape[axis] = total;
  auto s = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::size_t start = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * lens[k] *
                                                           s.inner),
                  lens[k] * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>(
                                    (o * total + start) * s.inner));
    start += lens[k];
  }
  return make_result(std::move(out_shape), std::move(out), "concat", parts,
                     [s, lens, total](Node &self) {
                       std::size_t start = 0;
                       for (std::size_t k = 0; k < lens.size(); ++k) {
                         if (double *gp = grad_of(self, k))
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t i = 0; i < lens[k] * s.inner; ++i)
                               gp[o * lens[k] * s.inner + i] +=
                                   self.grad[(o * total + start) * s.inner + i];
                         start += lens[k];
                       }
                     });
}

Tensor gather(const Tensor &table, const std::vector<std::size_t> &indices,
              Shape shape) {
  if (table.dim() != 1)
    throw std::invalid_argument("gather: table must be 1-D, got " +
                                shape_str(table.shape()));
  if (shape_numel(shape) != indices.size())
    throw std::invalid_argument("gather: " + std::to_string(indices.size()) +
                                " indices do not fill shape " +
                                shape_str(shape));
  const auto td = table.data();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= td.size())
      throw std::out_of_range("gather: index " + std::to_string(indices[i]) +
                              " out of range for table of " +
                              std::to_string(td.size()));
    out[i] = td[indices[i]];
  }
  return make_result(std::move(shape), std::move(out), "gather", {table},
                     [indices](Node &self) {
                       double *gt = grad_of(self, 0);
                       if (!gt)
                         return;
                       for (std::size_t i = 0; i < indices.size(); ++i)
                         gt[indices[i]] += self.grad[i];
                     });
}

Tensor conv1d(const Tensor &x, const Tensor &w, std::size_t stride,
              std::size_t padding) {
  if (x.dim() != 2 || w.dim() != 3 || w.size(1) != x.size(0))
    throw std::invalid_argument("conv1d: incompatible input " +
                                shape_str(x.shape()) + " and weight " +
                                shape_str(w.shape()));
  if (stride == 0)
    throw std::invalid_argument("conv1d: stride must be positive");
  const std::size_t cin = x.size(0), t_in = x.size(1);
  const std::size_t cout = w.size(0), k = w.size(2);
  if (t_in + 2 * padding < k)
    throw std::invalid_argument("conv1d: kernel of " + std::to_string(k) +
                                " longer than padded input of " +
                                std::to_string(t_in + 2 * padding));
  const std::size_t t_out = (t_in + 2 * padding - k) / stride + 1;

  // Output positions t for which input index t*stride + j - padding is valid.
  auto valid_range = [=](std::size_t j) {
    // t*stride + j >= padding  and  t*stride + j - padding < t_in
    std::size_t lo = 0;
    if (j < padding)
      lo = (padding - j + stride - 1) / stride;
    std::size_t hi = 0; // exclusive
    if (t_in + padding > j)
      hi = std::min(t_out, (t_in + padding - j - 1) / stride + 1);
    return std::pair{lo, std::max(lo, hi)};
  };

  const auto xd = x.data();
  const auto wd = w.data();
  std::vector<double> out(cout * t_out, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t j = 0; j < k; ++j) {
        const double wv = wd[(o * cin + c) * k + j];
        const auto [lo, hi] = valid_range(j);
        const double *xrow = xd.data() + c * t_in;
        double *orow = out.data() + o * t_out;
        for (std::size_t t = lo; t < hi; ++t)
          orow[t] += wv * xrow[t * stride + j - padding];
      }
  return make_result(
      {cout, t_out}, std::move(out), "conv1d", {x, w},
      [=](Node &self) {
        const auto &g = self.grad;
        const auto &xv = data_of(self, 0);
        const auto &wv = data_of(self, 1);
        double *gx = grad_of(self, 0);
        double *gw = grad_of(self, 1);
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t j = 0; j < k; ++j) {
              const auto [lo, hi] = valid_range(j);
              const double *grow = g.data() + o * t_out;
              if (gw) {
                const double *xrow = xv.data() + c * t_in;
                double acc = 0.0;
                for (std::size_t t = lo; t < hi; ++t)
                  acc += grow[t] * xrow[t * stride + j - padding];
                gw[(o * cin + c) * k + j] += acc;
              }
              if (gx) {
                const double w_ocj = wv[(o * cin + c) * k + j];
                double *gxrow = gx + c * t_in;
                for (std::size_t t = lo; t < hi; ++t)
                  gxrow[t * stride + j - padding] += w_ocj * grow[t];
              }
            }
      });
}

Tensor softmax(const Tensor &x, std::size_t axis) {
  auto s = split_axis(x.shape(), axis, "softmax");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t q = 0; q < s.inner; ++q) {
      const std::size_t base = o * s.n * s.inner + q;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) {
        const double v = xd[base + i * s.inner];
        if (std::isnan(v))
          throw std::domain_error("softmax: NaN input");
        mx = std::max(mx, v);
      }
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(xd[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.n; ++i)
        out[base + i * s.inner] /= total;
    }
  return make_result(x.shape(), std::move(out), "softmax", {x},
                     [s](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       const auto &y = self.data;
                       const auto &g = self.grad;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t q = 0; q < s.inner; ++q) {
                           const std::size_t base = o * s.n * s.inner + q;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < s.n; ++i)
                             dot += g[base + i * s.inner] * y[base + i * s.inner];
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t at = base + i * s.inner;
                             gx[at] += y[at] * (g[at] - dot);
                           }
                         }
                     });
}

Tensor log_softmax(const Tensor &x, std::size_t axis) {
  auto s = split_axis(x.shape(), axis, "log_softmax");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t q = 0; q < s.inner; ++q) {
      const std::size_t base = o * s.n * s.inner + q;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) {
        const double v = xd[base + i * s.inner];
        if (std::isnan(v))
          throw std::domain_error("log_softmax: NaN input");
        mx = std::max(mx, v);
      }
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i)
        total += std::exp(xd[base + i * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t i = 0; i < s.n; ++i)
        out[base + i * s.inner] = xd[base + i * s.inner] - lse;
    }
  return make_result(x.shape(), std::move(out), "log_softmax", {x},
                     [s](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       const auto &y = self.data;
                       const auto &g = self.grad;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t q = 0; q < s.inner; ++q) {
                           const std::size_t base = o * s.n * s.inner + q;
                           double gsum = 0.0;
                           for (std::size_t i = 0; i < s.n; ++i)
                             gsum += g[base + i * s.inner];
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t at = base + i * s.inner;
                             gx[at] += g[at] - std::exp(y[at]) * gsum;
                           }
                         }
                     });
}

Tensor sum(const Tensor &x) {
  double total = 0.0;
  for (double v : x.data())
    total += v;
  return make_result({1}, {total}, "sum", {x}, [](Node &self) {
    double *gx = grad_of(self, 0);
    if (!gx)
      return;
    const double g = self.grad[0];
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i)
      gx[i] += g;
  });
}

Tensor mean(const Tensor &x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor &x, std::size_t axis, bool keepdim) {
  auto s = split_axis(x.shape(), axis, "sum");
  const auto xd = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t q = 0; q < s.inner; ++q)
        out[o * s.inner + q] += xd[(o * s.n + i) * s.inner + q];
  return make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out),
                     "sum_axis", {x}, [s](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.n; ++i)
                           for (std::size_t q = 0; q < s.inner; ++q)
                             gx[(o * s.n + i) * s.inner + q] +=
                                 self.grad[o * s.inner + q];
                     });
}

Tensor mean(const Tensor &x, std::size_t axis, bool keepdim) {
  auto n = split_axis(x.shape(), axis, "mean").n;
  return mul_scalar(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor var(const Tensor &x, std::size_t axis, bool keepdim) {
  auto s = split_axis(x.shape(), axis, "var");
  const auto xd = x.data();
  const double inv_n = 1.0 / static_cast<double>(s.n);
  std::vector<double> mu(s.outer * s.inner, 0.0);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t q = 0; q < s.inner; ++q) {
      double m = 0.0;
      for (std::size_t i = 0; i < s.n; ++i)
        m += xd[(o * s.n + i) * s.inner + q];
      m *= inv_n;
      double v = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double d = xd[(o * s.n + i) * s.inner + q] - m;
        v += d * d;
      }
      mu[o * s.inner + q] = m;
      out[o * s.inner + q] = v * inv_n;
    }
  return make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out),
                     "var", {x}, [s, inv_n, mu = std::move(mu)](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       const auto &xv = data_of(self, 0);
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.n; ++i)
                           for (std::size_t q = 0; q < s.inner; ++q) {
                             const std::size_t at = (o * s.n + i) * s.inner + q;
                             const std::size_t r = o * s.inner + q;
                             gx[at] += self.grad[r] * 2.0 * (xv[at] - mu[r]) *
                                       inv_n;
                           }
                     });
}

Tensor exp(const Tensor &x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor &x) {
  for (double v : x.data())
    if (!(v > 0.0))
      throw std::domain_error("log: non-positive input " + std::to_string(v));
  return unary(
      x, "log", [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor &x) {
  for (double v : x.data())
    if (!(v >= 0.0))
      throw std::domain_error("sqrt: negative input " + std::to_string(v));
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor &x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor &x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu",
      [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor &x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0)
          return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor &x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor &x) {
  return unary(
      x, "square", [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor l2_normalize(const Tensor &x, std::size_t axis) {
  auto s = split_axis(x.shape(), axis, "l2_normalize");
  const auto xd = x.data();
  std::vector<double> norms(s.outer * s.inner, 0.0);
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t q = 0; q < s.inner; ++q) {
      double ss = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double v = xd[(o * s.n + i) * s.inner + q];
        ss += v * v;
      }
      if (!(ss > 0.0))
        throw std::domain_error("l2_normalize: zero-norm vector");
      const double nrm = std::sqrt(ss);
      norms[o * s.inner + q] = nrm;
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t at = (o * s.n + i) * s.inner + q;
        out[at] = xd[at] / nrm;
      }
    }
  return make_result(x.shape(), std::move(out), "l2_normalize", {x},
                     [s, norms = std::move(norms)](Node &self) {
                       double *gx = grad_of(self, 0);
                       if (!gx)
                         return;
                       const auto &y = self.data;
                       const auto &g = self.grad;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t q = 0; q < s.inner; ++q) {
                           double dot = 0.0;
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t at = (o * s.n + i) * s.inner + q;
                             dot += g[at] * y[at];
                           }
                           const double nrm = norms[o * s.inner + q];
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t at = (o * s.n + i) * s.inner + q;
                             gx[at] += (g[at] - y[at] * dot) / nrm;
                           }
                         }
                     });
}

} // namespace evf
