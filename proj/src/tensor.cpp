// Copyright (c) 2026 The moatts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "moatts/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace moatts {

size_t shape_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor::Tensor(std::vector<size_t> shape, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  impl_->data.assign(shape_product(impl_->shape), 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data,
               bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_product(shape) != data.size())
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<size_t> shape, double value,
                    bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

double Tensor::item() const {
  if (impl_->data.size() != 1)
    throw ContractError("item() on non-scalar tensor of shape " +
                        shape_str(impl_->shape));
  return impl_->data[0];
}

namespace {

thread_local Graph* g_active_graph = nullptr;

// Output grad of a recorded op; null when no gradient ever reached it.
inline const std::vector<double>* out_grad(
    const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) return nullptr;
  return &t->grad;
}

inline bool recording() { return g_active_graph != nullptr; }

inline bool track(const Tensor& t) {
  return recording() && t.requires_grad();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Graph* active_graph() { return g_active_graph; }

GraphScope::GraphScope(Graph& g) : previous_(g_active_graph) {
  g_active_graph = &g;
}

GraphScope::~GraphScope() { g_active_graph = previous_; }

void Graph::backward_from(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward_from requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (track(a) || track(b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    g_active_graph->record([ai, bi, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i) ai->grad[i] += (*og)[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i) bi->grad[i] += (*og)[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (track(a) || track(b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    g_active_graph->record([ai, bi, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i) ai->grad[i] += (*og)[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i) bi->grad[i] -= (*og)[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (track(a) || track(b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    g_active_graph->record([ai, bi, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i)
          ai->grad[i] += (*og)[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i)
          bi->grad[i] += (*og)[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
  if (track(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    g_active_graph->record([ai, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ai->ensure_grad();
      for (size_t i = 0; i < og->size(); ++i) ai->grad[i] += (*og)[i];
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (track(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    g_active_graph->record([ai, oi, c] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ai->ensure_grad();
      for (size_t i = 0; i < og->size(); ++i) ai->grad[i] += (*og)[i] * c;
    });
  }
  return out;
}

Tensor scale_st(const Tensor& a, const Tensor& s) {
  if (s.size() != 1)
    throw DimensionError("scale_st: scale must be a scalar tensor, got " +
                         shape_str(s.shape()));
  Tensor out(a.shape());
  double sv = s.data()[0];
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * sv;
  if (track(a) || track(s)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), si = s.impl(), oi = out.impl();
    g_active_graph->record([ai, si, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      double sv2 = si->data[0];
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i) ai->grad[i] += (*og)[i] * sv2;
      }
      if (si->requires_grad) {
        si->ensure_grad();
        double acc = 0.0;
        for (size_t i = 0; i < og->size(); ++i) acc += (*og)[i] * ai->data[i];
        si->grad[0] += acc;
      }
    });
  }
  return out;
}

// ---- matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < k; ++p) {
      double av = ad[i * k + p];
      const double* brow = bd + p * n;
      double* orow = od + i * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  if (track(a) || track(b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    g_active_graph->record([ai, bi, oi, m, k, n] {
      const auto* og = out_grad(oi);
      if (!og) return;
      const double* gd = og->data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        // dA = G * B^T
        for (size_t i = 0; i < m; ++i)
          for (size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = gd + i * n;
            const double* brow = bi->data.data() + p * n;
            for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ai->grad[i * k + p] += acc;
          }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        // dB = A^T * G
        for (size_t i = 0; i < m; ++i)
          for (size_t p = 0; p < k; ++p) {
            double av = ai->data[i * k + p];
            const double* grow = gd + i * n;
            double* brow = bi->grad.data() + p * n;
            for (size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(1))
    throw DimensionError("matmul_nt: incompatible shapes " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  Tensor out({m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* arow = a.data().data() + i * k;
      const double* brow = b.data().data() + j * k;
      for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out.data()[i * n + j] = acc;
    }
  if (track(a) || track(b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    g_active_graph->record([ai, bi, oi, m, k, n] {
      const auto* og = out_grad(oi);
      if (!og) return;
      const double* gd = og->data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        // dA = G * B
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) {
            double gv = gd[i * n + j];
            const double* brow = bi->data.data() + j * k;
            double* arow = ai->grad.data() + i * k;
            for (size_t p = 0; p < k; ++p) arow[p] += gv * brow[p];
          }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        // dB = G^T * A
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) {
            double gv = gd[i * n + j];
            const double* arow = ai->data.data() + i * k;
            double* brow = bi->grad.data() + j * k;
            for (size_t p = 0; p < k; ++p) brow[p] += gv * arow[p];
          }
      }
    });
  }
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || x.extent(1) != v.extent(0))
    throw DimensionError("add_row: shapes " + shape_str(x.shape()) + " + " +
                         shape_str(v.shape()));
  size_t r = x.extent(0), d = x.extent(1);
  Tensor out({r, d});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < d; ++j)
      out.data()[i * d + j] = x.data()[i * d + j] + v.data()[j];
  if (track(x) || track(v)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), vi = v.impl(), oi = out.impl();
    g_active_graph->record([xi, vi, oi, r, d] {
      const auto* og = out_grad(oi);
      if (!og) return;
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (size_t i = 0; i < og->size(); ++i) xi->grad[i] += (*og)[i];
      }
      if (vi->requires_grad) {
        vi->ensure_grad();
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < d; ++j) vi->grad[j] += (*og)[i * d + j];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2 || b.ndim() != 1 || w.extent(1) != b.extent(0))
    throw DimensionError("linear: weight " + shape_str(w.shape()) +
                         " vs bias " + shape_str(b.shape()));
  if (x.ndim() == 1) {
    if (x.extent(0) != w.extent(0))
      throw DimensionError("linear: input " + shape_str(x.shape()) +
                           " vs weight " + shape_str(w.shape()));
    Tensor x2 = reshape(x, {1, x.extent(0)});
    Tensor y = add_row(matmul(x2, w), b);
    return reshape(y, {w.extent(1)});
  }
  if (x.ndim() != 2 || x.extent(1) != w.extent(0))
    throw DimensionError("linear: input " + shape_str(x.shape()) +
                         " vs weight " + shape_str(w.shape()));
  return add_row(matmul(x, w), b);
}

// ---- nonlinearities -----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd_from_out) {
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = fwd(a.data()[i]);
  if (track(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    g_active_graph->record([ai, oi, bwd_from_out] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ai->ensure_grad();
      for (size_t i = 0; i < og->size(); ++i)
        ai->grad[i] += (*og)[i] * bwd_from_out(ai->data[i], oi->data[i]);
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_t(const Tensor& a) {
  return unary_op(
      a, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

// ---- softmax / layer norm ----------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  size_t rows, cols;
  if (x.ndim() == 1) {
    rows = 1;
    cols = x.extent(0);
  } else if (x.ndim() == 2) {
    rows = x.extent(0);
    cols = x.extent(1);
  } else {
    throw DimensionError("softmax_rows: expected 1-D or 2-D, got " +
                         shape_str(x.shape()));
  }
  if (cols == 0) throw DimensionError("softmax_rows: zero-width rows");
  Tensor out(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * cols;
    double* yr = out.data().data() + r * cols;
    double mx = xr[0];
    for (size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (size_t c = 0; c < cols; ++c) yr[c] /= sum;
  }
  if (track(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    g_active_graph->record([xi, oi, rows, cols] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      for (size_t r = 0; r < rows; ++r) {
        const double* gr = og->data() + r * cols;
        const double* yr = oi->data.data() + r * cols;
        double dot = 0.0;
        for (size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
        double* xr = xi->grad.data() + r * cols;
        for (size_t c = 0; c < cols; ++c) xr[c] += yr[c] * (gr[c] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  size_t rows, d;
  if (x.ndim() == 1) {
    rows = 1;
    d = x.extent(0);
  } else if (x.ndim() == 2) {
    rows = x.extent(0);
    d = x.extent(1);
  } else {
    throw DimensionError("layer_norm: expected 1-D or 2-D, got " +
                         shape_str(x.shape()));
  }
  if (d == 0) throw DimensionError("layer_norm: zero feature width");
  if (gamma.shape() != std::vector<size_t>{d} ||
      beta.shape() != std::vector<size_t>{d})
    throw DimensionError("layer_norm: gamma/beta must have shape [" +
                         std::to_string(d) + "], got " +
                         shape_str(gamma.shape()) + " / " +
                         shape_str(beta.shape()));
  Tensor out(x.shape());
  // x_hat is saved for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mean = 0.0;
    for (size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);  // population convention
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (size_t j = 0; j < d; ++j) {
      double h = (xr[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      out.data()[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  if (track(x) || track(gamma) || track(beta)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    g_active_graph->record([xi, gi, bi, oi, xhat, inv_std, rows, d] {
      const auto* og = out_grad(oi);
      if (!og) return;
      for (size_t r = 0; r < rows; ++r) {
        const double* gr = og->data() + r * d;
        const double* hr = xhat->data() + r * d;
        if (bi->requires_grad) {
          bi->ensure_grad();
          for (size_t j = 0; j < d; ++j) bi->grad[j] += gr[j];
        }
        if (gi->requires_grad) {
          gi->ensure_grad();
          for (size_t j = 0; j < d; ++j) gi->grad[j] += gr[j] * hr[j];
        }
        if (xi->requires_grad) {
          xi->ensure_grad();
          double mean_g = 0.0, mean_gh = 0.0;
          for (size_t j = 0; j < d; ++j) {
            double gh = gr[j] * gi->data[j];
            mean_g += gh;
            mean_gh += gh * hr[j];
          }
          mean_g /= static_cast<double>(d);
          mean_gh /= static_cast<double>(d);
          double is = (*inv_std)[r];
          double* xg = xi->grad.data() + r * d;
          for (size_t j = 0; j < d; ++j) {
            double gh = gr[j] * gi->data[j];
            xg[j] += is * (gh - mean_g - hr[j] * mean_gh);
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions ---------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (track(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    g_active_graph->record([ai, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ai->ensure_grad();
      for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += (*og)[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean_all: empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

Tensor column_sums(const Tensor& x) {
  if (x.ndim() != 2)
    throw DimensionError("column_sums: expected 2-D, got " +
                         shape_str(x.shape()));
  size_t r = x.extent(0), c = x.extent(1);
  Tensor out({c});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out.data()[j] += x.data()[i * c + j];
  if (track(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    g_active_graph->record([xi, oi, r, c] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) xi->grad[i * c + j] += (*og)[j];
    });
  }
  return out;
}

// ---- shape ops ----------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
  if (shape_product(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  Tensor out(std::move(shape), a.data());
  if (track(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    g_active_graph->record([ai, oi] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ai->ensure_grad();
      for (size_t i = 0; i < og->size(); ++i) ai->grad[i] += (*og)[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  size_t r = parts[0].extent(0), total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.extent(0) != r)
      throw DimensionError("concat_cols: row mismatch " +
                           shape_str(p.shape()));
    total += p.extent(1);
  }
  Tensor out({r, total});
  size_t off = 0;
  for (const auto& p : parts) {
    size_t c = p.extent(1);
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j)
        out.data()[i * total + off + j] = p.data()[i * c + j];
    off += c;
  }
  bool any = false;
  for (const auto& p : parts) any = any || track(p);
  if (any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> pis;
    for (const auto& p : parts) pis.push_back(p.impl());
    auto oi = out.impl();
    g_active_graph->record([pis, oi, r, total] {
      const auto* og = out_grad(oi);
      if (!og) return;
      size_t o2 = 0;
      for (auto& pi : pis) {
        size_t c = pi->shape[1];
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j)
              pi->grad[i * c + j] += (*og)[i * total + o2 + j];
        }
        o2 += c;
      }
    });
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no inputs");
  size_t c = rows[0].size();
  for (const auto& v : rows)
    if (v.ndim() != 1 || v.size() != c)
      throw DimensionError("stack_rows: row shape mismatch " +
                           shape_str(v.shape()));
  size_t n = rows.size();
  Tensor out({n, c});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < c; ++j) out.data()[i * c + j] = rows[i].data()[j];
  bool any = false;
  for (const auto& v : rows) any = any || track(v);
  if (any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> ris;
    for (const auto& v : rows) ris.push_back(v.impl());
    auto oi = out.impl();
    g_active_graph->record([ris, oi, c] {
      const auto* og = out_grad(oi);
      if (!og) return;
      for (size_t i = 0; i < ris.size(); ++i) {
        if (!ris[i]->requires_grad) continue;
        ris[i]->ensure_grad();
        for (size_t j = 0; j < c; ++j) ris[i]->grad[j] += (*og)[i * c + j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t c1) {
  if (x.ndim() != 2 || c1 > x.extent(1) || c0 >= c1)
    throw DimensionError("slice_cols: bad range on " + shape_str(x.shape()));
  size_t r = x.extent(0), c = x.extent(1), w = c1 - c0;
  Tensor out({r, w});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < w; ++j)
      out.data()[i * w + j] = x.data()[i * c + c0 + j];
  if (track(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    g_active_graph->record([xi, oi, r, c, c0, w] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < w; ++j)
          xi->grad[i * c + c0 + j] += (*og)[i * w + j];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, size_t r0, size_t r1) {
  if (x.ndim() != 2 || r1 > x.extent(0) || r0 >= r1)
    throw DimensionError("slice_rows: bad range on " + shape_str(x.shape()));
  size_t c = x.extent(1), h = r1 - r0;
  Tensor out({h, c});
  for (size_t i = 0; i < h; ++i)
    for (size_t j = 0; j < c; ++j)
      out.data()[i * c + j] = x.data()[(r0 + i) * c + j];
  if (track(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    g_active_graph->record([xi, oi, r0, h, c] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      for (size_t i = 0; i < h; ++i)
        for (size_t j = 0; j < c; ++j)
          xi->grad[(r0 + i) * c + j] += (*og)[i * c + j];
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& x, const std::vector<int>& durations) {
  if (x.ndim() != 2 || durations.size() != x.extent(0))
    throw DimensionError("repeat_rows: " + std::to_string(durations.size()) +
                         " durations for " + shape_str(x.shape()));
  size_t total = 0;
  for (int d : durations) {
    if (d < 0) throw ContractError("repeat_rows: negative duration");
    total += static_cast<size_t>(d);
  }
  if (total == 0) throw ContractError("repeat_rows: all durations are zero");
  size_t c = x.extent(1);
  Tensor out({total, c});
  size_t t = 0;
  for (size_t p = 0; p < durations.size(); ++p)
    for (int rep = 0; rep < durations[p]; ++rep, ++t)
      for (size_t j = 0; j < c; ++j)
        out.data()[t * c + j] = x.data()[p * c + j];
  if (track(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    g_active_graph->record([xi, oi, durations, c] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      size_t t2 = 0;
      for (size_t p = 0; p < durations.size(); ++p)
        for (int rep = 0; rep < durations[p]; ++rep, ++t2)
          for (size_t j = 0; j < c; ++j)
            xi->grad[p * c + j] += (*og)[t2 * c + j];
    });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2)
    throw DimensionError("embedding_rows: table must be 2-D");
  size_t v = table.extent(0), d = table.extent(1);
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw ContractError("embedding_rows: id " + std::to_string(id) +
                          " outside vocabulary of " + std::to_string(v));
  Tensor out({ids.size(), d});
  for (size_t i = 0; i < ids.size(); ++i)
    for (size_t j = 0; j < d; ++j)
      out.data()[i * d + j] = table.data()[static_cast<size_t>(ids[i]) * d + j];
  if (track(table)) {
    out.set_requires_grad(true);
    auto ti = table.impl(), oi = out.impl();
    g_active_graph->record([ti, oi, ids, d] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ti->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < d; ++j)
          ti->grad[static_cast<size_t>(ids[i]) * d + j] += (*og)[i * d + j];
    });
  }
  return out;
}

Tensor select_elems(const Tensor& a, const std::vector<size_t>& idx) {
  for (size_t i : idx)
    if (i >= a.size())
      throw DimensionError("select_elems: index out of range");
  Tensor out({idx.size()});
  for (size_t i = 0; i < idx.size(); ++i) out.data()[i] = a.data()[idx[i]];
  if (track(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    g_active_graph->record([ai, oi, idx] {
      const auto* og = out_grad(oi);
      if (!og) return;
      ai->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i) ai->grad[idx[i]] += (*og)[i];
    });
  }
  return out;
}

Tensor scatter_1d(size_t n, const std::vector<size_t>& idx,
                  const Tensor& values) {
  if (values.size() != idx.size())
    throw DimensionError("scatter_1d: index/value count mismatch");
  Tensor out({n});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw DimensionError("scatter_1d: index out of range");
    out.data()[idx[i]] = values.data()[i];
  }
  if (track(values)) {
    out.set_requires_grad(true);
    auto vi = values.impl(), oi = out.impl();
    g_active_graph->record([vi, oi, idx] {
      const auto* og = out_grad(oi);
      if (!og) return;
      vi->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i) vi->grad[i] += (*og)[idx[i]];
    });
  }
  return out;
}

Tensor normalize_sum(const Tensor& v) {
  double s = 0.0;
  for (double x : v.data()) s += x;
  if (s == 0.0) throw ContractError("normalize_sum: sum is zero");
  Tensor out(v.shape());
  for (size_t i = 0; i < v.size(); ++i) out.data()[i] = v.data()[i] / s;
  if (track(v)) {
    out.set_requires_grad(true);
    auto vi = v.impl(), oi = out.impl();
    g_active_graph->record([vi, oi, s] {
      const auto* og = out_grad(oi);
      if (!og) return;
      vi->ensure_grad();
      double dot = 0.0;
      for (size_t i = 0; i < og->size(); ++i) dot += (*og)[i] * oi->data[i];
      for (size_t i = 0; i < og->size(); ++i)
        vi->grad[i] += ((*og)[i] - dot) / s;
    });
  }
  return out;
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1)
    throw DimensionError("conv1d_same: bad ranks");
  size_t t = x.extent(0), cin = x.extent(1);
  size_t k = w.extent(0), cout = w.extent(2);
  if (w.extent(1) != cin || b.extent(0) != cout)
    throw DimensionError("conv1d_same: input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(w.shape()));
  long pad = static_cast<long>(k) / 2;
  Tensor out({t, cout});
  for (size_t i = 0; i < t; ++i) {
    double* orow = out.data().data() + i * cout;
    for (size_t co = 0; co < cout; ++co) orow[co] = b.data()[co];
    for (size_t dk = 0; dk < k; ++dk) {
      long src = static_cast<long>(i) + static_cast<long>(dk) - pad;
      if (src < 0 || src >= static_cast<long>(t)) continue;
      const double* xrow = x.data().data() + static_cast<size_t>(src) * cin;
      const double* wk = w.data().data() + dk * cin * cout;
      for (size_t ci = 0; ci < cin; ++ci) {
        double xv = xrow[ci];
        const double* wrow = wk + ci * cout;
        for (size_t co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
      }
    }
  }
  if (track(x) || track(w) || track(b)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    g_active_graph->record([xi, wi, bi, oi, t, cin, k, cout, pad] {
      const auto* og = out_grad(oi);
      if (!og) return;
      if (bi->requires_grad) bi->ensure_grad();
      if (xi->requires_grad) xi->ensure_grad();
      if (wi->requires_grad) wi->ensure_grad();
      for (size_t i = 0; i < t; ++i) {
        const double* grow = og->data() + i * cout;
        if (bi->requires_grad)
          for (size_t co = 0; co < cout; ++co) bi->grad[co] += grow[co];
        for (size_t dk = 0; dk < k; ++dk) {
          long src = static_cast<long>(i) + static_cast<long>(dk) - pad;
          if (src < 0 || src >= static_cast<long>(t)) continue;
          size_t s = static_cast<size_t>(src);
          for (size_t ci = 0; ci < cin; ++ci) {
            double xv = xi->data[s * cin + ci];
            const double* wrow = wi->data.data() + (dk * cin + ci) * cout;
            double xacc = 0.0;
            for (size_t co = 0; co < cout; ++co) {
              double gv = grow[co];
              if (wi->requires_grad)
                wi->grad[(dk * cin + ci) * cout + co] += gv * xv;
              xacc += gv * wrow[co];
            }
            if (xi->requires_grad) xi->grad[s * cin + ci] += xacc;
          }
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: rate must be < 1");
  double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    double m = rng.uniform() < p ? 0.0 : 1.0 / keep;
    (*mask)[i] = m;
    out.data()[i] = x.data()[i] * m;
  }
  if (track(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    g_active_graph->record([xi, oi, mask] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      for (size_t i = 0; i < og->size(); ++i)
        xi->grad[i] += (*og)[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor importance_loss(const Tensor& gate_rows) {
  if (gate_rows.ndim() != 2 || gate_rows.extent(0) == 0 ||
      gate_rows.extent(1) == 0)
    throw ContractError("importance_loss: expected non-empty [n,N] rows, got " +
                        shape_str(gate_rows.shape()));
  size_t n = gate_rows.extent(0), cols = gate_rows.extent(1);
  std::vector<double> c(cols, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < cols; ++j) c[j] += gate_rows.data()[i * cols + j];
  double mu = 0.0;
  for (double v : c) mu += v;
  mu /= static_cast<double>(cols);
  if (mu == 0.0)
    throw ContractError("importance_loss: mean importance is zero");
  double var = 0.0;
  for (double v : c) var += (v - mu) * (v - mu);
  var /= static_cast<double>(cols);
  Tensor out = Tensor::scalar(var / (mu * mu));
  if (track(gate_rows)) {
    out.set_requires_grad(true);
    auto xi = gate_rows.impl(), oi = out.impl();
    auto cs = std::make_shared<std::vector<double>>(std::move(c));
    g_active_graph->record([xi, oi, cs, n, cols, mu, var] {
      const auto* og = out_grad(oi);
      if (!og) return;
      xi->ensure_grad();
      double g = (*og)[0];
      double nN = static_cast<double>(cols);
      for (size_t j = 0; j < cols; ++j) {
        // dL/dc_j = 2(c_j - mu)/(N mu^2) - 2 var/(N mu^3)
        double dc = 2.0 * ((*cs)[j] - mu) / (nN * mu * mu) -
                    2.0 * var / (nN * mu * mu * mu);
        for (size_t i = 0; i < n; ++i) xi->grad[i * cols + j] += g * dc;
      }
    });
  }
  return out;
}

// ---- finite differences -------------------------------------------------

FiniteDiffReport finite_diff_check(const std::function<Tensor(Tensor&)>& f,
                                   Tensor& x, double h, double tol) {
  if (h <= 0.0) throw ContractError("finite_diff_check: step must be > 0");
  auto eval = [&](void) -> double {
    Tensor y = f(x);
    if (y.size() != 1)
      throw ContractError("finite_diff_check: f must return a scalar");
    return y.data()[0];
  };
  double v1 = eval();
  double v2 = eval();
  if (v1 != v2)
    throw OracleError("finite_diff_check: f is not deterministic (" +
                      std::to_string(v1) + " vs " + std::to_string(v2) + ")");

  bool prev_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Graph g;
  {
    GraphScope scope(g);
    Tensor loss = f(x);
    if (loss.size() != 1)
      throw ContractError("finite_diff_check: f must return a scalar");
    g.backward_from(loss);
  }
  std::vector<double> ad = x.grad();
  x.set_requires_grad(prev_rg);

  FiniteDiffReport report;
  for (size_t i = 0; i < x.size(); ++i) {
    double saved = x.data()[i];
    x.data()[i] = saved + h;
    double fp = eval();
    x.data()[i] = saved - h;
    double fm = eval();
    x.data()[i] = saved;
    double fd = (fp - fm) / (2.0 * h);
    double diff = std::fabs(ad[i] - fd);
    double denom = std::max(std::fabs(ad[i]), std::fabs(fd));
    double rel = (diff <= 1e-7) ? 0.0 : diff / denom;
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace moatts
