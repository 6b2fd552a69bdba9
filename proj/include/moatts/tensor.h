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

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "moatts/rng.h"

namespace moatts {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct OracleError : std::runtime_error {
  explicit OracleError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TensorImpl {
  std::vector<size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Value-semantic handle to a shared dense array. Data is immutable by
// convention once an op has consumed the tensor; grad accumulates in place.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape, bool requires_grad = false);
  Tensor(std::vector<size_t> shape, std::vector<double> data,
         bool requires_grad = false);

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t ndim() const { return impl_->shape.size(); }
  size_t size() const { return impl_->data.size(); }
  size_t extent(size_t axis) const { return impl_->shape[axis]; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
  std::vector<double>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Tape of recorded operations, appended in execution order (so entries are
// topologically sorted by construction). backward_from walks it once, in
// reverse.
class Graph {
 public:
  void record(std::function<void()> backward) {
    entries_.push_back(std::move(backward));
  }
  size_t size() const { return entries_.size(); }
  void backward_from(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
};

Graph* active_graph();

// Installs a graph as the recording target for ops on this thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

// ---- ops ----------------------------------------------------------------
// Elementwise ops require identical shapes unless noted. All record backward
// closures when a graph is active and the result requires grad.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
// Elementwise product with a scalar tensor (grads flow to both).
Tensor scale_st(const Tensor& a, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T
// x: [in] or [r,in]; w: [in,out]; b: [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Broadcast-add a row vector v[D] to every row of x[R,D].
Tensor add_row(const Tensor& x, const Tensor& v);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);

Tensor softmax_rows(const Tensor& x);  // [R,C], per-row
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);  // [R,D] or [D]

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor column_sums(const Tensor& x);  // [R,C] -> [C]

Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor concat_cols(const std::vector<Tensor>& parts);  // [R,Ci] -> [R,sum Ci]
Tensor stack_rows(const std::vector<Tensor>& rows);    // k x [C] -> [k,C]
Tensor slice_cols(const Tensor& x, size_t c0, size_t c1);
Tensor slice_rows(const Tensor& x, size_t r0, size_t r1);

// Row p of x repeated durations[p] times; T = sum(durations).
Tensor repeat_rows(const Tensor& x, const std::vector<int>& durations);
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// Pick flat elements; grads scatter back.
Tensor select_elems(const Tensor& a, const std::vector<size_t>& idx);
// Place values[i] at idx[i] in a fresh zero vector of length n.
Tensor scatter_1d(size_t n, const std::vector<size_t>& idx,
                  const Tensor& values);
// v / sum(v), with gradient through the normalization.
Tensor normalize_sum(const Tensor& v);

// x: [T,Cin], w: [K,Cin,Cout], b: [Cout]; zero-padded same-length output.
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b);

// Inverted dropout; identity when training == false.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Squared coefficient of variation of the column sums of gate rows [n,N].
Tensor importance_loss(const Tensor& gate_rows);

// ---- gradient oracle ----------------------------------------------------

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central-difference check of the autodiff gradient of f at x. f must be
// deterministic (verified by double evaluation) and must use x itself.
FiniteDiffReport finite_diff_check(const std::function<Tensor(Tensor&)>& f,
                                   Tensor& x, double h = 1e-5,
                                   double tol = 1e-4);

size_t shape_product(const std::vector<size_t>& shape);
std::string shape_str(const std::vector<size_t>& shape);
bool all_finite(const Tensor& t);

}  // namespace moatts
