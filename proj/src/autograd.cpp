// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0

#include "capgan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace capgan {

namespace {

thread_local DiffRecord* t_active = nullptr;
thread_local bool t_paused = false;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void ensure_finite(const char* op, const std::vector<double>& v) {
  bool ok = true;
  for (double x : v) ok &= (x - x == 0.0);
  if (!ok) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] - v[i] == 0.0)) {
        std::ostringstream os;
        os << op << ": produced non-finite value at index " << i;
        throw std::runtime_error(os.str());
      }
    }
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
}

// Leading dims collapsed to rows, last dim as columns. 1-d is one row.
std::size_t lead_rows(const Tensor& a) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < a.shape().size(); ++i) r *= a.shape()[i];
  return r;
}

std::size_t last_dim(const Tensor& a) {
  if (a.shape().empty()) fail("tensor has no shape");
  return a.shape().back();
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

std::size_t shape_count(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_count(shape_) != values.size()) {
    fail("tensor: shape " + shape_str(shape_) + " does not hold " +
         std::to_string(values.size()) + " values");
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  std::size_t n = shape_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

std::size_t Tensor::rows() const { return lead_rows(*this); }
std::size_t Tensor::cols() const { return last_dim(*this); }

double Tensor::item() const {
  if (size() != 1) fail("item: tensor " + shape_str(shape_) + " is not scalar");
  return (*values_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.record_ = nullptr;
  t.node_ = -1;
  return t;
}

// ---- DiffRecord -----------------------------------------------------------

Tensor DiffRecord::leaf(const Tensor& value) {
  Tensor t = value.detached();
  t.record_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"leaf", {}, {}, t.shape()});
  return t;
}

DiffRecord* DiffRecord::active() { return t_active; }
bool DiffRecord::recording() { return t_active != nullptr && !t_paused; }

RecordScope::RecordScope(DiffRecord& rec) : prev_(t_active), prev_paused_(t_paused) {
  t_active = &rec;
  t_paused = false;
}
RecordScope::~RecordScope() {
  t_active = prev_;
  t_paused = prev_paused_;
}

PauseRecording::PauseRecording() : prev_(t_paused) { t_paused = true; }
PauseRecording::~PauseRecording() { t_paused = prev_; }

// Shared exit point of every primitive: validates the output, then records
// a node when recording is on and at least one input is recorded.
Tensor detail_emit(const char* op, Shape shape, std::vector<double> values,
                   std::vector<std::pair<const Tensor*, Vjp>> deps) {
  ensure_finite(op, values);
  Tensor out(std::move(shape), std::move(values));
  if (!DiffRecord::recording()) return out;
  DiffRecord* rec = t_active;
  std::vector<int> parents;
  std::vector<Vjp> vjps;
  for (auto& [dep, vjp] : deps) {
    if (!dep->recorded()) continue;
    if (dep->record() != rec) {
      fail(std::string(op) + ": input belongs to a different differentiation record");
    }
    parents.push_back(dep->node());
    vjps.push_back(std::move(vjp));
  }
  if (parents.empty()) return out;
  out.record_ = rec;
  out.node_ = static_cast<int>(rec->nodes_.size());
  rec->nodes_.push_back(DiffRecord::Node{op, std::move(parents), std::move(vjps), out.shape()});
  return out;
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return detail_emit("matmul", {m, n}, std::move(out),
                     {{&a, [b](const Tensor& g) { return matmul(g, transpose(b)); }},
                      {&b, [a](const Tensor& g) { return matmul(transpose(a), g); }}});
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return detail_emit("add", a.shape(), std::move(out),
                     {{&a, [](const Tensor& g) { return g; }},
                      {&b, [](const Tensor& g) { return g; }}});
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  require_same_shape("subtract", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return detail_emit("subtract", a.shape(), std::move(out),
                     {{&a, [](const Tensor& g) { return g; }},
                      {&b, [](const Tensor& g) { return scalar_multiply(g, -1.0); }}});
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  require_same_shape("multiply", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return detail_emit("multiply", a.shape(), std::move(out),
                     {{&a, [b](const Tensor& g) { return multiply(g, b); }},
                      {&b, [a](const Tensor& g) { return multiply(g, a); }}});
}

Tensor scalar_multiply(const Tensor& a, double k) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * k;
  return detail_emit("scalar_multiply", a.shape(), std::move(out),
                     {{&a, [k](const Tensor& g) { return scalar_multiply(g, k); }}});
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != b.shape().size() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    fail("concat: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t r = lead_rows(a), ca = last_dim(a), cb = last_dim(b);
  Shape shape = a.shape();
  shape.back() = ca + cb;
  std::vector<double> out(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.values().data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(b.values().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  return detail_emit("concat", std::move(shape), std::move(out),
                     {{&a, [ca](const Tensor& g) { return slice(g, 0, ca); }},
                      {&b, [ca, cb](const Tensor& g) { return slice(g, ca, ca + cb); }}});
}

Tensor slice(const Tensor& a, std::size_t lo, std::size_t hi) {
  const std::size_t c = last_dim(a);
  if (lo >= hi || hi > c) {
    fail("slice: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
         ") out of bounds for " + shape_str(a.shape()));
  }
  const std::size_t r = lead_rows(a), w = hi - lo;
  Shape shape = a.shape();
  shape.back() = w;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.values().data() + i * c + lo, w, out.data() + i * w);
  }
  Shape ashape = a.shape();
  return detail_emit("slice", std::move(shape), std::move(out),
                     {{&a, [lo, c, ashape](const Tensor& g) {
                         Tensor gg = g;
                         if (lo > 0) {
                           Shape left = ashape;
                           left.back() = lo;
                           gg = concat(Tensor::zeros(left), gg);
                         }
                         if (lo + last_dim(g) < c) {
                           Shape right = ashape;
                           right.back() = c - lo - last_dim(g);
                           gg = concat(gg, Tensor::zeros(right));
                         }
                         return gg;
                       }}});
}

// Backward rules of the nonlinear primitives recompute from the recorded
// input rather than capturing a detached copy of the output; that keeps
// second and higher derivatives exact.

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return detail_emit("sigmoid", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) {
                         Tensor s = sigmoid(a);
                         Tensor one_minus = subtract(Tensor::full(s.shape(), 1.0), s);
                         return multiply(g, multiply(s, one_minus));
                       }}});
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  return detail_emit("tanh", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) {
                         Tensor t = tanh(a);
                         Tensor sq = multiply(t, t);
                         return multiply(g, subtract(Tensor::full(t.shape(), 1.0), sq));
                       }}});
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
  return detail_emit("exp", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) { return multiply(g, exp(a)); }}});
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    if (!(x > 0.0)) {
      throw std::domain_error("log: non-positive input " + std::to_string(x) + " at index " +
                              std::to_string(i));
    }
    out[i] = std::log(x);
  }
  return detail_emit("log", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) { return multiply(g, reciprocal(a)); }}});
}

Tensor log_sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    out[i] = x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
  }
  return detail_emit("log_sigmoid", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) {
                         Tensor s = sigmoid(a);
                         return multiply(g, subtract(Tensor::full(s.shape(), 1.0), s));
                       }}});
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    if (x < 0.0) {
      throw std::domain_error("sqrt: negative input " + std::to_string(x) + " at index " +
                              std::to_string(i));
    }
    out[i] = std::sqrt(x);
  }
  return detail_emit("sqrt", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) {
                         return scalar_multiply(multiply(g, reciprocal(sqrt(a))), 0.5);
                       }}});
}

Tensor reciprocal(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / a.at(i);
  return detail_emit("reciprocal", a.shape(), std::move(out),
                     {{&a, [a](const Tensor& g) {
                         Tensor r = reciprocal(a);
                         return scalar_multiply(multiply(g, multiply(r, r)), -1.0);
                       }}});
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  Shape ashape = a.shape();
  return detail_emit("sum", {1}, {s},
                     {{&a, [ashape](const Tensor& g) { return scalar_broadcast(g, ashape); }}});
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) fail("mean: empty tensor");
  return scalar_multiply(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor l2_norm(const Tensor& a) { return sqrt(sum(multiply(a, a))); }

Tensor softmax(const Tensor& a) {
  const std::size_t r = lead_rows(a), c = last_dim(a);
  Tensor flat = reshape(a, {r, c});
  // Per-row max is a shift constant; softmax is invariant to it, so it is
  // deliberately not differentiated through.
  std::vector<double> mx(r);
  for (std::size_t i = 0; i < r; ++i) {
    double m = flat.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, flat.at(i, j));
    mx[i] = m;
  }
  Tensor shifted = subtract(flat, col_broadcast(Tensor({r, 1}, std::move(mx)), c));
  Tensor e = exp(shifted);
  Tensor norm = reciprocal(row_sum(e));
  Tensor out = multiply(e, col_broadcast(norm, c));
  return reshape(out, a.shape());
}

Tensor broadcast_rows(const Tensor& v, std::size_t n_rows) {
  if (v.shape().size() != 1) fail("broadcast_rows: expected 1-d vector, got " + shape_str(v.shape()));
  const std::size_t c = v.size();
  std::vector<double> out(n_rows * c);
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::copy_n(v.values().data(), c, out.data() + i * c);
  }
  return detail_emit("broadcast_rows", {n_rows, c}, std::move(out),
                     {{&v, [](const Tensor& g) { return col_sum(g); }}});
}

Tensor row_sum(const Tensor& a) {
  if (a.shape().size() != 2) fail("row_sum: expected 2-d tensor, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i] += a.at(i, j);
  }
  return detail_emit("row_sum", {r, 1}, std::move(out),
                     {{&a, [c](const Tensor& g) { return col_broadcast(g, c); }}});
}

Tensor col_sum(const Tensor& a) {
  if (a.shape().size() != 2) fail("col_sum: expected 2-d tensor, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += a.at(i, j);
  }
  return detail_emit("col_sum", {c}, std::move(out),
                     {{&a, [r](const Tensor& g) { return broadcast_rows(g, r); }}});
}

Tensor col_broadcast(const Tensor& v, std::size_t n_cols) {
  if (v.shape().size() != 2 || v.shape()[1] != 1) {
    fail("col_broadcast: expected [R x 1] tensor, got " + shape_str(v.shape()));
  }
  const std::size_t r = v.shape()[0];
  std::vector<double> out(r * n_cols);
  for (std::size_t i = 0; i < r; ++i) {
    std::fill_n(out.data() + i * n_cols, n_cols, v.at(i));
  }
  return detail_emit("col_broadcast", {r, n_cols}, std::move(out),
                     {{&v, [](const Tensor& g) { return row_sum(g); }}});
}

Tensor scalar_broadcast(const Tensor& s, Shape shape) {
  if (s.size() != 1) fail("scalar_broadcast: source is not scalar " + shape_str(s.shape()));
  std::size_t n = shape_count(shape);
  std::vector<double> out(n, s.at(0));
  return detail_emit("scalar_broadcast", std::move(shape), std::move(out),
                     {{&s, [](const Tensor& g) { return sum(g); }}});
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) fail("transpose: expected 2-d tensor, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i, j);
  }
  return detail_emit("transpose", {c, r}, std::move(out),
                     {{&a, [](const Tensor& g) { return transpose(g); }}});
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_count(shape) != a.size()) {
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Shape orig = a.shape();
  return detail_emit("reshape", std::move(shape), std::vector<double>(a.values()),
                     {{&a, [orig](const Tensor& g) { return reshape(g, orig); }}});
}

Tensor gather_rows(const Tensor& m, const std::vector<int>& ids) {
  if (m.shape().size() != 2) fail("gather_rows: expected 2-d tensor, got " + shape_str(m.shape()));
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= r) {
      fail("gather_rows: index " + std::to_string(ids[i]) + " out of range for " +
           shape_str(m.shape()));
    }
    std::copy_n(m.values().data() + static_cast<std::size_t>(ids[i]) * c, c, out.data() + i * c);
  }
  return detail_emit("gather_rows", {ids.size(), c}, std::move(out),
                     {{&m, [ids, r](const Tensor& g) { return scatter_rows(g, ids, r); }}});
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& ids, std::size_t n_rows) {
  if (rows.shape().size() != 2 || rows.shape()[0] != ids.size()) {
    fail("scatter_rows: rows " + shape_str(rows.shape()) + " do not match " +
         std::to_string(ids.size()) + " indices");
  }
  const std::size_t c = rows.shape()[1];
  std::vector<double> out(n_rows * c, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n_rows) {
      fail("scatter_rows: index " + std::to_string(ids[i]) + " out of range for " +
           std::to_string(n_rows) + " rows");
    }
    const double* src = rows.values().data() + i * c;
    double* dst = out.data() + static_cast<std::size_t>(ids[i]) * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  return detail_emit("scatter_rows", {n_rows, c}, std::move(out),
                     {{&rows, [ids](const Tensor& g) { return gather_rows(g, ids); }}});
}

Tensor divide(const Tensor& a, const Tensor& b) { return multiply(a, reciprocal(b)); }

// ---- grad -----------------------------------------------------------------

std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& leaves,
                         bool create_record) {
  if (!root.recorded()) fail("grad: root is not attached to a differentiation record");
  if (root.size() != 1) fail("grad: root must be scalar, got " + shape_str(root.shape()));
  DiffRecord* rec = root.record();
  for (const Tensor& leaf : leaves) {
    if (leaf.record() != rec || leaf.node() < 0) {
      fail("grad: leaf is not part of the root's differentiation record");
    }
  }

  const int root_id = root.node();
  std::vector<char> needed(static_cast<std::size_t>(root_id) + 1, 0);
  needed[root_id] = 1;
  for (int id = root_id; id >= 0; --id) {
    if (!needed[id]) continue;
    for (int p : rec->nodes_[id].parents) needed[p] = 1;
  }

  RecordScope scope(*rec);
  std::optional<PauseRecording> pause;
  if (!create_record) pause.emplace();

  std::vector<Tensor> adjoint(static_cast<std::size_t>(root_id) + 1);
  adjoint[root_id] = Tensor::full(rec->nodes_[root_id].shape, 1.0);
  for (int id = root_id; id >= 0; --id) {
    if (!needed[id] || !adjoint[id].defined()) continue;
    const auto& node = rec->nodes_[id];
    for (std::size_t j = 0; j < node.parents.size(); ++j) {
      Tensor pg = node.vjps[j](adjoint[id]);
      Tensor& slot = adjoint[node.parents[j]];
      slot = slot.defined() ? add(slot, pg) : pg;
    }
  }

  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Tensor& leaf : leaves) {
    const Tensor& a = adjoint[leaf.node()];
    out.push_back(a.defined() ? a : Tensor::zeros(leaf.shape()));
  }
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& theta, double h) {
  DiffRecord rec;
  Tensor analytic;
  {
    RecordScope scope(rec);
    Tensor th = rec.leaf(theta);
    Tensor y = f(th);
    if (y.size() != 1) fail("grad_check: function must return a scalar");
    analytic = grad(y, {th})[0];
  }
  PauseRecording pause;
  double max_err = 0.0;
  std::vector<double> v(theta.values());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double fp = f(Tensor(theta.shape(), v)).item();
    v[i] = orig - h;
    const double fm = f(Tensor(theta.shape(), v)).item();
    v[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic.at(i);
    const double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// ---- value-only helpers ----------------------------------------------------

std::size_t argmax_row(const Tensor& a, std::size_t row) {
  const std::size_t c = last_dim(a);
  std::size_t best = 0;
  double bv = a.at(row, 0);
  for (std::size_t j = 1; j < c; ++j) {
    if (a.at(row, j) > bv) {
      bv = a.at(row, j);
      best = j;
    }
  }
  return best;
}

bool all_finite(const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.at(i) - a.at(i) == 0.0)) return false;
  }
  return true;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace capgan
