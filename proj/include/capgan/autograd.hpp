// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major tensors.
// Every backward rule is itself expressed in recorded primitives, so a
// gradient produced with create_record can be differentiated again.
// That second sweep is what makes the critic's gradient-norm penalty a
// trainable quantity.
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace capgan {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_count(const Shape& s);

class DiffRecord;
class Tensor;

using Vjp = std::function<Tensor(const Tensor& upstream)>;

// Dense 64-bit-float tensor. Values are immutable and shared between
// copies; an optional node id ties the tensor to the record that
// produced it. Tensors without a record are plain constants.
class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_ ? values_->size() : 0; }
  bool defined() const { return static_cast<bool>(values_); }

  // 2-d accessors; a 1-d tensor counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double item() const;  // requires size() == 1
  const std::vector<double>& values() const { return *values_; }
  double at(std::size_t i) const { return (*values_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*values_)[r * cols() + c]; }

  bool recorded() const { return record_ != nullptr; }
  DiffRecord* record() const { return record_; }
  int node() const { return node_; }
  Tensor detached() const;

private:
  friend class DiffRecord;
  friend Tensor detail_emit(const char* op, Shape shape, std::vector<double> values,
                            std::vector<std::pair<const Tensor*, Vjp>> deps);
  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  DiffRecord* record_ = nullptr;
  int node_ = -1;
};

// Append-only trace of primitive applications. Nodes are stored in
// topological order by construction; a backward sweep walks ids in
// reverse. One record per in-flight training step; discard afterwards.
class DiffRecord {
public:
  DiffRecord() = default;
  DiffRecord(const DiffRecord&) = delete;
  DiffRecord& operator=(const DiffRecord&) = delete;

  // Register a value as a differentiable input of this record.
  Tensor leaf(const Tensor& value);

  std::size_t node_count() const { return nodes_.size(); }

  static DiffRecord* active();
  static bool recording();  // active record present and not paused

private:
  friend class RecordScope;
  friend class PauseRecording;
  friend Tensor detail_emit(const char* op, Shape shape, std::vector<double> values,
                            std::vector<std::pair<const Tensor*, Vjp>> deps);
  friend std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& leaves,
                                  bool create_record);

  struct Node {
    const char* op;
    std::vector<int> parents;
    std::vector<Vjp> vjps;
    Shape shape;
  };
  // deque: backward rules append nodes while earlier nodes are being read
  std::deque<Node> nodes_;
};

// Makes a record the active one for the current thread and clears any
// ambient pause, so a scope opened inside a paused region records normally.
class RecordScope {
public:
  explicit RecordScope(DiffRecord& rec);
  ~RecordScope();
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

private:
  DiffRecord* prev_;
  bool prev_paused_;
};

// Temporarily stops primitives from recording; results are constants.
class PauseRecording {
public:
  PauseRecording();
  ~PauseRecording();
  PauseRecording(const PauseRecording&) = delete;
  PauseRecording& operator=(const PauseRecording&) = delete;

private:
  bool prev_;
};

// d(root)/d(leaf) for every leaf. root must be a recorded scalar; each
// leaf must live on root's record. Leaves with no path to root get
// zero tensors. With create_record the returned gradients are recorded
// themselves and can be differentiated again.
std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& leaves,
                         bool create_record = false);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of one parameter tensor. The function is
// evaluated under a fresh record for the analytic pass and without
// recording for the finite-difference probes.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& theta,
                  double h = 1e-5);

// ---- primitives ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);  // elementwise
Tensor scalar_multiply(const Tensor& a, double k);
Tensor concat(const Tensor& a, const Tensor& b);                     // last axis
Tensor slice(const Tensor& a, std::size_t lo, std::size_t hi);       // last axis
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor sum(const Tensor& a);   // all elements -> scalar
Tensor mean(const Tensor& a);  // all elements -> scalar
Tensor l2_norm(const Tensor& a);
Tensor softmax(const Tensor& a);  // last axis; rows sum to 1
Tensor broadcast_rows(const Tensor& v, std::size_t n_rows);   // [C] -> [R x C]
Tensor row_sum(const Tensor& a);                              // [R x C] -> [R x 1]
Tensor col_sum(const Tensor& a);                              // [R x C] -> [C]
Tensor col_broadcast(const Tensor& v, std::size_t n_cols);    // [R x 1] -> [R x C]
Tensor scalar_broadcast(const Tensor& s, Shape shape);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& m, const std::vector<int>& ids);
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& ids, std::size_t n_rows);
Tensor divide(const Tensor& a, const Tensor& b);  // a * reciprocal(b)

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return subtract(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return multiply(a, b); }
inline Tensor operator*(double k, const Tensor& a) { return scalar_multiply(a, k); }
inline Tensor operator*(const Tensor& a, double k) { return scalar_multiply(a, k); }

// ---- value-only helpers (never recorded) ---------------------------------

std::size_t argmax_row(const Tensor& a, std::size_t row);
bool all_finite(const Tensor& a);
bool same_values(const Tensor& a, const Tensor& b);  // bitwise comparison

}  // namespace capgan
