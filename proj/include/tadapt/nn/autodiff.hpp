#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "tadapt/common.hpp"

namespace tadapt::nn {

// A trainable tensor. Modules own their parameters; graphs reference them.
struct Parameter {
  Mat value;
  Mat grad;
  std::string name;

  Parameter() = default;
  Parameter(int rows, int cols, std::string n = "")
      : value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)), name(std::move(n)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

// Handle into a Graph's node arena.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Eigen matrices. Nodes are created in topological
// order by construction; backward() walks the arena in reverse. A Graph is
// built for one loss evaluation and then reset; node storage is reused.
class Graph {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Parameter* leaf = nullptr;
    std::function<void(Graph&, Node&)> back;  // accumulate into parents' grads
  };

  void reset() {
    nodes_.clear();
    leaf_cache_.clear();
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  Mat& grad_of(Var v) { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // ---- leaves ----
  Var constant(Mat v);
  Var leaf(Parameter& p);  // cached: repeated calls give the same node

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // ---- broadcasting ----
  Var add_rowvec(Var a, Var r);  // (B,N) + (1,N)
  Var mul_rowvec(Var a, Var r);
  Var add_colvec(Var a, Var c);  // (B,N) + (B,1)
  Var mul_colvec(Var a, Var c);
  Var sub_rowvec(Var a, Var r) { return add_rowvec(a, neg(r)); }
  Var sub_colvec(Var a, Var c) { return add_colvec(a, neg(c)); }

  // ---- reductions ----
  Var rowsum(Var a);   // (B,N) -> (B,1)
  Var rowmean(Var a);  // (B,N) -> (B,1)
  Var colmean(Var a);  // (B,N) -> (1,N)
  Var sum_all(Var a);  // -> (1,1)
  Var mean_all(Var a);

  // ---- elementwise nonlinearities ----
  Var tanh_(Var a);
  Var sigmoid_(Var a);
  Var relu_(Var a);
  Var elu_(Var a);
  Var softplus_(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var sqrt_(Var a);
  Var square_(Var a);
  Var abs_(Var a);
  Var inv_(Var a);  // 1/x

  // ---- shape ----
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int n);
  Var slice_rows(Var a, int start, int n);

  // ---- softmax family ----
  Var row_softmax(Var a);
  Var row_log_softmax(Var a);
  // picks a(r, idx[r]) for each row -> (B,1)
  Var pick(Var a, std::vector<int> idx);

  // ---- linear algebra ----
  // log det of a symmetric positive definite matrix; gradient is A^{-1}.
  Var logdet_spd(Var a);

  Var stop_grad(Var a);

  // Backpropagate from a scalar (1x1) node. Leaf parameter gradients are
  // accumulated into Parameter::grad.
  void backward(Var root);

 private:
  Var push(Mat value, bool needs_grad, std::function<void(Graph&, Node&)> back,
           Parameter* leaf = nullptr);

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> leaf_cache_;
};

}  // namespace tadapt::nn
