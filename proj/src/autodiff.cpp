#include "tadapt/nn/autodiff.hpp"

#include <cmath>

namespace tadapt::nn {

Var Graph::push(Mat value, bool needs_grad, std::function<void(Graph&, Node&)> back,
                Parameter* leaf) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.leaf = leaf;
  n.back = std::move(back);
  if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Mat v) { return push(std::move(v), false, nullptr); }

Var Graph::leaf(Parameter& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end()) return Var{it->second};
  Var v = push(p.value, true, nullptr, &p);
  leaf_cache_[&p] = v.id;
  return v;
}

namespace {
bool ng(const Graph::Node& n) { return n.needs_grad; }
}  // namespace

Var Graph::add(Var a, Var b) {
  const Mat v = nodes_[a.id].value + nodes_[b.id].value;
  bool need = ng(nodes_[a.id]) || ng(nodes_[b.id]);
  return push(v, need, [a, b](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad;
    if (g.nodes_[b.id].needs_grad) g.nodes_[b.id].grad += n.grad;
  });
}

Var Graph::sub(Var a, Var b) {
  const Mat v = nodes_[a.id].value - nodes_[b.id].value;
  bool need = ng(nodes_[a.id]) || ng(nodes_[b.id]);
  return push(v, need, [a, b](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad;
    if (g.nodes_[b.id].needs_grad) g.nodes_[b.id].grad -= n.grad;
  });
}

Var Graph::mul(Var a, Var b) {
  const Mat v = nodes_[a.id].value.cwiseProduct(nodes_[b.id].value);
  bool need = ng(nodes_[a.id]) || ng(nodes_[b.id]);
  return push(v, need, [a, b](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad += n.grad.cwiseProduct(g.nodes_[b.id].value);
    if (g.nodes_[b.id].needs_grad)
      g.nodes_[b.id].grad += n.grad.cwiseProduct(g.nodes_[a.id].value);
  });
}

Var Graph::scale(Var a, double s) {
  return push(nodes_[a.id].value * s, ng(nodes_[a.id]), [a, s](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad * s;
  });
}

Var Graph::add_scalar(Var a, double s) {
  return push(nodes_[a.id].value.array() + s, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad;
  });
}

Var Graph::matmul(Var a, Var b) {
  const Mat v = nodes_[a.id].value * nodes_[b.id].value;
  bool need = ng(nodes_[a.id]) || ng(nodes_[b.id]);
  return push(v, need, [a, b](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.noalias() += n.grad * g.nodes_[b.id].value.transpose();
    if (g.nodes_[b.id].needs_grad)
      g.nodes_[b.id].grad.noalias() += g.nodes_[a.id].value.transpose() * n.grad;
  });
}

Var Graph::transpose(Var a) {
  return push(nodes_[a.id].value.transpose(), ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad.transpose();
  });
}

Var Graph::add_rowvec(Var a, Var r) {
  const Mat v = nodes_[a.id].value.rowwise() + nodes_[r.id].value.row(0);
  bool need = ng(nodes_[a.id]) || ng(nodes_[r.id]);
  return push(v, need, [a, r](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad;
    if (g.nodes_[r.id].needs_grad) g.nodes_[r.id].grad += n.grad.colwise().sum();
  });
}

Var Graph::mul_rowvec(Var a, Var r) {
  const Mat v = nodes_[a.id].value.array().rowwise() *
                nodes_[r.id].value.row(0).array();
  bool need = ng(nodes_[a.id]) || ng(nodes_[r.id]);
  return push(v, need, [a, r](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() +=
          n.grad.array().rowwise() * g.nodes_[r.id].value.row(0).array();
    if (g.nodes_[r.id].needs_grad)
      g.nodes_[r.id].grad += (n.grad.cwiseProduct(g.nodes_[a.id].value)).colwise().sum();
  });
}

Var Graph::add_colvec(Var a, Var c) {
  const Mat v = nodes_[a.id].value.colwise() + nodes_[c.id].value.col(0);
  bool need = ng(nodes_[a.id]) || ng(nodes_[c.id]);
  return push(v, need, [a, c](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad;
    if (g.nodes_[c.id].needs_grad) g.nodes_[c.id].grad += n.grad.rowwise().sum();
  });
}

Var Graph::mul_colvec(Var a, Var c) {
  const Mat v = nodes_[a.id].value.array().colwise() *
                nodes_[c.id].value.col(0).array();
  bool need = ng(nodes_[a.id]) || ng(nodes_[c.id]);
  return push(v, need, [a, c](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() +=
          n.grad.array().colwise() * g.nodes_[c.id].value.col(0).array();
    if (g.nodes_[c.id].needs_grad)
      g.nodes_[c.id].grad += (n.grad.cwiseProduct(g.nodes_[a.id].value)).rowwise().sum();
  });
}

Var Graph::rowsum(Var a) {
  return push(nodes_[a.id].value.rowwise().sum(), ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.colwise() += n.grad.col(0);
  });
}

Var Graph::rowmean(Var a) {
  const double inv = 1.0 / static_cast<double>(nodes_[a.id].value.cols());
  return push(nodes_[a.id].value.rowwise().mean(), ng(nodes_[a.id]),
              [a, inv](Graph& g, Node& n) {
                if (g.nodes_[a.id].needs_grad)
                  g.nodes_[a.id].grad.colwise() += (n.grad.col(0) * inv).eval();
              });
}

Var Graph::colmean(Var a) {
  const double inv = 1.0 / static_cast<double>(nodes_[a.id].value.rows());
  return push(nodes_[a.id].value.colwise().mean(), ng(nodes_[a.id]),
              [a, inv](Graph& g, Node& n) {
                if (g.nodes_[a.id].needs_grad)
                  g.nodes_[a.id].grad.rowwise() += (n.grad.row(0) * inv).eval();
              });
}

Var Graph::sum_all(Var a) {
  Mat v(1, 1);
  v(0, 0) = nodes_[a.id].value.sum();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad.array() += n.grad(0, 0);
  });
}

Var Graph::mean_all(Var a) {
  Mat v(1, 1);
  const double inv = 1.0 / static_cast<double>(nodes_[a.id].value.size());
  v(0, 0) = nodes_[a.id].value.mean();
  return push(v, ng(nodes_[a.id]), [a, inv](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad.array() += n.grad(0, 0) * inv;
  });
}

Var Graph::tanh_(Var a) {
  const Mat v = nodes_[a.id].value.array().tanh();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() += n.grad.array() * (1.0 - n.value.array().square());
  });
}

Var Graph::sigmoid_(Var a) {
  const Mat v = (1.0 / (1.0 + (-nodes_[a.id].value.array()).exp())).matrix();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() +=
          n.grad.array() * n.value.array() * (1.0 - n.value.array());
  });
}

Var Graph::relu_(Var a) {
  const Mat v = nodes_[a.id].value.cwiseMax(0.0);
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() +=
          n.grad.array() * (g.nodes_[a.id].value.array() > 0.0).cast<double>();
  });
}

Var Graph::elu_(Var a) {
  const auto& x = nodes_[a.id].value.array();
  const Mat v = (x > 0.0).select(x, x.exp() - 1.0);
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) {
      const auto& x2 = g.nodes_[a.id].value.array();
      Mat d = (x2 > 0.0).select(Mat::Ones(n.value.rows(), n.value.cols()).array(),
                                n.value.array() + 1.0);
      g.nodes_[a.id].grad.array() += n.grad.array() * d.array();
    }
  });
}

Var Graph::softplus_(Var a) {
  // log(1+exp(x)), stable for large |x|
  const auto& x = nodes_[a.id].value.array();
  const Mat v = (x > 30.0).select(x, (1.0 + x.exp()).log());
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) {
      const auto& x2 = g.nodes_[a.id].value.array();
      g.nodes_[a.id].grad.array() += n.grad.array() / (1.0 + (-x2).exp());
    }
  });
}

Var Graph::exp_(Var a) {
  const Mat v = nodes_[a.id].value.array().exp();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() += n.grad.array() * n.value.array();
  });
}

Var Graph::log_(Var a) {
  const Mat v = nodes_[a.id].value.array().log();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() += n.grad.array() / g.nodes_[a.id].value.array();
  });
}

Var Graph::sqrt_(Var a) {
  const Mat v = nodes_[a.id].value.array().sqrt();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() += n.grad.array() * 0.5 / n.value.array();
  });
}

Var Graph::square_(Var a) {
  const Mat v = nodes_[a.id].value.array().square();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() +=
          n.grad.array() * 2.0 * g.nodes_[a.id].value.array();
  });
}

Var Graph::abs_(Var a) {
  const Mat v = nodes_[a.id].value.array().abs();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() +=
          n.grad.array() * g.nodes_[a.id].value.array().sign();
  });
}

Var Graph::inv_(Var a) {
  const Mat v = nodes_[a.id].value.array().inverse();
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad)
      g.nodes_[a.id].grad.array() -= n.grad.array() * n.value.array().square();
  });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index rows = nodes_[parts[0].id].value.rows();
  Eigen::Index cols = 0;
  bool need = false;
  for (Var p : parts) {
    cols += nodes_[p.id].value.cols();
    need = need || nodes_[p.id].needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    v.middleCols(off, nodes_[p.id].value.cols()) = nodes_[p.id].value;
    off += nodes_[p.id].value.cols();
  }
  return push(v, need, [parts](Graph& g, Node& n) {
    Eigen::Index o = 0;
    for (Var p : parts) {
      Eigen::Index c = g.nodes_[p.id].value.cols();
      if (g.nodes_[p.id].needs_grad) g.nodes_[p.id].grad += n.grad.middleCols(o, c);
      o += c;
    }
  });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index cols = nodes_[parts[0].id].value.cols();
  Eigen::Index rows = 0;
  bool need = false;
  for (Var p : parts) {
    rows += nodes_[p.id].value.rows();
    need = need || nodes_[p.id].needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    v.middleRows(off, nodes_[p.id].value.rows()) = nodes_[p.id].value;
    off += nodes_[p.id].value.rows();
  }
  return push(v, need, [parts](Graph& g, Node& n) {
    Eigen::Index o = 0;
    for (Var p : parts) {
      Eigen::Index r = g.nodes_[p.id].value.rows();
      if (g.nodes_[p.id].needs_grad) g.nodes_[p.id].grad += n.grad.middleRows(o, r);
      o += r;
    }
  });
}

Var Graph::slice_cols(Var a, int start, int n) {
  return push(nodes_[a.id].value.middleCols(start, n), ng(nodes_[a.id]),
              [a, start, n](Graph& g, Node& nd) {
                if (g.nodes_[a.id].needs_grad)
                  g.nodes_[a.id].grad.middleCols(start, n) += nd.grad;
              });
}

Var Graph::slice_rows(Var a, int start, int n) {
  return push(nodes_[a.id].value.middleRows(start, n), ng(nodes_[a.id]),
              [a, start, n](Graph& g, Node& nd) {
                if (g.nodes_[a.id].needs_grad)
                  g.nodes_[a.id].grad.middleRows(start, n) += nd.grad;
              });
}

Var Graph::row_softmax(Var a) {
  Mat v = nodes_[a.id].value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (!g.nodes_[a.id].needs_grad) return;
    // dL/dx = (dL/dy - rowsum(dL/dy * y)) * y
    Mat dot = (n.grad.cwiseProduct(n.value)).rowwise().sum();
    g.nodes_[a.id].grad += (n.grad.colwise() - dot.col(0)).cwiseProduct(n.value);
  });
}

Var Graph::row_log_softmax(Var a) {
  Mat v = nodes_[a.id].value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    const double lse = mx + std::log((v.row(r).array() - mx).exp().sum());
    v.row(r).array() -= lse;
  }
  return push(v, ng(nodes_[a.id]), [a](Graph& g, Node& n) {
    if (!g.nodes_[a.id].needs_grad) return;
    Mat p = n.value.array().exp();
    Mat gsum = n.grad.rowwise().sum();
    g.nodes_[a.id].grad += n.grad - (p.array().colwise() * gsum.col(0).array()).matrix();
  });
}

Var Graph::pick(Var a, std::vector<int> idx) {
  const Mat& src = nodes_[a.id].value;
  Mat v(src.rows(), 1);
  for (Eigen::Index r = 0; r < src.rows(); ++r) v(r, 0) = src(r, idx[r]);
  return push(v, ng(nodes_[a.id]), [a, idx = std::move(idx)](Graph& g, Node& n) {
    if (!g.nodes_[a.id].needs_grad) return;
    for (Eigen::Index r = 0; r < n.value.rows(); ++r)
      g.nodes_[a.id].grad(r, idx[r]) += n.grad(r, 0);
  });
}

Var Graph::logdet_spd(Var a) {
  Eigen::LLT<Mat> llt(nodes_[a.id].value);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("logdet_spd: matrix not positive definite");
  double ld = 0.0;
  const Mat& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) ld += 2.0 * std::log(L(i, i));
  Mat v(1, 1);
  v(0, 0) = ld;
  Mat inv = llt.solve(Mat::Identity(L.rows(), L.rows()));
  return push(v, ng(nodes_[a.id]), [a, inv = std::move(inv)](Graph& g, Node& n) {
    if (g.nodes_[a.id].needs_grad) g.nodes_[a.id].grad += n.grad(0, 0) * inv;
  });
}

Var Graph::stop_grad(Var a) { return constant(nodes_[a.id].value); }

void Graph::backward(Var root) {
  Node& r = nodes_[root.id];
  if (r.value.size() != 1) throw std::runtime_error("backward: root must be scalar");
  if (!r.needs_grad) return;
  r.grad(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.back) n.back(*this, n);
    if (n.leaf) n.leaf->grad += n.grad;
  }
}

}  // namespace tadapt::nn
