#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "tadapt/nn/autodiff.hpp"

namespace tadapt::nn {

// Uniform Xavier/Glorot initialization.
void init_xavier(Parameter& p, Rng& rng);

struct Linear {
  Parameter W, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng, const std::string& name = "linear")
      : W(in, out, name + ".W"), b(1, out, name + ".b") {
    init_xavier(W, rng);
  }

  Var forward(Graph& g, Var x) const {
    return g.add_rowvec(g.matmul(x, g.leaf(const_cast<Parameter&>(W))),
                        g.leaf(const_cast<Parameter&>(b)));
  }

  std::vector<Parameter*> params() {
    return {&W, &b};
  }
};

// Standard GRU cell; the update is composed from primitive ops so that
// backprop-through-time falls out of the tape.
struct GRUCell {
  Parameter Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh;
  int hidden = 0;

  GRUCell() = default;
  GRUCell(int in, int hid, Rng& rng, const std::string& name = "gru");

  // x: (B,in), h: (B,hidden) -> h': (B,hidden)
  Var step(Graph& g, Var x, Var h) const;

  Mat initial_state(int batch) const { return Mat::Zero(batch, hidden); }
  std::vector<Parameter*> params();
};

struct MLP {
  std::vector<Linear> layers;
  enum class Act { relu, tanh, elu } act = Act::relu;

  MLP() = default;
  MLP(const std::vector<int>& dims, Rng& rng, Act a = Act::relu,
      const std::string& name = "mlp");

  // applies activation between layers; output is linear
  Var forward(Graph& g, Var x) const;
  std::vector<Parameter*> params();
};

// Diagonal Gaussian output head: mu = linear(x), sigma = softplus(linear(x)) + floor.
struct GaussianHead {
  Linear mu, sigma_raw;
  double sigma_floor = 1e-4;

  GaussianHead() = default;
  GaussianHead(int in, int out, Rng& rng, double floor = 1e-4,
               const std::string& name = "gauss")
      : mu(in, out, rng, name + ".mu"),
        sigma_raw(in, out, rng, name + ".sigma"),
        sigma_floor(floor) {}

  struct Out {
    Var mu, sigma;
  };
  Out forward(Graph& g, Var x) const {
    return {mu.forward(g, x),
            g.add_scalar(g.softplus_(sigma_raw.forward(g, x)), sigma_floor)};
  }
  std::vector<Parameter*> params() {
    auto p = mu.params();
    auto q = sigma_raw.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
};

struct LayerNorm {
  Parameter gamma, beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(int dim, const std::string& name = "ln")
      : gamma(1, dim, name + ".gamma"), beta(1, dim, name + ".beta") {
    gamma.value.setOnes();
  }

  Var forward(Graph& g, Var x) const;
  std::vector<Parameter*> params() { return {&gamma, &beta}; }
};

// Reparameterized diagonal-Gaussian sample: mu + sigma * eps, eps ~ N(0,I).
// The noise is a constant, so gradients flow into mu and sigma.
Var reparam_sample(Graph& g, Var mu, Var sigma, Rng& rng);

// log N(x | mu, diag(sigma^2)) per row -> (B,1)
Var gaussian_log_density(Graph& g, Var x, Var mu, Var sigma);

// Adam with global-norm gradient clipping.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double clip_norm = 0.0,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t t() const { return t_; }

  struct State {
    std::vector<Mat> m, v;
    int64_t t = 0;
  };
  State state() const { return {m_, v_, t_}; }
  void restore(const State& s) {
    require(s.m.size() == m_.size() && s.v.size() == v_.size(),
            "Adam::restore: state size mismatch");
    m_ = s.m;
    v_ = s.v;
    t_ = s.t;
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  double lr_, clip_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Copies parameter values between identically structured modules.
void copy_params(const std::vector<Parameter*>& dst, const std::vector<Parameter*>& src);

inline void append_params(std::vector<Parameter*>& out, std::vector<Parameter*> more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace tadapt::nn
