#include "tadapt/nn/modules.hpp"

namespace tadapt::nn {

void init_xavier(Parameter& p, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = (rng.uniform() * 2.0 - 1.0) * bound;
}

GRUCell::GRUCell(int in, int hid, Rng& rng, const std::string& name)
    : Wz(in, hid, name + ".Wz"),
      Uz(hid, hid, name + ".Uz"),
      bz(1, hid, name + ".bz"),
      Wr(in, hid, name + ".Wr"),
      Ur(hid, hid, name + ".Ur"),
      br(1, hid, name + ".br"),
      Wh(in, hid, name + ".Wh"),
      Uh(hid, hid, name + ".Uh"),
      bh(1, hid, name + ".bh"),
      hidden(hid) {
  for (Parameter* p : {&Wz, &Uz, &Wr, &Ur, &Wh, &Uh}) init_xavier(*p, rng);
}

Var GRUCell::step(Graph& g, Var x, Var h) const {
  auto& self = const_cast<GRUCell&>(*this);
  Var z = g.sigmoid_(g.add_rowvec(
      g.add(g.matmul(x, g.leaf(self.Wz)), g.matmul(h, g.leaf(self.Uz))), g.leaf(self.bz)));
  Var r = g.sigmoid_(g.add_rowvec(
      g.add(g.matmul(x, g.leaf(self.Wr)), g.matmul(h, g.leaf(self.Ur))), g.leaf(self.br)));
  Var hc = g.tanh_(g.add_rowvec(
      g.add(g.matmul(x, g.leaf(self.Wh)), g.matmul(g.mul(r, h), g.leaf(self.Uh))),
      g.leaf(self.bh)));
  // h' = (1-z)*h + z*hc
  Var one_minus_z = g.add_scalar(g.neg(z), 1.0);
  return g.add(g.mul(one_minus_z, h), g.mul(z, hc));
}

std::vector<Parameter*> GRUCell::params() {
  return {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wh, &Uh, &bh};
}

MLP::MLP(const std::vector<int>& dims, Rng& rng, Act a, const std::string& name) : act(a) {
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(dims[i], dims[i + 1], rng, name + ".fc" + std::to_string(i));
}

Var MLP::forward(Graph& g, Var x) const {
  Var h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(g, h);
    if (i + 1 < layers.size()) {
      switch (act) {
        case Act::relu: h = g.relu_(h); break;
        case Act::tanh: h = g.tanh_(h); break;
        case Act::elu: h = g.elu_(h); break;
      }
    }
  }
  return h;
}

std::vector<Parameter*> MLP::params() {
  std::vector<Parameter*> out;
  for (auto& l : layers) append_params(out, l.params());
  return out;
}

Var LayerNorm::forward(Graph& g, Var x) const {
  auto& self = const_cast<LayerNorm&>(*this);
  Var m = g.rowmean(x);
  Var xc = g.sub_colvec(x, m);
  Var var = g.rowmean(g.square_(xc));
  Var inv = g.inv_(g.sqrt_(g.add_scalar(var, eps)));
  Var norm = g.mul_colvec(xc, inv);
  return g.add_rowvec(g.mul_rowvec(norm, g.leaf(self.gamma)), g.leaf(self.beta));
}

Var reparam_sample(Graph& g, Var mu, Var sigma, Rng& rng) {
  Mat eps(g.val(mu).rows(), g.val(mu).cols());
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = rng.normal();
  return g.add(mu, g.mul(sigma, g.constant(eps)));
}

Var gaussian_log_density(Graph& g, Var x, Var mu, Var sigma) {
  static const double log2pi = std::log(2.0 * M_PI);
  Var diff = g.sub(x, mu);
  Var zsq = g.square_(g.mul(diff, g.inv_(sigma)));
  Var logsig = g.log_(sigma);
  // -0.5 * sum_d (z^2 + 2 log sigma + log 2pi)
  Var per = g.add_scalar(g.add(zsq, g.scale(logsig, 2.0)), log2pi);
  return g.scale(g.rowsum(per), -0.5);
}

Adam::Adam(std::vector<Parameter*> params, double lr, double clip_norm, double beta1,
           double beta2, double eps)
    : params_(std::move(params)), lr_(lr), clip_(clip_norm), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  double scale = 1.0;
  if (clip_ > 0.0) {
    double sq = 0.0;
    for (Parameter* p : params_) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > clip_) scale = clip_ / norm;
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    const Mat gclip = params_[i]->grad * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * gclip;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * gclip.cwiseProduct(gclip);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    params_[i]->value.array() -=
        lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

void copy_params(const std::vector<Parameter*>& dst, const std::vector<Parameter*>& src) {
  require(dst.size() == src.size(), "copy_params: size mismatch");
  for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

}  // namespace tadapt::nn
