#include "tadapt/ctx/context.hpp"

#include <cmath>

namespace tadapt::ctx {

using nn::Graph;
using nn::Var;

GaussianRecurrentEncoder::GaussianRecurrentEncoder(int in_dim, int hidden, int out_dim,
                                                   Rng& rng, double sigma_floor,
                                                   const std::string& name)
    : in_dim_(in_dim), hidden_(hidden), out_dim_(out_dim),
      pre_({in_dim, hidden, hidden}, rng, nn::MLP::Act::relu, name + ".pre"),
      cell_(hidden, hidden, rng, name + ".gru"),
      head_(hidden, out_dim, rng, sigma_floor, name + ".head") {}

GaussianRecurrentEncoder::StepOut GaussianRecurrentEncoder::step(Graph& g, Var x,
                                                                 Var h) const {
  Var pre = g.relu_(pre_.forward(g, x));
  Var hn = cell_.step(g, pre, h);
  auto out = head_.forward(g, hn);
  return {hn, out.mu, out.sigma};
}

std::pair<Vec, Vec> GaussianRecurrentEncoder::step_eval(const Vec& x, const Vec& h) const {
  Graph g;
  auto out = step(g, g.constant(x.transpose()), g.constant(h.transpose()));
  return {g.val(out.mu).row(0).transpose(), g.val(out.h).row(0).transpose()};
}

std::vector<nn::Parameter*> GaussianRecurrentEncoder::params() {
  std::vector<nn::Parameter*> out = pre_.params();
  nn::append_params(out, cell_.params());
  nn::append_params(out, head_.params());
  return out;
}

VariationalHead::VariationalHead(int z_dim, int feat_dim, int e_dim, int hidden, Rng& rng,
                                 const std::string& name)
    : trunk_({z_dim + feat_dim, hidden, hidden}, rng, nn::MLP::Act::relu, name + ".trunk"),
      head_(hidden, e_dim, rng, 1e-4, name + ".head") {}

nn::GaussianHead::Out VariationalHead::forward(Graph& g, Var z, Var feats) const {
  Var x = g.concat_cols({z, feats});
  Var t = g.relu_(trunk_.forward(g, x));
  return head_.forward(g, t);
}

std::vector<nn::Parameter*> VariationalHead::params() {
  std::vector<nn::Parameter*> out = trunk_.params();
  nn::append_params(out, head_.params());
  return out;
}

TeammateReconstructor::TeammateReconstructor(int e_dim, int max_teammates, int tm_obs_dim,
                                             int n_actions, int hidden, Rng& rng,
                                             const std::string& name)
    : max_t_(max_teammates), obs_dim_(tm_obs_dim), n_actions_(n_actions),
      obs_net_({e_dim, hidden, hidden, max_teammates * tm_obs_dim}, rng,
               nn::MLP::Act::relu, name + ".obs"),
      act_net_({e_dim, hidden, hidden, max_teammates * n_actions}, rng,
               nn::MLP::Act::relu, name + ".act") {}

Var TeammateReconstructor::obs_pred(Graph& g, Var e) const { return obs_net_.forward(g, e); }
Var TeammateReconstructor::action_logits(Graph& g, Var e) const {
  return act_net_.forward(g, e);
}

std::vector<nn::Parameter*> TeammateReconstructor::params() {
  std::vector<nn::Parameter*> out = obs_net_.params();
  nn::append_params(out, act_net_.params());
  return out;
}

void MovingAverageBank::ensure_clusters(int m_count) {
  while (n_clusters() < m_count) {
    z_bars.push_back(Vec::Zero(z_dim));
    e_bars.push_back(std::vector<Vec>(n_agents, Vec::Zero(e_dim)));
  }
}

Vec update_moving_average(const Vec& bar, const Vec& batch_mean, double eta) {
  require(bar.size() == batch_mean.size(), "update_moving_average: dim mismatch");
  require(eta >= 0.0 && eta <= 1.0, "update_moving_average: eta in [0,1]");
  return eta * bar + (1.0 - eta) * batch_mean;
}

Mat relational_matrix(const std::vector<Vec>& means, double kappa) {
  require(!means.empty(), "relational_matrix: need >= 1 mean");
  require(kappa > 0.0, "relational_matrix: kappa > 0");
  const int M = static_cast<int>(means.size());
  Mat R(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j)
      R(i, j) = std::exp(-kappa * (means[i] - means[j]).squaredNorm());
  return R;
}

Var context_separation_loss(Graph& g, const std::vector<ClusterSamples>& groups,
                            const std::vector<Vec>& stored_bars, double eta, double kappa,
                            std::vector<Vec>* bank_out) {
  require(!groups.empty(), "context loss: need >= 1 cluster with samples");
  const int M = static_cast<int>(stored_bars.size());
  std::vector<Var> bar_vars(M);
  std::vector<bool> touched(M, false);

  // sum_m E||x - sg(bar'_m)||^2
  Var sq_total;
  for (const auto& grp : groups) {
    require(grp.cluster >= 0 && grp.cluster < M, "context loss: cluster out of range");
    Var mean = g.colmean(grp.samples);
    Var bar = g.add(g.scale(g.constant(stored_bars[grp.cluster].transpose()), eta),
                    g.scale(mean, 1.0 - eta));
    bar_vars[grp.cluster] = bar;
    touched[grp.cluster] = true;
    Var diff = g.sub_rowvec(grp.samples, g.stop_grad(bar));
    Var term = g.mean_all(g.rowsum(g.square_(diff)));
    sq_total = sq_total.valid() ? g.add(sq_total, term) : term;
  }

  // -log det(R + eps I), with R over all current bars
  std::vector<Var> rows;
  for (int m = 0; m < M; ++m) {
    if (!touched[m]) bar_vars[m] = g.constant(stored_bars[m].transpose());
    rows.push_back(bar_vars[m]);
  }
  Var B = g.concat_rows(rows);                     // (M, dim)
  Var sqn = g.rowsum(g.square_(B));                // (M, 1)
  Var S1 = g.matmul(sqn, g.constant(Mat::Ones(1, M)));
  Var D = g.sub(g.add(S1, g.transpose(S1)), g.scale(g.matmul(B, g.transpose(B)), 2.0));
  Var R = g.exp_(g.scale(D, -kappa));
  Var Rj = g.add(R, g.constant(kDetJitter * Mat::Identity(M, M)));
  Var loss = g.sub(sq_total, g.logdet_spd(Rj));
  if (!std::isfinite(g.val(loss)(0, 0)))
    throw std::runtime_error("context loss: non-finite value");

  if (bank_out) {
    bank_out->resize(M);
    for (int m = 0; m < M; ++m)
      (*bank_out)[m] = touched[m] ? Vec(g.val(bar_vars[m]).row(0).transpose())
                                  : stored_bars[m];
  }
  return loss;
}

double adap_loss(double td, double gce, double alpha_gce) {
  require(alpha_gce >= 0.0, "adap_loss: weight must be >= 0");
  return td + alpha_gce * gce;
}

double dec_loss(double td, double mi, double lce, double rec, double alpha_mi,
                double alpha_lce, double alpha_rec) {
  require(alpha_mi >= 0.0 && alpha_lce >= 0.0 && alpha_rec >= 0.0,
          "dec_loss: weights must be >= 0");
  return td + alpha_mi * mi + alpha_lce * lce + alpha_rec * rec;
}

Var gaussian_entropy(Graph& g, Var sigma) {
  static const double c = 1.0 + std::log(2.0 * M_PI);
  return g.scale(g.rowsum(g.add_scalar(g.scale(g.log_(sigma), 2.0), c)), 0.5);
}

Var mi_loss(Graph& g, const VariationalHead& q, const std::vector<MiGroup>& groups) {
  require(!groups.empty(), "mi_loss: need >= 1 group");
  Var total;
  for (const auto& grp : groups) {
    auto qout = q.forward(g, g.stop_grad(grp.z), grp.feats);
    Var logq = nn::gaussian_log_density(g, grp.e, qout.mu, qout.sigma);  // (N,1)
    Var ent = gaussian_entropy(g, grp.sigma_e);                          // (N,1)
    Var term = g.neg(g.add(g.mean_all(logq), g.mean_all(ent)));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

Var rec_loss(Graph& g, const TeammateReconstructor& rec,
             const std::vector<RecGroup>& groups) {
  require(!groups.empty(), "rec_loss: need >= 1 group");
  const int max_t = rec.max_teammates();
  const int od = rec.tm_obs_dim();
  const int na = rec.n_actions();
  Var total;
  for (const auto& grp : groups) {
    const int N = static_cast<int>(grp.tm_obs.rows());
    double visible = grp.presence.sum();
    if (visible <= 0.0) {
      Var zero = g.constant(Mat::Zero(1, 1));
      total = total.valid() ? g.add(total, zero) : zero;
      continue;
    }
    // observations: squared error summed over dims, masked per slot
    Var pred = rec.obs_pred(g, grp.e);
    Var err = g.square_(g.sub(pred, g.constant(grp.tm_obs)));
    Mat obs_mask = Mat::Zero(N, max_t * od);
    for (int r = 0; r < N; ++r)
      for (int s = 0; s < max_t; ++s)
        if (grp.presence(r, s) > 0.5) obs_mask.row(r).segment(s * od, od).setOnes();
    Var obs_term =
        g.scale(g.sum_all(g.mul(err, g.constant(obs_mask))), 1.0 / visible);

    // actions: cross-entropy per visible teammate-step
    Var logits = rec.action_logits(g, grp.e);
    Var ce_total;
    for (int s = 0; s < max_t; ++s) {
      std::vector<int> idx(N, 0);
      Mat m(N, 1);
      for (int r = 0; r < N; ++r) {
        const int a = grp.tm_actions[r][s];
        m(r, 0) = a >= 0 ? 1.0 : 0.0;
        idx[r] = a >= 0 ? a : 0;
      }
      Var lp = g.row_log_softmax(g.slice_cols(logits, s * na, na));
      Var picked = g.mul(g.pick(lp, idx), g.constant(m));
      ce_total = ce_total.valid() ? g.add(ce_total, g.sum_all(picked))
                                  : g.sum_all(picked);
    }
    Var act_term = g.scale(ce_total, -1.0 / visible);
    Var term = g.add(obs_term, act_term);
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

}  // namespace tadapt::ctx
