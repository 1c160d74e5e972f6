#pragma once

#include <optional>
#include <vector>

#include "tadapt/nn/modules.hpp"

namespace tadapt::ctx {

// Recurrent Gaussian encoder used for both the global context z and the
// per-agent local contexts e^i: 2-layer MLP, GRU, diagonal Gaussian head.
class GaussianRecurrentEncoder {
 public:
  GaussianRecurrentEncoder() = default;
  GaussianRecurrentEncoder(int in_dim, int hidden, int out_dim, Rng& rng,
                           double sigma_floor = 1e-4, const std::string& name = "enc");

  struct StepOut {
    nn::Var h;      // next recurrent state (B, hidden)
    nn::Var mu;     // (B, out_dim)
    nn::Var sigma;  // (B, out_dim), >= sigma_floor
  };
  StepOut step(nn::Graph& g, nn::Var x, nn::Var h) const;

  // Evaluation-mode single-row step: returns mu and the next hidden state.
  std::pair<Vec, Vec> step_eval(const Vec& x, const Vec& h) const;

  Mat initial_state(int batch) const { return Mat::Zero(batch, hidden_); }
  int out_dim() const { return out_dim_; }
  int in_dim() const { return in_dim_; }
  int hidden() const { return hidden_; }
  double sigma_floor() const { return head_.sigma_floor; }

  std::vector<nn::Parameter*> params();

 private:
  int in_dim_ = 0, hidden_ = 0, out_dim_ = 0;
  nn::MLP pre_;
  nn::GRUCell cell_;
  nn::GaussianHead head_;
};

// Variational approximation q(e | z, local features): 3-layer MLP with a
// diagonal Gaussian output.
class VariationalHead {
 public:
  VariationalHead() = default;
  VariationalHead(int z_dim, int feat_dim, int e_dim, int hidden, Rng& rng,
                  const std::string& name = "q_var");

  nn::GaussianHead::Out forward(nn::Graph& g, nn::Var z, nn::Var feats) const;
  std::vector<nn::Parameter*> params();

 private:
  nn::MLP trunk_;
  nn::GaussianHead head_;
};

// Per-agent decoder reconstructing teammate observations (squared error) and
// actions (categorical) from the agent's local context.
class TeammateReconstructor {
 public:
  TeammateReconstructor() = default;
  TeammateReconstructor(int e_dim, int max_teammates, int tm_obs_dim, int n_actions,
                        int hidden, Rng& rng, const std::string& name = "rec");

  nn::Var obs_pred(nn::Graph& g, nn::Var e) const;      // (B, max_t*obs_dim)
  nn::Var action_logits(nn::Graph& g, nn::Var e) const; // (B, max_t*n_actions)
  int max_teammates() const { return max_t_; }
  int tm_obs_dim() const { return obs_dim_; }
  int n_actions() const { return n_actions_; }
  std::vector<nn::Parameter*> params();

 private:
  int max_t_ = 0, obs_dim_ = 0, n_actions_ = 0;
  nn::MLP obs_net_;
  nn::MLP act_net_;
};

// Stop-gradient moving-average targets z_bar^m and e_bar^{m,i}; initialized to
// zero vectors when a cluster first appears.
struct MovingAverageBank {
  double eta = 0.01;
  int z_dim = 0, e_dim = 0, n_agents = 0;
  std::vector<Vec> z_bars;               // per cluster
  std::vector<std::vector<Vec>> e_bars;  // [cluster][agent]

  MovingAverageBank() = default;
  MovingAverageBank(double eta_, int z_dim_, int e_dim_, int n_agents_)
      : eta(eta_), z_dim(z_dim_), e_dim(e_dim_), n_agents(n_agents_) {}

  void ensure_clusters(int m_count);
  int n_clusters() const { return static_cast<int>(z_bars.size()); }
};

// bar' = eta*bar + (1-eta)*batch_mean (no gradient into bar)
Vec update_moving_average(const Vec& bar, const Vec& batch_mean, double eta);

// R(i,j) = exp(-kappa * ||mean_i - mean_j||^2)
Mat relational_matrix(const std::vector<Vec>& means, double kappa);

inline constexpr double kDetJitter = 1e-6;

// Samples of one cluster within a batch: rows of `samples` are z_t (or e_t).
struct ClusterSamples {
  int cluster = 0;
  nn::Var samples;  // (N_m, dim)
};

// Eq. 5 / Eq. 9 functional form: sum_m E||x - bar'||^2 - log det(R_bar + eps I).
// The squared term's target is the stop-gradient of the freshly updated bar;
// the relational matrix keeps the (1-eta)*batch-mean gradient path. Bars for
// clusters absent from the batch enter R as constants and are left untouched.
// When `bank_out` is non-null, updated bar values are written back.
nn::Var context_separation_loss(nn::Graph& g, const std::vector<ClusterSamples>& groups,
                                const std::vector<Vec>& stored_bars, double eta,
                                double kappa, std::vector<Vec>* bank_out);

// Scalar-level compositions (Eq. 6 and Eq. 11).
double adap_loss(double td, double gce, double alpha_gce);
double dec_loss(double td, double mi, double lce, double rec, double alpha_mi,
                double alpha_lce, double alpha_rec);

// Closed-form diagonal-Gaussian entropy per row: 0.5*sum_d(1+log 2pi+2 log sigma_d).
nn::Var gaussian_entropy(nn::Graph& g, nn::Var sigma);

// One (cluster, agent) group of aligned samples for the MI bound.
struct MiGroup {
  nn::Var e;        // (N, e_dim) reparameterized samples
  nn::Var sigma_e;  // (N, e_dim) encoder stds (entropy term)
  nn::Var z;        // (N, z_dim); stop-gradient applied internally
  nn::Var feats;    // (N, feat_dim) conditioning features
};

// Negative variational MI lower bound (to minimize):
//   -E[log q(e|z,feats)] - H(e|feats), summed over groups.
nn::Var mi_loss(nn::Graph& g, const VariationalHead& q, const std::vector<MiGroup>& groups);

// One (cluster, agent) group of reconstruction targets.
struct RecGroup {
  nn::Var e;        // (N, e_dim)
  Mat tm_obs;       // (N, max_t*obs_dim) targets
  Mat presence;     // (N, max_t) 0/1 mask
  std::vector<std::vector<int>> tm_actions;  // [N][max_t], -1 when absent
};

// Masked squared error on teammate observations plus masked cross-entropy on
// teammate actions, both normalized per visible teammate-step.
nn::Var rec_loss(nn::Graph& g, const TeammateReconstructor& rec,
                 const std::vector<RecGroup>& groups);

}  // namespace tadapt::ctx
