#pragma once

#include <string>
#include <vector>

#include "tadapt/nn/modules.hpp"
#include "tadapt/pool/pool.hpp"

namespace tadapt::crp {

struct BehaviorModelConfig {
  int state_dim = 0;
  int n_slots = 0;
  int n_controllable = 0;
  int n_actions = 0;
  int embed_dim = 16;
  int d_model = 32;
  int n_layers = 2;  // paper-scale value (8) available via config
  int ffn_dim = 64;
  int decoder_hidden = 16;
  int max_len = 64;

  int token_dim() const { return state_dim + n_slots * n_actions; }
};

// Per-step tokens fed to the behavior encoder: [state ; one-hot joint action].
// Absent slots contribute zero action features.
Mat behavior_tokens(const pool::Trajectory& tr, const BehaviorModelConfig& cfg);

// Sequence-attention encoder mapping a trajectory to a fixed-size behavioral
// embedding. Single-head self-attention blocks with layer norm and an FFN,
// mean-pooled and projected to embed_dim.
class BehaviorEncoder {
 public:
  BehaviorEncoder(const BehaviorModelConfig& cfg, Rng& rng);

  nn::Var encode_var(nn::Graph& g, const pool::Trajectory& tr) const;  // (1,embed)
  Vec encode(const pool::Trajectory& tr) const;

  std::vector<nn::Parameter*> params();
  const BehaviorModelConfig& config() const { return cfg_; }

 private:
  struct Layer {
    nn::Linear q, k, v, o, f1, f2;
    nn::LayerNorm ln1, ln2;
  };
  BehaviorModelConfig cfg_;
  nn::Linear in_proj_;
  Mat pos_enc_;  // sinusoidal, (max_len, d_model)
  std::vector<Layer> layers_;
  nn::Linear out_;
};

// Recurrent decoder: given the state prefix and a behavioral embedding,
// emits a per-slot categorical distribution over the joint action.
class BehaviorDecoder {
 public:
  BehaviorDecoder(const BehaviorModelConfig& cfg, Rng& rng);

  // sum_t log D(a_t | s_0..s_t, v); absent slots are masked out of the sum
  nn::Var log_likelihood_var(nn::Graph& g, const pool::Trajectory& tr, nn::Var v) const;
  double log_likelihood(const pool::Trajectory& tr, const Vec& v) const;

  std::vector<nn::Parameter*> params();
  const BehaviorModelConfig& config() const { return cfg_; }

 private:
  BehaviorModelConfig cfg_;
  nn::GRUCell cell_;
  nn::Linear head_;
};

// mean of encode over a group's trajectory buffer
Vec group_embedding(const BehaviorEncoder& enc, const std::deque<pool::Trajectory>& buffer);

struct ClusterRegistry {
  struct Cluster {
    Vec mean;
    int count = 0;
    std::vector<int> members;  // group ids
  };
  std::vector<Cluster> clusters;
  double alpha = 0.5;
  int total_assigned = 0;  // K: groups assigned so far

  int n_clusters() const { return static_cast<int>(clusters.size()); }
  void check() const;
  std::vector<std::vector<int>> member_table() const;
  std::string serialize() const;
  static ClusterRegistry deserialize(const std::string& text);
};

// CRP prior over {existing clusters..., new cluster} for the k-th group
// (k must be total_assigned + 1). Returns M+1 probabilities summing to 1.
Vec crp_prior(const ClusterRegistry& reg, int k);

// Count-weighted candidate mean if group joins cluster m; m == M means new.
Vec candidate_embedding(const Vec& v_k, const ClusterRegistry& reg, int m);

struct AssignmentOutcome {
  int cluster = -1;           // chosen m* (0-based)
  bool created_new = false;
  std::vector<double> log_posterior;  // unnormalized, per candidate
};

// MAP assignment: argmax over m of log prior + mean per-trajectory decoder
// log-likelihood under the candidate embedding. Updates the registry and the
// group's cluster id. Ties break toward the lowest index.
AssignmentOutcome assign_cluster(pool::TeammateGroup& group, ClusterRegistry& reg,
                                 const BehaviorEncoder& enc, const BehaviorDecoder& dec);

// Clustering bypass: every group becomes its own cluster.
AssignmentOutcome assign_singleton(pool::TeammateGroup& group, ClusterRegistry& reg,
                                   const BehaviorEncoder& enc);

// -mean over the batch of log_likelihood(tau, encode(tau))
nn::Var model_loss_var(nn::Graph& g, const BehaviorEncoder& enc, const BehaviorDecoder& dec,
                       const std::vector<const pool::Trajectory*>& batch);
double model_loss(const BehaviorEncoder& enc, const BehaviorDecoder& dec,
                  const std::vector<const pool::Trajectory*>& batch);

struct ModelTrainStats {
  std::vector<double> losses;
};

// Optimizes encoder + decoder jointly over the union of group buffers.
ModelTrainStats train_behavior_model(BehaviorEncoder& enc, BehaviorDecoder& dec,
                                     const std::vector<pool::TeammateGroup>& groups,
                                     int steps, int batch_size, double lr, Rng& rng);

}  // namespace tadapt::crp
