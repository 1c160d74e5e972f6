#pragma once

#include <vector>

#include "tadapt/nn/modules.hpp"

namespace tadapt::qmix {

// Per-agent recurrent Q network over (observation, previous action, e^i).
class AgentQNetwork {
 public:
  AgentQNetwork() = default;
  AgentQNetwork(int obs_dim, int n_actions, int e_dim, int hidden, Rng& rng,
                const std::string& name = "agent");

  struct Out {
    nn::Var q;  // (B, n_actions)
    nn::Var h;  // (B, hidden)
  };
  Out step(nn::Graph& g, nn::Var x, nn::Var h) const;

  // evaluation-mode single-row step
  std::pair<Vec, Vec> step_eval(const Vec& x, const Vec& h) const;

  Mat initial_state(int batch) const { return Mat::Zero(batch, hidden_); }
  int input_dim() const { return in_dim_; }
  int n_actions() const { return n_actions_; }
  int hidden() const { return hidden_; }
  std::vector<nn::Parameter*> params();

 private:
  int in_dim_ = 0, n_actions_ = 0, hidden_ = 0;
  nn::Linear fc_in_;
  nn::GRUCell cell_;
  nn::Linear head_;
};

// QMIX-style hypernetwork mixer. All mixing weights pass through |.|, which
// makes Q_tot monotone in every agent utility.
class MonotonicMixer {
 public:
  MonotonicMixer() = default;
  MonotonicMixer(int n_agents, int state_dim, int z_dim, int embed, int hyper_hidden,
                 Rng& rng, const std::string& name = "mixer");

  // qs: (B, n_agents), sz: (B, state_dim + z_dim) -> (B, 1)
  nn::Var mix(nn::Graph& g, nn::Var qs, nn::Var sz) const;

  // Mixing with externally supplied (already nonnegative) weights; the
  // hypernetwork path routes through this.
  nn::Var mix_with(nn::Graph& g, nn::Var qs, nn::Var w1, nn::Var b1, nn::Var w2,
                   nn::Var b2) const;

  int n_agents() const { return n_agents_; }
  int embed() const { return embed_; }
  std::vector<nn::Parameter*> params();

 private:
  int n_agents_ = 0, embed_ = 0;
  nn::Linear hyper_w1_, hyper_b1_, hyper_w2_;
  nn::MLP hyper_b2_;
  Mat expand_, reduce_;  // constant routing matrices for batched per-sample mixing
};

// epsilon-greedy over available actions; greedy ties break to the lowest index.
int select_action(const Vec& q, double epsilon, const std::vector<uint8_t>& avail,
                  Rng& rng);

// hard parameter copy (target <- live)
void sync_target(const std::vector<nn::Parameter*>& live,
                 const std::vector<nn::Parameter*>& target);

}  // namespace tadapt::qmix
