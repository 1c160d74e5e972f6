#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tadapt/crp/crp.hpp"
#include "tadapt/ctx/context.hpp"
#include "tadapt/env/env.hpp"
#include "tadapt/pool/pool.hpp"
#include "tadapt/qmix/qmix.hpp"

namespace tadapt::train {

// Replay records are full episodes; teammates never change inside one.
using EpisodeBatch = pool::Trajectory;

struct TrainConfig {
  env::OpenEnvConfig env;

  // pool
  int traj_per_group = 32;
  int buffer_cap = 512;
  std::string partner = "current";       // or "random"
  std::string generation = "archetype";  // or "learned"
  std::vector<int> archetype_cycle = {0, 1, 2, 3};
  int learned_steps = 1500;

  // crp behavior model
  double alpha = 0.5;
  int embed_dim = 16;
  int d_model = 32;
  int encoder_layers = 2;
  int decoder_hidden = 16;
  int max_len = 64;
  int model_steps = 200;
  int model_batch = 16;
  double model_lr = 1e-3;

  // context
  int z_dim = 6;
  int e_dim = 4;
  int ctx_hidden = 64;
  int var_hidden = 64;
  int rec_hidden = 64;
  double kappa = 80.0;
  double eta = 0.01;
  double sigma_floor = 1e-4;

  // qmix
  int agent_hidden = 64;
  int mixing_embed = 32;
  int hyper_hidden = 64;
  double lr = 5e-4;
  double grad_clip = 10.0;
  int sync_interval = 200;
  double eps_start = 1.0;
  double eps_end = 0.05;
  long eps_anneal_steps = 50000;

  // trainer
  long total_env_steps = 200000;
  int batch_size = 8;
  int replay_capacity = 512;
  int groups_per_iteration = 4;
  long generation_interval = 50000;
  int max_groups = 16;
  double alpha_gce = 1.0;
  double alpha_mi = 0.001;
  double alpha_lce = 1.0;
  double alpha_rec = 0.1;
  uint64_t seed = 1;
  bool wo_crp = false;
  bool wo_mi = false;
  bool wo_lce = false;
  bool wo_rec = false;
  long checkpoint_interval = 50000;
  long eval_interval = 0;  // 0 disables periodic eval snapshots
  int eval_episodes = 10;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load_file(const std::string& path);

  double epsilon_at(long env_steps) const {
    if (env_steps >= eps_anneal_steps) return eps_end;
    const double frac = static_cast<double>(env_steps) / eps_anneal_steps;
    return eps_start + frac * (eps_end - eps_start);
  }
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}

  void push(EpisodeBatch ep);
  std::vector<const EpisodeBatch*> sample(int count, Rng& rng) const;
  size_t size() const { return episodes_.size(); }
  const std::deque<EpisodeBatch>& episodes() const { return episodes_; }

 private:
  size_t capacity_;
  std::deque<EpisodeBatch> episodes_;
};

struct LossParts {
  double td = 0.0, gce = 0.0, mi = 0.0, lce = 0.0, rec = 0.0;
  double adap = 0.0, dec = 0.0, total = 0.0;
};

// All live networks, their frozen target copies, the moving-average bank and
// the CRP behavior model. One Learner per training run.
class Learner {
 public:
  Learner(const TrainConfig& cfg, uint64_t seed);

  // --- acting (evaluation-mode context, epsilon-greedy utilities) ---
  struct ActorState {
    std::vector<Vec> h_f, h_q;
    std::vector<int> prev_action;
    void reset(const Learner& l);
  };
  // returns actions; optionally reports each agent's context vector e_t^i
  std::vector<int> act(ActorState& st, const std::vector<Vec>& obs, double epsilon,
                       Rng& rng, std::vector<Vec>* e_out = nullptr) const;

  // --- optimization ---
  LossParts compute_losses(nn::Graph& g, const std::vector<const EpisodeBatch*>& batch,
                           Rng& rng, bool update_bank, nn::Var* total_out);
  struct StepMetrics {
    LossParts losses;
    double bar_z_norm = 0.0, bar_e_norm = 0.0;
    bool skipped_nonfinite = false;
  };
  StepMetrics optimize_step(const std::vector<const EpisodeBatch*>& batch, Rng& rng);

  void sync_targets();
  int64_t updates() const { return updates_; }
  void set_updates(int64_t u) { updates_ = u; }

  const TrainConfig& config() const { return cfg_; }
  ctx::MovingAverageBank& bank() { return bank_; }
  crp::ClusterRegistry& registry() { return registry_; }
  const crp::ClusterRegistry& registry() const { return registry_; }
  crp::BehaviorEncoder& behavior_encoder() { return *benc_; }
  crp::BehaviorDecoder& behavior_decoder() { return *bdec_; }
  nn::Adam& optimizer() { return *opt_; }

  std::vector<nn::Parameter*> live_params();
  std::vector<nn::Parameter*> target_params();
  std::vector<nn::Parameter*> behavior_params();
  std::vector<nn::Parameter*> all_params();  // live + target + behavior

  int n_agents() const { return cfg_.env.n_controllable; }
  int n_actions() const { return n_actions_; }
  int obs_dim() const { return obs_dim_; }
  int state_dim() const { return state_dim_; }

  // exposed for the evaluation suite and tests
  const ctx::GaussianRecurrentEncoder& local_encoder(int i) const { return f_enc_[i]; }
  const ctx::GaussianRecurrentEncoder& global_encoder() const { return g_enc_; }
  const qmix::AgentQNetwork& agent_net(int i) const { return agents_[i]; }
  const qmix::MonotonicMixer& mixer() const { return mixer_; }

 private:
  friend class LearnerOracle;

  struct SubBatch;  // per-cluster padded view
  void build_subbatch(const std::vector<const EpisodeBatch*>& eps, SubBatch& sb) const;

  TrainConfig cfg_;
  int obs_dim_ = 0, state_dim_ = 0, n_actions_ = 0, n_slots_ = 0;

  ctx::GaussianRecurrentEncoder g_enc_;
  std::vector<ctx::GaussianRecurrentEncoder> f_enc_;
  std::vector<qmix::AgentQNetwork> agents_;
  qmix::MonotonicMixer mixer_;
  ctx::VariationalHead qvar_;
  std::vector<ctx::TeammateReconstructor> recs_;

  ctx::GaussianRecurrentEncoder tgt_g_enc_;
  std::vector<ctx::GaussianRecurrentEncoder> tgt_f_enc_;
  std::vector<qmix::AgentQNetwork> tgt_agents_;
  qmix::MonotonicMixer tgt_mixer_;

  ctx::MovingAverageBank bank_;
  std::unique_ptr<crp::BehaviorEncoder> benc_;
  std::unique_ptr<crp::BehaviorDecoder> bdec_;
  crp::ClusterRegistry registry_;

  std::unique_ptr<nn::Adam> opt_;
  int64_t updates_ = 0;
};

// QPolicyActor drives controllable agents with the learner's nets.
class QPolicyActor final : public pool::ControllableActor {
 public:
  QPolicyActor(const Learner& learner, double epsilon)
      : learner_(learner), epsilon_(epsilon) {}
  void begin_episode() override {
    state_.reset(learner_);
    // the local encoder state deliberately survives team changes; only a new
    // episode resets it
  }
  std::vector<int> act(const std::vector<Vec>& obs, Rng& rng) override {
    std::vector<Vec> e;
    auto actions =
        learner_.act(state_, obs, epsilon_, rng, context_log_ ? &e : nullptr);
    if (context_log_) context_log_->push_back(std::move(e));
    return actions;
  }
  void set_epsilon(double e) { epsilon_ = e; }
  // when set, receives the per-step context vectors e_t^i of the episode
  void log_context_to(std::vector<std::vector<Vec>>* sink) { context_log_ = sink; }

 private:
  const Learner& learner_;
  double epsilon_;
  Learner::ActorState state_;
  std::vector<std::vector<Vec>>* context_log_ = nullptr;
};

// One training episode with the group's policy pinned for its whole length.
EpisodeBatch rollout_episode(const Learner& learner, pool::TeammateGroup& group,
                             env::OpenEnv& e, double epsilon, Rng& rng);

struct RunResult {
  std::string run_dir;
  long env_steps = 0;
  int episodes = 0;
};

// Alg.-2-style alternation: periodic teammate generation + CRP assignment,
// stationary rollouts, replay, and per-episode optimization.
RunResult run_training(const TrainConfig& cfg, const std::string& run_dir,
                       const std::string& resume_ckpt = "");

}  // namespace tadapt::train
