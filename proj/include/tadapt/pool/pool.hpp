#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tadapt/env/env.hpp"
#include "tadapt/nn/modules.hpp"

namespace tadapt::pool {

// One full episode: global state/joint-action sequence plus the per-agent
// local views needed for context learning and teammate reconstruction.
struct Trajectory {
  std::vector<Vec> states;                        // length T+1
  std::vector<std::vector<int>> actions;          // [T][n_controllable]
  std::vector<std::vector<Vec>> obs;              // [T+1][n_controllable]
  std::vector<std::vector<int>> tm_actions;       // [T][max_teammates], -1 if absent
  std::vector<std::vector<Vec>> tm_obs;           // [T][max_teammates]
  std::vector<std::vector<uint8_t>> presence;     // [T][max_teammates]
  std::vector<double> rewards;                    // [T]
  std::vector<uint8_t> dones;                     // [T]
  std::vector<uint8_t> team_changed;              // [T]
  int group_id = -1;
  int cluster_id = -1;

  int length() const { return static_cast<int>(actions.size()); }
  double episode_return() const {
    double r = 0.0;
    for (double x : rewards) r += x;
    return r;
  }
  // action taken by an absolute slot at step t; -1 when the slot was absent
  int slot_action(int t, int slot, int n_controllable) const {
    if (slot < n_controllable) return actions[t][slot];
    return tm_actions[t][slot - n_controllable];
  }
  void check_alignment() const;
};

// A scripted or learned joint policy for the uncontrolled teammates.
class TeammatePolicy : public env::TeammateController {
 public:
  enum class Kind { scripted, learned };

  // scripted archetype
  TeammatePolicy(int script_id, std::string name, env::EnvKind env_kind);
  // learned policy backed by a shared per-slot Q network over state features
  TeammatePolicy(std::shared_ptr<nn::MLP> qnet, std::string name, env::EnvKind env_kind,
                 int n_actions, int n_slots);

  int act(const env::EnvState& state, const env::OpenEnvConfig& cfg, int slot,
          Rng& rng) const override;
  int handle() const override { return group_id_; }
  void set_handle(int group_id) { group_id_ = group_id; }

  Kind kind() const { return kind_; }
  int script_id() const { return script_id_; }
  const std::string& name() const { return name_; }
  nn::MLP* qnet() { return qnet_.get(); }
  const nn::MLP* qnet() const { return qnet_.get(); }

 private:
  Kind kind_;
  int script_id_ = -1;
  std::string name_;
  env::EnvKind env_kind_;
  std::shared_ptr<nn::MLP> qnet_;
  int n_actions_ = 0;
  int n_slots_ = 0;
  int group_id_ = -1;
};

// Behaviorally distinct scripted policies for one env kind.
std::vector<std::shared_ptr<TeammatePolicy>> build_archetypes(env::EnvKind kind);

// Feature vector a learned teammate policy conditions on.
Vec teammate_view_features(const env::World& world, const env::EnvState& s, int slot);

struct TeammateGroup {
  int group_id = 0;  // dense, 1-based
  std::shared_ptr<TeammatePolicy> policy;
  std::deque<Trajectory> buffer;
  Vec embedding;        // defined once >=1 trajectory has been encoded
  int cluster_id = -1;  // set by assignment
  uint64_t seed = 0;
};

// Decides controllable-agent actions during trajectory collection.
class ControllableActor {
 public:
  virtual ~ControllableActor() = default;
  virtual void begin_episode() = 0;
  virtual std::vector<int> act(const std::vector<Vec>& obs, Rng& rng) = 0;
};

class RandomActor final : public ControllableActor {
 public:
  RandomActor(int n_agents, int n_actions) : n_(n_agents), a_(n_actions) {}
  void begin_episode() override {}
  std::vector<int> act(const std::vector<Vec>&, Rng& rng) override {
    std::vector<int> out(n_);
    for (int& x : out) x = rng.uniform_int(0, a_ - 1);
    return out;
  }

 private:
  int n_, a_;
};

// Runs one full episode with a pinned teammate policy (no mid-episode change).
Trajectory run_episode(env::OpenEnv& e, ControllableActor& actor,
                       std::shared_ptr<const TeammatePolicy> policy,
                       const std::vector<int>& active_team, Rng& rng);

// One-line structured record round trip (used by dumps and checkpoints).
std::string trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const std::string& line);

struct GenerationRecipe {
  enum class Kind { archetype, learned };
  Kind kind = Kind::archetype;
  int archetype_id = 0;
  int train_env_steps = 1500;  // learned recipe budget
};

class ClusterRegistryView;  // forward decl (crp module owns the registry type)

class TeammatePool : public env::PolicySource {
 public:
  TeammatePool(env::OpenEnvConfig cfg, size_t buffer_cap = 512);

  TeammateGroup& generate_group(const GenerationRecipe& recipe, Rng& rng);
  // Appends `count` stationary full episodes to the group's buffer.
  void collect_trajectories(TeammateGroup& group, int count, ControllableActor& actor,
                            Rng& rng);

  // Uniform over clusters, then uniform over member groups.
  // `cluster_members[m]` lists group ids in cluster m.
  std::pair<int, int> sample_training_group(
      const std::vector<std::vector<int>>& cluster_members, Rng& rng) const;

  // PolicySource: uniform over generated groups (evaluation-time pool).
  std::shared_ptr<const env::TeammateController> sample_policy(Rng& rng) override;

  TeammateGroup& group_by_id(int group_id);
  const TeammateGroup& group_by_id(int group_id) const;
  std::vector<TeammateGroup>& groups() { return groups_; }
  const std::vector<TeammateGroup>& groups() const { return groups_; }
  int size() const { return static_cast<int>(groups_.size()); }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  const env::OpenEnvConfig& config() const { return cfg_; }
  size_t buffer_cap() const { return buffer_cap_; }

  void save(const std::string& dir) const;
  void load(const std::string& dir);

 private:
  std::shared_ptr<TeammatePolicy> train_learned_policy(int env_steps, uint64_t seed);

  env::OpenEnvConfig cfg_;
  std::vector<std::shared_ptr<TeammatePolicy>> archetypes_;
  std::vector<TeammateGroup> groups_;
  size_t buffer_cap_;
  bool frozen_ = false;
};

// Restricts a pool to a fixed group or cluster; used by cross-play rows and
// cluster-conditioned evaluation.
class FixedPolicySource final : public env::PolicySource {
 public:
  FixedPolicySource(TeammatePool& pool, std::vector<int> group_ids)
      : pool_(pool), group_ids_(std::move(group_ids)) {
    require(!group_ids_.empty(), "FixedPolicySource: need >=1 group");
  }
  std::shared_ptr<const env::TeammateController> sample_policy(Rng& rng) override {
    const int gid = group_ids_[rng.uniform_int(0, static_cast<int>(group_ids_.size()) - 1)];
    return pool_.group_by_id(gid).policy;
  }

 private:
  TeammatePool& pool_;
  std::vector<int> group_ids_;
};

}  // namespace tadapt::pool
