#pragma once

#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "tadapt/common.hpp"

namespace tadapt::env {

enum class EnvKind { lbf, predator_prey };

// Waiting-time distribution between mid-episode teammate swaps.
struct SuddenChangeDist {
  enum class Kind { discrete_uniform, never };
  Kind kind = Kind::never;
  int low = 1;
  int high = 1;

  static SuddenChangeDist never() { return {Kind::never, 1, 1}; }
  static SuddenChangeDist uniform(int lo, int hi) {
    require(lo >= 1 && hi >= lo, "SuddenChangeDist: need 1 <= low <= high");
    return {Kind::discrete_uniform, lo, hi};
  }

  bool is_never() const { return kind == Kind::never; }
  int sample(Rng& rng) const {
    require(!is_never(), "SuddenChangeDist: cannot sample from 'never'");
    return rng.uniform_int(low, high);
  }
};

struct OpenEnvConfig {
  EnvKind kind = EnvKind::lbf;
  int n_controllable = 2;
  int max_teammates = 2;
  int grid_size = 6;
  int horizon = 25;
  double gamma = 0.99;
  int vision_range = 1;
  int n_foods = 3;             // lbf
  int n_obstacles = 2;         // predator_prey
  int controllable_level = 1;  // lbf
  int teammate_level = 2;      // lbf
  int max_food_level = 3;      // lbf; additionally capped by top-3 agent level sum
  SuddenChangeDist change = SuddenChangeDist::never();
  uint64_t seed = 0;

  int n_slots() const { return n_controllable + max_teammates; }
  void validate() const;
};

struct AgentEnt {
  int x = 0, y = 0;
  int level = 1;
  bool active = false;
};

struct FoodEnt {
  int x = 0, y = 0;
  int level = 1;
  bool collected = false;
};

// Full world state. Slots [0, n_controllable) are the controlled agents,
// slots [n_controllable, n_slots) the teammate slots.
struct EnvState {
  EnvKind kind = EnvKind::lbf;
  std::vector<AgentEnt> agents;
  std::vector<FoodEnt> foods;                    // lbf
  int prey_x = 0, prey_y = 0;                    // predator_prey
  std::vector<std::pair<int, int>> obstacles;    // predator_prey
  int step_index = 0;
  bool done = false;

  bool cell_has_agent(int x, int y, int skip_slot = -1) const;
  bool cell_has_food(int x, int y) const;
  bool cell_has_obstacle(int x, int y) const;
};

// Sentinel for the stationary setting: the waiting time never runs out.
inline constexpr int kInfiniteWait = -1;

struct ScheduleState {
  int waiting_time = kInfiniteWait;
  std::vector<int> active_team;  // teammate slot offsets in [0, max_teammates)
  int policy_handle = -1;        // identifies the active joint policy (pool group id)
};

// Decision interface for uncontrolled teammates. Scripted archetypes read the
// full state; slot is an absolute slot index.
class TeammateController {
 public:
  virtual ~TeammateController() = default;
  virtual int act(const EnvState& state, const OpenEnvConfig& cfg, int slot,
                  Rng& rng) const = 0;
  virtual int handle() const { return -1; }
};

// Source of fresh teammate joint policies for the scheduler.
class PolicySource {
 public:
  virtual ~PolicySource() = default;
  virtual std::shared_ptr<const TeammateController> sample_policy(Rng& rng) = 0;
};

// Samples a non-empty subset of teammate slots.
std::vector<int> sample_active_team(int max_teammates, Rng& rng);

// u <- u-1; on expiry resamples waiting time, team and policy. Returns true
// iff a change happened. Call after action resolution each step.
bool tick_schedule(ScheduleState& sched, const SuddenChangeDist& dist, int max_teammates,
                   PolicySource* source,
                   std::shared_ptr<const TeammateController>& policy, Rng& rng);

// r = collected level / sum of all food levels for the episode.
double lbf_reward(int collected_level, const std::vector<int>& all_food_levels);

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
};

// World mechanics for one env kind. Pure state-in/state-out plus encoders.
class World {
 public:
  virtual ~World() = default;
  virtual int n_actions() const = 0;
  virtual int obs_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual EnvState reset(const std::vector<int>& active_team, Rng& rng) const = 0;
  // actions: one per slot; entries for inactive slots are ignored.
  virtual StepOutcome step(EnvState& s, const std::vector<int>& actions,
                           Rng& rng) const = 0;
  virtual Vec observe(const EnvState& s, int slot) const = 0;
  virtual Vec state_features(const EnvState& s) const = 0;
  // Places a newly activated teammate on a free cell (mid-episode join).
  virtual void spawn_agent(EnvState& s, int slot, Rng& rng) const = 0;

  const OpenEnvConfig& config() const { return cfg_; }

 protected:
  explicit World(OpenEnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  OpenEnvConfig cfg_;
};

std::unique_ptr<World> make_world(const OpenEnvConfig& cfg);

// Level-based foraging on a square grid. Actions: N, S, W, E, load, no-op.
class LbfWorld final : public World {
 public:
  static constexpr int kActUp = 0, kActDown = 1, kActLeft = 2, kActRight = 3,
                       kActLoad = 4, kActNoop = 5;

  explicit LbfWorld(OpenEnvConfig cfg) : World(std::move(cfg)) {}
  int n_actions() const override { return 6; }
  int obs_dim() const override;
  int state_dim() const override;
  EnvState reset(const std::vector<int>& active_team, Rng& rng) const override;
  StepOutcome step(EnvState& s, const std::vector<int>& actions, Rng& rng) const override;
  Vec observe(const EnvState& s, int slot) const override;
  Vec state_features(const EnvState& s) const override;
  void spawn_agent(EnvState& s, int slot, Rng& rng) const override;
};

// Discrete predator-prey: predators chase a scripted fleeing prey.
// Actions: N, S, W, E, stay. +10 shared reward per predator on the prey cell.
class PpWorld final : public World {
 public:
  static constexpr int kActUp = 0, kActDown = 1, kActLeft = 2, kActRight = 3,
                       kActStay = 4;
  static constexpr double kCollisionReward = 10.0;

  explicit PpWorld(OpenEnvConfig cfg) : World(std::move(cfg)) {}
  int n_actions() const override { return 5; }
  int obs_dim() const override;
  int state_dim() const override;
  EnvState reset(const std::vector<int>& active_team, Rng& rng) const override;
  StepOutcome step(EnvState& s, const std::vector<int>& actions, Rng& rng) const override;
  Vec observe(const EnvState& s, int slot) const override;
  Vec state_features(const EnvState& s) const override;
  void spawn_agent(EnvState& s, int slot, Rng& rng) const override;
};

// The open environment: world dynamics + sudden-change scheduler + the active
// teammate joint policy. Controlled agents submit actions; teammates act
// internally. The scheduler ticks after action resolution, so a team change
// takes effect from the next decision point.
class OpenEnv {
 public:
  OpenEnv(OpenEnvConfig cfg, std::shared_ptr<PolicySource> source);

  std::vector<Vec> reset(Rng& rng);

  struct Step {
    std::vector<Vec> obs;  // controllable agents only
    double reward = 0.0;
    bool done = false;
    bool team_changed = false;
  };
  Step step(const std::vector<int>& controllable_actions, Rng& rng);

  // Pins a fixed teammate policy and team; the scheduler is disabled for the
  // episode (training-time stationarity).
  void pin_policy(std::shared_ptr<const TeammateController> policy,
                  std::vector<int> active_team);

  const EnvState& state() const { return state_; }
  const ScheduleState& schedule() const { return sched_; }
  const World& world() const { return *world_; }
  const OpenEnvConfig& config() const { return world_->config(); }

  Vec state_features() const { return world_->state_features(state_); }
  Vec observe(int slot) const { return world_->observe(state_, slot); }

  // Data recorded for the last step, used by trajectory recorders.
  const std::vector<int>& last_teammate_actions() const { return last_tm_actions_; }
  const std::vector<uint8_t>& presence() const { return presence_; }

 private:
  void refresh_presence();

  std::unique_ptr<World> world_;
  std::shared_ptr<PolicySource> source_;
  std::shared_ptr<const TeammateController> policy_;
  EnvState state_;
  ScheduleState sched_;
  bool pinned_ = false;
  std::vector<int> last_tm_actions_;
  std::vector<uint8_t> presence_;
};

}  // namespace tadapt::env
