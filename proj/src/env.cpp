#include "tadapt/env/env.hpp"

#include <algorithm>
#include <cmath>

namespace tadapt::env {

namespace {
constexpr double kLevelNorm = 4.0;

struct Move {
  int dx, dy;
};
// N, S, W, E
constexpr Move kMoves[4] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};

bool in_grid(int x, int y, int g) { return x >= 0 && x < g && y >= 0 && y < g; }

// Draws a free cell; rejection sampling over the grid.
std::pair<int, int> free_cell(const EnvState& s, int grid, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    int x = rng.uniform_int(0, grid - 1);
    int y = rng.uniform_int(0, grid - 1);
    if (s.cell_has_agent(x, y) || s.cell_has_food(x, y) || s.cell_has_obstacle(x, y))
      continue;
    if (s.kind == EnvKind::predator_prey && s.prey_x == x && s.prey_y == y) continue;
    return {x, y};
  }
  throw std::runtime_error("env: no free cell found (grid too small)");
}
}  // namespace

void OpenEnvConfig::validate() const {
  require(horizon >= 1, "config: horizon >= 1");
  require(gamma >= 0.0 && gamma < 1.0, "config: gamma in [0,1)");
  require(grid_size >= 2, "config: grid_size >= 2");
  require(n_controllable >= 1, "config: n_controllable >= 1");
  require(max_teammates >= 1, "config: max_teammates >= 1");
  require(vision_range >= 1, "config: vision_range >= 1");
  const int cells = grid_size * grid_size;
  int entities = n_slots();
  if (kind == EnvKind::lbf) entities += n_foods;
  if (kind == EnvKind::predator_prey) entities += 1 + n_obstacles;
  require(cells > entities, "config: grid too small to place entities without overlap");
  if (change.kind == SuddenChangeDist::Kind::discrete_uniform)
    require(change.low >= 1 && change.high >= change.low,
            "config: change distribution needs 1 <= low <= high");
}

bool EnvState::cell_has_agent(int x, int y, int skip_slot) const {
  for (size_t i = 0; i < agents.size(); ++i) {
    if (static_cast<int>(i) == skip_slot) continue;
    if (agents[i].active && agents[i].x == x && agents[i].y == y) return true;
  }
  return false;
}

bool EnvState::cell_has_food(int x, int y) const {
  for (const auto& f : foods)
    if (!f.collected && f.x == x && f.y == y) return true;
  return false;
}

bool EnvState::cell_has_obstacle(int x, int y) const {
  for (const auto& o : obstacles)
    if (o.first == x && o.second == y) return true;
  return false;
}

std::vector<int> sample_active_team(int max_teammates, Rng& rng) {
  require(max_teammates >= 1, "sample_active_team: max_teammates >= 1");
  require(max_teammates < 31, "sample_active_team: too many teammate slots");
  const int mask = rng.uniform_int(1, (1 << max_teammates) - 1);
  std::vector<int> team;
  for (int i = 0; i < max_teammates; ++i)
    if (mask & (1 << i)) team.push_back(i);
  return team;
}

bool tick_schedule(ScheduleState& sched, const SuddenChangeDist& dist, int max_teammates,
                   PolicySource* source,
                   std::shared_ptr<const TeammateController>& policy, Rng& rng) {
  if (dist.is_never()) return false;
  sched.waiting_time -= 1;
  if (sched.waiting_time > 0) return false;
  sched.waiting_time = dist.sample(rng);
  sched.active_team = sample_active_team(max_teammates, rng);
  policy = source->sample_policy(rng);
  sched.policy_handle = policy->handle();
  return true;
}

double lbf_reward(int collected_level, const std::vector<int>& all_food_levels) {
  require(!all_food_levels.empty(), "lbf_reward: empty food level list");
  int total = 0;
  for (int l : all_food_levels) {
    require(l > 0, "lbf_reward: food levels must be positive");
    total += l;
  }
  if (collected_level == 0) return 0.0;
  require(std::find(all_food_levels.begin(), all_food_levels.end(), collected_level) !=
              all_food_levels.end(),
          "lbf_reward: collected level not in food table");
  return static_cast<double>(collected_level) / static_cast<double>(total);
}

std::unique_ptr<World> make_world(const OpenEnvConfig& cfg) {
  if (cfg.kind == EnvKind::lbf) return std::make_unique<LbfWorld>(cfg);
  return std::make_unique<PpWorld>(cfg);
}

// ---------------------------------------------------------------------------
// LBF
// ---------------------------------------------------------------------------

int LbfWorld::obs_dim() const {
  const int side = 2 * cfg_.vision_range + 1;
  return side * side * 3 + 3 + (cfg_.n_slots() - 1) * 4 + 1;
}

int LbfWorld::state_dim() const {
  return cfg_.n_slots() * 4 + cfg_.n_foods * 4 + 1;
}

EnvState LbfWorld::reset(const std::vector<int>& active_team, Rng& rng) const {
  require(!active_team.empty(), "lbf reset: active team must be non-empty");
  EnvState s;
  s.kind = EnvKind::lbf;
  s.agents.resize(cfg_.n_slots());
  for (int i = 0; i < cfg_.n_controllable; ++i) {
    s.agents[i].active = true;
    s.agents[i].level = cfg_.controllable_level;
  }
  for (int off : active_team) {
    auto& a = s.agents[cfg_.n_controllable + off];
    a.active = true;
    a.level = cfg_.teammate_level;
  }
  for (auto& a : s.agents) {
    if (!a.active) continue;
    auto [x, y] = free_cell(s, cfg_.grid_size, rng);
    a.x = x;
    a.y = y;
  }
  // Food level cap: each food must be collectable by the three highest-level
  // agents acting together.
  std::vector<int> levels;
  for (const auto& a : s.agents)
    if (a.active) levels.push_back(a.level);
  std::sort(levels.rbegin(), levels.rend());
  int top3 = 0;
  for (size_t i = 0; i < levels.size() && i < 3; ++i) top3 += levels[i];
  const int cap = std::min(cfg_.max_food_level, std::max(1, top3));
  s.foods.resize(cfg_.n_foods);
  for (auto& f : s.foods) {
    auto [x, y] = free_cell(s, cfg_.grid_size, rng);
    f.x = x;
    f.y = y;
    f.level = rng.uniform_int(1, cap);
    f.collected = false;
  }
  return s;
}

StepOutcome LbfWorld::step(EnvState& s, const std::vector<int>& actions, Rng& rng) const {
  (void)rng;
  require(!s.done, "lbf step: episode already done");
  require(static_cast<int>(actions.size()) == cfg_.n_slots(), "lbf step: action count");
  for (int i = 0; i < cfg_.n_slots(); ++i)
    if (s.agents[i].active)
      require(actions[i] >= 0 && actions[i] < n_actions(),
              "lbf step: illegal action index " + std::to_string(actions[i]));

  // Movement, resolved in slot order; blocked moves leave the agent in place.
  for (int i = 0; i < cfg_.n_slots(); ++i) {
    auto& a = s.agents[i];
    if (!a.active || actions[i] >= kActLoad) continue;
    const auto& mv = kMoves[actions[i]];
    const int nx = a.x + mv.dx, ny = a.y + mv.dy;
    if (!in_grid(nx, ny, cfg_.grid_size)) continue;
    if (s.cell_has_agent(nx, ny) || s.cell_has_food(nx, ny)) continue;
    a.x = nx;
    a.y = ny;
  }

  // Loading: all loaders adjacent to a food pool their levels.
  std::vector<int> all_levels;
  for (const auto& f : s.foods) all_levels.push_back(f.level);
  double reward = 0.0;
  for (auto& f : s.foods) {
    if (f.collected) continue;
    int level_sum = 0;
    for (int i = 0; i < cfg_.n_slots(); ++i) {
      const auto& a = s.agents[i];
      if (!a.active || actions[i] != kActLoad) continue;
      if (std::abs(a.x - f.x) + std::abs(a.y - f.y) == 1) level_sum += a.level;
    }
    if (level_sum >= f.level && level_sum > 0) {
      f.collected = true;
      reward += lbf_reward(f.level, all_levels);
    }
  }

  s.step_index += 1;
  const bool all_collected = std::all_of(s.foods.begin(), s.foods.end(),
                                         [](const FoodEnt& f) { return f.collected; });
  s.done = all_collected || s.step_index >= cfg_.horizon;
  return {reward, s.done};
}

Vec LbfWorld::observe(const EnvState& s, int slot) const {
  const auto& me = s.agents[slot];
  const int r = cfg_.vision_range;
  const int side = 2 * r + 1;
  const double gn = static_cast<double>(cfg_.grid_size);
  Vec o = Vec::Zero(obs_dim());
  int idx = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int x = me.x + dx, y = me.y + dy;
      double food = 0.0, agent = 0.0, wall = 0.0;
      if (!in_grid(x, y, cfg_.grid_size)) {
        wall = 1.0;
      } else {
        for (const auto& f : s.foods)
          if (!f.collected && f.x == x && f.y == y) food = f.level / kLevelNorm;
        for (const auto& a : s.agents)
          if (a.active && a.x == x && a.y == y) agent = a.level / kLevelNorm;
      }
      o[idx++] = food;
      o[idx++] = agent;
      o[idx++] = wall;
    }
  }
  (void)side;
  o[idx++] = me.x / (gn - 1.0);
  o[idx++] = me.y / (gn - 1.0);
  o[idx++] = me.level / kLevelNorm;
  for (int j = 0; j < cfg_.n_slots(); ++j) {
    if (j == slot) continue;
    const auto& a = s.agents[j];
    const bool visible = a.active && std::max(std::abs(a.x - me.x), std::abs(a.y - me.y)) <= r;
    o[idx++] = visible ? 1.0 : 0.0;
    o[idx++] = visible ? (a.x - me.x) / gn : 0.0;
    o[idx++] = visible ? (a.y - me.y) / gn : 0.0;
    o[idx++] = visible ? a.level / kLevelNorm : 0.0;
  }
  o[idx++] = static_cast<double>(s.step_index) / cfg_.horizon;
  return o;
}

Vec LbfWorld::state_features(const EnvState& s) const {
  const double gn = static_cast<double>(cfg_.grid_size);
  Vec f = Vec::Zero(state_dim());
  int idx = 0;
  for (const auto& a : s.agents) {
    f[idx++] = a.active ? a.x / (gn - 1.0) : 0.0;
    f[idx++] = a.active ? a.y / (gn - 1.0) : 0.0;
    f[idx++] = a.active ? a.level / kLevelNorm : 0.0;
    f[idx++] = a.active ? 1.0 : 0.0;
  }
  for (const auto& fd : s.foods) {
    f[idx++] = fd.x / (gn - 1.0);
    f[idx++] = fd.y / (gn - 1.0);
    f[idx++] = fd.level / kLevelNorm;
    f[idx++] = fd.collected ? 0.0 : 1.0;
  }
  f[idx++] = static_cast<double>(s.step_index) / cfg_.horizon;
  return f;
}

void LbfWorld::spawn_agent(EnvState& s, int slot, Rng& rng) const {
  auto [x, y] = free_cell(s, cfg_.grid_size, rng);
  s.agents[slot].x = x;
  s.agents[slot].y = y;
  s.agents[slot].level = cfg_.teammate_level;
  s.agents[slot].active = true;
}

// ---------------------------------------------------------------------------
// Predator-prey
// ---------------------------------------------------------------------------

int PpWorld::obs_dim() const {
  const int side = 2 * cfg_.vision_range + 1;
  return side * side * 3 + 2 + (cfg_.n_slots() - 1) * 3 + 3 + 1;
}

int PpWorld::state_dim() const {
  return cfg_.n_slots() * 3 + 2 + cfg_.n_obstacles * 2 + 1;
}

EnvState PpWorld::reset(const std::vector<int>& active_team, Rng& rng) const {
  require(!active_team.empty(), "pp reset: active team must be non-empty");
  EnvState s;
  s.kind = EnvKind::predator_prey;
  s.agents.resize(cfg_.n_slots());
  s.prey_x = -1000;  // keep prey out of the way while placing
  s.prey_y = -1000;
  for (int i = 0; i < cfg_.n_controllable; ++i) s.agents[i].active = true;
  for (int off : active_team) s.agents[cfg_.n_controllable + off].active = true;
  for (int k = 0; k < cfg_.n_obstacles; ++k) {
    auto [x, y] = free_cell(s, cfg_.grid_size, rng);
    s.obstacles.emplace_back(x, y);
  }
  for (auto& a : s.agents) {
    if (!a.active) continue;
    auto [x, y] = free_cell(s, cfg_.grid_size, rng);
    a.x = x;
    a.y = y;
  }
  auto [px, py] = free_cell(s, cfg_.grid_size, rng);
  s.prey_x = px;
  s.prey_y = py;
  return s;
}

StepOutcome PpWorld::step(EnvState& s, const std::vector<int>& actions, Rng& rng) const {
  (void)rng;
  require(!s.done, "pp step: episode already done");
  require(static_cast<int>(actions.size()) == cfg_.n_slots(), "pp step: action count");
  for (int i = 0; i < cfg_.n_slots(); ++i)
    if (s.agents[i].active)
      require(actions[i] >= 0 && actions[i] < n_actions(),
              "pp step: illegal action index " + std::to_string(actions[i]));

  for (int i = 0; i < cfg_.n_slots(); ++i) {
    auto& a = s.agents[i];
    if (!a.active || actions[i] == kActStay) continue;
    const auto& mv = kMoves[actions[i]];
    const int nx = a.x + mv.dx, ny = a.y + mv.dy;
    if (!in_grid(nx, ny, cfg_.grid_size)) continue;
    if (s.cell_has_agent(nx, ny) || s.cell_has_obstacle(nx, ny)) continue;
    a.x = nx;
    a.y = ny;
  }

  double reward = 0.0;
  for (const auto& a : s.agents)
    if (a.active && a.x == s.prey_x && a.y == s.prey_y) reward += kCollisionReward;

  // Scripted flee: the prey picks the move maximizing distance to the nearest
  // predator; ties resolve to the lowest action index (stay considered last).
  int best_a = kActStay;
  int best_d = -1;
  for (int a = 0; a <= kActStay; ++a) {
    int nx = s.prey_x, ny = s.prey_y;
    if (a != kActStay) {
      nx += kMoves[a].dx;
      ny += kMoves[a].dy;
      if (!in_grid(nx, ny, cfg_.grid_size)) continue;
      if (s.cell_has_agent(nx, ny) || s.cell_has_obstacle(nx, ny)) continue;
    }
    int d = 1 << 20;
    for (const auto& ag : s.agents)
      if (ag.active) d = std::min(d, std::abs(ag.x - nx) + std::abs(ag.y - ny));
    if (d > best_d) {
      best_d = d;
      best_a = a;
    }
  }
  if (best_a != kActStay) {
    s.prey_x += kMoves[best_a].dx;
    s.prey_y += kMoves[best_a].dy;
  }

  s.step_index += 1;
  s.done = s.step_index >= cfg_.horizon;
  return {reward, s.done};
}

Vec PpWorld::observe(const EnvState& s, int slot) const {
  const auto& me = s.agents[slot];
  const int r = cfg_.vision_range;
  const double gn = static_cast<double>(cfg_.grid_size);
  Vec o = Vec::Zero(obs_dim());
  int idx = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int x = me.x + dx, y = me.y + dy;
      double pred = 0.0, prey = 0.0, blocked = 0.0;
      if (!in_grid(x, y, cfg_.grid_size)) {
        blocked = 1.0;
      } else {
        if (s.cell_has_agent(x, y)) pred = 1.0;
        if (s.prey_x == x && s.prey_y == y) prey = 1.0;
        if (s.cell_has_obstacle(x, y)) blocked = 1.0;
      }
      o[idx++] = pred;
      o[idx++] = prey;
      o[idx++] = blocked;
    }
  }
  o[idx++] = me.x / (gn - 1.0);
  o[idx++] = me.y / (gn - 1.0);
  for (int j = 0; j < cfg_.n_slots(); ++j) {
    if (j == slot) continue;
    const auto& a = s.agents[j];
    const bool visible = a.active && std::max(std::abs(a.x - me.x), std::abs(a.y - me.y)) <= r;
    o[idx++] = visible ? 1.0 : 0.0;
    o[idx++] = visible ? (a.x - me.x) / gn : 0.0;
    o[idx++] = visible ? (a.y - me.y) / gn : 0.0;
  }
  const bool prey_vis =
      std::max(std::abs(s.prey_x - me.x), std::abs(s.prey_y - me.y)) <= r;
  o[idx++] = prey_vis ? 1.0 : 0.0;
  o[idx++] = prey_vis ? (s.prey_x - me.x) / gn : 0.0;
  o[idx++] = prey_vis ? (s.prey_y - me.y) / gn : 0.0;
  o[idx++] = static_cast<double>(s.step_index) / cfg_.horizon;
  return o;
}

Vec PpWorld::state_features(const EnvState& s) const {
  const double gn = static_cast<double>(cfg_.grid_size);
  Vec f = Vec::Zero(state_dim());
  int idx = 0;
  for (const auto& a : s.agents) {
    f[idx++] = a.active ? a.x / (gn - 1.0) : 0.0;
    f[idx++] = a.active ? a.y / (gn - 1.0) : 0.0;
    f[idx++] = a.active ? 1.0 : 0.0;
  }
  f[idx++] = s.prey_x / (gn - 1.0);
  f[idx++] = s.prey_y / (gn - 1.0);
  for (const auto& ob : s.obstacles) {
    f[idx++] = ob.first / (gn - 1.0);
    f[idx++] = ob.second / (gn - 1.0);
  }
  f[idx++] = static_cast<double>(s.step_index) / cfg_.horizon;
  return f;
}

void PpWorld::spawn_agent(EnvState& s, int slot, Rng& rng) const {
  auto [x, y] = free_cell(s, cfg_.grid_size, rng);
  s.agents[slot].x = x;
  s.agents[slot].y = y;
  s.agents[slot].active = true;
}

// ---------------------------------------------------------------------------
// OpenEnv
// ---------------------------------------------------------------------------

OpenEnv::OpenEnv(OpenEnvConfig cfg, std::shared_ptr<PolicySource> source)
    : world_(make_world(cfg)), source_(std::move(source)) {}

void OpenEnv::refresh_presence() {
  const auto& cfg = world_->config();
  presence_.assign(cfg.max_teammates, 0);
  for (int off : sched_.active_team) presence_[off] = 1;
}

std::vector<Vec> OpenEnv::reset(Rng& rng) {
  const auto& cfg = world_->config();
  if (!pinned_) {
    sched_.waiting_time =
        cfg.change.is_never() ? kInfiniteWait : cfg.change.sample(rng);
    sched_.active_team = sample_active_team(cfg.max_teammates, rng);
    require(source_ != nullptr, "OpenEnv: no policy source and no pinned policy");
    policy_ = source_->sample_policy(rng);
    sched_.policy_handle = policy_->handle();
  }
  state_ = world_->reset(sched_.active_team, rng);
  refresh_presence();
  last_tm_actions_.assign(cfg.max_teammates, -1);
  std::vector<Vec> obs;
  for (int i = 0; i < cfg.n_controllable; ++i) obs.push_back(world_->observe(state_, i));
  return obs;
}

void OpenEnv::pin_policy(std::shared_ptr<const TeammateController> policy,
                         std::vector<int> active_team) {
  require(!active_team.empty(), "pin_policy: active team must be non-empty");
  pinned_ = true;
  policy_ = std::move(policy);
  sched_.waiting_time = kInfiniteWait;
  sched_.active_team = std::move(active_team);
  sched_.policy_handle = policy_ ? policy_->handle() : -1;
}

OpenEnv::Step OpenEnv::step(const std::vector<int>& controllable_actions, Rng& rng) {
  const auto& cfg = world_->config();
  require(static_cast<int>(controllable_actions.size()) == cfg.n_controllable,
          "OpenEnv::step: need one action per controllable agent");
  std::vector<int> actions(cfg.n_slots(), 0);
  for (int i = 0; i < cfg.n_controllable; ++i) actions[i] = controllable_actions[i];
  last_tm_actions_.assign(cfg.max_teammates, -1);
  for (int off : sched_.active_team) {
    const int slot = cfg.n_controllable + off;
    const int a = policy_->act(state_, cfg, slot, rng);
    actions[slot] = a;
    last_tm_actions_[off] = a;
  }
  refresh_presence();

  const StepOutcome out = world_->step(state_, actions, rng);

  bool changed = false;
  if (!pinned_ && !cfg.change.is_never() && !out.done) {
    const auto old_team = sched_.active_team;
    changed = tick_schedule(sched_, cfg.change, cfg.max_teammates, source_.get(),
                            policy_, rng);
    if (changed) {
      // Despawn departing slots, spawn joiners; world state otherwise intact.
      for (int off = 0; off < cfg.max_teammates; ++off) {
        const bool was = std::find(old_team.begin(), old_team.end(), off) != old_team.end();
        const bool now = std::find(sched_.active_team.begin(), sched_.active_team.end(),
                                   off) != sched_.active_team.end();
        const int slot = cfg.n_controllable + off;
        if (was && !now) state_.agents[slot].active = false;
        if (!was && now) world_->spawn_agent(state_, slot, rng);
      }
    }
  }

  Step st;
  st.reward = out.reward;
  st.done = out.done;
  st.team_changed = changed;
  for (int i = 0; i < cfg.n_controllable; ++i)
    st.obs.push_back(world_->observe(state_, i));
  return st;
}

}  // namespace tadapt::env
