#include "tadapt/pool/pool.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace tadapt::pool {

using json = nlohmann::json;
namespace fs = std::filesystem;

void Trajectory::check_alignment() const {
  const size_t T = actions.size();
  require(states.size() == T + 1, "trajectory: |tau_S| must equal |tau_A|+1");
  require(obs.size() == T + 1, "trajectory: local obs must align with states");
  require(tm_actions.size() == T && tm_obs.size() == T && presence.size() == T &&
              rewards.size() == T && dones.size() == T,
          "trajectory: per-step sequences must align");
}

// ---------------------------------------------------------------------------
// Scripted archetypes
// ---------------------------------------------------------------------------

namespace {

using env::EnvState;
using env::LbfWorld;
using env::OpenEnvConfig;
using env::PpWorld;

bool lbf_cell_free(const EnvState& s, const OpenEnvConfig& cfg, int x, int y) {
  if (x < 0 || x >= cfg.grid_size || y < 0 || y >= cfg.grid_size) return false;
  return !s.cell_has_agent(x, y) && !s.cell_has_food(x, y) && !s.cell_has_obstacle(x, y);
}

// Deterministic approach move. `vertical_first` flips the preferred axis so
// that different archetypes take visibly different routes to the same target.
int step_toward(const EnvState& s, const OpenEnvConfig& cfg, int slot, int tx, int ty,
                bool vertical_first, int noop_action) {
  const auto& me = s.agents[slot];
  const int dx = tx - me.x, dy = ty - me.y;
  struct Cand {
    int action, nx, ny;
  };
  std::vector<Cand> cands;
  auto push_x = [&] {
    if (dx > 0) cands.push_back({LbfWorld::kActRight, me.x + 1, me.y});
    if (dx < 0) cands.push_back({LbfWorld::kActLeft, me.x - 1, me.y});
  };
  auto push_y = [&] {
    if (dy > 0) cands.push_back({LbfWorld::kActDown, me.x, me.y + 1});
    if (dy < 0) cands.push_back({LbfWorld::kActUp, me.x, me.y - 1});
  };
  if (vertical_first) {
    push_y();
    push_x();
  } else {
    push_x();
    push_y();
  }
  for (const auto& c : cands)
    if (lbf_cell_free(s, cfg, c.nx, c.ny)) return c.action;
  return noop_action;
}

int nearest_food_index(const EnvState& s, int x, int y) {
  int best = -1, bestd = 1 << 20;
  for (size_t i = 0; i < s.foods.size(); ++i) {
    if (s.foods[i].collected) continue;
    const int d = std::abs(s.foods[i].x - x) + std::abs(s.foods[i].y - y);
    if (d < bestd) {
      bestd = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

int highest_food_index(const EnvState& s, int x, int y) {
  int best = -1, bestl = -1, bestd = 1 << 20;
  for (size_t i = 0; i < s.foods.size(); ++i) {
    if (s.foods[i].collected) continue;
    const int d = std::abs(s.foods[i].x - x) + std::abs(s.foods[i].y - y);
    if (s.foods[i].level > bestl || (s.foods[i].level == bestl && d < bestd)) {
      bestl = s.foods[i].level;
      bestd = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

bool adjacent_to_food(const EnvState& s, int slot, int food) {
  const auto& me = s.agents[slot];
  const auto& f = s.foods[food];
  return std::abs(me.x - f.x) + std::abs(me.y - f.y) == 1;
}

int any_adjacent_uncollected_food(const EnvState& s, int slot) {
  for (size_t i = 0; i < s.foods.size(); ++i)
    if (!s.foods[i].collected && adjacent_to_food(s, slot, static_cast<int>(i)))
      return static_cast<int>(i);
  return -1;
}

int lbf_script(int script_id, const EnvState& s, const OpenEnvConfig& cfg, int slot,
               Rng& rng) {
  const auto& me = s.agents[slot];
  switch (script_id) {
    case 0: {  // nearest-food-greedy
      const int f = nearest_food_index(s, me.x, me.y);
      if (f < 0) return LbfWorld::kActNoop;
      if (adjacent_to_food(s, slot, f)) return LbfWorld::kActLoad;
      return step_toward(s, cfg, slot, s.foods[f].x, s.foods[f].y, true,
                         LbfWorld::kActNoop);
    }
    case 1: {  // highest-level-food-seeker
      const int f = highest_food_index(s, me.x, me.y);
      if (f < 0) return LbfWorld::kActNoop;
      if (adjacent_to_food(s, slot, f)) return LbfWorld::kActLoad;
      return step_toward(s, cfg, slot, s.foods[f].x, s.foods[f].y, false,
                         LbfWorld::kActNoop);
    }
    case 2:  // random-walker
      return rng.uniform_int(0, 5);
    case 3: {  // follower-of-nearest-agent
      const int adj = any_adjacent_uncollected_food(s, slot);
      if (adj >= 0) return LbfWorld::kActLoad;
      int best = -1, bestd = 1 << 20;
      for (size_t j = 0; j < s.agents.size(); ++j) {
        if (static_cast<int>(j) == slot || !s.agents[j].active) continue;
        const int d = std::abs(s.agents[j].x - me.x) + std::abs(s.agents[j].y - me.y);
        if (d < bestd) {
          bestd = d;
          best = static_cast<int>(j);
        }
      }
      if (best < 0 || bestd <= 1) return LbfWorld::kActNoop;
      return step_toward(s, cfg, slot, s.agents[best].x, s.agents[best].y, true,
                         LbfWorld::kActNoop);
    }
    default:
      throw std::invalid_argument("lbf_script: unknown script id");
  }
}

int pp_chase(const EnvState& s, const OpenEnvConfig& cfg, int slot, bool vertical_first) {
  const auto& me = s.agents[slot];
  if (me.x == s.prey_x && me.y == s.prey_y) return PpWorld::kActStay;
  return step_toward(s, cfg, slot, s.prey_x, s.prey_y, vertical_first, PpWorld::kActStay);
}

int pp_script(int script_id, const EnvState& s, const OpenEnvConfig& cfg, int slot,
              Rng& rng) {
  const auto& me = s.agents[slot];
  switch (script_id) {
    case 0:  // direct-chaser
      return pp_chase(s, cfg, slot, true);
    case 1: {  // flanker: approach the far side of the prey w.r.t. other predators
      double ox = 0.0, oy = 0.0;
      int cnt = 0;
      for (size_t j = 0; j < s.agents.size(); ++j) {
        if (static_cast<int>(j) == slot || !s.agents[j].active) continue;
        ox += s.agents[j].x;
        oy += s.agents[j].y;
        ++cnt;
      }
      if (cnt == 0) return pp_chase(s, cfg, slot, false);
      const int sx = s.prey_x - static_cast<int>(std::round(ox / cnt));
      const int sy = s.prey_y - static_cast<int>(std::round(oy / cnt));
      const int tx = std::clamp(s.prey_x + (sx > 0 ? 1 : sx < 0 ? -1 : 0), 0,
                                cfg.grid_size - 1);
      const int ty = std::clamp(s.prey_y + (sy > 0 ? 1 : sy < 0 ? -1 : 0), 0,
                                cfg.grid_size - 1);
      if (me.x == tx && me.y == ty) return pp_chase(s, cfg, slot, false);
      return step_toward(s, cfg, slot, tx, ty, false, PpWorld::kActStay);
    }
    case 2: {  // lazy: only engages when the prey is next door
      const int d = std::max(std::abs(me.x - s.prey_x), std::abs(me.y - s.prey_y));
      if (d <= 1) return pp_chase(s, cfg, slot, true);
      return PpWorld::kActStay;
    }
    case 3:  // random
      return rng.uniform_int(0, 4);
    default:
      throw std::invalid_argument("pp_script: unknown script id");
  }
}

}  // namespace

TeammatePolicy::TeammatePolicy(int script_id, std::string name, env::EnvKind env_kind)
    : kind_(Kind::scripted), script_id_(script_id), name_(std::move(name)),
      env_kind_(env_kind) {}

TeammatePolicy::TeammatePolicy(std::shared_ptr<nn::MLP> qnet, std::string name,
                               env::EnvKind env_kind, int n_actions, int n_slots)
    : kind_(Kind::learned), name_(std::move(name)), env_kind_(env_kind),
      qnet_(std::move(qnet)), n_actions_(n_actions), n_slots_(n_slots) {}

Vec teammate_view_features(const env::World& world, const env::EnvState& s, int slot) {
  const Vec sf = world.state_features(s);
  Vec out(sf.size() + world.config().n_slots());
  out.head(sf.size()) = sf;
  out.tail(world.config().n_slots()).setZero();
  out[sf.size() + slot] = 1.0;
  return out;
}

int TeammatePolicy::act(const env::EnvState& state, const env::OpenEnvConfig& cfg,
                        int slot, Rng& rng) const {
  if (kind_ == Kind::scripted) {
    return env_kind_ == env::EnvKind::lbf ? lbf_script(script_id_, state, cfg, slot, rng)
                                          : pp_script(script_id_, state, cfg, slot, rng);
  }
  // learned: greedy w.r.t. the shared Q net on full-view features
  auto world = env::make_world(cfg);
  const Vec x = teammate_view_features(*world, state, slot);
  nn::Graph g;
  nn::Var q = qnet_->forward(g, g.constant(x.transpose()));
  int best = 0;
  for (int a = 1; a < n_actions_; ++a)
    if (g.val(q)(0, a) > g.val(q)(0, best)) best = a;
  return best;
}

std::vector<std::shared_ptr<TeammatePolicy>> build_archetypes(env::EnvKind kind) {
  std::vector<std::shared_ptr<TeammatePolicy>> out;
  if (kind == env::EnvKind::lbf) {
    const char* names[] = {"nearest_food_greedy", "highest_level_food_seeker",
                           "random_walker", "follower_of_nearest_agent"};
    for (int i = 0; i < 4; ++i)
      out.push_back(std::make_shared<TeammatePolicy>(i, names[i], kind));
  } else if (kind == env::EnvKind::predator_prey) {
    const char* names[] = {"direct_chaser", "flanker", "lazy", "random"};
    for (int i = 0; i < 4; ++i)
      out.push_back(std::make_shared<TeammatePolicy>(i, names[i], kind));
  } else {
    throw std::invalid_argument("build_archetypes: unknown env kind");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episode recording
// ---------------------------------------------------------------------------

Trajectory run_episode(env::OpenEnv& e, ControllableActor& actor,
                       std::shared_ptr<const TeammatePolicy> policy,
                       const std::vector<int>& active_team, Rng& rng) {
  const auto& cfg = e.config();
  e.pin_policy(policy, active_team);
  Trajectory tr;
  std::vector<Vec> obs = e.reset(rng);
  actor.begin_episode();
  tr.states.push_back(e.state_features());
  tr.obs.push_back(obs);
  bool done = false;
  while (!done) {
    std::vector<Vec> tm_obs(cfg.max_teammates, Vec::Zero(e.world().obs_dim()));
    std::vector<uint8_t> pres(cfg.max_teammates, 0);
    for (int off : e.schedule().active_team) {
      pres[off] = 1;
      tm_obs[off] = e.observe(cfg.n_controllable + off);
    }
    const std::vector<int> acts = actor.act(obs, rng);
    auto st = e.step(acts, rng);
    tr.actions.push_back(acts);
    tr.presence.push_back(pres);
    tr.tm_obs.push_back(std::move(tm_obs));
    tr.tm_actions.push_back(e.last_teammate_actions());
    tr.rewards.push_back(st.reward);
    tr.dones.push_back(st.done ? 1 : 0);
    tr.team_changed.push_back(st.team_changed ? 1 : 0);
    tr.states.push_back(e.state_features());
    tr.obs.push_back(st.obs);
    obs = st.obs;
    done = st.done;
  }
  tr.check_alignment();
  return tr;
}

// ---------------------------------------------------------------------------
// TeammatePool
// ---------------------------------------------------------------------------

TeammatePool::TeammatePool(env::OpenEnvConfig cfg, size_t buffer_cap)
    : cfg_(std::move(cfg)), buffer_cap_(buffer_cap) {
  archetypes_ = build_archetypes(cfg_.kind);
}

TeammateGroup& TeammatePool::generate_group(const GenerationRecipe& recipe, Rng& rng) {
  require(!frozen_, "generate_group: pool is frozen");
  TeammateGroup g;
  g.group_id = static_cast<int>(groups_.size()) + 1;
  g.seed = rng.raw();
  if (recipe.kind == GenerationRecipe::Kind::archetype) {
    require(recipe.archetype_id >= 0 &&
                recipe.archetype_id < static_cast<int>(archetypes_.size()),
            "generate_group: unknown archetype id");
    const auto& base = archetypes_[recipe.archetype_id];
    auto pol = std::make_shared<TeammatePolicy>(*base);
    pol->set_handle(g.group_id);
    g.policy = std::move(pol);
  } else {
    auto pol = train_learned_policy(recipe.train_env_steps, g.seed);
    pol->set_handle(g.group_id);
    g.policy = std::move(pol);
  }
  groups_.push_back(std::move(g));
  return groups_.back();
}

void TeammatePool::collect_trajectories(TeammateGroup& group, int count,
                                        ControllableActor& actor, Rng& rng) {
  require(count >= 1, "collect_trajectories: count >= 1");
  env::OpenEnv e(cfg_, nullptr);
  for (int i = 0; i < count; ++i) {
    const auto team = env::sample_active_team(cfg_.max_teammates, rng);
    Trajectory tr = run_episode(e, actor, group.policy, team, rng);
    tr.group_id = group.group_id;
    tr.cluster_id = group.cluster_id;
    group.buffer.push_back(std::move(tr));
    while (group.buffer.size() > buffer_cap_) group.buffer.pop_front();
  }
}

std::pair<int, int> TeammatePool::sample_training_group(
    const std::vector<std::vector<int>>& cluster_members, Rng& rng) const {
  require(!cluster_members.empty(), "sample_training_group: empty cluster registry");
  const int m = rng.uniform_int(0, static_cast<int>(cluster_members.size()) - 1);
  const auto& members = cluster_members[m];
  require(!members.empty(), "sample_training_group: cluster has no members");
  const int gid = members[rng.uniform_int(0, static_cast<int>(members.size()) - 1)];
  return {gid, m};
}

std::shared_ptr<const env::TeammateController> TeammatePool::sample_policy(Rng& rng) {
  require(!groups_.empty(), "sample_policy: pool is empty");
  const int i = rng.uniform_int(0, static_cast<int>(groups_.size()) - 1);
  return groups_[i].policy;
}

TeammateGroup& TeammatePool::group_by_id(int group_id) {
  require(group_id >= 1 && group_id <= static_cast<int>(groups_.size()),
          "group_by_id: unknown group id");
  return groups_[group_id - 1];
}

const TeammateGroup& TeammatePool::group_by_id(int group_id) const {
  require(group_id >= 1 && group_id <= static_cast<int>(groups_.size()),
          "group_by_id: unknown group id");
  return groups_[group_id - 1];
}

// Short independent Q-learning run over full-view features; the resulting
// greedy policy is used as a generated (non-scripted) teammate.
std::shared_ptr<TeammatePolicy> TeammatePool::train_learned_policy(int env_steps,
                                                                   uint64_t seed) {
  Rng rng(seed);
  auto world = env::make_world(cfg_);
  const int n_actions = world->n_actions();
  const int in_dim = world->state_dim() + cfg_.n_slots();
  auto qnet = std::make_shared<nn::MLP>(std::vector<int>{in_dim, 64, n_actions}, rng,
                                        nn::MLP::Act::relu, "tm_q");
  nn::Adam opt(qnet->params(), 1e-3, 10.0);

  struct Transition {
    Vec x;
    int a;
    double r;
    Vec xn;
    bool done;
  };
  std::deque<Transition> buf;
  const size_t buf_cap = 4096;
  const double gamma = 0.95, eps = 0.3;
  const int batch = 32;

  auto greedy = [&](const Vec& x) {
    nn::Graph g;
    nn::Var q = qnet->forward(g, g.constant(x.transpose()));
    int best = 0;
    for (int a = 1; a < n_actions; ++a)
      if (g.val(q)(0, a) > g.val(q)(0, best)) best = a;
    return best;
  };

  std::vector<int> all_team;
  for (int i = 0; i < cfg_.max_teammates; ++i) all_team.push_back(i);
  env::EnvState s = world->reset(all_team, rng);
  int steps = 0;
  while (steps < env_steps) {
    if (s.done) s = world->reset(all_team, rng);
    std::vector<int> actions(cfg_.n_slots());
    std::vector<Vec> xs(cfg_.n_slots());
    for (int i = 0; i < cfg_.n_slots(); ++i) {
      if (i < cfg_.n_controllable) {
        actions[i] = rng.uniform_int(0, n_actions - 1);  // random partners
        continue;
      }
      xs[i] = teammate_view_features(*world, s, i);
      actions[i] = rng.uniform() < eps ? rng.uniform_int(0, n_actions - 1) : greedy(xs[i]);
    }
    env::EnvState sn = s;
    const auto out = world->step(sn, actions, rng);
    for (int i = cfg_.n_controllable; i < cfg_.n_slots(); ++i) {
      buf.push_back({xs[i], actions[i], out.reward, teammate_view_features(*world, sn, i),
                     out.done});
      if (buf.size() > buf_cap) buf.pop_front();
    }
    s = sn;
    ++steps;

    if (buf.size() >= static_cast<size_t>(batch) && steps % 4 == 0) {
      Mat X(batch, in_dim), XN(batch, in_dim);
      std::vector<int> acts(batch);
      Vec target(batch);
      for (int b = 0; b < batch; ++b) {
        const auto& tr = buf[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(buf.size()) - 1))];
        X.row(b) = tr.x.transpose();
        XN.row(b) = tr.xn.transpose();
        acts[b] = tr.a;
        target[b] = tr.r;
        if (!tr.done) {
          nn::Graph gt;
          nn::Var qn = qnet->forward(gt, gt.constant(tr.xn.transpose()));
          target[b] += gamma * gt.val(qn).row(0).maxCoeff();
        }
      }
      nn::Graph g;
      nn::Var q = qnet->forward(g, g.constant(X));
      nn::Var chosen = g.pick(q, acts);
      nn::Var diff = g.sub(chosen, g.constant(target));
      nn::Var loss = g.mean_all(g.square_(diff));
      if (!std::isfinite(g.val(loss)(0, 0)))
        throw std::runtime_error("learned teammate: training diverged (non-finite loss)");
      opt.zero_grad();
      g.backward(loss);
      opt.step();
    }
  }
  return std::make_shared<TeammatePolicy>(qnet, "learned_seed" + std::to_string(seed),
                                          cfg_.kind, n_actions, cfg_.n_slots());
}

// ---------------------------------------------------------------------------
// Persistence: pool/group_<k>/{policy.json, meta.json, trajectories.jsonl}
// ---------------------------------------------------------------------------

namespace {
json vec_to_json(const Vec& v) { return json(from_vec(v)); }
Vec vec_from_json(const json& j) { return to_vec(j.get<std::vector<double>>()); }

json traj_to_json(const Trajectory& t) {
  json j;
  j["group_id"] = t.group_id;
  j["cluster_id"] = t.cluster_id;
  j["rewards"] = t.rewards;
  j["dones"] = t.dones;
  j["team_changed"] = t.team_changed;
  j["actions"] = t.actions;
  j["tm_actions"] = t.tm_actions;
  j["presence"] = t.presence;
  json states = json::array(), obs = json::array(), tmo = json::array();
  for (const auto& s : t.states) states.push_back(vec_to_json(s));
  for (const auto& per : t.obs) {
    json row = json::array();
    for (const auto& o : per) row.push_back(vec_to_json(o));
    obs.push_back(row);
  }
  for (const auto& per : t.tm_obs) {
    json row = json::array();
    for (const auto& o : per) row.push_back(vec_to_json(o));
    tmo.push_back(row);
  }
  j["states"] = std::move(states);
  j["obs"] = std::move(obs);
  j["tm_obs"] = std::move(tmo);
  return j;
}

Trajectory traj_from_json(const json& j) {
  Trajectory t;
  t.group_id = j["group_id"];
  t.cluster_id = j["cluster_id"];
  t.rewards = j["rewards"].get<std::vector<double>>();
  t.dones = j["dones"].get<std::vector<uint8_t>>();
  t.team_changed = j["team_changed"].get<std::vector<uint8_t>>();
  t.actions = j["actions"].get<std::vector<std::vector<int>>>();
  t.tm_actions = j["tm_actions"].get<std::vector<std::vector<int>>>();
  t.presence = j["presence"].get<std::vector<std::vector<uint8_t>>>();
  for (const auto& s : j["states"]) t.states.push_back(vec_from_json(s));
  for (const auto& per : j["obs"]) {
    std::vector<Vec> row;
    for (const auto& o : per) row.push_back(vec_from_json(o));
    t.obs.push_back(std::move(row));
  }
  for (const auto& per : j["tm_obs"]) {
    std::vector<Vec> row;
    for (const auto& o : per) row.push_back(vec_from_json(o));
    t.tm_obs.push_back(std::move(row));
  }
  t.check_alignment();
  return t;
}
}  // namespace

std::string trajectory_to_json(const Trajectory& t) { return traj_to_json(t).dump(); }

Trajectory trajectory_from_json(const std::string& line) {
  return traj_from_json(json::parse(line));
}

void TeammatePool::save(const std::string& dir) const {
  for (const auto& g : groups_) {
    const fs::path gd = fs::path(dir) / ("group_" + std::to_string(g.group_id));
    fs::create_directories(gd);
    json meta;
    meta["group_id"] = g.group_id;
    meta["kind"] = g.policy->kind() == TeammatePolicy::Kind::scripted ? "scripted" : "learned";
    meta["name"] = g.policy->name();
    meta["seed"] = g.seed;
    meta["cluster_id"] = g.cluster_id;
    if (g.embedding.size() > 0) meta["embedding"] = from_vec(g.embedding);
    std::ofstream(gd / "meta.json") << meta.dump(2) << "\n";

    json pol;
    pol["kind"] = meta["kind"];
    pol["script_id"] = g.policy->script_id();
    if (g.policy->kind() == TeammatePolicy::Kind::learned) {
      json ws = json::array();
      for (auto* p : const_cast<TeammatePolicy&>(*g.policy).qnet()->params()) {
        json w;
        w["name"] = p->name;
        w["rows"] = p->value.rows();
        w["cols"] = p->value.cols();
        w["data"] = std::vector<double>(p->value.data(), p->value.data() + p->value.size());
        ws.push_back(std::move(w));
      }
      pol["weights"] = std::move(ws);
    }
    std::ofstream(gd / "policy.json") << pol.dump() << "\n";

    std::ofstream ts(gd / "trajectories.jsonl");
    for (const auto& t : g.buffer) ts << traj_to_json(t).dump() << "\n";
  }
}

void TeammatePool::load(const std::string& dir) {
  groups_.clear();
  for (int k = 1;; ++k) {
    const fs::path gd = fs::path(dir) / ("group_" + std::to_string(k));
    if (!fs::exists(gd / "meta.json")) break;
    json meta;
    std::ifstream(gd / "meta.json") >> meta;
    json pol;
    std::ifstream(gd / "policy.json") >> pol;
    TeammateGroup g;
    g.group_id = meta["group_id"];
    g.seed = meta["seed"];
    g.cluster_id = meta["cluster_id"];
    if (meta.contains("embedding")) g.embedding = to_vec(meta["embedding"]);
    if (pol["kind"] == "scripted") {
      auto p = std::make_shared<TeammatePolicy>(pol["script_id"].get<int>(),
                                                meta["name"].get<std::string>(), cfg_.kind);
      p->set_handle(g.group_id);
      g.policy = std::move(p);
    } else {
      auto world = env::make_world(cfg_);
      const int in_dim = world->state_dim() + cfg_.n_slots();
      Rng tmp(0);
      auto qnet = std::make_shared<nn::MLP>(
          std::vector<int>{in_dim, 64, world->n_actions()}, tmp, nn::MLP::Act::relu, "tm_q");
      auto params = qnet->params();
      size_t wi = 0;
      for (const auto& w : pol["weights"]) {
        auto data = w["data"].get<std::vector<double>>();
        params[wi]->value =
            Eigen::Map<Mat>(data.data(), w["rows"].get<int>(), w["cols"].get<int>());
        ++wi;
      }
      auto p = std::make_shared<TeammatePolicy>(qnet, meta["name"].get<std::string>(),
                                                cfg_.kind, world->n_actions(), cfg_.n_slots());
      p->set_handle(g.group_id);
      g.policy = std::move(p);
    }
    std::ifstream ts(gd / "trajectories.jsonl");
    std::string line;
    while (std::getline(ts, line)) {
      if (line.empty()) continue;
      g.buffer.push_back(traj_from_json(json::parse(line)));
    }
    groups_.push_back(std::move(g));
  }
}

}  // namespace tadapt::pool
