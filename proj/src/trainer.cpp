#include "tadapt/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tadapt/train/checkpoint.hpp"

namespace tadapt::train {

using nn::Graph;
using nn::Var;
using json = nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  env.validate();
  require(batch_size >= 1, "trainer: batch_size >= 1");
  require(replay_capacity >= batch_size, "trainer: replay_capacity >= batch_size");
  require(alpha > 0.0, "trainer: CRP alpha > 0");
  require(alpha_gce >= 0.0 && alpha_mi >= 0.0 && alpha_lce >= 0.0 && alpha_rec >= 0.0,
          "trainer: loss weights must be >= 0");
  require(eta >= 0.0 && eta <= 1.0, "trainer: eta in [0,1]");
  require(kappa > 0.0, "trainer: kappa > 0");
  require(groups_per_iteration >= 1, "trainer: groups_per_iteration >= 1");
  require(!archetype_cycle.empty(), "trainer: archetype_cycle must be non-empty");
}

// ---------------------------------------------------------------------------
// ReplayBuffer
// ---------------------------------------------------------------------------

void ReplayBuffer::push(EpisodeBatch ep) {
  ep.check_alignment();
  episodes_.push_back(std::move(ep));
  while (episodes_.size() > capacity_) episodes_.pop_front();
}

std::vector<const EpisodeBatch*> ReplayBuffer::sample(int count, Rng& rng) const {
  require(!episodes_.empty(), "replay: cannot sample from empty buffer");
  std::vector<const EpisodeBatch*> out;
  for (int i = 0; i < count; ++i)
    out.push_back(&episodes_[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(episodes_.size()) - 1))]);
  return out;
}

// ---------------------------------------------------------------------------
// Learner
// ---------------------------------------------------------------------------

Learner::Learner(const TrainConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  auto world = env::make_world(cfg_.env);
  obs_dim_ = world->obs_dim();
  state_dim_ = world->state_dim();
  n_actions_ = world->n_actions();
  n_slots_ = cfg_.env.n_slots();
  const int n = cfg_.env.n_controllable;

  const int gin = state_dim_ + n_slots_ * n_actions_;
  const int lin = obs_dim_ + n_actions_;
  g_enc_ = ctx::GaussianRecurrentEncoder(gin, cfg_.ctx_hidden, cfg_.z_dim, rng,
                                         cfg_.sigma_floor, "g_enc");
  for (int i = 0; i < n; ++i) {
    f_enc_.emplace_back(lin, cfg_.ctx_hidden, cfg_.e_dim, rng, cfg_.sigma_floor,
                        "f_enc" + std::to_string(i));
    agents_.emplace_back(obs_dim_, n_actions_, cfg_.e_dim, cfg_.agent_hidden, rng,
                         "agent" + std::to_string(i));
    recs_.emplace_back(cfg_.e_dim, cfg_.env.max_teammates, obs_dim_, n_actions_,
                       cfg_.rec_hidden, rng, "rec" + std::to_string(i));
  }
  mixer_ = qmix::MonotonicMixer(n, state_dim_, cfg_.z_dim, cfg_.mixing_embed,
                                cfg_.hyper_hidden, rng, "mixer");
  // local hidden state is the conditioning feature of the variational head
  qvar_ = ctx::VariationalHead(cfg_.z_dim, cfg_.ctx_hidden, cfg_.e_dim, cfg_.var_hidden,
                               rng, "q_var");

  tgt_g_enc_ = ctx::GaussianRecurrentEncoder(gin, cfg_.ctx_hidden, cfg_.z_dim, rng,
                                             cfg_.sigma_floor, "tgt_g_enc");
  for (int i = 0; i < n; ++i) {
    tgt_f_enc_.emplace_back(lin, cfg_.ctx_hidden, cfg_.e_dim, rng, cfg_.sigma_floor,
                            "tgt_f_enc" + std::to_string(i));
    tgt_agents_.emplace_back(obs_dim_, n_actions_, cfg_.e_dim, cfg_.agent_hidden, rng,
                             "tgt_agent" + std::to_string(i));
  }
  tgt_mixer_ = qmix::MonotonicMixer(n, state_dim_, cfg_.z_dim, cfg_.mixing_embed,
                                    cfg_.hyper_hidden, rng, "tgt_mixer");
  sync_targets();

  bank_ = ctx::MovingAverageBank(cfg_.eta, cfg_.z_dim, cfg_.e_dim, n);

  crp::BehaviorModelConfig bm;
  bm.state_dim = state_dim_;
  bm.n_slots = n_slots_;
  bm.n_controllable = n;
  bm.n_actions = n_actions_;
  bm.embed_dim = cfg_.embed_dim;
  bm.d_model = cfg_.d_model;
  bm.n_layers = cfg_.encoder_layers;
  bm.decoder_hidden = cfg_.decoder_hidden;
  bm.max_len = cfg_.max_len;
  benc_ = std::make_unique<crp::BehaviorEncoder>(bm, rng);
  bdec_ = std::make_unique<crp::BehaviorDecoder>(bm, rng);
  registry_.alpha = cfg_.alpha;

  opt_ = std::make_unique<nn::Adam>(live_params(), cfg_.lr, cfg_.grad_clip);
}

std::vector<nn::Parameter*> Learner::live_params() {
  std::vector<nn::Parameter*> out = g_enc_.params();
  for (auto& f : f_enc_) nn::append_params(out, f.params());
  for (auto& a : agents_) nn::append_params(out, a.params());
  nn::append_params(out, mixer_.params());
  nn::append_params(out, qvar_.params());
  for (auto& r : recs_) nn::append_params(out, r.params());
  return out;
}

std::vector<nn::Parameter*> Learner::target_params() {
  std::vector<nn::Parameter*> out = tgt_g_enc_.params();
  for (auto& f : tgt_f_enc_) nn::append_params(out, f.params());
  for (auto& a : tgt_agents_) nn::append_params(out, a.params());
  nn::append_params(out, tgt_mixer_.params());
  return out;
}

std::vector<nn::Parameter*> Learner::behavior_params() {
  std::vector<nn::Parameter*> out = benc_->params();
  nn::append_params(out, bdec_->params());
  return out;
}

std::vector<nn::Parameter*> Learner::all_params() {
  auto out = live_params();
  nn::append_params(out, target_params());
  nn::append_params(out, behavior_params());
  return out;
}

void Learner::sync_targets() {
  std::vector<nn::Parameter*> live = g_enc_.params();
  for (auto& f : f_enc_) nn::append_params(live, f.params());
  for (auto& a : agents_) nn::append_params(live, a.params());
  nn::append_params(live, mixer_.params());
  qmix::sync_target(live, target_params());
}

void Learner::ActorState::reset(const Learner& l) {
  const int n = l.n_agents();
  h_f.assign(n, Vec::Zero(l.cfg_.ctx_hidden));
  h_q.assign(n, Vec::Zero(l.cfg_.agent_hidden));
  prev_action.assign(n, -1);
}

std::vector<int> Learner::act(ActorState& st, const std::vector<Vec>& obs, double epsilon,
                              Rng& rng, std::vector<Vec>* e_out) const {
  const int n = n_agents();
  std::vector<int> actions(n);
  if (e_out) e_out->assign(n, Vec());
  const std::vector<uint8_t> avail(n_actions_, 1);
  for (int i = 0; i < n; ++i) {
    Vec xin(obs_dim_ + n_actions_);
    xin.head(obs_dim_) = obs[i];
    xin.tail(n_actions_).setZero();
    if (st.prev_action[i] >= 0) xin[obs_dim_ + st.prev_action[i]] = 1.0;
    auto [e, hf] = f_enc_[i].step_eval(xin, st.h_f[i]);
    st.h_f[i] = hf;
    Vec xq(obs_dim_ + n_actions_ + cfg_.e_dim);
    xq.head(obs_dim_ + n_actions_) = xin;
    xq.tail(cfg_.e_dim) = e;
    auto [q, hq] = agents_[i].step_eval(xq, st.h_q[i]);
    st.h_q[i] = hq;
    actions[i] = qmix::select_action(q, epsilon, avail, rng);
    if (e_out) (*e_out)[i] = e;
  }
  st.prev_action = actions;
  return actions;
}

// ---------------------------------------------------------------------------
// Loss construction
// ---------------------------------------------------------------------------

namespace {

// Episodes of one cluster, sorted by length descending so that the rows
// valid at step t are always a prefix.
struct ClusterBatch {
  int cluster = 0;
  std::vector<const EpisodeBatch*> eps;
  int max_len = 0;
  std::vector<int> valid;  // valid[t] = #episodes with length > t

  // per-step constant inputs
  std::vector<Mat> g_in;                // [maxT+1] (B, sdim + slots*act)
  std::vector<std::vector<Mat>> l_in;   // [agent][maxT+1] (B, od + act)
  std::vector<Mat> states;              // [maxT+1] (B, sdim)
  std::vector<std::vector<std::vector<int>>> act_idx;  // [agent][t][B]
  std::vector<Vec> rewards;             // [maxT] (B)
  std::vector<Vec> not_done;            // [maxT] (B)
};

ClusterBatch make_cluster_batch(int cluster, std::vector<const EpisodeBatch*> eps,
                                int sdim, int od, int n_agents, int n_slots,
                                int n_actions) {
  std::sort(eps.begin(), eps.end(), [](const EpisodeBatch* a, const EpisodeBatch* b) {
    return a->length() > b->length();
  });
  ClusterBatch cb;
  cb.cluster = cluster;
  cb.eps = std::move(eps);
  const int B = static_cast<int>(cb.eps.size());
  for (const auto* e : cb.eps) cb.max_len = std::max(cb.max_len, e->length());
  cb.valid.resize(cb.max_len);
  for (int t = 0; t < cb.max_len; ++t) {
    int v = 0;
    for (const auto* e : cb.eps)
      if (e->length() > t) ++v;
    cb.valid[t] = v;
  }
  const int n_c = n_agents;
  cb.g_in.assign(cb.max_len + 1, Mat::Zero(B, sdim + n_slots * n_actions));
  cb.l_in.assign(n_agents,
                 std::vector<Mat>(cb.max_len + 1, Mat::Zero(B, od + n_actions)));
  cb.states.assign(cb.max_len + 1, Mat::Zero(B, sdim));
  cb.act_idx.assign(n_agents, std::vector<std::vector<int>>(
                                  cb.max_len, std::vector<int>(B, 0)));
  cb.rewards.assign(cb.max_len, Vec::Zero(B));
  cb.not_done.assign(cb.max_len, Vec::Zero(B));
  for (int b = 0; b < B; ++b) {
    const auto& ep = *cb.eps[b];
    const int L = ep.length();
    for (int t = 0; t <= L; ++t) {
      cb.states[t].row(b) = ep.states[t].transpose();
      cb.g_in[t].row(b).head(sdim) = ep.states[t].transpose();
      if (t > 0) {
        for (int slot = 0; slot < n_slots; ++slot) {
          const int a = ep.slot_action(t - 1, slot, n_c);
          if (a >= 0) cb.g_in[t](b, sdim + slot * n_actions + a) = 1.0;
        }
      }
      for (int i = 0; i < n_agents; ++i) {
        cb.l_in[i][t].row(b).head(od) = ep.obs[t][i].transpose();
        if (t > 0) cb.l_in[i][t](b, od + ep.actions[t - 1][i]) = 1.0;
      }
    }
    for (int t = 0; t < L; ++t) {
      for (int i = 0; i < n_agents; ++i) cb.act_idx[i][t][b] = ep.actions[t][i];
      cb.rewards[t][b] = ep.rewards[t];
      cb.not_done[t][b] = ep.dones[t] ? 0.0 : 1.0;
    }
  }
  return cb;
}

}  // namespace

LossParts Learner::compute_losses(Graph& g, const std::vector<const EpisodeBatch*>& batch,
                                  Rng& rng, bool update_bank, Var* total_out) {
  require(!batch.empty(), "optimize: empty batch");
  const int n = n_agents();

  // group episodes by cluster
  std::vector<std::vector<const EpisodeBatch*>> by_cluster;
  for (const auto* ep : batch) {
    require(ep->cluster_id >= 0, "optimize: episode missing cluster id");
    if (ep->cluster_id >= static_cast<int>(by_cluster.size()))
      by_cluster.resize(ep->cluster_id + 1);
    by_cluster[ep->cluster_id].push_back(ep);
  }
  bank_.ensure_clusters(std::max<int>(registry_.n_clusters(),
                                      static_cast<int>(by_cluster.size())));

  const bool use_gce = cfg_.alpha_gce > 0.0;
  const bool use_mi = cfg_.alpha_mi > 0.0 && !cfg_.wo_mi;
  const bool use_lce = cfg_.alpha_lce > 0.0 && !cfg_.wo_lce;
  const bool use_rec = cfg_.alpha_rec > 0.0 && !cfg_.wo_rec;

  Var td_sq_sum;
  long td_count = 0;
  std::vector<ctx::ClusterSamples> z_groups;
  std::vector<std::vector<ctx::ClusterSamples>> e_groups(n);
  std::vector<ctx::MiGroup> mi_groups;
  std::vector<std::vector<ctx::RecGroup>> rec_groups(n);

  for (int m = 0; m < static_cast<int>(by_cluster.size()); ++m) {
    if (by_cluster[m].empty()) continue;
    ClusterBatch cb = make_cluster_batch(m, by_cluster[m], state_dim_, obs_dim_, n,
                                         n_slots_, n_actions_);
    const int B = static_cast<int>(cb.eps.size());
    const int T = cb.max_len;

    // --- target values, outside the differentiable graph ---
    std::vector<Vec> y(T);
    {
      Graph gt;
      Var hg = gt.constant(tgt_g_enc_.initial_state(B));
      std::vector<Mat> zbar(T + 1);
      for (int t = 0; t <= T; ++t) {
        auto out = tgt_g_enc_.step(gt, gt.constant(cb.g_in[t]), hg);
        hg = out.h;
        zbar[t] = gt.val(out.mu);
      }
      std::vector<std::vector<Mat>> qbar(n, std::vector<Mat>(T + 1));
      for (int i = 0; i < n; ++i) {
        Var hf = gt.constant(tgt_f_enc_[i].initial_state(B));
        Var hq = gt.constant(tgt_agents_[i].initial_state(B));
        for (int t = 0; t <= T; ++t) {
          auto eo = tgt_f_enc_[i].step(gt, gt.constant(cb.l_in[i][t]), hf);
          hf = eo.h;
          Var xq = gt.concat_cols({gt.constant(cb.l_in[i][t]), eo.mu});
          auto qo = tgt_agents_[i].step(gt, xq, hq);
          hq = qo.h;
          qbar[i][t] = gt.val(qo.q);
        }
      }
      for (int t = 0; t < T; ++t) {
        Mat chosen(B, n);
        for (int i = 0; i < n; ++i)
          for (int b = 0; b < B; ++b)
            chosen(b, i) = qbar[i][t + 1].row(b).maxCoeff();
        Mat sz(B, state_dim_ + cfg_.z_dim);
        sz << cb.states[t + 1], zbar[t + 1];
        Var qtot = tgt_mixer_.mix(gt, gt.constant(chosen), gt.constant(sz));
        y[t] = cb.rewards[t] +
               cfg_.env.gamma * cb.not_done[t].cwiseProduct(gt.val(qtot).col(0));
      }
    }

    // --- live forward ---
    std::vector<Var> z_t(T);
    {
      Var hg = g.constant(g_enc_.initial_state(B));
      for (int t = 0; t < T; ++t) {
        auto out = g_enc_.step(g, g.constant(cb.g_in[t]), hg);
        hg = out.h;
        z_t[t] = nn::reparam_sample(g, out.mu, out.sigma, rng);
      }
    }
    std::vector<std::vector<Var>> e_t(n, std::vector<Var>(T));
    std::vector<std::vector<Var>> sig_t(n, std::vector<Var>(T));
    std::vector<std::vector<Var>> feat_t(n, std::vector<Var>(T));
    std::vector<std::vector<Var>> q_chosen(n, std::vector<Var>(T));
    for (int i = 0; i < n; ++i) {
      Var hf = g.constant(f_enc_[i].initial_state(B));
      Var hq = g.constant(agents_[i].initial_state(B));
      for (int t = 0; t < T; ++t) {
        auto eo = f_enc_[i].step(g, g.constant(cb.l_in[i][t]), hf);
        hf = eo.h;
        e_t[i][t] = nn::reparam_sample(g, eo.mu, eo.sigma, rng);
        sig_t[i][t] = eo.sigma;
        feat_t[i][t] = g.stop_grad(eo.h);
        Var xq = g.concat_cols({g.constant(cb.l_in[i][t]), e_t[i][t]});
        auto qo = agents_[i].step(g, xq, hq);
        hq = qo.h;
        q_chosen[i][t] = g.pick(qo.q, cb.act_idx[i][t]);
      }
    }
    for (int t = 0; t < T; ++t) {
      const int v = cb.valid[t];
      std::vector<Var> cols;
      for (int i = 0; i < n; ++i) cols.push_back(q_chosen[i][t]);
      Var qs = g.concat_cols(cols);
      Var sz = g.concat_cols({g.constant(cb.states[t]), z_t[t]});
      Var qtot = mixer_.mix(g, qs, sz);
      Var diff = g.sub(g.slice_rows(qtot, 0, v),
                       g.constant(Mat(y[t].head(v))));
      Var sq = g.sum_all(g.square_(diff));
      td_sq_sum = td_sq_sum.valid() ? g.add(td_sq_sum, sq) : sq;
      td_count += v;
    }

    // --- gather context samples on valid rows ---
    auto gather = [&](const std::vector<Var>& per_step) {
      std::vector<Var> rows;
      for (int t = 0; t < T; ++t) rows.push_back(g.slice_rows(per_step[t], 0, cb.valid[t]));
      return g.concat_rows(rows);
    };
    if (use_gce) z_groups.push_back({m, gather(z_t)});
    Var z_cat_mi;
    if (use_mi) z_cat_mi = gather(z_t);
    for (int i = 0; i < n; ++i) {
      if (use_lce || use_mi || use_rec) {
        Var e_cat = gather(e_t[i]);
        if (use_lce) e_groups[i].push_back({m, e_cat});
        if (use_mi)
          mi_groups.push_back({e_cat, gather(sig_t[i]), z_cat_mi, gather(feat_t[i])});
        if (use_rec) {
          int N = 0;
          for (int t = 0; t < T; ++t) N += cb.valid[t];
          ctx::RecGroup rg;
          rg.e = e_cat;
          rg.tm_obs = Mat::Zero(N, cfg_.env.max_teammates * obs_dim_);
          rg.presence = Mat::Zero(N, cfg_.env.max_teammates);
          rg.tm_actions.assign(N, std::vector<int>(cfg_.env.max_teammates, -1));
          int r = 0;
          for (int t = 0; t < T; ++t) {
            for (int b = 0; b < cb.valid[t]; ++b) {
              const auto& ep = *cb.eps[b];
              for (int s = 0; s < cfg_.env.max_teammates; ++s) {
                if (!ep.presence[t][s]) continue;
                rg.presence(r, s) = 1.0;
                rg.tm_obs.row(r).segment(s * obs_dim_, obs_dim_) =
                    ep.tm_obs[t][s].transpose();
                rg.tm_actions[r][s] = ep.tm_actions[t][s];
              }
              ++r;
            }
          }
          rec_groups[i].push_back(std::move(rg));
        }
      }
    }
  }

  LossParts parts;
  Var td = g.scale(td_sq_sum, 1.0 / static_cast<double>(td_count));
  parts.td = g.val(td)(0, 0);
  Var total = td;

  if (use_gce) {
    std::vector<Vec> bank_out;
    Var gce = ctx::context_separation_loss(g, z_groups, bank_.z_bars, cfg_.eta,
                                           cfg_.kappa, update_bank ? &bank_out : nullptr);
    if (update_bank) bank_.z_bars = bank_out;
    parts.gce = g.val(gce)(0, 0);
    total = g.add(total, g.scale(gce, cfg_.alpha_gce));
  }
  if (use_lce) {
    Var lce_sum;
    for (int i = 0; i < n; ++i) {
      if (e_groups[i].empty()) continue;
      std::vector<Vec> bars_i;
      for (int m = 0; m < bank_.n_clusters(); ++m) bars_i.push_back(bank_.e_bars[m][i]);
      std::vector<Vec> bank_out;
      Var li = ctx::context_separation_loss(g, e_groups[i], bars_i, cfg_.eta, cfg_.kappa,
                                            update_bank ? &bank_out : nullptr);
      if (update_bank)
        for (int m = 0; m < bank_.n_clusters(); ++m) bank_.e_bars[m][i] = bank_out[m];
      lce_sum = lce_sum.valid() ? g.add(lce_sum, li) : li;
    }
    if (lce_sum.valid()) {
      parts.lce = g.val(lce_sum)(0, 0);
      total = g.add(total, g.scale(lce_sum, cfg_.alpha_lce));
    }
  }
  if (use_mi && !mi_groups.empty()) {
    Var mi = ctx::mi_loss(g, qvar_, mi_groups);
    parts.mi = g.val(mi)(0, 0);
    total = g.add(total, g.scale(mi, cfg_.alpha_mi));
  }
  if (use_rec) {
    Var rec_sum;
    for (int i = 0; i < n; ++i) {
      if (rec_groups[i].empty()) continue;
      Var ri = ctx::rec_loss(g, recs_[i], rec_groups[i]);
      rec_sum = rec_sum.valid() ? g.add(rec_sum, ri) : ri;
    }
    if (rec_sum.valid()) {
      parts.rec = g.val(rec_sum)(0, 0);
      total = g.add(total, g.scale(rec_sum, cfg_.alpha_rec));
    }
  }

  parts.adap = ctx::adap_loss(parts.td, parts.gce, cfg_.alpha_gce);
  parts.dec = ctx::dec_loss(parts.td, parts.mi, parts.lce, parts.rec, cfg_.alpha_mi,
                            cfg_.alpha_lce, cfg_.alpha_rec);
  parts.total = g.val(total)(0, 0);
  if (total_out) *total_out = total;
  return parts;
}

Learner::StepMetrics Learner::optimize_step(const std::vector<const EpisodeBatch*>& batch,
                                            Rng& rng) {
  StepMetrics m;
  Graph g;
  Var total;
  m.losses = compute_losses(g, batch, rng, /*update_bank=*/true, &total);
  if (!std::isfinite(m.losses.total)) {
    m.skipped_nonfinite = true;
    return m;
  }
  opt_->zero_grad();
  g.backward(total);
  opt_->step();
  ++updates_;
  if (updates_ % cfg_.sync_interval == 0) sync_targets();

  for (const auto& b : bank_.z_bars) m.bar_z_norm += b.norm();
  if (!bank_.z_bars.empty()) m.bar_z_norm /= bank_.z_bars.size();
  int cnt = 0;
  for (const auto& per : bank_.e_bars)
    for (const auto& b : per) {
      m.bar_e_norm += b.norm();
      ++cnt;
    }
  if (cnt > 0) m.bar_e_norm /= cnt;
  return m;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

EpisodeBatch rollout_episode(const Learner& learner, pool::TeammateGroup& group,
                             env::OpenEnv& e, double epsilon, Rng& rng) {
  require(group.cluster_id >= 0, "rollout_episode: group not assigned to a cluster");
  QPolicyActor actor(learner, epsilon);
  const auto team = env::sample_active_team(e.config().max_teammates, rng);
  EpisodeBatch ep = pool::run_episode(e, actor, group.policy, team, rng);
  ep.group_id = group.group_id;
  ep.cluster_id = group.cluster_id;
  for (uint8_t ch : ep.team_changed)
    require(ch == 0, "rollout_episode: teammate change during a training episode");
  return ep;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

json losses_to_json(const LossParts& p) {
  return {{"td", p.td},   {"gce", p.gce}, {"mi", p.mi},       {"lce", p.lce},
          {"rec", p.rec}, {"adap", p.adap}, {"dec", p.dec},   {"total", p.total}};
}

// Stationary greedy evaluation snapshot used during training.
double quick_eval(const Learner& learner, pool::TeammatePool& pool, int episodes,
                  Rng& rng) {
  env::OpenEnv e(learner.config().env, nullptr);
  QPolicyActor actor(learner, 0.0);
  double total = 0.0;
  for (int k = 0; k < episodes; ++k) {
    const auto& groups = pool.groups();
    auto& grp = const_cast<pool::TeammateGroup&>(
        groups[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(groups.size()) - 1))]);
    const auto team = env::sample_active_team(e.config().max_teammates, rng);
    auto tr = pool::run_episode(e, actor, grp.policy, team, rng);
    total += tr.episode_return();
  }
  return total / episodes;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const std::string& run_dir,
                       const std::string& resume_ckpt) {
  cfg.validate();
  fs::create_directories(run_dir);
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  std::ofstream(fs::path(run_dir) / "config.json") << cfg.to_json() << "\n";

  Learner learner(cfg, cfg.seed);
  pool::TeammatePool pool(cfg.env, cfg.buffer_cap);
  ReplayBuffer replay(cfg.replay_capacity);

  Rng master(cfg.seed);
  Rng env_rng = master.split();
  Rng opt_rng = master.split();
  Rng gen_rng = master.split();
  Rng eval_rng = master.split();

  long env_steps = 0;
  int episodes = 0;
  long next_gen = 0;
  long next_ckpt = cfg.checkpoint_interval;
  long next_eval = cfg.eval_interval > 0 ? cfg.eval_interval : -1;

  if (!resume_ckpt.empty()) {
    CheckpointData data = load_checkpoint(resume_ckpt, learner, &replay);
    pool.load((fs::path(run_dir) / "pool").string());
    env_steps = data.env_steps;
    episodes = data.episodes;
    next_gen = data.next_gen;
    next_ckpt = ((env_steps / cfg.checkpoint_interval) + 1) * cfg.checkpoint_interval;
    env_rng.deserialize(data.rng_env);
    opt_rng.deserialize(data.rng_opt);
    gen_rng.deserialize(data.rng_gen);
    eval_rng.deserialize(data.rng_eval);
  }

  std::ofstream metrics(fs::path(run_dir) / "metrics.jsonl",
                        resume_ckpt.empty() ? std::ios::trunc : std::ios::app);

  env::OpenEnv e(cfg.env, nullptr);

  auto generation_event = [&]() {
    const int before = pool.size();
    for (int l = 0; l < cfg.groups_per_iteration && pool.size() < cfg.max_groups; ++l) {
      pool::GenerationRecipe recipe;
      if (cfg.generation == "learned") {
        recipe.kind = pool::GenerationRecipe::Kind::learned;
        recipe.train_env_steps = cfg.learned_steps;
      } else {
        recipe.kind = pool::GenerationRecipe::Kind::archetype;
        recipe.archetype_id =
            cfg.archetype_cycle[pool.size() % cfg.archetype_cycle.size()];
      }
      auto& group = pool.generate_group(recipe, gen_rng);
      if (cfg.partner == "random") {
        pool::RandomActor actor(cfg.env.n_controllable, learner.n_actions());
        pool.collect_trajectories(group, cfg.traj_per_group, actor, gen_rng);
      } else {
        QPolicyActor actor(learner, cfg.epsilon_at(env_steps));
        pool.collect_trajectories(group, cfg.traj_per_group, actor, gen_rng);
      }
    }
    crp::train_behavior_model(learner.behavior_encoder(), learner.behavior_decoder(),
                              pool.groups(), cfg.model_steps, cfg.model_batch,
                              cfg.model_lr, gen_rng);
    for (int k = before + 1; k <= pool.size(); ++k) {
      auto& group = pool.group_by_id(k);
      if (cfg.wo_crp) {
        crp::assign_singleton(group, learner.registry(), learner.behavior_encoder());
      } else {
        crp::assign_cluster(group, learner.registry(), learner.behavior_encoder(),
                            learner.behavior_decoder());
      }
    }
    learner.bank().ensure_clusters(learner.registry().n_clusters());
    pool.save((fs::path(run_dir) / "pool").string());
  };

  while (env_steps < cfg.total_env_steps) {
    if (env_steps >= next_gen && pool.size() < cfg.max_groups) {
      generation_event();
      next_gen += cfg.generation_interval;
    }
    const auto [gid, m] =
        pool.sample_training_group(learner.registry().member_table(), env_rng);
    auto& group = pool.group_by_id(gid);
    EpisodeBatch ep =
        rollout_episode(learner, group, e, cfg.epsilon_at(env_steps), env_rng);
    env_steps += ep.length();
    episodes += 1;
    const double ep_return = ep.episode_return();
    replay.push(std::move(ep));

    if (replay.size() >= static_cast<size_t>(cfg.batch_size)) {
      auto batch = replay.sample(cfg.batch_size, opt_rng);
      auto sm = learner.optimize_step(batch, opt_rng);
      json rec;
      rec["type"] = "train";
      rec["env_steps"] = env_steps;
      rec["episode"] = episodes;
      rec["update"] = learner.updates();
      rec["return"] = ep_return;
      rec["epsilon"] = cfg.epsilon_at(env_steps);
      rec["cluster"] = m;
      rec["group"] = gid;
      rec["n_clusters"] = learner.registry().n_clusters();
      rec["K"] = learner.registry().total_assigned;
      rec["losses"] = losses_to_json(sm.losses);
      rec["bar_z_norm"] = sm.bar_z_norm;
      rec["bar_e_norm"] = sm.bar_e_norm;
      if (sm.skipped_nonfinite) rec["skipped_nonfinite"] = true;
      metrics << rec.dump() << "\n";
    }

    if (next_eval > 0 && env_steps >= next_eval) {
      const double mean_ret = quick_eval(learner, pool, cfg.eval_episodes, eval_rng);
      json rec;
      rec["type"] = "eval";
      rec["env_steps"] = env_steps;
      rec["episode"] = episodes;
      rec["mean_return"] = mean_ret;
      metrics << rec.dump() << "\n";
      next_eval += cfg.eval_interval;
    }

    if (env_steps >= next_ckpt || env_steps >= cfg.total_env_steps) {
      CheckpointData data;
      data.env_steps = env_steps;
      data.episodes = episodes;
      data.next_gen = next_gen;
      data.rng_env = env_rng.serialize();
      data.rng_opt = opt_rng.serialize();
      data.rng_gen = gen_rng.serialize();
      data.rng_eval = eval_rng.serialize();
      const std::string path =
          (fs::path(run_dir) / "checkpoints" / ("ckpt_" + std::to_string(env_steps) + ".json"))
              .string();
      save_checkpoint(path, learner, replay, data);
      fs::copy_file(path, fs::path(run_dir) / "checkpoints" / "ckpt_latest.json",
                    fs::copy_options::overwrite_existing);
      while (env_steps >= next_ckpt) next_ckpt += cfg.checkpoint_interval;
    }
  }
  metrics.flush();
  pool.save((fs::path(run_dir) / "pool").string());
  std::ofstream(fs::path(run_dir) / "registry.json") << learner.registry().serialize()
                                                     << "\n";
  return {run_dir, env_steps, episodes};
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

std::string TrainConfig::to_json() const {
  json j;
  j["env"] = {{"kind", env.kind == env::EnvKind::lbf ? "lbf" : "predator_prey"},
              {"n_controllable", env.n_controllable},
              {"max_teammates", env.max_teammates},
              {"grid_size", env.grid_size},
              {"horizon", env.horizon},
              {"gamma", env.gamma},
              {"vision_range", env.vision_range},
              {"n_foods", env.n_foods},
              {"n_obstacles", env.n_obstacles},
              {"controllable_level", env.controllable_level},
              {"teammate_level", env.teammate_level},
              {"max_food_level", env.max_food_level},
              {"seed", env.seed},
              {"change",
               {{"kind", env.change.is_never() ? "never" : "discrete_uniform"},
                {"low", env.change.low},
                {"high", env.change.high}}}};
  j["pool"] = {{"traj_per_group", traj_per_group},
               {"buffer_cap", buffer_cap},
               {"partner", partner},
               {"generation", generation},
               {"archetype_cycle", archetype_cycle},
               {"learned_steps", learned_steps}};
  j["crp"] = {{"alpha", alpha},
              {"embed_dim", embed_dim},
              {"d_model", d_model},
              {"encoder_layers", encoder_layers},
              {"decoder_hidden", decoder_hidden},
              {"max_len", max_len},
              {"model_steps", model_steps},
              {"model_batch", model_batch},
              {"model_lr", model_lr}};
  j["context"] = {{"z_dim", z_dim},
                  {"e_dim", e_dim},
                  {"ctx_hidden", ctx_hidden},
                  {"var_hidden", var_hidden},
                  {"rec_hidden", rec_hidden},
                  {"kappa", kappa},
                  {"eta", eta},
                  {"sigma_floor", sigma_floor}};
  j["qmix"] = {{"agent_hidden", agent_hidden},
               {"mixing_embed", mixing_embed},
               {"hyper_hidden", hyper_hidden},
               {"lr", lr},
               {"grad_clip", grad_clip},
               {"sync_interval", sync_interval},
               {"eps_start", eps_start},
               {"eps_end", eps_end},
               {"eps_anneal_steps", eps_anneal_steps}};
  j["trainer"] = {{"total_env_steps", total_env_steps},
                  {"batch_size", batch_size},
                  {"replay_capacity", replay_capacity},
                  {"groups_per_iteration", groups_per_iteration},
                  {"generation_interval", generation_interval},
                  {"max_groups", max_groups},
                  {"alpha_gce", alpha_gce},
                  {"alpha_mi", alpha_mi},
                  {"alpha_lce", alpha_lce},
                  {"alpha_rec", alpha_rec},
                  {"seed", seed},
                  {"wo_crp", wo_crp},
                  {"wo_mi", wo_mi},
                  {"wo_lce", wo_lce},
                  {"wo_rec", wo_rec},
                  {"checkpoint_interval", checkpoint_interval},
                  {"eval_interval", eval_interval},
                  {"eval_episodes", eval_episodes}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  if (j.contains("env")) {
    const auto& e = j["env"];
    if (e.contains("kind"))
      c.env.kind = e["kind"] == "lbf" ? env::EnvKind::lbf : env::EnvKind::predator_prey;
    auto get = [&](const char* k, auto& dst) {
      if (e.contains(k)) dst = e[k].get<std::decay_t<decltype(dst)>>();
    };
    get("n_controllable", c.env.n_controllable);
    get("max_teammates", c.env.max_teammates);
    get("grid_size", c.env.grid_size);
    get("horizon", c.env.horizon);
    get("gamma", c.env.gamma);
    get("vision_range", c.env.vision_range);
    get("n_foods", c.env.n_foods);
    get("n_obstacles", c.env.n_obstacles);
    get("controllable_level", c.env.controllable_level);
    get("teammate_level", c.env.teammate_level);
    get("max_food_level", c.env.max_food_level);
    get("seed", c.env.seed);
    if (e.contains("change")) {
      const auto& ch = e["change"];
      if (ch["kind"] == "never")
        c.env.change = env::SuddenChangeDist::never();
      else
        c.env.change = env::SuddenChangeDist::uniform(ch["low"], ch["high"]);
    }
  }
  auto sec = [&](const char* name, auto fn) {
    if (j.contains(name)) fn(j[name]);
  };
  sec("pool", [&](const json& p) {
    if (p.contains("traj_per_group")) c.traj_per_group = p["traj_per_group"];
    if (p.contains("buffer_cap")) c.buffer_cap = p["buffer_cap"];
    if (p.contains("partner")) c.partner = p["partner"];
    if (p.contains("generation")) c.generation = p["generation"];
    if (p.contains("archetype_cycle"))
      c.archetype_cycle = p["archetype_cycle"].get<std::vector<int>>();
    if (p.contains("learned_steps")) c.learned_steps = p["learned_steps"];
  });
  sec("crp", [&](const json& p) {
    if (p.contains("alpha")) c.alpha = p["alpha"];
    if (p.contains("embed_dim")) c.embed_dim = p["embed_dim"];
    if (p.contains("d_model")) c.d_model = p["d_model"];
    if (p.contains("encoder_layers")) c.encoder_layers = p["encoder_layers"];
    if (p.contains("decoder_hidden")) c.decoder_hidden = p["decoder_hidden"];
    if (p.contains("max_len")) c.max_len = p["max_len"];
    if (p.contains("model_steps")) c.model_steps = p["model_steps"];
    if (p.contains("model_batch")) c.model_batch = p["model_batch"];
    if (p.contains("model_lr")) c.model_lr = p["model_lr"];
  });
  sec("context", [&](const json& p) {
    if (p.contains("z_dim")) c.z_dim = p["z_dim"];
    if (p.contains("e_dim")) c.e_dim = p["e_dim"];
    if (p.contains("ctx_hidden")) c.ctx_hidden = p["ctx_hidden"];
    if (p.contains("var_hidden")) c.var_hidden = p["var_hidden"];
    if (p.contains("rec_hidden")) c.rec_hidden = p["rec_hidden"];
    if (p.contains("kappa")) c.kappa = p["kappa"];
    if (p.contains("eta")) c.eta = p["eta"];
    if (p.contains("sigma_floor")) c.sigma_floor = p["sigma_floor"];
  });
  sec("qmix", [&](const json& p) {
    if (p.contains("agent_hidden")) c.agent_hidden = p["agent_hidden"];
    if (p.contains("mixing_embed")) c.mixing_embed = p["mixing_embed"];
    if (p.contains("hyper_hidden")) c.hyper_hidden = p["hyper_hidden"];
    if (p.contains("lr")) c.lr = p["lr"];
    if (p.contains("grad_clip")) c.grad_clip = p["grad_clip"];
    if (p.contains("sync_interval")) c.sync_interval = p["sync_interval"];
    if (p.contains("eps_start")) c.eps_start = p["eps_start"];
    if (p.contains("eps_end")) c.eps_end = p["eps_end"];
    if (p.contains("eps_anneal_steps")) c.eps_anneal_steps = p["eps_anneal_steps"];
  });
  sec("trainer", [&](const json& p) {
    if (p.contains("total_env_steps")) c.total_env_steps = p["total_env_steps"];
    if (p.contains("batch_size")) c.batch_size = p["batch_size"];
    if (p.contains("replay_capacity")) c.replay_capacity = p["replay_capacity"];
    if (p.contains("groups_per_iteration"))
      c.groups_per_iteration = p["groups_per_iteration"];
    if (p.contains("generation_interval")) c.generation_interval = p["generation_interval"];
    if (p.contains("max_groups")) c.max_groups = p["max_groups"];
    if (p.contains("alpha_gce")) c.alpha_gce = p["alpha_gce"];
    if (p.contains("alpha_mi")) c.alpha_mi = p["alpha_mi"];
    if (p.contains("alpha_lce")) c.alpha_lce = p["alpha_lce"];
    if (p.contains("alpha_rec")) c.alpha_rec = p["alpha_rec"];
    if (p.contains("seed")) c.seed = p["seed"];
    if (p.contains("wo_crp")) c.wo_crp = p["wo_crp"];
    if (p.contains("wo_mi")) c.wo_mi = p["wo_mi"];
    if (p.contains("wo_lce")) c.wo_lce = p["wo_lce"];
    if (p.contains("wo_rec")) c.wo_rec = p["wo_rec"];
    if (p.contains("checkpoint_interval")) c.checkpoint_interval = p["checkpoint_interval"];
    if (p.contains("eval_interval")) c.eval_interval = p["eval_interval"];
    if (p.contains("eval_episodes")) c.eval_episodes = p["eval_episodes"];
  });
  c.validate();
  return c;
}

TrainConfig TrainConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

}  // namespace tadapt::train
