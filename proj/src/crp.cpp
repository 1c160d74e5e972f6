#include "tadapt/crp/crp.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace tadapt::crp {

using nn::Graph;
using nn::Var;
using json = nlohmann::json;

Mat behavior_tokens(const pool::Trajectory& tr, const BehaviorModelConfig& cfg) {
  const int T = tr.length();
  require(T >= 1, "behavior_tokens: empty trajectory");
  Mat tokens = Mat::Zero(T, cfg.token_dim());
  for (int t = 0; t < T; ++t) {
    tokens.row(t).head(cfg.state_dim) = tr.states[t].transpose();
    for (int slot = 0; slot < cfg.n_slots; ++slot) {
      const int a = tr.slot_action(t, slot, cfg.n_controllable);
      if (a >= 0) tokens(t, cfg.state_dim + slot * cfg.n_actions + a) = 1.0;
    }
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// BehaviorEncoder
// ---------------------------------------------------------------------------

BehaviorEncoder::BehaviorEncoder(const BehaviorModelConfig& cfg, Rng& rng)
    : cfg_(cfg), in_proj_(cfg.token_dim(), cfg.d_model, rng, "benc.in") {
  pos_enc_ = Mat::Zero(cfg.max_len, cfg.d_model);
  for (int t = 0; t < cfg.max_len; ++t) {
    for (int j = 0; j < cfg.d_model; j += 2) {
      const double f = t / std::pow(10000.0, static_cast<double>(j) / cfg.d_model);
      pos_enc_(t, j) = std::sin(f);
      if (j + 1 < cfg.d_model) pos_enc_(t, j + 1) = std::cos(f);
    }
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "benc.l" + std::to_string(l);
    layers_.push_back(Layer{
        nn::Linear(cfg.d_model, cfg.d_model, rng, p + ".q"),
        nn::Linear(cfg.d_model, cfg.d_model, rng, p + ".k"),
        nn::Linear(cfg.d_model, cfg.d_model, rng, p + ".v"),
        nn::Linear(cfg.d_model, cfg.d_model, rng, p + ".o"),
        nn::Linear(cfg.d_model, cfg.ffn_dim, rng, p + ".f1"),
        nn::Linear(cfg.ffn_dim, cfg.d_model, rng, p + ".f2"),
        nn::LayerNorm(cfg.d_model, p + ".ln1"),
        nn::LayerNorm(cfg.d_model, p + ".ln2"),
    });
  }
  out_ = nn::Linear(cfg.d_model, cfg.embed_dim, rng, "benc.out");
}

Var BehaviorEncoder::encode_var(Graph& g, const pool::Trajectory& tr) const {
  const Mat tokens = behavior_tokens(tr, cfg_);
  const int T = static_cast<int>(tokens.rows());
  require(T <= cfg_.max_len, "encode_trajectory: length exceeds positional capacity");
  Var x = in_proj_.forward(g, g.constant(tokens));
  x = g.add(x, g.constant(pos_enc_.topRows(T)));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
  for (const auto& layer : layers_) {
    Var q = layer.q.forward(g, x);
    Var k = layer.k.forward(g, x);
    Var v = layer.v.forward(g, x);
    Var scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d);
    Var attn = g.row_softmax(scores);
    Var o = layer.o.forward(g, g.matmul(attn, v));
    x = layer.ln1.forward(g, g.add(x, o));
    Var f = layer.f2.forward(g, g.relu_(layer.f1.forward(g, x)));
    x = layer.ln2.forward(g, g.add(x, f));
  }
  Var pooled = g.colmean(x);  // (1, d_model)
  return out_.forward(g, pooled);
}

Vec BehaviorEncoder::encode(const pool::Trajectory& tr) const {
  Graph g;
  Var v = encode_var(g, tr);
  Vec out = g.val(v).row(0).transpose();
  require(out.allFinite(), "encode_trajectory: non-finite embedding");
  return out;
}

std::vector<nn::Parameter*> BehaviorEncoder::params() {
  std::vector<nn::Parameter*> out;
  nn::append_params(out, in_proj_.params());
  for (auto& l : layers_) {
    nn::append_params(out, l.q.params());
    nn::append_params(out, l.k.params());
    nn::append_params(out, l.v.params());
    nn::append_params(out, l.o.params());
    nn::append_params(out, l.f1.params());
    nn::append_params(out, l.f2.params());
    nn::append_params(out, l.ln1.params());
    nn::append_params(out, l.ln2.params());
  }
  nn::append_params(out, out_.params());
  return out;
}

// ---------------------------------------------------------------------------
// BehaviorDecoder
// ---------------------------------------------------------------------------

BehaviorDecoder::BehaviorDecoder(const BehaviorModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      cell_(cfg.state_dim + cfg.embed_dim, cfg.decoder_hidden, rng, "bdec.gru"),
      head_(cfg.decoder_hidden, cfg.n_slots * cfg.n_actions, rng, "bdec.head") {}

Var BehaviorDecoder::log_likelihood_var(Graph& g, const pool::Trajectory& tr,
                                        Var v) const {
  const int T = tr.length();
  require(T >= 1, "action_log_likelihood: empty trajectory");
  Var h = g.constant(Mat::Zero(1, cfg_.decoder_hidden));
  std::vector<Var> step_terms;
  for (int t = 0; t < T; ++t) {
    Var x = g.concat_cols({g.constant(tr.states[t].transpose()), v});
    h = cell_.step(g, x, h);
    Var logits = head_.forward(g, h);  // (1, n_slots*n_actions)
    for (int slot = 0; slot < cfg_.n_slots; ++slot) {
      const int a = tr.slot_action(t, slot, cfg_.n_controllable);
      if (a < 0) continue;  // absent slot masked out
      Var sl = g.slice_cols(logits, slot * cfg_.n_actions, cfg_.n_actions);
      Var lp = g.row_log_softmax(sl);
      step_terms.push_back(g.pick(lp, {a}));
    }
  }
  Var total = g.sum_all(g.concat_rows(step_terms));
  if (!std::isfinite(g.val(total)(0, 0)))
    throw std::runtime_error("action_log_likelihood: non-finite decoder output");
  return total;
}

double BehaviorDecoder::log_likelihood(const pool::Trajectory& tr, const Vec& v) const {
  Graph g;
  Var vv = g.constant(v.transpose());
  return g.val(log_likelihood_var(g, tr, vv))(0, 0);
}

std::vector<nn::Parameter*> BehaviorDecoder::params() {
  std::vector<nn::Parameter*> out;
  nn::append_params(out, cell_.params());
  nn::append_params(out, head_.params());
  return out;
}

Vec group_embedding(const BehaviorEncoder& enc,
                    const std::deque<pool::Trajectory>& buffer) {
  require(!buffer.empty(), "group_embedding: empty buffer");
  Vec sum = Vec::Zero(enc.config().embed_dim);
  for (const auto& tr : buffer) sum += enc.encode(tr);
  return sum / static_cast<double>(buffer.size());
}

// ---------------------------------------------------------------------------
// Registry and CRP assignment
// ---------------------------------------------------------------------------

void ClusterRegistry::check() const {
  int total = 0;
  for (const auto& c : clusters) {
    require(c.count >= 1, "registry: cluster counts must be >= 1");
    total += c.count;
  }
  require(total == total_assigned, "registry: sum of counts must equal K");
}

std::vector<std::vector<int>> ClusterRegistry::member_table() const {
  std::vector<std::vector<int>> out;
  for (const auto& c : clusters) out.push_back(c.members);
  return out;
}

std::string ClusterRegistry::serialize() const {
  json j;
  j["alpha"] = alpha;
  j["total_assigned"] = total_assigned;
  j["clusters"] = json::array();
  for (const auto& c : clusters) {
    json cj;
    cj["mean"] = from_vec(c.mean);
    cj["count"] = c.count;
    cj["members"] = c.members;
    j["clusters"].push_back(std::move(cj));
  }
  return j.dump(2);
}

ClusterRegistry ClusterRegistry::deserialize(const std::string& text) {
  const json j = json::parse(text);
  ClusterRegistry reg;
  reg.alpha = j["alpha"];
  reg.total_assigned = j["total_assigned"];
  for (const auto& cj : j["clusters"]) {
    ClusterRegistry::Cluster c;
    c.mean = to_vec(cj["mean"].get<std::vector<double>>());
    c.count = cj["count"];
    c.members = cj["members"].get<std::vector<int>>();
    reg.clusters.push_back(std::move(c));
  }
  reg.check();
  return reg;
}

Vec crp_prior(const ClusterRegistry& reg, int k) {
  require(reg.alpha > 0.0, "crp_prior: alpha must be positive");
  require(k == reg.total_assigned + 1, "crp_prior: k must be the next group index");
  const int M = reg.n_clusters();
  const double denom = static_cast<double>(k - 1) + reg.alpha;
  Vec p(M + 1);
  for (int m = 0; m < M; ++m) p[m] = reg.clusters[m].count / denom;
  p[M] = reg.alpha / denom;
  return p;
}

Vec candidate_embedding(const Vec& v_k, const ClusterRegistry& reg, int m) {
  const int M = reg.n_clusters();
  require(m >= 0 && m <= M, "candidate_embedding: invalid cluster index");
  if (m == M) return v_k;
  const auto& c = reg.clusters[m];
  return (c.count * c.mean + v_k) / static_cast<double>(c.count + 1);
}

AssignmentOutcome assign_cluster(pool::TeammateGroup& group, ClusterRegistry& reg,
                                 const BehaviorEncoder& enc, const BehaviorDecoder& dec) {
  require(!group.buffer.empty(), "assign_cluster: group has no buffered trajectories");
  const Vec v_k = group_embedding(enc, group.buffer);
  group.embedding = v_k;

  const int k = reg.total_assigned + 1;
  const Vec prior = crp_prior(reg, k);
  const int M = reg.n_clusters();

  AssignmentOutcome out;
  out.log_posterior.resize(M + 1);
  for (int m = 0; m <= M; ++m) {
    const Vec cand = candidate_embedding(v_k, reg, m);
    double ll = 0.0;
    for (const auto& tr : group.buffer) ll += dec.log_likelihood(tr, cand);
    ll /= static_cast<double>(group.buffer.size());
    out.log_posterior[m] = std::log(prior[m]) + ll;
  }
  int best = 0;
  for (int m = 1; m <= M; ++m)
    if (out.log_posterior[m] > out.log_posterior[best]) best = m;

  out.cluster = best;
  out.created_new = best == M;
  if (best == M) {
    reg.clusters.push_back({v_k, 1, {group.group_id}});
  } else {
    auto& c = reg.clusters[best];
    c.mean = candidate_embedding(v_k, reg, best);
    c.count += 1;
    c.members.push_back(group.group_id);
  }
  reg.total_assigned += 1;
  group.cluster_id = best;
  for (auto& tr : group.buffer) tr.cluster_id = best;
  reg.check();
  return out;
}

AssignmentOutcome assign_singleton(pool::TeammateGroup& group, ClusterRegistry& reg,
                                   const BehaviorEncoder& enc) {
  require(!group.buffer.empty(), "assign_singleton: group has no buffered trajectories");
  group.embedding = group_embedding(enc, group.buffer);
  AssignmentOutcome out;
  out.cluster = reg.n_clusters();
  out.created_new = true;
  reg.clusters.push_back({group.embedding, 1, {group.group_id}});
  reg.total_assigned += 1;
  group.cluster_id = out.cluster;
  for (auto& tr : group.buffer) tr.cluster_id = out.cluster;
  reg.check();
  return out;
}

// ---------------------------------------------------------------------------
// Behavior-model loss and training
// ---------------------------------------------------------------------------

Var model_loss_var(Graph& g, const BehaviorEncoder& enc, const BehaviorDecoder& dec,
                   const std::vector<const pool::Trajectory*>& batch) {
  require(!batch.empty(), "model_loss: empty batch");
  std::vector<Var> terms;
  for (const pool::Trajectory* tr : batch) {
    Var v = enc.encode_var(g, *tr);
    terms.push_back(dec.log_likelihood_var(g, *tr, v));
  }
  return g.scale(g.mean_all(g.concat_rows(terms)), -1.0);
}

double model_loss(const BehaviorEncoder& enc, const BehaviorDecoder& dec,
                  const std::vector<const pool::Trajectory*>& batch) {
  Graph g;
  return g.val(model_loss_var(g, enc, dec, batch))(0, 0);
}

ModelTrainStats train_behavior_model(BehaviorEncoder& enc, BehaviorDecoder& dec,
                                     const std::vector<pool::TeammateGroup>& groups,
                                     int steps, int batch_size, double lr, Rng& rng) {
  std::vector<const pool::Trajectory*> all;
  for (const auto& g : groups)
    for (const auto& tr : g.buffer) all.push_back(&tr);
  require(!all.empty(), "train_behavior_model: no trajectories");

  std::vector<nn::Parameter*> params = enc.params();
  nn::append_params(params, dec.params());
  nn::Adam opt(params, lr, 10.0);

  ModelTrainStats stats;
  for (int s = 0; s < steps; ++s) {
    std::vector<const pool::Trajectory*> batch;
    for (int b = 0; b < batch_size; ++b)
      batch.push_back(all[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(all.size()) - 1))]);
    Graph g;
    Var loss = model_loss_var(g, enc, dec, batch);
    const double lv = g.val(loss)(0, 0);
    if (!std::isfinite(lv))
      throw std::runtime_error("train_behavior_model: non-finite loss, step aborted");
    opt.zero_grad();
    g.backward(loss);
    opt.step();
    stats.losses.push_back(lv);
  }
  return stats;
}

}  // namespace tadapt::crp
