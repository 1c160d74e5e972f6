#include "tadapt/qmix/qmix.hpp"

namespace tadapt::qmix {

using nn::Graph;
using nn::Var;

AgentQNetwork::AgentQNetwork(int obs_dim, int n_actions, int e_dim, int hidden, Rng& rng,
                             const std::string& name)
    : in_dim_(obs_dim + n_actions + e_dim), n_actions_(n_actions), hidden_(hidden),
      fc_in_(in_dim_, hidden, rng, name + ".in"),
      cell_(hidden, hidden, rng, name + ".gru"),
      head_(hidden, n_actions, rng, name + ".head") {}

AgentQNetwork::Out AgentQNetwork::step(Graph& g, Var x, Var h) const {
  Var pre = g.relu_(fc_in_.forward(g, x));
  Var hn = cell_.step(g, pre, h);
  Var q = head_.forward(g, hn);
  if (!g.val(q).allFinite()) throw std::runtime_error("local_q: non-finite outputs");
  return {q, hn};
}

std::pair<Vec, Vec> AgentQNetwork::step_eval(const Vec& x, const Vec& h) const {
  Graph g;
  auto out = step(g, g.constant(x.transpose()), g.constant(h.transpose()));
  return {g.val(out.q).row(0).transpose(), g.val(out.h).row(0).transpose()};
}

std::vector<nn::Parameter*> AgentQNetwork::params() {
  std::vector<nn::Parameter*> out = fc_in_.params();
  nn::append_params(out, cell_.params());
  nn::append_params(out, head_.params());
  return out;
}

MonotonicMixer::MonotonicMixer(int n_agents, int state_dim, int z_dim, int embed,
                               int hyper_hidden, Rng& rng, const std::string& name)
    : n_agents_(n_agents), embed_(embed),
      hyper_w1_(state_dim + z_dim, n_agents * embed, rng, name + ".hw1"),
      hyper_b1_(state_dim + z_dim, embed, rng, name + ".hb1"),
      hyper_w2_(state_dim + z_dim, embed, rng, name + ".hw2"),
      hyper_b2_({state_dim + z_dim, hyper_hidden, 1}, rng, nn::MLP::Act::relu,
                name + ".hb2") {
  // expand_: (n, n*embed) replicates q_i across its embed block;
  // reduce_: (n*embed, embed) sums blocks back down.
  expand_ = Mat::Zero(n_agents, n_agents * embed);
  reduce_ = Mat::Zero(n_agents * embed, embed);
  for (int i = 0; i < n_agents; ++i)
    for (int j = 0; j < embed; ++j) {
      expand_(i, i * embed + j) = 1.0;
      reduce_(i * embed + j, j) = 1.0;
    }
}

Var MonotonicMixer::mix_with(Graph& g, Var qs, Var w1, Var b1, Var w2, Var b2) const {
  Var q_exp = g.matmul(qs, g.constant(expand_));            // (B, n*embed)
  Var hidden = g.matmul(g.mul(q_exp, w1), g.constant(reduce_));  // (B, embed)
  hidden = g.elu_(g.add(hidden, b1));
  Var y = g.rowsum(g.mul(hidden, w2));  // (B, 1)
  return g.add(y, b2);
}

Var MonotonicMixer::mix(Graph& g, Var qs, Var sz) const {
  require(g.val(qs).cols() == n_agents_, "mix: need one utility per agent");
  Var w1 = g.abs_(hyper_w1_.forward(g, sz));
  Var b1 = hyper_b1_.forward(g, sz);
  Var w2 = g.abs_(hyper_w2_.forward(g, sz));
  Var b2 = hyper_b2_.forward(g, sz);
  Var out = mix_with(g, qs, w1, b1, w2, b2);
  if (!g.val(out).allFinite()) throw std::runtime_error("mix: non-finite Q_tot");
  return out;
}

std::vector<nn::Parameter*> MonotonicMixer::params() {
  std::vector<nn::Parameter*> out = hyper_w1_.params();
  nn::append_params(out, hyper_b1_.params());
  nn::append_params(out, hyper_w2_.params());
  nn::append_params(out, hyper_b2_.params());
  return out;
}

int select_action(const Vec& q, double epsilon, const std::vector<uint8_t>& avail,
                  Rng& rng) {
  require(static_cast<size_t>(q.size()) == avail.size(),
          "select_action: availability mask size mismatch");
  std::vector<int> options;
  for (size_t a = 0; a < avail.size(); ++a)
    if (avail[a]) options.push_back(static_cast<int>(a));
  require(!options.empty(), "select_action: no available action");
  if (epsilon > 0.0 && rng.uniform() < epsilon)
    return options[rng.uniform_int(0, static_cast<int>(options.size()) - 1)];
  int best = options[0];
  for (int a : options)
    if (q[a] > q[best]) best = a;
  return best;
}

void sync_target(const std::vector<nn::Parameter*>& live,
                 const std::vector<nn::Parameter*>& target) {
  nn::copy_params(target, live);
}

}  // namespace tadapt::qmix
