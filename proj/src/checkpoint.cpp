#include "tadapt/train/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "tadapt/train/trainer.hpp"

namespace tadapt::train {

using json = nlohmann::json;

namespace {
constexpr int kCheckpointVersion = 1;

json mat_to_json(const Mat& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Mat mat_from_json(const json& j) {
  auto data = j["data"].get<std::vector<double>>();
  return Eigen::Map<Mat>(data.data(), j["rows"].get<Eigen::Index>(),
                         j["cols"].get<Eigen::Index>());
}
}  // namespace

void save_checkpoint(const std::string& path, Learner& learner,
                     const ReplayBuffer& replay, const CheckpointData& data) {
  json j;
  j["version"] = kCheckpointVersion;
  j["config"] = json::parse(learner.config().to_json());
  j["env_steps"] = data.env_steps;
  j["episodes"] = data.episodes;
  j["next_gen"] = data.next_gen;
  j["updates"] = learner.updates();
  j["rng"] = {{"env", data.rng_env},
              {"opt", data.rng_opt},
              {"gen", data.rng_gen},
              {"eval", data.rng_eval}};

  json params = json::array();
  for (nn::Parameter* p : learner.all_params()) params.push_back(mat_to_json(p->value));
  j["params"] = std::move(params);

  const auto st = learner.optimizer().state();
  json adam;
  adam["t"] = st.t;
  adam["m"] = json::array();
  adam["v"] = json::array();
  for (const Mat& m : st.m) adam["m"].push_back(mat_to_json(m));
  for (const Mat& v : st.v) adam["v"].push_back(mat_to_json(v));
  j["adam"] = std::move(adam);

  json bank;
  bank["eta"] = learner.bank().eta;
  bank["z_bars"] = json::array();
  for (const Vec& b : learner.bank().z_bars) bank["z_bars"].push_back(from_vec(b));
  bank["e_bars"] = json::array();
  for (const auto& per : learner.bank().e_bars) {
    json row = json::array();
    for (const Vec& b : per) row.push_back(from_vec(b));
    bank["e_bars"].push_back(std::move(row));
  }
  j["bank"] = std::move(bank);

  j["registry"] = json::parse(learner.registry().serialize());

  json rep = json::array();
  for (const auto& ep : replay.episodes())
    rep.push_back(json::parse(pool::trajectory_to_json(ep)));
  j["replay"] = std::move(rep);

  std::ofstream out(path);
  require(out.good(), "save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
}

CheckpointData load_checkpoint(const std::string& path, Learner& learner,
                               ReplayBuffer* replay) {
  std::ifstream in(path);
  require(in.good(), "load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw std::runtime_error(std::string("load_checkpoint: corrupt checkpoint: ") +
                             ex.what());
  }
  require(j.contains("version") && j["version"].get<int>() == kCheckpointVersion,
          "load_checkpoint: unsupported checkpoint version");

  const json own_env = json::parse(learner.config().to_json())["env"];
  require(j["config"]["env"] == own_env,
          "load_checkpoint: checkpoint/pool mismatch (wrong env configuration)");

  auto params = learner.all_params();
  require(j["params"].size() == params.size(),
          "load_checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    Mat m = mat_from_json(j["params"][i]);
    require(m.rows() == params[i]->value.rows() && m.cols() == params[i]->value.cols(),
            "load_checkpoint: parameter shape mismatch");
    params[i]->value = std::move(m);
  }

  nn::Adam::State st;
  st.t = j["adam"]["t"];
  for (const auto& m : j["adam"]["m"]) st.m.push_back(mat_from_json(m));
  for (const auto& v : j["adam"]["v"]) st.v.push_back(mat_from_json(v));
  learner.optimizer().restore(st);

  auto& bank = learner.bank();
  bank.z_bars.clear();
  bank.e_bars.clear();
  bank.eta = j["bank"]["eta"];
  for (const auto& b : j["bank"]["z_bars"])
    bank.z_bars.push_back(to_vec(b.get<std::vector<double>>()));
  for (const auto& row : j["bank"]["e_bars"]) {
    std::vector<Vec> per;
    for (const auto& b : row) per.push_back(to_vec(b.get<std::vector<double>>()));
    bank.e_bars.push_back(std::move(per));
  }

  learner.registry() = crp::ClusterRegistry::deserialize(j["registry"].dump());
  learner.set_updates(j["updates"]);

  if (replay) {
    *replay = ReplayBuffer(learner.config().replay_capacity);
    for (const auto& ep : j["replay"])
      replay->push(pool::trajectory_from_json(ep.dump()));
  }

  CheckpointData data;
  data.env_steps = j["env_steps"];
  data.episodes = j["episodes"];
  data.next_gen = j["next_gen"];
  data.rng_env = j["rng"]["env"];
  data.rng_opt = j["rng"]["opt"];
  data.rng_gen = j["rng"]["gen"];
  data.rng_eval = j["rng"]["eval"];
  return data;
}

LoadedRun load_run(const std::string& ckpt_path) {
  std::ifstream in(ckpt_path);
  require(in.good(), "load_run: cannot open " + ckpt_path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw std::runtime_error(std::string("load_run: corrupt checkpoint: ") + ex.what());
  }
  LoadedRun run;
  run.cfg = std::make_unique<TrainConfig>(TrainConfig::from_json(j["config"].dump()));
  run.learner = std::make_unique<Learner>(*run.cfg, run.cfg->seed);
  run.data = load_checkpoint(ckpt_path, *run.learner, nullptr);
  return run;
}

}  // namespace tadapt::train
