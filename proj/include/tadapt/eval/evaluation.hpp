#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tadapt/train/trainer.hpp"

namespace tadapt::eval {

// "stationary" or "U<low>-<high>"
std::string dist_label(const env::SuddenChangeDist& d);
env::SuddenChangeDist parse_dist(const std::string& label);

struct EpisodeTrace {
  double episode_return = 0.0;
  std::vector<int> change_steps;           // step indices where the team changed
  std::vector<std::vector<Vec>> contexts;  // [t][agent] local context e_t^i
};

struct ConditionResult {
  std::string label;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<EpisodeTrace> episodes;
};

struct EvalReport {
  std::vector<ConditionResult> conditions;
  // degradation[i] = stationary mean - condition i mean (when a stationary
  // condition is present)
  std::vector<double> degradation;
  std::optional<double> stationary_mean;
};

// Alg.-3-style evaluation: greedy decentralized execution from local context
// only; the scheduler swaps teammate policies mid-episode per `dist`.
ConditionResult evaluate_nonstationary(const train::Learner& learner,
                                       pool::TeammatePool& pool,
                                       const env::SuddenChangeDist& dist, int episodes,
                                       Rng& rng);

EvalReport ood_sweep(const train::Learner& learner, pool::TeammatePool& pool,
                     const std::vector<env::SuddenChangeDist>& dists, int episodes,
                     uint64_t seed);

struct CrossPlayUnit {
  std::string label;
  std::vector<int> group_ids;
};

struct CrossPlayMatrix {
  std::vector<std::string> labels;
  Mat mean_returns;  // rows: policy adapted to unit, cols: unit deployed

  double mean_diag() const;
  double mean_offdiag() const;
};

struct CrossPlayOptions {
  int episodes = 20;
  long adapt_steps = 10000;
  double adapt_epsilon = 0.05;
  uint64_t seed = 0;
};

// Short fine-tune of a learner against a fixed set of teammate groups.
void finetune(train::Learner& learner, pool::TeammatePool& pool,
              const std::vector<int>& group_ids, long env_steps, double epsilon,
              Rng& rng);

// Row policies are checkpoint copies adapted to one unit each; entries are
// stationary mean returns of row policy vs column unit.
CrossPlayMatrix cross_play(const std::string& ckpt_path, pool::TeammatePool& pool,
                           const std::vector<CrossPlayUnit>& units,
                           const CrossPlayOptions& opts);

struct PcaResult {
  Mat projected;        // (N, out_dim)
  Vec explained_ratio;  // nonincreasing, sums to <= 1
};

PcaResult pca_project(const std::vector<Vec>& points, int out_dim);

// Serializes an EvalReport (including context traces) to JSON text.
std::string report_to_json(const EvalReport& report);
void write_crossplay_json(const std::string& path, const CrossPlayMatrix& m);

// Renders CSV tables and PNG plots from whatever logs are present in `dir`
// (metrics.jsonl, eval_summary.json, crossplay.json, pool/). Missing inputs
// are listed in the returned vector and skipped.
std::vector<std::string> emit_report(const std::string& dir);

}  // namespace tadapt::eval
