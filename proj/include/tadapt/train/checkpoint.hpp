#pragma once

#include <memory>
#include <string>

namespace tadapt::train {

class Learner;
class ReplayBuffer;
struct TrainConfig;

struct CheckpointData {
  long env_steps = 0;
  int episodes = 0;
  long next_gen = 0;
  std::string rng_env, rng_opt, rng_gen, rng_eval;
};

// Single versioned archive: config, every parameter (live, target, behavior
// model), optimizer state, moving-average bank, cluster registry, counters,
// rng streams and the replay buffer.
void save_checkpoint(const std::string& path, Learner& learner,
                     const ReplayBuffer& replay, const CheckpointData& data);

// Restores into an already-constructed learner; the checkpoint's env section
// must match the learner's (wrong-env checkpoints are rejected).
CheckpointData load_checkpoint(const std::string& path, Learner& learner,
                               ReplayBuffer* replay);

struct LoadedRun {
  std::unique_ptr<TrainConfig> cfg;
  std::unique_ptr<Learner> learner;
  CheckpointData data;
};

// Rebuilds a learner from scratch out of a checkpoint file.
LoadedRun load_run(const std::string& ckpt_path);

}  // namespace tadapt::train
