#pragma once

#include <span>
#include <string>
#include <vector>

#include "tfnas/model.hpp"

namespace tfnas {

// classification: label = (token 0 occurs) xor (token 1 occurs). A uniform
//   average of the sequence followed by a nonlinearity solves it, so the
//   query-key path is dispensable.
// masked_token: the sequence repeats a random motif; one position holds the
//   mask token and the target is the token it hides.
// tagging: tag each position 1 when its token already occurred earlier.
enum class TaskKind { Classification, MaskedToken, Tagging };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::Classification;
  std::size_t vocab = 16;
  std::size_t seq_len = 16;
  std::uint64_t seed = 1;
  std::size_t train_size = 2048;
  std::size_t dev_size = 512;
  // Probability of flipping a training label (classification only).
  Real label_noise = 0;
  std::size_t motif_len = 3;  // masked_token only

  // Class count is implied: 2, vocab or 2.
  std::size_t num_classes() const;
  OutputKind output() const;
  void validate() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Dataset {
  std::size_t seq_len = 0;
  std::size_t count = 0;
  std::vector<int> tokens;   // count * seq_len
  std::vector<int> labels;   // count, or count * seq_len for per-token tasks
  std::vector<Real> weights; // empty, or one per label
};

struct Task {
  TaskSpec spec;
  Dataset train;
  Dataset dev;  // no dev sequence also appears in train
};

// Pure function of the spec.
Task make_task(const TaskSpec& spec);

struct Batch {
  std::vector<int> tokens;
  std::vector<int> labels;
  std::vector<Real> weights;
};

Batch gather(const Dataset& d, std::span<const std::size_t> rows, bool per_token);

// Smallest model config able to run the task on the given search space.
ModelConfig model_config_for(const TaskSpec& task, const SearchSpaceConfig& space);

// Raises ConfigError when the model cannot read or label the task.
void check_compatible(const ModelConfig& model, const TaskSpec& task);

}  // namespace tfnas
