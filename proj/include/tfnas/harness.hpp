#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tfnas/optimizers.hpp"
#include "tfnas/tasks.hpp"

namespace tfnas {

struct MetricRecord {
  std::size_t step = 0;
  Real l_orig = 0;
  Real l_cost = 0;
  Real l_total = 0;
  Real cost_binary = 0;
  std::optional<double> metric;  // dev metric, on evaluation steps only
};

using MetricSink = std::function<void(const MetricRecord&)>;

// Architecture state of a search: relaxed w for DO, the policy for SDO.
struct SearchState {
  std::optional<DOState> w;
  std::optional<Policy> policy;
};

struct RunResult {
  Algorithm algorithm = Algorithm::Plain;
  std::vector<MetricRecord> history;
  ArchParams selected;        // pruned (DO), ML (SDO) or the frozen arch (plain)
  double metric = 0;          // dev metric of `model` under `selected`
  double cost = 0;            // binary modeled cost of `selected`
  double speedup = 1;
  bool speedup_infinite = false;
  std::optional<Supernet> model;  // after DO fold-in
  SearchState state;
};

// Accuracy over the weighted labels of a dataset.
double evaluate(const Supernet& net, const ArchBinding& arch, const Dataset& data,
                std::size_t batch = 256);

// Plain training of the supernet with the architecture frozen to `arch`.
// The same data order and initial weights as train_search for equal seeds.
RunResult train_fixed(const SearchSpace& space, const Task& task, const ModelConfig& model,
                      const ArchParams& arch, const Hyperparams& hp, const CostVector& c,
                      const MetricSink& sink = {});

// Joint training of weights and architecture with hp.algorithm (DO or SDO;
// plain delegates to train_fixed with the baseline).
RunResult train_search(const SearchSpace& space, const Task& task, const ModelConfig& model,
                       const Hyperparams& hp, const CostVector& c, const MetricSink& sink = {});

// Fresh weights, frozen valid architecture, otherwise identical settings.
RunResult retrain(const SearchSpace& space, const ArchParams& selected, const Task& task,
                  const ModelConfig& model, const Hyperparams& hp, const CostVector& c,
                  const MetricSink& sink = {});

// 0 up to p percent of training, 1 from q on, linear in between.
Real ramp_weight(Real progress_pct, Real p = 80, Real q = 100);

struct DistillConfig {
  Real p = 80;
  Real q = 100;
  bool dropout_removed = true;  // always enforced
  void validate() const;
};

struct Teacher {
  const Supernet* net = nullptr;
  const SearchSpace* space = nullptr;
  const ArchParams* arch = nullptr;
};

// Trains a student (plain, DO or SDO per hp.algorithm) on
// (1 - r) * CE(teacher argmax) + r * CE(gold) with r = ramp_weight(progress).
// Only argmax labels leave the teacher.
RunResult distill(const Teacher& teacher, const SearchSpace& student_space, const Task& task,
                  const ModelConfig& student, const DistillConfig& cfg, const Hyperparams& hp,
                  const CostVector& c, const MetricSink& sink = {});

// Every loss term of one distillation step, for instrumentation.
struct DistillTerms {
  Real ramp = 0;
  Real silver = 0;
  Real gold = 0;
  Real total = 0;
};
DistillTerms distill_terms(const Supernet& student, const ArchBinding& arch, const Teacher& teacher,
                           const Batch& batch, std::size_t seq_len, Real progress_pct,
                           const DistillConfig& cfg);

}  // namespace tfnas
