#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tfnas/cost_model.hpp"
#include "tfnas/model.hpp"

namespace tfnas {

struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Var> params, AdamConfig cfg = {});

  // One update from the current .grad of every parameter; a parameter
  // without a gradient buffer is treated as having zero gradient.
  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

enum class Algorithm { Plain, DO, SDO };
std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

struct Hyperparams {
  Algorithm algorithm = Algorithm::SDO;
  Real lambda = Real(1e-5);
  Real nu = Real(0.01);
  Real prune_threshold = Real(1e-6);
  AdamConfig adam;
  Real arch_lr = Real(0.2);    // SGD step on the relaxed w (DO)
  Real policy_lr = Real(10);   // SGD step on phi, applied to nu * score * L_total
  Real w_init = 1;             // DO starts from the baseline
  Real phi_init = 0;           // SDO starts from uniform exploration
  std::size_t steps = 3000;
  std::size_t batch = 32;
  std::size_t eval_every = 100;
  std::uint64_t seed = 1;

  // lambda >= 0, nu >= 0, threshold > 0, lrs > 0, steps and batch > 0.
  void validate() const;
  // DO: lambda 1e-3. SDO: lambda 1e-5, nu 0.01.
  static Hyperparams defaults_for(Algorithm a);
};

struct StepMetrics {
  Real l_orig = 0;
  Real l_cost = 0;   // relaxed sum |w| c for DO, binary sum for SDO
  Real l_total = 0;
  Real cost_binary = 0;
};

// Builds L_orig for one batch under the given architecture binding.
using LossFn = std::function<Var(const ArchBinding&)>;

// ---- Direct optimization -------------------------------------------------

struct DOState {
  std::vector<Var> w;  // one [1,1] parameter per slot

  ArchParams values(const SearchSpace& space) const;
};

DOState make_do_state(const SearchSpace& space, Real init = 1);

// Gradient step on L_orig for theta (Adam) and w (SGD), then the L1 part of
// L_total as a proximal shrink of each w toward 0 by arch_lr * lambda * c_i.
// A w at 0 stays there unless the task gradient outweighs the shrink.
StepMetrics do_step(DOState& state, Adam& theta_opt, const SearchSpace& space, const LossFn& loss,
                    const CostVector& c, const Hyperparams& hp);

// Zeroes |w| < threshold. Surviving non-binary selection weights are folded
// into the supernet weights in place and set to 1; connections and layer
// norm mean switches keep their value since neither can be folded.
ArchParams do_prune(const DOState& state, const SearchSpace& space, Supernet& net,
                    Real threshold = Real(1e-6));

// ---- Sampling distribution optimization ----------------------------------

struct Policy {
  std::vector<Real> phi;  // one logit per slot; ties share the slot

  Real prob(std::size_t i) const;
  // E[c . w] under the policy.
  Real expected_cost(const CostVector& c) const;
};

Policy make_policy(const SearchSpace& space, Real init = 0);

struct Sample {
  ArchParams w;
  Real log_prob = 0;
};

// One uniform draw per slot, in slot order.
Sample sdo_sample(const Policy& policy, const std::shared_ptr<const ArchTemplate>& layout, Rng& rng);

Real log_prob(const Policy& policy, const ArchParams& w);
// d log pi(w) / d phi_i = w_i - sigmoid(phi_i).
std::vector<Real> score(const Policy& policy, const ArchParams& w);

// sum_w pi(w) * score(w) * L(w) over every binary w (at most 20 slots).
std::vector<Real> exact_policy_gradient(const Policy& policy,
                                        const std::shared_ptr<const ArchTemplate>& layout,
                                        const std::function<Real(const ArchParams&)>& total_loss);

// Samples w, trains theta on L_total(w) with Adam and moves phi by
// -policy_lr * nu * score(w) * L_total. Consumes rng for the sample only.
StepMetrics sdo_step(Policy& policy, Adam& theta_opt, const SearchSpace& space, const LossFn& loss,
                     const CostVector& c, const Hyperparams& hp, Rng& rng, ArchParams* sampled = nullptr);

// w_i = 1 iff phi_i >= 0.
ArchParams extract_ml(const Policy& policy, const std::shared_ptr<const ArchTemplate>& layout);

// ---- Grid search ---------------------------------------------------------

struct GridRow {
  Algorithm algorithm = Algorithm::DO;
  Real lambda = 0;
  Real nu = 0;
  double metric = 0;
  double cost = 0;
  double speedup = 1;
  std::string note;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::optional<std::size_t> best;
  double baseline_metric = 0;
  double quality_floor = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct GridSpec {
  std::vector<Algorithm> algorithms{Algorithm::DO, Algorithm::SDO};
  std::vector<Real> lambdas{Real(1e-2), Real(1e-3), Real(1e-4), Real(1e-5), Real(1e-6)};
  std::vector<Real> nus{Real(0.001), Real(0.01)};
  double quality_floor = 0.01;
};

// Runs every combination (DO once per lambda; nu does not apply to it) in
// a fixed order and picks the lowest-cost row whose metric drop from the
// baseline is within the floor.
GridResult grid_search(const GridSpec& spec, double baseline_metric,
                       const std::function<GridRow(Algorithm, Real lambda, Real nu)>& run);

std::string grid_csv(const GridResult& g);

}  // namespace tfnas
