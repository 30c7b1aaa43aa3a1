#include "tfnas/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < t.cols(); ++c)
      if (t(r, c) > t(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::vector<std::size_t> draw_rows(Rng& rng, std::size_t n, std::size_t batch) {
  std::vector<std::size_t> rows(batch);
  for (auto& r : rows) r = rng.below(n);
  return rows;
}

bool per_token(const Task& t) { return t.spec.output() == OutputKind::Token; }

// Builds L_orig for one batch; progress is in percent of training.
using BatchLoss = std::function<Var(const Supernet&, const ArchBinding&, const Batch&, Real progress, Rng*)>;

Var supervised_loss(const Supernet& net, const ArchBinding& arch, const Batch& b, std::size_t l,
                    Rng* drop) {
  return cross_entropy(net.forward(b.tokens, l, arch, drop), b.labels, b.weights);
}

struct LoopSetup {
  enum class Mode { Fixed, DO, SDO } mode = Mode::Fixed;
  const ArchParams* fixed = nullptr;
};

void finish(RunResult& r, const SearchSpace& space, const CostVector& c) {
  r.cost = cost_loss(r.selected, c, CostMode::Binary);
  auto sp = estimate_speedup(r.selected, c, init_arch(space, InitMode::Baseline));
  r.speedup = sp.predicted;
  r.speedup_infinite = sp.infinite;
}

RunResult run_loop(const SearchSpace& space, const Task& task, const ModelConfig& model_cfg,
                   const Hyperparams& hp, const CostVector& c, const MetricSink& sink,
                   const LoopSetup& setup, const BatchLoss& batch_loss) {
  hp.validate();
  check_compatible(model_cfg, task.spec);
  if (!(model_cfg.space == space.config()))
    throw ConfigError("model search space differs from the search space being trained");
  if (c.slot.size() != space.num_slots()) throw ConfigError("cost vector does not match search space");

  const Rng root(hp.seed);
  Rng init = root.derive("init");
  Rng data = root.derive("data");
  Rng arch_rng = root.derive("arch");
  Rng drop = root.derive("dropout");

  Supernet net(model_cfg, init);
  Adam opt(net.parameters(), hp.adam);
  RunResult result;
  result.algorithm = setup.mode == LoopSetup::Mode::DO    ? Algorithm::DO
                     : setup.mode == LoopSetup::Mode::SDO ? Algorithm::SDO
                                                          : Algorithm::Plain;

  DOState dos;
  Policy policy;
  if (setup.mode == LoopSetup::Mode::DO) dos = make_do_state(space, hp.w_init);
  if (setup.mode == LoopSetup::Mode::SDO) policy = make_policy(space, hp.phi_init);

  const bool tok = per_token(task);
  Rng* drop_ptr = model_cfg.dropout > 0 ? &drop : nullptr;

  auto current_arch = [&]() -> ArchParams {
    switch (setup.mode) {
      case LoopSetup::Mode::Fixed: return *setup.fixed;
      case LoopSetup::Mode::DO: return dos.values(space);
      case LoopSetup::Mode::SDO: return extract_ml(policy, space.layout());
    }
    return {};
  };

  for (std::size_t step = 0; step < hp.steps; ++step) {
    const auto rows = draw_rows(data, task.train.count, hp.batch);
    const Batch b = gather(task.train, rows, tok);
    const Real progress = Real(100) * static_cast<Real>(step + 1) / static_cast<Real>(hp.steps);
    LossFn loss = [&](const ArchBinding& a) { return batch_loss(net, a, b, progress, drop_ptr); };

    StepMetrics m;
    switch (setup.mode) {
      case LoopSetup::Mode::Fixed: {
        opt.zero_grad();
        Var lo = loss({&space, setup.fixed, nullptr});
        m.l_orig = lo->value.item();
        if (!std::isfinite(m.l_orig))
          throw NumericError("training diverged at step " + std::to_string(step));
        backward(lo);
        opt.step();
        m.cost_binary = m.l_cost = cost_loss(*setup.fixed, c, CostMode::Binary);
        m.l_total = m.l_orig + hp.lambda * m.l_cost;
        break;
      }
      case LoopSetup::Mode::DO: m = do_step(dos, opt, space, loss, c, hp); break;
      case LoopSetup::Mode::SDO: m = sdo_step(policy, opt, space, loss, c, hp, arch_rng); break;
    }

    MetricRecord rec{step + 1, m.l_orig, m.l_cost, m.l_total, m.cost_binary, std::nullopt};
    const bool last = step + 1 == hp.steps;
    if (last || (hp.eval_every && (step + 1) % hp.eval_every == 0)) {
      if (setup.mode == LoopSetup::Mode::DO) {
        rec.metric = evaluate(net, {&space, nullptr, &dos.w}, task.dev);
      } else {
        const ArchParams a = current_arch();
        rec.metric = evaluate(net, {&space, &a, nullptr}, task.dev);
      }
    }
    if (sink) sink(rec);
    result.history.push_back(rec);
  }

  switch (setup.mode) {
    case LoopSetup::Mode::Fixed:
      result.selected = *setup.fixed;
      result.metric = *result.history.back().metric;
      break;
    case LoopSetup::Mode::DO: {
      result.selected = canonicalize(space, do_prune(dos, space, net, hp.prune_threshold));
      result.metric = evaluate(net, {&space, &result.selected, nullptr}, task.dev);
      result.state.w = std::move(dos);
      break;
    }
    case LoopSetup::Mode::SDO:
      result.selected = canonicalize(space, extract_ml(policy, space.layout()));
      result.metric = evaluate(net, {&space, &result.selected, nullptr}, task.dev);
      result.state.policy = std::move(policy);
      break;
  }
  result.model.emplace(std::move(net));
  finish(result, space, c);
  return result;
}

}  // namespace

double evaluate(const Supernet& net, const ArchBinding& arch, const Dataset& data, std::size_t batch) {
  NoGradGuard no_grad;
  const bool tok = net.config().output == OutputKind::Token;
  double hit = 0, total = 0;
  for (std::size_t start = 0; start < data.count; start += batch) {
    std::vector<std::size_t> rows(std::min(batch, data.count - start));
    std::iota(rows.begin(), rows.end(), start);
    const Batch b = gather(data, rows, tok);
    const auto pred = argmax_rows(net.forward(b.tokens, data.seq_len, arch)->value);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double w = b.weights.empty() ? 1.0 : b.weights[i];
      total += w;
      hit += pred[i] == b.labels[i] ? w : 0.0;
    }
  }
  return total > 0 ? hit / total : 0.0;
}

RunResult train_fixed(const SearchSpace& space, const Task& task, const ModelConfig& model,
                      const ArchParams& arch, const Hyperparams& hp, const CostVector& c,
                      const MetricSink& sink) {
  if (arch.size() != space.num_slots())
    throw ArchitectureError("architecture does not match the search space");
  LoopSetup setup{LoopSetup::Mode::Fixed, &arch};
  const std::size_t l = task.spec.seq_len;
  return run_loop(space, task, model, hp, c, sink, setup,
                  [l](const Supernet& n, const ArchBinding& a, const Batch& b, Real, Rng* d) {
                    return supervised_loss(n, a, b, l, d);
                  });
}

RunResult train_search(const SearchSpace& space, const Task& task, const ModelConfig& model,
                       const Hyperparams& hp, const CostVector& c, const MetricSink& sink) {
  if (hp.algorithm == Algorithm::Plain) {
    const auto base = init_arch(space, InitMode::Baseline);
    return train_fixed(space, task, model, base, hp, c, sink);
  }
  LoopSetup setup;
  setup.mode = hp.algorithm == Algorithm::DO ? LoopSetup::Mode::DO : LoopSetup::Mode::SDO;
  const std::size_t l = task.spec.seq_len;
  return run_loop(space, task, model, hp, c, sink, setup,
                  [l](const Supernet& n, const ArchBinding& a, const Batch& b, Real, Rng* d) {
                    return supervised_loss(n, a, b, l, d);
                  });
}

RunResult retrain(const SearchSpace& space, const ArchParams& selected, const Task& task,
                  const ModelConfig& model, const Hyperparams& hp, const CostVector& c,
                  const MetricSink& sink) {
  validate_architecture(space, selected);
  return train_fixed(space, task, model, selected, hp, c, sink);
}

Real ramp_weight(Real progress_pct, Real p, Real q) {
  if (!(p >= 0 && p < q && q <= 100)) throw ConfigError("ramp needs 0 <= p < q <= 100");
  if (!(progress_pct >= 0 && progress_pct <= 100)) throw ConfigError("progress must be in [0, 100]");
  if (progress_pct <= p) return 0;
  if (progress_pct >= q) return 1;
  return (progress_pct - p) / (q - p);
}

void DistillConfig::validate() const {
  if (!(p >= 0 && p < q && q <= 100)) throw ConfigError("distillation ramp needs 0 <= p < q <= 100");
}

namespace {

std::vector<int> silver_labels(const Teacher& t, const Batch& b, std::size_t l) {
  NoGradGuard no_grad;
  return argmax_rows(t.net->forward(b.tokens, l, {t.space, t.arch, nullptr})->value);
}

Var distill_loss(const Supernet& student, const ArchBinding& arch, const Teacher& teacher,
                 const Batch& b, std::size_t l, Real progress, const DistillConfig& cfg, Rng* drop) {
  const Real r = ramp_weight(progress, cfg.p, cfg.q);
  Var logits = student.forward(b.tokens, l, arch, drop);
  Var silver = cross_entropy(logits, silver_labels(teacher, b, l), b.weights);
  Var gold = cross_entropy(logits, b.labels, b.weights);
  return add(scale(silver, Real(1) - r), scale(gold, r));
}

}  // namespace

DistillTerms distill_terms(const Supernet& student, const ArchBinding& arch, const Teacher& teacher,
                           const Batch& batch, std::size_t seq_len, Real progress_pct,
                           const DistillConfig& cfg) {
  NoGradGuard no_grad;
  DistillTerms t;
  t.ramp = ramp_weight(progress_pct, cfg.p, cfg.q);
  Var logits = student.forward(batch.tokens, seq_len, arch);
  t.silver = cross_entropy(logits, silver_labels(teacher, batch, seq_len), batch.weights)->value.item();
  t.gold = cross_entropy(logits, batch.labels, batch.weights)->value.item();
  t.total = distill_loss(student, arch, teacher, batch, seq_len, progress_pct, cfg, nullptr)->value.item();
  return t;
}

RunResult distill(const Teacher& teacher, const SearchSpace& student_space, const Task& task,
                  const ModelConfig& student, const DistillConfig& cfg, const Hyperparams& hp,
                  const CostVector& c, const MetricSink& sink) {
  cfg.validate();
  if (!teacher.net || !teacher.space || !teacher.arch)
    throw ConfigError("distillation needs a trained teacher and its architecture");
  try {
    check_compatible(teacher.net->config(), task.spec);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("teacher does not fit the task: ") + e.what());
  }
  ModelConfig s = student;
  s.dropout = 0;
  LoopSetup setup;
  setup.mode = hp.algorithm == Algorithm::DO    ? LoopSetup::Mode::DO
               : hp.algorithm == Algorithm::SDO ? LoopSetup::Mode::SDO
                                                : LoopSetup::Mode::Fixed;
  const ArchParams base = init_arch(student_space, InitMode::Baseline);
  if (setup.mode == LoopSetup::Mode::Fixed) setup.fixed = &base;
  const std::size_t l = task.spec.seq_len;
  return run_loop(student_space, task, s, hp, c, sink, setup,
                  [&, l](const Supernet& n, const ArchBinding& a, const Batch& b, Real progress, Rng*) {
                    return distill_loss(n, a, teacher, b, l, progress, cfg, nullptr);
                  });
}

}  // namespace tfnas
