#include "tfnas/tasks.hpp"

#include <unordered_set>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

std::uint64_t hash_seq(std::span<const int> s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int t : s) {
    std::uint64_t st = h ^ static_cast<std::uint64_t>(t + 1);
    h = splitmix64(st);
  }
  return h;
}

struct Example {
  std::vector<int> tokens;
  std::vector<int> labels;
  std::vector<Real> weights;
};

Example classification(const TaskSpec& s, Rng& rng) {
  Example e;
  const int filler_lo = 2;
  const int filler_n = static_cast<int>(s.vocab) - 2;
  e.tokens.resize(s.seq_len);
  for (auto& t : e.tokens) t = filler_lo + static_cast<int>(rng.below(filler_n));
  const bool a = rng.bernoulli(0.5), b = rng.bernoulli(0.5);
  auto plant = [&](int token) {
    const std::size_t n = 1 + rng.below(2);
    for (std::size_t i = 0; i < n; ++i) e.tokens[rng.below(s.seq_len)] = token;
  };
  if (a) plant(0);
  if (b) plant(1);
  // A later plant may overwrite an earlier one; label what is really there.
  bool has0 = false, has1 = false;
  for (int t : e.tokens) {
    has0 = has0 || t == 0;
    has1 = has1 || t == 1;
  }
  e.labels = {has0 != has1 ? 1 : 0};
  return e;
}

Example masked(const TaskSpec& s, Rng& rng) {
  Example e;
  const int mask = static_cast<int>(s.vocab) - 1;
  std::vector<int> motif(s.motif_len);
  for (auto& t : motif) t = static_cast<int>(rng.below(s.vocab - 1));
  const std::size_t offset = rng.below(s.motif_len);
  e.tokens.resize(s.seq_len);
  for (std::size_t i = 0; i < s.seq_len; ++i) e.tokens[i] = motif[(i + offset) % s.motif_len];
  const std::size_t pos = rng.below(s.seq_len);
  e.labels = e.tokens;
  e.weights.assign(s.seq_len, 0);
  e.weights[pos] = 1;
  e.tokens[pos] = mask;
  return e;
}

Example tagging(const TaskSpec& s, Rng& rng) {
  Example e;
  e.tokens.resize(s.seq_len);
  for (auto& t : e.tokens) t = static_cast<int>(rng.below(s.vocab));
  std::vector<bool> seen(s.vocab, false);
  for (int t : e.tokens) {
    e.labels.push_back(seen[t] ? 1 : 0);
    seen[t] = true;
  }
  e.weights.assign(s.seq_len, 1);
  return e;
}

void append(Dataset& d, const Example& e) {
  d.tokens.insert(d.tokens.end(), e.tokens.begin(), e.tokens.end());
  d.labels.insert(d.labels.end(), e.labels.begin(), e.labels.end());
  d.weights.insert(d.weights.end(), e.weights.begin(), e.weights.end());
  ++d.count;
}

}  // namespace

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Classification: return "classification";
    case TaskKind::MaskedToken: return "masked_token";
    case TaskKind::Tagging: return "tagging";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  for (auto k : {TaskKind::Classification, TaskKind::MaskedToken, TaskKind::Tagging})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown task kind '" + name + "'");
}

std::size_t TaskSpec::num_classes() const { return kind == TaskKind::MaskedToken ? vocab : 2; }

OutputKind TaskSpec::output() const {
  return kind == TaskKind::Classification ? OutputKind::Sequence : OutputKind::Token;
}

void TaskSpec::validate() const {
  if (vocab < 4) throw ConfigError("task vocab must be at least 4");
  if (seq_len < 2) throw ConfigError("task sequence length must be at least 2");
  if (train_size == 0 || dev_size == 0) throw ConfigError("task train and dev sizes must be positive");
  if (!(label_noise >= 0 && label_noise < 0.5)) throw ConfigError("label noise must be in [0, 0.5)");
  if (kind == TaskKind::MaskedToken && (motif_len < 2 || motif_len > seq_len))
    throw ConfigError("motif length must be in [2, seq_len]");
}

Task make_task(const TaskSpec& spec) {
  spec.validate();
  Task t{spec, {}, {}};
  t.train.seq_len = t.dev.seq_len = spec.seq_len;
  Rng root(spec.seed);
  Rng gen = root.derive("task/" + to_string(spec.kind));
  Rng noise = root.derive("task/noise");
  auto draw = [&] {
    switch (spec.kind) {
      case TaskKind::Classification: return classification(spec, gen);
      case TaskKind::MaskedToken: return masked(spec, gen);
      case TaskKind::Tagging: return tagging(spec, gen);
    }
    return Example{};
  };

  std::unordered_set<std::uint64_t> train_seen;
  for (std::size_t i = 0; i < spec.train_size; ++i) {
    Example e = draw();
    train_seen.insert(hash_seq(e.tokens));
    if (spec.label_noise > 0 && spec.kind == TaskKind::Classification &&
        noise.bernoulli(spec.label_noise))
      e.labels[0] = 1 - e.labels[0];
    append(t.train, e);
  }
  const std::size_t max_tries = 50 * spec.dev_size + 1000;
  for (std::size_t tries = 0; t.dev.count < spec.dev_size; ++tries) {
    if (tries >= max_tries)
      throw ConfigError("task space too small to draw a dev set disjoint from train");
    Example e = draw();
    if (train_seen.count(hash_seq(e.tokens))) continue;
    append(t.dev, e);
  }
  return t;
}

Batch gather(const Dataset& d, std::span<const std::size_t> rows, bool per_token) {
  Batch b;
  const std::size_t l = d.seq_len;
  const std::size_t per = per_token ? l : 1;
  for (auto r : rows) {
    if (r >= d.count) throw ShapeError("gather: row " + std::to_string(r) + " out of range");
    b.tokens.insert(b.tokens.end(), d.tokens.begin() + r * l, d.tokens.begin() + (r + 1) * l);
    b.labels.insert(b.labels.end(), d.labels.begin() + r * per, d.labels.begin() + (r + 1) * per);
    if (!d.weights.empty())
      b.weights.insert(b.weights.end(), d.weights.begin() + r * per, d.weights.begin() + (r + 1) * per);
  }
  return b;
}

ModelConfig model_config_for(const TaskSpec& task, const SearchSpaceConfig& space) {
  ModelConfig m;
  m.space = space;
  m.vocab = task.vocab;
  m.max_len = task.seq_len;
  m.num_classes = task.num_classes();
  m.output = task.output();
  return m;
}

void check_compatible(const ModelConfig& model, const TaskSpec& task) {
  if (model.vocab < task.vocab)
    throw ConfigError("model vocab " + std::to_string(model.vocab) + " smaller than task vocab " +
                      std::to_string(task.vocab));
  if (model.max_len < task.seq_len) throw ConfigError("model max_len shorter than task sequences");
  if (model.num_classes != task.num_classes())
    throw ConfigError("model has " + std::to_string(model.num_classes) + " classes, task needs " +
                      std::to_string(task.num_classes()));
  if (model.output != task.output()) throw ConfigError("model output kind does not match task");
}

}  // namespace tfnas
