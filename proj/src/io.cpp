#include "tfnas/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

void only_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + what);
}

template <class T>
void get_opt(const Json& j, const char* key, T& out, const std::string& what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + "." + key + ": " + e.what());
  }
}

void check_schema(const Json& j, const std::string& what) {
  auto it = j.find("schema_version");
  if (it == j.end()) return;
  if (!it->is_number_integer() || it->get<int>() != kSchemaVersion)
    throw ConfigError(what + ": unsupported schema_version " + it->dump());
}

Json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()},
          {"data", std::vector<Real>(t.data().begin(), t.data().end())}};
}

}  // namespace

std::string to_string(OutputKind k) { return k == OutputKind::Sequence ? "sequence" : "token"; }

OutputKind parse_output_kind(const std::string& name) {
  if (name == "sequence") return OutputKind::Sequence;
  if (name == "token") return OutputKind::Token;
  throw ConfigError("unknown output kind '" + name + "'");
}

// ---- configs ---------------------------------------------------------------

void to_json(Json& j, const SearchSpaceConfig& c) {
  j = {{"layers", c.layers},
       {"hidden", c.hidden},
       {"heads", c.heads},
       {"ff_dim", c.ff_dim},
       {"key_dim", c.key_dim},
       {"value_dim", c.value_dim},
       {"m_ff", c.m_ff},
       {"m_sim", c.m_sim},
       {"m_value", c.m_value},
       {"allow_vertical_attention", c.allow_vertical_attention},
       {"search_ln_mean", c.search_ln_mean},
       {"tie_value_dims", c.tie_value_dims},
       {"activation", to_string(c.activation)}};
}

void from_json(const Json& j, SearchSpaceConfig& c) {
  const std::string w = "space";
  only_keys(j, {"layers", "hidden", "heads", "ff_dim", "key_dim", "value_dim", "m_ff", "m_sim", "m_value",
                "allow_vertical_attention", "search_ln_mean", "tie_value_dims", "activation"},
            w);
  get_opt(j, "layers", c.layers, w);
  get_opt(j, "hidden", c.hidden, w);
  get_opt(j, "heads", c.heads, w);
  get_opt(j, "ff_dim", c.ff_dim, w);
  get_opt(j, "key_dim", c.key_dim, w);
  get_opt(j, "value_dim", c.value_dim, w);
  get_opt(j, "m_ff", c.m_ff, w);
  get_opt(j, "m_sim", c.m_sim, w);
  get_opt(j, "m_value", c.m_value, w);
  get_opt(j, "allow_vertical_attention", c.allow_vertical_attention, w);
  get_opt(j, "search_ln_mean", c.search_ln_mean, w);
  get_opt(j, "tie_value_dims", c.tie_value_dims, w);
  std::string act = to_string(c.activation);
  get_opt(j, "activation", act, w);
  c.activation = parse_activation(act);
}

void to_json(Json& j, const ModelConfig& c) {
  j = {{"space", c.space},     {"vocab", c.vocab},       {"max_len", c.max_len},
       {"num_classes", c.num_classes}, {"output", to_string(c.output)},
       {"dropout", c.dropout}, {"init_scale", c.init_scale}};
}

void from_json(const Json& j, ModelConfig& c) {
  const std::string w = "model";
  only_keys(j, {"space", "vocab", "max_len", "num_classes", "output", "dropout", "init_scale"}, w);
  get_opt(j, "space", c.space, w);
  get_opt(j, "vocab", c.vocab, w);
  get_opt(j, "max_len", c.max_len, w);
  get_opt(j, "num_classes", c.num_classes, w);
  std::string out = to_string(c.output);
  get_opt(j, "output", out, w);
  c.output = parse_output_kind(out);
  get_opt(j, "dropout", c.dropout, w);
  get_opt(j, "init_scale", c.init_scale, w);
}

void to_json(Json& j, const TaskSpec& t) {
  j = {{"kind", to_string(t.kind)},   {"vocab", t.vocab},
       {"seq_len", t.seq_len},        {"seed", t.seed},
       {"train_size", t.train_size},  {"dev_size", t.dev_size},
       {"label_noise", t.label_noise}, {"motif_len", t.motif_len}};
}

void from_json(const Json& j, TaskSpec& t) {
  const std::string w = "task";
  only_keys(j, {"kind", "vocab", "seq_len", "seed", "train_size", "dev_size", "label_noise", "motif_len"}, w);
  std::string kind = to_string(t.kind);
  get_opt(j, "kind", kind, w);
  t.kind = parse_task_kind(kind);
  get_opt(j, "vocab", t.vocab, w);
  get_opt(j, "seq_len", t.seq_len, w);
  get_opt(j, "seed", t.seed, w);
  get_opt(j, "train_size", t.train_size, w);
  get_opt(j, "dev_size", t.dev_size, w);
  get_opt(j, "label_noise", t.label_noise, w);
  get_opt(j, "motif_len", t.motif_len, w);
}

void to_json(Json& j, const Hyperparams& h) {
  j = {{"algorithm", to_string(h.algorithm)},
       {"lambda", h.lambda},
       {"nu", h.nu},
       {"prune_threshold", h.prune_threshold},
       {"adam", {{"lr", h.adam.lr}, {"beta1", h.adam.beta1}, {"beta2", h.adam.beta2}, {"eps", h.adam.eps}}},
       {"arch_lr", h.arch_lr},
       {"policy_lr", h.policy_lr},
       {"w_init", h.w_init},
       {"phi_init", h.phi_init},
       {"steps", h.steps},
       {"batch", h.batch},
       {"eval_every", h.eval_every},
       {"seed", h.seed}};
}

void from_json(const Json& j, Hyperparams& h) {
  const std::string w = "hyperparams";
  only_keys(j, {"algorithm", "lambda", "nu", "prune_threshold", "adam", "arch_lr", "policy_lr", "w_init",
                "phi_init", "steps", "batch", "eval_every", "seed"},
            w);
  // The algorithm picks the defaults; explicit keys override them.
  if (auto it = j.find("algorithm"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("hyperparams.algorithm must be a string");
    h = Hyperparams::defaults_for(parse_algorithm(it->get<std::string>()));
  }
  get_opt(j, "lambda", h.lambda, w);
  get_opt(j, "nu", h.nu, w);
  get_opt(j, "prune_threshold", h.prune_threshold, w);
  if (auto it = j.find("adam"); it != j.end()) {
    only_keys(*it, {"lr", "beta1", "beta2", "eps"}, "hyperparams.adam");
    get_opt(*it, "lr", h.adam.lr, w + ".adam");
    get_opt(*it, "beta1", h.adam.beta1, w + ".adam");
    get_opt(*it, "beta2", h.adam.beta2, w + ".adam");
    get_opt(*it, "eps", h.adam.eps, w + ".adam");
  }
  get_opt(j, "arch_lr", h.arch_lr, w);
  get_opt(j, "policy_lr", h.policy_lr, w);
  get_opt(j, "w_init", h.w_init, w);
  get_opt(j, "phi_init", h.phi_init, w);
  get_opt(j, "steps", h.steps, w);
  get_opt(j, "batch", h.batch, w);
  get_opt(j, "eval_every", h.eval_every, w);
  get_opt(j, "seed", h.seed, w);
}

void to_json(Json& j, const GridSpec& g) {
  std::vector<std::string> algos;
  for (auto a : g.algorithms) algos.push_back(to_string(a));
  j = {{"algorithms", algos}, {"lambdas", g.lambdas}, {"nus", g.nus}, {"quality_floor", g.quality_floor}};
}

void from_json(const Json& j, GridSpec& g) {
  const std::string w = "grid";
  only_keys(j, {"algorithms", "lambdas", "nus", "quality_floor"}, w);
  if (auto it = j.find("algorithms"); it != j.end()) {
    std::vector<std::string> names;
    get_opt(j, "algorithms", names, w);
    g.algorithms.clear();
    for (const auto& n : names) g.algorithms.push_back(parse_algorithm(n));
  }
  get_opt(j, "lambdas", g.lambdas, w);
  get_opt(j, "nus", g.nus, w);
  get_opt(j, "quality_floor", g.quality_floor, w);
}

void to_json(Json& j, const DistillConfig& d) { j = {{"p", d.p}, {"q", d.q}, {"dropout_removed", true}}; }

void from_json(const Json& j, DistillConfig& d) {
  only_keys(j, {"p", "q", "dropout_removed"}, "distill");
  get_opt(j, "p", d.p, "distill");
  get_opt(j, "q", d.q, "distill");
  if (j.contains("dropout_removed") && j["dropout_removed"] != true)
    throw ConfigError("distill.dropout_removed cannot be turned off");
}

ModelConfig RunConfig::model() const {
  ModelConfig m = model_config_for(task, space);
  m.dropout = dropout;
  m.init_scale = init_scale;
  return m;
}

void RunConfig::validate() const {
  space.validate();
  task.validate();
  hp.validate();
  distill.validate();
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  if (!(init_scale > 0)) throw ConfigError("init_scale must be > 0");
  if (!(grid.quality_floor >= 0)) throw ConfigError("grid.quality_floor must be >= 0");
}

void to_json(Json& j, const RunConfig& r) {
  j = {{"schema_version", kSchemaVersion},
       {"space", r.space},
       {"task", r.task},
       {"dropout", r.dropout},
       {"init_scale", r.init_scale},
       {"hyperparams", r.hp},
       {"cost_profile", r.cost_profile},
       {"grid", r.grid},
       {"distill", r.distill}};
}

void from_json(const Json& j, RunConfig& r) {
  only_keys(j, {"schema_version", "space", "task", "dropout", "init_scale", "hyperparams", "cost_profile",
                "grid", "distill"},
            "config");
  check_schema(j, "config");
  get_opt(j, "space", r.space, "config");
  get_opt(j, "task", r.task, "config");
  get_opt(j, "dropout", r.dropout, "config");
  get_opt(j, "init_scale", r.init_scale, "config");
  get_opt(j, "hyperparams", r.hp, "config");
  get_opt(j, "cost_profile", r.cost_profile, "config");
  get_opt(j, "grid", r.grid, "config");
  get_opt(j, "distill", r.distill, "config");
}

// ---- cost profile ------------------------------------------------------------

void to_json(Json& j, const CostProfile& p) {
  Json ms = Json::array();
  for (const auto& m : p.measurements)
    ms.push_back({{"category", to_string(m.category)}, {"length", m.length}, {"percent", m.percent},
                  {"seconds", m.seconds}});
  Json agg = Json::object();
  for (const auto& [c, v] : p.aggregated) agg[to_string(c)] = v;
  j = {{"schema_version", kCostProfileSchema},
       {"id", p.id},
       {"machine", p.machine},
       {"reps", p.reps},
       {"warmup", p.warmup},
       {"batch", p.batch},
       {"lengths", p.lengths},
       {"measurements", ms},
       {"aggregated", agg},
       {"warnings", p.warnings},
       {"seed", p.seed},
       {"config_hash", p.config_hash}};
}

void from_json(const Json& j, CostProfile& p) {
  only_keys(j, {"schema_version", "id", "machine", "reps", "warmup", "batch", "lengths", "measurements",
                "aggregated", "warnings", "seed", "config_hash"},
            "cost profile");
  check_schema(j, "cost profile");
  get_opt(j, "id", p.id, "profile");
  get_opt(j, "machine", p.machine, "profile");
  get_opt(j, "reps", p.reps, "profile");
  get_opt(j, "warmup", p.warmup, "profile");
  get_opt(j, "batch", p.batch, "profile");
  get_opt(j, "lengths", p.lengths, "profile");
  get_opt(j, "warnings", p.warnings, "profile");
  get_opt(j, "seed", p.seed, "profile");
  get_opt(j, "config_hash", p.config_hash, "profile");
  p.measurements.clear();
  if (!j.contains("measurements") || !j["measurements"].is_array())
    throw ConfigError("cost profile needs a measurements array");
  for (const auto& m : j["measurements"]) {
    only_keys(m, {"category", "length", "percent", "seconds"}, "measurement");
    Measurement x;
    std::string cat;
    get_opt(m, "category", cat, "measurement");
    x.category = parse_cost_category(cat);
    get_opt(m, "length", x.length, "measurement");
    get_opt(m, "percent", x.percent, "measurement");
    get_opt(m, "seconds", x.seconds, "measurement");
    p.measurements.push_back(x);
  }
  // Recomputed rather than trusted.
  p.aggregated = aggregate(p.measurements);
}

// ---- files -----------------------------------------------------------------

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const std::string& path) { return parse_json(read_text_file(path), path); }

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

RunConfig load_run_config(const std::string& path) {
  RunConfig r;
  try {
    r = read_json_file(path).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  r.validate();
  return r;
}

std::string config_hash(const RunConfig& r) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(Json(r).dump())));
  return buf;
}

CostProfile resolve_profile(const std::string& name) {
  if (name == "table1") return table1_profile();
  if (name == "table4") return table4_profile();
  try {
    return read_json_file(name).get<CostProfile>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

// ---- architectures, metrics, checkpoints -----------------------------------

Json arch_to_json(const ArchParams& a) {
  Json slots = Json::array();
  for (std::size_t i = 0; i < a.size(); ++i)
    slots.push_back({{"id", a.layout->slots()[i].id}, {"value", a[i]}});
  return {{"schema_version", kSchemaVersion}, {"slots", slots}};
}

ArchParams arch_from_json(const Json& j, const SearchSpace& space) {
  only_keys(j, {"schema_version", "slots"}, "architecture");
  check_schema(j, "architecture");
  if (!j.contains("slots") || !j["slots"].is_array()) throw ConfigError("architecture needs a slots array");
  const auto& slots = j["slots"];
  if (slots.size() != space.num_slots())
    throw ConfigError("architecture has " + std::to_string(slots.size()) + " slots, search space has " +
                      std::to_string(space.num_slots()));
  ArchParams a{space.layout(), std::vector<Real>(space.num_slots())};
  std::vector<bool> seen(space.num_slots(), false);
  for (const auto& s : slots) {
    only_keys(s, {"id", "value"}, "architecture slot");
    std::string id;
    get_opt(s, "id", id, "slot");
    auto idx = space.layout()->find_slot(id);
    if (!idx) throw ConfigError("architecture slot '" + id + "' is not in the search space");
    if (seen[*idx]) throw ConfigError("architecture slot '" + id + "' given twice");
    seen[*idx] = true;
    if (!s.contains("value") || !s["value"].is_number())
      throw ConfigError("architecture slot '" + id + "' needs a numeric value");
    a[*idx] = s["value"].get<Real>();
  }
  return a;
}

Json metric_to_json(const MetricRecord& r) {
  Json j = {{"schema_version", kSchemaVersion},
            {"step", r.step},
            {"L_orig", r.l_orig},
            {"L_cost", r.l_cost},
            {"L_total", r.l_total},
            {"cost_binary", r.cost_binary},
            {"metric", nullptr}};
  if (r.metric) j["metric"] = *r.metric;
  return j;
}

Json checkpoint_to_json(const Supernet& net, const ArchParams& arch, const Json& provenance) {
  Json params = Json::object();
  for (const auto& [name, v] : net.named_parameters()) params[name] = tensor_to_json(v->value);
  return {{"schema_version", kSchemaVersion},
          {"model", net.config()},
          {"arch", arch_to_json(arch)},
          {"parameters", params},
          {"provenance", provenance}};
}

LoadedCheckpoint checkpoint_from_json(const Json& j) {
  only_keys(j, {"schema_version", "model", "arch", "parameters", "provenance"}, "checkpoint");
  check_schema(j, "checkpoint");
  for (const char* k : {"model", "arch", "parameters"})
    if (!j.contains(k)) throw ConfigError(std::string("checkpoint lacks '") + k + "'");
  LoadedCheckpoint c;
  ModelConfig m;
  try {
    m = j["model"].get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint model: ") + e.what());
  }
  c.space = std::make_unique<SearchSpace>(m.space);
  Rng unused(0);
  c.net = std::make_unique<Supernet>(m, unused);
  const auto& params = j["parameters"];
  auto named = c.net->named_parameters();
  if (params.size() != named.size()) throw ConfigError("checkpoint parameter count does not match model");
  for (auto& [name, v] : named) {
    if (!params.contains(name)) throw ConfigError("checkpoint lacks parameter '" + name + "'");
    const auto& t = params[name];
    std::vector<Real> data;
    std::size_t rows = 0, cols = 0;
    get_opt(t, "rows", rows, name);
    get_opt(t, "cols", cols, name);
    get_opt(t, "data", data, name);
    if (rows != v->value.rows() || cols != v->value.cols() || data.size() != rows * cols)
      throw ConfigError("checkpoint parameter '" + name + "' has the wrong shape");
    std::copy(data.begin(), data.end(), v->value.data().begin());
  }
  c.arch = arch_from_json(j["arch"], *c.space);
  if (j.contains("provenance")) c.provenance = j["provenance"];
  return c;
}

}  // namespace tfnas
