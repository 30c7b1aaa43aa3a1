// tfnas: command-line front end for profiling, searching and exporting.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "tfnas/errors.hpp"
#include "tfnas/export.hpp"
#include "tfnas/io.hpp"
#include "tfnas/properties.hpp"

namespace fs = std::filesystem;
using namespace tfnas;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitPropertyFailed = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
};

struct SearchOpts {
  std::string algo;
  std::optional<double> lambda, nu;
  std::optional<std::size_t> steps;
  std::string out_dir;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "run config JSON (defaults when omitted)");
  sub->add_option("-s,--seed", c.seed, "master seed; overrides hyperparams.seed");
  sub->add_option("-p,--profile", c.profile, "cost profile: table1, table4 or a profile JSON file");
}

void add_search_opts(CLI::App* sub, SearchOpts& o, bool algo = true) {
  if (algo)
    sub->add_option("-a,--algo", o.algo, "plain, do or sdo; switching resets lambda and nu to that algorithm's defaults")
        ->check(CLI::IsMember({"plain", "do", "sdo"}));
  sub->add_option("--lambda", o.lambda, "cost weight");
  sub->add_option("--nu", o.nu, "policy gradient scale (sdo)");
  sub->add_option("--steps", o.steps, "training steps");
  sub->add_option("-o,--out-dir", o.out_dir, "output directory")->required();
}

RunConfig load_config(const Common& c) {
  RunConfig r = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) r.hp.seed = *c.seed;
  if (!c.profile.empty()) r.cost_profile = c.profile;
  r.validate();
  return r;
}

void apply(RunConfig& r, const SearchOpts& o) {
  if (!o.algo.empty()) {
    const Algorithm a = parse_algorithm(o.algo);
    if (a != r.hp.algorithm) {
      const auto d = Hyperparams::defaults_for(a);
      r.hp.algorithm = a;
      r.hp.lambda = d.lambda;
      r.hp.nu = d.nu;
    }
  }
  if (o.lambda) r.hp.lambda = static_cast<Real>(*o.lambda);
  if (o.nu) r.hp.nu = static_cast<Real>(*o.nu);
  if (o.steps) r.hp.steps = *o.steps;
  r.validate();
}

void write_json(const fs::path& p, const Json& j) { write_text_file(p.string(), j.dump(2) + "\n"); }

// Everything one training pipeline needs, built from the effective config.
struct Pipeline {
  RunConfig cfg;
  std::string hash;
  SearchSpace space;
  Task task;
  ModelConfig model;
  CostProfile profile;
  CostVector costs;

  explicit Pipeline(RunConfig r)
      : cfg(std::move(r)),
        hash(config_hash(cfg)),
        space(cfg.space),
        task(make_task(cfg.task)),
        model(cfg.model()),
        profile(resolve_profile(cfg.cost_profile)),
        costs(assign_costs(space, profile)) {}

  Provenance provenance() const {
    const bool sdo = cfg.hp.algorithm == Algorithm::SDO;
    const bool plain = cfg.hp.algorithm == Algorithm::Plain;
    return {to_string(cfg.hp.algorithm), plain ? Real(0) : cfg.hp.lambda, sdo ? cfg.hp.nu : Real(0),
            cfg.hp.seed, profile.id, hash};
  }

  Json provenance_json(const std::string& command) const {
    const auto p = provenance();
    return {{"command", command},     {"algorithm", p.algorithm}, {"lambda", p.lambda},
            {"nu", p.nu},             {"seed", p.seed},           {"profile_id", p.profile_id},
            {"config_hash", p.config_hash}, {"config", cfg}};
  }
};

// One JSON object per line, each stamped with the seed and config hash.
class MetricsFile {
 public:
  MetricsFile(const fs::path& p, std::uint64_t seed, std::string hash)
      : out_(p), seed_(seed), hash_(std::move(hash)) {
    if (!out_) throw std::runtime_error("cannot write " + p.string());
  }
  MetricSink sink() {
    return [this](const MetricRecord& r) {
      Json j = metric_to_json(r);
      j["seed"] = seed_;
      j["config_hash"] = hash_;
      out_ << j.dump() << "\n";
    };
  }

 private:
  std::ofstream out_;
  std::uint64_t seed_;
  std::string hash_;
};

// Writes the architecture, its diagram, the trained weights and a summary.
void write_outputs(const fs::path& dir, const Pipeline& pl, const RunResult& r, const std::string& command) {
  const auto desc = extract_description(r.selected, pl.space, pl.costs, pl.provenance());
  write_json(dir / "arch.json", desc);
  write_text_file((dir / "arch.dot").string(), export_dot(desc));
  write_json(dir / "checkpoint.json", checkpoint_to_json(*r.model, r.selected, pl.provenance_json(command)));
  Json summary = {{"schema_version", kSchemaVersion},
                  {"command", command},
                  {"algorithm", to_string(r.algorithm)},
                  {"metric", r.metric},
                  {"cost", r.cost},
                  {"baseline_cost", desc.baseline_cost},
                  {"speedup", r.speedup_infinite ? Json(nullptr) : Json(r.speedup)},
                  {"speedup_infinite", r.speedup_infinite},
                  {"steps", pl.cfg.hp.steps},
                  {"seed", pl.cfg.hp.seed},
                  {"config_hash", pl.hash}};
  write_json(dir / "result.json", summary);
  std::cout << command << ": metric " << r.metric << ", cost " << r.cost << " of " << desc.baseline_cost
            << ", speedup " << (r.speedup_infinite ? std::string("inf") : std::to_string(r.speedup))
            << "\n  wrote " << (dir / "arch.json").string() << ", arch.dot, checkpoint.json, metrics.jsonl\n";
}

// An architecture file is a description, a checkpoint or a bare slot list
// (the latter read against the config's search space).
struct LoadedArch {
  std::unique_ptr<SearchSpace> space;
  ArchParams arch;
  std::optional<ArchitectureDescription> description;
  std::optional<LoadedCheckpoint> checkpoint;
};

LoadedArch load_arch(const std::string& path, const SearchSpaceConfig& fallback) {
  const Json j = read_json_file(path);
  LoadedArch out;
  if (j.contains("blocks")) {
    auto d = j.get<ArchitectureDescription>();
    out.space = std::make_unique<SearchSpace>(d.space);
    out.arch = description_arch(d, *out.space);
    out.description = std::move(d);
  } else if (j.contains("parameters")) {
    auto c = checkpoint_from_json(j);
    out.space = std::make_unique<SearchSpace>(c.space->config());
    out.arch = arch_from_json(arch_to_json(c.arch), *out.space);
    out.checkpoint = std::move(c);
  } else {
    out.space = std::make_unique<SearchSpace>(fallback);
    out.arch = arch_from_json(j, *out.space);
  }
  return out;
}

int cmd_profile(const Common& c, const std::string& json_out, const std::string& csv_out,
                const std::vector<std::size_t>& lengths, std::size_t reps, std::size_t warmup,
                std::size_t batch) {
  const RunConfig r = load_config(c);
  ProfileOptions o;
  o.space = r.space;
  o.lengths = lengths;
  o.reps = reps;
  o.warmup = warmup;
  o.batch = batch;
  Rng rng = Rng(r.hp.seed).derive("profile");
  CostProfile p = profile(o, rng);
  p.seed = r.hp.seed;
  p.config_hash = config_hash(r);
  const Json j = p;
  if (json_out.empty() && csv_out.empty()) std::cout << j.dump(2) << "\n";
  if (!json_out.empty()) write_json(json_out, j);
  if (!csv_out.empty()) write_text_file(csv_out, profile_csv(p));
  for (const auto& w : p.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_search(const Common& c, const SearchOpts& o) {
  RunConfig r = load_config(c);
  apply(r, o);
  const Pipeline pl(r);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  MetricsFile mf(dir / "metrics.jsonl", r.hp.seed, pl.hash);
  const auto res = train_search(pl.space, pl.task, pl.model, r.hp, pl.costs, mf.sink());
  write_outputs(dir, pl, res, "search");
  return 0;
}

int cmd_grid(const Common& c, const std::string& out, std::optional<std::size_t> steps) {
  RunConfig r = load_config(c);
  if (steps) r.hp.steps = *steps;
  r.validate();
  const Pipeline pl(r);
  const auto base = init_arch(pl.space, InitMode::Baseline);
  auto plain = r.hp;
  plain.algorithm = Algorithm::Plain;
  const double baseline_metric = train_fixed(pl.space, pl.task, pl.model, base, plain, pl.costs).metric;
  std::cerr << "baseline metric " << baseline_metric << "\n";
  // Every combination starts from the same seed: same init, same data order.
  auto g = grid_search(r.grid, baseline_metric, [&](Algorithm a, Real lambda, Real nu) {
    auto hp = r.hp;
    hp.algorithm = a;
    hp.lambda = lambda;
    hp.nu = nu;
    const auto res = train_search(pl.space, pl.task, pl.model, hp, pl.costs);
    std::cerr << to_string(a) << " lambda=" << lambda << (a == Algorithm::SDO ? " nu=" + std::to_string(nu) : "")
              << ": metric " << res.metric << ", cost " << res.cost << "\n";
    return GridRow{a, lambda, nu, res.metric, res.cost, res.speedup_infinite ? 0.0 : res.speedup, ""};
  });
  g.seed = r.hp.seed;
  g.config_hash = pl.hash;
  const auto csv = grid_csv(g);
  if (out.empty())
    std::cout << csv;
  else
    write_text_file(out, csv);
  if (g.best)
    std::cerr << "best: row " << *g.best + 1 << "\n";
  else
    std::cerr << "no combination within the quality floor\n";
  return 0;
}

int cmd_retrain(const Common& c, const SearchOpts& o, const std::string& arch_path) {
  RunConfig r = load_config(c);
  apply(r, o);
  auto la = load_arch(arch_path, r.space);
  if (!(la.space->config() == r.space))
    throw ConfigError(arch_path + ": architecture belongs to a different search space than the config");
  r.hp.algorithm = Algorithm::Plain;
  const Pipeline pl(r);
  // Fresh weights cannot use fractional connections; round them first.
  const auto arch = canonicalize(pl.space, binarize(pl.space, arch_from_json(arch_to_json(la.arch), pl.space)));
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  MetricsFile mf(dir / "metrics.jsonl", r.hp.seed, pl.hash);
  const auto res = retrain(pl.space, arch, pl.task, pl.model, r.hp, pl.costs, mf.sink());
  write_outputs(dir, pl, res, "retrain");
  return 0;
}

int cmd_distill(const Common& c, const SearchOpts& o, const std::string& teacher_path) {
  RunConfig r = load_config(c);
  apply(r, o);
  const auto tc = checkpoint_from_json(read_json_file(teacher_path));
  const Pipeline pl(r);
  const Teacher teacher{tc.net.get(), tc.space.get(), &tc.arch};
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  MetricsFile mf(dir / "metrics.jsonl", r.hp.seed, pl.hash);
  const auto res = distill(teacher, pl.space, pl.task, pl.model, r.distill, r.hp, pl.costs, mf.sink());
  write_outputs(dir, pl, res, "distill");
  return 0;
}

int cmd_export(const Common& c, const std::string& input, const std::string& dot_out,
               const std::string& json_out) {
  ArchitectureDescription desc;
  const RunConfig r = load_config(c);
  auto la = load_arch(input, r.space);
  if (la.description) {
    desc = *la.description;
  } else {
    const auto prof = resolve_profile(r.cost_profile);
    Provenance prov{"unknown", 0, 0, r.hp.seed, prof.id, config_hash(r)};
    if (la.checkpoint) {
      const auto& pj = la.checkpoint->provenance;
      if (pj.contains("algorithm")) prov.algorithm = pj["algorithm"].get<std::string>();
      if (pj.contains("lambda")) prov.lambda = pj["lambda"].get<Real>();
      if (pj.contains("nu")) prov.nu = pj["nu"].get<Real>();
      if (pj.contains("seed")) prov.seed = pj["seed"].get<std::uint64_t>();
      if (pj.contains("config_hash")) prov.config_hash = pj["config_hash"].get<std::string>();
    }
    desc = extract_description(la.arch, *la.space, assign_costs(*la.space, prof), prov);
  }
  if (dot_out.empty() && json_out.empty()) std::cout << export_dot(desc);
  if (!dot_out.empty()) write_text_file(dot_out, export_dot(desc));
  if (!json_out.empty()) write_json(json_out, desc);
  return 0;
}

int cmd_verify(std::vector<std::string> suites, std::uint64_t seed) {
  if (suites.empty()) suites = property_suites();
  bool ok = true;
  for (const auto& s : suites) {
    for (const auto& p : run_property_suite(s, seed)) {
      ok = ok && p.passed;
      std::cout << (p.passed ? "PASS " : "FAIL ") << p.suite << ": " << p.name << " (" << p.value
                << " <= " << p.threshold << ")";
      if (!p.detail.empty()) std::cout << " [" << p.detail << "]";
      std::cout << "\n";
    }
  }
  std::cout << (ok ? "all properties hold\n" : "property failures\n");
  return ok ? 0 : kExitPropertyFailed;
}

std::vector<std::size_t> parse_lengths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--lengths: '" + item + "' is not a positive integer");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Architecture search over decomposed Transformer blocks."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Common common;
  SearchOpts so;

  auto* prof = app.add_subcommand("profile", "measure a cost profile on this machine");
  add_common(prof, common);
  std::string prof_json, prof_csv, prof_lengths = "32,128,512";
  std::size_t reps = 7, warmup = 3, batch = 1;
  prof->add_option("--json", prof_json, "write the profile JSON here (stdout when no output is given)");
  prof->add_option("--csv", prof_csv, "write the table-shaped CSV here");
  prof->add_option("--lengths", prof_lengths, "comma-separated sequence lengths")->capture_default_str();
  prof->add_option("--reps", reps, "timed repetitions (>= 5)")->capture_default_str();
  prof->add_option("--warmup", warmup, "untimed warm-up runs")->capture_default_str();
  prof->add_option("--batch", batch, "sequences per timed call")->capture_default_str();

  auto* search = app.add_subcommand("search", "train the supernet and select an architecture");
  add_common(search, common);
  add_search_opts(search, so);

  auto* grid = app.add_subcommand("grid", "sweep lambda (and nu for sdo) and tabulate the results");
  add_common(grid, common);
  std::string grid_out;
  std::optional<std::size_t> grid_steps;
  grid->add_option("-o,--out", grid_out, "CSV path (stdout when omitted)");
  grid->add_option("--steps", grid_steps, "training steps per combination");

  auto* ret = app.add_subcommand("retrain", "train fresh weights for a fixed architecture");
  add_common(ret, common);
  std::string arch_path;
  ret->add_option("-A,--arch", arch_path, "architecture description, checkpoint or slot list")->required();
  add_search_opts(ret, so, false);

  auto* dist = app.add_subcommand("distill", "train a student on teacher argmax labels");
  add_common(dist, common);
  std::string teacher_path;
  dist->add_option("-t,--teacher", teacher_path, "teacher checkpoint JSON")->required();
  add_search_opts(dist, so);

  auto* exp = app.add_subcommand("export", "render an architecture as DOT and/or description JSON");
  add_common(exp, common);
  std::string exp_in, exp_dot, exp_json;
  exp->add_option("-i,--input", exp_in, "description, checkpoint or slot list")->required();
  exp->add_option("--dot", exp_dot, "DOT output path (stdout when no output is given)");
  exp->add_option("--json", exp_json, "description JSON output path");

  auto* ver = app.add_subcommand("verify", "run the property suites; exit 3 on any failure");
  std::vector<std::string> suites;
  std::uint64_t verify_seed = 1;
  ver->add_option("--suite", suites, "suite to run (repeatable)")->check(CLI::IsMember(property_suites()));
  ver->add_option("-s,--seed", verify_seed, "seed for the random cases")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kExitConfig;
  }

  try {
    if (*prof) return cmd_profile(common, prof_json, prof_csv, parse_lengths(prof_lengths), reps, warmup, batch);
    if (*search) return cmd_search(common, so);
    if (*grid) return cmd_grid(common, grid_out, grid_steps);
    if (*ret) return cmd_retrain(common, so, arch_path);
    if (*dist) return cmd_distill(common, so, teacher_path);
    if (*exp) return cmd_export(common, exp_in, exp_dot, exp_json);
    if (*ver) return cmd_verify(suites, verify_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArchitectureError& e) {
    std::cerr << "architecture error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
