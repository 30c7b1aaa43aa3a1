#pragma once

#include <memory>
#include <string>

#include "json.hpp"
#include "tfnas/harness.hpp"

namespace tfnas {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// Everything one pipeline invocation needs. Loaded from a single JSON file;
// keys left out keep their defaults, unknown keys are rejected.
struct RunConfig {
  SearchSpaceConfig space;
  TaskSpec task;
  Real dropout = 0;
  Real init_scale = 1;
  Hyperparams hp;
  // "table1", "table4" or the path of a profile JSON file.
  std::string cost_profile = "table1";
  GridSpec grid;
  DistillConfig distill;

  ModelConfig model() const;
  void validate() const;
};

void to_json(Json& j, const SearchSpaceConfig& c);
void from_json(const Json& j, SearchSpaceConfig& c);
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const TaskSpec& t);
void from_json(const Json& j, TaskSpec& t);
void to_json(Json& j, const Hyperparams& h);
void from_json(const Json& j, Hyperparams& h);
void to_json(Json& j, const GridSpec& g);
void from_json(const Json& j, GridSpec& g);
void to_json(Json& j, const DistillConfig& d);
void from_json(const Json& j, DistillConfig& d);
void to_json(Json& j, const RunConfig& r);
void from_json(const Json& j, RunConfig& r);
void to_json(Json& j, const CostProfile& p);
void from_json(const Json& j, CostProfile& p);

std::string to_string(OutputKind k);
OutputKind parse_output_kind(const std::string& name);

// Parse helpers that turn malformed input into ConfigError.
Json parse_json(const std::string& text, const std::string& what);
Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

RunConfig load_run_config(const std::string& path);
// Hex FNV-1a of the canonical JSON form.
std::string config_hash(const RunConfig& r);

// "table1", "table4" or a profile file.
CostProfile resolve_profile(const std::string& name);

// Slot values keyed by slot id, in slot order.
Json arch_to_json(const ArchParams& a);
ArchParams arch_from_json(const Json& j, const SearchSpace& space);

// One line of the metrics stream.
Json metric_to_json(const MetricRecord& r);

// Model weights with their config and the architecture they were trained
// under. Values are written with round-trip precision.
Json checkpoint_to_json(const Supernet& net, const ArchParams& arch, const Json& provenance);

struct LoadedCheckpoint {
  std::unique_ptr<SearchSpace> space;
  std::unique_ptr<Supernet> net;
  ArchParams arch;
  Json provenance;
};
LoadedCheckpoint checkpoint_from_json(const Json& j);

}  // namespace tfnas
