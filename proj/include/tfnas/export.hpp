#pragma once

#include <string>
#include <vector>

#include "tfnas/io.hpp"

namespace tfnas {

struct HeadDescription {
  std::size_t index = 0;
  bool kept = false;
  std::size_t key_dim = 0;
  std::size_t value_dim = 0;
  // Every sim slice dropped: the head averages its values uniformly.
  bool value_mean_pooling = false;
  friend bool operator==(const HeadDescription&, const HeadDescription&) = default;
};

struct BlockDescription {
  std::size_t index = 0;
  std::vector<HeadDescription> heads;
  // Kept heads grouped by layer; a connection of at least 0.5 starts a new one.
  std::vector<std::vector<std::size_t>> attention_layers;
  // Total width of the kept slices in each FF layer that has any.
  std::vector<std::size_t> ff_layers;
  std::vector<Real> attention_connections;
  std::vector<Real> ff_connections;
  Real ln_attn_mean = 1;
  Real ln_ff_mean = 1;
  bool attention_dropped = false;
  bool ff_dropped = false;
  friend bool operator==(const BlockDescription&, const BlockDescription&) = default;
};

struct Provenance {
  std::string algorithm = "plain";
  Real lambda = 0;
  Real nu = 0;
  std::uint64_t seed = 0;
  std::string profile_id;
  std::string config_hash;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ArchitectureDescription {
  SearchSpaceConfig space;
  std::vector<BlockDescription> blocks;
  double predicted_cost = 0;
  double baseline_cost = 0;
  double speedup = 1;
  bool speedup_infinite = false;
  Provenance provenance;
  // The architecture parameters themselves, in slot order.
  std::vector<std::pair<std::string, Real>> slots;
  friend bool operator==(const ArchitectureDescription&, const ArchitectureDescription&) = default;
};

// Raises ArchitectureError when the nearest binary architecture is invalid.
ArchitectureDescription extract_description(const ArchParams& selected, const SearchSpace& space,
                                            const CostVector& c, const Provenance& prov = {});

void to_json(Json& j, const ArchitectureDescription& d);
void from_json(const Json& j, ArchitectureDescription& d);

// Restores the slot values of a description inside its own search space.
ArchParams description_arch(const ArchitectureDescription& d, const SearchSpace& space);

// Deterministic digraph: one cluster per block, horizontal groups share a rank.
std::string export_dot(const ArchitectureDescription& d);

// A network holding only the retained weights. Horizontal runs of chained
// units are merged into single dense units; connection weights that are
// neither 0 nor 1 are kept as they are.
struct CompactHead {
  Var wq, wk;  // null for value mean pooling
  Var wv, wo;
  Real score_scale = 1;
};

struct CompactAttentionUnit {
  std::vector<CompactHead> heads;  // empty: contributes nothing
  Real connection = 0;
};

struct CompactFeedForwardUnit {
  Var w1, b1, w2;  // null: contributes nothing
  Real connection = 0;
};

struct CompactBlock {
  std::vector<CompactAttentionUnit> attention;
  Var attn_bias;
  LayerNorm ln_attn;
  Real ln_attn_mean = 1;
  std::vector<CompactFeedForwardUnit> ff;
  Var b2;
  LayerNorm ln_ff;
  Real ln_ff_mean = 1;
};

class CompactModel {
 public:
  // Takes weights from `net` (after any fold-in) for architecture `arch`.
  CompactModel(const Supernet& net, const SearchSpace& space, const ArchParams& arch);

  Var forward(const std::vector<int>& tokens, std::size_t seq_len) const;
  std::size_t parameter_count() const;
  const std::vector<CompactBlock>& blocks() const { return blocks_; }

 private:
  ModelConfig cfg_;
  Var tok_emb_, pos_emb_, out_w_, out_b_;
  std::vector<CompactBlock> blocks_;
};

}  // namespace tfnas
