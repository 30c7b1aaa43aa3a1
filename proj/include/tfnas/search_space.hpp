#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tfnas/autodiff.hpp"

namespace tfnas {

struct SearchSpaceConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t ff_dim = 128;
  std::size_t key_dim = 16;    // per head
  std::size_t value_dim = 16;  // per head
  std::size_t m_ff = 2;
  std::size_t m_sim = 2;
  std::size_t m_value = 2;
  bool allow_vertical_attention = true;
  bool search_ln_mean = true;
  // Heads of one block keep identical d_v. Turning this off is rejected.
  bool tie_value_dims = true;
  Activation activation = Activation::Gelu;

  // Raises ConfigError for zero layers or indivisible dimensions.
  void validate() const;
  friend bool operator==(const SearchSpaceConfig&, const SearchSpaceConfig&) = default;
};

enum class ParamKind { Selection, Connection };

enum class Role { Head, Sim, Value, FeedForward, FeedForwardConnection, HeadConnection, LayerNormMean };

// Profiled component categories. Each architecture parameter draws its cost
// from exactly one of them.
enum class CostCategory {
  Feedforward,
  AttentionHead,
  QueryKeySimilarity,
  AttentionValue,
  LayerNormMean,
  VerticalFeedforward,
  VerticalAttention,
};

std::string to_string(ParamKind k);
std::string to_string(Role r);
std::string to_string(CostCategory c);
CostCategory parse_cost_category(const std::string& name);
const std::vector<CostCategory>& all_cost_categories();

// One architecture decision in the network. Tied entries share a slot.
struct ArchEntry {
  std::string id;
  ParamKind kind = ParamKind::Selection;
  Role role = Role::Head;
  CostCategory category = CostCategory::Feedforward;
  std::size_t block = 0;
  std::size_t head = 0;
  std::size_t index = 0;
  std::string tie_group;
  std::size_t slot = 0;
};

// A free (independently valued) parameter.
struct ArchSlot {
  std::string id;
  ParamKind kind = ParamKind::Selection;
  CostCategory category = CostCategory::Feedforward;
  std::vector<std::size_t> members;  // entry indices
};

class ArchTemplate {
 public:
  // Appends an entry; a non-empty tie_group joins the slot of earlier entries
  // in the same group.
  std::size_t add(ArchEntry entry);

  const std::vector<ArchEntry>& entries() const { return entries_; }
  const std::vector<ArchSlot>& slots() const { return slots_; }
  std::size_t num_entries() const { return entries_.size(); }
  std::size_t num_slots() const { return slots_.size(); }
  std::optional<std::size_t> find_slot(const std::string& id) const;

 private:
  std::vector<ArchEntry> entries_;
  std::vector<ArchSlot> slots_;
  std::map<std::string, std::size_t> groups_;
};

// Values of the architecture parameters w, one per slot.
struct ArchParams {
  std::shared_ptr<const ArchTemplate> layout;
  std::vector<Real> values;

  std::size_t size() const { return values.size(); }
  Real operator[](std::size_t slot) const { return values[slot]; }
  Real& operator[](std::size_t slot) { return values[slot]; }
  Real entry_value(std::size_t entry) const { return values[layout->entries()[entry].slot]; }
  bool is_binary() const;
  std::size_t count_nonzero() const;
};

// Slot indices of one Transformer block.
struct BlockSlots {
  std::vector<std::size_t> head;
  std::vector<std::vector<std::size_t>> sim;    // [head][slice]
  std::vector<std::vector<std::size_t>> value;  // [head][slice], tied across heads
  std::vector<std::size_t> ff;
  std::vector<std::size_t> ff_connection;    // m_ff - 1 entries
  std::vector<std::size_t> head_connection;  // heads - 1 entries when searched
  std::optional<std::size_t> ln_attn_mean;
  std::optional<std::size_t> ln_ff_mean;
};

enum class InitMode { Baseline, Uniform };

class SearchSpace {
 public:
  explicit SearchSpace(SearchSpaceConfig cfg);

  const SearchSpaceConfig& config() const { return cfg_; }
  const std::shared_ptr<const ArchTemplate>& layout() const { return layout_; }
  const std::vector<BlockSlots>& blocks() const { return blocks_; }
  std::size_t num_slots() const { return layout_->num_slots(); }

 private:
  SearchSpaceConfig cfg_;
  std::shared_ptr<const ArchTemplate> layout_;
  std::vector<BlockSlots> blocks_;
};

SearchSpace build_space(const SearchSpaceConfig& cfg);

// Baseline: every selection 1, every connection 0 (horizontal), LN mean 1.
// Uniform: every value 0.5, the mean of the initial sampling policy.
ArchParams init_arch(const SearchSpace& space, InitMode mode);

// All binary assignments of the free slots of a template, slot 0 as the
// least significant bit. Requires slots <= max_params <= 20.
std::vector<ArchParams> enumerate_architectures(const ArchParams& tmpl, std::size_t max_params = 20);

// Constraint violations of a binary architecture; empty when valid.
std::vector<std::string> architecture_issues(const SearchSpace& space, const ArchParams& arch);
// Raises ArchitectureError listing every violation.
void validate_architecture(const SearchSpace& space, const ArchParams& arch);

// Clears decisions that have no effect: heads left without any value slice
// are dropped, and the sim slices of dropped heads are cleared.
ArchParams canonicalize(const SearchSpace& space, const ArchParams& arch);

// Nearest binary architecture: any non-zero selection is kept, a connection
// becomes vertical when |w| >= 0.5.
ArchParams binarize(const SearchSpace& space, const ArchParams& arch);

}  // namespace tfnas
