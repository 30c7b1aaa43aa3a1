#include "tfnas/search_space.hpp"

#include <algorithm>
#include <cmath>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

void require_divisible(const char* what, std::size_t dim, std::size_t m) {
  if (m == 0 || dim == 0 || dim % m != 0)
    throw ConfigError(std::string(what) + " " + std::to_string(dim) +
                      " is not divisible into " + std::to_string(m) + " equal parts");
}

}  // namespace

void SearchSpaceConfig::validate() const {
  if (layers == 0) throw ConfigError("search space needs at least one layer");
  if (hidden == 0 || heads == 0) throw ConfigError("hidden size and head count must be positive");
  require_divisible("ff_dim", ff_dim, m_ff);
  require_divisible("key_dim", key_dim, m_sim);
  require_divisible("value_dim", value_dim, m_value);
  if (!tie_value_dims)
    throw ConfigError(
        "heads of one multi-head attention must share d_v; untied value dims are not searchable");
}

std::string to_string(ParamKind k) { return k == ParamKind::Selection ? "selection" : "connection"; }

std::string to_string(Role r) {
  switch (r) {
    case Role::Head: return "head";
    case Role::Sim: return "sim";
    case Role::Value: return "value";
    case Role::FeedForward: return "ff";
    case Role::FeedForwardConnection: return "ff_connection";
    case Role::HeadConnection: return "head_connection";
    case Role::LayerNormMean: return "ln_mean";
  }
  return "?";
}

const std::vector<CostCategory>& all_cost_categories() {
  static const std::vector<CostCategory> kAll = {
      CostCategory::Feedforward,        CostCategory::AttentionHead,
      CostCategory::QueryKeySimilarity, CostCategory::AttentionValue,
      CostCategory::LayerNormMean,      CostCategory::VerticalFeedforward,
      CostCategory::VerticalAttention};
  return kAll;
}

std::string to_string(CostCategory c) {
  switch (c) {
    case CostCategory::Feedforward: return "Feedforward";
    case CostCategory::AttentionHead: return "Attention Head";
    case CostCategory::QueryKeySimilarity: return "Query-Key Similarity";
    case CostCategory::AttentionValue: return "Attention Value";
    case CostCategory::LayerNormMean: return "Layer Normalization Mean";
    case CostCategory::VerticalFeedforward: return "Vertical Feedforward";
    case CostCategory::VerticalAttention: return "Vertical Attention";
  }
  return "?";
}

CostCategory parse_cost_category(const std::string& name) {
  for (auto c : all_cost_categories())
    if (to_string(c) == name) return c;
  throw ConfigError("unknown cost category '" + name + "'");
}

std::size_t ArchTemplate::add(ArchEntry entry) {
  const std::size_t idx = entries_.size();
  std::size_t slot;
  auto it = entry.tie_group.empty() ? groups_.end() : groups_.find(entry.tie_group);
  if (it != groups_.end()) {
    slot = it->second;
    if (slots_[slot].kind != entry.kind || slots_[slot].category != entry.category)
      throw ConfigError("tie group '" + entry.tie_group + "' mixes parameter kinds");
  } else {
    slot = slots_.size();
    slots_.push_back({entry.tie_group.empty() ? entry.id : entry.tie_group, entry.kind,
                      entry.category, {}});
    if (!entry.tie_group.empty()) groups_.emplace(entry.tie_group, slot);
  }
  slots_[slot].members.push_back(idx);
  entry.slot = slot;
  entries_.push_back(std::move(entry));
  return idx;
}

std::optional<std::size_t> ArchTemplate::find_slot(const std::string& id) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].id == id) return i;
  return std::nullopt;
}

bool ArchParams::is_binary() const {
  return std::all_of(values.begin(), values.end(), [](Real v) { return v == 0 || v == 1; });
}

std::size_t ArchParams::count_nonzero() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](Real v) { return v != 0; }));
}

SearchSpace::SearchSpace(SearchSpaceConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  auto layout = std::make_shared<ArchTemplate>();
  for (std::size_t b = 0; b < cfg_.layers; ++b) {
    BlockSlots bs;
    const std::string pre = "b" + std::to_string(b) + ".";
    auto add = [&](std::string id, ParamKind kind, Role role, CostCategory cat, std::size_t head,
                   std::size_t index, std::string tie = {}) {
      const std::size_t e = layout->add(
          {std::move(id), kind, role, cat, b, head, index, std::move(tie), 0});
      return layout->entries()[e].slot;
    };
    bs.sim.resize(cfg_.heads);
    bs.value.resize(cfg_.heads);
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const std::string hp = pre + "head" + std::to_string(h);
      bs.head.push_back(
          add(hp, ParamKind::Selection, Role::Head, CostCategory::AttentionHead, h, 0));
      for (std::size_t i = 0; i < cfg_.m_sim; ++i)
        bs.sim[h].push_back(add(hp + ".sim" + std::to_string(i), ParamKind::Selection, Role::Sim,
                                CostCategory::QueryKeySimilarity, h, i));
      for (std::size_t i = 0; i < cfg_.m_value; ++i)
        bs.value[h].push_back(add(hp + ".value" + std::to_string(i), ParamKind::Selection,
                                  Role::Value, CostCategory::AttentionValue, h, i,
                                  pre + "value" + std::to_string(i)));
    }
    if (cfg_.allow_vertical_attention)
      for (std::size_t h = 0; h + 1 < cfg_.heads; ++h)
        bs.head_connection.push_back(add(pre + "head_conn" + std::to_string(h),
                                         ParamKind::Connection, Role::HeadConnection,
                                         CostCategory::VerticalAttention, h, h));
    for (std::size_t i = 0; i < cfg_.m_ff; ++i)
      bs.ff.push_back(add(pre + "ff" + std::to_string(i), ParamKind::Selection, Role::FeedForward,
                          CostCategory::Feedforward, 0, i));
    for (std::size_t i = 0; i + 1 < cfg_.m_ff; ++i)
      bs.ff_connection.push_back(add(pre + "ff_conn" + std::to_string(i), ParamKind::Connection,
                                     Role::FeedForwardConnection,
                                     CostCategory::VerticalFeedforward, 0, i));
    if (cfg_.search_ln_mean) {
      bs.ln_attn_mean = add(pre + "ln_attn.mean", ParamKind::Selection, Role::LayerNormMean,
                            CostCategory::LayerNormMean, 0, 0);
      bs.ln_ff_mean = add(pre + "ln_ff.mean", ParamKind::Selection, Role::LayerNormMean,
                          CostCategory::LayerNormMean, 0, 1);
    }
    blocks_.push_back(std::move(bs));
  }
  layout_ = std::move(layout);
}

SearchSpace build_space(const SearchSpaceConfig& cfg) { return SearchSpace(cfg); }

ArchParams init_arch(const SearchSpace& space, InitMode mode) {
  ArchParams a{space.layout(), std::vector<Real>(space.num_slots())};
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (mode == InitMode::Uniform) {
      a[s] = Real(0.5);
    } else {
      a[s] = space.layout()->slots()[s].kind == ParamKind::Selection ? Real(1) : Real(0);
    }
  }
  return a;
}

std::vector<ArchParams> enumerate_architectures(const ArchParams& tmpl, std::size_t max_params) {
  const std::size_t k = tmpl.size();
  if (max_params > 20) throw ConfigError("enumeration limit cannot exceed 20 free parameters");
  if (k > max_params)
    throw ConfigError("search space has " + std::to_string(k) +
                      " free parameters; enumeration limit is " + std::to_string(max_params));
  std::vector<ArchParams> out;
  out.reserve(std::size_t{1} << k);
  for (std::size_t bits = 0; bits < (std::size_t{1} << k); ++bits) {
    ArchParams a{tmpl.layout, std::vector<Real>(k)};
    for (std::size_t i = 0; i < k; ++i) a[i] = (bits >> i) & 1U ? Real(1) : Real(0);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<std::string> architecture_issues(const SearchSpace& space, const ArchParams& arch) {
  std::vector<std::string> issues;
  if (arch.size() != space.num_slots()) {
    issues.push_back("parameter count " + std::to_string(arch.size()) + " does not match space (" +
                     std::to_string(space.num_slots()) + ")");
    return issues;
  }
  if (!arch.is_binary()) issues.push_back("architecture is not binary");
  bool any_component = false;
  for (std::size_t b = 0; b < space.blocks().size(); ++b) {
    const auto& bs = space.blocks()[b];
    for (std::size_t h = 0; h < bs.head.size(); ++h) {
      if (arch[bs.head[h]] == 0) continue;
      const bool has_value = std::any_of(bs.value[h].begin(), bs.value[h].end(),
                                         [&](std::size_t s) { return arch[s] != 0; });
      if (!has_value)
        issues.push_back("block " + std::to_string(b) + " head " + std::to_string(h) +
                         " is retained without any value slice");
      else
        any_component = true;
    }
    for (auto s : bs.ff) any_component = any_component || arch[s] != 0;
  }
  if (!any_component) issues.push_back("empty architecture: no attention head or feedforward slice retained");
  return issues;
}

void validate_architecture(const SearchSpace& space, const ArchParams& arch) {
  auto issues = architecture_issues(space, arch);
  if (issues.empty()) return;
  std::string msg = "invalid architecture:";
  for (const auto& i : issues) msg += " " + i + ";";
  throw ArchitectureError(msg);
}

ArchParams canonicalize(const SearchSpace& space, const ArchParams& arch) {
  ArchParams out = arch;
  for (const auto& bs : space.blocks()) {
    bool any_head = false;
    for (std::size_t h = 0; h < bs.head.size(); ++h) {
      const bool has_value = std::any_of(bs.value[h].begin(), bs.value[h].end(),
                                         [&](std::size_t s) { return out[s] != 0; });
      if (!has_value) out[bs.head[h]] = 0;
      if (out[bs.head[h]] == 0)
        for (auto s : bs.sim[h]) out[s] = 0;
      any_head = any_head || out[bs.head[h]] != 0;
    }
    if (!any_head)
      for (std::size_t i = 0; i < (bs.value.empty() ? 0 : bs.value.front().size()); ++i)
        out[bs.value.front()[i]] = 0;
  }
  return out;
}

ArchParams binarize(const SearchSpace& space, const ArchParams& arch) {
  if (arch.size() != space.num_slots()) throw ArchitectureError("binarize: size mismatch");
  ArchParams out = arch;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool conn = space.layout()->slots()[i].kind == ParamKind::Connection;
    out[i] = (conn ? std::abs(arch[i]) >= Real(0.5) : arch[i] != 0) ? Real(1) : Real(0);
  }
  return out;
}

}  // namespace tfnas
