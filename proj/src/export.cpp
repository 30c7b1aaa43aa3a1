#include "tfnas/export.hpp"

#include <cmath>
#include <sstream>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

Real slot_or(const ArchParams& a, const std::optional<std::size_t>& s, Real fallback) {
  return s ? a[*s] : fallback;
}

Real head_connection(const SearchSpace& space, const ArchParams& a, std::size_t block, std::size_t h) {
  const auto& bs = space.blocks()[block];
  return h < bs.head_connection.size() ? a[bs.head_connection[h]] : Real(0);
}

bool head_kept(const SearchSpace& space, const ArchParams& a, std::size_t block, std::size_t h) {
  const auto& bs = space.blocks()[block];
  if (a[bs.head[h]] == 0) return false;
  for (auto v : bs.value[h])
    if (a[v] != 0) return true;
  return false;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

ArchitectureDescription extract_description(const ArchParams& selected, const SearchSpace& space,
                                            const CostVector& c, const Provenance& prov) {
  if (selected.size() != space.num_slots() || selected.layout != space.layout())
    throw ArchitectureError("architecture does not belong to this search space");
  if (auto issues = architecture_issues(space, binarize(space, selected)); !issues.empty()) {
    std::string msg = "invalid architecture:";
    for (const auto& i : issues) msg += " " + i + ";";
    throw ArchitectureError(msg);
  }
  const auto& cfg = space.config();
  const std::size_t kw = cfg.key_dim / cfg.m_sim, vw = cfg.value_dim / cfg.m_value, fw = cfg.ff_dim / cfg.m_ff;

  ArchitectureDescription d;
  d.space = cfg;
  d.provenance = prov;
  for (std::size_t b = 0; b < space.blocks().size(); ++b) {
    const auto& bs = space.blocks()[b];
    BlockDescription bd;
    bd.index = b;
    std::vector<std::size_t> layer;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      HeadDescription hd;
      hd.index = h;
      hd.kept = head_kept(space, selected, b, h);
      if (hd.kept) {
        for (auto s : bs.sim[h]) hd.key_dim += selected[s] != 0 ? kw : 0;
        for (auto s : bs.value[h]) hd.value_dim += selected[s] != 0 ? vw : 0;
        hd.value_mean_pooling = hd.key_dim == 0;
        layer.push_back(h);
      }
      bd.heads.push_back(hd);
      if (h + 1 < cfg.heads) {
        const Real w = head_connection(space, selected, b, h);
        bd.attention_connections.push_back(w);
        if (std::abs(w) >= Real(0.5) && !layer.empty()) {
          bd.attention_layers.push_back(layer);
          layer.clear();
        }
      }
    }
    if (!layer.empty()) bd.attention_layers.push_back(layer);

    std::size_t width = 0;
    for (std::size_t i = 0; i < bs.ff.size(); ++i) {
      width += selected[bs.ff[i]] != 0 ? fw : 0;
      if (i + 1 < bs.ff.size()) {
        const Real w = selected[bs.ff_connection[i]];
        bd.ff_connections.push_back(w);
        if (std::abs(w) >= Real(0.5) && width) {
          bd.ff_layers.push_back(width);
          width = 0;
        }
      }
    }
    if (width) bd.ff_layers.push_back(width);
    bd.ln_attn_mean = slot_or(selected, bs.ln_attn_mean, 1);
    bd.ln_ff_mean = slot_or(selected, bs.ln_ff_mean, 1);
    bd.attention_dropped = bd.attention_layers.empty();
    bd.ff_dropped = bd.ff_layers.empty();
    d.blocks.push_back(std::move(bd));
  }

  const auto base = init_arch(space, InitMode::Baseline);
  d.predicted_cost = cost_loss(selected, c, CostMode::Binary);
  d.baseline_cost = cost_loss(base, c, CostMode::Binary);
  const auto sp = estimate_speedup(selected, c, base);
  d.speedup = sp.infinite ? 0.0 : sp.predicted;
  d.speedup_infinite = sp.infinite;
  for (std::size_t i = 0; i < selected.size(); ++i)
    d.slots.emplace_back(space.layout()->slots()[i].id, selected[i]);
  return d;
}

void to_json(Json& j, const ArchitectureDescription& d) {
  Json blocks = Json::array();
  for (const auto& b : d.blocks) {
    Json heads = Json::array();
    for (const auto& h : b.heads)
      heads.push_back({{"index", h.index},
                       {"kept", h.kept},
                       {"key_dim", h.key_dim},
                       {"value_dim", h.value_dim},
                       {"value_mean_pooling", h.value_mean_pooling}});
    blocks.push_back({{"index", b.index},
                      {"heads", heads},
                      {"attention_layers", b.attention_layers},
                      {"ff_layers", b.ff_layers},
                      {"attention_connections", b.attention_connections},
                      {"ff_connections", b.ff_connections},
                      {"ln_attn_mean", b.ln_attn_mean},
                      {"ln_ff_mean", b.ln_ff_mean},
                      {"attention_dropped", b.attention_dropped},
                      {"ff_dropped", b.ff_dropped}});
  }
  Json slots = Json::array();
  for (const auto& [id, v] : d.slots) slots.push_back({{"id", id}, {"value", v}});
  const auto& p = d.provenance;
  j = {{"schema_version", kSchemaVersion},
       {"space", d.space},
       {"blocks", blocks},
       {"predicted_cost", d.predicted_cost},
       {"baseline_cost", d.baseline_cost},
       {"speedup", d.speedup_infinite ? Json(nullptr) : Json(d.speedup)},
       {"speedup_infinite", d.speedup_infinite},
       {"provenance",
        {{"algorithm", p.algorithm},
         {"lambda", p.lambda},
         {"nu", p.nu},
         {"seed", p.seed},
         {"profile_id", p.profile_id},
         {"config_hash", p.config_hash}}},
       {"slots", slots}};
}

void from_json(const Json& j, ArchitectureDescription& d) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw ConfigError("architecture description: unsupported schema_version");
    d = {};
    d.space = j.at("space").get<SearchSpaceConfig>();
    for (const auto& b : j.at("blocks")) {
      BlockDescription bd;
      bd.index = b.at("index").get<std::size_t>();
      for (const auto& h : b.at("heads"))
        bd.heads.push_back({h.at("index").get<std::size_t>(), h.at("kept").get<bool>(),
                            h.at("key_dim").get<std::size_t>(), h.at("value_dim").get<std::size_t>(),
                            h.at("value_mean_pooling").get<bool>()});
      bd.attention_layers = b.at("attention_layers").get<std::vector<std::vector<std::size_t>>>();
      bd.ff_layers = b.at("ff_layers").get<std::vector<std::size_t>>();
      bd.attention_connections = b.at("attention_connections").get<std::vector<Real>>();
      bd.ff_connections = b.at("ff_connections").get<std::vector<Real>>();
      bd.ln_attn_mean = b.at("ln_attn_mean").get<Real>();
      bd.ln_ff_mean = b.at("ln_ff_mean").get<Real>();
      bd.attention_dropped = b.at("attention_dropped").get<bool>();
      bd.ff_dropped = b.at("ff_dropped").get<bool>();
      d.blocks.push_back(std::move(bd));
    }
    d.predicted_cost = j.at("predicted_cost").get<double>();
    d.baseline_cost = j.at("baseline_cost").get<double>();
    d.speedup_infinite = j.at("speedup_infinite").get<bool>();
    d.speedup = d.speedup_infinite ? 0.0 : j.at("speedup").get<double>();
    const auto& p = j.at("provenance");
    d.provenance = {p.at("algorithm").get<std::string>(), p.at("lambda").get<Real>(), p.at("nu").get<Real>(),
                    p.at("seed").get<std::uint64_t>(),    p.at("profile_id").get<std::string>(),
                    p.at("config_hash").get<std::string>()};
    for (const auto& s : j.at("slots")) d.slots.emplace_back(s.at("id").get<std::string>(), s.at("value").get<Real>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture description: ") + e.what());
  }
}

ArchParams description_arch(const ArchitectureDescription& d, const SearchSpace& space) {
  if (!(d.space == space.config())) throw ConfigError("description belongs to a different search space");
  Json slots = Json::array();
  for (const auto& [id, v] : d.slots) slots.push_back({{"id", id}, {"value", v}});
  return arch_from_json({{"schema_version", kSchemaVersion}, {"slots", slots}}, space);
}

std::string export_dot(const ArchitectureDescription& d) {
  using Node = std::pair<std::string, std::string>;  // id, label
  auto ln_label = [](Real mean) {
    if (mean == 1) return std::string("LayerNorm");
    if (mean == 0) return std::string("LayerNorm (no mean)");
    return "LayerNorm (mean x" + fmt(mean) + ")";
  };

  std::ostringstream os;
  os << "digraph architecture {\n";
  os << "  rankdir=BT;\n";
  const auto& pv = d.provenance;
  os << "  comment=\"schema_version=" << kSchemaVersion << " algorithm=" << pv.algorithm << " seed=" << pv.seed
     << " profile=" << pv.profile_id << " config_hash=" << pv.config_hash << "\";\n";
  os << "  node [shape=box, fontname=\"Helvetica\"];\n";
  os << "  input [label=\"embeddings\\nh=" << d.space.hidden << "\", shape=ellipse];\n";
  std::string prev = "input";

  // One residual add per layer; members of a layer share a rank.
  auto emit_layers = [&](const std::string& prefix, const std::vector<std::vector<Node>>& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string add = prefix + "_add" + std::to_string(l);
      os << "    " << add << " [label=\"+\", shape=circle];\n";
      os << "    { rank=same;";
      for (const auto& [id, _] : layers[l]) os << " " << id << ";";
      os << " }\n";
      for (const auto& [id, label] : layers[l]) {
        os << "    " << id << " [label=\"" << label << "\"];\n";
        os << "    " << prev << " -> " << id << ";\n";
        os << "    " << id << " -> " << add << ";\n";
      }
      os << "    " << prev << " -> " << add << " [style=dashed, label=\"residual\"];\n";
      prev = add;
    }
  };
  auto emit_norm = [&](const std::string& id, Real mean, bool sub_block_empty) {
    os << "    " << id << " [label=\"" << ln_label(mean) << "\"];\n";
    os << "    " << prev << " -> " << id;
    if (sub_block_empty) os << " [style=dashed, label=\"residual\"]";
    os << ";\n";
    prev = id;
  };

  for (const auto& b : d.blocks) {
    const std::string p = "b" + std::to_string(b.index) + "_";
    os << "  subgraph cluster_block" << b.index << " {\n";
    os << "    label=\"block " << b.index << "\";\n";

    std::vector<std::vector<Node>> attn;
    for (const auto& layer : b.attention_layers) {
      attn.emplace_back();
      for (auto hi : layer) {
        const auto& h = b.heads[hi];
        std::string label = "head " + std::to_string(h.index) + "\\n";
        label += h.value_mean_pooling ? "value mean pooling\\nd_v=" + std::to_string(h.value_dim)
                                      : "d_k=" + std::to_string(h.key_dim) + " d_v=" + std::to_string(h.value_dim);
        attn.back().emplace_back(p + "head" + std::to_string(h.index), label);
      }
    }
    emit_layers(p + "attn", attn);
    emit_norm(p + "ln_attn", b.ln_attn_mean, attn.empty());

    std::vector<std::vector<Node>> ff;
    for (std::size_t l = 0; l < b.ff_layers.size(); ++l)
      ff.push_back({{p + "ff" + std::to_string(l), "feedforward\\nwidth " + std::to_string(b.ff_layers[l])}});
    emit_layers(p + "ff", ff);
    emit_norm(p + "ln_ff", b.ln_ff_mean, ff.empty());
    os << "  }\n";
  }
  os << "  output [label=\"classifier\", shape=ellipse];\n";
  os << "  " << prev << " -> output;\n";
  os << "  label=\"cost " << fmt(d.predicted_cost) << " of " << fmt(d.baseline_cost) << ", speedup "
     << (d.speedup_infinite ? std::string("inf") : fmt(d.speedup)) << "\";\n";
  os << "}\n";
  return os.str();
}

// ---- compact model -----------------------------------------------------------

namespace {

Tensor scaled(const Tensor& t, Real k) {
  Tensor out = t;
  if (k != 1)
    for (auto& v : out.data()) v *= k;
  return out;
}

}  // namespace

CompactModel::CompactModel(const Supernet& net, const SearchSpace& space, const ArchParams& arch)
    : cfg_(net.config()) {
  if (!(cfg_.space == space.config()) || arch.size() != space.num_slots())
    throw ArchitectureError("compact: network, search space and architecture disagree");
  if (auto issues = architecture_issues(space, binarize(space, arch)); !issues.empty())
    throw ArchitectureError("compact: invalid architecture: " + issues.front());
  for (const auto& [name, v] : net.named_parameters()) {
    if (name == "tok_emb") tok_emb_ = constant(v->value);
    if (name == "pos_emb") pos_emb_ = constant(v->value);
    if (name == "out_w") out_w_ = constant(v->value);
    if (name == "out_b") out_b_ = constant(v->value);
  }
  for (std::size_t b = 0; b < space.blocks().size(); ++b) {
    const auto& bs = space.blocks()[b];
    const auto& blk = net.blocks()[b];
    CompactBlock cb;

    CompactAttentionUnit unit;
    for (std::size_t h = 0; h < blk.heads.size(); ++h) {
      if (head_kept(space, arch, b, h)) {
        const auto& head = blk.heads[h];
        std::vector<Tensor> q, k, v, o;
        for (std::size_t i = 0; i < head.sim.size(); ++i) {
          const Real w = arch[bs.sim[h][i]];
          if (w == 0) continue;
          q.push_back(scaled(head.sim[i].wq->value, w));
          k.push_back(head.sim[i].wk->value);
        }
        for (std::size_t i = 0; i < head.value.size(); ++i) {
          const Real w = arch[bs.value[h][i]];
          if (w == 0) continue;
          v.push_back(head.value[i].wv->value);
          o.push_back(scaled(head.value[i].wo->value, w * arch[bs.head[h]]));
        }
        CompactHead ch;
        if (!q.empty()) {
          ch.wq = constant(hconcat(q));
          ch.wk = constant(hconcat(k));
        }
        ch.wv = constant(hconcat(v));
        ch.wo = constant(vconcat(o));
        ch.score_scale = head.score_scale;
        unit.heads.push_back(std::move(ch));
      }
      const Real c = h + 1 < blk.heads.size() ? head_connection(space, arch, b, h) : Real(0);
      if (c != 0 || h + 1 == blk.heads.size()) {
        unit.connection = c;
        cb.attention.push_back(std::move(unit));
        unit = {};
      }
    }
    cb.attn_bias = constant(blk.attn_bias->value);
    cb.ln_attn = {constant(blk.ln_attn.alpha->value), constant(blk.ln_attn.beta->value)};
    cb.ln_attn_mean = slot_or(arch, bs.ln_attn_mean, 1);

    std::vector<Tensor> w1, b1, w2;
    for (std::size_t i = 0; i < blk.ff.slices.size(); ++i) {
      const Real w = arch[bs.ff[i]];
      if (w != 0) {
        w1.push_back(blk.ff.slices[i].w1->value);
        b1.push_back(blk.ff.slices[i].b1->value);
        w2.push_back(scaled(blk.ff.slices[i].w2->value, w));
      }
      const Real c = i + 1 < blk.ff.slices.size() ? arch[bs.ff_connection[i]] : Real(0);
      if (c != 0 || i + 1 == blk.ff.slices.size()) {
        CompactFeedForwardUnit fu;
        fu.connection = c;
        if (!w1.empty()) {
          fu.w1 = constant(hconcat(w1));
          fu.b1 = constant(hconcat(b1));
          fu.w2 = constant(vconcat(w2));
        }
        cb.ff.push_back(std::move(fu));
        w1.clear();
        b1.clear();
        w2.clear();
      }
    }
    cb.b2 = constant(blk.ff.b2->value);
    cb.ln_ff = {constant(blk.ln_ff.alpha->value), constant(blk.ln_ff.beta->value)};
    cb.ln_ff_mean = slot_or(arch, bs.ln_ff_mean, 1);
    blocks_.push_back(std::move(cb));
  }
}

Var CompactModel::forward(const std::vector<int>& tokens, std::size_t seq_len) const {
  if (seq_len == 0 || seq_len > cfg_.max_len || tokens.size() % seq_len != 0)
    throw ShapeError("compact forward: tokens do not form sequences of length " + std::to_string(seq_len));
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i % seq_len);
  Var x = add(embedding(tok_emb_, tokens), embedding(pos_emb_, std::move(positions)));
  const Activation act = cfg_.space.activation;

  for (const auto& blk : blocks_) {
    std::vector<ChainUnit> attn;
    for (const auto& u : blk.attention) {
      Component f;
      if (!u.heads.empty())
        f = [&u, seq_len](const Var& in) -> Var {
          Var acc;
          for (const auto& h : u.heads) {
            Var scores = h.wq ? seq_scores(matmul(in, h.wq), matmul(in, h.wk), seq_len)
                              : constant(Tensor(in->value.rows(), seq_len));
            Var probs = softmax_rows(scale(scores, h.score_scale));
            Var out = matmul(seq_mix(probs, matmul(in, h.wv), seq_len), h.wo);
            acc = acc ? add(acc, out) : out;
          }
          return acc;
        };
      attn.push_back({std::move(f), ArchWeight::fixed(u.connection)});
    }
    Var mid = layer_norm_forward(blk.ln_attn, add_row(chain_forward(attn, x), blk.attn_bias),
                                 ArchWeight::fixed(blk.ln_attn_mean));
    std::vector<ChainUnit> ff;
    for (const auto& u : blk.ff) {
      Component f;
      if (u.w1)
        f = [&u, act](const Var& in) -> Var {
          return matmul(activate(add_row(matmul(in, u.w1), u.b1), act), u.w2);
        };
      ff.push_back({std::move(f), ArchWeight::fixed(u.connection)});
    }
    x = layer_norm_forward(blk.ln_ff, add_row(chain_forward(ff, mid), blk.b2), ArchWeight::fixed(blk.ln_ff_mean));
  }
  Var feats = cfg_.output == OutputKind::Sequence ? seq_mean_pool(x, seq_len) : x;
  return add_row(matmul(feats, out_w_), out_b_);
}

std::size_t CompactModel::parameter_count() const {
  std::size_t n = 0;
  auto count = [&](const Var& v) { n += v ? v->value.size() : 0; };
  for (const auto& v : {tok_emb_, pos_emb_, out_w_, out_b_}) count(v);
  for (const auto& b : blocks_) {
    for (const auto& u : b.attention)
      for (const auto& h : u.heads)
        for (const auto& v : {h.wq, h.wk, h.wv, h.wo}) count(v);
    for (const auto& u : b.ff)
      for (const auto& v : {u.w1, u.b1, u.w2}) count(v);
    for (const auto& v : {b.attn_bias, b.ln_attn.alpha, b.ln_attn.beta, b.b2, b.ln_ff.alpha, b.ln_ff.beta}) count(v);
  }
  return n;
}

}  // namespace tfnas
