#include "tfnas/model.hpp"

#include <cmath>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

ArchWeight weight_of(const ArchBinding& b, std::size_t slot) {
  if (b.relaxed) return ArchWeight::relaxed((*b.relaxed)[slot]);
  return ArchWeight::fixed((*b.values)[slot]);
}

Component with_dropout(Component f, const DropoutSpec& d) {
  if (!d.rng || d.rate <= 0) return f;
  return [f = std::move(f), d](const Var& x) -> Var {
    Var y = f(x);
    return y ? dropout(y, d.rate, *d.rng) : y;
  };
}

}  // namespace

BlockArch bind_block(const ArchBinding& binding, std::size_t block) {
  const SearchSpace& space = *binding.space;
  if (binding.values && binding.values->size() != space.num_slots())
    throw ArchitectureError("architecture has " + std::to_string(binding.values->size()) +
                            " parameters, search space has " +
                            std::to_string(space.num_slots()));
  if (binding.relaxed && binding.relaxed->size() != space.num_slots())
    throw ArchitectureError("relaxed parameter count does not match search space");
  const auto& cfg = space.config();
  const BlockSlots& bs = space.blocks().at(block);
  BlockArch a;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    a.head.push_back(weight_of(binding, bs.head[h]));
    HeadGates g;
    for (auto s : bs.sim[h]) g.sim.push_back(weight_of(binding, s));
    for (auto s : bs.value[h]) g.value.push_back(weight_of(binding, s));
    a.head_slices.push_back(std::move(g));
  }
  for (std::size_t h = 0; h + 1 < cfg.heads; ++h)
    a.head_connection.push_back(cfg.allow_vertical_attention
                                    ? weight_of(binding, bs.head_connection[h])
                                    : ArchWeight::fixed(0));
  for (auto s : bs.ff) a.ff.push_back(weight_of(binding, s));
  for (auto s : bs.ff_connection) a.ff_connection.push_back(weight_of(binding, s));
  if (bs.ln_attn_mean) a.ln_attn_mean = weight_of(binding, *bs.ln_attn_mean);
  if (bs.ln_ff_mean) a.ln_ff_mean = weight_of(binding, *bs.ln_ff_mean);
  return a;
}

Var assemble_block(const TransformerBlock& block, const Var& x, std::size_t seq_len,
                   const BlockArch& arch, const DropoutSpec& dropout) {
  if (arch.head.size() != block.heads.size() || arch.ff.size() != block.ff.slices.size())
    throw ArchitectureError("block architecture does not match block structure");

  std::vector<ChainUnit> attn;
  for (std::size_t h = 0; h < block.heads.size(); ++h) {
    Component f;
    if (!arch.head[h].is_off()) {
      f = [&, h](const Var& in) -> Var {
        return apply_weight(head_output(block.heads[h], in, seq_len, arch.head_slices[h]),
                            arch.head[h]);
      };
    }
    attn.push_back({with_dropout(std::move(f), dropout),
                    h < arch.head_connection.size() ? arch.head_connection[h]
                                                    : ArchWeight::fixed(0)});
  }
  Var mid = layer_norm_forward(block.ln_attn, add_row(chain_forward(attn, x), block.attn_bias),
                               arch.ln_attn_mean);

  std::vector<ChainUnit> ff;
  for (std::size_t i = 0; i < block.ff.slices.size(); ++i) {
    Component f;
    if (!arch.ff[i].is_off()) {
      f = [&, i](const Var& in) -> Var {
        return apply_weight(ff_slice_forward(block.ff.slices[i], in, block.ff.activation),
                            arch.ff[i]);
      };
    }
    ff.push_back({with_dropout(std::move(f), dropout),
                  i < arch.ff_connection.size() ? arch.ff_connection[i] : ArchWeight::fixed(0)});
  }
  return layer_norm_forward(block.ln_ff, add_row(chain_forward(ff, mid), block.ff.b2),
                            arch.ln_ff_mean);
}

TransformerBlock make_block(const SearchSpaceConfig& cfg, Rng& rng, Real init_scale) {
  TransformerBlock b;
  for (std::size_t h = 0; h < cfg.heads; ++h)
    b.heads.push_back(make_head(cfg.hidden, cfg.key_dim, cfg.value_dim, cfg.m_sim, cfg.m_value,
                                rng, init_scale / std::sqrt(static_cast<Real>(cfg.heads))));
  b.attn_bias = parameter(Tensor(1, cfg.hidden));
  b.ln_attn = make_layer_norm(cfg.hidden);
  b.ff = make_feedforward(cfg.hidden, cfg.ff_dim, cfg.m_ff, cfg.activation, rng, init_scale);
  b.ln_ff = make_layer_norm(cfg.hidden);
  return b;
}

Supernet::Supernet(ModelConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  cfg_.space.validate();
  if (cfg_.vocab == 0 || cfg_.max_len == 0 || cfg_.num_classes == 0)
    throw ConfigError("vocab, max_len and num_classes must be positive");
  if (cfg_.dropout < 0 || cfg_.dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  const std::size_t h = cfg_.space.hidden;
  Tensor tok(cfg_.vocab, h), pos(cfg_.max_len, h);
  for (auto& v : tok.data()) v = static_cast<Real>(init_rng.normal());
  for (auto& v : pos.data()) v = static_cast<Real>(init_rng.normal());
  tok_emb_ = parameter(std::move(tok));
  pos_emb_ = parameter(std::move(pos));
  for (std::size_t b = 0; b < cfg_.space.layers; ++b)
    blocks_.push_back(make_block(cfg_.space, init_rng, cfg_.init_scale));
  out_w_ = parameter(random_matrix(h, cfg_.num_classes, init_rng, cfg_.init_scale));
  out_b_ = parameter(Tensor(1, cfg_.num_classes));
}

Supernet Supernet::clone() const {
  Supernet c;
  c.cfg_ = cfg_;
  auto dup = [](const Var& v) { return parameter(v->value); };
  c.tok_emb_ = dup(tok_emb_);
  c.pos_emb_ = dup(pos_emb_);
  for (const auto& b : blocks_) {
    TransformerBlock nb;
    for (const auto& h : b.heads) {
      AttentionHead nh;
      nh.score_scale = h.score_scale;
      for (const auto& s : h.sim) nh.sim.push_back({dup(s.wq), dup(s.wk)});
      for (const auto& s : h.value) nh.value.push_back({dup(s.wv), dup(s.wo)});
      nb.heads.push_back(std::move(nh));
    }
    nb.attn_bias = dup(b.attn_bias);
    nb.ln_attn = {dup(b.ln_attn.alpha), dup(b.ln_attn.beta)};
    nb.ff.activation = b.ff.activation;
    for (const auto& s : b.ff.slices) nb.ff.slices.push_back({dup(s.w1), dup(s.b1), dup(s.w2)});
    nb.ff.b2 = dup(b.ff.b2);
    nb.ln_ff = {dup(b.ln_ff.alpha), dup(b.ln_ff.beta)};
    c.blocks_.push_back(std::move(nb));
  }
  c.out_w_ = dup(out_w_);
  c.out_b_ = dup(out_b_);
  return c;
}

Var Supernet::embed(const std::vector<int>& tokens, std::size_t seq_len) const {
  if (seq_len == 0 || seq_len > cfg_.max_len || tokens.size() % seq_len != 0)
    throw ShapeError("forward: " + std::to_string(tokens.size()) +
                     " tokens do not form sequences of length " + std::to_string(seq_len) +
                     " (max " + std::to_string(cfg_.max_len) + ")");
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i % seq_len);
  return add(embedding(tok_emb_, tokens), embedding(pos_emb_, std::move(positions)));
}

Var Supernet::classify(const Var& hidden, std::size_t seq_len) const {
  Var feats = cfg_.output == OutputKind::Sequence ? seq_mean_pool(hidden, seq_len) : hidden;
  return add_row(matmul(feats, out_w_), out_b_);
}

Var Supernet::forward(const std::vector<int>& tokens, std::size_t seq_len,
                      const ArchBinding& arch, Rng* dropout_rng) const {
  if (!arch.space || (!arch.values && !arch.relaxed))
    throw ArchitectureError("forward: architecture binding is incomplete");
  if (!(arch.space->config() == cfg_.space))
    throw ArchitectureError("forward: architecture belongs to a different search space");
  const DropoutSpec drop{cfg_.dropout, dropout_rng};
  Var x = embed(tokens, seq_len);
  if (drop.rng && drop.rate > 0) x = dropout(x, drop.rate, *drop.rng);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    x = assemble_block(blocks_[b], x, seq_len, bind_block(arch, b), drop);
  return classify(x, seq_len);
}

std::vector<std::pair<std::string, Var>> Supernet::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& blk = blocks_[b];
    const std::string p = "block" + std::to_string(b) + ".";
    for (std::size_t h = 0; h < blk.heads.size(); ++h) {
      const std::string hp = p + "head" + std::to_string(h) + ".";
      for (std::size_t i = 0; i < blk.heads[h].sim.size(); ++i) {
        out.emplace_back(hp + "sim" + std::to_string(i) + ".wq", blk.heads[h].sim[i].wq);
        out.emplace_back(hp + "sim" + std::to_string(i) + ".wk", blk.heads[h].sim[i].wk);
      }
      for (std::size_t i = 0; i < blk.heads[h].value.size(); ++i) {
        out.emplace_back(hp + "value" + std::to_string(i) + ".wv", blk.heads[h].value[i].wv);
        out.emplace_back(hp + "value" + std::to_string(i) + ".wo", blk.heads[h].value[i].wo);
      }
    }
    out.emplace_back(p + "attn_bias", blk.attn_bias);
    out.emplace_back(p + "ln_attn.alpha", blk.ln_attn.alpha);
    out.emplace_back(p + "ln_attn.beta", blk.ln_attn.beta);
    for (std::size_t i = 0; i < blk.ff.slices.size(); ++i) {
      const std::string sp = p + "ff" + std::to_string(i) + ".";
      out.emplace_back(sp + "w1", blk.ff.slices[i].w1);
      out.emplace_back(sp + "b1", blk.ff.slices[i].b1);
      out.emplace_back(sp + "w2", blk.ff.slices[i].w2);
    }
    out.emplace_back(p + "ff.b2", blk.ff.b2);
    out.emplace_back(p + "ln_ff.alpha", blk.ln_ff.alpha);
    out.emplace_back(p + "ln_ff.beta", blk.ln_ff.beta);
  }
  out.emplace_back("out_w", out_w_);
  out.emplace_back("out_b", out_b_);
  return out;
}

std::vector<Var> Supernet::parameters() const {
  std::vector<Var> out;
  for (auto& [_, v] : named_parameters()) out.push_back(v);
  return out;
}

}  // namespace tfnas
