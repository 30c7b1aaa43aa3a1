#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tfnas/components.hpp"
#include "tfnas/connectors.hpp"
#include "tfnas/search_space.hpp"

namespace tfnas {

struct TransformerBlock {
  std::vector<AttentionHead> heads;
  Var attn_bias;  // [1, h], added once after the attention chain
  LayerNorm ln_attn;
  FeedForward ff;
  LayerNorm ln_ff;
};

// Resolved architecture weights of one block.
struct BlockArch {
  std::vector<ArchWeight> head;
  std::vector<HeadGates> head_slices;
  std::vector<ArchWeight> head_connection;  // heads - 1
  std::vector<ArchWeight> ff;
  std::vector<ArchWeight> ff_connection;    // m_ff - 1
  ArchWeight ln_attn_mean = ArchWeight::fixed(1);
  ArchWeight ln_ff_mean = ArchWeight::fixed(1);
};

// Architecture weights of a whole network: slot values, optionally backed by
// relaxed [1,1] parameters (one per slot) for direct optimization.
struct ArchBinding {
  const SearchSpace* space = nullptr;
  const ArchParams* values = nullptr;
  const std::vector<Var>* relaxed = nullptr;
};

BlockArch bind_block(const ArchBinding& binding, std::size_t block);

// Dropout applied to each chain unit output; inactive when rng is null.
struct DropoutSpec {
  Real rate = 0;
  Rng* rng = nullptr;
};

// LN o Omega o (Psi-chain over FF slices) o LN o Omega o (Psi-chain over heads).
Var assemble_block(const TransformerBlock& block, const Var& x, std::size_t seq_len,
                   const BlockArch& arch, const DropoutSpec& dropout = {});

TransformerBlock make_block(const SearchSpaceConfig& cfg, Rng& rng, Real init_scale = 1);

enum class OutputKind { Sequence, Token };

struct ModelConfig {
  SearchSpaceConfig space;
  std::size_t vocab = 16;
  std::size_t max_len = 16;
  std::size_t num_classes = 2;
  OutputKind output = OutputKind::Sequence;
  Real dropout = 0;
  Real init_scale = 1;
};

// The one-shot network: embeddings, searchable blocks and a classifier.
// Holds its parameters by shared handle; use clone() for an independent copy.
class Supernet {
 public:
  Supernet(ModelConfig cfg, Rng& init_rng);
  Supernet(Supernet&&) = default;
  Supernet& operator=(Supernet&&) = default;
  Supernet(const Supernet&) = delete;
  Supernet& operator=(const Supernet&) = delete;

  Supernet clone() const;

  const ModelConfig& config() const { return cfg_; }
  std::vector<TransformerBlock>& blocks() { return blocks_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

  // tokens holds B sequences of length seq_len back to back. Returns
  // [B, classes] for sequence outputs, [B*seq_len, classes] for token outputs.
  Var forward(const std::vector<int>& tokens, std::size_t seq_len, const ArchBinding& arch,
              Rng* dropout_rng = nullptr) const;

  // Hidden states after the embeddings, for block-level tests.
  Var embed(const std::vector<int>& tokens, std::size_t seq_len) const;
  Var classify(const Var& hidden, std::size_t seq_len) const;

  std::vector<std::pair<std::string, Var>> named_parameters() const;
  std::vector<Var> parameters() const;

 private:
  Supernet() = default;

  ModelConfig cfg_;
  Var tok_emb_;
  Var pos_emb_;
  std::vector<TransformerBlock> blocks_;
  Var out_w_;
  Var out_b_;
};

}  // namespace tfnas
