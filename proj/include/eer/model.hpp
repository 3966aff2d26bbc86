#pragma once

// Dual-tower transformer encoder with a train-time generative decoder.
//
// Towers are pre-LN transformer encoders pooled at [CLS] (or by masked mean)
// through a tanh dense head. The decoder mirrors the title tower layer for
// layer, adds cross-attention over title token states, and projects to the
// vocabulary. Exporting drops the decoder.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eer/nn/tensor.hpp"
#include "eer/text.hpp"

namespace eer::model {

using nn::Matrix;
using nn::Var;
using text::TokenSeq;

enum class Pooling { cls, mean };

struct EncoderConfig {
  int n_layers = 2;
  int hidden_size = 64;
  int n_heads = 4;
  int ff_size = 128;
  int max_len = 64;
  int vocab_size = 0;
  int n_prompt_slots = 4;
  double dropout = 0.0;
  Pooling pooling = Pooling::cls;
  bool tie_towers = false;
  std::uint64_t seed = 1;

  void validate() const;
  /// 2 layers, 64 hidden.
  static EncoderConfig desk(int vocab_size);
  /// 12 layers, 768 hidden. Documentation only; nothing loads these weights.
  static EncoderConfig paper_scale(int vocab_size);

  nlohmann::ordered_json to_json() const;
  static EncoderConfig from_json(const nlohmann::ordered_json& j);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerNormWeights {
  Var gamma, beta;
};
struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FeedForwardWeights {
  Var w1, b1, w2, b2;
};

struct EncoderLayerWeights {
  LayerNormWeights ln_attn;
  AttentionWeights attn;
  LayerNormWeights ln_ffn;
  FeedForwardWeights ffn;
};

using ParamVisitor = std::function<void(const std::string&, const Var&)>;

struct TowerWeights {
  Var token_embedding;
  Var position_embedding;
  std::vector<EncoderLayerWeights> layers;
  LayerNormWeights ln_final;
  Var pool_w, pool_b;

  void visit(const std::string& prefix, const ParamVisitor& fn) const;
  TowerWeights clone() const;
};

struct DecoderLayerWeights {
  LayerNormWeights ln_self;
  AttentionWeights self_attn;
  LayerNormWeights ln_cross;
  AttentionWeights cross_attn;
  LayerNormWeights ln_ffn;
  FeedForwardWeights ffn;
};

struct Seq2SeqWeights {
  Var token_embedding;
  Var position_embedding;
  /// One trainable row per continuous prompt slot [P1..Pn].
  Var prompt_embedding;
  std::vector<DecoderLayerWeights> layers;
  LayerNormWeights ln_final;
  Var out_w, out_b;

  void visit(const std::string& prefix, const ParamVisitor& fn) const;
};

/// Training-mode switch and dropout RNG. Default is evaluation mode.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

struct TowerOutput {
  Var states;  // L x H, one row per input position
  Var pooled;  // 1 x H
  Eigen::Index valid = 0;
};

/// Positions after the first [PAD] are masked; trailing [PAD]s do not change
/// the output.
TowerOutput run_tower(const TowerWeights& tower, const EncoderConfig& cfg, const TokenSeq& seq,
                      const ForwardContext& ctx = {});
/// Stacked pooled embeddings, one row per sequence.
Var encode(const TowerWeights& tower, const EncoderConfig& cfg, std::span<const TokenSeq> batch,
           const ForwardContext& ctx = {});

std::pair<std::shared_ptr<TowerWeights>, std::shared_ptr<TowerWeights>> init_dual_encoder(
    const EncoderConfig& cfg);
/// Copies embeddings, self-attention, FFN and norms from the tower; seeds
/// cross-attention, prompt rows and the output projection fresh.
Seq2SeqWeights init_decoder_from_encoder(const TowerWeights& title_tower,
                                         const EncoderConfig& cfg);

/// Teacher-forced logits, (positions x vocab). Row t scores token t given
/// tokens < t; row 0 is a constant zero row since [CLS] is given.
Var decoder_forward(const Seq2SeqWeights& decoder, const EncoderConfig& cfg,
                    const Var& encoder_states, Eigen::Index encoder_valid, const TokenSeq& input,
                    const ForwardContext& ctx = {});

/// Argmax continuation of `prefix` until [SEP] or `max_steps` tokens. The
/// returned sequence excludes the prefix and the closing [SEP].
TokenSeq greedy_decode(const Seq2SeqWeights& decoder, const EncoderConfig& cfg,
                       const Var& encoder_states, Eigen::Index encoder_valid,
                       const TokenSeq& prefix, int max_steps);

struct NamedParameter {
  std::string name;
  Var var;
};

/// Full train-time model.
class DualEncoderModel {
 public:
  DualEncoderModel() = default;
  /// Fresh towers (equal values, separate parameters unless tied) + decoder
  /// initialised from the title tower.
  DualEncoderModel(const EncoderConfig& cfg, std::string vocab_fingerprint);

  EncoderConfig config;
  std::shared_ptr<TowerWeights> query_tower;
  std::shared_ptr<TowerWeights> title_tower;  // same object as query_tower when tied
  std::shared_ptr<Seq2SeqWeights> decoder;
  std::string vocab_fingerprint;

  bool tied() const { return query_tower == title_tower; }
  /// Unique parameters in a fixed order (tied towers appear once).
  std::vector<NamedParameter> parameters() const;
  std::vector<NamedParameter> decoder_parameters() const;
  void zero_grad() const;

  Var encode_queries(std::span<const TokenSeq> batch, const ForwardContext& ctx = {}) const;
  Var encode_titles(std::span<const TokenSeq> batch, const ForwardContext& ctx = {}) const;
};

/// Decoder-free dual tower for indexing and serving. Immutable; encode calls
/// are safe from concurrent threads.
class InferencePack {
 public:
  InferencePack(EncoderConfig cfg, std::shared_ptr<const TowerWeights> query_tower,
                std::shared_ptr<const TowerWeights> title_tower, std::string vocab_fingerprint);

  Matrix encode_queries(std::span<const TokenSeq> batch) const;
  Matrix encode_titles(std::span<const TokenSeq> batch) const;

  const EncoderConfig& config() const { return config_; }
  const std::string& vocab_fingerprint() const { return fingerprint_; }
  int embedding_dim() const { return config_.hidden_size; }
  bool tied() const { return query_tower_ == title_tower_; }
  std::vector<NamedParameter> parameters() const;

 private:
  EncoderConfig config_;
  std::shared_ptr<const TowerWeights> query_tower_;
  std::shared_ptr<const TowerWeights> title_tower_;
  std::string fingerprint_;
};

/// Deep copy of both towers; later training does not affect the pack.
InferencePack export_inference(const DualEncoderModel& model);

/// Directory with manifest.json + weights.bin, written atomically.
void save_checkpoint(const DualEncoderModel& model, const std::filesystem::path& dir);
DualEncoderModel load_checkpoint(const std::filesystem::path& dir,
                                 const std::optional<std::string>& expected_fingerprint = {});
void save_inference_pack(const InferencePack& pack, const std::filesystem::path& dir);
/// Accepts either a pack or a full checkpoint (whose decoder is dropped).
InferencePack load_inference_pack(const std::filesystem::path& dir,
                                  const std::optional<std::string>& expected_fingerprint = {});

}  // namespace eer::model
