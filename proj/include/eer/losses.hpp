#pragma once

// Loss components over similarity matrices and decoder logits. Every function
// returns its value together with the gradient with respect to its inputs so
// the trainer can seed those gradients into the autograd tape.

#include <span>
#include <vector>

#include <json.hpp>

#include "eer/nn/tensor.hpp"
#include "eer/text.hpp"

namespace eer::losses {

using nn::Mask;
using nn::Matrix;

enum class GenNorm { per_token_mean, sum };
/// pooled: every query scores the whole shared negative pool.
/// per_query: each query scores only its own negatives.
enum class NegativeSharing { pooled, per_query };

struct LossConfig {
  double temperature = 0.05;
  double margin = 0.1;
  double w_cl_qt = 1.0;
  double w_pair = 1.0;
  double w_gen = 1.0;
  double w_cl_qe = 1.0;
  GenNorm gen_norm = GenNorm::per_token_mean;
  NegativeSharing sharing = NegativeSharing::pooled;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static LossConfig from_json(const nlohmann::ordered_json& j);
};

/// Similarities for one batch of N queries against N positives and a pool of
/// M negatives. all_pos(i, j) = cos(q_i, pos_j); neg(i, m) = cos(q_i, neg_m).
/// Masks mark which entries take part; empty masks mean "all entries". The
/// diagonal of all_pos always takes part.
struct BatchSimilarities {
  Matrix all_pos;
  Matrix neg;
  Mask allpos_valid;
  Mask neg_valid;
  /// Per-query own negatives, used by the pairwise loss and by per-query sharing.
  Mask neg_own;

  std::size_t batch_size() const { return static_cast<std::size_t>(all_pos.rows()); }
};

struct SimilarityLoss {
  double value = 0.0;
  Matrix d_all_pos;
  Matrix d_neg;
};

/// Mean over queries of -log softmax of the positive among valid positives and
/// valid negatives, at temperature tau.
SimilarityLoss contrastive(const BatchSimilarities& sims, double temperature);
/// Query-title contrastive loss; honours cfg.sharing.
SimilarityLoss contrastive_qt(const BatchSimilarities& sims, const LossConfig& cfg);
/// Query-event contrastive loss: all_pos holds cos(q_i, event_j); other
/// events in the batch are the negatives.
SimilarityLoss contrastive_qe(const BatchSimilarities& sims, const LossConfig& cfg);

/// Hinge for one query, averaged over its negatives. Empty list gives 0.
double pairwise_qt(double s_pos, std::span<const double> s_neg, double margin);
/// Batch form over the diagonal of all_pos and each query's own negatives.
SimilarityLoss pairwise_qt(const BatchSimilarities& sims, const LossConfig& cfg);

struct GenerationLoss {
  double value = 0.0;
  std::vector<Matrix> d_logits;
  std::size_t masked_tokens = 0;
};

/// Cross-entropy at loss-masked positions. logits[b] row t scores
/// targets[b].input_ids[t]. Throws when no position is masked in.
GenerationLoss generation_loss(std::span<const Matrix> logits,
                               std::span<const text::DecoderTarget> targets, GenNorm norm);

struct LossBreakdown {
  double cl_qt = 0.0;
  double pair_qt = 0.0;
  double gen = 0.0;
  double cl_qe = 0.0;
  double total = 0.0;
};

/// Weighted sum of the components.
LossBreakdown total_loss(double cl_qt, double pair_qt, double gen, double cl_qe,
                         const LossConfig& cfg);

/// One step-log line: {"step","cl_qt","pair_qt","gen","cl_qe","total"}.
nlohmann::ordered_json step_record(long step, const LossBreakdown& b);

}  // namespace eer::losses
