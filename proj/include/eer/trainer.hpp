#pragma once

// Training loop, ablation suite, and prompt-template search.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eer/corpus.hpp"
#include "eer/eval.hpp"
#include "eer/losses.hpp"
#include "eer/mining.hpp"
#include "eer/model.hpp"
#include "eer/text.hpp"

namespace eer::trainer {

/// Loss components switched on for a run.
struct Toggles {
  bool cl = false;    // query-title contrastive
  bool pair = false;  // query-title pairwise hinge
  bool gd = false;    // event generation by the decoder
  bool gp = false;    // prompt template around the decoder input
  bool qer = false;   // query-event contrastive

  /// Comma list of CL, PAIR, GD, GP, QER (case-insensitive); "" or "none" is empty.
  static Toggles parse(const std::string& list);
  static Toggles eer() { return {true, true, true, true, true}; }
  std::string to_string() const;
  bool any() const { return cl || pair || gd || qer; }
  friend bool operator==(const Toggles&, const Toggles&) = default;
};

enum class EventSource { gold, decoded };

struct AugmentSettings {
  bool enabled = true;
  /// Probability that a query or positive-title input is replaced by an
  /// edited or reordered variant.
  double input_rate = 0.0;
  double p_delete = 0.1;
  double p_duplicate = 0.1;
  int n_swaps = 1;
  /// Adds the entity-replaced positive as an owned negative when the
  /// replaced entity also occurs in the query.
  bool entity_negatives = true;
};

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Toggles toggles = Toggles::eer();
  EventSource event_source = EventSource::gold;
  std::string template_id = text::kBestTemplateId;
  losses::LossConfig loss;
  model::EncoderConfig model;  // vocab_size is taken from the vocabulary
  bool mine = true;
  int mine_every = 1;
  mining::MiningConfig mining;
  std::size_t random_negatives = 8;
  AugmentSettings augment;
  int decode_max_steps = 16;
  std::vector<std::size_t> eval_ks = {1, 10, 50};
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Unknown keys are rejected; absent keys keep their defaults.
  static TrainConfig from_json(const nlohmann::ordered_json& j);
  static TrainConfig load(const std::filesystem::path& path);
  /// Hash of the canonical JSON.
  std::string hash() const;
};

/// Everything besides the corpus that a run reads.
struct Resources {
  const text::Vocab* vocab = nullptr;
  text::TemplateRegistry templates = text::TemplateRegistry::builtin();
  mining::EntityTable entity_table;
  text::VerbLexicon verbs;
};

/// Vocabulary over the titles, queries and serialized gold events of the
/// given corpora, plus every builtin template literal and event separator.
text::Vocab::BuildResult build_vocab(std::span<const corpus::Corpus* const> corpora, int min_freq,
                                     int prompt_slots = 4);

/// Token-level batch ready for the forward pass.
struct PreparedBatch {
  std::vector<text::TokenSeq> queries;
  std::vector<text::TokenSeq> positives;
  std::vector<text::TokenSeq> pool;
  nn::Mask allpos_valid, neg_valid, neg_own;
  std::vector<text::DecoderTarget> targets;  // empty unless GD
  /// Gold (or extracted) event per example; drives generation and gold QER.
  std::vector<std::optional<EventTriple>> events;
};

PreparedBatch prepare_batch(const mining::TrainBatch& batch, const corpus::Corpus& corpus,
                            const TrainConfig& cfg, const Resources& res, std::mt19937_64& rng);

/// Forward pass over every enabled component. With `backward`, gradients of
/// the weighted total (or of `only`, when given, unweighted) accumulate into
/// the model parameters.
enum class Component { cl_qt, pair_qt, gen, cl_qe };
losses::LossBreakdown forward_backward(const model::DualEncoderModel& model,
                                       const PreparedBatch& batch, const TrainConfig& cfg,
                                       const Resources& res, const model::ForwardContext& ctx,
                                       bool backward, std::optional<Component> only = {});

struct EpochRecord {
  int epoch = 0;
  losses::LossBreakdown mean;
  std::optional<eval::SystemMetrics> metrics;
  std::size_t mined_negatives = 0;
  double seconds = 0.0;
  nlohmann::ordered_json to_json() const;
};

struct TrainLog {
  std::vector<losses::LossBreakdown> steps;
  std::vector<EpochRecord> epochs;
  double prompt_grad_norm = 0.0;  // mean per-step norm of the prompt-slot gradient
  double seconds = 0.0;
};

struct TrainResult {
  model::DualEncoderModel model;
  TrainLog log;
};

/// Trains on `train`. When `test` is given, every epoch evaluates its queries
/// against `index_docs` (all titles). With `out_dir`, writes per-epoch
/// checkpoints, step and epoch logs.
TrainResult train(const TrainConfig& cfg, const corpus::Corpus& train,
                  const corpus::Corpus* test, const std::vector<corpus::Document>& index_docs,
                  const Resources& res,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Dense retrieval metrics for `queries` (with its pairs as qrels) over
/// `docs`. Rankings cover all docs, so AUC sees every labelled pair.
eval::SystemMetrics evaluate_dense(const model::InferencePack& pack, const text::Vocab& vocab,
                                   const corpus::Corpus& queries,
                                   const std::vector<corpus::Document>& docs,
                                   const std::vector<std::size_t>& ks, std::string name);
eval::SystemMetrics evaluate_bm25(const corpus::Corpus& queries,
                                  const std::vector<corpus::Document>& docs,
                                  const std::vector<std::size_t>& ks, std::string name = "BM25");

struct AblationRow {
  std::string name;
  Toggles toggles;
  std::string config_hash;
  std::vector<eval::SystemMetrics> per_seed;
  eval::SystemMetrics mean;
  std::optional<eval::SystemMetrics> stddev;  // when more than one seed
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  std::optional<eval::SystemMetrics> bm25;
  nlohmann::ordered_json to_json() const;
  std::string to_tsv() const;
  std::string to_table() const;
};

/// The toggle lattice: base, base+CL, base+CL+GD, base+CL+GD+GP,
/// base+CL+GD+QER, EER.
std::vector<std::pair<std::string, Toggles>> ablation_lattice();

AblationReport run_ablation_suite(const TrainConfig& base, const corpus::Corpus& train,
                                  const corpus::Corpus& test,
                                  const std::vector<corpus::Document>& index_docs,
                                  const Resources& res, const std::vector<std::uint64_t>& seeds);

struct PromptRow {
  std::string template_id;
  text::TemplateKind kind;
  std::string config_hash;
  eval::SystemMetrics metrics;
  double prompt_grad_norm = 0.0;
};

struct PromptReport {
  std::vector<PromptRow> rows;
  nlohmann::ordered_json to_json() const;
  std::string to_tsv() const;
  std::string to_table() const;
};

PromptReport run_prompt_search(const TrainConfig& base, const std::vector<std::string>& template_ids,
                               const corpus::Corpus& train, const corpus::Corpus& test,
                               const std::vector<corpus::Document>& index_docs,
                               const Resources& res);

}  // namespace eer::trainer
