#pragma once

// Hard negatives: EDA-style augmentation and semantic mining of
// low-relevance neighbours, plus assembly of batches with a shared negative
// pool.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eer/corpus.hpp"
#include "eer/nn/tensor.hpp"
#include "eer/retrieval.hpp"

namespace eer::mining {

using EntityTable = std::map<std::string, std::vector<std::string>>;

struct AugmentConfig {
  EntityTable entity_table;
  double p_delete = 0.1;
  double p_duplicate = 0.1;
  int n_swaps = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class AugmentStrategy { entity_replacement, delete_duplicate, reorder };
const char* strategy_name(AugmentStrategy s);

struct AugmentedText {
  AugmentStrategy strategy;
  std::string text;
};

/// One variant per strategy, each applied independently to `text`.
/// Deterministic in (text, cfg, draw).
std::vector<AugmentedText> eda_augment(std::string_view text, const AugmentConfig& cfg,
                                       std::uint64_t draw = 0);

/// Token-level strategies. `replace_entity` swaps one matched entity (a token
/// run equal to a table key) for a table sibling and reports which key it
/// replaced; the others never add tokens.
std::vector<std::string> replace_entity(std::span<const std::string> tokens,
                                        const EntityTable& table, std::mt19937_64& rng,
                                        std::string* replaced_entity = nullptr);
std::vector<std::string> delete_duplicate(std::span<const std::string> tokens, double p_delete,
                                          double p_duplicate, std::mt19937_64& rng);
std::vector<std::string> reorder(std::span<const std::string> tokens, int n_swaps,
                                 std::mt19937_64& rng);

EntityTable load_entity_table(const std::filesystem::path& path);
void save_entity_table(const EntityTable& table, const std::filesystem::path& path);

struct MiningConfig {
  std::size_t k = 100;
  std::size_t m = 5;
  double lower = 0.4;
  double upper = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static MiningConfig from_json(const nlohmann::ordered_json& j);
};

/// Top-k neighbours kept when lower <= cos < upper and not relevant to the
/// query, then up to m sampled uniformly. Order is sampling order.
std::vector<retrieval::ScoredDoc> mine_semantic_negatives(const std::string& query_id,
                                                          const nn::Matrix& query_embedding,
                                                          const retrieval::VectorIndex& index,
                                                          const corpus::Corpus& corpus,
                                                          const MiningConfig& cfg);

struct TrainExample {
  std::string query_id;
  std::string pos_doc_id;
  std::vector<std::string> hard_neg_doc_ids;
  friend bool operator==(const TrainExample&, const TrainExample&) = default;
};

/// One example per positive pair, in pair-file order, without hard negatives.
std::vector<TrainExample> positive_examples(const corpus::Corpus& corpus);

void save_train_examples(std::span<const TrainExample> examples,
                         const std::filesystem::path& path);
std::vector<TrainExample> load_train_examples(const std::filesystem::path& path,
                                              const corpus::Corpus& corpus);

/// One negative-pool entry: a corpus document, or an augmented text owned by
/// a single query.
struct PoolEntry {
  std::string doc_id;  // empty for augmented texts
  std::string text;
  int owner = -1;
};

struct TrainBatch {
  std::vector<std::string> query_ids;
  std::vector<std::string> pos_doc_ids;
  std::vector<PoolEntry> pool;
  /// N x N: positive j counts as a negative for query i (always true on the diagonal).
  nn::Mask allpos_valid;
  /// N x M: pool entry m is a valid negative for query i.
  nn::Mask neg_valid;
  /// N x M: pool entry m is one of query i's own negatives.
  nn::Mask neg_own;
};

/// Pool = union of the examples' hard negatives (first-seen order) followed by
/// `random_negatives` titles drawn without replacement from the rest of the
/// corpus. Docs relevant to a query are masked out of its rows.
TrainBatch assemble_batch(std::span<const TrainExample> examples, const corpus::Corpus& corpus,
                          std::size_t random_negatives, std::mt19937_64& rng);

/// Appends a text negative that only query `owner` scores.
void add_owned_negative(TrainBatch& batch, int owner, std::string text);

}  // namespace eer::mining
