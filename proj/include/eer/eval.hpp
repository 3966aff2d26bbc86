#pragma once

// Ranking metrics (hit@k, MRR@k, AUC), run-file evaluation, reports, and
// embedding export.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eer/corpus.hpp"
#include "eer/model.hpp"
#include "eer/retrieval.hpp"

namespace eer::eval {

/// 1 if any relevant doc is within the first k ids, else 0.
double recall_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant,
                   std::size_t k);
/// 1 / rank of the first relevant doc within the first k ids, else 0.
double mrr_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant,
                std::size_t k = 10);

struct ScoredLabel {
  double score = 0.0;
  int label = 0;
};

/// Exact wins and ties over all positive/negative pairs.
struct AucCounts {
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  std::uint64_t wins = 0;
  std::uint64_t ties = 0;
  double value() const;
};

AucCounts auc_counts(std::span<const ScoredLabel> pairs);
/// P(random positive outscores random negative), ties count one half.
/// Throws when either class is absent.
double auc(std::span<const ScoredLabel> pairs);
/// Mean of per-group AUC over groups holding both classes.
double auc_stratified(const std::map<std::string, std::vector<ScoredLabel>>& groups);

/// query_id -> relevant doc ids, plus every labelled pair for AUC.
struct Qrels {
  std::map<std::string, std::set<std::string>> relevant;
  std::vector<corpus::LabeledPair> pairs;

  static Qrels from_pairs(std::span<const corpus::LabeledPair> pairs);
  /// query_id<TAB>doc_id<TAB>label
  static Qrels load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct SystemMetrics {
  std::string system;
  std::map<std::size_t, double> recall;  // k -> R@k
  double mrr10 = 0.0;
  std::optional<double> auc;
  std::size_t n_queries = 0;
  std::string config_hash;

  nlohmann::ordered_json to_json() const;
};

struct EvalOptions {
  std::vector<std::size_t> ks = {1, 10, 50};
  bool stratified_auc = false;
};

/// Metrics for a run over every qrels query with at least one relevant doc.
/// Queries absent from the run score 0. AUC uses the labelled pairs; a pair
/// whose doc is missing from the query's ranking scores below every ranked doc.
SystemMetrics evaluate(const retrieval::Run& run, const Qrels& qrels, const EvalOptions& opts,
                       std::string system = "run");

/// Parses a TSV run and rejects broken ordering (ranks not 1..n, increasing
/// scores, tie order, duplicate docs).
retrieval::Run read_run(const std::filesystem::path& path);
SystemMetrics evaluate_run(const std::filesystem::path& run_path, const Qrels& qrels,
                           const EvalOptions& opts);

struct Report {
  std::string title;
  std::vector<SystemMetrics> systems;

  nlohmann::ordered_json to_json() const;
  /// Fixed-width text table, one row per system.
  std::string to_table() const;
};

/// id<TAB>v1<TAB>v2... one row per text.
void export_embeddings(const nn::Matrix& embeddings, std::span<const std::string> ids,
                       const std::filesystem::path& path);

}  // namespace eer::eval
