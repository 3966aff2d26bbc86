#pragma once

// Synthetic real-time-search corpus: terse queries and verbose, noisy titles
// rendered from shared latent events. Relevance = same event.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "eer/event.hpp"

namespace eer::corpus {

struct Document {
  std::string doc_id;
  std::string title;
  std::optional<std::string> event_id;
  friend bool operator==(const Document&, const Document&) = default;
};

struct Query {
  std::string query_id;
  std::string text;
  std::optional<std::string> event_id;
  friend bool operator==(const Query&, const Query&) = default;
};

struct LabeledPair {
  std::string query_id;
  std::string doc_id;
  int label = 0;
  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct GeneratorSpec {
  int n_events = 200;
  int entity_pool = 40;
  int verb_pool = 16;
  int object_pool = 60;
  int queries_per_event = 2;
  int titles_per_event = 3;
  double hashtag_rate = 0.3;
  double prefix_rate = 0.3;
  double subject_drop_rate = 0.3;
  double synonym_swap_rate = 0.5;
  /// Sampled irrelevant titles per relevant one in the pair file.
  int negatives_per_positive = 3;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static GeneratorSpec from_json(const nlohmann::ordered_json& j);
};

class Corpus {
 public:
  std::vector<Document> documents;
  std::vector<Query> queries;
  std::vector<LabeledPair> pairs;
  /// doc_id -> the triple its title was rendered from.
  std::map<std::string, EventTriple> gold_events;

  /// Checks id uniqueness, label domain, and that every referenced id exists.
  void validate() const;
  /// Rebuilds lookup tables; call after mutating the vectors.
  void reindex();

  const Document& document(const std::string& doc_id) const;
  const Query& query(const std::string& query_id) const;
  bool has_document(const std::string& doc_id) const { return doc_index_.count(doc_id) > 0; }
  bool has_query(const std::string& query_id) const { return query_index_.count(query_id) > 0; }
  /// Docs labeled 1 for the query.
  const std::unordered_set<std::string>& relevant(const std::string& query_id) const;
  std::optional<EventTriple> gold_event(const std::string& doc_id) const;
  std::vector<std::string> titles() const;
  /// Distinct event ids in first-seen document order.
  std::vector<std::string> event_ids() const;

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.documents == b.documents && a.queries == b.queries && a.pairs == b.pairs &&
           a.gold_events == b.gold_events;
  }

 private:
  std::unordered_map<std::string, std::size_t> doc_index_;
  std::unordered_map<std::string, std::size_t> query_index_;
  std::unordered_map<std::string, std::unordered_set<std::string>> relevant_;
};

/// Vocabulary of the synthetic world, a pure function of the spec.
struct WorldPools {
  struct Named {
    std::string canonical;
    std::string alias;
  };
  std::vector<Named> entities;
  std::vector<Named> objects;
  /// Each verb concept has interchangeable surface forms; [0] is canonical.
  std::vector<std::vector<std::string>> verbs;
};

WorldPools build_pools(const GeneratorSpec& spec);
/// Every verb surface form, one per entry.
std::vector<std::string> verb_lexicon(const GeneratorSpec& spec);
/// Entity surface -> sibling entities, for knowledge augmentation.
std::map<std::string, std::vector<std::string>> entity_table(const GeneratorSpec& spec,
                                                             int siblings = 5);

Corpus generate_corpus(const GeneratorSpec& spec);
/// Renders a title with every noise knob off: "subject trigger object".
std::string render_clean_title(const EventTriple& event);

/// Event-disjoint split. The test side receives floor(n * fraction) events,
/// clamped so both sides keep at least one.
std::pair<Corpus, Corpus> split_by_event(const Corpus& corpus, double test_fraction,
                                         std::uint64_t seed);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);
std::vector<LabeledPair> load_pairs(const std::filesystem::path& path);

}  // namespace eer::corpus
