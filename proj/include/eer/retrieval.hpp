#pragma once

// Exact cosine index over title embeddings, BM25 baseline, and TREC-style run
// files. Rankings order by score descending, then doc_id ascending.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "eer/corpus.hpp"
#include "eer/model.hpp"
#include "eer/text.hpp"

namespace eer::retrieval {

using nn::Matrix;

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

/// True when a ranks strictly before b under the tie rule.
bool ranks_before(const ScoredDoc& a, const ScoredDoc& b);

struct RankedList {
  std::vector<ScoredDoc> items;
  /// Set when fewer than the requested k documents exist.
  bool truncated = false;

  std::vector<std::string> ids() const;
};

/// Hash of a pack's configuration and parameter bytes.
std::string encoder_fingerprint(const model::InferencePack& pack);

class VectorIndex {
 public:
  VectorIndex() = default;
  /// Embeddings are stored at float32 precision, as on disk.
  VectorIndex(std::vector<std::string> doc_ids, Matrix embeddings, std::string encoder_fingerprint,
              std::string vocab_fingerprint);

  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const Matrix& embeddings() const { return embeddings_; }
  std::size_t size() const { return doc_ids_.size(); }
  Eigen::Index dimension() const { return embeddings_.cols(); }
  const std::string& encoder_fingerprint() const { return encoder_fingerprint_; }
  const std::string& vocab_fingerprint() const { return vocab_fingerprint_; }

  /// Top-k by cosine against one query embedding (1 x d).
  RankedList search(const Matrix& query_embedding, std::size_t k) const;

  /// index.manifest.json + index.bin + doc_ids.txt
  void save(const std::filesystem::path& dir) const;
  static VectorIndex load(const std::filesystem::path& dir);

 private:
  std::vector<std::string> doc_ids_;
  Matrix embeddings_;
  Eigen::VectorXd norms_;
  std::string encoder_fingerprint_;
  std::string vocab_fingerprint_;
};

/// Encodes texts with the pack's title (or query) tower in evaluation mode.
Matrix embed_titles(const model::InferencePack& pack, const text::Vocab& vocab,
                    const std::vector<std::string>& texts);
Matrix embed_queries(const model::InferencePack& pack, const text::Vocab& vocab,
                     const std::vector<std::string>& texts);

VectorIndex build_index(const model::InferencePack& pack,
                        const std::vector<corpus::Document>& documents, const text::Vocab& vocab);

/// Throws when the index was built by a different pack.
RankedList search(const VectorIndex& index, const model::InferencePack& pack,
                  const text::Vocab& vocab, const std::string& query_text, std::size_t k);

/// Full scan and full sort; independent of VectorIndex.
RankedList brute_force_search(const model::InferencePack& pack,
                              const std::vector<corpus::Document>& documents,
                              const text::Vocab& vocab, const std::string& query_text,
                              std::size_t k);

struct BM25Params {
  double k1 = 1.2;
  double b = 0.75;
  void validate() const;
};

class BM25Index {
 public:
  BM25Index(const std::vector<corpus::Document>& documents, BM25Params params = {});

  /// Lucene-style idf: ln(1 + (N - df + 0.5) / (df + 0.5)).
  double idf(const std::string& term) const;
  double score(const std::vector<std::string>& query_terms, std::size_t doc) const;
  RankedList rank(const std::string& query_text, std::size_t k) const;

  std::size_t size() const { return doc_ids_.size(); }
  double average_length() const { return avg_len_; }

 private:
  BM25Params params_;
  std::vector<std::string> doc_ids_;
  std::vector<std::unordered_map<std::string, int>> tf_;
  std::vector<double> lengths_;
  std::unordered_map<std::string, int> df_;
  double avg_len_ = 0.0;
};

using Run = std::map<std::string, RankedList>;

/// query_id<TAB>doc_id<TAB>rank<TAB>score, queries in map order.
void write_run(const std::filesystem::path& path, const Run& run);

}  // namespace eer::retrieval
