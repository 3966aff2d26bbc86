#include "eer/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <queue>
#include <sstream>
#include <unordered_set>

#include "eer/error.hpp"
#include "eer/nn/archive.hpp"
#include "eer/util.hpp"

namespace eer::retrieval {

namespace {

constexpr double kMinNorm = 1e-12;
constexpr const char* kManifest = "index.manifest.json";
constexpr const char* kBlob = "index.bin";
constexpr const char* kDocIds = "doc_ids.txt";

double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a, double a_norm,
              const Eigen::Ref<const Eigen::RowVectorXd>& b, double b_norm) {
  return a.dot(b) / (std::max(a_norm, kMinNorm) * std::max(b_norm, kMinNorm));
}

std::vector<text::TokenSeq> encoder_inputs(const std::vector<std::string>& texts,
                                           const text::Vocab& vocab, std::size_t max_len) {
  std::vector<text::TokenSeq> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(text::encoder_input(t, vocab, max_len));
  return seqs;
}

void check_vocab(const model::InferencePack& pack, const text::Vocab& vocab) {
  if (pack.vocab_fingerprint() != vocab.fingerprint()) {
    throw ValidationError("vocab fingerprint mismatch: pack expects " + pack.vocab_fingerprint() +
                          ", vocab is " + vocab.fingerprint());
  }
}

}  // namespace

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

std::vector<std::string> RankedList::ids() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.doc_id);
  return out;
}

std::string encoder_fingerprint(const model::InferencePack& pack) {
  std::uint64_t h = fnv1a64(pack.config().to_json().dump());
  for (const auto& p : pack.parameters()) {
    h = fnv1a64(p.name, h);
    const Matrix& m = p.var.value();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const float f = static_cast<float>(m.data()[i]);
      char bytes[sizeof(float)];
      std::memcpy(bytes, &f, sizeof(float));
      h = fnv1a64(std::string_view(bytes, sizeof(float)), h);
    }
  }
  return hex64(h);
}

// --- vector index ---------------------------------------------------------------------

VectorIndex::VectorIndex(std::vector<std::string> doc_ids, Matrix embeddings, std::string enc_fp,
                         std::string vocab_fp)
    : doc_ids_(std::move(doc_ids)),
      embeddings_(std::move(embeddings)),
      encoder_fingerprint_(std::move(enc_fp)),
      vocab_fingerprint_(std::move(vocab_fp)) {
  if (static_cast<Eigen::Index>(doc_ids_.size()) != embeddings_.rows()) {
    throw ValidationError("index: doc_id count does not match embedding rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : doc_ids_) {
    if (!seen.insert(id).second) throw ValidationError("index: duplicate doc_id " + id);
  }
  nn::round_to_float(embeddings_);
  norms_ = embeddings_.rowwise().norm();
}

RankedList VectorIndex::search(const Matrix& query, std::size_t k) const {
  if (k < 1) throw ValidationError("search: k must be >= 1");
  if (query.rows() != 1 || query.cols() != dimension()) {
    throw ValidationError("search: query embedding dimension mismatch");
  }
  const Eigen::RowVectorXd q = query.row(0);
  const double q_norm = q.norm();
  RankedList out;
  out.truncated = k > size();
  const std::size_t keep = std::min(k, size());
  // Max-heap on "worst first" keeps the current top-k.
  auto worse = [](const ScoredDoc& a, const ScoredDoc& b) { return ranks_before(a, b); };
  std::priority_queue<ScoredDoc, std::vector<ScoredDoc>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    ScoredDoc cand{doc_ids_[i], cosine(q, q_norm, embeddings_.row(r), norms_(r))};
    if (heap.size() < keep) {
      heap.push(std::move(cand));
    } else if (keep > 0 && ranks_before(cand, heap.top())) {
      heap.pop();
      heap.push(std::move(cand));
    }
  }
  out.items.resize(heap.size());
  for (auto i = heap.size(); i-- > 0;) {
    out.items[i] = heap.top();
    heap.pop();
  }
  return out;
}

void VectorIndex::save(const std::filesystem::path& dir) const {
  nn::TensorArchive a;
  a.meta["kind"] = "vector-index";
  a.meta["encoder_fingerprint"] = encoder_fingerprint_;
  a.meta["vocab_fingerprint"] = vocab_fingerprint_;
  a.meta["dimension"] = dimension();
  a.meta["size"] = size();
  a.tensors.push_back({"embeddings", embeddings_});
  std::string ids;
  for (const auto& id : doc_ids_) ids += id + "\n";
  write_dir_atomic(dir, [&](const std::filesystem::path& tmp) {
    nn::write_archive(tmp / kManifest, tmp / kBlob, a);
    write_file_atomic(tmp / kDocIds, ids);
  });
}

VectorIndex VectorIndex::load(const std::filesystem::path& dir) {
  auto a = nn::read_archive(dir / kManifest, dir / kBlob);
  std::vector<std::string> ids;
  for_each_line(dir / kDocIds, [&](std::string_view line, std::size_t) { ids.emplace_back(line); });
  try {
    return VectorIndex(std::move(ids), a.at("embeddings"),
                       a.meta.at("encoder_fingerprint").get<std::string>(),
                       a.meta.at("vocab_fingerprint").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("index " + dir.string() + ": malformed manifest: " + e.what());
  }
}

Matrix embed_titles(const model::InferencePack& pack, const text::Vocab& vocab,
                    const std::vector<std::string>& texts) {
  check_vocab(pack, vocab);
  const auto seqs = encoder_inputs(texts, vocab, static_cast<std::size_t>(pack.config().max_len));
  return pack.encode_titles(seqs);
}

Matrix embed_queries(const model::InferencePack& pack, const text::Vocab& vocab,
                     const std::vector<std::string>& texts) {
  check_vocab(pack, vocab);
  const auto seqs = encoder_inputs(texts, vocab, static_cast<std::size_t>(pack.config().max_len));
  return pack.encode_queries(seqs);
}

VectorIndex build_index(const model::InferencePack& pack,
                        const std::vector<corpus::Document>& documents, const text::Vocab& vocab) {
  if (documents.empty()) throw ValidationError("build_index: empty corpus");
  std::vector<std::string> ids, titles;
  for (const auto& d : documents) {
    ids.push_back(d.doc_id);
    titles.push_back(d.title);
  }
  Matrix emb = embed_titles(pack, vocab, titles);
  return VectorIndex(std::move(ids), std::move(emb), encoder_fingerprint(pack),
                     vocab.fingerprint());
}

RankedList search(const VectorIndex& index, const model::InferencePack& pack,
                  const text::Vocab& vocab, const std::string& query_text, std::size_t k) {
  if (index.encoder_fingerprint() != encoder_fingerprint(pack)) {
    throw ValidationError("search: index was built by a different encoder");
  }
  return index.search(embed_queries(pack, vocab, {query_text}), k);
}

RankedList brute_force_search(const model::InferencePack& pack,
                              const std::vector<corpus::Document>& documents,
                              const text::Vocab& vocab, const std::string& query_text,
                              std::size_t k) {
  if (k < 1) throw ValidationError("search: k must be >= 1");
  const Matrix q = embed_queries(pack, vocab, {query_text});
  const Eigen::RowVectorXd qv = q.row(0);
  RankedList out;
  for (const auto& d : documents) {
    const Matrix t = embed_titles(pack, vocab, {d.title});
    const Eigen::RowVectorXd tv = t.row(0);
    out.items.push_back({d.doc_id, cosine(qv, qv.norm(), tv, tv.norm())});
  }
  std::sort(out.items.begin(), out.items.end(), ranks_before);
  out.truncated = k > out.items.size();
  if (out.items.size() > k) out.items.resize(k);
  return out;
}

// --- BM25 ---------------------------------------------------------------------------

void BM25Params::validate() const {
  if (!(k1 > 0.0)) throw ValidationError("bm25: k1 must be > 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("bm25: b must be in [0,1]");
}

BM25Index::BM25Index(const std::vector<corpus::Document>& documents, BM25Params params)
    : params_(params) {
  params_.validate();
  if (documents.empty()) throw ValidationError("bm25: empty corpus");
  double total = 0.0;
  for (const auto& d : documents) {
    doc_ids_.push_back(d.doc_id);
    std::unordered_map<std::string, int> tf;
    const auto tokens = text::split_tokens(d.title);
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [t, n] : tf) ++df_[t];
    lengths_.push_back(static_cast<double>(tokens.size()));
    total += static_cast<double>(tokens.size());
    tf_.push_back(std::move(tf));
  }
  avg_len_ = total / static_cast<double>(documents.size());
}

double BM25Index::idf(const std::string& term) const {
  auto it = df_.find(term);
  const double df = it == df_.end() ? 0.0 : it->second;
  const double n = static_cast<double>(doc_ids_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double BM25Index::score(const std::vector<std::string>& query_terms, std::size_t doc) const {
  std::vector<std::string> terms = query_terms;
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  const auto& tf = tf_.at(doc);
  const double norm = params_.k1 * (1.0 - params_.b + params_.b * lengths_[doc] / avg_len_);
  double s = 0.0;
  for (const auto& t : terms) {
    auto it = tf.find(t);
    if (it == tf.end()) continue;
    const double f = it->second;
    s += idf(t) * f * (params_.k1 + 1.0) / (f + norm);
  }
  return s;
}

RankedList BM25Index::rank(const std::string& query_text, std::size_t k) const {
  if (k < 1) throw ValidationError("bm25: k must be >= 1");
  const auto terms = text::split_tokens(query_text);
  RankedList out;
  out.items.reserve(doc_ids_.size());
  for (std::size_t i = 0; i < doc_ids_.size(); ++i) out.items.push_back({doc_ids_[i], score(terms, i)});
  const std::size_t keep = std::min(k, out.items.size());
  std::partial_sort(out.items.begin(), out.items.begin() + static_cast<std::ptrdiff_t>(keep),
                    out.items.end(), ranks_before);
  out.truncated = k > out.items.size();
  out.items.resize(keep);
  return out;
}

void write_run(const std::filesystem::path& path, const Run& run) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& [qid, list] : run) {
    for (std::size_t r = 0; r < list.items.size(); ++r) {
      os << qid << '\t' << list.items[r].doc_id << '\t' << (r + 1) << '\t' << list.items[r].score
         << '\n';
    }
  }
  write_file_atomic(path, os.str());
}

}  // namespace eer::retrieval
