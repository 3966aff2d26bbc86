#include "eer/mining.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "eer/error.hpp"
#include "eer/text.hpp"
#include "eer/util.hpp"

namespace eer::mining {

using nlohmann::ordered_json;

// --- augmentation -----------------------------------------------------------------

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_delete) || !prob(p_duplicate) || p_delete + p_duplicate > 1.0) {
    throw ValidationError("augment config: p_delete, p_duplicate must be in [0,1] with sum <= 1");
  }
  if (n_swaps < 0) throw ValidationError("augment config: n_swaps must be >= 0");
  for (const auto& [k, v] : entity_table) {
    if (v.empty()) throw ValidationError("augment config: entity '" + k + "' has no replacements");
  }
}

const char* strategy_name(AugmentStrategy s) {
  switch (s) {
    case AugmentStrategy::entity_replacement: return "entity_replacement";
    case AugmentStrategy::delete_duplicate: return "delete_duplicate";
    case AugmentStrategy::reorder: return "reorder";
  }
  return "?";
}

std::vector<std::string> replace_entity(std::span<const std::string> tokens,
                                        const EntityTable& table, std::mt19937_64& rng,
                                        std::string* replaced_entity) {
  std::vector<std::string> out(tokens.begin(), tokens.end());
  struct Match {
    std::size_t pos;
    std::size_t len;
    const std::string* entity;
  };
  std::vector<Match> matches;
  for (const auto& [entity, siblings] : table) {
    const auto key = text::split_tokens(entity);
    if (key.empty() || key.size() > out.size()) continue;
    for (std::size_t i = 0; i + key.size() <= out.size(); ++i) {
      if (std::equal(key.begin(), key.end(), out.begin() + static_cast<std::ptrdiff_t>(i))) {
        matches.push_back({i, key.size(), &entity});
      }
    }
  }
  if (matches.empty()) return out;
  std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
    return a.pos != b.pos ? a.pos < b.pos : *a.entity < *b.entity;
  });
  std::uniform_int_distribution<std::size_t> pick_match(0, matches.size() - 1);
  const Match m = matches[pick_match(rng)];
  const auto& siblings = table.at(*m.entity);
  std::uniform_int_distribution<std::size_t> pick_sib(0, siblings.size() - 1);
  const auto replacement = text::split_tokens(siblings[pick_sib(rng)]);
  const auto first = out.begin() + static_cast<std::ptrdiff_t>(m.pos);
  out.erase(first, first + static_cast<std::ptrdiff_t>(m.len));
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(m.pos), replacement.begin(),
             replacement.end());
  if (replaced_entity) *replaced_entity = *m.entity;
  return out;
}

std::vector<std::string> delete_duplicate(std::span<const std::string> tokens, double p_delete,
                                          double p_duplicate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    const double r = u(rng);
    if (r < p_delete) continue;
    out.push_back(t);
    if (r < p_delete + p_duplicate) out.push_back(t);
  }
  if (out.empty()) out.assign(tokens.begin(), tokens.end());
  return out;
}

std::vector<std::string> reorder(std::span<const std::string> tokens, int n_swaps,
                                 std::mt19937_64& rng) {
  std::vector<std::string> out(tokens.begin(), tokens.end());
  if (out.size() < 2) return out;
  std::uniform_int_distribution<std::size_t> pick(0, out.size() - 2);
  for (int s = 0; s < n_swaps; ++s) {
    const auto i = pick(rng);
    std::swap(out[i], out[i + 1]);
  }
  return out;
}

std::vector<AugmentedText> eda_augment(std::string_view text, const AugmentConfig& cfg,
                                       std::uint64_t draw) {
  cfg.validate();
  const auto tokens = text::split_tokens(text);
  if (tokens.empty()) throw ValidationError("eda_augment: empty text");
  const std::uint64_t base = derive_seed(derive_seed(cfg.seed, text), draw);
  std::mt19937_64 r1(derive_seed(base, "entity")), r2(derive_seed(base, "edit")),
      r3(derive_seed(base, "reorder"));
  return {
      {AugmentStrategy::entity_replacement, text::join_tokens(replace_entity(tokens, cfg.entity_table, r1))},
      {AugmentStrategy::delete_duplicate,
       text::join_tokens(delete_duplicate(tokens, cfg.p_delete, cfg.p_duplicate, r2))},
      {AugmentStrategy::reorder, text::join_tokens(reorder(tokens, cfg.n_swaps, r3))},
  };
}

EntityTable load_entity_table(const std::filesystem::path& path) {
  EntityTable table;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    if (!j.is_object()) throw ValidationError(path.string() + ": entity table must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      table[k] = v.get<std::vector<std::string>>();
      if (table[k].empty()) {
        throw ValidationError(path.string() + ": entity '" + k + "' has no replacements");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return table;
}

void save_entity_table(const EntityTable& table, const std::filesystem::path& path) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : table) j[k] = v;
  write_file_atomic(path, j.dump(2) + "\n");
}

// --- semantic mining -------------------------------------------------------------------

void MiningConfig::validate() const {
  if (m < 1 || m * 10 > k) throw ValidationError("mining config: need 1 <= m <= k/10");
  if (!(lower >= -1.0 && lower < upper && upper <= 1.0)) {
    throw ValidationError("mining config: need -1 <= lower < upper <= 1");
  }
}

ordered_json MiningConfig::to_json() const {
  return {{"k", k}, {"m", m}, {"lower", lower}, {"upper", upper}, {"seed", seed}};
}

MiningConfig MiningConfig::from_json(const ordered_json& j) {
  MiningConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "k") c.k = v.get<std::size_t>();
      else if (key == "m") c.m = v.get<std::size_t>();
      else if (key == "lower") c.lower = v.get<double>();
      else if (key == "upper") c.upper = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("mining config: unknown field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("mining config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<retrieval::ScoredDoc> mine_semantic_negatives(const std::string& query_id,
                                                          const nn::Matrix& query_embedding,
                                                          const retrieval::VectorIndex& index,
                                                          const corpus::Corpus& corpus,
                                                          const MiningConfig& cfg) {
  cfg.validate();
  if (!corpus.has_query(query_id)) throw ValidationError("mining: unknown query " + query_id);
  const auto neighbours = index.search(query_embedding, cfg.k);
  const auto& relevant = corpus.relevant(query_id);
  std::vector<retrieval::ScoredDoc> survivors;
  for (const auto& n : neighbours.items) {
    if (!corpus.has_document(n.doc_id)) {
      throw ValidationError("mining: index doc " + n.doc_id + " is not in the corpus");
    }
    if (n.score >= cfg.lower && n.score < cfg.upper && !relevant.count(n.doc_id)) {
      survivors.push_back(n);
    }
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, query_id));
  std::shuffle(survivors.begin(), survivors.end(), rng);
  if (survivors.size() > cfg.m) survivors.resize(cfg.m);
  return survivors;
}

// --- examples ------------------------------------------------------------------------

std::vector<TrainExample> positive_examples(const corpus::Corpus& corpus) {
  std::vector<TrainExample> out;
  for (const auto& p : corpus.pairs) {
    if (p.label == 1) out.push_back({p.query_id, p.doc_id, {}});
  }
  return out;
}

void save_train_examples(std::span<const TrainExample> examples,
                         const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : examples) {
    ordered_json j{{"query_id", e.query_id},
                   {"pos_doc_id", e.pos_doc_id},
                   {"hard_neg_doc_ids", e.hard_neg_doc_ids}};
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<TrainExample> load_train_examples(const std::filesystem::path& path,
                                              const corpus::Corpus& corpus) {
  std::vector<TrainExample> out;
  for_each_line(path, [&](const std::string& line, std::size_t no) {
    const std::string where = path.string() + ":" + std::to_string(no) + ": ";
    TrainExample e;
    try {
      const auto j = nlohmann::json::parse(line);
      for (const auto& [key, v] : j.items()) {
        if (key == "query_id") e.query_id = v.get<std::string>();
        else if (key == "pos_doc_id") e.pos_doc_id = v.get<std::string>();
        else if (key == "hard_neg_doc_ids") e.hard_neg_doc_ids = v.get<std::vector<std::string>>();
        else throw ValidationError(where + "unknown field '" + key + "'");
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError(where + ex.what());
    }
    if (!corpus.has_query(e.query_id)) throw ValidationError(where + "unknown query " + e.query_id);
    if (!corpus.has_document(e.pos_doc_id)) {
      throw ValidationError(where + "unknown doc " + e.pos_doc_id);
    }
    for (const auto& d : e.hard_neg_doc_ids) {
      if (!corpus.has_document(d)) throw ValidationError(where + "unknown doc " + d);
      if (d == e.pos_doc_id) throw ValidationError(where + "positive listed as negative");
    }
    out.push_back(std::move(e));
  });
  return out;
}

// --- batches -----------------------------------------------------------------------------

TrainBatch assemble_batch(std::span<const TrainExample> examples, const corpus::Corpus& corpus,
                          std::size_t random_negatives, std::mt19937_64& rng) {
  if (examples.empty()) throw ValidationError("assemble_batch: no examples");
  if (examples.size() < 2) {
    spdlog::warn("assemble_batch: batch of 1 has no in-batch negatives");
  }
  TrainBatch b;
  std::unordered_set<std::string> in_pool, positives, batch_relevant;
  for (const auto& e : examples) {
    b.query_ids.push_back(e.query_id);
    b.pos_doc_ids.push_back(e.pos_doc_id);
    positives.insert(e.pos_doc_id);
    for (const auto& d : corpus.relevant(e.query_id)) batch_relevant.insert(d);
  }
  for (const auto& e : examples) {
    for (const auto& d : e.hard_neg_doc_ids) {
      if (in_pool.insert(d).second) b.pool.push_back({d, corpus.document(d).title, -1});
    }
  }
  const std::size_t n_hard = b.pool.size();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    const auto& id = corpus.documents[i].doc_id;
    if (!in_pool.count(id) && !positives.count(id) && !batch_relevant.count(id)) {
      candidates.push_back(i);
    }
  }
  const std::size_t take = std::min(random_negatives, candidates.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
    const auto& d = corpus.documents[candidates[i]];
    b.pool.push_back({d.doc_id, d.title, -1});
  }

  const auto n = static_cast<Eigen::Index>(examples.size());
  const auto m = static_cast<Eigen::Index>(b.pool.size());
  b.allpos_valid = nn::Mask::Constant(n, n, true);
  b.neg_valid = nn::Mask::Constant(n, m, true);
  b.neg_own = nn::Mask::Constant(n, m, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = examples[static_cast<std::size_t>(i)];
    const auto& rel = corpus.relevant(ex.query_id);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& pj = b.pos_doc_ids[static_cast<std::size_t>(j)];
      if (j != i && (rel.count(pj) || pj == ex.pos_doc_id)) b.allpos_valid(i, j) = false;
    }
    const std::unordered_set<std::string> own(ex.hard_neg_doc_ids.begin(),
                                              ex.hard_neg_doc_ids.end());
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto& d = b.pool[static_cast<std::size_t>(k)].doc_id;
      if (rel.count(d) || d == ex.pos_doc_id) b.neg_valid(i, k) = false;
      b.neg_own(i, k) = b.neg_valid(i, k) && (static_cast<std::size_t>(k) >= n_hard || own.count(d));
    }
  }
  return b;
}

void add_owned_negative(TrainBatch& batch, int owner, std::string text) {
  const auto n = batch.neg_valid.rows();
  if (owner < 0 || owner >= n) throw ValidationError("add_owned_negative: owner out of range");
  const auto m = batch.neg_valid.cols();
  batch.pool.push_back({"", std::move(text), owner});
  nn::Mask valid = nn::Mask::Constant(n, m + 1, false);
  nn::Mask own = nn::Mask::Constant(n, m + 1, false);
  valid.leftCols(m) = batch.neg_valid;
  own.leftCols(m) = batch.neg_own;
  valid(owner, m) = true;
  own(owner, m) = true;
  batch.neg_valid = std::move(valid);
  batch.neg_own = std::move(own);
}

}  // namespace eer::mining
