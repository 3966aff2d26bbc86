#include "eer/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "eer/error.hpp"
#include "eer/util.hpp"

namespace eer::eval {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

}  // namespace

double recall_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant,
                   std::size_t k) {
  const auto n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant.count(ranked[i])) return 1.0;
  }
  return 0.0;
}

double mrr_at_k(std::span<const std::string> ranked, const std::set<std::string>& relevant,
                std::size_t k) {
  const auto n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant.count(ranked[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

double AucCounts::value() const {
  if (positives == 0 || negatives == 0) {
    throw ValidationError("auc: undefined without both positive and negative pairs");
  }
  const double num = 2.0 * static_cast<double>(wins) + static_cast<double>(ties);
  return num / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

AucCounts auc_counts(std::span<const ScoredLabel> pairs) {
  std::vector<ScoredLabel> sorted(pairs.begin(), pairs.end());
  for (const auto& p : sorted) {
    if (p.label != 0 && p.label != 1) throw ValidationError("auc: label must be 0 or 1");
    if (std::isnan(p.score)) throw ValidationError("auc: NaN score");
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
  AucCounts c;
  std::uint64_t negatives_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].label == 1 ? pos : neg) += 1;
      ++j;
    }
    c.wins += pos * negatives_below;
    c.ties += pos * neg;
    negatives_below += neg;
    c.positives += pos;
    c.negatives += neg;
    i = j;
  }
  return c;
}

double auc(std::span<const ScoredLabel> pairs) { return auc_counts(pairs).value(); }

double auc_stratified(const std::map<std::string, std::vector<ScoredLabel>>& groups) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [key, pairs] : groups) {
    const auto c = auc_counts(pairs);
    if (c.positives == 0 || c.negatives == 0) continue;
    sum += c.value();
    ++n;
  }
  if (n == 0) throw ValidationError("auc: no query has both positive and negative pairs");
  return sum / static_cast<double>(n);
}

// --- qrels -------------------------------------------------------------------------

Qrels Qrels::from_pairs(std::span<const corpus::LabeledPair> pairs) {
  Qrels q;
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw ValidationError("qrels: label must be 0 or 1");
    q.pairs.push_back(p);
    if (p.label == 1) q.relevant[p.query_id].insert(p.doc_id);
  }
  return q;
}

Qrels Qrels::load(const std::filesystem::path& path) {
  std::vector<corpus::LabeledPair> pairs;
  for_each_line(path, [&](const std::string& line, std::size_t no) {
    const auto f = split_tabs(line);
    if (f.size() != 3) throw ValidationError(where(path, no) + "expected 3 tab-separated fields");
    if (f[2] != "0" && f[2] != "1") throw ValidationError(where(path, no) + "label must be 0 or 1");
    pairs.push_back({f[0], f[1], f[2] == "1" ? 1 : 0});
  });
  return from_pairs(pairs);
}

void Qrels::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& p : pairs) {
    out += p.query_id + "\t" + p.doc_id + "\t" + std::to_string(p.label) + "\n";
  }
  write_file_atomic(path, out);
}

// --- evaluation -----------------------------------------------------------------------

nlohmann::ordered_json SystemMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["system"] = system;
  for (const auto& [k, v] : recall) j["R@" + std::to_string(k)] = v;
  j["MRR@10"] = mrr10;
  j["AUC"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
  j["queries"] = n_queries;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j;
}

SystemMetrics evaluate(const retrieval::Run& run, const Qrels& qrels, const EvalOptions& opts,
                       std::string system) {
  SystemMetrics m;
  m.system = std::move(system);
  for (auto k : opts.ks) {
    if (k < 1) throw ValidationError("eval: k must be >= 1");
    m.recall[k] = 0.0;
  }
  static const retrieval::RankedList kEmpty;
  for (const auto& [qid, rel] : qrels.relevant) {
    auto it = run.find(qid);
    const auto ids = (it == run.end() ? kEmpty : it->second).ids();
    for (auto& [k, v] : m.recall) v += recall_at_k(ids, rel, k);
    m.mrr10 += mrr_at_k(ids, rel, 10);
    ++m.n_queries;
  }
  if (m.n_queries == 0) throw ValidationError("eval: qrels contain no query with a relevant doc");
  const double n = static_cast<double>(m.n_queries);
  for (auto& [k, v] : m.recall) v /= n;
  m.mrr10 /= n;

  std::map<std::string, std::vector<ScoredLabel>> groups;
  std::vector<ScoredLabel> all;
  for (const auto& p : qrels.pairs) {
    auto it = run.find(p.query_id);
    if (it == run.end()) continue;
    double score = -std::numeric_limits<double>::infinity();
    for (const auto& item : it->second.items) {
      if (item.doc_id == p.doc_id) {
        score = item.score;
        break;
      }
    }
    all.push_back({score, p.label});
    groups[p.query_id].push_back({score, p.label});
  }
  const auto c = auc_counts(all);
  if (c.positives > 0 && c.negatives > 0) {
    m.auc = opts.stratified_auc ? auc_stratified(groups) : c.value();
  }
  return m;
}

retrieval::Run read_run(const std::filesystem::path& path) {
  retrieval::Run run;
  std::map<std::string, std::unordered_set<std::string>> seen;
  for_each_line(path, [&](const std::string& line, std::size_t no) {
    const auto f = split_tabs(line);
    if (f.size() != 4) throw ValidationError(where(path, no) + "expected 4 tab-separated fields");
    std::size_t rank = 0;
    auto [p, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), rank);
    if (ec != std::errc() || p != f[2].data() + f[2].size()) {
      throw ValidationError(where(path, no) + "malformed rank");
    }
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError(where(path, no) + "malformed score");
    }
    auto& list = run[f[0]];
    if (rank != list.items.size() + 1) {
      throw ValidationError(where(path, no) + "ranks must run 1..n in order");
    }
    if (!seen[f[0]].insert(f[1]).second) {
      throw ValidationError(where(path, no) + "duplicate doc " + f[1] + " for query " + f[0]);
    }
    retrieval::ScoredDoc d{f[1], score};
    if (!list.items.empty() && !retrieval::ranks_before(list.items.back(), d)) {
      throw ValidationError(where(path, no) +
                            "scores must be non-increasing with ties ordered by doc_id");
    }
    list.items.push_back(std::move(d));
  });
  return run;
}

SystemMetrics evaluate_run(const std::filesystem::path& run_path, const Qrels& qrels,
                           const EvalOptions& opts) {
  return evaluate(read_run(run_path), qrels, opts, run_path.stem().string());
}

// --- report ---------------------------------------------------------------------------

nlohmann::ordered_json Report::to_json() const {
  nlohmann::ordered_json j;
  j["title"] = title;
  j["systems"] = nlohmann::ordered_json::array();
  for (const auto& s : systems) j["systems"].push_back(s.to_json());
  return j;
}

std::string Report::to_table() const {
  std::vector<std::string> header = {"system"};
  std::set<std::size_t> ks;
  for (const auto& s : systems)
    for (const auto& [k, v] : s.recall) ks.insert(k);
  for (auto k : ks) header.push_back("R@" + std::to_string(k));
  header.push_back("MRR@10");
  header.push_back("AUC");
  header.push_back("queries");

  std::vector<std::vector<std::string>> rows;
  auto fmt = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
  };
  for (const auto& s : systems) {
    std::vector<std::string> r = {s.system};
    for (auto k : ks) {
      auto it = s.recall.find(k);
      r.push_back(it == s.recall.end() ? "-" : fmt(it->second));
    }
    r.push_back(fmt(s.mrr10));
    r.push_back(s.auc ? fmt(*s.auc) : "-");
    r.push_back(std::to_string(s.n_queries));
    rows.push_back(std::move(r));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  if (!title.empty()) os << title << "\n";
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c == 0) os << std::left << std::setw(static_cast<int>(width[c])) << r[c];
      else os << "  " << std::right << std::setw(static_cast<int>(width[c])) << r[c];
    }
    os << "\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return os.str();
}

void export_embeddings(const nn::Matrix& embeddings, std::span<const std::string> ids,
                       const std::filesystem::path& path) {
  if (static_cast<Eigen::Index>(ids.size()) != embeddings.rows()) {
    throw ValidationError("export_embeddings: id count does not match embedding rows");
  }
  std::ostringstream os;
  os.precision(9);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    os << ids[i];
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
      os << '\t' << static_cast<float>(embeddings(static_cast<Eigen::Index>(i), c));
    }
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

}  // namespace eer::eval
