#include "eer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "eer/error.hpp"
#include "eer/nn/archive.hpp"
#include "eer/retrieval.hpp"
#include "eer/util.hpp"

namespace eer::trainer {

using nlohmann::ordered_json;
using nn::Matrix;
using nn::Var;
using text::TokenSeq;

// --- toggles and config -------------------------------------------------------------

Toggles Toggles::parse(const std::string& list) {
  Toggles t;
  std::string item;
  std::istringstream is(list);
  while (std::getline(is, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    std::transform(item.begin(), item.end(), item.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (item.empty() || item == "NONE") continue;
    if (item == "CL") t.cl = true;
    else if (item == "PAIR") t.pair = true;
    else if (item == "GD") t.gd = true;
    else if (item == "GP") t.gp = true;
    else if (item == "QER") t.qer = true;
    else if (item == "EER") t = eer();
    else throw ValidationError("unknown toggle '" + item + "' (expected CL, PAIR, GD, GP, QER)");
  }
  return t;
}

std::string Toggles::to_string() const {
  std::vector<std::string> on;
  if (cl) on.push_back("CL");
  if (pair) on.push_back("PAIR");
  if (gd) on.push_back("GD");
  if (gp) on.push_back("GP");
  if (qer) on.push_back("QER");
  if (on.empty()) return "none";
  std::string s = on[0];
  for (std::size_t i = 1; i < on.size(); ++i) s += "," + on[i];
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("train config: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("train config: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw ValidationError("train config: invalid optimizer moments");
  }
  if (toggles.gp && !toggles.gd) throw ValidationError("train config: GP requires GD");
  if (toggles.qer && event_source == EventSource::decoded && !toggles.gd) {
    throw ValidationError("train config: QER with decoded events requires GD");
  }
  if (mine_every < 1) throw ValidationError("train config: mine_every must be >= 1");
  if (decode_max_steps < 0) throw ValidationError("train config: decode_max_steps must be >= 0");
  const auto& a = augment;
  if (!(a.input_rate >= 0.0 && a.input_rate <= 1.0)) {
    throw ValidationError("train config: augment.input_rate must be in [0,1]");
  }
  mining::AugmentConfig{{}, a.p_delete, a.p_duplicate, a.n_swaps, 0}.validate();
  loss.validate();
  mining.validate();
  for (auto k : eval_ks) {
    if (k < 1) throw ValidationError("train config: eval_ks entries must be >= 1");
  }
}

ordered_json TrainConfig::to_json() const {
  ordered_json m = model.to_json();
  m.erase("vocab_size");
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"toggles", toggles.to_string()},
          {"event_source", event_source == EventSource::gold ? "gold" : "decoded"},
          {"template_id", template_id},
          {"loss", loss.to_json()},
          {"model", m},
          {"mine", mine},
          {"mine_every", mine_every},
          {"mining", mining.to_json()},
          {"random_negatives", random_negatives},
          {"augment",
           {{"enabled", augment.enabled},
            {"input_rate", augment.input_rate},
            {"p_delete", augment.p_delete},
            {"p_duplicate", augment.p_duplicate},
            {"n_swaps", augment.n_swaps},
            {"entity_negatives", augment.entity_negatives}}},
          {"decode_max_steps", decode_max_steps},
          {"eval_ks", eval_ks},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const ordered_json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "toggles") c.toggles = Toggles::parse(v.get<std::string>());
      else if (key == "event_source") {
        const auto s = v.get<std::string>();
        if (s == "gold") c.event_source = EventSource::gold;
        else if (s == "decoded") c.event_source = EventSource::decoded;
        else throw ValidationError("train config: unknown event_source '" + s + "'");
      } else if (key == "template_id") c.template_id = v.get<std::string>();
      else if (key == "loss") c.loss = losses::LossConfig::from_json(v);
      else if (key == "model") {
        ordered_json m = v;
        m["vocab_size"] = 0;
        c.model = model::EncoderConfig::from_json(m);
      } else if (key == "mine") c.mine = v.get<bool>();
      else if (key == "mine_every") c.mine_every = v.get<int>();
      else if (key == "mining") c.mining = mining::MiningConfig::from_json(v);
      else if (key == "random_negatives") c.random_negatives = v.get<std::size_t>();
      else if (key == "augment") {
        for (const auto& [ak, av] : v.items()) {
          if (ak == "enabled") c.augment.enabled = av.get<bool>();
          else if (ak == "input_rate") c.augment.input_rate = av.get<double>();
          else if (ak == "p_delete") c.augment.p_delete = av.get<double>();
          else if (ak == "p_duplicate") c.augment.p_duplicate = av.get<double>();
          else if (ak == "n_swaps") c.augment.n_swaps = av.get<int>();
          else if (ak == "entity_negatives") c.augment.entity_negatives = av.get<bool>();
          else throw ValidationError("train config: unknown augment field '" + ak + "'");
        }
      } else if (key == "decode_max_steps") c.decode_max_steps = v.get<int>();
      else if (key == "eval_ks") c.eval_ks = v.get<std::vector<std::size_t>>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("train config: unknown field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  try {
    return from_json(ordered_json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string TrainConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

// --- batch preparation -------------------------------------------------------------------

namespace {

TokenSeq event_input(const EventTriple& e, const text::Vocab& vocab, std::size_t max_len) {
  TokenSeq content;
  for (const auto& t : text::serialize_event(e)) content.ids.push_back(vocab.id(t));
  return text::encoder_input(content, max_len);
}

std::optional<EventTriple> event_for(const std::string& doc_id, const std::string& title,
                                     const corpus::Corpus& corpus, const Resources& res) {
  if (auto g = corpus.gold_event(doc_id)) return g;
  if (res.verbs.size() == 0) return std::nullopt;
  const auto tokens = text::split_tokens(title);
  if (auto ex = text::extract_event_rule(tokens, res.verbs)) return ex->triple;
  return std::nullopt;
}

std::string augment_input(const std::string& text, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.augment.enabled || cfg.augment.input_rate <= 0.0) return text;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= cfg.augment.input_rate) return text;
  const auto tokens = text::split_tokens(text);
  if (u(rng) < 0.5) {
    return text::join_tokens(
        mining::delete_duplicate(tokens, cfg.augment.p_delete, cfg.augment.p_duplicate, rng));
  }
  return text::join_tokens(mining::reorder(tokens, cfg.augment.n_swaps, rng));
}

}  // namespace

text::Vocab::BuildResult build_vocab(std::span<const corpus::Corpus* const> corpora, int min_freq,
                                     int prompt_slots) {
  std::vector<std::string> texts;
  for (const auto* c : corpora) {
    for (const auto& doc : c->documents) texts.push_back(doc.title);
    for (const auto& q : c->queries) texts.push_back(q.text);
    for (const auto& [id, e] : c->gold_events) {
      for (const auto& t : text::serialize_event(e)) texts.push_back(t);
    }
  }
  std::vector<std::string> always = text::TemplateRegistry::builtin().literal_tokens();
  always.emplace_back(text::kEventSeparator);
  always.emplace_back(text::kMissingArgument);
  return text::Vocab::build(texts, min_freq, prompt_slots, always);
}

PreparedBatch prepare_batch(const mining::TrainBatch& batch_in, const corpus::Corpus& corpus,
                            const TrainConfig& cfg, const Resources& res, std::mt19937_64& rng) {
  if (!res.vocab) throw ValidationError("prepare_batch: vocabulary missing");
  const auto& vocab = *res.vocab;
  const auto max_len = static_cast<std::size_t>(cfg.model.max_len);
  mining::TrainBatch batch = batch_in;
  PreparedBatch out;
  const std::size_t n = batch.query_ids.size();
  std::vector<std::string> pos_texts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& q = corpus.query(batch.query_ids[i]);
    const auto& d = corpus.document(batch.pos_doc_ids[i]);
    out.queries.push_back(text::encoder_input(augment_input(q.text, cfg, rng), vocab, max_len));
    pos_texts[i] = augment_input(d.title, cfg, rng);
    out.positives.push_back(text::encoder_input(pos_texts[i], vocab, max_len));
    out.events.push_back(event_for(d.doc_id, d.title, corpus, res));

    if (cfg.augment.enabled && cfg.augment.entity_negatives && !res.entity_table.empty()) {
      const auto title_tokens = text::split_tokens(d.title);
      std::string entity;
      auto replaced = mining::replace_entity(title_tokens, res.entity_table, rng, &entity);
      if (!entity.empty()) {
        const auto q_tokens = text::split_tokens(q.text);
        const auto e_tokens = text::split_tokens(entity);
        if (std::search(q_tokens.begin(), q_tokens.end(), e_tokens.begin(), e_tokens.end()) !=
            q_tokens.end()) {
          mining::add_owned_negative(batch, static_cast<int>(i), text::join_tokens(replaced));
        }
      }
    }
  }
  for (const auto& e : batch.pool) out.pool.push_back(text::encoder_input(e.text, vocab, max_len));
  out.allpos_valid = batch.allpos_valid;
  out.neg_valid = batch.neg_valid;
  out.neg_own = batch.neg_own;

  if (cfg.toggles.gd) {
    const text::PromptTemplate* tmpl =
        cfg.toggles.gp ? &res.templates.at(cfg.template_id) : nullptr;
    const std::size_t overhead = 1 + (tmpl ? tmpl->overhead() : 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ev = out.events[i];
      const std::size_t event_len = ev ? text::serialize_event(*ev).size() + 1 : 1;
      if (overhead + event_len > max_len) {
        throw ValidationError("prepare_batch: template and event overflow max_len");
      }
      const std::size_t room = max_len - overhead - event_len;
      const TokenSeq title = text::tokenize(pos_texts[i], vocab, std::max<std::size_t>(room, 1));
      out.targets.push_back(text::render_prompt(tmpl, title, ev, vocab, max_len));
    }
  }
  return out;
}

// --- forward / backward ---------------------------------------------------------------------

losses::LossBreakdown forward_backward(const model::DualEncoderModel& m, const PreparedBatch& b,
                                       const TrainConfig& cfg, const Resources& res,
                                       const model::ForwardContext& ctx, bool backward,
                                       std::optional<Component> only) {
  const auto& t = cfg.toggles;
  const auto& lc = cfg.loss;
  const std::size_t n = b.queries.size();
  if (n == 0) throw ValidationError("forward: empty batch");
  double cl_qt = 0.0, pair_qt = 0.0, gen = 0.0, cl_qe = 0.0;
  std::vector<nn::Seed> seeds;
  auto weight = [&](Component c, double w) -> double {
    if (only) return *only == c ? 1.0 : 0.0;
    return w;
  };
  if (!t.any()) return losses::total_loss(0, 0, 0, 0, lc);

  Var q = m.encode_queries(b.queries, ctx);
  std::vector<model::TowerOutput> pos_out;
  std::vector<Var> pooled;
  for (const auto& seq : b.positives) {
    pos_out.push_back(model::run_tower(*m.title_tower, m.config, seq, ctx));
    pooled.push_back(pos_out.back().pooled);
  }
  Var p = nn::concat_rows(pooled);

  if (t.cl || t.pair) {
    Var s_all = nn::cosine_matrix(q, p);
    Var s_neg;
    losses::BatchSimilarities sims;
    sims.all_pos = s_all.value();
    sims.allpos_valid = b.allpos_valid;
    if (!b.pool.empty()) {
      s_neg = nn::cosine_matrix(q, m.encode_titles(b.pool, ctx));
      sims.neg = s_neg.value();
      sims.neg_valid = b.neg_valid;
      sims.neg_own = b.neg_own;
    } else {
      sims.neg = Matrix(static_cast<Eigen::Index>(n), 0);
    }
    Matrix d_all = Matrix::Zero(sims.all_pos.rows(), sims.all_pos.cols());
    Matrix d_neg = Matrix::Zero(sims.neg.rows(), sims.neg.cols());
    if (t.cl) {
      auto r = losses::contrastive_qt(sims, lc);
      cl_qt = r.value;
      const double w = weight(Component::cl_qt, lc.w_cl_qt);
      d_all += w * r.d_all_pos;
      d_neg += w * r.d_neg;
    }
    if (t.pair) {
      auto r = losses::pairwise_qt(sims, lc);
      pair_qt = r.value;
      const double w = weight(Component::pair_qt, lc.w_pair);
      d_all += w * r.d_all_pos;
      d_neg += w * r.d_neg;
    }
    seeds.emplace_back(s_all, d_all);
    if (s_neg.defined()) seeds.emplace_back(s_neg, d_neg);
  }

  if (t.gd) {
    std::vector<Var> logits;
    std::vector<Matrix> values;
    std::vector<text::DecoderTarget> targets;
    for (std::size_t i = 0; i < n && i < b.targets.size(); ++i) {
      if (b.targets[i].masked_count() == 0) continue;
      logits.push_back(model::decoder_forward(*m.decoder, m.config, pos_out[i].states,
                                              pos_out[i].valid, b.targets[i].input_ids, ctx));
      values.push_back(logits.back().value());
      targets.push_back(b.targets[i]);
    }
    if (logits.empty()) {
      spdlog::warn("generation loss: no example in the batch has an event; skipping");
    } else {
      auto r = losses::generation_loss(values, targets, lc.gen_norm);
      gen = r.value;
      const double w = weight(Component::gen, lc.w_gen);
      for (std::size_t k = 0; k < logits.size(); ++k) seeds.emplace_back(logits[k], w * r.d_logits[k]);
    }
  }

  if (t.qer) {
    const auto max_len = static_cast<std::size_t>(m.config.max_len);
    std::vector<Eigen::Index> rows;
    std::vector<TokenSeq> event_seqs;
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.event_source == EventSource::gold) {
        if (!b.events[i]) continue;
        event_seqs.push_back(event_input(*b.events[i], *res.vocab, max_len));
      } else {
        if (i >= b.targets.size()) continue;
        const auto prefix = TokenSeq{std::vector<text::TokenId>(
            b.targets[i].input_ids.ids.begin(),
            b.targets[i].input_ids.ids.begin() +
                static_cast<std::ptrdiff_t>(b.targets[i].prefix_len)),
                                     false};
        const auto decoded =
            model::greedy_decode(*m.decoder, m.config, pos_out[i].states.detach(),
                                 pos_out[i].valid, prefix, cfg.decode_max_steps);
        if (decoded.ids.empty()) continue;
        event_seqs.push_back(text::encoder_input(decoded, max_len));
      }
      rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (rows.size() < n) {
      spdlog::warn("query-event loss: {} of {} examples have no event", n - rows.size(), n);
    }
    if (!rows.empty()) {
      Var e = m.encode_titles(event_seqs, ctx);
      Var q_sub = nn::select_rows(q, rows);
      Var s_qe = nn::cosine_matrix(q_sub, e);
      losses::BatchSimilarities sims;
      sims.all_pos = s_qe.value();
      const auto r_n = static_cast<Eigen::Index>(rows.size());
      sims.allpos_valid = nn::Mask(r_n, r_n);
      for (Eigen::Index a = 0; a < r_n; ++a)
        for (Eigen::Index c = 0; c < r_n; ++c) sims.allpos_valid(a, c) = b.allpos_valid(rows[a], rows[c]);
      sims.neg = Matrix(r_n, 0);
      auto r = losses::contrastive_qe(sims, lc);
      cl_qe = r.value;
      seeds.emplace_back(s_qe, weight(Component::cl_qe, lc.w_cl_qe) * r.d_all_pos);
    }
  }

  auto breakdown = losses::total_loss(t.cl ? cl_qt : 0.0, t.pair ? pair_qt : 0.0,
                                      t.gd ? gen : 0.0, t.qer ? cl_qe : 0.0, lc);
  if (backward && !seeds.empty()) nn::backward(seeds);
  return breakdown;
}

// --- evaluation helpers -----------------------------------------------------------------------

eval::SystemMetrics evaluate_dense(const model::InferencePack& pack, const text::Vocab& vocab,
                                   const corpus::Corpus& queries,
                                   const std::vector<corpus::Document>& docs,
                                   const std::vector<std::size_t>& ks, std::string name) {
  auto index = retrieval::build_index(pack, docs, vocab);
  const auto qrels = eval::Qrels::from_pairs(queries.pairs);
  std::vector<std::string> qids, texts;
  for (const auto& [qid, rel] : qrels.relevant) {
    qids.push_back(qid);
    texts.push_back(queries.query(qid).text);
  }
  retrieval::Run run;
  if (!texts.empty()) {
    const Matrix emb = retrieval::embed_queries(pack, vocab, texts);
    for (std::size_t i = 0; i < qids.size(); ++i) {
      run[qids[i]] = index.search(emb.row(static_cast<Eigen::Index>(i)), index.size());
    }
  }
  eval::EvalOptions opts;
  opts.ks = ks;
  return eval::evaluate(run, qrels, opts, std::move(name));
}

eval::SystemMetrics evaluate_bm25(const corpus::Corpus& queries,
                                  const std::vector<corpus::Document>& docs,
                                  const std::vector<std::size_t>& ks, std::string name) {
  retrieval::BM25Index bm25(docs);
  const auto qrels = eval::Qrels::from_pairs(queries.pairs);
  retrieval::Run run;
  for (const auto& [qid, rel] : qrels.relevant) {
    run[qid] = bm25.rank(queries.query(qid).text, bm25.size());
  }
  eval::EvalOptions opts;
  opts.ks = ks;
  return eval::evaluate(run, qrels, opts, std::move(name));
}

// --- training loop ----------------------------------------------------------------------------

ordered_json EpochRecord::to_json() const {
  ordered_json j{{"epoch", epoch},
                 {"cl_qt", mean.cl_qt},
                 {"pair_qt", mean.pair_qt},
                 {"gen", mean.gen},
                 {"cl_qe", mean.cl_qe},
                 {"total", mean.total},
                 {"mined_negatives", mined_negatives},
                 {"seconds", seconds}};
  if (metrics) j["eval"] = metrics->to_json();
  return j;
}

namespace {

struct AdamState {
  std::vector<Matrix> m, v;
  long t = 0;
};

void adam_step(const std::vector<model::NamedParameter>& params, AdamState& st,
               const TrainConfig& cfg) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      st.v.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = params[i].var.grad();
    if (g.size() == 0) continue;
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    Var w = params[i].var;
    Matrix& value = w.mutable_value();
    value.array() -= cfg.learning_rate * (st.m[i].array() / c1) /
                     ((st.v[i].array() / c2).sqrt() + cfg.adam_eps);
    nn::round_to_float(value);
  }
}

bool finite(const losses::LossBreakdown& b) {
  return std::isfinite(b.cl_qt) && std::isfinite(b.pair_qt) && std::isfinite(b.gen) &&
         std::isfinite(b.cl_qe) && std::isfinite(b.total);
}

std::size_t mine_epoch(const model::DualEncoderModel& model, const corpus::Corpus& train,
                       std::vector<mining::TrainExample>& examples, const TrainConfig& cfg,
                       const text::Vocab& vocab, int epoch) {
  const auto pack = model::export_inference(model);
  const auto index = retrieval::build_index(pack, train.documents, vocab);
  std::vector<std::string> qids;
  std::set<std::string> seen;
  for (const auto& e : examples) {
    if (seen.insert(e.query_id).second) qids.push_back(e.query_id);
  }
  std::vector<std::string> texts;
  for (const auto& q : qids) texts.push_back(train.query(q).text);
  const Matrix emb = retrieval::embed_queries(pack, vocab, texts);
  auto mcfg = cfg.mining;
  mcfg.seed = derive_seed(cfg.mining.seed, static_cast<std::uint64_t>(epoch));
  std::map<std::string, std::vector<std::string>> mined;
  std::size_t total = 0;
  for (std::size_t i = 0; i < qids.size(); ++i) {
    const auto found = mining::mine_semantic_negatives(
        qids[i], emb.row(static_cast<Eigen::Index>(i)), index, train, mcfg);
    auto& ids = mined[qids[i]];
    for (const auto& f : found) ids.push_back(f.doc_id);
    total += ids.size();
  }
  for (auto& e : examples) {
    e.hard_neg_doc_ids.clear();
    for (const auto& d : mined[e.query_id]) {
      if (d != e.pos_doc_id) e.hard_neg_doc_ids.push_back(d);
    }
  }
  return total;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const corpus::Corpus& train_set,
                  const corpus::Corpus* test, const std::vector<corpus::Document>& index_docs,
                  const Resources& res, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (!res.vocab) throw ValidationError("train: vocabulary missing");
  const auto& vocab = *res.vocab;
  if (cfg.toggles.gp && !res.templates.contains(cfg.template_id)) {
    throw ValidationError("train: unknown template '" + cfg.template_id + "'");
  }
  const auto start = std::chrono::steady_clock::now();
  model::EncoderConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.n_prompt_slots = vocab.n_prompt_slots();
  mc.seed = cfg.seed;
  TrainResult result{model::DualEncoderModel(mc, vocab.fingerprint()), {}};
  auto& model = result.model;
  auto& log = result.log;
  const auto params = model.parameters();
  AdamState adam;

  auto examples = mining::positive_examples(train_set);
  if (examples.empty()) throw ValidationError("train: training split has no positive pairs");
  std::mt19937_64 batch_rng(derive_seed(cfg.seed, "batches"));
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, "dropout"));
  const model::ForwardContext ctx{true, &dropout_rng};

  std::string step_lines;
  std::size_t prompt_norm_steps = 0;
  double prompt_norm_sum = 0.0;
  long step = 0;
  std::optional<std::filesystem::path> last_checkpoint;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    if (cfg.toggles.any()) {
      if (cfg.mine && (epoch - 1) % cfg.mine_every == 0) {
        rec.mined_negatives = mine_epoch(model, train_set, examples, cfg, vocab, epoch);
        spdlog::debug("epoch {}: mined {} hard negatives", epoch, rec.mined_negatives);
      }
      std::shuffle(examples.begin(), examples.end(), batch_rng);
      std::size_t n_batches = 0;
      for (std::size_t start_i = 0; start_i < examples.size(); start_i += cfg.batch_size) {
        const auto end_i = std::min(examples.size(), start_i + cfg.batch_size);
        std::span<const mining::TrainExample> slice(examples.data() + start_i, end_i - start_i);
        const auto batch = mining::assemble_batch(slice, train_set, cfg.random_negatives, batch_rng);
        const auto prepared = prepare_batch(batch, train_set, cfg, res, batch_rng);
        model.zero_grad();
        const auto b = forward_backward(model, prepared, cfg, res, ctx, true);
        ++step;
        if (!finite(b)) {
          throw RuntimeFailure(
              "training diverged at step " + std::to_string(step) + " (non-finite loss); " +
              (last_checkpoint ? "last good checkpoint: " + last_checkpoint->string()
                               : std::string("no checkpoint was written")));
        }
        if (model.decoder) {
          const Matrix& g = model.decoder->prompt_embedding.grad();
          if (g.size() > 0) {
            prompt_norm_sum += g.norm();
            ++prompt_norm_steps;
          }
        }
        adam_step(params, adam, cfg);
        log.steps.push_back(b);
        step_lines += losses::step_record(step, b).dump() + "\n";
        rec.mean.cl_qt += b.cl_qt;
        rec.mean.pair_qt += b.pair_qt;
        rec.mean.gen += b.gen;
        rec.mean.cl_qe += b.cl_qe;
        rec.mean.total += b.total;
        ++n_batches;
      }
      const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(n_batches, 1));
      rec.mean.cl_qt *= inv;
      rec.mean.pair_qt *= inv;
      rec.mean.gen *= inv;
      rec.mean.cl_qe *= inv;
      rec.mean.total *= inv;
    }
    if (test) {
      const auto pack = model::export_inference(model);
      rec.metrics = evaluate_dense(pack, vocab, *test, index_docs, cfg.eval_ks, "epoch-" + std::to_string(epoch));
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    spdlog::info("epoch {}/{}: cl_qt={:.4f} pair={:.4f} gen={:.4f} cl_qe={:.4f} total={:.4f}{} ({:.1f}s)",
                 epoch, cfg.epochs, rec.mean.cl_qt, rec.mean.pair_qt, rec.mean.gen,
                 rec.mean.cl_qe, rec.mean.total,
                 rec.metrics && rec.metrics->recall.count(10)
                     ? fmt::format(" test R@10={:.3f}", rec.metrics->recall.at(10))
                     : std::string(),
                 rec.seconds);
    log.epochs.push_back(rec);
    if (out_dir) {
      const auto ckpt = *out_dir / "checkpoints" / ("epoch-" + std::to_string(epoch));
      model::save_checkpoint(model, ckpt);
      last_checkpoint = ckpt;
      write_file_atomic(*out_dir / "train_log.jsonl", step_lines);
      std::string epochs;
      for (const auto& e : log.epochs) epochs += e.to_json().dump() + "\n";
      write_file_atomic(*out_dir / "epochs.jsonl", epochs);
    }
  }
  log.prompt_grad_norm =
      prompt_norm_steps ? prompt_norm_sum / static_cast<double>(prompt_norm_steps) : 0.0;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// --- ablation ------------------------------------------------------------------------------

std::vector<std::pair<std::string, Toggles>> ablation_lattice() {
  return {{"base", Toggles{}},
          {"base+CL", Toggles{true, false, false, false, false}},
          {"base+CL+GD", Toggles{true, false, true, false, false}},
          {"base+CL+GD+GP", Toggles{true, false, true, true, false}},
          {"base+CL+GD+QER", Toggles{true, false, true, false, true}},
          {"EER", Toggles::eer()}};
}

namespace {

eval::SystemMetrics aggregate(const std::vector<eval::SystemMetrics>& runs, const std::string& name,
                              bool stddev) {
  eval::SystemMetrics mean;
  mean.system = name;
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    for (const auto& [k, v] : r.recall) mean.recall[k] += v / n;
    mean.mrr10 += r.mrr10 / n;
    if (r.auc) mean.auc = mean.auc.value_or(0.0) + *r.auc / n;
    mean.n_queries = r.n_queries;
  }
  if (!stddev) return mean;
  eval::SystemMetrics sd;
  sd.system = name;
  sd.n_queries = mean.n_queries;
  auto sq = [](double x) { return x * x; };
  for (const auto& r : runs) {
    for (const auto& [k, v] : r.recall) sd.recall[k] += sq(v - mean.recall[k]) / n;
    sd.mrr10 += sq(r.mrr10 - mean.mrr10) / n;
    if (r.auc && mean.auc) sd.auc = sd.auc.value_or(0.0) + sq(*r.auc - *mean.auc) / n;
  }
  for (auto& [k, v] : sd.recall) v = std::sqrt(v);
  sd.mrr10 = std::sqrt(sd.mrr10);
  if (sd.auc) sd.auc = std::sqrt(*sd.auc);
  return sd;
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

double recall10(const eval::SystemMetrics& m) {
  auto it = m.recall.find(10);
  return it == m.recall.end() ? 0.0 : it->second;
}

std::vector<std::size_t> with_10(std::vector<std::size_t> ks) {
  if (std::find(ks.begin(), ks.end(), 10) == ks.end()) ks.push_back(10);
  std::sort(ks.begin(), ks.end());
  return ks;
}

}  // namespace

AblationReport run_ablation_suite(const TrainConfig& base, const corpus::Corpus& train_set,
                                  const corpus::Corpus& test,
                                  const std::vector<corpus::Document>& index_docs,
                                  const Resources& res, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ValidationError("ablation: at least one seed is required");
  AblationReport report;
  report.seeds = seeds;
  const auto ks = with_10(base.eval_ks);
  for (const auto& [name, toggles] : ablation_lattice()) {
    AblationRow row;
    row.name = name;
    row.toggles = toggles;
    TrainConfig cfg = base;
    cfg.toggles = toggles;
    cfg.eval_ks = ks;
    cfg.seed = seeds.front();
    row.config_hash = cfg.hash();
    for (auto seed : seeds) {
      cfg.seed = seed;
      spdlog::info("ablation: {} seed {}", name, seed);
      auto result = train(cfg, train_set, nullptr, index_docs, res);
      auto m = evaluate_dense(model::export_inference(result.model), *res.vocab, test, index_docs,
                              ks, name);
      m.config_hash = cfg.hash();
      row.per_seed.push_back(std::move(m));
    }
    row.mean = aggregate(row.per_seed, name, false);
    row.mean.config_hash = row.config_hash;
    if (seeds.size() > 1) row.stddev = aggregate(row.per_seed, name, true);
    report.rows.push_back(std::move(row));
  }
  report.bm25 = evaluate_bm25(test, index_docs, ks);
  return report;
}

ordered_json AblationReport::to_json() const {
  ordered_json j;
  j["seeds"] = seeds;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row{{"name", r.name},
                     {"toggles", r.toggles.to_string()},
                     {"config_hash", r.config_hash},
                     {"mean", r.mean.to_json()}};
    if (r.stddev) row["stddev"] = r.stddev->to_json();
    row["per_seed"] = ordered_json::array();
    for (const auto& m : r.per_seed) row["per_seed"].push_back(m.to_json());
    j["rows"].push_back(row);
  }
  if (bm25) j["bm25"] = bm25->to_json();
  return j;
}

std::string AblationReport::to_tsv() const {
  const bool sd = seeds.size() > 1;
  std::ostringstream os;
  os << "system\ttoggles\tR@10\tMRR@10\tAUC";
  if (sd) os << "\tR@10_sd\tMRR@10_sd\tAUC_sd";
  os << "\tconfig_hash\n";
  for (const auto& r : rows) {
    os << r.name << '\t' << r.toggles.to_string() << '\t' << fixed4(recall10(r.mean)) << '\t'
       << fixed4(r.mean.mrr10) << '\t' << (r.mean.auc ? fixed4(*r.mean.auc) : "-");
    if (sd && r.stddev) {
      os << '\t' << fixed4(recall10(*r.stddev)) << '\t' << fixed4(r.stddev->mrr10) << '\t'
         << (r.stddev->auc ? fixed4(*r.stddev->auc) : "-");
    }
    os << '\t' << r.config_hash << '\n';
  }
  return os.str();
}

std::string AblationReport::to_table() const {
  eval::Report rep;
  rep.title = "Component ablation (mean over " + std::to_string(seeds.size()) + " seed(s))";
  for (const auto& r : rows) rep.systems.push_back(r.mean);
  if (bm25) rep.systems.push_back(*bm25);
  return rep.to_table();
}

// --- prompt search ---------------------------------------------------------------------------

PromptReport run_prompt_search(const TrainConfig& base, const std::vector<std::string>& template_ids,
                               const corpus::Corpus& train_set, const corpus::Corpus& test,
                               const std::vector<corpus::Document>& index_docs,
                               const Resources& res) {
  if (template_ids.empty()) throw ValidationError("prompt search: no templates given");
  PromptReport report;
  const auto ks = with_10(base.eval_ks);
  for (const auto& id : template_ids) {
    const auto& tmpl = res.templates.at(id);
    TrainConfig cfg = base;
    cfg.toggles = Toggles::eer();
    cfg.template_id = id;
    cfg.eval_ks = ks;
    spdlog::info("prompt search: template {}", id);
    auto result = train(cfg, train_set, nullptr, index_docs, res);
    PromptRow row;
    row.template_id = id;
    row.kind = tmpl.kind;
    row.config_hash = cfg.hash();
    row.metrics =
        evaluate_dense(model::export_inference(result.model), *res.vocab, test, index_docs, ks, id);
    row.metrics.config_hash = row.config_hash;
    row.prompt_grad_norm = result.log.prompt_grad_norm;
    report.rows.push_back(std::move(row));
  }
  return report;
}

ordered_json PromptReport::to_json() const {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    j.push_back({{"template_id", r.template_id},
                 {"kind", r.kind == text::TemplateKind::continuous ? "continuous" : "handcrafted"},
                 {"config_hash", r.config_hash},
                 {"metrics", r.metrics.to_json()},
                 {"prompt_grad_norm", r.prompt_grad_norm}});
  }
  return {{"rows", j}};
}

std::string PromptReport::to_tsv() const {
  std::ostringstream os;
  os << "template\tkind\tR@10\tMRR@10\tAUC\tprompt_grad_norm\tconfig_hash\n";
  for (const auto& r : rows) {
    os << r.template_id << '\t'
       << (r.kind == text::TemplateKind::continuous ? "continuous" : "handcrafted") << '\t'
       << fixed4(recall10(r.metrics)) << '\t' << fixed4(r.metrics.mrr10) << '\t'
       << (r.metrics.auc ? fixed4(*r.metrics.auc) : "-") << '\t' << r.prompt_grad_norm << '\t'
       << r.config_hash << '\n';
  }
  return os.str();
}

std::string PromptReport::to_table() const {
  eval::Report rep;
  rep.title = "Prompt templates";
  for (const auto& r : rows) rep.systems.push_back(r.metrics);
  return rep.to_table();
}

}  // namespace eer::trainer
