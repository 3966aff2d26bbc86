#include "eer/model.hpp"

#include <cmath>
#include <unordered_map>

#include "eer/error.hpp"
#include "eer/nn/archive.hpp"
#include "eer/util.hpp"

namespace eer::model {

using text::Vocab;

// --- config --------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (n_layers < 1) throw ValidationError("encoder config: n_layers must be >= 1");
  if (hidden_size < 1 || n_heads < 1 || hidden_size % n_heads != 0) {
    throw ValidationError("encoder config: hidden_size must be divisible by n_heads");
  }
  if (ff_size < 1) throw ValidationError("encoder config: ff_size must be >= 1");
  if (max_len < 3) throw ValidationError("encoder config: max_len must be >= 3");
  if (vocab_size <= Vocab::kFirstPromptSlot + n_prompt_slots - 1) {
    throw ValidationError("encoder config: vocab_size too small for reserved tokens");
  }
  if (n_prompt_slots < 0) throw ValidationError("encoder config: negative n_prompt_slots");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("encoder config: dropout in [0,1)");
}

EncoderConfig EncoderConfig::desk(int vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  return c;
}

EncoderConfig EncoderConfig::paper_scale(int vocab_size) {
  EncoderConfig c;
  c.n_layers = 12;
  c.hidden_size = 768;
  c.n_heads = 12;
  c.ff_size = 3072;
  c.max_len = 512;
  c.dropout = 0.1;
  c.vocab_size = vocab_size;
  return c;
}

nlohmann::ordered_json EncoderConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"hidden_size", hidden_size},
          {"n_heads", n_heads},
          {"ff_size", ff_size},
          {"max_len", max_len},
          {"vocab_size", vocab_size},
          {"n_prompt_slots", n_prompt_slots},
          {"dropout", dropout},
          {"pooling", pooling == Pooling::cls ? "cls" : "mean"},
          {"tie_towers", tie_towers},
          {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::ordered_json& j) {
  EncoderConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_layers") c.n_layers = v.get<int>();
      else if (key == "hidden_size") c.hidden_size = v.get<int>();
      else if (key == "n_heads") c.n_heads = v.get<int>();
      else if (key == "ff_size") c.ff_size = v.get<int>();
      else if (key == "max_len") c.max_len = v.get<int>();
      else if (key == "vocab_size") c.vocab_size = v.get<int>();
      else if (key == "n_prompt_slots") c.n_prompt_slots = v.get<int>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "tie_towers") c.tie_towers = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "pooling") {
        const auto p = v.get<std::string>();
        if (p == "cls") c.pooling = Pooling::cls;
        else if (p == "mean") c.pooling = Pooling::mean;
        else throw ValidationError("encoder config: unknown pooling '" + p + "'");
      } else {
        throw ValidationError("encoder config: unknown field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("encoder config: ") + e.what());
  }
  return c;
}

// --- init ------------------------------------------------------------------------

namespace {

constexpr double kInitStd = 0.02;

Var normal_param(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  nn::round_to_float(m);
  return Var(std::move(m), true);
}

Var const_param(Eigen::Index rows, Eigen::Index cols, double value) {
  return Var(Matrix::Constant(rows, cols, value), true);
}

Var copy_param(const Var& v) { return Var(v.value(), true); }

LayerNormWeights init_ln(int h) { return {const_param(1, h, 1.0), const_param(1, h, 0.0)}; }

AttentionWeights init_attention(int h, std::mt19937_64& rng) {
  AttentionWeights a;
  a.wq = normal_param(h, h, rng);
  a.bq = const_param(1, h, 0.0);
  a.wk = normal_param(h, h, rng);
  a.bk = const_param(1, h, 0.0);
  a.wv = normal_param(h, h, rng);
  a.bv = const_param(1, h, 0.0);
  a.wo = normal_param(h, h, rng);
  a.bo = const_param(1, h, 0.0);
  return a;
}

FeedForwardWeights init_ffn(int h, int ff, std::mt19937_64& rng) {
  return {normal_param(h, ff, rng), const_param(1, ff, 0.0), normal_param(ff, h, rng),
          const_param(1, h, 0.0)};
}

LayerNormWeights copy_ln(const LayerNormWeights& l) { return {copy_param(l.gamma), copy_param(l.beta)}; }
AttentionWeights copy_attention(const AttentionWeights& a) {
  return {copy_param(a.wq), copy_param(a.bq), copy_param(a.wk), copy_param(a.bk),
          copy_param(a.wv), copy_param(a.bv), copy_param(a.wo), copy_param(a.bo)};
}
FeedForwardWeights copy_ffn(const FeedForwardWeights& f) {
  return {copy_param(f.w1), copy_param(f.b1), copy_param(f.w2), copy_param(f.b2)};
}

TowerWeights init_tower(const EncoderConfig& cfg, std::mt19937_64& rng) {
  TowerWeights t;
  t.token_embedding = normal_param(cfg.vocab_size, cfg.hidden_size, rng);
  t.position_embedding = normal_param(cfg.max_len, cfg.hidden_size, rng);
  for (int l = 0; l < cfg.n_layers; ++l) {
    EncoderLayerWeights layer;
    layer.ln_attn = init_ln(cfg.hidden_size);
    layer.attn = init_attention(cfg.hidden_size, rng);
    layer.ln_ffn = init_ln(cfg.hidden_size);
    layer.ffn = init_ffn(cfg.hidden_size, cfg.ff_size, rng);
    t.layers.push_back(std::move(layer));
  }
  t.ln_final = init_ln(cfg.hidden_size);
  t.pool_w = normal_param(cfg.hidden_size, cfg.hidden_size, rng);
  t.pool_b = const_param(1, cfg.hidden_size, 0.0);
  return t;
}

void visit_ln(const std::string& p, const LayerNormWeights& l, const ParamVisitor& fn) {
  fn(p + ".gamma", l.gamma);
  fn(p + ".beta", l.beta);
}
void visit_attention(const std::string& p, const AttentionWeights& a, const ParamVisitor& fn) {
  fn(p + ".wq", a.wq);
  fn(p + ".bq", a.bq);
  fn(p + ".wk", a.wk);
  fn(p + ".bk", a.bk);
  fn(p + ".wv", a.wv);
  fn(p + ".bv", a.bv);
  fn(p + ".wo", a.wo);
  fn(p + ".bo", a.bo);
}
void visit_ffn(const std::string& p, const FeedForwardWeights& f, const ParamVisitor& fn) {
  fn(p + ".w1", f.w1);
  fn(p + ".b1", f.b1);
  fn(p + ".w2", f.w2);
  fn(p + ".b2", f.b2);
}

Var linear(const Var& x, const Var& w, const Var& b) { return nn::add_row(nn::matmul(x, w), b); }

Var attention_block(const AttentionWeights& a, const Var& query_in, const Var& kv_in,
                    const EncoderConfig& cfg, Eigen::Index valid_keys, bool causal) {
  Var q = linear(query_in, a.wq, a.bq);
  Var k = linear(kv_in, a.wk, a.bk);
  Var v = linear(kv_in, a.wv, a.bv);
  Var ctx = nn::attention(q, k, v, cfg.n_heads, valid_keys, causal);
  return linear(ctx, a.wo, a.bo);
}

Var ffn_block(const FeedForwardWeights& f, const Var& x) {
  return linear(nn::gelu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

Var maybe_dropout(const Var& x, const EncoderConfig& cfg, const ForwardContext& ctx) {
  if (!ctx.training || cfg.dropout <= 0.0 || !ctx.rng) return x;
  return nn::dropout(x, cfg.dropout, *ctx.rng);
}

std::vector<std::int32_t> positions(std::size_t n) {
  std::vector<std::int32_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::int32_t>(i);
  return p;
}

Eigen::Index valid_length(const TokenSeq& seq) {
  Eigen::Index n = 0;
  while (n < static_cast<Eigen::Index>(seq.size()) && seq.ids[static_cast<std::size_t>(n)] != Vocab::kPad) ++n;
  return n;
}

void check_ids(const TokenSeq& seq, const EncoderConfig& cfg, const char* what) {
  if (seq.size() == 0) throw ValidationError(std::string(what) + ": empty sequence");
  if (static_cast<int>(seq.size()) > cfg.max_len) {
    throw ValidationError(std::string(what) + ": sequence length " + std::to_string(seq.size()) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
  }
  for (auto id : seq.ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw ValidationError(std::string(what) + ": token id out of vocabulary range");
    }
  }
}

// Decoder hidden states for `ids` (L x H), before the output projection.
Var decoder_hidden(const Seq2SeqWeights& d, const EncoderConfig& cfg, const Var& enc_states,
                   Eigen::Index enc_valid, std::span<const std::int32_t> ids,
                   const ForwardContext& ctx) {
  Var x = nn::embedding(d.token_embedding, ids, d.prompt_embedding, Vocab::kFirstPromptSlot);
  x = nn::add(x, nn::embedding(d.position_embedding, positions(ids.size())));
  x = maybe_dropout(x, cfg, ctx);
  const auto len = static_cast<Eigen::Index>(ids.size());
  for (const auto& layer : d.layers) {
    Var h = nn::layer_norm(x, layer.ln_self.gamma, layer.ln_self.beta);
    x = nn::add(x, maybe_dropout(attention_block(layer.self_attn, h, h, cfg, len, true), cfg, ctx));
    h = nn::layer_norm(x, layer.ln_cross.gamma, layer.ln_cross.beta);
    x = nn::add(x, maybe_dropout(attention_block(layer.cross_attn, h, enc_states, cfg, enc_valid,
                                                 false),
                                 cfg, ctx));
    h = nn::layer_norm(x, layer.ln_ffn.gamma, layer.ln_ffn.beta);
    x = nn::add(x, maybe_dropout(ffn_block(layer.ffn, h), cfg, ctx));
  }
  return nn::layer_norm(x, d.ln_final.gamma, d.ln_final.beta);
}

}  // namespace

void TowerWeights::visit(const std::string& prefix, const ParamVisitor& fn) const {
  fn(prefix + ".token_embedding", token_embedding);
  fn(prefix + ".position_embedding", position_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + ".layers." + std::to_string(i);
    visit_ln(p + ".ln_attn", layers[i].ln_attn, fn);
    visit_attention(p + ".attn", layers[i].attn, fn);
    visit_ln(p + ".ln_ffn", layers[i].ln_ffn, fn);
    visit_ffn(p + ".ffn", layers[i].ffn, fn);
  }
  visit_ln(prefix + ".ln_final", ln_final, fn);
  fn(prefix + ".pool_w", pool_w);
  fn(prefix + ".pool_b", pool_b);
}

TowerWeights TowerWeights::clone() const {
  TowerWeights t;
  t.token_embedding = copy_param(token_embedding);
  t.position_embedding = copy_param(position_embedding);
  for (const auto& l : layers) {
    t.layers.push_back({copy_ln(l.ln_attn), copy_attention(l.attn), copy_ln(l.ln_ffn),
                        copy_ffn(l.ffn)});
  }
  t.ln_final = copy_ln(ln_final);
  t.pool_w = copy_param(pool_w);
  t.pool_b = copy_param(pool_b);
  return t;
}

void Seq2SeqWeights::visit(const std::string& prefix, const ParamVisitor& fn) const {
  fn(prefix + ".token_embedding", token_embedding);
  fn(prefix + ".position_embedding", position_embedding);
  fn(prefix + ".prompt_embedding", prompt_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + ".layers." + std::to_string(i);
    visit_ln(p + ".ln_self", layers[i].ln_self, fn);
    visit_attention(p + ".self_attn", layers[i].self_attn, fn);
    visit_ln(p + ".ln_cross", layers[i].ln_cross, fn);
    visit_attention(p + ".cross_attn", layers[i].cross_attn, fn);
    visit_ln(p + ".ln_ffn", layers[i].ln_ffn, fn);
    visit_ffn(p + ".ffn", layers[i].ffn, fn);
  }
  visit_ln(prefix + ".ln_final", ln_final, fn);
  fn(prefix + ".out_w", out_w);
  fn(prefix + ".out_b", out_b);
}

std::pair<std::shared_ptr<TowerWeights>, std::shared_ptr<TowerWeights>> init_dual_encoder(
    const EncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 qrng(derive_seed(cfg.seed, "query_tower"));
  auto query = std::make_shared<TowerWeights>(init_tower(cfg, qrng));
  if (cfg.tie_towers) return {query, query};
  // Untied towers start equal and hold separate parameters.
  return {query, std::make_shared<TowerWeights>(query->clone())};
}

Seq2SeqWeights init_decoder_from_encoder(const TowerWeights& title, const EncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.seed, "decoder"));
  Seq2SeqWeights d;
  d.token_embedding = copy_param(title.token_embedding);
  d.position_embedding = copy_param(title.position_embedding);
  d.prompt_embedding = cfg.n_prompt_slots > 0
                           ? normal_param(cfg.n_prompt_slots, cfg.hidden_size, rng)
                           : Var(Matrix(0, cfg.hidden_size), true);
  for (const auto& l : title.layers) {
    DecoderLayerWeights dl;
    dl.ln_self = copy_ln(l.ln_attn);
    dl.self_attn = copy_attention(l.attn);
    dl.ln_cross = init_ln(cfg.hidden_size);
    dl.cross_attn = init_attention(cfg.hidden_size, rng);
    dl.ln_ffn = copy_ln(l.ln_ffn);
    dl.ffn = copy_ffn(l.ffn);
    d.layers.push_back(std::move(dl));
  }
  d.ln_final = copy_ln(title.ln_final);
  d.out_w = normal_param(cfg.hidden_size, cfg.vocab_size, rng);
  d.out_b = const_param(1, cfg.vocab_size, 0.0);
  return d;
}

// --- forward ---------------------------------------------------------------------

TowerOutput run_tower(const TowerWeights& t, const EncoderConfig& cfg, const TokenSeq& seq,
                      const ForwardContext& ctx) {
  check_ids(seq, cfg, "encode");
  const Eigen::Index valid = valid_length(seq);
  if (valid == 0) throw ValidationError("encode: sequence is all padding");
  Var x = nn::embedding(t.token_embedding, seq.ids);
  x = nn::add(x, nn::embedding(t.position_embedding, positions(seq.size())));
  x = maybe_dropout(x, cfg, ctx);
  for (const auto& layer : t.layers) {
    Var h = nn::layer_norm(x, layer.ln_attn.gamma, layer.ln_attn.beta);
    x = nn::add(x, maybe_dropout(attention_block(layer.attn, h, h, cfg, valid, false), cfg, ctx));
    h = nn::layer_norm(x, layer.ln_ffn.gamma, layer.ln_ffn.beta);
    x = nn::add(x, maybe_dropout(ffn_block(layer.ffn, h), cfg, ctx));
  }
  x = nn::layer_norm(x, t.ln_final.gamma, t.ln_final.beta);
  Var pooled_in;
  if (cfg.pooling == Pooling::cls) {
    const Eigen::Index first[] = {0};
    pooled_in = nn::select_rows(x, first);
  } else {
    pooled_in = nn::mean_rows(x, valid);
  }
  Var pooled = nn::tanh(linear(pooled_in, t.pool_w, t.pool_b));
  return {x, pooled, valid};
}

Var encode(const TowerWeights& tower, const EncoderConfig& cfg, std::span<const TokenSeq> batch,
           const ForwardContext& ctx) {
  if (batch.empty()) throw ValidationError("encode: empty batch");
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (const auto& seq : batch) rows.push_back(run_tower(tower, cfg, seq, ctx).pooled);
  return nn::concat_rows(rows);
}

Var decoder_forward(const Seq2SeqWeights& d, const EncoderConfig& cfg, const Var& enc_states,
                    Eigen::Index enc_valid, const TokenSeq& input, const ForwardContext& ctx) {
  check_ids(input, cfg, "decoder_forward");
  if (enc_states.cols() != cfg.hidden_size) {
    throw ValidationError("decoder_forward: encoder state width does not match hidden size");
  }
  if (enc_valid < 1 || enc_valid > enc_states.rows()) {
    throw ValidationError("decoder_forward: encoder state length mismatch");
  }
  Var zero_row(Matrix::Zero(1, cfg.vocab_size), false);
  if (input.size() == 1) return zero_row;
  std::span<const std::int32_t> ids(input.ids.data(), input.size() - 1);
  Var h = decoder_hidden(d, cfg, enc_states, enc_valid, ids, ctx);
  Var body = linear(h, d.out_w, d.out_b);
  const Var parts[] = {zero_row, body};
  return nn::concat_rows(parts);
}

TokenSeq greedy_decode(const Seq2SeqWeights& d, const EncoderConfig& cfg, const Var& enc_states,
                       Eigen::Index enc_valid, const TokenSeq& prefix, int max_steps) {
  nn::NoGradGuard no_grad;
  check_ids(prefix, cfg, "greedy_decode");
  std::vector<std::int32_t> ids = prefix.ids;
  TokenSeq out;
  for (int step = 0; step < max_steps; ++step) {
    if (static_cast<int>(ids.size()) >= cfg.max_len) {
      out.truncated = true;
      break;
    }
    Var h = decoder_hidden(d, cfg, enc_states, enc_valid, ids, {});
    const Var last_in = nn::select_rows(h, std::vector<Eigen::Index>{h.rows() - 1});
    const Matrix logits = linear(last_in, d.out_w, d.out_b).value();
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    const auto token = static_cast<std::int32_t>(best);
    if (token == Vocab::kSep) break;
    out.ids.push_back(token);
    ids.push_back(token);
  }
  return out;
}

// --- full model ---------------------------------------------------------------------

DualEncoderModel::DualEncoderModel(const EncoderConfig& cfg, std::string fingerprint)
    : config(cfg), vocab_fingerprint(std::move(fingerprint)) {
  auto [q, t] = init_dual_encoder(cfg);
  query_tower = std::move(q);
  title_tower = std::move(t);
  decoder = std::make_shared<Seq2SeqWeights>(init_decoder_from_encoder(*title_tower, cfg));
}

std::vector<NamedParameter> DualEncoderModel::parameters() const {
  std::vector<NamedParameter> out;
  auto collect = [&](const std::string& name, const Var& v) { out.push_back({name, v}); };
  query_tower->visit("query_tower", collect);
  if (!tied()) title_tower->visit("title_tower", collect);
  if (decoder) decoder->visit("decoder", collect);
  return out;
}

std::vector<NamedParameter> DualEncoderModel::decoder_parameters() const {
  std::vector<NamedParameter> out;
  if (decoder) decoder->visit("decoder", [&](const std::string& n, const Var& v) {
    out.push_back({n, v});
  });
  return out;
}

void DualEncoderModel::zero_grad() const {
  for (auto& p : parameters()) {
    Var v = p.var;
    v.zero_grad();
  }
}

Var DualEncoderModel::encode_queries(std::span<const TokenSeq> batch,
                                     const ForwardContext& ctx) const {
  return encode(*query_tower, config, batch, ctx);
}

Var DualEncoderModel::encode_titles(std::span<const TokenSeq> batch,
                                    const ForwardContext& ctx) const {
  return encode(*title_tower, config, batch, ctx);
}

// --- inference pack ---------------------------------------------------------------------

InferencePack::InferencePack(EncoderConfig cfg, std::shared_ptr<const TowerWeights> q,
                             std::shared_ptr<const TowerWeights> t, std::string fp)
    : config_(std::move(cfg)),
      query_tower_(std::move(q)),
      title_tower_(std::move(t)),
      fingerprint_(std::move(fp)) {}

Matrix InferencePack::encode_queries(std::span<const TokenSeq> batch) const {
  nn::NoGradGuard no_grad;
  return encode(*query_tower_, config_, batch).value();
}

Matrix InferencePack::encode_titles(std::span<const TokenSeq> batch) const {
  nn::NoGradGuard no_grad;
  return encode(*title_tower_, config_, batch).value();
}

std::vector<NamedParameter> InferencePack::parameters() const {
  std::vector<NamedParameter> out;
  auto collect = [&](const std::string& name, const Var& v) { out.push_back({name, v}); };
  query_tower_->visit("query_tower", collect);
  if (!tied()) title_tower_->visit("title_tower", collect);
  return out;
}

InferencePack export_inference(const DualEncoderModel& model) {
  auto q = std::make_shared<const TowerWeights>(model.query_tower->clone());
  auto t = model.tied() ? q : std::make_shared<const TowerWeights>(model.title_tower->clone());
  return InferencePack(model.config, q, t, model.vocab_fingerprint);
}

// --- checkpoints ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kWeights = "weights.bin";

nn::TensorArchive make_archive(const std::string& kind, const EncoderConfig& cfg,
                               const std::string& fingerprint, bool tied,
                               const std::vector<NamedParameter>& params) {
  nn::TensorArchive a;
  a.meta["kind"] = kind;
  a.meta["config"] = cfg.to_json();
  a.meta["vocab_fingerprint"] = fingerprint;
  a.meta["tied"] = tied;
  a.meta["embedding_dim"] = cfg.hidden_size;
  for (const auto& p : params) a.tensors.push_back({p.name, p.var.value()});
  return a;
}

struct LoadedArchive {
  nn::TensorArchive archive;
  EncoderConfig config;
  std::string fingerprint;
  std::string kind;
};

LoadedArchive read_model_archive(const std::filesystem::path& dir,
                                 const std::optional<std::string>& expected) {
  LoadedArchive out;
  out.archive = nn::read_archive(dir / kManifest, dir / kWeights);
  const auto& meta = out.archive.meta;
  try {
    out.kind = meta.at("kind").get<std::string>();
    out.config = EncoderConfig::from_json(meta.at("config"));
    out.fingerprint = meta.at("vocab_fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint " + dir.string() + ": malformed metadata: " + e.what());
  }
  out.config.validate();
  if (expected && *expected != out.fingerprint) {
    throw ValidationError("checkpoint " + dir.string() + ": vocab fingerprint mismatch (expected " +
                          *expected + ", found " + out.fingerprint + ")");
  }
  return out;
}

void assign_all(const std::vector<NamedParameter>& params, const nn::TensorArchive& a) {
  for (const auto& p : params) {
    const Matrix& m = a.at(p.name);
    if (m.rows() != p.var.rows() || m.cols() != p.var.cols()) {
      throw ValidationError("checkpoint tensor " + p.name + " has the wrong shape");
    }
    Var v = p.var;
    v.mutable_value() = m;
  }
}

}  // namespace

void save_checkpoint(const DualEncoderModel& model, const std::filesystem::path& dir) {
  if (!model.decoder) throw ValidationError("save_checkpoint: model has no decoder");
  auto archive = make_archive("full", model.config, model.vocab_fingerprint, model.tied(),
                              model.parameters());
  write_dir_atomic(dir, [&](const std::filesystem::path& tmp) {
    nn::write_archive(tmp / kManifest, tmp / kWeights, archive);
  });
}

DualEncoderModel load_checkpoint(const std::filesystem::path& dir,
                                 const std::optional<std::string>& expected) {
  auto loaded = read_model_archive(dir, expected);
  if (loaded.kind != "full") {
    throw ValidationError("checkpoint " + dir.string() +
                          ": decoder missing (this is an inference pack, not a full model)");
  }
  DualEncoderModel model(loaded.config, loaded.fingerprint);
  assign_all(model.parameters(), loaded.archive);
  return model;
}

void save_inference_pack(const InferencePack& pack, const std::filesystem::path& dir) {
  auto archive = make_archive("inference", pack.config(), pack.vocab_fingerprint(), pack.tied(),
                              pack.parameters());
  write_dir_atomic(dir, [&](const std::filesystem::path& tmp) {
    nn::write_archive(tmp / kManifest, tmp / kWeights, archive);
  });
}

InferencePack load_inference_pack(const std::filesystem::path& dir,
                                  const std::optional<std::string>& expected) {
  auto loaded = read_model_archive(dir, expected);
  auto [q, t] = init_dual_encoder(loaded.config);
  std::vector<NamedParameter> params;
  auto collect = [&](const std::string& n, const Var& v) { params.push_back({n, v}); };
  q->visit("query_tower", collect);
  if (q != t) t->visit("title_tower", collect);
  assign_all(params, loaded.archive);
  std::shared_ptr<const TowerWeights> qc = q;
  std::shared_ptr<const TowerWeights> tc = t;
  return InferencePack(loaded.config, qc, tc, loaded.fingerprint);
}

}  // namespace eer::model
