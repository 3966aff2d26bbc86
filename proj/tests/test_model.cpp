#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "eer/error.hpp"
#include "eer/mining.hpp"
#include "eer/model.hpp"
#include "eer/trainer.hpp"
#include "eer/util.hpp"
#include "support.hpp"

using namespace eer;
using namespace eer::model;

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

EncoderConfig small_config(std::size_t vocab_size) {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_size = 16;
  cfg.n_heads = 2;
  cfg.ff_size = 32;
  cfg.max_len = 24;
  cfg.vocab_size = static_cast<int>(vocab_size);
  cfg.seed = 5;
  return cfg;
}

class ModelTest : public ::testing::Test {
 protected:
  text::Vocab vocab = fixtures::synthetic_vocab(50);
  EncoderConfig cfg = small_config(vocab.size());
  std::mt19937_64 rng{21};

  std::vector<TokenSeq> random_batch(std::size_t n) {
    std::uniform_int_distribution<std::size_t> len(1, 10);
    std::vector<TokenSeq> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fixtures::random_sequence(vocab, len(rng), rng));
    return out;
  }
};

}  // namespace

TEST_F(ModelTest, SameSeedGivesIdenticalParameters) {
  DualEncoderModel a(cfg, vocab.fingerprint()), b(cfg, vocab.fingerprint());
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(bitwise_equal(pa[i].var.value(), pb[i].var.value())) << pa[i].name;
  }
  auto other = cfg;
  other.seed = 6;
  DualEncoderModel c(other, vocab.fingerprint());
  EXPECT_FALSE(bitwise_equal(pa[0].var.value(), c.parameters()[0].var.value()));
}

TEST_F(ModelTest, TiedTowersShareOneParameterSet) {
  auto tied_cfg = cfg;
  tied_cfg.tie_towers = true;
  DualEncoderModel tied(tied_cfg, vocab.fingerprint());
  EXPECT_TRUE(tied.tied());
  EXPECT_EQ(tied.query_tower.get(), tied.title_tower.get());
  DualEncoderModel untied(cfg, vocab.fingerprint());
  EXPECT_FALSE(untied.tied());
  EXPECT_GT(untied.parameters().size(), tied.parameters().size());
}

TEST_F(ModelTest, UntiedTowersDivergeAfterOneAsymmetricStep) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  const auto& q = m.query_tower->layers[0].attn.wq;
  const auto& t = m.title_tower->layers[0].attn.wq;
  EXPECT_NE(q.node(), t.node());
  EXPECT_TRUE(bitwise_equal(q.value(), t.value()));

  const auto batch = random_batch(3);
  Var out = m.encode_queries(batch);
  nn::Seed seed{out, Matrix::Ones(out.rows(), out.cols())};
  nn::backward(std::span<const nn::Seed>(&seed, 1));
  for (auto& p : m.parameters()) {
    Var v = p.var;
    if (v.grad().size()) v.mutable_value() -= 0.1 * v.grad();
  }
  EXPECT_FALSE(bitwise_equal(q.value(), t.value()));
  EXPECT_TRUE(m.title_tower->layers[0].attn.wq.grad().size() == 0);
}

TEST_F(ModelTest, EncodeIsDeterministicAndBatchEquivariant) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  auto batch = random_batch(5);
  batch[3] = batch[1];
  const Matrix e = m.encode_titles(batch).value();
  EXPECT_EQ(e.rows(), 5);
  EXPECT_EQ(e.cols(), cfg.hidden_size);
  EXPECT_TRUE(e.allFinite());
  EXPECT_TRUE(bitwise_equal(e.row(1), e.row(3)));

  std::vector<TokenSeq> permuted = {batch[4], batch[2], batch[0], batch[3], batch[1]};
  const Matrix p = m.encode_titles(permuted).value();
  const int order[] = {4, 2, 0, 3, 1};
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(bitwise_equal(p.row(i), e.row(order[i])));
}

TEST_F(ModelTest, TrailingPaddingDoesNotChangeOutput) {
  for (auto pooling : {Pooling::cls, Pooling::mean}) {
    auto c = cfg;
    c.pooling = pooling;
    DualEncoderModel m(c, vocab.fingerprint());
    for (const auto& seq : random_batch(20)) {
      TokenSeq padded = seq;
      for (int i = 0; i < 5; ++i) padded.ids.push_back(text::Vocab::kPad);
      const std::vector<TokenSeq> a = {seq}, b = {padded};
      const Matrix diff = m.encode_queries(a).value() - m.encode_queries(b).value();
      EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST_F(ModelTest, CosinesStayInRangeAndLongInputsFail) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  const auto batch = random_batch(12);
  Var e = m.encode_titles(batch);
  const Matrix cos = nn::cosine_matrix(e, e).value();
  EXPECT_LE(cos.maxCoeff(), 1.0 + 1e-7);
  EXPECT_GE(cos.minCoeff(), -1.0 - 1e-7);

  const std::vector<TokenSeq> too_long = {fixtures::random_sequence(vocab, 30, rng)};
  EXPECT_THROW(m.encode_titles(too_long), ValidationError);
}

TEST_F(ModelTest, DecoderCopiesTitleTowerAndSeedsCrossAttentionFresh) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  const auto& tt = *m.title_tower;
  const auto& d = *m.decoder;
  EXPECT_TRUE(bitwise_equal(d.token_embedding.value(), tt.token_embedding.value()));
  EXPECT_NE(d.token_embedding.node(), tt.token_embedding.node());
  ASSERT_EQ(d.layers.size(), tt.layers.size());
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    const auto& dl = d.layers[l];
    const auto& el = tt.layers[l];
    EXPECT_TRUE(bitwise_equal(dl.self_attn.wq.value(), el.attn.wq.value()));
    EXPECT_TRUE(bitwise_equal(dl.self_attn.wo.value(), el.attn.wo.value()));
    EXPECT_TRUE(bitwise_equal(dl.ffn.w1.value(), el.ffn.w1.value()));
    EXPECT_TRUE(bitwise_equal(dl.ffn.b2.value(), el.ffn.b2.value()));
    EXPECT_TRUE(bitwise_equal(dl.ln_self.gamma.value(), el.ln_attn.gamma.value()));
    EXPECT_TRUE(bitwise_equal(dl.ln_ffn.beta.value(), el.ln_ffn.beta.value()));
    for (const Var* w : {&dl.cross_attn.wq, &dl.cross_attn.wk, &dl.cross_attn.wv, &dl.cross_attn.wo}) {
      EXPECT_GT(w->value().cwiseAbs().maxCoeff(), 0.0);
      for (const Var* c : {&el.attn.wq, &el.attn.wk, &el.attn.wv, &el.attn.wo}) {
        EXPECT_FALSE(bitwise_equal(w->value(), c->value()));
      }
    }
  }
  EXPECT_EQ(d.out_w.cols(), cfg.vocab_size);
  EXPECT_EQ(d.prompt_embedding.rows(), cfg.n_prompt_slots);
}

TEST_F(ModelTest, ZeroOutputProjectionGivesUniformRows) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  Var w = m.decoder->out_w, b = m.decoder->out_b;
  w.mutable_value().setZero();
  b.mutable_value().setZero();
  const auto title = fixtures::random_sequence(vocab, 6, rng);
  const auto out = run_tower(*m.title_tower, cfg, title);
  const auto target = fixtures::random_sequence(vocab, 7, rng);
  const Matrix logits = decoder_forward(*m.decoder, cfg, out.states, out.valid, target).value();
  EXPECT_EQ(logits.rows(), static_cast<Eigen::Index>(target.size()));
  EXPECT_EQ(logits.cols(), cfg.vocab_size);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Eigen::RowVectorXd p = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
    const Eigen::RowVectorXd soft = p / p.sum();
    EXPECT_NEAR(soft.maxCoeff(), 1.0 / cfg.vocab_size, 1e-15);
    EXPECT_NEAR(soft.minCoeff(), 1.0 / cfg.vocab_size, 1e-15);
  }
}

TEST_F(ModelTest, DecoderIsCausal) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  const auto title = fixtures::random_sequence(vocab, 6, rng);
  const auto out = run_tower(*m.title_tower, cfg, title);
  const auto a = fixtures::random_sequence(vocab, 8, rng);
  for (std::size_t t = 1; t + 1 < a.size(); ++t) {
    TokenSeq b = a;
    b.ids[t] = a.ids[t] == vocab.id("w0") ? vocab.id("w1") : vocab.id("w0");
    const Matrix la = decoder_forward(*m.decoder, cfg, out.states, out.valid, a).value();
    const Matrix lb = decoder_forward(*m.decoder, cfg, out.states, out.valid, b).value();
    for (std::size_t r = 0; r <= t; ++r) {
      EXPECT_TRUE(bitwise_equal(la.row(static_cast<Eigen::Index>(r)), lb.row(static_cast<Eigen::Index>(r))))
          << "row " << r << " changed by token " << t;
    }
    EXPECT_GT((la.row(static_cast<Eigen::Index>(t + 1)) - lb.row(static_cast<Eigen::Index>(t + 1)))
                  .cwiseAbs()
                  .maxCoeff(),
              0.0);
  }
  // Duplicated inputs give duplicated logits.
  EXPECT_TRUE(bitwise_equal(decoder_forward(*m.decoder, cfg, out.states, out.valid, a).value(),
                            decoder_forward(*m.decoder, cfg, out.states, out.valid, a).value()));
  EXPECT_THROW(decoder_forward(*m.decoder, cfg, out.states, out.valid + 5, a), ValidationError);
}

TEST_F(ModelTest, GreedyDecodeEdgeCases) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  const auto title = fixtures::random_sequence(vocab, 6, rng);
  const auto out = run_tower(*m.title_tower, cfg, title);
  TokenSeq prefix;
  prefix.ids = {text::Vocab::kCls};
  EXPECT_EQ(greedy_decode(*m.decoder, cfg, out.states, out.valid, prefix, 0).size(), 0u);
  const auto a = greedy_decode(*m.decoder, cfg, out.states, out.valid, prefix, 10);
  const auto b = greedy_decode(*m.decoder, cfg, out.states, out.valid, prefix, 10);
  EXPECT_EQ(a, b);
  EXPECT_LE(a.size(), 10u);
}

TEST(DecoderProbe, OverfitOnOnePairEmitsGoldEventAndDivergesFromEncoder) {
  const auto corpus = fixtures::small_corpus(1, 11, 1, 1);
  const auto vocab = fixtures::corpus_vocab(corpus);
  trainer::TrainConfig cfg;
  cfg.toggles = trainer::Toggles::parse("GD");
  cfg.model = small_config(vocab.size());
  cfg.model.max_len = 32;
  cfg.epochs = 150;
  cfg.learning_rate = 1e-2;
  cfg.mine = false;
  cfg.random_negatives = 0;
  cfg.augment.enabled = false;
  trainer::Resources res;
  res.vocab = &vocab;
  auto result = trainer::train(cfg, corpus, nullptr, corpus.documents, res);
  const auto& m = result.model;
  EXPECT_LT(result.log.epochs.back().mean.gen, result.log.epochs.front().mean.gen);

  const auto& doc = corpus.documents[0];
  const auto title = text::encoder_input(doc.title, vocab, static_cast<std::size_t>(m.config.max_len));
  const auto out = run_tower(*m.title_tower, m.config, title);
  TokenSeq prefix;
  prefix.ids = {text::Vocab::kCls};
  const auto decoded = greedy_decode(*m.decoder, m.config, out.states, out.valid, prefix, 16);
  std::vector<std::string> tokens;
  for (auto id : decoded.ids) tokens.push_back(vocab.token(id));
  EXPECT_EQ(tokens, text::serialize_event(*corpus.gold_event(doc.doc_id)));

  const double diff = (m.decoder->layers[0].ffn.w1.value() - m.title_tower->layers[0].ffn.w1.value()).norm();
  EXPECT_GT(diff, 0.0);
}

TEST_F(ModelTest, ExportMatchesTrainTimeEncoders) {
  DualEncoderModel m(cfg, vocab.fingerprint());
  // Make the towers differ so a swapped tower would be caught.
  Var w = m.query_tower->pool_b;
  w.mutable_value().array() += 0.25;
  const InferencePack pack = export_inference(m);
  EXPECT_EQ(pack.embedding_dim(), cfg.hidden_size);
  for (const auto& p : pack.parameters()) EXPECT_EQ(p.name.find("decoder"), std::string::npos);
  for (int i = 0; i < 100; ++i) {
    const auto batch = random_batch(1);
    const Matrix dq = pack.encode_queries(batch) - m.encode_queries(batch).value();
    const Matrix dt = pack.encode_titles(batch) - m.encode_titles(batch).value();
    EXPECT_LE(dq.cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(dt.cwiseAbs().maxCoeff(), 1e-6);
  }
  // The pack is a deep copy.
  w.mutable_value().array() += 1.0;
  const auto batch = random_batch(1);
  EXPECT_GT((pack.encode_queries(batch) - m.encode_queries(batch).value()).cwiseAbs().maxCoeff(), 0.1);
}

TEST_F(ModelTest, CheckpointRoundTripIsBitwise) {
  fixtures::TempDir dir;
  DualEncoderModel m(cfg, vocab.fingerprint());
  save_checkpoint(m, dir / "ckpt");
  const auto loaded = load_checkpoint(dir / "ckpt", vocab.fingerprint());
  EXPECT_EQ(loaded.config, m.config);
  const auto a = m.parameters(), b = loaded.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(bitwise_equal(a[i].var.value(), b[i].var.value())) << a[i].name;
  }
  save_checkpoint(loaded, dir / "again");
  EXPECT_EQ(read_file(dir / "ckpt" / "weights.bin"), read_file(dir / "again" / "weights.bin"));
}

TEST_F(ModelTest, PackAndFingerprintErrors) {
  fixtures::TempDir dir;
  DualEncoderModel m(cfg, vocab.fingerprint());
  save_inference_pack(export_inference(m), dir / "pack");
  try {
    load_checkpoint(dir / "pack");
    FAIL() << "expected decoder missing";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder missing"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_inference_pack(dir / "pack", std::string("0000")), ValidationError);
  const auto pack = load_inference_pack(dir / "pack", vocab.fingerprint());
  const auto batch = random_batch(4);
  EXPECT_TRUE(bitwise_equal(pack.encode_titles(batch), export_inference(m).encode_titles(batch)));

  save_checkpoint(m, dir / "full");
  EXPECT_NO_THROW(load_inference_pack(dir / "full"));
  EXPECT_THROW(load_checkpoint(dir / "full", std::string("0000")), ValidationError);
}

TEST(EncoderConfigTest, ValidationAndJson) {
  auto cfg = EncoderConfig::desk(100);
  EXPECT_EQ(cfg.n_layers, 2);
  EXPECT_EQ(cfg.hidden_size, 64);
  EXPECT_EQ(EncoderConfig::paper_scale(100).hidden_size, 768);
  EXPECT_EQ(EncoderConfig::from_json(cfg.to_json()), cfg);
  cfg.n_heads = 5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  auto j = EncoderConfig::desk(100).to_json();
  j["unknown"] = 1;
  EXPECT_THROW(EncoderConfig::from_json(j), ValidationError);
}
