#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "eer/error.hpp"
#include "eer/mining.hpp"
#include "eer/text.hpp"
#include "support.hpp"

using namespace eer;
using namespace eer::mining;

namespace {

std::map<std::string, int> multiset(const std::string& text) {
  std::map<std::string, int> m;
  for (const auto& t : text::split_tokens(text)) ++m[t];
  return m;
}

// One query (q0, relevant to d0) and docs whose cosine to the query
// embedding (1, 0) is given.
struct Scene {
  corpus::Corpus corpus;
  retrieval::VectorIndex index;
  nn::Matrix query = nn::Matrix{{1.0, 0.0}};
};

Scene scene(const std::vector<double>& cosines) {
  Scene s;
  nn::Matrix emb(static_cast<Eigen::Index>(cosines.size()), 2);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < cosines.size(); ++i) {
    const std::string id = "d" + std::to_string(100 + i);
    ids.push_back(id);
    s.corpus.documents.push_back({id, "title " + std::to_string(i), "e" + std::to_string(i)});
    const double c = cosines[i];
    emb(static_cast<Eigen::Index>(i), 0) = c;
    emb(static_cast<Eigen::Index>(i), 1) = std::sqrt(std::max(0.0, 1.0 - c * c));
  }
  s.corpus.queries.push_back({"q0", "query", "e0"});
  for (const auto& id : ids) s.corpus.pairs.push_back({"q0", id, id == ids[0] ? 1 : 0});
  s.corpus.reindex();
  s.index = retrieval::VectorIndex(ids, emb, "enc", "voc");
  return s;
}

MiningConfig mining_config(std::size_t k, std::size_t m) {
  MiningConfig cfg;
  cfg.k = k;
  cfg.m = m;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST(Eda, IdentityConfigReturnsInput) {
  AugmentConfig cfg;
  cfg.p_delete = 0.0;
  cfg.p_duplicate = 0.0;
  cfg.n_swaps = 0;
  cfg.entity_table = {{"nomatch", {"x"}}};
  const auto variants = eda_augment("a b c d", cfg, 3);
  ASSERT_EQ(variants.size(), 3u);
  for (const auto& v : variants) EXPECT_EQ(v.text, "a b c d") << strategy_name(v.strategy);
}

TEST(Eda, EntityReplacementTrace) {
  AugmentConfig cfg;
  cfg.entity_table = {{"华为", {"荣耀"}}};
  const auto variants = eda_augment("华为 发布 新品", cfg);
  EXPECT_EQ(variants[0].strategy, AugmentStrategy::entity_replacement);
  EXPECT_EQ(variants[0].text, "荣耀发布新品");
  EXPECT_EQ(text::split_tokens(variants[0].text), text::split_tokens("荣耀 发布 新品"));
}

TEST(Eda, ReorderPreservesMultisetUnderFuzz) {
  std::mt19937_64 rng(1);
  const std::vector<std::string> alphabet = {"a", "b", "c", "华", "x1", "y"};
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(1, 12);
  std::uniform_int_distribution<int> swaps(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> tokens;
    for (std::size_t i = len(rng); i > 0; --i) tokens.push_back(alphabet[pick(rng)]);
    const auto out = reorder(tokens, swaps(rng), rng);
    std::map<std::string, int> a, b;
    for (const auto& t : tokens) ++a[t];
    for (const auto& t : out) ++b[t];
    EXPECT_EQ(a, b);
  }
}

TEST(Eda, VariantsOnlyUseInputAndReplacementTokens) {
  AugmentConfig cfg;
  cfg.entity_table = {{"acme", {"globex", "initech"}}, {"rocket", {"probe"}}};
  cfg.p_delete = 0.3;
  cfg.p_duplicate = 0.3;
  cfg.n_swaps = 2;
  const std::string input = "acme launches rocket today acme";
  std::set<std::string> allowed;
  for (const auto& t : text::split_tokens(input)) allowed.insert(t);
  for (const auto& [k, v] : cfg.entity_table) allowed.insert(v.begin(), v.end());
  for (std::uint64_t draw = 0; draw < 200; ++draw) {
    const auto variants = eda_augment(input, cfg, draw);
    for (const auto& v : variants) {
      for (const auto& t : text::split_tokens(v.text)) EXPECT_TRUE(allowed.count(t)) << t;
    }
    EXPECT_EQ(multiset(variants[2].text), multiset(input));
    EXPECT_EQ(eda_augment(input, cfg, draw)[1].text, variants[1].text);
  }
}

TEST(Eda, DeleteAndDuplicateNeverHitTheSameToken) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> tokens = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 300; ++trial) {
    const auto out = delete_duplicate(tokens, 0.4, 0.4, rng);
    std::map<std::string, int> counts;
    for (const auto& t : out) ++counts[t];
    for (const auto& [t, c] : counts) EXPECT_LE(c, 2);
  }
}

TEST(Eda, InvalidConfigAndEmptyText) {
  AugmentConfig cfg;
  EXPECT_THROW(eda_augment("", cfg), ValidationError);
  cfg.p_delete = 1.5;
  EXPECT_THROW(eda_augment("a", cfg), ValidationError);
  AugmentConfig empty_sibling;
  empty_sibling.entity_table = {{"a", {}}};
  EXPECT_THROW(empty_sibling.validate(), ValidationError);
}

TEST(Eda, EntityTableFileRoundTrip) {
  fixtures::TempDir dir;
  const EntityTable table = {{"华为", {"荣耀", "小米"}}, {"acme", {"globex"}}};
  save_entity_table(table, dir / "t.json");
  EXPECT_EQ(load_entity_table(dir / "t.json"), table);
}

TEST(Mine, AllNeighboursAboveUpperGivesNothing) {
  auto s = scene({0.95, 0.9, 0.85, 0.81, 0.801});
  EXPECT_TRUE(mine_semantic_negatives("q0", s.query, s.index, s.corpus, mining_config(50, 5)).empty());
}

TEST(Mine, UnderSupplyReturnsAllSurvivors) {
  auto s = scene({0.95, 0.9, 0.7, 0.5, 0.3, 0.1});
  const auto got = mine_semantic_negatives("q0", s.query, s.index, s.corpus, mining_config(50, 5));
  std::set<std::string> ids;
  for (const auto& d : got) ids.insert(d.doc_id);
  EXPECT_EQ(ids, (std::set<std::string>{"d102", "d103"}));
}

TEST(Mine, SamplesWithinBoundsDeterministically) {
  std::vector<double> cos = {0.9};
  for (int i = 0; i < 20; ++i) cos.push_back(0.41 + 0.019 * i);
  for (int i = 0; i < 10; ++i) cos.push_back(0.2 - 0.01 * i);
  auto s = scene(cos);
  const auto cfg = mining_config(100, 5);
  const auto a = mine_semantic_negatives("q0", s.query, s.index, s.corpus, cfg);
  const auto b = mine_semantic_negatives("q0", s.query, s.index, s.corpus, cfg);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  for (const auto& d : a) {
    EXPECT_GE(d.score, cfg.lower);
    EXPECT_LT(d.score, cfg.upper);
  }
  auto other = cfg;
  other.seed = 99;
  EXPECT_NE(mine_semantic_negatives("q0", s.query, s.index, s.corpus, other), a);
}

TEST(Mine, RelevantDocsAreNeverMined) {
  auto s = scene({0.6, 0.5, 0.45});
  const auto got = mine_semantic_negatives("q0", s.query, s.index, s.corpus, mining_config(10, 1));
  ASSERT_EQ(got.size(), 1u);
  EXPECT_NE(got[0].doc_id, "d100");
}

TEST(Mine, ConfigConstraints) {
  EXPECT_THROW(mining_config(40, 5).validate(), ValidationError);
  EXPECT_NO_THROW(mining_config(50, 5).validate());
  auto bounds = mining_config(100, 5);
  bounds.lower = 0.9;
  EXPECT_THROW(bounds.validate(), ValidationError);
  EXPECT_THROW(MiningConfig::from_json({{"k", 100}, {"zzz", 1}}), ValidationError);
  auto s = scene({0.5});
  EXPECT_THROW(mine_semantic_negatives("nope", s.query, s.index, s.corpus, mining_config(10, 1)),
               ValidationError);
}

class Batches : public ::testing::Test {
 protected:
  corpus::Corpus corpus = fixtures::small_corpus(12, 6);
  std::vector<TrainExample> examples = positive_examples(corpus);

  TrainExample with_negative(std::size_t i, const std::string& neg) {
    auto e = examples[i];
    e.hard_neg_doc_ids = {neg};
    return e;
  }
  std::string irrelevant_doc(const TrainExample& e, std::size_t skip = 0) {
    const auto& rel = corpus.relevant(e.query_id);
    for (const auto& d : corpus.documents) {
      if (!rel.count(d.doc_id) && skip-- == 0) return d.doc_id;
    }
    return {};
  }
};

TEST_F(Batches, PoolIsUnionOfHardNegativesPlusRandoms) {
  // Two queries of different events.
  std::size_t j = 1;
  while (corpus.query(examples[j].query_id).event_id == corpus.query(examples[0].query_id).event_id) ++j;
  const auto a = with_negative(0, irrelevant_doc(examples[0], 0));
  auto b = with_negative(j, irrelevant_doc(examples[j], 5));
  ASSERT_NE(a.hard_neg_doc_ids[0], b.hard_neg_doc_ids[0]);
  const std::vector<TrainExample> ex = {a, b};
  std::mt19937_64 rng(1);
  const auto batch = assemble_batch(ex, corpus, 3, rng);
  ASSERT_EQ(batch.pool.size(), 5u);
  EXPECT_EQ(batch.pool[0].doc_id, a.hard_neg_doc_ids[0]);
  EXPECT_EQ(batch.pool[1].doc_id, b.hard_neg_doc_ids[0]);
  EXPECT_EQ(batch.neg_valid.rows(), 2);
  EXPECT_EQ(batch.neg_valid.cols(), 5);
  EXPECT_TRUE(batch.neg_own(0, 0));
  EXPECT_FALSE(batch.neg_own(0, 1));

  std::mt19937_64 rng2(1);
  const auto again = assemble_batch(ex, corpus, 3, rng2);
  for (std::size_t i = 0; i < batch.pool.size(); ++i) EXPECT_EQ(again.pool[i].doc_id, batch.pool[i].doc_id);
}

TEST_F(Batches, PositivesAndRelevantDocsAreMaskedPerQuery) {
  // Query 0's relevant title appears as query k's hard negative.
  const auto& rel0 = corpus.relevant(examples[0].query_id);
  std::size_t k = 1;
  while (corpus.relevant(examples[k].query_id).count(examples[0].pos_doc_id)) ++k;
  std::vector<TrainExample> ex = {examples[0], with_negative(k, examples[0].pos_doc_id)};
  std::mt19937_64 rng(7);
  const auto batch = assemble_batch(ex, corpus, 4, rng);
  ASSERT_EQ(batch.pool[0].doc_id, examples[0].pos_doc_id);
  EXPECT_FALSE(batch.neg_valid(0, 0));
  EXPECT_TRUE(batch.neg_valid(1, 0));
  for (std::size_t m = 0; m < batch.pool.size(); ++m) {
    const auto& d = batch.pool[m].doc_id;
    if (rel0.count(d)) EXPECT_FALSE(batch.neg_valid(0, static_cast<Eigen::Index>(m)));
    EXPECT_NE(d, ex[1].pos_doc_id);
  }
}

TEST_F(Batches, OwnPositiveNeverInOwnNegatives) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(examples.begin(), examples.end(), rng);
    const std::span<const TrainExample> ex(examples.data(), 8);
    const auto batch = assemble_batch(ex, corpus, 6, rng);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const auto& rel = corpus.relevant(ex[i].query_id);
      for (std::size_t m = 0; m < batch.pool.size(); ++m) {
        if (batch.neg_valid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m))) {
          EXPECT_FALSE(rel.count(batch.pool[m].doc_id));
        }
      }
      for (std::size_t j = 0; j < ex.size(); ++j) {
        if (j != i && rel.count(ex[j].pos_doc_id)) {
          EXPECT_FALSE(batch.allpos_valid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
      }
      EXPECT_TRUE(batch.allpos_valid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    }
  }
}

TEST_F(Batches, OwnedNegativeOnlyScoredByItsOwner) {
  std::mt19937_64 rng(5);
  const std::span<const TrainExample> ex(examples.data(), 3);
  auto batch = assemble_batch(ex, corpus, 2, rng);
  const auto before = batch.pool.size();
  add_owned_negative(batch, 1, "some edited title");
  ASSERT_EQ(batch.pool.size(), before + 1);
  const auto m = static_cast<Eigen::Index>(before);
  EXPECT_TRUE(batch.neg_valid(1, m));
  EXPECT_TRUE(batch.neg_own(1, m));
  EXPECT_FALSE(batch.neg_valid(0, m));
  EXPECT_FALSE(batch.neg_valid(2, m));
  EXPECT_THROW(add_owned_negative(batch, 3, "x"), ValidationError);
}

TEST_F(Batches, TrainExamplesFileRoundTrip) {
  fixtures::TempDir dir;
  examples[0].hard_neg_doc_ids = {irrelevant_doc(examples[0]), irrelevant_doc(examples[0], 1)};
  save_train_examples(examples, dir / "ex.jsonl");
  EXPECT_EQ(load_train_examples(dir / "ex.jsonl", corpus), examples);
  examples[1].hard_neg_doc_ids = {examples[1].pos_doc_id};
  save_train_examples(examples, dir / "bad.jsonl");
  EXPECT_THROW(load_train_examples(dir / "bad.jsonl", corpus), ValidationError);
}
