#include <algorithm>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "eer/corpus.hpp"
#include "eer/error.hpp"
#include "eer/text.hpp"
#include "eer/util.hpp"
#include "support.hpp"

using namespace eer;
using namespace eer::corpus;

namespace {

std::size_t count_label(const Corpus& c, int label) {
  return static_cast<std::size_t>(
      std::count_if(c.pairs.begin(), c.pairs.end(), [&](const auto& p) { return p.label == label; }));
}

std::set<std::string> events_of(const Corpus& c) {
  const auto ids = c.event_ids();
  return {ids.begin(), ids.end()};
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  out << line << "\n";
}

}  // namespace

TEST(Generate, SingleEventSingleQuerySingleTitle) {
  const auto c = fixtures::small_corpus(1, 4, 1, 1);
  ASSERT_EQ(c.pairs.size(), 1u);
  EXPECT_EQ(c.pairs[0].label, 1);
  EXPECT_EQ(c.documents.size(), 1u);
  EXPECT_EQ(c.queries.size(), 1u);
  EXPECT_EQ(c.gold_events.size(), 1u);
}

TEST(Generate, SameSeedGivesByteIdenticalFiles) {
  fixtures::TempDir a, b;
  save_corpus(fixtures::small_corpus(20, 9), a.path());
  save_corpus(fixtures::small_corpus(20, 9), b.path());
  for (const char* f : {"documents.jsonl", "queries.jsonl", "pairs.jsonl", "events.jsonl"}) {
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
  EXPECT_NE(read_file(a / "documents.jsonl"),
            [&] {
              fixtures::TempDir c;
              save_corpus(fixtures::small_corpus(20, 10), c.path());
              return read_file(c / "documents.jsonl");
            }());
}

TEST(Generate, PairCountsByEnumeration) {
  GeneratorSpec spec;
  spec.n_events = 10;
  spec.queries_per_event = 2;
  spec.titles_per_event = 3;
  const auto c = generate_corpus(spec);
  EXPECT_EQ(c.queries.size(), 20u);
  EXPECT_EQ(c.documents.size(), 30u);
  EXPECT_EQ(count_label(c, 1), 60u);
  EXPECT_EQ(count_label(c, 0), 60u * static_cast<std::size_t>(spec.negatives_per_positive));
}

TEST(Generate, LabelsFollowEventIdentity) {
  const auto c = fixtures::small_corpus(40, 2);
  c.validate();
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : c.pairs) {
    EXPECT_TRUE(seen.insert({p.query_id, p.doc_id}).second) << "duplicate pair";
    const bool same = c.query(p.query_id).event_id == c.document(p.doc_id).event_id;
    EXPECT_EQ(p.label, same ? 1 : 0);
  }
  for (const auto& d : c.documents) EXPECT_TRUE(c.gold_event(d.doc_id).has_value());
}

TEST(Generate, QueriesAreTerserThanTitlesAndTitlesCarryTheTrigger) {
  const auto c = fixtures::small_corpus(100, 5);
  double q_len = 0, t_len = 0;
  for (const auto& q : c.queries) q_len += static_cast<double>(text::split_tokens(q.text).size());
  for (const auto& d : c.documents) {
    t_len += static_cast<double>(text::split_tokens(d.title).size());
    const auto ev = *c.gold_event(d.doc_id);
    EXPECT_NE(d.title.find(ev.trigger), std::string::npos) << d.title;
  }
  EXPECT_LT(q_len / static_cast<double>(c.queries.size()),
            t_len / static_cast<double>(c.documents.size()));
}

TEST(Generate, PoolExhaustionIsExplicit) {
  GeneratorSpec spec;
  spec.n_events = 100000;
  spec.entity_pool = 2;
  spec.verb_pool = 2;
  spec.object_pool = 2;
  EXPECT_THROW(generate_corpus(spec), ValidationError);
}

TEST(Generate, InvalidSpecIsRejected) {
  GeneratorSpec spec;
  spec.queries_per_event = 0;
  EXPECT_THROW(generate_corpus(spec), ValidationError);
  EXPECT_THROW(GeneratorSpec::from_json({{"n_events", 3}, {"bogus", 1}}), ValidationError);
}

TEST(Split, FractionOfTenEvents) {
  const auto c = fixtures::small_corpus(10, 3);
  const auto [train, test] = split_by_event(c, 0.2, 1);
  const auto tr = events_of(train), te = events_of(test);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(te.size(), 2u);
  for (const auto& e : te) EXPECT_FALSE(tr.count(e));
  train.validate();
  test.validate();
  EXPECT_EQ(train.documents.size() + test.documents.size(), c.documents.size());
  for (const auto& p : test.pairs) EXPECT_TRUE(test.has_document(p.doc_id));
}

TEST(Split, KeepsAtLeastOneEventPerSide) {
  const auto c = fixtures::small_corpus(2, 3);
  const auto [train, test] = split_by_event(c, 0.99, 1);
  EXPECT_EQ(events_of(train).size(), 1u);
  EXPECT_EQ(events_of(test).size(), 1u);
}

TEST(Split, SameSeedSameMembership) {
  const auto c = fixtures::small_corpus(30, 3);
  const auto a = split_by_event(c, 0.3, 5);
  const auto b = split_by_event(c, 0.3, 5);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Split, RejectsBadInputs) {
  const auto c = fixtures::small_corpus(1, 3);
  EXPECT_THROW(split_by_event(c, 0.5, 1), ValidationError);
  const auto d = fixtures::small_corpus(5, 3);
  EXPECT_THROW(split_by_event(d, 0.0, 1), ValidationError);
  EXPECT_THROW(split_by_event(d, 1.0, 1), ValidationError);
}

TEST(CorpusFiles, SaveLoadRoundTrip) {
  fixtures::TempDir dir;
  const auto c = fixtures::small_corpus(15, 8);
  save_corpus(c, dir.path());
  const auto loaded = load_corpus(dir.path());
  EXPECT_EQ(loaded, c);
  EXPECT_EQ(loaded.relevant(c.queries[0].query_id), c.relevant(c.queries[0].query_id));
}

TEST(CorpusFiles, BadLabelIsRejectedWithLineNumber) {
  fixtures::TempDir dir;
  const auto c = fixtures::small_corpus(3, 8);
  save_corpus(c, dir.path());
  append_line(dir / "pairs.jsonl", R"({"query_id":"q000000","doc_id":"d000000","label":2})");
  const auto line = std::to_string(c.pairs.size() + 1);
  try {
    load_pairs(dir / "pairs.jsonl");
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line " + line), std::string::npos) << e.what();
  }
}

TEST(CorpusFiles, DuplicateDocIdIsRejected) {
  fixtures::TempDir dir;
  save_corpus(fixtures::small_corpus(3, 8), dir.path());
  append_line(dir / "documents.jsonl", R"({"doc_id":"d000000","title":"again"})");
  EXPECT_THROW(load_corpus(dir.path()), ValidationError);
}

TEST(CorpusFiles, UnknownFieldAndDanglingIdAreRejected) {
  {
    fixtures::TempDir dir;
    save_corpus(fixtures::small_corpus(3, 8), dir.path());
    append_line(dir / "queries.jsonl", R"({"query_id":"qx","text":"t","extra":1})");
    EXPECT_THROW(load_corpus(dir.path()), ValidationError);
  }
  {
    fixtures::TempDir dir;
    save_corpus(fixtures::small_corpus(3, 8), dir.path());
    append_line(dir / "pairs.jsonl", R"({"query_id":"q000000","doc_id":"missing","label":0})");
    EXPECT_THROW(load_corpus(dir.path()), ValidationError);
  }
}

TEST(World, EntityTableAndLexiconAreDeterministic) {
  GeneratorSpec spec;
  EXPECT_EQ(entity_table(spec), entity_table(spec));
  EXPECT_EQ(verb_lexicon(spec), verb_lexicon(spec));
  for (const auto& [k, v] : entity_table(spec)) {
    EXPECT_FALSE(v.empty());
    EXPECT_EQ(std::find(v.begin(), v.end(), k), v.end());
  }
}
