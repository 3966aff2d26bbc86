#include "eer/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "eer/error.hpp"
#include "eer/text.hpp"
#include "eer/util.hpp"

namespace eer::corpus {

using nlohmann::ordered_json;

// --- spec --------------------------------------------------------------------

void GeneratorSpec::validate() const {
  auto at_least_one = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("generator spec: ") + name + " must be >= 1");
  };
  at_least_one(n_events, "n_events");
  at_least_one(entity_pool, "entity_pool");
  at_least_one(verb_pool, "verb_pool");
  at_least_one(object_pool, "object_pool");
  at_least_one(queries_per_event, "queries_per_event");
  at_least_one(titles_per_event, "titles_per_event");
  if (negatives_per_positive < 0) {
    throw ValidationError("generator spec: negatives_per_positive must be >= 0");
  }
  for (double r : {hashtag_rate, prefix_rate, subject_drop_rate, synonym_swap_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("generator spec: rates must be in [0,1]");
  }
}

ordered_json GeneratorSpec::to_json() const {
  return {{"n_events", n_events},
          {"entity_pool", entity_pool},
          {"verb_pool", verb_pool},
          {"object_pool", object_pool},
          {"queries_per_event", queries_per_event},
          {"titles_per_event", titles_per_event},
          {"hashtag_rate", hashtag_rate},
          {"prefix_rate", prefix_rate},
          {"subject_drop_rate", subject_drop_rate},
          {"synonym_swap_rate", synonym_swap_rate},
          {"negatives_per_positive", negatives_per_positive},
          {"seed", seed}};
}

GeneratorSpec GeneratorSpec::from_json(const ordered_json& j) {
  GeneratorSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_events") s.n_events = value.get<int>();
    else if (key == "entity_pool") s.entity_pool = value.get<int>();
    else if (key == "verb_pool") s.verb_pool = value.get<int>();
    else if (key == "object_pool") s.object_pool = value.get<int>();
    else if (key == "queries_per_event") s.queries_per_event = value.get<int>();
    else if (key == "titles_per_event") s.titles_per_event = value.get<int>();
    else if (key == "hashtag_rate") s.hashtag_rate = value.get<double>();
    else if (key == "prefix_rate") s.prefix_rate = value.get<double>();
    else if (key == "subject_drop_rate") s.subject_drop_rate = value.get<double>();
    else if (key == "synonym_swap_rate") s.synonym_swap_rate = value.get<double>();
    else if (key == "negatives_per_positive") s.negatives_per_positive = value.get<int>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw ValidationError("generator spec: unknown field '" + key + "'");
  }
  s.validate();
  return s;
}

// --- corpus ------------------------------------------------------------------

void Corpus::reindex() {
  doc_index_.clear();
  query_index_.clear();
  relevant_.clear();
  for (std::size_t i = 0; i < documents.size(); ++i) doc_index_[documents[i].doc_id] = i;
  for (std::size_t i = 0; i < queries.size(); ++i) query_index_[queries[i].query_id] = i;
  for (const auto& q : queries) relevant_[q.query_id];
  for (const auto& p : pairs) {
    if (p.label == 1) relevant_[p.query_id].insert(p.doc_id);
  }
}

void Corpus::validate() const {
  std::unordered_set<std::string> docs;
  for (const auto& d : documents) {
    if (d.doc_id.empty()) throw ValidationError("document with empty doc_id");
    if (!docs.insert(d.doc_id).second) throw ValidationError("duplicate doc_id " + d.doc_id);
    if (text::split_tokens(d.title).empty()) {
      throw ValidationError("document " + d.doc_id + " has an empty title");
    }
  }
  std::unordered_set<std::string> qs;
  for (const auto& q : queries) {
    if (q.query_id.empty()) throw ValidationError("query with empty query_id");
    if (!qs.insert(q.query_id).second) throw ValidationError("duplicate query_id " + q.query_id);
    if (text::split_tokens(q.text).empty()) {
      throw ValidationError("query " + q.query_id + " has empty text");
    }
  }
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw ValidationError("pair label must be 0 or 1");
    if (!qs.count(p.query_id)) throw ValidationError("pair references unknown query " + p.query_id);
    if (!docs.count(p.doc_id)) throw ValidationError("pair references unknown doc " + p.doc_id);
  }
  for (const auto& [doc_id, ev] : gold_events) {
    if (!docs.count(doc_id)) throw ValidationError("event references unknown doc " + doc_id);
    if (!ev.complete()) throw ValidationError("event for " + doc_id + " has an empty field");
  }
}

const Document& Corpus::document(const std::string& doc_id) const {
  auto it = doc_index_.find(doc_id);
  if (it == doc_index_.end()) throw ValidationError("unknown doc_id " + doc_id);
  return documents[it->second];
}

const Query& Corpus::query(const std::string& query_id) const {
  auto it = query_index_.find(query_id);
  if (it == query_index_.end()) throw ValidationError("unknown query_id " + query_id);
  return queries[it->second];
}

const std::unordered_set<std::string>& Corpus::relevant(const std::string& query_id) const {
  static const std::unordered_set<std::string> kEmpty;
  auto it = relevant_.find(query_id);
  return it == relevant_.end() ? kEmpty : it->second;
}

std::optional<EventTriple> Corpus::gold_event(const std::string& doc_id) const {
  auto it = gold_events.find(doc_id);
  if (it == gold_events.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Corpus::titles() const {
  std::vector<std::string> out;
  out.reserve(documents.size());
  for (const auto& d : documents) out.push_back(d.title);
  return out;
}

std::vector<std::string> Corpus::event_ids() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& d : documents) {
    if (d.event_id && seen.insert(*d.event_id).second) out.push_back(*d.event_id);
  }
  return out;
}

// --- world pools ---------------------------------------------------------------

namespace {

const std::vector<std::vector<std::string>>& verb_groups() {
  static const std::vector<std::vector<std::string>> groups = {
      {"launches", "releases", "unveils"},    {"acquires", "buys", "purchases"},
      {"sues", "litigates", "charges"},       {"recalls", "withdraws", "pulls"},
      {"cancels", "scraps", "axes"},          {"delays", "postpones", "defers"},
      {"bans", "prohibits", "blocks"},        {"wins", "clinches", "secures"},
      {"signs", "inks", "finalizes"},         {"joins", "allies", "teams"},
      {"criticizes", "slams", "blasts"},      {"upgrades", "improves", "boosts"},
      {"cuts", "slashes", "trims"},           {"invests", "funds", "backs"},
      {"tests", "trials", "pilots"},          {"hires", "recruits", "appoints"}};
  return groups;
}

const std::vector<std::string> kOnsets = {"b",  "d",  "f",  "g",  "k",  "l",  "m",
                                          "n",  "p",  "r",  "s",  "t",  "v",  "z",
                                          "br", "kr", "tr", "st", "pl", "gr", "dr"};
const std::vector<std::string> kVowels = {"a", "e", "i", "o", "u", "ai", "ei", "ou"};
const std::vector<std::string> kCodas = {"", "", "n", "r", "x", "s", "l", "k"};

const std::vector<std::string> kPrefixes = {"breaking", "exclusive", "update",
                                            "watch",    "report",    "live"};
const std::vector<std::string> kAdverbs = {"officially", "reportedly", "finally", "suddenly",
                                           "quietly"};
const std::vector<std::string> kTimeWords = {"today", "tonight", "again"};
const std::vector<std::string> kTrailers = {"netizens react",   "fans stunned",
                                            "details inside",   "what happens next",
                                            "experts weigh in", "market watches closely",
                                            "full story here",  "insiders speak"};
const std::vector<std::string> kTopicTags = {"#news", "#hot", "#trending", "#tech", "#finance"};

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

bool coin(double p, std::mt19937_64& rng) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::bernoulli_distribution(p)(rng);
}

std::string pseudo_word(std::mt19937_64& rng, int syllables) {
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += pick(kOnsets, rng);
    w += pick(kVowels, rng);
    if (i + 1 == syllables) w += pick(kCodas, rng);
  }
  return w;
}

std::string consonant_skeleton(const std::string& w, std::size_t max_len) {
  std::string out;
  for (char c : w) {
    if (std::string("aeiou").find(c) == std::string::npos && out.size() < max_len) out += c;
  }
  return out;
}

}  // namespace

WorldPools build_pools(const GeneratorSpec& spec) {
  spec.validate();
  if (spec.verb_pool > static_cast<int>(verb_groups().size())) {
    throw ValidationError("generator spec: verb_pool exceeds the " +
                          std::to_string(verb_groups().size()) + " available verb concepts");
  }
  std::mt19937_64 rng(derive_seed(spec.seed, "pools"));
  std::unordered_set<std::string> used(text::default_function_words().begin(),
                                       text::default_function_words().end());
  WorldPools pools;
  for (int v = 0; v < spec.verb_pool; ++v) {
    pools.verbs.push_back(verb_groups()[static_cast<std::size_t>(v)]);
    for (const auto& s : pools.verbs.back()) used.insert(s);
  }
  for (const auto& list : {kPrefixes, kAdverbs, kTimeWords}) used.insert(list.begin(), list.end());
  for (const auto& t : kTrailers) {
    for (auto& tok : text::split_tokens(t)) used.insert(tok);
  }

  const int max_attempts = 1000000;
  int attempts = 0;
  while (static_cast<int>(pools.entities.size()) < spec.entity_pool) {
    if (++attempts > max_attempts) throw ValidationError("entity pool exhausted");
    std::string canonical = pseudo_word(rng, 2);
    std::string alias = consonant_skeleton(canonical, 3);
    if (alias.size() < 2 || canonical.size() < 4 || alias == canonical || used.count(canonical) ||
        used.count(alias)) {
      continue;
    }
    used.insert(canonical);
    used.insert(alias);
    pools.entities.push_back({canonical, alias});
  }
  while (static_cast<int>(pools.objects.size()) < spec.object_pool) {
    if (++attempts > max_attempts) throw ValidationError("object pool exhausted");
    std::string word = pseudo_word(rng, 2);
    const std::string digit(1, static_cast<char>('1' + rng() % 9));
    std::string canonical = word + digit;
    std::string alias = consonant_skeleton(word, 2) + digit;
    if (alias.size() < 3 || used.count(canonical) || used.count(alias)) continue;
    used.insert(canonical);
    used.insert(alias);
    pools.objects.push_back({canonical, alias});
  }
  return pools;
}

std::vector<std::string> verb_lexicon(const GeneratorSpec& spec) {
  std::vector<std::string> out;
  for (const auto& g : build_pools(spec).verbs) out.insert(out.end(), g.begin(), g.end());
  return out;
}

std::map<std::string, std::vector<std::string>> entity_table(const GeneratorSpec& spec,
                                                             int siblings) {
  const auto pools = build_pools(spec);
  std::map<std::string, std::vector<std::string>> table;
  const auto n = pools.entities.size();
  if (n < 2) return table;
  std::mt19937_64 rng(derive_seed(spec.seed, "entity-table"));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(std::min(others.size(), static_cast<std::size_t>(std::max(1, siblings))));
    auto& canon = table[pools.entities[i].canonical];
    auto& alias = table[pools.entities[i].alias];
    for (std::size_t j : others) {
      canon.push_back(pools.entities[j].canonical);
      alias.push_back(pools.entities[j].alias);
    }
  }
  return table;
}

std::string render_clean_title(const EventTriple& event) {
  return event.subject + " " + event.trigger + " " + event.object;
}

// --- generation ------------------------------------------------------------------

namespace {

struct LatentEvent {
  std::size_t entity;
  std::size_t verb;
  std::size_t object;
};

std::vector<LatentEvent> sample_events(const GeneratorSpec& spec, const WorldPools& pools,
                                       std::mt19937_64& rng) {
  const auto n_obj = pools.objects.size();
  const auto per_object_cap = std::min(pools.entities.size(), pools.verbs.size());
  // Each (subject, object) and (verb, object) combination occurs at most once,
  // so every query form identifies exactly one event.
  if (static_cast<std::size_t>(spec.n_events) > n_obj * per_object_cap) {
    throw ValidationError("generator spec: pool exhausted; " + std::to_string(spec.n_events) +
                          " events requested but at most " +
                          std::to_string(n_obj * per_object_cap) + " are distinguishable");
  }
  std::vector<std::size_t> objects(n_obj);
  for (std::size_t i = 0; i < n_obj; ++i) objects[i] = i;
  std::shuffle(objects.begin(), objects.end(), rng);

  std::vector<LatentEvent> events;
  const auto n = static_cast<std::size_t>(spec.n_events);
  for (std::size_t k = 0; k < n_obj; ++k) {
    const std::size_t count = n / n_obj + (k < n % n_obj ? 1 : 0);
    if (count == 0) continue;
    std::vector<std::size_t> ents(pools.entities.size());
    std::vector<std::size_t> verbs(pools.verbs.size());
    for (std::size_t i = 0; i < ents.size(); ++i) ents[i] = i;
    for (std::size_t i = 0; i < verbs.size(); ++i) verbs[i] = i;
    std::shuffle(ents.begin(), ents.end(), rng);
    std::shuffle(verbs.begin(), verbs.end(), rng);
    for (std::size_t c = 0; c < count; ++c) events.push_back({ents[c], verbs[c], objects[k]});
  }
  std::shuffle(events.begin(), events.end(), rng);
  return events;
}

std::string format_id(char prefix, std::size_t n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, n);
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

std::string verb_surface(const std::vector<std::string>& forms, double swap_rate,
                         std::mt19937_64& rng) {
  if (forms.size() > 1 && coin(swap_rate, rng)) {
    std::uniform_int_distribution<std::size_t> d(1, forms.size() - 1);
    return forms[d(rng)];
  }
  return forms.front();
}

// Verbose title: [prefix :] subject [adverb] trigger object [time] [, trailer] [#tags]
std::pair<std::string, EventTriple> render_title(const GeneratorSpec& spec,
                                                 const WorldPools& pools, const LatentEvent& ev,
                                                 std::mt19937_64& rng) {
  const auto& ent = pools.entities[ev.entity];
  const auto& obj = pools.objects[ev.object];
  EventTriple gold{ent.canonical, verb_surface(pools.verbs[ev.verb], spec.synonym_swap_rate, rng),
                   obj.canonical};
  std::vector<std::string> parts;
  if (coin(spec.prefix_rate, rng)) {
    parts.push_back(pick(kPrefixes, rng));
    parts.push_back(":");
  }
  parts.push_back(gold.subject);
  if (coin(0.5, rng)) parts.push_back(pick(kAdverbs, rng));
  parts.push_back(gold.trigger);
  parts.push_back(gold.object);
  if (coin(0.3, rng)) parts.push_back(pick(kTimeWords, rng));
  if (coin(0.5, rng)) {
    parts.push_back(",");
    parts.push_back(pick(kTrailers, rng));
  }
  if (coin(spec.hashtag_rate, rng)) {
    parts.push_back("#" + (coin(0.5, rng) ? obj.canonical : ent.canonical));
    if (coin(0.5, rng)) parts.push_back(pick(kTopicTags, rng));
  }
  return {join(parts), gold};
}

// Terse query: object plus subject and/or trigger, often abbreviated.
std::string render_query(const GeneratorSpec& spec, const WorldPools& pools,
                         const LatentEvent& ev, std::mt19937_64& rng) {
  const auto& ent = pools.entities[ev.entity];
  const auto& obj = pools.objects[ev.object];
  const std::string object = coin(spec.synonym_swap_rate, rng) ? obj.alias : obj.canonical;
  const std::string subject = coin(spec.synonym_swap_rate, rng) ? ent.alias : ent.canonical;
  if (coin(spec.subject_drop_rate, rng)) {
    const std::string verb = verb_surface(pools.verbs[ev.verb], spec.synonym_swap_rate, rng);
    return coin(0.5, rng) ? object + " " + verb : verb + " " + object;
  }
  if (coin(0.5, rng)) return subject + " " + object;
  return subject + " " + verb_surface(pools.verbs[ev.verb], spec.synonym_swap_rate, rng) + " " +
         object;
}

}  // namespace

Corpus generate_corpus(const GeneratorSpec& spec) {
  const WorldPools pools = build_pools(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, "events"));
  const auto events = sample_events(spec, pools, rng);

  Corpus c;
  std::vector<std::vector<std::size_t>> docs_of_event(events.size());
  std::vector<std::size_t> event_of_doc;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const std::string event_id = format_id('e', e, 5);
    for (int t = 0; t < spec.titles_per_event; ++t) {
      auto [title, gold] = render_title(spec, pools, events[e], rng);
      const std::string doc_id = format_id('d', c.documents.size(), 6);
      docs_of_event[e].push_back(c.documents.size());
      event_of_doc.push_back(e);
      c.documents.push_back({doc_id, std::move(title), event_id});
      c.gold_events[doc_id] = std::move(gold);
    }
    std::set<std::string> seen;
    for (int q = 0; q < spec.queries_per_event; ++q) {
      std::string text = render_query(spec, pools, events[e], rng);
      for (int retry = 0; retry < 8 && seen.count(text); ++retry) {
        text = render_query(spec, pools, events[e], rng);
      }
      seen.insert(text);
      c.queries.push_back({format_id('q', c.queries.size(), 6), std::move(text), event_id});
    }
  }

  std::mt19937_64 pair_rng(derive_seed(spec.seed, "pairs"));
  const std::size_t n_docs = c.documents.size();
  std::size_t q_index = 0;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& positives = docs_of_event[e];
    const std::size_t available = n_docs - positives.size();
    for (int q = 0; q < spec.queries_per_event; ++q, ++q_index) {
      const auto& qid = c.queries[q_index].query_id;
      for (std::size_t d : positives) c.pairs.push_back({qid, c.documents[d].doc_id, 1});
      const std::size_t want = std::min(
          available, positives.size() * static_cast<std::size_t>(spec.negatives_per_positive));
      std::set<std::size_t> chosen;
      std::uniform_int_distribution<std::size_t> pick_doc(0, n_docs - 1);
      while (chosen.size() < want) {
        const std::size_t d = pick_doc(pair_rng);
        if (event_of_doc[d] == e || chosen.count(d)) continue;
        chosen.insert(d);
        c.pairs.push_back({qid, c.documents[d].doc_id, 0});
      }
    }
  }
  c.reindex();
  c.validate();
  return c;
}

// --- split -------------------------------------------------------------------------

std::pair<Corpus, Corpus> split_by_event(const Corpus& corpus, double test_fraction,
                                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split: test_fraction must be in (0, 1)");
  }
  for (const auto& d : corpus.documents) {
    if (!d.event_id) throw ValidationError("split: document " + d.doc_id + " has no event_id");
  }
  auto events = corpus.event_ids();
  if (events.size() < 2) throw ValidationError("split: need at least two events");
  std::sort(events.begin(), events.end());
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(events.begin(), events.end(), rng);
  auto n_test = static_cast<std::size_t>(
      std::floor(static_cast<double>(events.size()) * test_fraction + 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, events.size() - 1);
  const std::unordered_set<std::string> test_events(events.begin(),
                                                    events.begin() + static_cast<long>(n_test));

  Corpus train, test;
  for (const auto& d : corpus.documents) {
    Corpus& side = test_events.count(*d.event_id) ? test : train;
    side.documents.push_back(d);
    if (auto ev = corpus.gold_event(d.doc_id)) side.gold_events[d.doc_id] = *ev;
  }
  std::unordered_map<std::string, bool> query_is_test;
  for (const auto& q : corpus.queries) {
    const bool is_test = q.event_id && test_events.count(*q.event_id);
    query_is_test[q.query_id] = is_test;
    (is_test ? test : train).queries.push_back(q);
  }
  for (Corpus* side : {&train, &test}) side->reindex();
  for (const auto& p : corpus.pairs) {
    Corpus& side = query_is_test[p.query_id] ? test : train;
    if (side.has_document(p.doc_id)) side.pairs.push_back(p);
  }
  for (Corpus* side : {&train, &test}) {
    side->reindex();
    side->validate();
  }
  return {std::move(train), std::move(test)};
}

// --- persistence -------------------------------------------------------------------

namespace {

struct FieldRule {
  const char* name;
  bool required;
};

ordered_json parse_line(const std::string& line, std::size_t number, const std::string& file,
                        std::initializer_list<FieldRule> rules) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(file + " line " + std::to_string(number) + ": malformed JSON");
  }
  auto fail = [&](const std::string& msg) {
    throw ValidationError(file + " line " + std::to_string(number) + ": " + msg);
  };
  if (!j.is_object()) fail("expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& r : rules) known = known || key == r.name;
    if (!known) fail("unknown field '" + key + "'");
  }
  for (const auto& r : rules) {
    if (r.required && !j.contains(r.name)) fail(std::string("missing field '") + r.name + "'");
  }
  return j;
}

std::string string_field(const ordered_json& j, const char* name, std::size_t number,
                         const std::string& file) {
  const auto& v = j.at(name);
  if (!v.is_string()) {
    throw ValidationError(file + " line " + std::to_string(number) + ": field '" + name +
                          "' must be a string");
  }
  return v.get<std::string>();
}

std::string jsonl(const std::vector<ordered_json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ordered_json> docs, queries, pairs, events;
  for (const auto& d : corpus.documents) {
    ordered_json j;
    j["doc_id"] = d.doc_id;
    j["title"] = d.title;
    if (d.event_id) j["event_id"] = *d.event_id;
    docs.push_back(std::move(j));
    if (auto it = corpus.gold_events.find(d.doc_id); it != corpus.gold_events.end()) {
      ordered_json e;
      e["doc_id"] = d.doc_id;
      e["subject"] = it->second.subject;
      e["trigger"] = it->second.trigger;
      e["object"] = it->second.object;
      events.push_back(std::move(e));
    }
  }
  for (const auto& q : corpus.queries) {
    ordered_json j;
    j["query_id"] = q.query_id;
    j["text"] = q.text;
    if (q.event_id) j["event_id"] = *q.event_id;
    queries.push_back(std::move(j));
  }
  for (const auto& p : corpus.pairs) {
    ordered_json j;
    j["query_id"] = p.query_id;
    j["doc_id"] = p.doc_id;
    j["label"] = p.label;
    pairs.push_back(std::move(j));
  }
  write_file_atomic(dir / "documents.jsonl", jsonl(docs));
  write_file_atomic(dir / "queries.jsonl", jsonl(queries));
  write_file_atomic(dir / "pairs.jsonl", jsonl(pairs));
  write_file_atomic(dir / "events.jsonl", jsonl(events));
}

std::vector<LabeledPair> load_pairs(const std::filesystem::path& path) {
  const std::string file = path.filename().string();
  std::vector<LabeledPair> out;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto j = parse_line(line, n, file, {{"query_id", true}, {"doc_id", true}, {"label", true}});
    const auto& label = j.at("label");
    if (!label.is_number_integer() || (label.get<long>() != 0 && label.get<long>() != 1)) {
      throw ValidationError(file + " line " + std::to_string(n) + ": label must be 0 or 1");
    }
    out.push_back({string_field(j, "query_id", n, file), string_field(j, "doc_id", n, file),
                   label.get<int>()});
  });
  return out;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  std::unordered_set<std::string> seen;
  for_each_line(dir / "documents.jsonl", [&](const std::string& line, std::size_t n) {
    auto j = parse_line(line, n, "documents.jsonl",
                        {{"doc_id", true}, {"title", true}, {"event_id", false}});
    Document d{string_field(j, "doc_id", n, "documents.jsonl"),
               string_field(j, "title", n, "documents.jsonl"), std::nullopt};
    if (j.contains("event_id")) d.event_id = string_field(j, "event_id", n, "documents.jsonl");
    if (!seen.insert(d.doc_id).second) {
      throw ValidationError("documents.jsonl line " + std::to_string(n) + ": duplicate doc_id " +
                            d.doc_id);
    }
    c.documents.push_back(std::move(d));
  });
  seen.clear();
  for_each_line(dir / "queries.jsonl", [&](const std::string& line, std::size_t n) {
    auto j = parse_line(line, n, "queries.jsonl",
                        {{"query_id", true}, {"text", true}, {"event_id", false}});
    Query q{string_field(j, "query_id", n, "queries.jsonl"),
            string_field(j, "text", n, "queries.jsonl"), std::nullopt};
    if (j.contains("event_id")) q.event_id = string_field(j, "event_id", n, "queries.jsonl");
    if (!seen.insert(q.query_id).second) {
      throw ValidationError("queries.jsonl line " + std::to_string(n) + ": duplicate query_id " +
                            q.query_id);
    }
    c.queries.push_back(std::move(q));
  });
  c.pairs = load_pairs(dir / "pairs.jsonl");
  if (std::filesystem::exists(dir / "events.jsonl")) {
    for_each_line(dir / "events.jsonl", [&](const std::string& line, std::size_t n) {
      auto j = parse_line(line, n, "events.jsonl",
                          {{"doc_id", true}, {"subject", true}, {"trigger", true}, {"object", true}});
      const auto doc_id = string_field(j, "doc_id", n, "events.jsonl");
      EventTriple ev{string_field(j, "subject", n, "events.jsonl"),
                     string_field(j, "trigger", n, "events.jsonl"),
                     string_field(j, "object", n, "events.jsonl")};
      if (!c.gold_events.emplace(doc_id, std::move(ev)).second) {
        throw ValidationError("events.jsonl line " + std::to_string(n) +
                              ": duplicate event for " + doc_id);
      }
    });
  }
  c.validate();
  c.reindex();
  return c;
}

}  // namespace eer::corpus
