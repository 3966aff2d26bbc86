#include "eer/text.hpp"

#include <algorithm>
#include <sstream>

#include "eer/error.hpp"
#include "eer/util.hpp"

namespace eer::text {

namespace {

// Decodes one UTF-8 code point starting at `i`; advances `i`. Invalid bytes
// decode as themselves so arbitrary input never throws.
char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto c = static_cast<unsigned char>(s[i]);
  int extra = 0;
  char32_t cp = 0;
  if (c < 0x80) {
    ++i;
    return c;
  } else if ((c & 0xE0) == 0xC0) {
    extra = 1;
    cp = c & 0x1F;
  } else if ((c & 0xF0) == 0xE0) {
    extra = 2;
    cp = c & 0x0F;
  } else if ((c & 0xF8) == 0xF0) {
    extra = 3;
    cp = c & 0x07;
  } else {
    ++i;
    return c;
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) {
    ++i;
    return c;
  }
  for (int k = 1; k <= extra; ++k) {
    const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((cc & 0xC0) != 0x80) {
      ++i;
      return c;
    }
    cp = (cp << 6) | (cc & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return cp;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0xF900 && cp <= 0xFAFF) ||
         (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0x3040 && cp <= 0x30FF) ||
         (cp >= 0xFF01 && cp <= 0xFF60);
}

bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0x3000;
}

const std::vector<std::string>& reserved_names() {
  static const std::vector<std::string> names = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};
  return names;
}

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string run;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const char32_t cp = next_code_point(text, i);
    if (is_space(cp)) {
      if (!run.empty()) out.push_back(std::move(run));
      run.clear();
    } else if (is_cjk(cp)) {
      if (!run.empty()) out.push_back(std::move(run));
      run.clear();
      out.emplace_back(text.substr(start, i - start));
    } else {
      run.append(text.substr(start, i - start));
    }
  }
  if (!run.empty()) out.push_back(std::move(run));
  return out;
}

bool is_cjk_token(std::string_view token) {
  if (token.empty()) return false;
  std::size_t i = 0;
  const char32_t cp = next_code_point(token, i);
  return i == token.size() && is_cjk(cp);
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && !(is_cjk_token(tokens[i - 1]) && is_cjk_token(tokens[i]))) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// --- Vocab -------------------------------------------------------------------

std::string prompt_slot_token(int index) { return "[P" + std::to_string(index) + "]"; }

Vocab::BuildResult Vocab::build(std::span<const std::string> texts, int min_freq,
                                int n_prompt_slots, std::span<const std::string> always_include) {
  if (texts.empty()) throw ValidationError("build_vocab: empty corpus");
  if (n_prompt_slots < 0) throw ValidationError("build_vocab: negative prompt slot count");
  std::unordered_map<std::string, long> freq;
  for (const auto& t : texts) {
    for (auto& tok : split_tokens(t)) ++freq[tok];
  }
  if (freq.empty()) throw ValidationError("build_vocab: corpus has no tokens");

  Vocab v;
  v.n_prompt_slots_ = n_prompt_slots;
  v.tokens_ = reserved_names();
  for (int i = 1; i <= n_prompt_slots; ++i) v.tokens_.push_back(prompt_slot_token(i));
  const std::unordered_set<std::string> reserved(v.tokens_.begin(), v.tokens_.end());

  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq && !reserved.count(tok)) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  BuildResult result;
  result.no_corpus_tokens = kept.empty();
  for (auto& [tok, n] : kept) v.tokens_.push_back(tok);

  std::unordered_set<std::string> present(v.tokens_.begin(), v.tokens_.end());
  std::vector<std::string> extra;
  for (const auto& tok : always_include) {
    if (!present.count(tok)) {
      present.insert(tok);
      extra.push_back(tok);
    }
  }
  std::sort(extra.begin(), extra.end());
  v.tokens_.insert(v.tokens_.end(), extra.begin(), extra.end());
  v.rebuild_index();
  result.vocab = std::move(v);
  return result;
}

void Vocab::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::prompt_slot(int index) const {
  if (index < 1 || index > n_prompt_slots_) {
    throw ValidationError("vocab has no prompt slot " + prompt_slot_token(index));
  }
  return kFirstPromptSlot + index - 1;
}

std::string Vocab::fingerprint() const {
  std::uint64_t h = fnv1a64("eer-vocab");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  return hex64(h);
}

nlohmann::ordered_json Vocab::to_json() const {
  nlohmann::ordered_json j;
  j["tokens"] = tokens_;
  nlohmann::ordered_json reserved = nlohmann::ordered_json::object();
  for (TokenId i = 0; i < kFirstPromptSlot + n_prompt_slots_; ++i) {
    reserved[tokens_[static_cast<std::size_t>(i)]] = i;
  }
  j["reserved"] = reserved;
  return j;
}

Vocab Vocab::from_json(const nlohmann::ordered_json& j) {
  Vocab v;
  try {
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    const auto& reserved = j.at("reserved");
    const auto& names = reserved_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (reserved.at(names[i]).get<TokenId>() != static_cast<TokenId>(i) ||
          v.tokens_.at(i) != names[i]) {
        throw ValidationError("vocab: reserved id of " + names[i] + " is not stable");
      }
    }
    int slots = 0;
    while (reserved.contains(prompt_slot_token(slots + 1))) ++slots;
    for (int s = 1; s <= slots; ++s) {
      const auto expect = kFirstPromptSlot + s - 1;
      if (reserved.at(prompt_slot_token(s)).get<TokenId>() != expect ||
          v.tokens_.at(static_cast<std::size_t>(expect)) != prompt_slot_token(s)) {
        throw ValidationError("vocab: prompt slot ids are not contiguous");
      }
    }
    v.n_prompt_slots_ = slots;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("vocab: malformed json: ") + e.what());
  } catch (const std::out_of_range&) {
    throw ValidationError("vocab: token list shorter than reserved block");
  }
  v.rebuild_index();
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::ordered_json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("vocab: cannot parse " + path.string() + ": " + e.what());
  }
}

void Vocab::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump() + "\n");
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  auto tokens = split_tokens(text);
  if (tokens.empty()) throw ValidationError("tokenize: empty text");
  TokenSeq seq;
  for (const auto& t : tokens) {
    if (seq.ids.size() == max_len) {
      seq.truncated = true;
      break;
    }
    seq.ids.push_back(vocab.id(t));
  }
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::vector<std::string> tokens;
  for (TokenId id : seq.ids) {
    if (id == Vocab::kPad) continue;
    tokens.push_back(vocab.token(id));
  }
  return join_tokens(tokens);
}

TokenSeq encoder_input(const TokenSeq& content, std::size_t max_len) {
  if (max_len < 3) throw ValidationError("encoder_input: max_len must be >= 3");
  TokenSeq out;
  out.ids.reserve(std::min(content.size() + 2, max_len));
  out.ids.push_back(Vocab::kCls);
  const std::size_t room = max_len - 2;
  for (std::size_t i = 0; i < content.size() && i < room; ++i) out.ids.push_back(content.ids[i]);
  out.truncated = content.truncated || content.size() > room;
  out.ids.push_back(Vocab::kSep);
  return out;
}

TokenSeq encoder_input(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  return encoder_input(tokenize(text, vocab), max_len);
}

// --- templates ------------------------------------------------------------------

namespace {
std::optional<int> prompt_marker_index(std::string_view tok) {
  if (tok.size() < 4 || tok.substr(0, 2) != "[P" || tok.back() != ']') return std::nullopt;
  int value = 0;
  for (char c : tok.substr(2, tok.size() - 3)) {
    if (c < '0' || c > '9') return std::nullopt;
    value = value * 10 + (c - '0');
  }
  return value > 0 ? std::optional<int>(value) : std::nullopt;
}
}  // namespace

int PromptTemplate::mask_count() const {
  return static_cast<int>(std::count(pattern.begin(), pattern.end(), kMaskToken));
}

int PromptTemplate::n_prompt_slots() const {
  int n = 0;
  for (const auto& t : pattern) n += prompt_marker_index(t).has_value() ? 1 : 0;
  return n;
}

void PromptTemplate::validate() const {
  const auto x_count = std::count(pattern.begin(), pattern.end(), kTitleSlot);
  if (x_count != 1) throw ValidationError("template " + id + ": needs exactly one [X] slot");
  if (mask_count() < 1) throw ValidationError("template " + id + ": needs at least one [MASK]");
  const int slots = n_prompt_slots();
  if (kind == TemplateKind::continuous && slots < 1) {
    throw ValidationError("template " + id + ": continuous template without prompt slots");
  }
  if (kind == TemplateKind::handcrafted && slots > 0) {
    throw ValidationError("template " + id + ": handcrafted template with prompt slots");
  }
}

TemplateRegistry TemplateRegistry::builtin() {
  TemplateRegistry r;
  r.add({"subject",
         TemplateKind::handcrafted,
         {"in", "[X]", ",", "the", "subject", "is", "[MASK]"},
         "In [X], the subject is [MASK]"});
  r.add({"subject_object_action",
         TemplateKind::handcrafted,
         {"in", "[X]", ",", "the", "subject", "is", "[MASK]", ",", "the", "object", "is", "[MASK]",
          ",", "the", "action", "is", "[MASK]"},
         "In [X], the subject is [MASK], the object is [MASK], the action is [MASK]"});
  r.add({"continuous_single",
         TemplateKind::continuous,
         {"[X]", "[P1]", "[P2]", "[MASK]", "[P3]", "[P4]"},
         "[X] v1 .. [MASK] .. vn"});
  r.add({"continuous_triple",
         TemplateKind::continuous,
         {"[X]", "[P1]", "[P2]", "[MASK]", "[MASK]", "[MASK]", "[P3]", "[P4]"},
         "[X] v1 .. [MASK] [MASK] [MASK] .. vn"});
  r.add({"object_trigger_topic",
         TemplateKind::handcrafted,
         {"in", "[X]", ",", "the", "object", "is", "[MASK]", ",", "the", "trigger", "is", "[MASK]",
          ",", "and", "the", "topic", "is", "[MASK]"},
         "In [X], the object is [MASK], the trigger is [MASK], and the topic is [MASK]"});
  return r;
}

std::vector<std::string> TemplateRegistry::search_ids() {
  return {"subject", "subject_object_action", "continuous_single", "continuous_triple"};
}

void TemplateRegistry::add(PromptTemplate t) {
  t.validate();
  if (!templates_.count(t.id)) order_.push_back(t.id);
  templates_[t.id] = std::move(t);
}

const PromptTemplate& TemplateRegistry::at(const std::string& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw ValidationError("unknown template id '" + id + "'");
  return it->second;
}

std::vector<std::string> TemplateRegistry::ids() const { return order_; }

std::vector<std::string> TemplateRegistry::literal_tokens() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& id : order_) {
    for (const auto& t : templates_.at(id).pattern) {
      if (t == kTitleSlot || t == kMaskToken || prompt_marker_index(t)) continue;
      if (seen.insert(t).second) out.push_back(t);
    }
  }
  return out;
}

nlohmann::ordered_json TemplateRegistry::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& id : order_) {
    const auto& t = templates_.at(id);
    j[id] = {{"kind", t.kind == TemplateKind::continuous ? "continuous" : "handcrafted"},
             {"pattern", t.pattern},
             {"description", t.description}};
  }
  return j;
}

TemplateRegistry TemplateRegistry::from_json(const nlohmann::ordered_json& j) {
  TemplateRegistry r;
  try {
    for (const auto& [id, body] : j.items()) {
      PromptTemplate t;
      t.id = id;
      const auto kind = body.at("kind").get<std::string>();
      if (kind == "continuous") {
        t.kind = TemplateKind::continuous;
      } else if (kind == "handcrafted") {
        t.kind = TemplateKind::handcrafted;
      } else {
        throw ValidationError("template " + id + ": unknown kind '" + kind + "'");
      }
      t.pattern = body.at("pattern").get<std::vector<std::string>>();
      t.description = body.value("description", "");
      r.add(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("templates: malformed json: ") + e.what());
  }
  return r;
}

TemplateRegistry TemplateRegistry::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::ordered_json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("templates: cannot parse " + path.string() + ": " + e.what());
  }
}

// --- events -------------------------------------------------------------------

std::vector<std::string> serialize_event(const EventTriple& event) {
  std::vector<std::string> out;
  const std::string* fields[] = {&event.subject, &event.trigger, &event.object};
  for (int f = 0; f < 3; ++f) {
    auto tokens = split_tokens(*fields[f]);
    if (tokens.empty()) throw ValidationError("serialize_event: empty event field");
    if (f > 0) out.emplace_back(kEventSeparator);
    for (auto& t : tokens) {
      if (t == kEventSeparator || (!t.empty() && t.front() == '\\')) t.insert(t.begin(), '\\');
      out.push_back(std::move(t));
    }
  }
  return out;
}

EventTriple parse_event(std::span<const std::string> tokens) {
  std::vector<std::vector<std::string>> fields(1);
  for (const auto& t : tokens) {
    if (t == kEventSeparator) {
      fields.emplace_back();
    } else if (!t.empty() && t.front() == '\\') {
      fields.back().push_back(t.substr(1));
    } else {
      fields.back().push_back(t);
    }
  }
  if (fields.size() != 3) throw ValidationError("parse_event: expected three fields");
  for (const auto& f : fields) {
    if (f.empty()) throw ValidationError("parse_event: empty field");
  }
  return {join_tokens(fields[0]), join_tokens(fields[1]), join_tokens(fields[2])};
}

std::size_t DecoderTarget::masked_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1));
}

namespace {

void append_filled_template(const PromptTemplate* tmpl, const TokenSeq& title,
                            const Vocab& vocab, std::vector<TokenId>& out) {
  if (!tmpl) return;
  for (const auto& tok : tmpl->pattern) {
    if (tok == kTitleSlot) {
      out.insert(out.end(), title.ids.begin(), title.ids.end());
    } else if (tok == kMaskToken) {
      out.push_back(Vocab::kMask);
    } else if (auto slot = prompt_marker_index(tok)) {
      out.push_back(vocab.prompt_slot(*slot));
    } else {
      out.push_back(vocab.id(tok));
    }
  }
}

void check_prefix_fits(const PromptTemplate* tmpl, const TokenSeq& title, std::size_t max_len) {
  const std::size_t overhead = 1 + (tmpl ? tmpl->overhead() : 0);
  if (overhead > max_len) {
    throw ValidationError("render_prompt: template segment overflows max_len " +
                          std::to_string(max_len));
  }
  if (tmpl && overhead + title.size() > max_len) {
    throw ValidationError("render_prompt: title segment overflows max_len " +
                          std::to_string(max_len));
  }
}

}  // namespace

TokenSeq render_prefix(const PromptTemplate* tmpl, const TokenSeq& title, const Vocab& vocab,
                       std::size_t max_len) {
  if (tmpl) tmpl->validate();
  check_prefix_fits(tmpl, title, max_len);
  TokenSeq out;
  out.ids.push_back(Vocab::kCls);
  append_filled_template(tmpl, title, vocab, out.ids);
  return out;
}

DecoderTarget render_prompt(const PromptTemplate* tmpl, const TokenSeq& title,
                            const std::optional<EventTriple>& event, const Vocab& vocab,
                            std::size_t max_len) {
  DecoderTarget target;
  target.input_ids = render_prefix(tmpl, title, vocab, max_len);
  target.prefix_len = target.input_ids.size();
  std::vector<TokenId> event_ids;
  if (event) {
    for (const auto& t : serialize_event(*event)) event_ids.push_back(vocab.id(t));
  }
  if (target.prefix_len + event_ids.size() + 1 > max_len) {
    throw ValidationError("render_prompt: event segment overflows max_len " +
                          std::to_string(max_len));
  }
  auto& ids = target.input_ids.ids;
  ids.insert(ids.end(), event_ids.begin(), event_ids.end());
  ids.push_back(Vocab::kSep);
  target.loss_mask.assign(ids.size(), 0);
  if (event) {
    std::fill(target.loss_mask.begin() + static_cast<std::ptrdiff_t>(target.prefix_len),
              target.loss_mask.end(), 1);
  }
  return target;
}

// --- extraction -----------------------------------------------------------------

VerbLexicon::VerbLexicon(std::span<const std::string> verbs) {
  for (const auto& v : verbs) {
    auto tokens = split_tokens(v);
    if (!tokens.empty()) entries_.push_back(std::move(tokens));
  }
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
}

VerbLexicon VerbLexicon::load(const std::filesystem::path& path) {
  std::vector<std::string> verbs;
  for_each_line(path, [&](const std::string& line, std::size_t) { verbs.push_back(line); });
  return VerbLexicon(verbs);
}

std::size_t VerbLexicon::match(std::span<const std::string> tokens, std::size_t pos) const {
  for (const auto& e : entries_) {
    if (pos + e.size() > tokens.size()) continue;
    if (std::equal(e.begin(), e.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos))) {
      return e.size();
    }
  }
  return 0;
}

const std::unordered_set<std::string>& default_function_words() {
  static const std::unordered_set<std::string> words = {
      "a",         "an",         "the",      "of",       "to",         "in",      "on",
      "at",        "for",        "with",     "by",       "from",       "and",     "or",
      "but",       "is",         "are",      "was",      "were",       "be",      "has",
      "have",      "had",        "will",     "would",    "can",        "could",   "may",
      "might",     "just",       "now",      "new",      "today",      "tonight", "officially",
      "reportedly", "finally",   "suddenly", "quietly",  "again",      "also",    "after",
      "before",    "amid",       "over",     "as",       "it",         "its",     "this",
      "that",      "these",      "those",    "what",     "how",        "why",     "who",
      "的",        "了",         "是",       "在",       "和",         "与",      "及",
      "等",        "吗",         "呢",       "啊",       "吧",         "被",      "把"};
  return words;
}

namespace {

bool is_punctuation_token(std::string_view tok) {
  if (is_cjk_token(tok)) {
    std::size_t i = 0;
    const char32_t cp = next_code_point(tok, i);
    return (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0xFF01 && cp <= 0xFF0F) ||
           (cp >= 0xFF1A && cp <= 0xFF20);
  }
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](char c) {
    return static_cast<unsigned char>(c) < 0x80 && std::ispunct(static_cast<unsigned char>(c));
  });
}

}  // namespace

std::optional<ExtractedEvent> extract_event_rule(
    std::span<const std::string> tokens, const VerbLexicon& lexicon,
    const std::unordered_set<std::string>& function_words) {
  auto is_function = [&](std::size_t i) { return function_words.count(tokens[i]) > 0; };
  auto is_content = [&](std::size_t i) {
    const auto& t = tokens[i];
    return !is_function(i) && !is_punctuation_token(t) && t.front() != '#' &&
           lexicon.match(tokens, i) == 0;
  };

  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    const std::size_t len = lexicon.match(tokens, pos);
    if (len == 0) continue;
    const Span trigger{pos, pos + len};

    std::optional<Span> subject;
    std::size_t end = pos;
    while (end > 0 && is_function(end - 1)) --end;
    std::size_t begin = end;
    while (begin > 0 && is_content(begin - 1)) --begin;
    if (begin < end) subject = Span{begin, end};

    std::optional<Span> object;
    std::size_t obegin = trigger.end;
    while (obegin < tokens.size() && is_function(obegin)) ++obegin;
    std::size_t oend = obegin;
    while (oend < tokens.size() && is_content(oend)) ++oend;
    if (obegin < oend) object = Span{obegin, oend};

    if (!subject && !object) continue;
    ExtractedEvent ev;
    ev.trigger = trigger;
    ev.subject = subject;
    ev.object = object;
    ev.structure = subject && object ? EventStructure::subject_predicate_object
                   : subject         ? EventStructure::subject_predicate
                                     : EventStructure::predicate_object;
    auto text_of = [&](const std::optional<Span>& s) {
      if (!s) return std::string(kMissingArgument);
      return join_tokens(tokens.subspan(s->begin, s->size()));
    };
    ev.triple = {text_of(subject), join_tokens(tokens.subspan(trigger.begin, trigger.size())),
                 text_of(object)};
    return ev;
  }
  return std::nullopt;
}

}  // namespace eer::text
