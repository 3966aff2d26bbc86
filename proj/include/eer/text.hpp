#pragma once

// Tokenization, vocabulary, prompt templates, event linearization and the
// rule-based event extractor.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "eer/event.hpp"

namespace eer::text {

using TokenId = std::int32_t;

/// Splits on whitespace; runs of CJK characters are split per character,
/// other runs stay whole ("mate60pro" is one token).
std::vector<std::string> split_tokens(std::string_view text);
/// Inverse of split_tokens up to whitespace: adjacent CJK tokens are joined
/// directly, everything else with a single space.
std::string join_tokens(std::span<const std::string> tokens);
bool is_cjk_token(std::string_view token);

struct TokenSeq {
  std::vector<TokenId> ids;
  bool truncated = false;

  std::size_t size() const { return ids.size(); }
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kMask = 3;
  static constexpr TokenId kUnk = 4;
  static constexpr TokenId kFirstPromptSlot = 5;

  struct BuildResult;

  /// Tokens with frequency >= min_freq, ordered by (-freq, token) after the
  /// reserved block. `always_include` tokens (template words, separators)
  /// are appended in sorted order when absent.
  static BuildResult build(std::span<const std::string> texts, int min_freq,
                           int n_prompt_slots = 4,
                           std::span<const std::string> always_include = {});

  static Vocab from_json(const nlohmann::ordered_json& j);
  static Vocab load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void save(const std::filesystem::path& path) const;

  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  int n_prompt_slots() const { return n_prompt_slots_; }
  /// Vocab id of continuous prompt slot `index` (1-based, as in [P1]).
  TokenId prompt_slot(int index) const;
  bool is_prompt_slot(TokenId id) const {
    return id >= kFirstPromptSlot && id < kFirstPromptSlot + n_prompt_slots_;
  }
  bool is_reserved(TokenId id) const { return id < kFirstPromptSlot + n_prompt_slots_; }
  /// Stable hash of the ordered token list.
  std::string fingerprint() const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.n_prompt_slots_ == b.n_prompt_slots_;
  }

 private:
  void rebuild_index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  int n_prompt_slots_ = 0;
};

struct Vocab::BuildResult {
  Vocab vocab;
  /// True when no corpus token reached min_freq (reserved-only vocab).
  bool no_corpus_tokens = false;
};

std::string prompt_slot_token(int index);

/// Content ids only; no [CLS]/[SEP]. Throws ValidationError on empty text.
TokenSeq tokenize(std::string_view text, const Vocab& vocab,
                  std::size_t max_len = std::numeric_limits<std::size_t>::max());
std::string detokenize(const TokenSeq& seq, const Vocab& vocab);

/// [CLS] content [SEP], truncating content to fit max_len.
TokenSeq encoder_input(const TokenSeq& content, std::size_t max_len);
TokenSeq encoder_input(std::string_view text, const Vocab& vocab, std::size_t max_len);

// --- prompt templates --------------------------------------------------------

enum class TemplateKind { handcrafted, continuous };

inline constexpr std::string_view kTitleSlot = "[X]";
inline constexpr std::string_view kMaskToken = "[MASK]";

struct PromptTemplate {
  std::string id;
  TemplateKind kind = TemplateKind::handcrafted;
  std::vector<std::string> pattern;
  std::string description;

  int mask_count() const;
  int n_prompt_slots() const;
  /// Number of output tokens besides the title.
  std::size_t overhead() const { return pattern.size() - 1; }
  void validate() const;
};

class TemplateRegistry {
 public:
  /// The four searched templates plus the object/trigger/topic variant.
  static TemplateRegistry builtin();
  static TemplateRegistry from_json(const nlohmann::ordered_json& j);
  static TemplateRegistry load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;

  void add(PromptTemplate t);
  const PromptTemplate& at(const std::string& id) const;
  bool contains(const std::string& id) const { return templates_.count(id) > 0; }
  std::vector<std::string> ids() const;
  /// Ids of the four templates compared in the prompt search, in table order.
  static std::vector<std::string> search_ids();
  /// Literal tokens every template uses (for vocabulary construction).
  std::vector<std::string> literal_tokens() const;

 private:
  std::map<std::string, PromptTemplate> templates_;
  std::vector<std::string> order_;
};

inline const std::string kBestTemplateId = "subject_object_action";

// --- events ------------------------------------------------------------------

inline constexpr std::string_view kEventSeparator = ";";

/// "subject ; trigger ; object". A field token that is ";" or starts with
/// '\' gets a '\' prefix. Throws ValidationError on an empty field.
std::vector<std::string> serialize_event(const EventTriple& event);
EventTriple parse_event(std::span<const std::string> tokens);

struct DecoderTarget {
  TokenSeq input_ids;
  /// 1 on event tokens and the closing [SEP]; 0 elsewhere.
  std::vector<std::uint8_t> loss_mask;
  /// Number of leading positions before the event segment ([CLS] + template).
  std::size_t prefix_len = 0;

  std::size_t masked_count() const;
};

/// [CLS] filled-template E [SEP]. A null template gives [CLS] E [SEP]; a
/// missing event gives an empty E and an all-zero mask.
DecoderTarget render_prompt(const PromptTemplate* tmpl, const TokenSeq& title,
                            const std::optional<EventTriple>& event, const Vocab& vocab,
                            std::size_t max_len);
/// Just the [CLS] + filled-template prefix used to seed greedy decoding.
TokenSeq render_prefix(const PromptTemplate* tmpl, const TokenSeq& title, const Vocab& vocab,
                       std::size_t max_len);

// --- rule-based event extraction ---------------------------------------------

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

enum class EventStructure { subject_predicate_object, subject_predicate, predicate_object };

struct ExtractedEvent {
  std::optional<Span> subject;
  Span trigger;
  std::optional<Span> object;
  EventStructure structure = EventStructure::subject_predicate_object;
  /// Missing arguments are filled with kMissingArgument.
  EventTriple triple;
};

inline constexpr std::string_view kMissingArgument = "-";

class VerbLexicon {
 public:
  VerbLexicon() = default;
  explicit VerbLexicon(std::span<const std::string> verbs);
  static VerbLexicon load(const std::filesystem::path& path);

  /// Length in tokens of the longest entry matching at `pos`, or 0.
  std::size_t match(std::span<const std::string> tokens, std::size_t pos) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::vector<std::string>> entries_;  // longest first
};

const std::unordered_set<std::string>& default_function_words();

/// First lexicon verb with at least one argument becomes the trigger.
/// Subject is the maximal content-token run before it, object the run after
/// it (function words adjacent to the trigger are skipped). Structures are
/// preferred in the order subject-predicate-object, subject-predicate,
/// predicate-object.
std::optional<ExtractedEvent> extract_event_rule(
    std::span<const std::string> title_tokens, const VerbLexicon& lexicon,
    const std::unordered_set<std::string>& function_words = default_function_words());

}  // namespace eer::text
