#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>

#include <unistd.h>

namespace eer::fixtures {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("eer-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

text::Vocab synthetic_vocab(std::size_t size) {
  auto literals = text::TemplateRegistry::builtin().literal_tokens();
  literals.push_back(std::string(text::kEventSeparator));
  literals.push_back(std::string(text::kMissingArgument));
  const std::size_t fixed = text::Vocab::kFirstPromptSlot + 4 + literals.size();
  std::vector<std::string> words;
  for (std::size_t i = 0; fixed + i < size; ++i) words.push_back("w" + std::to_string(i));
  auto built = text::Vocab::build(words, 1, 4, literals);
  return built.vocab;
}

corpus::Corpus small_corpus(int n_events, std::uint64_t seed, int queries_per_event,
                            int titles_per_event) {
  corpus::GeneratorSpec spec;
  spec.n_events = n_events;
  spec.queries_per_event = queries_per_event;
  spec.titles_per_event = titles_per_event;
  spec.seed = seed;
  return corpus::generate_corpus(spec);
}

text::Vocab corpus_vocab(const corpus::Corpus& corpus) {
  const corpus::Corpus* corpora[] = {&corpus};
  return trainer::build_vocab(corpora, 1).vocab;
}

namespace {

std::vector<text::TokenId> word_ids(const text::Vocab& vocab) {
  std::vector<text::TokenId> ids;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto& tok = vocab.token(static_cast<text::TokenId>(i));
    if (tok.size() > 1 && tok[0] == 'w') ids.push_back(static_cast<text::TokenId>(i));
  }
  return ids;
}

}  // namespace

text::TokenSeq random_sequence(const text::Vocab& vocab, std::size_t content,
                               std::mt19937_64& rng) {
  const auto words = word_ids(vocab);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  text::TokenSeq seq;
  seq.ids.push_back(text::Vocab::kCls);
  for (std::size_t i = 0; i < content; ++i) seq.ids.push_back(words[pick(rng)]);
  seq.ids.push_back(text::Vocab::kSep);
  return seq;
}

trainer::TrainConfig tiny_config(int n_layers) {
  trainer::TrainConfig cfg;
  cfg.model.n_layers = n_layers;
  cfg.model.hidden_size = 16;
  cfg.model.n_heads = 2;
  cfg.model.ff_size = 32;
  cfg.model.max_len = 24;
  cfg.model.vocab_size = 50;
  cfg.model.seed = 3;
  cfg.template_id = "continuous_single";
  cfg.augment.enabled = false;
  return cfg;
}

trainer::PreparedBatch synthetic_batch(const text::Vocab& vocab, const trainer::TrainConfig& cfg,
                                       const trainer::Resources& res, std::size_t n,
                                       std::size_t pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto words = word_ids(vocab);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<std::size_t> len(3, 6);
  trainer::PreparedBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.queries.push_back(random_sequence(vocab, len(rng), rng));
    b.positives.push_back(random_sequence(vocab, 6, rng));
    b.events.push_back(EventTriple{vocab.token(words[pick(rng)]), vocab.token(words[pick(rng)]),
                                   vocab.token(words[pick(rng)])});
  }
  for (std::size_t m = 0; m < pool; ++m) b.pool.push_back(random_sequence(vocab, len(rng), rng));
  b.allpos_valid = nn::Mask::Constant(n, n, true);
  b.neg_valid = nn::Mask::Constant(n, pool, true);
  b.neg_own = nn::Mask::Constant(n, pool, false);
  for (std::size_t i = 0; i < n && pool > 0; ++i) b.neg_own(i, i % pool) = true;
  if (cfg.toggles.gd) {
    const text::PromptTemplate* tmpl =
        cfg.toggles.gp ? &res.templates.at(cfg.template_id) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      text::TokenSeq title;
      title.ids.assign(b.positives[i].ids.begin() + 1, b.positives[i].ids.end() - 1);
      b.targets.push_back(text::render_prompt(tmpl, title, b.events[i], vocab,
                                              static_cast<std::size_t>(cfg.model.max_len)));
    }
  }
  return b;
}

namespace {

double component(const losses::LossBreakdown& b, std::size_t c) {
  switch (c) {
    case 0: return b.cl_qt;
    case 1: return b.pair_qt;
    case 2: return b.gen;
    case 3: return b.cl_qe;
    default: return b.total;
  }
}

bool enabled(const trainer::Toggles& t, std::size_t c) {
  switch (c) {
    case 0: return t.cl;
    case 1: return t.pair;
    case 2: return t.gd;
    case 3: return t.qer;
    default: return t.any();
  }
}

}  // namespace

std::array<GradientAudit, 5> audit_model_gradients(const model::DualEncoderModel& model,
                                                   const trainer::PreparedBatch& batch,
                                                   const trainer::TrainConfig& cfg,
                                                   const trainer::Resources& res, double h) {
  const auto params = model.parameters();
  const trainer::Component comps[] = {trainer::Component::cl_qt, trainer::Component::pair_qt,
                                      trainer::Component::gen, trainer::Component::cl_qe};
  // analytic[c][p]
  std::array<std::vector<nn::Matrix>, 5> analytic;
  for (std::size_t c = 0; c < 5; ++c) {
    if (!enabled(cfg.toggles, c)) continue;
    model.zero_grad();
    if (c < 4) {
      trainer::forward_backward(model, batch, cfg, res, {}, true, comps[c]);
    } else {
      trainer::forward_backward(model, batch, cfg, res, {}, true);
    }
    for (const auto& p : params) {
      const auto& g = p.var.grad();
      analytic[c].push_back(g.size() ? g : nn::Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }
  model.zero_grad();

  std::array<GradientAudit, 5> audits;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    nn::Var var = params[pi].var;
    auto& value = var.mutable_value();
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      auto at = [&](double offset) {
        value.data()[i] = saved + offset;
        return trainer::forward_backward(model, batch, cfg, res, {}, false);
      };
      const auto p1 = at(h), m1 = at(-h), p2 = at(2 * h), m2 = at(-2 * h);
      value.data()[i] = saved;
      for (std::size_t c = 0; c < 5; ++c) {
        if (!enabled(cfg.toggles, c)) continue;
        const double numeric = (8 * (component(p1, c) - component(m1, c)) -
                                (component(p2, c) - component(m2, c))) /
                               (12 * h);
        const double a = analytic[c][pi].data()[i];
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradientFloor});
        auto& audit = audits[c];
        ++audit.entries;
        if (rel > audit.max_rel_error) {
          audit.max_rel_error = rel;
          audit.worst_parameter = params[pi].name + "[" + std::to_string(i) + "]";
          audit.worst_analytic = a;
          audit.worst_numeric = numeric;
        }
      }
    }
  }
  return audits;
}

}  // namespace eer::fixtures
