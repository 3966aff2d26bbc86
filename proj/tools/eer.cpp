// eer: command-line entry point for corpus generation, training, indexing,
// search and evaluation.

#include <chrono>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "eer/corpus.hpp"
#include "eer/error.hpp"
#include "eer/eval.hpp"
#include "eer/mining.hpp"
#include "eer/model.hpp"
#include "eer/retrieval.hpp"
#include "eer/text.hpp"
#include "eer/trainer.hpp"
#include "eer/util.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using namespace eer;

/// Collects inputs and outputs of one invocation into run-meta.json.
class RunMeta {
 public:
  RunMeta(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {}

  void config(ordered_json c) { config_ = std::move(c); }
  void seed(std::uint64_t s) { seed_ = s; }
  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  void write() const {
    ordered_json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = seed_ ? ordered_json(*seed_) : ordered_json(nullptr);
    j["inputs"] = hashes(inputs_);
    j["outputs"] = hashes(outputs_);
    fs::create_directories(out_);
    write_file_atomic(out_ / "run-meta.json", j.dump(2) + "\n");
  }

 private:
  static ordered_json hashes(const std::vector<fs::path>& paths) {
    ordered_json h = ordered_json::object();
    for (const auto& p : paths) {
      if (fs::is_regular_file(p)) {
        h[p.string()] = file_fingerprint(p);
      } else if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(p)) {
          if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) h[f.string()] = file_fingerprint(f);
      }
    }
    return h;
  }

  std::string command_;
  fs::path out_;
  ordered_json config_ = ordered_json::object();
  std::optional<std::uint64_t> seed_;
  std::vector<fs::path> inputs_, outputs_;
};

std::vector<std::size_t> parse_ks(const std::string& list) {
  std::vector<std::size_t> ks;
  std::istringstream is(list);
  std::string item;
  while (std::getline(is, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ValidationError("invalid k list '" + list + "'");
    }
  }
  if (ks.empty()) throw ValidationError("empty k list");
  return ks;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  for (auto k : parse_ks(list)) seeds.push_back(k);
  return seeds;
}

std::vector<corpus::Document> union_documents(const corpus::Corpus& a, const corpus::Corpus* b) {
  std::vector<corpus::Document> docs = a.documents;
  if (b) docs.insert(docs.end(), b->documents.begin(), b->documents.end());
  return docs;
}

// --- shared training options -------------------------------------------------------------

struct TrainOptions {
  std::string config_path;
  std::string train_dir, test_dir, vocab_path, entity_table, verbs, templates;
  std::string toggles, event_source, template_id;
  int epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* toggles_opt = nullptr;
  CLI::Option* source_opt = nullptr;
  CLI::Option* template_opt = nullptr;
};

void add_train_options(CLI::App* sub, TrainOptions& o, bool require_seed, bool with_toggles) {
  sub->add_option("--config", o.config_path, "Training config JSON")->check(CLI::ExistingFile);
  sub->add_option("--train", o.train_dir, "Training corpus directory")->required();
  sub->add_option("--test", o.test_dir, "Held-out corpus directory");
  sub->add_option("--vocab", o.vocab_path, "vocab.json")->required()->check(CLI::ExistingFile);
  sub->add_option("--entity-table", o.entity_table, "Entity table JSON for augmentation");
  sub->add_option("--verbs", o.verbs, "Verb lexicon for event extraction fallback");
  sub->add_option("--templates", o.templates, "Template registry JSON");
  o.epochs_opt = sub->add_option("--epochs", o.epochs, "Epochs");
  o.batch_opt = sub->add_option("--batch-size", o.batch_size, "Batch size");
  o.lr_opt = sub->add_option("--learning-rate", o.lr, "Learning rate");
  o.seed_opt = sub->add_option("--seed", o.seed, "Random seed");
  if (require_seed) o.seed_opt->required();
  if (with_toggles) {
    o.toggles_opt = sub->add_option("--toggle", o.toggles, "Components, e.g. CL,GD");
  }
  o.source_opt = sub->add_option("--event-source", o.event_source, "gold or decoded");
  o.template_opt = sub->add_option("--template", o.template_id, "Prompt template id");
}

trainer::TrainConfig resolve_config(const TrainOptions& o) {
  ordered_json j = o.config_path.empty() ? ordered_json::object()
                                         : ordered_json::parse(read_file(o.config_path));
  if (o.epochs_opt && o.epochs_opt->count()) j["epochs"] = o.epochs;
  if (o.batch_opt && o.batch_opt->count()) j["batch_size"] = o.batch_size;
  if (o.lr_opt && o.lr_opt->count()) j["learning_rate"] = o.lr;
  if (o.seed_opt && o.seed_opt->count()) j["seed"] = o.seed;
  if (o.toggles_opt && o.toggles_opt->count()) j["toggles"] = o.toggles;
  if (o.source_opt && o.source_opt->count()) j["event_source"] = o.event_source;
  if (o.template_opt && o.template_opt->count()) j["template_id"] = o.template_id;
  return trainer::TrainConfig::from_json(j);
}

struct LoadedTraining {
  corpus::Corpus train;
  std::optional<corpus::Corpus> test;
  text::Vocab vocab;
  trainer::Resources res;
};

std::unique_ptr<LoadedTraining> load_training(const TrainOptions& o, RunMeta& meta) {
  auto lt = std::make_unique<LoadedTraining>();
  lt->train = corpus::load_corpus(o.train_dir);
  meta.input(o.train_dir);
  if (!o.test_dir.empty()) {
    lt->test = corpus::load_corpus(o.test_dir);
    meta.input(o.test_dir);
  }
  lt->vocab = text::Vocab::load(o.vocab_path);
  meta.input(o.vocab_path);
  lt->res.vocab = &lt->vocab;
  if (!o.entity_table.empty()) {
    lt->res.entity_table = mining::load_entity_table(o.entity_table);
    meta.input(o.entity_table);
  }
  if (!o.verbs.empty()) {
    lt->res.verbs = text::VerbLexicon::load(o.verbs);
    meta.input(o.verbs);
  }
  if (!o.templates.empty()) {
    lt->res.templates = text::TemplateRegistry::load(o.templates);
    meta.input(o.templates);
  }
  return lt;
}

void write_text(const fs::path& path, const std::string& s, RunMeta& meta) {
  write_file_atomic(path, s);
  meta.output(path);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging_from_env();
  CLI::App app{"Event-enhanced dense retrieval toolkit"};
  app.require_subcommand(1);
  std::string out;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  corpus::GeneratorSpec spec;
  std::string spec_path;
  double test_fraction = 0.0;
  auto* spec_opt = gen->add_option("--config", spec_path, "Generator spec JSON")->check(CLI::ExistingFile);
  auto* ev_opt = gen->add_option("--events", spec.n_events, "Number of events");
  auto* qpe_opt = gen->add_option("--queries-per-event", spec.queries_per_event);
  auto* tpe_opt = gen->add_option("--titles-per-event", spec.titles_per_event);
  auto* ent_opt = gen->add_option("--entity-pool", spec.entity_pool);
  auto* verb_opt = gen->add_option("--verb-pool", spec.verb_pool);
  auto* obj_opt = gen->add_option("--object-pool", spec.object_pool);
  auto* hash_opt = gen->add_option("--hashtag-rate", spec.hashtag_rate);
  auto* pre_opt = gen->add_option("--prefix-rate", spec.prefix_rate);
  auto* drop_opt = gen->add_option("--subject-drop-rate", spec.subject_drop_rate);
  auto* syn_opt = gen->add_option("--synonym-swap-rate", spec.synonym_swap_rate);
  auto* neg_opt = gen->add_option("--negatives-per-positive", spec.negatives_per_positive);
  auto* gseed_opt = gen->add_option("--seed", spec.seed, "Random seed")->required();
  gen->add_option("--test-fraction", test_fraction, "Also write an event-disjoint train/ and test/ split");
  gen->add_option("--out", out, "Output directory")->required();

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from a corpus");
  std::vector<std::string> bv_corpora;
  int min_freq = 1, prompt_slots = 4;
  bv->add_option("--corpus", bv_corpora, "Corpus directories")->required();
  bv->add_option("--min-freq", min_freq, "Minimum token frequency");
  bv->add_option("--prompt-slots", prompt_slots, "Continuous prompt slots");
  bv->add_option("--out", out)->required();

  // extract-events
  auto* ee = app.add_subcommand("extract-events", "Rule-based event extraction over titles");
  std::string ee_corpus, ee_verbs;
  ee->add_option("--corpus", ee_corpus)->required();
  ee->add_option("--verbs", ee_verbs, "Verb lexicon, one per line")->required()->check(CLI::ExistingFile);
  ee->add_option("--out", out)->required();

  // mine-negatives
  auto* mn = app.add_subcommand("mine-negatives", "Mine semantic hard negatives");
  std::string mn_corpus, mn_pack, mn_vocab;
  mining::MiningConfig mcfg;
  mn->add_option("--corpus", mn_corpus)->required();
  mn->add_option("--pack", mn_pack, "Inference pack or checkpoint")->required();
  mn->add_option("--vocab", mn_vocab)->required()->check(CLI::ExistingFile);
  mn->add_option("--k", mcfg.k);
  mn->add_option("--m", mcfg.m);
  mn->add_option("--lower", mcfg.lower);
  mn->add_option("--upper", mcfg.upper);
  mn->add_option("--seed", mcfg.seed)->required();
  mn->add_option("--out", out)->required();

  // train / ablate / prompt-search
  auto* tr = app.add_subcommand("train", "Train a model");
  TrainOptions tr_o;
  add_train_options(tr, tr_o, true, true);
  tr->add_option("--out", out)->required();

  auto* ab = app.add_subcommand("ablate", "Run the component ablation suite");
  TrainOptions ab_o;
  std::string ab_seeds;
  add_train_options(ab, ab_o, false, false);
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds")->required();
  ab->add_option("--out", out)->required();

  auto* ps = app.add_subcommand("prompt-search", "Train once per prompt template");
  TrainOptions ps_o;
  std::string ps_templates;
  add_train_options(ps, ps_o, true, false);
  ps->add_option("--template-ids", ps_templates, "Comma-separated template ids (default: the four searched templates)");
  ps->add_option("--out", out)->required();

  // export
  auto* ex = app.add_subcommand("export", "Export a decoder-free inference pack");
  std::string ex_ckpt;
  ex->add_option("--checkpoint", ex_ckpt)->required();
  ex->add_option("--out", out)->required();

  // index
  auto* ix = app.add_subcommand("index", "Build a vector index over titles");
  std::string ix_pack, ix_vocab;
  std::vector<std::string> ix_corpora;
  ix->add_option("--pack", ix_pack)->required();
  ix->add_option("--vocab", ix_vocab)->required()->check(CLI::ExistingFile);
  ix->add_option("--corpus", ix_corpora, "Corpus directories whose titles are indexed")->required();
  ix->add_option("--out", out)->required();

  // search
  auto* se = app.add_subcommand("search", "Rank titles for queries and write a run file");
  std::string se_pack, se_index, se_vocab, se_queries, se_query;
  std::vector<std::string> se_bm25;
  std::size_t se_k = 100;
  se->add_option("--pack", se_pack);
  se->add_option("--index", se_index);
  se->add_option("--vocab", se_vocab);
  se->add_option("--bm25-corpus", se_bm25, "Rank with BM25 over these corpus directories instead");
  se->add_option("--queries", se_queries, "Corpus directory whose queries are searched");
  se->add_option("--query", se_query, "A single query text");
  se->add_option("--k", se_k);
  se->add_option("--out", out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a run file against qrels");
  std::string ev_run, ev_qrels, ev_ks = "1,10,50";
  bool ev_strat = false;
  ev->add_option("--run", ev_run)->required()->check(CLI::ExistingFile);
  ev->add_option("--qrels", ev_qrels)->required()->check(CLI::ExistingFile);
  ev->add_option("--ks", ev_ks);
  ev->add_flag("--stratified-auc", ev_strat);
  ev->add_option("--out", out)->required();

  // export-embeddings
  auto* xe = app.add_subcommand("export-embeddings", "Write embeddings as TSV");
  std::string xe_pack, xe_vocab, xe_corpus, xe_side = "titles";
  xe->add_option("--pack", xe_pack)->required();
  xe->add_option("--vocab", xe_vocab)->required()->check(CLI::ExistingFile);
  xe->add_option("--corpus", xe_corpus)->required();
  xe->add_option("--side", xe_side, "titles or queries")->check(CLI::IsMember({"titles", "queries"}));
  xe->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    const fs::path out_dir(out);
    fs::create_directories(out_dir);

    if (*gen) {
      RunMeta meta("gen-corpus", out_dir);
      if (!spec_path.empty()) {
        auto file_spec = corpus::GeneratorSpec::from_json(ordered_json::parse(read_file(spec_path)));
        // Flags given on the command line override the file.
        auto keep = [](CLI::Option* o, auto& dst, const auto& src) {
          if (!o->count()) dst = src;
        };
        corpus::GeneratorSpec s = spec;
        keep(ev_opt, s.n_events, file_spec.n_events);
        keep(qpe_opt, s.queries_per_event, file_spec.queries_per_event);
        keep(tpe_opt, s.titles_per_event, file_spec.titles_per_event);
        keep(ent_opt, s.entity_pool, file_spec.entity_pool);
        keep(verb_opt, s.verb_pool, file_spec.verb_pool);
        keep(obj_opt, s.object_pool, file_spec.object_pool);
        keep(hash_opt, s.hashtag_rate, file_spec.hashtag_rate);
        keep(pre_opt, s.prefix_rate, file_spec.prefix_rate);
        keep(drop_opt, s.subject_drop_rate, file_spec.subject_drop_rate);
        keep(syn_opt, s.synonym_swap_rate, file_spec.synonym_swap_rate);
        keep(neg_opt, s.negatives_per_positive, file_spec.negatives_per_positive);
        keep(gseed_opt, s.seed, file_spec.seed);
        spec = s;
        meta.input(spec_path);
        (void)spec_opt;
      }
      spec.validate();
      const auto c = corpus::generate_corpus(spec);
      corpus::save_corpus(c, out_dir);
      const auto verbs = corpus::verb_lexicon(spec);
      std::string vtxt;
      for (const auto& v : verbs) vtxt += v + "\n";
      write_file_atomic(out_dir / "verbs.txt", vtxt);
      mining::save_entity_table(corpus::entity_table(spec), out_dir / "entity_table.json");
      eval::Qrels::from_pairs(c.pairs).save(out_dir / "qrels.tsv");
      write_file_atomic(out_dir / "spec.json", spec.to_json().dump(2) + "\n");
      for (const char* f : {"documents.jsonl", "queries.jsonl", "pairs.jsonl", "events.jsonl",
                            "verbs.txt", "entity_table.json", "qrels.tsv", "spec.json"}) {
        meta.output(out_dir / f);
      }
      if (test_fraction > 0.0) {
        auto [train, test] = corpus::split_by_event(c, test_fraction, spec.seed);
        corpus::save_corpus(train, out_dir / "train");
        corpus::save_corpus(test, out_dir / "test");
        eval::Qrels::from_pairs(test.pairs).save(out_dir / "test" / "qrels.tsv");
        eval::Qrels::from_pairs(train.pairs).save(out_dir / "train" / "qrels.tsv");
        meta.output(out_dir / "train");
        meta.output(out_dir / "test");
      }
      ordered_json cfg = spec.to_json();
      cfg["test_fraction"] = test_fraction;
      meta.config(cfg);
      meta.seed(spec.seed);
      meta.write();
      spdlog::info("generated {} documents, {} queries, {} pairs", c.documents.size(),
                   c.queries.size(), c.pairs.size());
      return 0;
    }

    if (*bv) {
      RunMeta meta("build-vocab", out_dir);
      std::vector<corpus::Corpus> loaded;
      for (const auto& d : bv_corpora) {
        loaded.push_back(corpus::load_corpus(d));
        meta.input(d);
      }
      std::vector<const corpus::Corpus*> corpora;
      for (const auto& c : loaded) corpora.push_back(&c);
      const auto registry = text::TemplateRegistry::builtin();
      auto result = trainer::build_vocab(corpora, min_freq, prompt_slots);
      if (result.no_corpus_tokens) {
        spdlog::warn("min_freq {} exceeds every token frequency; vocabulary holds reserved and template tokens only",
                     min_freq);
      }
      result.vocab.save(out_dir / "vocab.json");
      write_file_atomic(out_dir / "templates.json", registry.to_json().dump(2) + "\n");
      meta.output(out_dir / "vocab.json");
      meta.output(out_dir / "templates.json");
      meta.config({{"min_freq", min_freq}, {"prompt_slots", prompt_slots}});
      meta.write();
      spdlog::info("vocabulary: {} tokens", result.vocab.size());
      return 0;
    }

    if (*ee) {
      RunMeta meta("extract-events", out_dir);
      const auto c = corpus::load_corpus(ee_corpus);
      const auto lex = text::VerbLexicon::load(ee_verbs);
      meta.input(ee_corpus);
      meta.input(ee_verbs);
      std::string lines;
      std::size_t found = 0, with_gold = 0, trigger_hits = 0;
      for (const auto& d : c.documents) {
        const auto tokens = text::split_tokens(d.title);
        const auto ex = text::extract_event_rule(tokens, lex);
        ordered_json j{{"doc_id", d.doc_id}};
        if (ex) {
          ++found;
          j["subject"] = ex->triple.subject;
          j["trigger"] = ex->triple.trigger;
          j["object"] = ex->triple.object;
        } else {
          j["subject"] = nullptr;
          j["trigger"] = nullptr;
          j["object"] = nullptr;
        }
        if (auto g = c.gold_event(d.doc_id)) {
          ++with_gold;
          if (ex && ex->triple.trigger == g->trigger) ++trigger_hits;
        }
        lines += j.dump() + "\n";
      }
      write_text(out_dir / "extracted_events.jsonl", lines, meta);
      ordered_json summary{{"titles", c.documents.size()},
                           {"extracted", found},
                           {"with_gold", with_gold},
                           {"trigger_accuracy",
                            with_gold ? static_cast<double>(trigger_hits) / static_cast<double>(with_gold)
                                      : 0.0}};
      write_text(out_dir / "summary.json", summary.dump(2) + "\n", meta);
      meta.write();
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (*mn) {
      RunMeta meta("mine-negatives", out_dir);
      mcfg.validate();
      const auto c = corpus::load_corpus(mn_corpus);
      const auto vocab = text::Vocab::load(mn_vocab);
      const auto pack = model::load_inference_pack(mn_pack, vocab.fingerprint());
      meta.input(mn_corpus);
      meta.input(mn_pack);
      meta.input(mn_vocab);
      const auto index = retrieval::build_index(pack, c.documents, vocab);
      auto examples = mining::positive_examples(c);
      std::map<std::string, std::vector<std::string>> mined;
      for (const auto& q : c.queries) {
        const auto emb = retrieval::embed_queries(pack, vocab, {q.text});
        for (const auto& d : mining::mine_semantic_negatives(q.query_id, emb, index, c, mcfg)) {
          mined[q.query_id].push_back(d.doc_id);
        }
      }
      for (auto& e : examples) {
        for (const auto& d : mined[e.query_id]) {
          if (d != e.pos_doc_id) e.hard_neg_doc_ids.push_back(d);
        }
      }
      mining::save_train_examples(examples, out_dir / "train_examples.jsonl");
      meta.output(out_dir / "train_examples.jsonl");
      meta.config(mcfg.to_json());
      meta.seed(mcfg.seed);
      meta.write();
      return 0;
    }

    if (*tr) {
      RunMeta meta("train", out_dir);
      const auto cfg = resolve_config(tr_o);
      auto lt = load_training(tr_o, meta);
      const auto docs = union_documents(lt->train, lt->test ? &*lt->test : nullptr);
      write_file_atomic(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
      auto result = trainer::train(cfg, lt->train, lt->test ? &*lt->test : nullptr, docs, lt->res,
                                   out_dir);
      model::save_checkpoint(result.model, out_dir / "model");
      for (const char* f : {"config.json", "train_log.jsonl", "epochs.jsonl", "model"}) {
        meta.output(out_dir / f);
      }
      meta.config(cfg.to_json());
      meta.seed(cfg.seed);
      meta.write();
      if (!result.log.epochs.empty() && result.log.epochs.back().metrics) {
        std::cout << result.log.epochs.back().metrics->to_json().dump(2) << "\n";
      }
      return 0;
    }

    if (*ab) {
      RunMeta meta("ablate", out_dir);
      const auto cfg = resolve_config(ab_o);
      auto lt = load_training(ab_o, meta);
      if (!lt->test) throw ValidationError("ablate: --test is required");
      const auto seeds = parse_seeds(ab_seeds);
      const auto docs = union_documents(lt->train, &*lt->test);
      const auto report = trainer::run_ablation_suite(cfg, lt->train, *lt->test, docs, lt->res, seeds);
      write_text(out_dir / "ablation.tsv", report.to_tsv(), meta);
      write_text(out_dir / "ablation.json", report.to_json().dump(2) + "\n", meta);
      write_text(out_dir / "ablation.txt", report.to_table(), meta);
      auto c = cfg.to_json();
      c["seeds"] = seeds;
      meta.config(c);
      meta.write();
      std::cout << report.to_table();
      return 0;
    }

    if (*ps) {
      RunMeta meta("prompt-search", out_dir);
      const auto cfg = resolve_config(ps_o);
      auto lt = load_training(ps_o, meta);
      if (!lt->test) throw ValidationError("prompt-search: --test is required");
      std::vector<std::string> ids;
      if (ps_templates.empty()) {
        ids = text::TemplateRegistry::search_ids();
      } else {
        std::istringstream is(ps_templates);
        std::string id;
        while (std::getline(is, id, ',')) ids.push_back(id);
      }
      const auto docs = union_documents(lt->train, &*lt->test);
      const auto report = trainer::run_prompt_search(cfg, ids, lt->train, *lt->test, docs, lt->res);
      write_text(out_dir / "prompt_search.tsv", report.to_tsv(), meta);
      write_text(out_dir / "prompt_search.json", report.to_json().dump(2) + "\n", meta);
      write_text(out_dir / "prompt_search.txt", report.to_table(), meta);
      meta.config(cfg.to_json());
      meta.seed(cfg.seed);
      meta.write();
      std::cout << report.to_table();
      return 0;
    }

    if (*ex) {
      RunMeta meta("export", out_dir);
      const auto m = model::load_checkpoint(ex_ckpt);
      meta.input(ex_ckpt);
      model::save_inference_pack(model::export_inference(m), out_dir / "pack");
      meta.output(out_dir / "pack");
      meta.write();
      return 0;
    }

    if (*ix) {
      RunMeta meta("index", out_dir);
      const auto vocab = text::Vocab::load(ix_vocab);
      const auto pack = model::load_inference_pack(ix_pack, vocab.fingerprint());
      meta.input(ix_pack);
      meta.input(ix_vocab);
      std::vector<corpus::Document> docs;
      for (const auto& d : ix_corpora) {
        const auto c = corpus::load_corpus(d);
        meta.input(d);
        docs.insert(docs.end(), c.documents.begin(), c.documents.end());
      }
      retrieval::build_index(pack, docs, vocab).save(out_dir / "index");
      meta.output(out_dir / "index");
      meta.write();
      return 0;
    }

    if (*se) {
      RunMeta meta("search", out_dir);
      if (se_k < 1) throw ValidationError("search: --k must be >= 1");
      std::vector<std::pair<std::string, std::string>> queries;
      if (!se_queries.empty()) {
        const auto c = corpus::load_corpus(se_queries);
        meta.input(se_queries);
        for (const auto& q : c.queries) queries.emplace_back(q.query_id, q.text);
      } else if (!se_query.empty()) {
        queries.emplace_back("q", se_query);
      } else {
        throw ValidationError("search: give --queries or --query");
      }
      retrieval::Run run;
      bool truncated = false;
      if (!se_bm25.empty()) {
        std::vector<corpus::Document> docs;
        for (const auto& d : se_bm25) {
          const auto c = corpus::load_corpus(d);
          meta.input(d);
          docs.insert(docs.end(), c.documents.begin(), c.documents.end());
        }
        retrieval::BM25Index bm25(docs);
        for (const auto& [id, q] : queries) {
          run[id] = bm25.rank(q, se_k);
          truncated |= run[id].truncated;
        }
      } else {
        if (se_pack.empty() || se_index.empty() || se_vocab.empty()) {
          throw ValidationError("search: dense search needs --pack, --index and --vocab");
        }
        const auto vocab = text::Vocab::load(se_vocab);
        const auto pack = model::load_inference_pack(se_pack, vocab.fingerprint());
        const auto index = retrieval::VectorIndex::load(se_index);
        meta.input(se_pack);
        meta.input(se_index);
        meta.input(se_vocab);
        for (const auto& [id, q] : queries) {
          run[id] = retrieval::search(index, pack, vocab, q, se_k);
          truncated |= run[id].truncated;
        }
      }
      if (truncated) spdlog::warn("search: k={} exceeds the corpus size; rankings truncated", se_k);
      retrieval::write_run(out_dir / "run.tsv", run);
      meta.output(out_dir / "run.tsv");
      meta.config({{"k", se_k}, {"mode", se_bm25.empty() ? "dense" : "bm25"}});
      meta.write();
      return 0;
    }

    if (*ev) {
      RunMeta meta("eval", out_dir);
      const auto qrels = eval::Qrels::load(ev_qrels);
      eval::EvalOptions opts;
      opts.ks = parse_ks(ev_ks);
      opts.stratified_auc = ev_strat;
      meta.input(ev_run);
      meta.input(ev_qrels);
      eval::Report report;
      report.systems.push_back(eval::evaluate_run(ev_run, qrels, opts));
      write_text(out_dir / "report.json", report.to_json().dump(2) + "\n", meta);
      write_text(out_dir / "report.txt", report.to_table(), meta);
      meta.config({{"ks", opts.ks}, {"stratified_auc", ev_strat}});
      meta.write();
      std::cout << report.to_table();
      return 0;
    }

    if (*xe) {
      RunMeta meta("export-embeddings", out_dir);
      const auto vocab = text::Vocab::load(xe_vocab);
      const auto pack = model::load_inference_pack(xe_pack, vocab.fingerprint());
      const auto c = corpus::load_corpus(xe_corpus);
      meta.input(xe_pack);
      meta.input(xe_vocab);
      meta.input(xe_corpus);
      std::vector<std::string> ids, texts;
      if (xe_side == "titles") {
        for (const auto& d : c.documents) {
          ids.push_back(d.doc_id);
          texts.push_back(d.title);
        }
      } else {
        for (const auto& q : c.queries) {
          ids.push_back(q.query_id);
          texts.push_back(q.text);
        }
      }
      const auto emb = xe_side == "titles" ? retrieval::embed_titles(pack, vocab, texts)
                                           : retrieval::embed_queries(pack, vocab, texts);
      eval::export_embeddings(emb, ids, out_dir / "embeddings.tsv");
      meta.output(out_dir / "embeddings.tsv");
      meta.config({{"side", xe_side}});
      meta.write();
      return 0;
    }
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("invalid JSON: {}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
