#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "eer/util.hpp"
#include "support.hpp"

using namespace eer;
namespace fs = std::filesystem;

namespace {

/// Runs the CLI with stdout and stderr discarded; returns the exit code.
int eer_cli(const std::string& args) {
  const std::string cmd = std::string("EER_LOG=error '") + EER_CLI_PATH + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

/// A model small enough that the pipeline finishes in seconds.
void write_tiny_config(const fs::path& path) {
  const nlohmann::ordered_json j{
      {"epochs", 1},
      {"batch_size", 8},
      {"random_negatives", 2},
      {"model", {{"n_layers", 1}, {"hidden_size", 16}, {"n_heads", 2}, {"ff_size", 32}, {"max_len", 32}}}};
  write_file_atomic(path, j.dump());
}

}  // namespace

TEST(Cli, GenCorpusWritesFilesAndRunMeta) {
  fixtures::TempDir dir;
  ASSERT_EQ(eer_cli("gen-corpus --events 6 --seed 4 --test-fraction 0.5 --out " + q(dir.path())), 0);
  for (const char* f : {"documents.jsonl", "queries.jsonl", "pairs.jsonl", "events.jsonl", "verbs.txt",
                        "entity_table.json", "qrels.tsv", "spec.json", "train/documents.jsonl",
                        "test/qrels.tsv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto meta = read_json(dir / "run-meta.json");
  EXPECT_EQ(meta["command"], "gen-corpus");
  EXPECT_EQ(meta["seed"], 4);
  EXPECT_EQ(meta["config"]["n_events"], 6);
  EXPECT_FALSE(meta["outputs"].empty());
}

TEST(Cli, BadInvocationsExitWithOne) {
  fixtures::TempDir dir;
  EXPECT_EQ(eer_cli("gen-corpus --seed 1 --bogus-flag 3 --out " + q(dir.path())), 1);
  EXPECT_EQ(eer_cli("gen-corpus --out " + q(dir.path())), 1);
  EXPECT_EQ(eer_cli("no-such-command"), 1);
  EXPECT_EQ(eer_cli("gen-corpus --events 0 --seed 1 --out " + q(dir / "zero")), 1);
  write_file_atomic(dir / "run.tsv", "q\ta\t1\t0.1\nq\tb\t2\t0.9\n");
  write_file_atomic(dir / "qrels.tsv", "q\ta\t1\n");
  EXPECT_EQ(eer_cli("eval --run " + q(dir / "run.tsv") + " --qrels " + q(dir / "qrels.tsv") +
                    " --out " + q(dir / "ev")),
            1);
}

TEST(Cli, TrainToggleFlagReachesTheConfig) {
  fixtures::TempDir dir;
  ASSERT_EQ(eer_cli("gen-corpus --events 6 --seed 2 --test-fraction 0.5 --out " + q(dir / "data")), 0);
  ASSERT_EQ(eer_cli("build-vocab --corpus " + q(dir / "data") + " --out " + q(dir / "vocab")), 0);
  write_tiny_config(dir / "tiny.json");
  ASSERT_EQ(eer_cli("train --config " + q(dir / "tiny.json") + " --train " + q(dir / "data/train") +
                    " --vocab " + q(dir / "vocab/vocab.json") + " --seed 3 --toggle CL,GD --out " +
                    q(dir / "run")),
            0);
  const auto cfg = read_json(dir / "run/config.json");
  EXPECT_EQ(cfg["toggles"], "CL,GD");
  EXPECT_EQ(cfg["seed"], 3);
  EXPECT_EQ(cfg["model"]["hidden_size"], 16);
  EXPECT_TRUE(fs::exists(dir / "run/model/manifest.json"));
  EXPECT_EQ(eer_cli("train --config " + q(dir / "tiny.json") + " --train " + q(dir / "data/train") +
                    " --vocab " + q(dir / "vocab/vocab.json") + " --seed 3 --toggle CL,GP --out " +
                    q(dir / "bad")),
            1);
}

TEST(Cli, EndToEndPipelineIsReproducible) {
  fixtures::TempDir dir;
  write_tiny_config(dir / "tiny.json");
  auto pipeline = [&](const fs::path& root) {
    const auto data = root / "data";
    ASSERT_EQ(eer_cli("gen-corpus --events 8 --seed 5 --test-fraction 0.25 --out " + q(data)), 0);
    ASSERT_EQ(eer_cli("build-vocab --corpus " + q(data) + " --out " + q(root / "vocab")), 0);
    const auto vocab = q(root / "vocab/vocab.json");
    ASSERT_EQ(eer_cli("train --config " + q(dir / "tiny.json") + " --train " + q(data / "train") +
                      " --test " + q(data / "test") + " --vocab " + vocab +
                      " --entity-table " + q(data / "entity_table.json") + " --verbs " +
                      q(data / "verbs.txt") + " --seed 1 --out " + q(root / "train")),
              0);
    ASSERT_EQ(eer_cli("export --checkpoint " + q(root / "train/model") + " --out " + q(root / "export")), 0);
    const auto pack = q(root / "export/pack");
    ASSERT_EQ(eer_cli("index --pack " + pack + " --vocab " + vocab + " --corpus " + q(data / "train") +
                      " --corpus " + q(data / "test") + " --out " + q(root / "index")),
              0);
    ASSERT_EQ(eer_cli("search --pack " + pack + " --index " + q(root / "index/index") + " --vocab " +
                      vocab + " --queries " + q(data / "test") + " --k 10 --out " + q(root / "dense")),
              0);
    ASSERT_EQ(eer_cli("search --bm25-corpus " + q(data / "train") + " --bm25-corpus " + q(data / "test") +
                      " --queries " + q(data / "test") + " --k 10 --out " + q(root / "bm25")),
              0);
    ASSERT_EQ(eer_cli("eval --run " + q(root / "dense/run.tsv") + " --qrels " +
                      q(data / "test/qrels.tsv") + " --ks 1,10 --out " + q(root / "eval")),
              0);
    ASSERT_EQ(eer_cli("export-embeddings --pack " + pack + " --vocab " + vocab + " --corpus " +
                      q(data / "test") + " --side queries --out " + q(root / "emb")),
              0);
  };
  const auto a = dir / "a", b = dir / "b";
  pipeline(a);
  if (HasFatalFailure()) return;
  pipeline(b);
  if (HasFatalFailure()) return;

  const auto report = read_json(a / "eval/report.json");
  ASSERT_EQ(report["systems"].size(), 1u);
  const double r10 = report["systems"][0]["R@10"];
  EXPECT_GE(r10, 0.0);
  EXPECT_LE(r10, 1.0);
  for (const char* f : {"data/documents.jsonl", "vocab/vocab.json", "train/train_log.jsonl",
                        "export/pack/weights.bin", "index/index/index.bin", "dense/run.tsv",
                        "bm25/run.tsv", "eval/report.json", "emb/embeddings.tsv"}) {
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
}
