#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "eer/corpus.hpp"
#include "eer/model.hpp"
#include "eer/text.hpp"
#include "eer/trainer.hpp"

namespace eer::fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Reserved block, four prompt slots, template literals, ";" and words
/// w0, w1, ... up to `size` tokens in total.
text::Vocab synthetic_vocab(std::size_t size);

corpus::Corpus small_corpus(int n_events, std::uint64_t seed, int queries_per_event = 2,
                            int titles_per_event = 3);
/// The vocabulary build-vocab writes for this corpus.
text::Vocab corpus_vocab(const corpus::Corpus& corpus);

/// [CLS] w.. [SEP] with `content` random words of a synthetic vocab.
text::TokenSeq random_sequence(const text::Vocab& vocab, std::size_t content, std::mt19937_64& rng);

/// Worst relative error |a - n| / max(|a|, |n|, floor) over every parameter
/// entry, with five-point central differences of step h.
struct GradientAudit {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries = 0;
};

inline constexpr double kGradientFloor = 1e-6;

/// Audits cl_qt, pair_qt, gen, cl_qe and the weighted total (in that order)
/// for every parameter of the model. Components disabled by the toggles are
/// skipped and report zero entries.
std::array<GradientAudit, 5> audit_model_gradients(const model::DualEncoderModel& model,
                                                   const trainer::PreparedBatch& batch,
                                                   const trainer::TrainConfig& cfg,
                                                   const trainer::Resources& res,
                                                   double h = 1e-4);

/// A hand-built batch over a synthetic vocab: N queries, N positives, a pool
/// of `pool` negatives, gold events, and decoder targets when GD is on.
trainer::PreparedBatch synthetic_batch(const text::Vocab& vocab, const trainer::TrainConfig& cfg,
                                       const trainer::Resources& res, std::size_t n,
                                       std::size_t pool, std::uint64_t seed);

/// Tiny model used by gradient checks: vocab 50, hidden 16.
trainer::TrainConfig tiny_config(int n_layers);

}  // namespace eer::fixtures
