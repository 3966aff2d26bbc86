#include "eer/losses.hpp"

#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "eer/error.hpp"

namespace eer::losses {

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("loss config: temperature must be > 0");
  }
  if (!(margin >= 0.0)) throw ValidationError("loss config: margin must be >= 0");
  for (double w : {w_cl_qt, w_pair, w_gen, w_cl_qe}) {
    if (!(w >= 0.0)) throw ValidationError("loss config: weights must be >= 0");
  }
}

nlohmann::ordered_json LossConfig::to_json() const {
  return {{"temperature", temperature},
          {"margin", margin},
          {"w_cl_qt", w_cl_qt},
          {"w_pair", w_pair},
          {"w_gen", w_gen},
          {"w_cl_qe", w_cl_qe},
          {"gen_norm", gen_norm == GenNorm::sum ? "sum" : "per_token_mean"},
          {"sharing", sharing == NegativeSharing::pooled ? "pooled" : "per_query"}};
}

LossConfig LossConfig::from_json(const nlohmann::ordered_json& j) {
  LossConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "margin") c.margin = v.get<double>();
      else if (key == "w_cl_qt") c.w_cl_qt = v.get<double>();
      else if (key == "w_pair") c.w_pair = v.get<double>();
      else if (key == "w_gen") c.w_gen = v.get<double>();
      else if (key == "w_cl_qe") c.w_cl_qe = v.get<double>();
      else if (key == "gen_norm") {
        const auto s = v.get<std::string>();
        if (s == "sum") c.gen_norm = GenNorm::sum;
        else if (s == "per_token_mean") c.gen_norm = GenNorm::per_token_mean;
        else throw ValidationError("loss config: unknown gen_norm '" + s + "'");
      } else if (key == "sharing") {
        const auto s = v.get<std::string>();
        if (s == "pooled") c.sharing = NegativeSharing::pooled;
        else if (s == "per_query") c.sharing = NegativeSharing::per_query;
        else throw ValidationError("loss config: unknown sharing '" + s + "'");
      } else {
        throw ValidationError("loss config: unknown field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("loss config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void check_shapes(const BatchSimilarities& s) {
  const auto n = s.all_pos.rows();
  if (n == 0) throw ValidationError("loss: empty batch");
  if (s.all_pos.cols() != n) throw ValidationError("loss: all_pos must be square");
  if (s.neg.size() > 0 && s.neg.rows() != n) {
    throw ValidationError("loss: neg rows must equal batch size");
  }
  auto check_mask = [&](const Mask& m, const Matrix& ref, const char* name) {
    if (m.size() > 0 && (m.rows() != ref.rows() || m.cols() != ref.cols())) {
      throw ValidationError(std::string("loss: ") + name + " shape mismatch");
    }
  };
  check_mask(s.allpos_valid, s.all_pos, "allpos_valid");
  check_mask(s.neg_valid, s.neg, "neg_valid");
  check_mask(s.neg_own, s.neg, "neg_own");
}

bool on(const Mask& m, Eigen::Index i, Eigen::Index j) { return m.size() == 0 || m(i, j); }

}  // namespace

SimilarityLoss contrastive(const BatchSimilarities& s, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("contrastive loss: temperature must be > 0");
  check_shapes(s);
  const auto n = s.all_pos.rows();
  const auto m = s.neg.cols();
  SimilarityLoss out;
  out.d_all_pos = Matrix::Zero(n, n);
  out.d_neg = Matrix::Zero(s.neg.rows(), m);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || on(s.allpos_valid, i, j)) mx = std::max(mx, s.all_pos(i, j) / temperature);
    }
    for (Eigen::Index k = 0; k < m; ++k) {
      if (on(s.neg_valid, i, k)) mx = std::max(mx, s.neg(i, k) / temperature);
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || on(s.allpos_valid, i, j)) z += std::exp(s.all_pos(i, j) / temperature - mx);
    }
    for (Eigen::Index k = 0; k < m; ++k) {
      if (on(s.neg_valid, i, k)) z += std::exp(s.neg(i, k) / temperature - mx);
    }
    const double lse = mx + std::log(z);
    out.value += (lse - s.all_pos(i, i) / temperature) * inv_n;
    const double g = inv_n / temperature;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || on(s.allpos_valid, i, j)) {
        out.d_all_pos(i, j) += g * std::exp(s.all_pos(i, j) / temperature - lse);
      }
    }
    out.d_all_pos(i, i) -= g;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (on(s.neg_valid, i, k)) out.d_neg(i, k) = g * std::exp(s.neg(i, k) / temperature - lse);
    }
  }
  return out;
}

SimilarityLoss contrastive_qt(const BatchSimilarities& sims, const LossConfig& cfg) {
  if (cfg.sharing == NegativeSharing::pooled || sims.neg_own.size() == 0) {
    return contrastive(sims, cfg.temperature);
  }
  BatchSimilarities own = sims;
  own.neg_valid = sims.neg_valid.size() == 0 ? sims.neg_own : Mask(sims.neg_valid && sims.neg_own);
  return contrastive(own, cfg.temperature);
}

SimilarityLoss contrastive_qe(const BatchSimilarities& sims, const LossConfig& cfg) {
  return contrastive(sims, cfg.temperature);
}

double pairwise_qt(double s_pos, std::span<const double> s_neg, double margin) {
  if (s_neg.empty()) {
    spdlog::warn("pairwise loss: query has no negatives; contributing 0");
    return 0.0;
  }
  double sum = 0.0;
  for (double s : s_neg) sum += std::max(0.0, margin + s - s_pos);
  return sum / static_cast<double>(s_neg.size());
}

SimilarityLoss pairwise_qt(const BatchSimilarities& s, const LossConfig& cfg) {
  check_shapes(s);
  const auto n = s.all_pos.rows();
  const auto m = s.neg.cols();
  const Mask& own = s.neg_own.size() > 0 ? s.neg_own : s.neg_valid;
  SimilarityLoss out;
  out.d_all_pos = Matrix::Zero(n, n);
  out.d_neg = Matrix::Zero(s.neg.rows(), m);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::size_t empty_rows = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index count = 0;
    for (Eigen::Index k = 0; k < m; ++k) count += on(own, i, k) ? 1 : 0;
    if (count == 0) {
      ++empty_rows;
      continue;
    }
    const double w = inv_n / static_cast<double>(count);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (!on(own, i, k)) continue;
      const double h = cfg.margin + s.neg(i, k) - s.all_pos(i, i);
      if (h > 0.0) {
        out.value += w * h;
        out.d_neg(i, k) += w;
        out.d_all_pos(i, i) -= w;
      }
    }
  }
  if (empty_rows > 0) {
    spdlog::warn("pairwise loss: {} of {} queries have no negatives", empty_rows, n);
  }
  return out;
}

GenerationLoss generation_loss(std::span<const Matrix> logits,
                               std::span<const text::DecoderTarget> targets, GenNorm norm) {
  if (logits.size() != targets.size()) {
    throw ValidationError("generation loss: logits/targets count mismatch");
  }
  GenerationLoss out;
  out.d_logits.reserve(logits.size());
  for (std::size_t b = 0; b < logits.size(); ++b) {
    const auto& t = targets[b];
    if (static_cast<std::size_t>(logits[b].rows()) != t.input_ids.size() ||
        t.loss_mask.size() != t.input_ids.size()) {
      throw ValidationError("generation loss: logits rows must equal target length");
    }
    out.masked_tokens += t.masked_count();
  }
  if (out.masked_tokens == 0) {
    throw ValidationError("generation loss: loss mask is all zero across the batch");
  }
  const double scale =
      norm == GenNorm::per_token_mean ? 1.0 / static_cast<double>(out.masked_tokens) : 1.0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    const Matrix& z = logits[b];
    const auto& t = targets[b];
    Matrix d = Matrix::Zero(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      if (!t.loss_mask[static_cast<std::size_t>(r)]) continue;
      const auto target = t.input_ids.ids[static_cast<std::size_t>(r)];
      if (target < 0 || target >= z.cols()) {
        throw ValidationError("generation loss: target id outside logits width");
      }
      const double mx = z.row(r).maxCoeff();
      const auto e = (z.row(r).array() - mx).exp();
      const double lse = mx + std::log(e.sum());
      out.value += scale * (lse - z(r, target));
      d.row(r) = scale * (z.row(r).array() - lse).exp().matrix();
      d(r, target) -= scale;
    }
    out.d_logits.push_back(std::move(d));
  }
  return out;
}

LossBreakdown total_loss(double cl_qt, double pair_qt, double gen, double cl_qe,
                         const LossConfig& cfg) {
  LossBreakdown b{cl_qt, pair_qt, gen, cl_qe, 0.0};
  b.total = cfg.w_cl_qt * cl_qt + cfg.w_pair * pair_qt + cfg.w_gen * gen + cfg.w_cl_qe * cl_qe;
  return b;
}

nlohmann::ordered_json step_record(long step, const LossBreakdown& b) {
  return {{"step", step},          {"cl_qt", b.cl_qt}, {"pair_qt", b.pair_qt},
          {"gen", b.gen},          {"cl_qe", b.cl_qe}, {"total", b.total}};
}

}  // namespace eer::losses
