#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "eer/nn/archive.hpp"
#include "eer/nn/tensor.hpp"
#include "support.hpp"

using namespace eer;
using nn::Matrix;
using nn::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Checks d<out, R>/d input against central differences for every input.
double max_op_error(std::vector<Var> inputs, const std::function<Var(const std::vector<Var>&)>& f,
                    std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Var out = f(inputs);
  const Matrix r = random_matrix(out.rows(), out.cols(), rng);
  for (auto& v : inputs) v.zero_grad();
  nn::Seed seed_pair{out, r};
  nn::backward(std::span<const nn::Seed>(&seed_pair, 1));
  double worst = 0.0;
  const double h = 1e-5;
  for (auto& v : inputs) {
    const Matrix g = v.grad().size() ? v.grad() : Matrix::Zero(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.value().size(); ++i) {
      const double saved = v.value().data()[i];
      v.mutable_value().data()[i] = saved + h;
      const double plus = (f(inputs).value().array() * r.array()).sum();
      v.mutable_value().data()[i] = saved - h;
      const double minus = (f(inputs).value().array() * r.array()).sum();
      v.mutable_value().data()[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double a = g.data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
  Var param(Eigen::Index r, Eigen::Index c) { return Var(random_matrix(r, c, rng), true); }
};

}  // namespace

TEST_F(OpGradient, MatmulVariants) {
  EXPECT_LT(max_op_error({param(3, 4), param(4, 2)}, [](auto& v) { return nn::matmul(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_op_error({param(3, 4), param(5, 4)}, [](auto& v) { return nn::matmul_nt(v[0], v[1]); }), 1e-6);
}

TEST_F(OpGradient, ElementwiseOps) {
  EXPECT_LT(max_op_error({param(3, 4), param(3, 4)}, [](auto& v) { return nn::add(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_op_error({param(3, 4), param(1, 4)}, [](auto& v) { return nn::add_row(v[0], v[1]); }), 1e-6);
  EXPECT_LT(max_op_error({param(3, 4)}, [](auto& v) { return nn::scale(v[0], -2.5); }), 1e-6);
  EXPECT_LT(max_op_error({param(3, 4)}, [](auto& v) { return nn::gelu(v[0]); }), 1e-6);
  EXPECT_LT(max_op_error({param(3, 4)}, [](auto& v) { return nn::tanh(v[0]); }), 1e-6);
}

TEST_F(OpGradient, LayerNorm) {
  EXPECT_LT(max_op_error({param(3, 6), param(1, 6), param(1, 6)},
                         [](auto& v) { return nn::layer_norm(v[0], v[1], v[2]); }),
            1e-5);
}

TEST_F(OpGradient, EmbeddingWithPromptRows) {
  std::vector<std::int32_t> ids = {0, 3, 5, 6, 3, 1};
  EXPECT_LT(max_op_error({param(7, 4), param(2, 4)},
                         [&](auto& v) { return nn::embedding(v[0], ids, v[1], 5); }),
            1e-6);
}

TEST_F(OpGradient, RowOps) {
  std::vector<Eigen::Index> rows = {2, 0, 2};
  EXPECT_LT(max_op_error({param(4, 3)}, [&](auto& v) { return nn::select_rows(v[0], rows); }), 1e-6);
  EXPECT_LT(max_op_error({param(2, 3), param(1, 3)},
                         [](auto& v) { return nn::concat_rows(std::vector<Var>{v[0], v[1]}); }),
            1e-6);
  EXPECT_LT(max_op_error({param(4, 3)}, [](auto& v) { return nn::mean_rows(v[0], 3); }), 1e-6);
}

TEST_F(OpGradient, AttentionMaskedAndCausal) {
  EXPECT_LT(max_op_error({param(4, 6), param(5, 6), param(5, 6)},
                         [](auto& v) { return nn::attention(v[0], v[1], v[2], 2, 3, false); }),
            1e-5);
  EXPECT_LT(max_op_error({param(4, 6), param(4, 6), param(4, 6)},
                         [](auto& v) { return nn::attention(v[0], v[1], v[2], 3, 4, true); }),
            1e-5);
}

TEST_F(OpGradient, CosineMatrix) {
  EXPECT_LT(max_op_error({param(3, 5), param(4, 5)},
                         [](auto& v) { return nn::cosine_matrix(v[0], v[1]); }),
            1e-5);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var a(Matrix::Ones(2, 2), true);
  {
    nn::NoGradGuard guard;
    EXPECT_FALSE(nn::grad_enabled());
    Var b = nn::scale(a, 2.0);
    EXPECT_FALSE(b.requires_grad());
  }
  EXPECT_TRUE(nn::grad_enabled());
}

TEST(Autograd, LeafGradientsAccumulateAcrossCalls) {
  Var a(Matrix::Ones(1, 2), true);
  Var b = nn::scale(a, 3.0);
  nn::Seed s{b, Matrix::Ones(1, 2)};
  nn::backward(std::span<const nn::Seed>(&s, 1));
  nn::backward(std::span<const nn::Seed>(&s, 1));
  EXPECT_DOUBLE_EQ(a.grad()(0, 1), 6.0);
}

TEST(Archive, RoundTripIsBitwiseForFloatValues) {
  fixtures::TempDir dir;
  std::mt19937_64 rng(5);
  nn::TensorArchive a;
  a.meta["note"] = "x";
  Matrix m = random_matrix(3, 7, rng);
  nn::round_to_float(m);
  a.tensors.push_back({"m", m});
  nn::write_archive(dir / "m.json", dir / "m.bin", a);
  const auto b = nn::read_archive(dir / "m.json", dir / "m.bin");
  EXPECT_EQ(b.meta["note"], "x");
  ASSERT_TRUE(b.contains("m"));
  EXPECT_EQ(std::memcmp(b.at("m").data(), m.data(), sizeof(double) * m.size()), 0);
}

TEST(ModelGradients, EveryComponentMatchesFiniteDifferencesOnOneLayer) {
  const auto vocab = fixtures::synthetic_vocab(50);
  ASSERT_EQ(vocab.size(), 50u);
  auto cfg = fixtures::tiny_config(1);
  trainer::Resources res;
  res.vocab = &vocab;
  const auto batch = fixtures::synthetic_batch(vocab, cfg, res, 3, 2, 17);
  model::DualEncoderModel m(cfg.model, vocab.fingerprint());
  const auto audits = fixtures::audit_model_gradients(m, batch, cfg, res);
  const char* names[] = {"cl_qt", "pair_qt", "gen", "cl_qe", "total"};
  for (std::size_t c = 0; c < audits.size(); ++c) {
    EXPECT_GT(audits[c].entries, 0u) << names[c];
    EXPECT_LE(audits[c].max_rel_error, 1e-4)
        << names[c] << " worst at " << audits[c].worst_parameter << " analytic "
        << audits[c].worst_analytic << " numeric " << audits[c].worst_numeric;
  }
}
