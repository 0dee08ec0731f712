#ifndef CLIFFM_TESTS_GRADCHECK_HPP
#define CLIFFM_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <random>

#include "cliffm/seqmodel.hpp"

namespace cliffm::testing {

// Packed batch of random tokens in [1, vocab) with PAD at `pad_positions`.
inline Batch random_packed_batch(int vocab, std::size_t rows, std::size_t cols, Rng& rng,
                                 std::vector<std::size_t> pad_positions = {}) {
  Batch b;
  b.kind = BatchKind::kPacked;
  b.rows = rows;
  b.cols = cols;
  std::uniform_int_distribution<TokenId> tok(1, vocab - 1);
  for (std::size_t i = 0; i < rows * cols; ++i) b.tokens.push_back(tok(rng));
  for (auto p : pad_positions) b.tokens[p] = 0;
  b.mask.resize(rows * cols);
  b.targets.assign(rows * cols, 0);
  b.loss_mask.assign(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t k = r * cols + c;
      b.mask[k] = b.tokens[k] != 0;
      if (c + 1 < cols) {
        b.targets[k] = b.tokens[k + 1];
        b.loss_mask[k] = b.tokens[k] != 0;
      }
    }
  return b;
}

// Adds N(0, sd) noise to every weight so gradients are not dominated by the
// initialisation's symmetries.
inline void jitter(ModelParams<double>& p, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  for (auto& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
}

// Largest over tensors of |analytic - numeric| / (|analytic| + |numeric|),
// using Frobenius norms and central differences with step h.
inline double max_gradient_error(ModelParams<double>& p, const Batch& batch, double h = 1e-5) {
  auto analytic = loss_and_gradients(p, batch).grads;
  double worst = 0.0;
  for (std::size_t ti = 0; ti < p.tensors.size(); ++ti) {
    Matrix<double>& t = p.tensors[ti];
    if (t.size() == 0) continue;
    Matrix<double> numeric(t.rows(), t.cols());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + h;
      const double up = batch_loss(p, batch);
      t.data()[i] = orig - h;
      const double down = batch_loss(p, batch);
      t.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double denom = std::max(1e-12, numeric.norm() + analytic[ti].norm());
    worst = std::max(worst, (numeric - analytic[ti]).norm() / denom);
  }
  return worst;
}

}  // namespace cliffm::testing

#endif  // CLIFFM_TESTS_GRADCHECK_HPP
