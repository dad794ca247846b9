#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rit/numerics/tape.hpp"

// Differentiable tensor ops. Every op reads its inputs from the tape that
// owns them and appends its result to the same tape.
//
// "Row" ops treat a tensor of shape [..., D] as (size / D) rows of width D
// and keep the leading extents of their input.

namespace rit::nn {

// -- linear algebra ---------------------------------------------------------

/// x[..., K] * w[K, M] -> [..., M]
Var matmul(const Var& x, const Var& w);
/// a[N, D] * b[M, D]^T -> [N, M]
Var matmul_nt(const Var& a, const Var& b);
/// x[..., D] + bias[D]
Var add_row(const Var& x, const Var& bias);
/// Row-wise dot products: a, b of shape [..., D] -> [...].
Var rowdot(const Var& a, const Var& b);

// -- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var relu(const Var& x);
/// Exact erf form: x * Phi(x).
Var gelu(const Var& x);
Var sigmoid(const Var& x);

// -- reductions and reshaping -------------------------------------------------

Var sum(const Var& x);
Var mean(const Var& x);
/// Softmax along `axis`, stabilized by max subtraction.
Var softmax(const Var& x, std::size_t axis);
/// [N, k, D] -> [N, D], sum over the middle axis.
Var sum_neighbors(const Var& x);
/// [N, k, D] -> [N, D], max over the middle axis. Ties route the gradient
/// to the lowest neighbor slot.
Var max_neighbors(const Var& x);
Var reshape(const Var& x, Shape shape);
/// [N, D1] ++ [N, D2] -> [N, D1 + D2]
Var concat_cols(const Var& a, const Var& b);

// -- indexing -----------------------------------------------------------------

/// Gathers rows of x[S, D]: out row r = x[index[r]]. The result has shape
/// lead ++ [D] where product(lead) == index.size().
Var gather_rows(const Var& x, std::span<const std::size_t> index, Shape lead);
/// out[i] = sum_j weights[i, j] * x[index[i, j]]; x[S, D], weights and index
/// are [N, k] (weights constant). Result [N, D].
Var weighted_gather(const Var& x, std::span<const std::size_t> index, const Tensor& weights);

// -- normalization ------------------------------------------------------------

/// Normalizes each row over its last axis, then gamma * xhat + beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

struct BatchStats {
  Tensor mean;
  Tensor var;  // biased (population) variance
};

/// Normalizes each feature over all rows with the batch statistics, which
/// are written to `stats` for the running-average update.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats);
/// Normalizes with fixed statistics.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                    double eps);

// -- losses -------------------------------------------------------------------

/// Mean binary cross-entropy with predictions clamped to [clamp, 1 - clamp].
/// Returns 0 for empty input.
Var bce_loss(const Var& pred, const Tensor& target, double clamp = 1e-7);

/// Sum over classes of (1 - TI_c)^(1/gamma) with the Tversky index
/// TI_c = (TP + s) / (TP + alpha FN + beta FP + s) on soft counts.
/// probs [N, C]; labels in [0, C).
Var focal_tversky_loss(const Var& probs, std::span<const int> labels, double alpha, double beta, double gamma,
                       double smooth = 1.0);

/// (1/N) sum_i || offsets_i - target_i ||_1 for [N, 3] inputs.
Var offset_l1_loss(const Var& offsets, const Tensor& target);

}  // namespace rit::nn
