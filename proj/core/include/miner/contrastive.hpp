// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Cosine-logit InfoNCE shared by probe and fusion training.

#include <cstdint>
#include <span>
#include <vector>

#include "miner/linalg.hpp"

namespace miner {

/// -log softmax of the positive among {positive} U negatives, logits
/// cos(query, .) / temperature, evaluated with max-subtracted log-sum-exp.
double infonce(const Vector& query, const Vector& positive, std::span<const Vector> negatives,
               double temperature);

/// Candidate pool for a batch of B queries. Rows 0..B-1 of the candidate
/// matrix are the positives of queries 0..B-1 and every in-batch negative;
/// `extra[i]` lists additional candidate rows (>= B) that only query i sees.
struct CandidatePool {
  std::size_t batch = 0;
  std::vector<std::vector<std::uint32_t>> extra;
};

struct InfoNceGrad {
  double loss_sum = 0.0;  // sum over queries, not mean
  Matrix d_queries;       // same shape as queries
  Matrix d_candidates;    // same shape as candidates
};

/// Batched InfoNCE over a pool. Gradients are of `loss_sum`; d_candidates is
/// only filled when `want_candidate_grad` is set.
InfoNceGrad infonce_batch(const Matrix& queries, const Matrix& candidates, const CandidatePool& pool,
                          double temperature, bool want_query_grad, bool want_candidate_grad);

}  // namespace miner

namespace miner {

/// Pair indices of one training batch plus the out-of-batch hard negatives
/// that must be gathered explicitly. Candidate row r maps to pair
/// `rows[r]`: the batch pairs first, then the gathered negatives.
struct CandidateBatch {
  std::vector<std::size_t> rows;
  CandidatePool pool;
};

/// Negatives follow one policy everywhere: every other in-batch candidate,
/// plus the query's own hard negatives (gathered when outside the batch).
CandidateBatch make_candidate_batch(std::span<const std::size_t> batch_pairs,
                                    const std::vector<std::vector<std::uint32_t>>& hard_negatives);

/// Splits a permutation into batches of `batch_size`; a trailing batch of a
/// single pair is merged into its predecessor (InfoNCE needs >= 2).
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size);

}  // namespace miner
