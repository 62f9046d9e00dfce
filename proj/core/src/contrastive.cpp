// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "miner/error.hpp"

namespace miner {

namespace {

double checked_norm(const auto& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw Error(ErrorCode::zero_norm, "zero-norm vector in InfoNCE");
  return n;
}

}  // namespace

double infonce(const Vector& query, const Vector& positive, std::span<const Vector> negatives,
               double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be > 0");
  const double qn = checked_norm(query);
  auto logit = [&](const Vector& c) {
    if (c.size() != query.size()) throw Error(ErrorCode::dimension_mismatch, "InfoNCE candidate");
    return query.dot(c) / (qn * checked_norm(c)) / temperature;
  };
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(logit(positive));
  for (const auto& n : negatives) logits.push_back(logit(n));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - logits.front();
}

InfoNceGrad infonce_batch(const Matrix& queries, const Matrix& candidates, const CandidatePool& pool,
                          double temperature, bool want_query_grad, bool want_candidate_grad) {
  const auto b = static_cast<Eigen::Index>(pool.batch);
  if (queries.rows() != b || candidates.rows() < b || queries.cols() != candidates.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "infonce_batch shapes");
  }
  if (!(temperature > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be > 0");
  const Eigen::Index m = candidates.rows();

  Vector qn(b), cn(m);
  for (Eigen::Index i = 0; i < b; ++i) qn(i) = checked_norm(queries.row(i));
  for (Eigen::Index j = 0; j < m; ++j) cn(j) = checked_norm(candidates.row(j));
  const Matrix qhat = qn.cwiseInverse().asDiagonal() * queries;
  const Matrix chat = cn.cwiseInverse().asDiagonal() * candidates;
  const Matrix cos = qhat * chat.transpose();  // b x m

  // g(i, j) = d loss_i / d logit(i, j); zero outside query i's candidate set.
  Matrix g = Matrix::Zero(b, m);
  InfoNceGrad out;
  std::vector<Eigen::Index> cols;
  for (Eigen::Index i = 0; i < b; ++i) {
    cols.clear();
    for (Eigen::Index j = 0; j < b; ++j) cols.push_back(j);
    if (!pool.extra.empty()) {
      for (auto j : pool.extra[static_cast<std::size_t>(i)]) {
        if (static_cast<Eigen::Index>(j) < b || static_cast<Eigen::Index>(j) >= m) {
          throw Error(ErrorCode::invalid_argument, "extra candidate index out of range");
        }
        cols.push_back(j);
      }
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (auto j : cols) mx = std::max(mx, cos(i, j) / temperature);
    double sum = 0.0;
    for (auto j : cols) sum += std::exp(cos(i, j) / temperature - mx);
    out.loss_sum += mx + std::log(sum) - cos(i, i) / temperature;
    for (auto j : cols) g(i, j) = std::exp(cos(i, j) / temperature - mx) / sum;
    g(i, i) -= 1.0;
  }
  g /= temperature;

  // d cos(q, c)/dq = (c_hat - cos * q_hat) / |q|, symmetric for c.
  if (want_query_grad) {
    const Vector row_dot = (g.cwiseProduct(cos)).rowwise().sum();
    out.d_queries = g * chat - row_dot.asDiagonal() * qhat;
    out.d_queries = qn.cwiseInverse().asDiagonal() * out.d_queries;
  }
  if (want_candidate_grad) {
    const Vector col_dot = (g.cwiseProduct(cos)).colwise().sum().transpose();
    out.d_candidates = g.transpose() * qhat - col_dot.asDiagonal() * chat;
    out.d_candidates = cn.cwiseInverse().asDiagonal() * out.d_candidates;
  }
  return out;
}

}  // namespace miner

namespace miner {

CandidateBatch make_candidate_batch(std::span<const std::size_t> batch_pairs,
                                    const std::vector<std::vector<std::uint32_t>>& hard_negatives) {
  CandidateBatch out;
  out.rows.assign(batch_pairs.begin(), batch_pairs.end());
  out.pool.batch = batch_pairs.size();
  if (hard_negatives.empty()) return out;

  std::unordered_map<std::size_t, std::uint32_t> row_of;
  for (std::size_t r = 0; r < out.rows.size(); ++r) row_of.emplace(out.rows[r], static_cast<std::uint32_t>(r));
  out.pool.extra.resize(batch_pairs.size());
  for (std::size_t i = 0; i < batch_pairs.size(); ++i) {
    for (auto neg : hard_negatives.at(batch_pairs[i])) {
      auto it = row_of.find(neg);
      if (it == row_of.end()) {
        const auto r = static_cast<std::uint32_t>(out.rows.size());
        out.rows.push_back(neg);
        it = row_of.emplace(neg, r).first;
      }
      // In-batch negatives are already part of every query's pool.
      if (it->second >= out.pool.batch) {
        auto& extra = out.pool.extra[i];
        if (std::find(extra.begin(), extra.end(), it->second) == extra.end()) extra.push_back(it->second);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size) {
  if (batch_size < 2) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 2");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto last = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), last.begin(), last.end());
  }
  return batches;
}

}  // namespace miner
