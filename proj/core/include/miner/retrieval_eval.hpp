// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Exact retrieval (flat inner-product and MaxSim late interaction), nDCG@k,
// paired t-tests and the storage/latency harness.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "miner/linalg.hpp"

namespace miner::eval {

struct SearchHit {
  std::string doc_id;
  double score = 0.0;
};

/// Exhaustive inner-product index over single document vectors.
class DenseIndex {
 public:
  explicit DenseIndex(std::size_t dim) : dim_(dim) {}
  DenseIndex(const Matrix& vectors, std::vector<std::string> ids);

  void add(std::string id, const Vector& vector);

  /// Top-k by q . e_d, descending; ties by doc id ascending.
  std::vector<SearchHit> search(const Vector& query, std::size_t k) const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::size_t dim_;
  std::vector<double> data_;  // size() x dim_, row-major
  std::vector<std::string> ids_;
};

/// Sum over query tokens of the best-matching document token dot product.
double maxsim_score(const Matrix& query_tokens, const Matrix& doc_tokens);

class MultiVectorIndex {
 public:
  explicit MultiVectorIndex(std::size_t dim) : dim_(dim) {}

  void add(std::string id, Matrix tokens);
  std::vector<SearchHit> search(const Matrix& query_tokens, std::size_t k) const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t total_tokens() const noexcept;

 private:
  std::size_t dim_;
  std::vector<Matrix> docs_;
  std::vector<std::string> ids_;
};

using QrelsRow = std::map<std::string, int>;

struct Qrels {
  std::map<std::string, QrelsRow> by_query;

  const QrelsRow& row(const std::string& query_id) const;
};

/// Four-column text: `query_id 0 doc_id grade`.
Qrels parse_qrels(std::istream& in);
void write_qrels(std::ostream& out, const Qrels& qrels);
/// Six-column ranked list: `query_id Q0 doc_id rank score tag`.
void write_run(std::ostream& out, const std::string& query_id, std::span<const SearchHit> hits,
               const std::string& tag);

enum class Gain { exponential, linear };

/// DCG@k with gain 2^rel - 1 (or rel) and discount log2(i + 1), normalized by
/// the grade-sorted ideal. Returns 0 when the query has no relevant docs.
double ndcg_at_k(std::span<const std::string> ranking, const QrelsRow& rels, std::size_t k,
                 Gain gain = Gain::exponential);

/// Regularized incomplete beta I_x(a, b) by continued fraction (Lentz).
double regularized_incomplete_beta(double a, double b, double x);
/// Two-sided p-value of Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  // Zero-variance differences with a nonzero mean: t is reported as
  // +/-infinity through this flag (t holds only the sign, +/-1), p = 0.
  bool t_infinite = false;

  std::string t_string() const;
};

/// Two-sided paired t-test on a - b. Throws for n < 2 or unequal lengths.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// Payload-only accounting: vector count x D x 4 bytes.
std::uint64_t storage_bytes(const DenseIndex& index) noexcept;
std::uint64_t storage_bytes(const MultiVectorIndex& index) noexcept;
double storage_ratio(double larger_bytes, double smaller_bytes);

struct EffReport {
  std::string label;
  std::uint64_t storage_bytes = 0;
  std::size_t samples = 0;
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p95_us = 0.0;
  double qps = 0.0;
};

struct BenchOptions {
  std::size_t repetitions = 1;
  std::size_t k = 10;
  // Optional per-query embedding step; timed only when include_embed is set.
  std::function<void(std::size_t)> embed;
  bool include_embed = false;
};

EffReport latency_bench(const DenseIndex& index, const Matrix& queries, const BenchOptions& opts,
                        std::string label = "dense");
EffReport latency_bench(const MultiVectorIndex& index, std::span<const Matrix> queries,
                        const BenchOptions& opts, std::string label = "maxsim");

std::string eff_report_csv(std::span<const EffReport> reports);

// ---- helpers over index-addressed corpora (query i relevant to doc i) ----

/// Indices of the top-k scores, descending; ties by lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

/// Kendall's tau-a between two full rankings of the same items.
double kendall_tau(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct PairedRetrieval {
  std::vector<std::size_t> ks;
  std::vector<std::vector<double>> ndcg;  // [k index][query]
  std::vector<double> mean_ndcg;          // per k
  std::vector<std::uint8_t> top1_hit;     // per query
  double top1 = 0.0;
};

enum class Similarity { inner_product, cosine };

/// Query row i is relevant (grade 1) to document row i only.
PairedRetrieval evaluate_paired(const Matrix& queries, const Matrix& docs, std::span<const std::size_t> ks,
                                Similarity sim = Similarity::inner_product, Gain gain = Gain::exponential);

}  // namespace miner::eval
