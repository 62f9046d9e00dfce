// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/retrieval_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "miner/error.hpp"
#include "miner/format.hpp"

namespace miner::eval {

namespace {

std::vector<SearchHit> select_top(std::vector<SearchHit> hits, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "k must be >= 1");
  auto better = [](const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), better);
  hits.resize(keep);
  return hits;
}

}  // namespace

DenseIndex::DenseIndex(const Matrix& vectors, std::vector<std::string> ids)
    : dim_(static_cast<std::size_t>(vectors.cols())) {
  if (static_cast<std::size_t>(vectors.rows()) != ids.size()) {
    throw Error(ErrorCode::dimension_mismatch, "one id per vector");
  }
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) add(std::move(ids[static_cast<std::size_t>(i)]), vectors.row(i).transpose());
}

void DenseIndex::add(std::string id, const Vector& vector) {
  if (static_cast<std::size_t>(vector.size()) != dim_) throw Error(ErrorCode::dimension_mismatch, "DenseIndex::add");
  if (!vector.allFinite()) throw Error(ErrorCode::non_finite, "DenseIndex::add");
  if (std::find(ids_.begin(), ids_.end(), id) != ids_.end()) {
    throw Error(ErrorCode::invalid_argument, "duplicate doc id " + id);
  }
  data_.insert(data_.end(), vector.data(), vector.data() + vector.size());
  ids_.push_back(std::move(id));
}

std::vector<SearchHit> DenseIndex::search(const Vector& query, std::size_t k) const {
  if (ids_.empty()) throw Error(ErrorCode::empty_input, "search on empty index");
  if (static_cast<std::size_t>(query.size()) != dim_) throw Error(ErrorCode::dimension_mismatch, "query dim");
  std::vector<SearchHit> hits;
  hits.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const double* row = data_.data() + i * dim_;
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s += query[static_cast<Eigen::Index>(j)] * row[j];
    hits.push_back({ids_[i], s});
  }
  return select_top(std::move(hits), k);
}

double maxsim_score(const Matrix& query_tokens, const Matrix& doc_tokens) {
  if (query_tokens.rows() < 1 || doc_tokens.rows() < 1) {
    throw Error(ErrorCode::empty_input, "maxsim needs at least one token on each side");
  }
  if (query_tokens.cols() != doc_tokens.cols()) throw Error(ErrorCode::dimension_mismatch, "maxsim dims");
  const Matrix sims = query_tokens * doc_tokens.transpose();
  return sims.rowwise().maxCoeff().sum();
}

void MultiVectorIndex::add(std::string id, Matrix tokens) {
  if (tokens.rows() < 1) throw Error(ErrorCode::invalid_argument, "document needs >= 1 token");
  if (static_cast<std::size_t>(tokens.cols()) != dim_) throw Error(ErrorCode::dimension_mismatch, "token dim");
  if (std::find(ids_.begin(), ids_.end(), id) != ids_.end()) {
    throw Error(ErrorCode::invalid_argument, "duplicate doc id " + id);
  }
  docs_.push_back(std::move(tokens));
  ids_.push_back(std::move(id));
}

std::vector<SearchHit> MultiVectorIndex::search(const Matrix& query_tokens, std::size_t k) const {
  if (ids_.empty()) throw Error(ErrorCode::empty_input, "search on empty index");
  std::vector<SearchHit> hits;
  hits.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) hits.push_back({ids_[i], maxsim_score(query_tokens, docs_[i])});
  return select_top(std::move(hits), k);
}

std::size_t MultiVectorIndex::total_tokens() const noexcept {
  std::size_t n = 0;
  for (const auto& d : docs_) n += static_cast<std::size_t>(d.rows());
  return n;
}

const QrelsRow& Qrels::row(const std::string& query_id) const {
  static const QrelsRow empty;
  auto it = by_query.find(query_id);
  return it == by_query.end() ? empty : it->second;
}

Qrels parse_qrels(std::istream& in) {
  Qrels q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string qid, iter, did;
    long long grade = 0;
    if (!(ss >> qid >> iter >> did >> grade)) {
      throw Error(ErrorCode::parse_error, "qrels line " + std::to_string(lineno));
    }
    if (grade < 0) throw Error(ErrorCode::parse_error, "negative grade on qrels line " + std::to_string(lineno));
    q.by_query[qid][did] = static_cast<int>(grade);
  }
  return q;
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [qid, row] : qrels.by_query) {
    for (const auto& [did, grade] : row) out << qid << " 0 " << did << ' ' << grade << '\n';
  }
}

void write_run(std::ostream& out, const std::string& query_id, std::span<const SearchHit> hits,
               const std::string& tag) {
  for (std::size_t r = 0; r < hits.size(); ++r) {
    out << query_id << " Q0 " << hits[r].doc_id << ' ' << (r + 1) << ' ' << fmt_real(hits[r].score) << ' '
        << tag << '\n';
  }
}

double ndcg_at_k(std::span<const std::string> ranking, const QrelsRow& rels, std::size_t k, Gain gain) {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "k must be >= 1");
  auto g = [gain](int rel) {
    return gain == Gain::exponential ? std::exp2(static_cast<double>(rel)) - 1.0 : static_cast<double>(rel);
  };
  std::vector<int> grades;
  for (const auto& [doc, grade] : rels) {
    if (grade > 0) grades.push_back(grade);
  }
  if (grades.empty()) return 0.0;
  std::sort(grades.begin(), grades.end(), std::greater<>());
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) ideal += g(grades[i]) / std::log2(static_cast<double>(i) + 2.0);

  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    auto it = rels.find(ranking[i]);
    if (it != rels.end() && it->second > 0) dcg += g(it->second) / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / ideal;
}

namespace {

// Continued fraction for the incomplete beta, modified Lentz.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw Error(ErrorCode::invalid_argument, "beta parameters must be > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::invalid_argument, "x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw Error(ErrorCode::invalid_argument, "dof must be > 0");
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return std::clamp(regularized_incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

std::string TTestResult::t_string() const {
  if (t_infinite) return t > 0 ? "inf" : "-inf";
  return fmt_real(t);
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "paired_ttest lengths differ");
  const std::size_t n = a.size();
  if (n < 2) throw Error(ErrorCode::invalid_argument, "paired_ttest needs n >= 2");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  if (sd == 0.0) {
    if (mean == 0.0) return r;  // t = 0, p = 1
    r.t_infinite = true;
    r.t = mean > 0.0 ? 1.0 : -1.0;
    r.p = 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, static_cast<double>(n - 1));
  return r;
}

std::uint64_t storage_bytes(const DenseIndex& index) noexcept {
  return std::uint64_t{index.size()} * index.dim() * 4;
}

std::uint64_t storage_bytes(const MultiVectorIndex& index) noexcept {
  return std::uint64_t{index.total_tokens()} * index.dim() * 4;
}

double storage_ratio(double larger_bytes, double smaller_bytes) {
  if (!(smaller_bytes > 0.0)) throw Error(ErrorCode::invalid_argument, "storage ratio needs a positive base");
  return larger_bytes / smaller_bytes;
}

namespace {

template <class SearchFn>
EffReport run_bench(std::size_t n_queries, const BenchOptions& opts, std::string label,
                    std::uint64_t bytes, SearchFn&& search) {
  if (n_queries == 0) throw Error(ErrorCode::empty_input, "latency_bench on empty query set");
  if (opts.repetitions == 0) throw Error(ErrorCode::invalid_argument, "repetitions must be >= 1");
  using clock = std::chrono::steady_clock;

  for (std::size_t q = 0; q < n_queries; ++q) {
    if (opts.embed) opts.embed(q);
    search(q);
  }

  std::vector<double> samples;
  samples.reserve(n_queries * opts.repetitions);
  volatile double sink = 0.0;
  for (std::size_t rep = 0; rep < opts.repetitions; ++rep) {
    for (std::size_t q = 0; q < n_queries; ++q) {
      if (opts.embed && !opts.include_embed) opts.embed(q);
      const auto t0 = clock::now();
      if (opts.embed && opts.include_embed) opts.embed(q);
      sink = sink + search(q);
      const auto t1 = clock::now();
      samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
  }
  (void)sink;

  EffReport r;
  r.label = std::move(label);
  r.storage_bytes = bytes;
  r.samples = samples.size();
  const double total = std::accumulate(samples.begin(), samples.end(), 0.0);
  r.mean_us = total / static_cast<double>(samples.size());
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()))) ;
    return sorted[std::clamp<std::size_t>(idx, 1, sorted.size()) - 1];
  };
  r.p50_us = pct(0.50);
  r.p95_us = pct(0.95);
  r.qps = total > 0.0 ? static_cast<double>(samples.size()) / (total * 1e-6)
                      : std::numeric_limits<double>::max();
  return r;
}

}  // namespace

EffReport latency_bench(const DenseIndex& index, const Matrix& queries, const BenchOptions& opts,
                        std::string label) {
  return run_bench(static_cast<std::size_t>(queries.rows()), opts, std::move(label), storage_bytes(index),
                   [&](std::size_t q) {
                     const Vector query = queries.row(static_cast<Eigen::Index>(q)).transpose();
                     return index.search(query, opts.k).front().score;
                   });
}

EffReport latency_bench(const MultiVectorIndex& index, std::span<const Matrix> queries,
                        const BenchOptions& opts, std::string label) {
  return run_bench(queries.size(), opts, std::move(label), storage_bytes(index),
                   [&](std::size_t q) { return index.search(queries[q], opts.k).front().score; });
}

std::string eff_report_csv(std::span<const EffReport> reports) {
  std::string out = "label,storage_bytes,samples,mean_us,p50_us,p95_us,qps\n";
  for (const auto& r : reports) {
    out += r.label + ',' + std::to_string(r.storage_bytes) + ',' + std::to_string(r.samples) + ',' +
           fmt_real(r.mean_us) + ',' + fmt_real(r.p50_us) + ',' + fmt_real(r.p95_us) + ',' + fmt_real(r.qps) +
           '\n';
  }
  return out;
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t keep = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(keep);
  return idx;
}

double kendall_tau(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "kendall_tau lengths");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::vector<std::size_t> pos_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (b[i] >= n) throw Error(ErrorCode::invalid_argument, "kendall_tau expects permutations of [0, n)");
    pos_b[b[i]] = i;
  }
  long long concordant = 0;
  long long discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // a ranks a[i] above a[j]; does b agree?
      (pos_b[a[i]] < pos_b[a[j]] ? concordant : discordant)++;
    }
  }
  return static_cast<double>(concordant - discordant) / static_cast<double>(concordant + discordant);
}

PairedRetrieval evaluate_paired(const Matrix& queries, const Matrix& docs, std::span<const std::size_t> ks,
                                Similarity sim, Gain gain) {
  if (queries.rows() == 0 || docs.rows() == 0) throw Error(ErrorCode::empty_input, "evaluate_paired");
  if (queries.rows() > docs.rows() || queries.cols() != docs.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "evaluate_paired shapes");
  }
  Matrix q = queries;
  Matrix d = docs;
  if (sim == Similarity::cosine) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double n = q.row(i).norm();
      if (!(n > 0.0)) throw Error(ErrorCode::zero_norm, "query row " + std::to_string(i));
      q.row(i) /= n;
    }
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const double n = d.row(i).norm();
      if (!(n > 0.0)) throw Error(ErrorCode::zero_norm, "doc row " + std::to_string(i));
      d.row(i) /= n;
    }
  }
  const Matrix scores = q * d.transpose();

  PairedRetrieval out;
  out.ks.assign(ks.begin(), ks.end());
  const std::size_t kmax = ks.empty() ? 1 : std::max<std::size_t>(1, *std::max_element(ks.begin(), ks.end()));
  out.ndcg.assign(ks.size(), std::vector<double>(static_cast<std::size_t>(q.rows())));
  out.top1_hit.resize(static_cast<std::size_t>(q.rows()));

  std::vector<std::string> ids(static_cast<std::size_t>(d.rows()));
  for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = std::to_string(j);
  std::vector<double> row(static_cast<std::size_t>(d.rows()));
  std::vector<std::string> ranking;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.rows(); ++j) row[static_cast<std::size_t>(j)] = scores(i, j);
    const auto top = top_k_indices(row, kmax);
    ranking.clear();
    for (auto j : top) ranking.push_back(ids[j]);
    const QrelsRow rels{{ids[static_cast<std::size_t>(i)], 1}};
    for (std::size_t kk = 0; kk < ks.size(); ++kk) {
      out.ndcg[kk][static_cast<std::size_t>(i)] = ndcg_at_k(ranking, rels, ks[kk], gain);
    }
    out.top1_hit[static_cast<std::size_t>(i)] = top.front() == static_cast<std::size_t>(i) ? 1 : 0;
  }
  for (const auto& v : out.ndcg) {
    out.mean_ndcg.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
  }
  out.top1 = std::accumulate(out.top1_hit.begin(), out.top1_hit.end(), 0.0) / static_cast<double>(q.rows());
  return out;
}

}  // namespace miner::eval
