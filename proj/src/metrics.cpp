#include "flood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flood {

ConfusionMatrix::ConfusionMatrix(int classes) : k_(classes) {
  if (classes < 0) throw InvalidArgument("confusion matrix needs a non-negative class count");
  counts_.assign(static_cast<std::size_t>(classes * classes), 0);
}

ConfusionMatrix::ConfusionMatrix(int classes, std::vector<std::int64_t> counts) : k_(classes), counts_(std::move(counts)) {
  if (classes < 0 || counts_.size() != static_cast<std::size_t>(classes * classes)) {
    throw InvalidShape("confusion matrix needs K*K counts");
  }
  for (auto c : counts_)
    if (c < 0) throw InvalidArgument("confusion matrix counts must be non-negative");
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t n) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) {
    throw InvalidArgument("class index outside the confusion matrix");
  }
  counts_[static_cast<std::size_t>(truth * k_ + predicted)] += n;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (int i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int predicted) const {
  std::int64_t s = 0;
  for (int i = 0; i < k_; ++i) s += at(i, predicted);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw InvalidShape("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

double mcc(const ConfusionMatrix& cm) {
  const double s = static_cast<double>(cm.total());
  const double c = static_cast<double>(cm.trace());
  double pt = 0, pp = 0, tt = 0;
  for (int k = 0; k < cm.classes(); ++k) {
    const double t = static_cast<double>(cm.row_sum(k)), p = static_cast<double>(cm.col_sum(k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  const double denom = (s * s - pp) * (s * s - tt);
  if (!(denom > 0)) return 0.0;
  return (c * s - pt) / std::sqrt(denom);
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.classes() < 1 || cm.total() <= 0) throw InvalidArgument("compute_metrics: confusion matrix is empty");
  MetricsReport r;
  auto ratio = [&r](double num, double den) {
    if (den == 0) {
      ++r.zero_divisions;
      return 0.0;
    }
    return num / den;
  };
  const int k = cm.classes();
  for (int c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    ClassMetrics m;
    m.support = cm.row_sum(c);
    m.precision = ratio(tp, static_cast<double>(cm.col_sum(c)));
    m.recall = ratio(tp, static_cast<double>(m.support));
    m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
    r.per_class.push_back(m);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
  r.mcc = mcc(cm);
  return r;
}

int argmax(std::span<const float> row) {
  if (row.empty()) throw InvalidArgument("argmax of an empty row");
  int best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

ConfusionMatrix confusion_from_probabilities(const Tensor<float>& probabilities, std::span<const int> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != static_cast<Index>(labels.size())) {
    throw InvalidShape("probabilities must be [N,K] with N labels");
  }
  const auto k = probabilities.dim(1);
  ConfusionMatrix cm(static_cast<int>(k));
  auto p = probabilities.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cm.add(labels[i], argmax(p.subspan(i * static_cast<std::size_t>(k), static_cast<std::size_t>(k))));
  }
  return cm;
}

namespace {

void check_members(const std::vector<Tensor<float>>& members) {
  if (members.empty()) throw InvalidArgument("ensemble needs at least one member");
  for (const auto& m : members) {
    if (m.rank() != 2 || m.shape() != members.front().shape()) {
      throw InvalidShape("ensemble members must share one [N,K] shape, got " + shape_str(m.shape()) + " and " +
                         shape_str(members.front().shape()));
    }
  }
}

}  // namespace

Tensor<float> ensemble_soft_vote(const std::vector<Tensor<float>>& members) {
  check_members(members);
  Tensor<float> out(members.front().shape());
  auto o = out.data();
  std::vector<double> vals(members.size());
  for (std::size_t i = 0; i < o.size(); ++i) {
    for (std::size_t m = 0; m < members.size(); ++m) vals[m] = members[m].data()[i];
    std::sort(vals.begin(), vals.end());
    double s = 0;
    for (double v : vals) s += v;
    o[i] = static_cast<float>(s / static_cast<double>(members.size()));
  }
  return out;
}

Tensor<float> ensemble_hard_vote(const std::vector<Tensor<float>>& members) {
  check_members(members);
  const Index n = members.front().dim(0), k = members.front().dim(1);
  Tensor<float> out(members.front().shape(), 0.0f);
  std::vector<float> votes(static_cast<std::size_t>(k));
  for (Index i = 0; i < n; ++i) {
    std::fill(votes.begin(), votes.end(), 0.0f);
    for (const auto& m : members) {
      ++votes[static_cast<std::size_t>(
          argmax(m.data().subspan(static_cast<std::size_t>(i * k), static_cast<std::size_t>(k))))];
    }
    out[i * k + argmax(votes)] = 1.0f;
  }
  return out;
}

}  // namespace flood
