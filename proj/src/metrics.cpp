#include "ood/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ood/errors.hpp"

namespace ood {

double mape(std::span<const double> z_out, std::span<const double> z_in) {
  if (z_out.size() != z_in.size()) {
    throw std::invalid_argument("mape: size mismatch " + std::to_string(z_out.size()) +
                                " vs " + std::to_string(z_in.size()));
  }
  if (z_in.empty()) throw std::invalid_argument("mape: empty vectors");
  double denom = 0.0;
  for (double v : z_in) denom = std::max(denom, std::fabs(v));
  if (denom == 0.0) {
    throw std::invalid_argument("mape: max(|z_in|) is zero, denominator undefined");
  }
  double err = 0.0;
  for (std::size_t i = 0; i < z_in.size(); ++i) err += std::fabs(z_out[i] - z_in[i]);
  err /= static_cast<double>(z_in.size());
  return err / denom;
}

double mape(const Tensor& z_out, const Tensor& z_in) {
  if (z_out.shape() != z_in.shape()) {
    throw std::invalid_argument("mape: shape mismatch " + shape_str(z_out.shape()) + " vs " +
                                shape_str(z_in.shape()));
  }
  return mape(z_out.values(), z_in.values());
}

double auroc(const ScorePair& pair) {
  if (pair.in_scores.empty() || pair.out_scores.empty()) {
    throw std::invalid_argument("auroc: both score populations must be non-empty");
  }
  const double flip = pair.orientation == ScoreOrientation::LargerIsInDist ? 1.0 : -1.0;
  for (double v : pair.in_scores) {
    if (!std::isfinite(v)) throw std::invalid_argument("auroc: non-finite in-score");
  }
  for (double v : pair.out_scores) {
    if (!std::isfinite(v)) throw std::invalid_argument("auroc: non-finite out-score");
  }
  struct Entry {
    double score;
    bool is_in;
  };
  std::vector<Entry> all;
  all.reserve(pair.in_scores.size() + pair.out_scores.size());
  for (double v : pair.in_scores) all.push_back({flip * v, true});
  for (double v : pair.out_scores) all.push_back({flip * v, false});
  std::stable_sort(all.begin(), all.end(),
                   [](const Entry& a, const Entry& b) { return a.score < b.score; });
  // Rank sum with average ranks over tie groups; ranks are half-integers so
  // the sum is exact in double for any realistic n.
  double rank_sum_in = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].is_in) rank_sum_in += avg_rank;
    }
    i = j;
  }
  const double n1 = static_cast<double>(pair.in_scores.size());
  const double n0 = static_cast<double>(pair.out_scores.size());
  const double u = rank_sum_in - n1 * (n1 + 1.0) / 2.0;
  return u / (n1 * n0);
}

Histogram histogram(std::span<const double> values, int bin_count, RangePolicy policy,
                    double lo, double hi) {
  if (bin_count < 1) throw std::invalid_argument("histogram: bin_count must be >= 1");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("histogram: non-finite value");
  }
  if (policy == RangePolicy::DataRange) {
    if (values.empty()) {
      lo = 0.0;
      hi = 1.0;
    } else {
      lo = *std::min_element(values.begin(), values.end());
      hi = *std::max_element(values.begin(), values.end());
      if (lo == hi) hi = lo + 1.0;
    }
  }
  if (!(hi > lo)) throw std::invalid_argument("histogram: empty range");
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bin_count) + 1);
  for (int b = 0; b <= bin_count; ++b) {
    h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bin_count;
  }
  h.counts.assign(static_cast<std::size_t>(bin_count), 0);
  const double width = (hi - lo) / bin_count;
  for (double v : values) {
    auto b = static_cast<std::int64_t>(std::floor((v - lo) / width));
    b = std::clamp<std::int64_t>(b, 0, bin_count - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_scores_csv(std::ostream& os, std::span<const ScoreRow> rows) {
  os << "sample_id,detector_id,side,score\n";
  for (const auto& r : rows) {
    os << r.sample_id << ',' << r.detector_id << ',' << r.side << ','
       << format_double(r.score) << '\n';
  }
}

std::vector<ScoreRow> read_scores_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "sample_id,detector_id,side,score") {
    throw ConfigError("scores csv: missing or unexpected header");
  }
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, det, side, score;
    if (!std::getline(ls, id, ',') || !std::getline(ls, det, ',') ||
        !std::getline(ls, side, ',') || !std::getline(ls, score)) {
      throw ConfigError("scores csv: malformed line " + std::to_string(lineno));
    }
    ScoreRow r;
    r.sample_id = std::stoll(id);
    r.detector_id = det;
    r.side = side;
    r.score = std::stod(score);
    if (side != "in" && side != "out") {
      throw ConfigError("scores csv: bad side '" + side + "' at line " + std::to_string(lineno));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
    os << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ','
       << h.counts[b] << '\n';
  }
}

}  // namespace ood
