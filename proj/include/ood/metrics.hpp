#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ood/tensor.hpp"

namespace ood {

// Whether a larger score argues for the in-distribution side.
enum class ScoreOrientation { LargerIsInDist, LargerIsOOD };

struct ScorePair {
  std::vector<double> in_scores;
  std::vector<double> out_scores;
  ScoreOrientation orientation = ScoreOrientation::LargerIsInDist;
};

/// mean(|z_out - z_in|) / max(|z_in|), returned as a fraction (0.001 = 0.1%).
double mape(const Tensor& z_out, const Tensor& z_in);
double mape(std::span<const double> z_out, std::span<const double> z_in);

/// Probability that a random in-distribution sample outranks a random OOD
/// sample, after orienting scores so larger means in-distribution. Ties get
/// half credit (Mann-Whitney). Rank-sum implementation, O(n log n).
double auroc(const ScorePair& pair);

struct Histogram {
  std::vector<double> edges;   // bin_count + 1 edges
  std::vector<std::int64_t> counts;
};

enum class RangePolicy { DataRange, Explicit };

/// Equal-width bins. With Explicit range, values outside [lo, hi] land in the
/// first/last bin so counts always sum to len(values).
Histogram histogram(std::span<const double> values, int bin_count,
                    RangePolicy policy = RangePolicy::DataRange, double lo = 0.0,
                    double hi = 1.0);

// CSV row schema: sample_id,detector_id,side,score
struct ScoreRow {
  std::int64_t sample_id;
  std::string detector_id;
  std::string side;  // "in" or "out"
  double score;
};

void write_scores_csv(std::ostream& os, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(std::istream& is);

// CSV row schema: bin_lo,bin_hi,count
void write_histogram_csv(std::ostream& os, const Histogram& h);

std::string format_double(double v);  // shortest round-trip decimal form

}  // namespace ood
