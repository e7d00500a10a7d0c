#include "ood/combinatorics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ood {

mpz_class stirling2(long n, long k) {
  if (n < 0 || k < 0) {
    throw std::invalid_argument("stirling2: negative arguments rejected");
  }
  if (k > n) return 0;
  if (n == 0) return 1;  // k == 0 here
  if (k == 0) return 0;
  // S(i,j) = j*S(i-1,j) + S(i-1,j-1), rolling row.
  std::vector<mpz_class> row(static_cast<std::size_t>(k) + 1, 0);
  row[0] = 1;  // S(0,0)
  for (long i = 1; i <= n; ++i) {
    for (long j = std::min<long>(i, k); j >= 1; --j) {
      row[static_cast<std::size_t>(j)] =
          j * row[static_cast<std::size_t>(j)] + row[static_cast<std::size_t>(j - 1)];
    }
    row[0] = 0;  // S(i,0) = 0 for i >= 1
  }
  return row[static_cast<std::size_t>(k)];
}

namespace {

// Upper bound on the bit size of the exact surjection-count computation.
constexpr unsigned long kMaxExactBits = 1ul << 27;

double mpz_to_double(const mpz_class& v) {
  // mpz_get_d saturates to +-inf on overflow, which is what we want here.
  return mpz_get_d(v.get_mpz_t());
}

}  // namespace

CoverageResult coverage_probability(const SpaceSizes& sizes) {
  const mpz_class& k = sizes.latent_spots;
  const mpz_class& n = sizes.thrown_samples;
  if (k < 1 || n < 1) {
    throw std::invalid_argument("coverage_probability: sizes must be >= 1");
  }
  CoverageResult res;
  if (n < k) {  // pigeonhole: cannot cover
    res.exact = true;
    res.probability = 0;
    res.approx = 0.0;
    return res;
  }
  if (k == 1) {
    res.exact = true;
    res.probability = 1;
    res.approx = 1.0;
    return res;
  }
  const bool fits = k.fits_ulong_p() && n.fits_ulong_p();
  if (fits) {
    const unsigned long ku = k.get_ui();
    const unsigned long nu = n.get_ui();
    const double bits_per_power = static_cast<double>(nu) * std::log2(static_cast<double>(ku));
    if (bits_per_power * static_cast<double>(ku + 1) <= static_cast<double>(kMaxExactBits)) {
      // Number of onto mappings of n throws to k spots, by inclusion-exclusion:
      // sum_j (-1)^j C(k,j) (k-j)^n, which equals k! * S(n,k).
      mpz_class onto = 0;
      mpz_class binom;
      for (unsigned long j = 0; j <= ku; ++j) {
        mpz_bin_uiui(binom.get_mpz_t(), ku, j);
        mpz_class pw;
        mpz_ui_pow_ui(pw.get_mpz_t(), ku - j, nu);
        if (j % 2 == 0) {
          onto += binom * pw;
        } else {
          onto -= binom * pw;
        }
      }
      mpz_class total;
      mpz_ui_pow_ui(total.get_mpz_t(), ku, nu);
      res.exact = true;
      res.probability = mpq_class(onto, total);
      res.probability.canonicalize();
      res.approx = mpq_get_d(res.probability.get_mpq_t());
      return res;
    }
  }
  // Poisson tail approximation: the miss count of a fixed spot is
  // Bernoulli(q), q = (1-1/k)^n; uncovered-spot count ~ Poisson(k*q) in the
  // sparse limit, so P(cover) ~ exp(-k*(1-1/k)^n) = exp(-exp(t)),
  // t = ln k + n*ln(1-1/k).
  const double ln_k = [&] {
    signed long exp2;
    const double m = mpz_get_d_2exp(&exp2, k.get_mpz_t());
    return std::log(m) + static_cast<double>(exp2) * std::log(2.0);
  }();
  // n/k as a double; saturates to inf for astronomical ratios.
  mpq_class ratio(n, k);
  ratio.canonicalize();
  const double n_over_k = mpq_get_d(ratio.get_mpq_t());
  double ln_one_minus = 0.0;
  if (k.fits_ulong_p()) {
    ln_one_minus = std::log1p(-1.0 / static_cast<double>(k.get_ui()));
  } else {
    // 1/k underflows double; ln(1-1/k) ~ -1/k and n*(-1/k) = -n/k.
    ln_one_minus = 0.0;
  }
  double t;
  if (ln_one_minus != 0.0 && std::isfinite(n_over_k)) {
    t = ln_k + mpz_to_double(n) * ln_one_minus;
  } else {
    t = ln_k - n_over_k;
  }
  res.exact = false;
  const double lambda = std::exp(t);
  res.approx = std::exp(-lambda);
  if (res.approx < 0.0) res.approx = 0.0;
  if (res.approx > 1.0) res.approx = 1.0;
  return res;
}

std::int64_t space_ratio_log2(std::int64_t input_dims, std::int64_t bits_per_pixel,
                              std::int64_t latent_dims, std::int64_t bits_per_float) {
  if (input_dims <= 0 || bits_per_pixel <= 0 || latent_dims <= 0 || bits_per_float <= 0) {
    throw std::invalid_argument("space_ratio_log2: arguments must be positive");
  }
  const __int128 v = static_cast<__int128>(latent_dims) * bits_per_float -
                     static_cast<__int128>(input_dims) * bits_per_pixel;
  if (v > INT64_MAX || v < INT64_MIN) {
    throw std::invalid_argument("space_ratio_log2: result overflows 64 bits");
  }
  return static_cast<std::int64_t>(v);
}

}  // namespace ood
