#pragma once

#include <cstdint>
#include <gmpxx.h>

namespace ood {

// Latent-spot count |F| and thrown-sample count |Omega_out| for the
// coverage-probability question: if |Omega_out| i.i.d. uniform throws land on
// |F| spots, how likely is every spot hit at least once?
struct SpaceSizes {
  mpz_class latent_spots;
  mpz_class thrown_samples;
};

/// Stirling number of the second kind, exact. k > n yields 0; negative
/// arguments are rejected.
mpz_class stirling2(long n, long k);

struct CoverageResult {
  bool exact = false;        // exact rational path was feasible
  mpq_class probability;     // set when exact
  double approx = 0.0;       // always set, clamped to [0,1]
};

/// P(all spots covered) = |F|! * S(|Omega_out|,|F|) / |F|^|Omega_out|.
/// Exact rational (via inclusion-exclusion surjection counting) whenever the
/// operand sizes are desk-feasible, otherwise a Poisson tail approximation.
CoverageResult coverage_probability(const SpaceSizes& sizes);

/// log2(latent-space size / input-space size) for the dimensionality-reduction
/// ratio argument: latent_dims*bits_per_float - input_dims*bits_per_pixel.
std::int64_t space_ratio_log2(std::int64_t input_dims, std::int64_t bits_per_pixel,
                              std::int64_t latent_dims, std::int64_t bits_per_float);

}  // namespace ood
