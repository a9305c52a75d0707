#pragma once

#include <cmath>
#include <span>

namespace meshdex {

inline constexpr double kBceClip = 1e-7;

/// Mean binary cross-entropy; scores are clipped to [1e-7, 1 - 1e-7].
/// Throws UsageError on length mismatch.
double bce_loss(std::span<const double> scores, std::span<const double> labels);

inline double logistic(double z)
{
    return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace meshdex
