#include "meshdex/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "meshdex/error.hpp"

namespace meshdex {

double bce_loss(std::span<const double> scores, std::span<const double> labels)
{
    if (scores.size() != labels.size()) {
        throw UsageError(fmt::format("bce_loss: {} scores vs {} labels", scores.size(), labels.size()));
    }
    if (scores.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = std::clamp(scores[i], kBceClip, 1.0 - kBceClip);
        const double y = labels[i];
        total -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
    }
    return total / static_cast<double>(scores.size());
}

}  // namespace meshdex
