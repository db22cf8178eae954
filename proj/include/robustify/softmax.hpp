#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "robustify/error.hpp"

namespace robustify {

inline void require_finite(std::span<const double> logits)
{
    for (double v : logits)
        if (!std::isfinite(v))
            throw SpecError("logits must be finite");
}

inline std::size_t argmax(std::span<const double> logits)
{
    if (logits.empty())
        throw SpecError("argmax of an empty logit vector");
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Softmax confidence of class `c` in percent, `100 e^{y_c} / sum_i e^{y_i}`.
/// Exponentials are shifted by the maximum logit.
inline double confidence(std::span<const double> logits, std::size_t c)
{
    if (c >= logits.size())
        throw SpecError("class index " + std::to_string(c) + " out of range for " +
                        std::to_string(logits.size()) + " logits");
    require_finite(logits);
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits)
        denom += std::exp(v - top);
    return 100.0 * std::exp(logits[c] - top) / denom;
}

inline std::vector<double> confidences(std::span<const double> logits)
{
    require_finite(logits);
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - top);
        denom += out[i];
    }
    for (double& v : out)
        v = 100.0 * v / denom;
    return out;
}

} // namespace robustify
