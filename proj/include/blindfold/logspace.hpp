#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <span>

namespace blindfold {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum_i exp(vals[i])), shifted by the max to avoid overflow.
inline double log_sum_exp(std::span<const double> vals) {
    if (vals.empty()) {
        return kNegInf;
    }
    const double m = *std::max_element(vals.begin(), vals.end());
    if (!std::isfinite(m)) {
        return m;
    }
    double sum = 0.0;
    for (double v : vals) {
        sum += std::exp(v - m);
    }
    return m + std::log(sum);
}

inline double log_sum_exp(std::initializer_list<double> vals) {
    return log_sum_exp(std::span<const double>(vals.begin(), vals.size()));
}

// p(first) under a binary softmax of two logits, computed without overflow.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double binary_softmax_first(double logit_first, double logit_second) {
    return sigmoid(logit_first - logit_second);
}

// log(p / (1 - p)); caller is responsible for keeping p inside (0, 1).
inline double log_odds(double p) {
    return std::log(p) - std::log1p(-p);
}

} // namespace blindfold
