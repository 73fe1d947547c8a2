#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "blindfold/errors.hpp"

namespace blindfold {

namespace detail {

// Regularized lower incomplete gamma P(a, x) by series expansion (x < a + 1).
inline double gamma_p_series(double a, double x) {
    const double gln = std::lgamma(a);
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 1000; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-17) {
            return sum * std::exp(-x + a * std::log(x) - gln);
        }
    }
    throw analysis_error("gamma_p_series: no convergence");
}

// Regularized upper incomplete gamma Q(a, x) by continued fraction (x >= a + 1),
// modified Lentz's method.
inline double gamma_q_cf(double a, double x) {
    constexpr double tiny = 1e-300;
    const double gln = std::lgamma(a);
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 1000; ++i) {
        const double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-17) {
            return std::exp(-x + a * std::log(x) - gln) * h;
        }
    }
    throw analysis_error("gamma_q_cf: no convergence");
}

inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) {
        throw validation_error("gamma_q: domain");
    }
    if (x == 0.0) {
        return 1.0;
    }
    if (std::isinf(x)) {
        return 0.0;
    }
    if (x < a + 1.0) {
        return 1.0 - gamma_p_series(a, x);
    }
    return gamma_q_cf(a, x);
}

// Continued fraction for the regularized incomplete beta function.
inline double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 1000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-17) {
            return h;
        }
    }
    throw analysis_error("beta_cf: no convergence");
}

// Regularized incomplete beta I_x(a, b).
inline double inc_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) {
        throw validation_error("inc_beta: x outside [0,1]");
    }
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_cf(a, b, x) / a;
    }
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

} // namespace detail

// Upper-tail chi-square probability P(X >= x) with df degrees of freedom.
inline double chi2_sf(double x, int df) {
    if (df < 1) {
        throw validation_error("chi2_sf: df must be >= 1");
    }
    if (x < 0.0) {
        throw validation_error("chi2_sf: x must be >= 0");
    }
    return detail::gamma_q(0.5 * df, 0.5 * x);
}

// Upper-tail Student-t probability P(T >= t).
inline double t_sf(double t, int df) {
    if (df < 1) {
        throw validation_error("t_sf: df must be >= 1");
    }
    if (std::isinf(t)) {
        return t > 0.0 ? 0.0 : 1.0;
    }
    const double x = df / (df + t * t);
    const double half_tail = 0.5 * detail::inc_beta(0.5 * df, 0.5, x);
    return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

inline double t_two_sided(double t, int df) {
    if (df < 1) {
        throw validation_error("t_two_sided: df must be >= 1");
    }
    if (t == 0.0) {
        return 1.0;
    }
    if (std::isinf(t)) {
        return 0.0;
    }
    return detail::inc_beta(0.5 * df, 0.5, df / (df + t * t));
}

// Observations by named predictor columns, plus the response vector.
struct DesignMatrix {
    std::vector<std::string> column_names;
    std::vector<std::vector<double>> rows;
    std::vector<double> response;
};

struct RegressionFit {
    std::vector<std::string> column_names;
    std::vector<double> coefficients;
    std::vector<double> standard_errors;
    double rss = 0.0;
    double log_likelihood = 0.0; // Gaussian with MLE variance RSS/n
    int n = 0;
    int n_params = 0;
    double response_sumsq = 0.0; // scale reference for saturated-fit detection
};

// Ordinary least squares via Householder QR. Rank deficiency is reported by
// column name rather than silently fit.
inline RegressionFit ols_fit(const DesignMatrix& design) {
    const int n = static_cast<int>(design.rows.size());
    const int p = static_cast<int>(design.column_names.size());
    if (n == 0 || p == 0) {
        throw validation_error("ols_fit: empty design matrix");
    }
    if (static_cast<int>(design.response.size()) != n) {
        throw validation_error("ols_fit: response length does not match rows");
    }
    if (n <= p) {
        throw validation_error("ols_fit: need more observations than parameters");
    }
    for (const auto& row : design.rows) {
        if (static_cast<int>(row.size()) != p) {
            throw validation_error("ols_fit: ragged design matrix row");
        }
    }

    // Householder QR of the n x p matrix, stored column-major.
    std::vector<std::vector<double>> a(p, std::vector<double>(n));
    for (int j = 0; j < p; ++j) {
        for (int i = 0; i < n; ++i) {
            a[j][i] = design.rows[i][j];
        }
    }
    std::vector<double> qty(design.response);
    std::vector<std::vector<double>> r_upper(p, std::vector<double>(p, 0.0));

    double max_col_norm = 0.0;
    for (int j = 0; j < p; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += a[j][i] * a[j][i];
        max_col_norm = std::max(max_col_norm, std::sqrt(s));
    }
    const double rank_tol = std::max(max_col_norm, 1.0) * n * 1e-13;

    for (int k = 0; k < p; ++k) {
        double norm = 0.0;
        for (int i = k; i < n; ++i) norm += a[k][i] * a[k][i];
        norm = std::sqrt(norm);
        if (norm < rank_tol) {
            throw validation_error("ols_fit: column '" + design.column_names[k] +
                                   "' is collinear with earlier columns");
        }
        if (a[k][k] > 0.0) norm = -norm;
        // Householder vector v, normalized so v[k] = 1.
        std::vector<double> v(n, 0.0);
        v[k] = a[k][k] - norm;
        for (int i = k + 1; i < n; ++i) v[i] = a[k][i];
        const double v_dot = [&] {
            double s = 0.0;
            for (int i = k; i < n; ++i) s += v[i] * v[i];
            return s;
        }();
        if (v_dot > 0.0) {
            for (int j = k; j < p; ++j) {
                double s = 0.0;
                for (int i = k; i < n; ++i) s += v[i] * a[j][i];
                const double f = 2.0 * s / v_dot;
                for (int i = k; i < n; ++i) a[j][i] -= f * v[i];
            }
            double s = 0.0;
            for (int i = k; i < n; ++i) s += v[i] * qty[i];
            const double f = 2.0 * s / v_dot;
            for (int i = k; i < n; ++i) qty[i] -= f * v[i];
        }
        for (int j = k; j < p; ++j) {
            r_upper[k][j] = a[j][k];
        }
    }

    // Back-substitution: R beta = (Q^T y)[0..p).
    std::vector<double> beta(p, 0.0);
    for (int k = p - 1; k >= 0; --k) {
        double s = qty[k];
        for (int j = k + 1; j < p; ++j) s -= r_upper[k][j] * beta[j];
        beta[k] = s / r_upper[k][k];
    }

    RegressionFit fit;
    fit.column_names = design.column_names;
    fit.coefficients = beta;
    fit.n = n;
    fit.n_params = p;

    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
        double pred = 0.0;
        for (int j = 0; j < p; ++j) pred += design.rows[i][j] * beta[j];
        const double e = design.response[i] - pred;
        rss += e * e;
    }
    fit.rss = rss;
    for (double y : design.response) fit.response_sumsq += y * y;

    // (X^T X)^{-1} = R^{-1} R^{-T}; solve R^T Z = I column by column, then R W = Z.
    const double sigma2 = rss / (n - p);
    fit.standard_errors.assign(p, 0.0);
    std::vector<std::vector<double>> rinv(p, std::vector<double>(p, 0.0));
    for (int col = 0; col < p; ++col) {
        // Solve R x = e_col (R upper triangular) -> column of R^{-1}.
        std::vector<double> x(p, 0.0);
        x[col] = 1.0 / r_upper[col][col];
        for (int k = col - 1; k >= 0; --k) {
            double s = 0.0;
            for (int j = k + 1; j <= col; ++j) s -= r_upper[k][j] * x[j];
            x[k] = s / r_upper[k][k];
        }
        for (int k = 0; k < p; ++k) rinv[k][col] = x[k];
    }
    for (int j = 0; j < p; ++j) {
        double diag = 0.0;
        for (int k = j; k < p; ++k) diag += rinv[j][k] * rinv[j][k];
        fit.standard_errors[j] = std::sqrt(diag * sigma2);
    }

    if (rss > 0.0) {
        fit.log_likelihood =
            -0.5 * n * (std::log(2.0 * std::numbers::pi * rss / n) + 1.0);
    } else {
        fit.log_likelihood = std::numeric_limits<double>::infinity();
    }
    return fit;
}

struct LRTestResult {
    double chi2 = 0.0;
    int df = 0;
    double p = 1.0;
};

// Nested-model likelihood ratio test: chi2 = 2 (llf_full - llf_reduced)
// = n ln(RSS_reduced / RSS_full), df = parameter-count difference.
inline LRTestResult lr_test(const RegressionFit& reduced, const RegressionFit& full) {
    if (reduced.n != full.n) {
        throw validation_error("lr_test: fits use different observation counts");
    }
    if (full.n_params <= reduced.n_params) {
        throw validation_error("lr_test: full model must add parameters");
    }
    for (const auto& name : reduced.column_names) {
        bool found = false;
        for (const auto& fname : full.column_names) {
            if (fname == name) {
                found = true;
                break;
            }
        }
        if (!found) {
            throw validation_error("lr_test: models are not nested (reduced column '" +
                                   name + "' missing from full model)");
        }
    }

    LRTestResult out;
    out.df = full.n_params - reduced.n_params;

    // Numerical floor: an RSS at rounding-noise scale is a saturated fit.
    const double floor = 1e-20 * std::max(1.0, reduced.response_sumsq);
    const bool reduced_saturated = reduced.rss <= floor;
    const bool full_saturated = full.rss <= floor;

    if (full.rss > reduced.rss * (1.0 + 1e-12) && !reduced_saturated) {
        throw validation_error("lr_test: full-model RSS exceeds reduced-model RSS");
    }
    if (reduced_saturated) {
        out.chi2 = 0.0; // both models already explain the response to rounding noise
        out.p = 1.0;
        return out;
    }
    if (full_saturated) {
        out.chi2 = std::numeric_limits<double>::infinity();
        out.p = 0.0;
        return out;
    }
    out.chi2 = full.n * std::log(reduced.rss / full.rss);
    if (out.chi2 < 0.0) {
        out.chi2 = 0.0;
    }
    out.p = chi2_sf(out.chi2, out.df);
    return out;
}

struct TTestResult {
    double t = 0.0;
    int df = 0;
    double p = 1.0; // two-sided
    double mean_diff = 0.0;
    double se = 0.0;
    double cohens_d = 0.0;
};

inline TTestResult paired_t(std::span<const double> diffs) {
    const int n = static_cast<int>(diffs.size());
    if (n < 2) {
        throw validation_error("paired_t: need at least two differences");
    }
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= n;
    double ss = 0.0;
    for (double d : diffs) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / (n - 1));
    if (sd == 0.0) {
        throw validation_error("paired_t: zero variance");
    }
    TTestResult out;
    out.df = n - 1;
    out.mean_diff = mean;
    out.se = sd / std::sqrt(static_cast<double>(n));
    out.t = mean / out.se;
    out.p = t_two_sided(out.t, out.df);
    out.cohens_d = mean / sd;
    return out;
}

// Significance stars in the figures' legend convention.
inline std::string significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

} // namespace blindfold
