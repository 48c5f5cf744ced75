#include "vbstream/special.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vbs {

double digamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw std::domain_error("digamma: requires finite x > 0");

    // Shift into the asymptotic regime, then an 8-term series in 1/x^2:
    //   psi(x) ~ ln x - 1/(2x) - sum_k B_{2k} / (2k x^{2k})
    double acc = 0.0;
    while (x < 6.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // B2/2, B4/4, B6/6, B8/8, B10/10, B12/12, B14/14 over growing powers.
    double series = 0.0;
    series = inv2 * (1.0 / 12.0
             - inv2 * (1.0 / 120.0
             - inv2 * (1.0 / 252.0
             - inv2 * (1.0 / 240.0
             - inv2 * (1.0 / 132.0
             - inv2 * (691.0 / 32760.0
             - inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw std::domain_error("log_sum_exp: empty input");
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) {
        // All -inf collapses to -inf; a NaN or +inf propagates as-is.
        return m;
    }
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double log_wishart_normalizer_logdet(double log_det_w, std::size_t dim, double nu) {
    const double d = static_cast<double>(dim);
    if (!(nu > d - 1.0))
        throw std::domain_error("log_wishart_normalizer: requires nu > D - 1");
    double log_gamma_sum = 0.0;
    for (std::size_t i = 1; i <= dim; ++i)
        log_gamma_sum += std::lgamma(0.5 * (nu + 1.0 - static_cast<double>(i)));
    return -0.5 * nu * log_det_w
           - (0.5 * nu * d * std::log(2.0)
              + 0.25 * d * (d - 1.0) * std::log(M_PI)
              + log_gamma_sum);
}

double log_wishart_normalizer(const Matrix& w, double nu) {
    if (w.rows() != w.cols()) throw ShapeError("log_wishart_normalizer: W not square");
    if (!w.all_finite()) throw std::domain_error("log_wishart_normalizer: non-finite entry in W");
    const CholeskyFactor chol(w); // throws NotPositiveDefinite on bad W
    return log_wishart_normalizer_logdet(chol.log_det(), w.rows(), nu);
}

} // namespace vbs
