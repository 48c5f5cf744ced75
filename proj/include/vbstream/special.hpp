#pragma once

#include <span>

#include "vbstream/matrix.hpp"

namespace vbs {

// psi(x) for x > 0, absolute error <= 1e-10 on [1e-3, 1e6].
// Throws std::domain_error on non-positive or non-finite input.
double digamma(double x);

// log sum_i exp(v_i), overflow-free. Throws std::domain_error on empty input.
double log_sum_exp(std::span<const double> v);

// log B(W, nu) for the Wishart normalizer
//   B(W, nu) = |W|^{-nu/2} ( 2^{nu D/2} pi^{D(D-1)/4} prod_i Gamma((nu+1-i)/2) )^{-1}
// Requires nu > D - 1 and W positive definite.
double log_wishart_normalizer(const Matrix& w, double nu);

// Same quantity when log|W| is already known (avoids refactoring a matrix
// whose Cholesky factor is at hand).
double log_wishart_normalizer_logdet(double log_det_w, std::size_t dim, double nu);

} // namespace vbs
