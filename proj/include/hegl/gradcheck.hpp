#pragma once

#include <functional>
#include <map>
#include <string>

#include "hegl/tensor.hpp"

namespace hegl {

// Scalar-valued function of one tensor. Called once under an active graph for
// the analytic gradient and 2N times without one for the probes, so the body
// must build its graph from scratch on every call.
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic - central difference| relative to
// max(1e-8, |central difference|). Throws NumericError if f is non-finite at
// any probe point.
double grad_check(const ScalarFn& f, const Tensor& x, double eps);

// Finite-difference sweep over the loss surfaces (cross-entropy, penalized
// Dice in soft-mass mode, cosine similarity, the pairwise-map loss, and the
// composite). Returns the max relative error per loss over `instances`
// random instances each; keys are stable for report printing.
std::map<std::string, double> loss_grad_suite(std::uint64_t seed, int instances);

}  // namespace hegl
