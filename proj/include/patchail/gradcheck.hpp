#pragma once

#include "patchail/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace patchail {

/// Builds a scalar from the given leaves (which all require gradients).
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over all leaves,
/// with central differences of step h. 0 when both gradients vanish.
double gradient_relative_error(const ScalarFn& f, const std::vector<Tensor>& leaves, double h = 1e-5);

/// Central-difference gradient of f with respect to every leaf, concatenated.
Array numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& leaves, double h = 1e-5);

struct GradcheckResult {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return error <= tolerance; }
};

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kPenaltyTolerance = 1e-4;

/// Every differentiable op, the assembled discriminator, and the
/// gradient-penalty input gradient, on random inputs in [-1, 1].
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace patchail
