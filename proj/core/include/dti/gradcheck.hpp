#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dti/tensor.hpp"

namespace dti {

// Central finite-difference gradient verification, 64-bit only. `eval`
// recomputes the scalar loss from the current contents of the checked
// tensors; `analytic` are the reverse-mode gradients under test.
//
// Per element: relative error = |a - n| / max(|a|, |n|, 1e-3). The floor
// keeps zero-gradient elements (masked relu units, out-of-window pixels)
// from amplifying finite-difference round-off into spurious failures.

struct GradCheckInput {
    std::string name;
    TensorD* tensor;
    const TensorD* analytic;
    double epsilon = 0.0; // per-input override; 0 means use the call's epsilon
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_input;
    std::size_t worst_index = 0;
    bool pass = false;
    double tolerance = 0.0;
};

GradCheckReport grad_check(const std::function<double()>& eval,
                           const std::vector<GradCheckInput>& inputs, double epsilon = 1e-4,
                           double tolerance = 1e-6);

// One line per operator: the full suite run by tests and the CLI. Each
// operator is checked on `instances` random instances with kink exclusion
// (relu zeros, pooling ties, interpolation-cell edges).
struct OpGradReport {
    std::string op;
    int instances = 0;
    double max_rel_error = 0.0;
    bool pass = false;
};

std::vector<OpGradReport> gradient_suite(int instances = 10, double tolerance = 1e-6,
                                         std::uint64_t seed = 7);

} // namespace dti
