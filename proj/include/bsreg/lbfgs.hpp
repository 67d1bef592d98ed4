// Limited-memory quasi-Newton minimizer (two-loop recursion, Armijo
// backtracking).
#pragma once

#include <functional>
#include <string>
#include <vector>

namespace bsreg {

struct LbfgsSettings {
    int history_size = 10;
    int max_iterations = 100;
    /// Stop when max |g_i| falls below this.
    double gradient_tolerance = 1e-8;
    /// Stop when the relative cost decrease stays below this for 3
    /// consecutive iterations.
    double step_tolerance = 1e-7;
    int max_backtracks = 40;
    double armijo = 1e-4;
};

struct LbfgsResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    std::string stop_reason;
    /// Cost after each accepted step, starting with the initial cost.
    std::vector<double> history;
};

/// Returns f(x) and writes the gradient into g (already sized like x).
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>& g)>;

LbfgsResult minimize_lbfgs(const Objective& f, std::vector<double> x0, const LbfgsSettings& settings);

}  // namespace bsreg
