#include "bsreg/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "bsreg/bspline.hpp"

namespace bsreg {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double max_abs(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

struct Correction {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
};

// d = -H g via the two-loop recursion.
std::vector<double> direction(const std::deque<Correction>& mem, const std::vector<double>& g)
{
    std::vector<double> q = g;
    std::vector<double> alpha(mem.size());
    for (std::size_t i = mem.size(); i-- > 0;) {
        alpha[i] = mem[i].rho * dot(mem[i].s, q);
        for (std::size_t k = 0; k < q.size(); ++k) q[k] -= alpha[i] * mem[i].y[k];
    }
    const auto& last = mem.back();
    const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
    for (double& v : q) v *= gamma;
    for (std::size_t i = 0; i < mem.size(); ++i) {
        const double beta = mem[i].rho * dot(mem[i].y, q);
        for (std::size_t k = 0; k < q.size(); ++k) q[k] += mem[i].s[k] * (alpha[i] - beta);
    }
    for (double& v : q) v = -v;
    return q;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, std::vector<double> x0, const LbfgsSettings& settings)
{
    LbfgsResult res;
    res.x = std::move(x0);
    const std::size_t n = res.x.size();
    std::vector<double> g(n, 0.0);
    res.value = f(res.x, g);
    ++res.evaluations;
    if (!std::isfinite(res.value)) throw NumericalError("initial cost is not finite");
    res.history.push_back(res.value);

    std::deque<Correction> mem;
    std::vector<double> x_new(n), g_new(n);
    int small_steps = 0;

    while (true) {
        if (max_abs(g) < settings.gradient_tolerance) {
            res.stop_reason = "gradient_tolerance";
            break;
        }
        if (res.iterations >= settings.max_iterations) {
            res.stop_reason = "max_iterations";
            break;
        }

        std::vector<double> d;
        double step = 1.0;
        if (!mem.empty()) d = direction(mem, g);
        double slope = d.empty() ? 0.0 : dot(g, d);
        if (d.empty() || !(slope < 0.0)) {
            mem.clear();
            d.resize(n);
            for (std::size_t k = 0; k < n; ++k) d[k] = -g[k];
            slope = -dot(g, g);
            step = std::min(1.0, 1.0 / max_abs(g));
        }

        bool accepted = false;
        double f_new = 0.0;
        for (int bt = 0; bt < settings.max_backtracks; ++bt) {
            for (std::size_t k = 0; k < n; ++k) x_new[k] = res.x[k] + step * d[k];
            f_new = f(x_new, g_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && f_new <= res.value + settings.armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!mem.empty()) {
                // Retry from steepest descent before giving up.
                mem.clear();
                continue;
            }
            res.stop_reason = "line_search_failed";
            break;
        }

        Correction c;
        c.s.resize(n);
        c.y.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            c.s[k] = x_new[k] - res.x[k];
            c.y[k] = g_new[k] - g[k];
        }
        const double sy = dot(c.s, c.y);
        if (sy > 1e-12 * std::sqrt(dot(c.s, c.s) * dot(c.y, c.y))) {
            c.rho = 1.0 / sy;
            mem.push_back(std::move(c));
            if (static_cast<int>(mem.size()) > settings.history_size) mem.pop_front();
        }

        const double rel = (res.value - f_new) / std::max(std::abs(res.value), 1e-300);
        res.x.swap(x_new);
        g.swap(g_new);
        res.value = f_new;
        res.history.push_back(f_new);
        ++res.iterations;

        small_steps = rel < settings.step_tolerance ? small_steps + 1 : 0;
        if (small_steps >= 3) {
            res.stop_reason = "step_tolerance";
            break;
        }
    }
    return res;
}

}  // namespace bsreg
