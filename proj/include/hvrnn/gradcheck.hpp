#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hvrnn/graph.hpp"

namespace hvrnn::diff {

// Central-difference gradient oracle, evaluated in 64-bit. Independent of
// the tape: only calls f.
inline Tensor<double> finite_difference_gradient(
    const std::function<double(const Tensor<double>&)>& f,
    const Tensor<double>& x, double eps) {
    if (!(eps > 0)) throw ContractViolation("finite_difference_gradient: eps must be > 0");
    Tensor<double> grad(x.shape());
    Tensor<double> probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + eps;
        double fp = f(probe);
        probe[i] = x[i] - eps;
        double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_difference_gradient: function returned a non-finite value");
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

inline double rel_err(double a, double b) {
    double denom = std::max(std::abs(a), std::max(std::abs(b), 1e-8));
    return std::abs(a - b) / denom;
}

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Entry> per_parameter;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Compares tape gradients of a deterministic scalar fragment against central
// finite differences, coordinate by coordinate, in 64-bit. A coordinate
// passes if any step size in eps_list agrees within tolerance: the small
// step rescues coordinates that a large step pushes across a ReLU/max kink,
// while the large steps rescue flat or near-flat directions (e.g. a bias
// that group normalization cancels exactly) whose quotient at a small step
// is round-off noise.
//
// corrupt is a test-only hook applied to the accumulated gradients before
// comparison.
inline GradCheckReport grad_check(
    ParamStore<double>& params,
    const std::function<Var<double>(Graph<double>&)>& fragment,
    double tolerance,
    std::vector<double> eps_list = {1e-3, 1e-2, 1e-1, 1e-5},
    const std::function<void(ParamStore<double>&)>& corrupt = nullptr) {
    params.zero_grads();
    {
        Graph<double> g;
        Var<double> loss = fragment(g);
        g.backward(loss);
    }
    if (corrupt) corrupt(params);

    auto eval = [&]() {
        Graph<double> g;
        Var<double> loss = fragment(g);
        double v = loss.val()[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: fragment returned non-finite loss");
        return v;
    };

    GradCheckReport report;
    report.tolerance = tolerance;
    for (Parameter<double>* p : params.all()) {
        GradCheckReport::Entry entry;
        entry.name = p->name;
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            double orig = p->value[i];
            double analytic = p->grad[i];
            auto central = [&](double eps) {
                p->value[i] = orig + eps;
                double fp = eval();
                p->value[i] = orig - eps;
                double fm = eval();
                p->value[i] = orig;
                return (fp - fm) / (2.0 * eps);
            };
            double coord_err = std::numeric_limits<double>::infinity();
            for (double eps : eps_list) {
                double fd1 = central(eps);
                coord_err = std::min(coord_err, rel_err(analytic, fd1));
                if (coord_err <= tolerance) break;
                // Richardson extrapolation kills the O(eps^2) truncation term,
                // which dominates on high-curvature coordinates.
                double fd2 = central(eps / 2.0);
                coord_err = std::min(coord_err, rel_err(analytic, fd2));
                coord_err = std::min(coord_err, rel_err(analytic, (4.0 * fd2 - fd1) / 3.0));
                if (coord_err <= tolerance) break;
            }
            entry.max_rel_err = std::max(entry.max_rel_err, coord_err);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.per_parameter.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace hvrnn::diff
