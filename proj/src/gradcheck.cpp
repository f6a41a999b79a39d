#include "scen/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace scen {

namespace {

constexpr ParamId kPointId = 0;

double eval(const ScalarGraphFn& f, const Tensor& x) {
    Graph g;
    const Var loss = f(g, g.frozen(x));
    return g.value(loss).item();
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarGraphFn& f, const Tensor& point, double eps) {
    if (!(eps >= 1e-5 && eps <= 1e-2)) throw Error("finite_diff_check: eps must lie in [1e-5, 1e-2]");

    Graph g;
    const Var loss = f(g, g.parameter(kPointId, point));
    const GradMap grads = g.backward(loss, "finite_diff_check");
    const Tensor analytic = grads.count(kPointId) != 0 ? grads.at(kPointId) : Tensor(point.rows, point.cols);

    GradCheckResult res;
    Tensor probe = point;
    // f evaluated at x_i + k*eps; the realised float offset is returned too
    auto at = [&](std::size_t i, float orig, int k, double& realised) {
        probe.data[i] = static_cast<float>(orig + k * eps);
        realised = static_cast<double>(probe.data[i]) - orig;
        return eval(f, probe);
    };
    for (std::size_t i = 0; i < point.size(); ++i) {
        const float orig = probe.data[i];
        double h1p = 0, h1m = 0, h2p = 0, h2m = 0;
        const double f1p = at(i, orig, 1, h1p);
        const double f1m = at(i, orig, -1, h1m);
        const double f2p = at(i, orig, 2, h2p);
        const double f2m = at(i, orig, -2, h2m);
        probe.data[i] = orig;
        // fourth-order central stencil, scaled by the realised float steps
        const double d1 = (f1p - f1m) / (h1p - h1m);
        const double d2 = (f2p - f2m) / (h2p - h2m);
        const double numeric = (4.0 * d1 - d2) / 3.0;
        const double a = analytic.data[i];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst_index = i;
        }
    }
    return res;
}

}  // namespace scen
