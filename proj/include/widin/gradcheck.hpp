#pragma once

#include <functional>
#include <vector>

#include "widin/graph.hpp"

namespace widin {

// Builds a scalar-valued computation from parameter leaves. Called many
// times, so it must be deterministic in its inputs.
using ScalarFn = std::function<int(Graph&, const std::vector<int>& param_nodes)>;

namespace detail {
inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& params) {
    Graph g;
    std::vector<int> ids;
    ids.reserve(params.size());
    for (const Tensor& p : params) ids.push_back(g.leaf(p, /*requires_grad=*/false));
    const int loss = f(g, ids);
    const double out = g.value(loss).at(0, 0);
    if (!std::isfinite(out)) throw NumericError("gradcheck: non-finite intermediate");
    return out;
}
}  // namespace detail

// Central finite differences against reverse-mode gradients. Returns the max
// over all parameter components of
//   |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
inline double gradcheck(const ScalarFn& f, std::vector<Tensor> params, double eps = 1e-5) {
    if (!(eps >= 1e-7 && eps <= 1e-4))
        throw Error("gradcheck: eps must be in [1e-7, 1e-4]");

    // Reverse-mode gradients.
    std::vector<Tensor> ad;
    {
        Graph g;
        std::vector<int> ids;
        for (const Tensor& p : params) ids.push_back(g.leaf(p, /*requires_grad=*/true));
        const int loss = f(g, ids);
        g.backward(loss);
        for (int id : ids) {
            if (!g.grad(id).all_finite())
                throw NumericError("gradcheck: non-finite gradient");
            ad.push_back(g.grad(id));
        }
    }

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t k = 0; k < params[pi].size(); ++k) {
            const double orig = params[pi].data[k];
            params[pi].data[k] = orig + eps;
            const double up = detail::eval_scalar(f, params);
            params[pi].data[k] = orig - eps;
            const double down = detail::eval_scalar(f, params);
            params[pi].data[k] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double gad = ad[pi].data[k];
            const double rel = std::abs(gad - fd) / std::max(1e-12, std::abs(gad) + std::abs(fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace widin
