#pragma once

#include <cmath>
#include <functional>

#include "astromae/ops.hpp"

namespace astromae {

// Central-difference check of reverse-mode gradients, 64-bit only.
// Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
// `f` must evaluate the scalar objective from x->data; the analytic pass runs
// under a fresh tape, the numeric probes run with no tape active.
inline double grad_check(const std::function<TensorPtr<double>()>& f, const TensorPtr<double>& x,
                         double h = 1e-5) {
    x->requires_grad = true;
    x->grad.clear();

    Tape<double> tape;
    {
        Tape<double>::Scope scope(tape);
        auto loss = f();
        if (!std::isfinite(loss->data[0])) {
            throw NumericError("grad_check: objective is not finite");
        }
        tape.backward(loss);
    }
    std::vector<double> analytic = x->grad.empty() ? std::vector<double>(x->data.size(), 0.0)
                                                   : x->grad;

    double max_err = 0.0;
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        const double saved = x->data[i];
        x->data[i] = saved + h;
        const double fp = f()->data[0];
        x->data[i] = saved - h;
        const double fm = f()->data[0];
        x->data[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("grad_check: perturbed objective is not finite");
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

// Scalar probe head: sum(w @ y) elementwise with a fixed random weighting, so
// every output coordinate influences the objective with a distinct scale.
inline TensorPtr<double> weighted_sum(const TensorPtr<double>& y, const TensorPtr<double>& w) {
    return sum(mul(y, w));
}

}  // namespace astromae
