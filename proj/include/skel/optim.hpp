#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>

namespace skel::optim {

struct Options {
    int max_iterations = 300;
    double initial_step = 0.1;
    double backtrack_factor = 0.5;
    int max_backtracks = 20;
    double step_growth = 2.0;
    double gradient_tolerance = 1e-12;
};

struct Result {
    double initial_value = 0.0;
    double final_value = 0.0;
    int iterations = 0;
    bool stalled = false;  // line search could not find a non-increasing step
};

// Gradient descent with a backtracking line search: a trial step is halved
// until the objective does not increase, up to max_backtracks halvings, so
// accepted iterates form a non-increasing objective sequence. The trial step
// uses the Barzilai-Borwein spectral estimate when it is well defined, which
// removes most of the zigzagging of fixed-step descent.
//
// Objective signature: double f(const VectorXd& x, VectorXd* grad).
// grad is null during line-search probes; when non-null it must be filled.
template <class Objective>
Result minimize(Eigen::VectorXd& x, Objective&& objective, const Options& opt) {
    Eigen::VectorXd grad(x.size());
    double value = objective(x, &grad);

    Result result;
    result.initial_value = value;
    result.final_value = value;

    Eigen::VectorXd prev_x, prev_grad;
    double step = opt.initial_step;
    int plateau = 0;
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        const double gnorm = grad.norm();
        if (!(gnorm > opt.gradient_tolerance)) break;

        double trial = step;
        if (prev_x.size() == x.size()) {
            const Eigen::VectorXd dx = x - prev_x;
            const Eigen::VectorXd dg = grad - prev_grad;
            const double dgg = dg.squaredNorm();
            const double dxg = dx.dot(dg);
            if (dxg > 0.0 && dgg > 0.0) {
                const double bb = dxg / dgg;
                if (std::isfinite(bb) && bb > 0.0) trial = bb;
            }
        }

        bool accepted = false;
        Eigen::VectorXd candidate;
        double candidate_value = value;
        for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
            candidate = x - trial * grad;
            candidate_value = objective(candidate, nullptr);
            if (std::isfinite(candidate_value) && candidate_value <= value) {
                accepted = true;
                break;
            }
            trial *= opt.backtrack_factor;
        }
        if (!accepted) {
            result.stalled = true;
            break;
        }

        plateau = candidate_value == value ? plateau + 1 : 0;
        prev_x.swap(x);
        prev_grad = grad;
        x.swap(candidate);
        value = objective(x, &grad);
        step = trial * opt.step_growth;
        result.iterations = iter + 1;
        if (plateau >= 3) break;
    }
    result.final_value = value;
    return result;
}

}  // namespace skel::optim
