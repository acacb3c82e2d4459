#include "crackseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace crackseg {

void Adam::step(const nn::ParamList& params, double lr) {
    std::size_t slots = 0;
    for (const nn::Param* p : params) slots += p->trainable();
    if (state_.m.empty()) {
        for (const nn::Param* p : params) {
            if (!p->trainable()) continue;
            state_.m.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
            state_.v.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
        }
    }
    if (state_.m.size() != slots) throw std::logic_error("adam: parameter list changed between steps");

    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    std::size_t slot = 0;
    for (nn::Param* p : params) {
        if (!p->trainable()) continue;
        Tensor& m = state_.m[slot];
        Tensor& v = state_.v[slot];
        ++slot;
        if (!m.same_shape(p->value)) throw std::logic_error("adam: moment shape mismatch for " + p->name);
        const double decay = p->decays() ? 1.0 - lr * config_.weight_decay : 1.0;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p->value[i] = p->value[i] * decay - lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

}  // namespace crackseg
