#ifndef CXR_OPTIMIZER_HPP
#define CXR_OPTIMIZER_HPP

// RMSprop with the common fixed decay of 0.9. Frozen tensors are skipped
// entirely: neither their values nor their accumulators move.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cxr/net.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

inline constexpr double rmsprop_decay = 0.9;
inline constexpr double rmsprop_epsilon = 1e-7;

template <typename T>
void rmsprop_step(model_state<T>& m, const std::vector<tensor<T>>& grads, double learning_rate) {
    if (grads.size() != m.params.size())
        throw model_error("optimizer: gradient count does not match parameter count");
    for (std::size_t t = 0; t < m.params.size(); ++t) {
        if (m.frozen[t]) continue;
        if (!grads[t].same_shape(m.params[t]))
            throw model_error("optimizer: gradient shape mismatch for " + m.names[t]);
        tensor<T>& p = m.params[t];
        tensor<T>& s = m.rms_acc[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = static_cast<double>(grads[t][i]);
            const double acc = rmsprop_decay * static_cast<double>(s[i]) + (1.0 - rmsprop_decay) * g * g;
            s[i] = static_cast<T>(acc);
            p[i] = static_cast<T>(static_cast<double>(p[i]) -
                                  learning_rate * g / (std::sqrt(acc) + rmsprop_epsilon));
        }
    }
}

}  // namespace cxr

#endif
