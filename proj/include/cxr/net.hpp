#ifndef CXR_NET_HPP
#define CXR_NET_HPP

// Self-contained convolutional classifier: VGG-style blocks of 3x3/stride-1/
// pad-1 convolutions with ReLU, a 2x2 max-pool after each block, then global
// average pooling, a hidden fully-connected layer, dropout, and a 3-unit
// output layer with softmax. Forward, backward, and the loss are all here;
// the optimizer lives in optimizer.hpp.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "cxr/augment.hpp"
#include "cxr/parallel.hpp"
#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

class model_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct conv_block_spec {
    int out_channels = 0;
    int layers = 1;  // convolutions before the block's max-pool

    bool operator==(const conv_block_spec&) const = default;
};

struct architecture {
    int in_channels = 1;
    std::vector<conv_block_spec> blocks;

    int conv_layer_count() const {
        int n = 0;
        for (const auto& b : blocks) n += b.layers;
        return n;
    }

    bool operator==(const architecture&) const = default;

    // Desk-scale default: four single-conv blocks.
    static architecture desk() {
        return {1, {{8, 1}, {16, 1}, {32, 1}, {64, 1}}};
    }

    // The 13-conv backbone layout; callers supply pre-trained weights.
    static architecture vgg16() {
        return {3, {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}}};
    }
};

struct hyper_params {
    int input_size = 220;
    double dropout_p = 0.1;
    int fc_units = 416;
    double learning_rate = 1e-4;
    int batch_size = 8;
    int max_epochs = 100;
    int patience = 7;
    int freeze_depth = 0;
    augmentation_policy policy = preset_policy(augmentation_preset::conv_mixup);
};

template <typename T = float>
struct model_state {
    architecture arch;
    int fc_units = 0;
    double dropout_p = 0.0;
    int freeze_depth = 0;
    std::vector<tensor<T>> params;
    std::vector<std::string> names;
    std::vector<char> frozen;       // per parameter tensor
    std::vector<tensor<T>> rms_acc; // optimizer accumulator per parameter

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    int conv_layer_count() const { return arch.conv_layer_count(); }
};

namespace detail {

// Flattened conv layer list: (in_channels, out_channels) per conv.
inline std::vector<std::pair<int, int>> conv_layer_channels(const architecture& arch) {
    std::vector<std::pair<int, int>> out;
    int in_c = arch.in_channels;
    for (const auto& b : arch.blocks) {
        for (int l = 0; l < b.layers; ++l) {
            out.emplace_back(in_c, b.out_channels);
            in_c = b.out_channels;
        }
    }
    return out;
}

}  // namespace detail

// Parameters get fan-in-scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in));
// biases start at zero. The frozen mask covers the first freeze_depth conv
// layers (weight and bias).
template <typename T = float>
model_state<T> build_model(const hyper_params& hp, const architecture& arch, std::uint64_t seed) {
    if (arch.blocks.empty()) throw model_error("architecture has no conv blocks");
    for (const auto& b : arch.blocks)
        if (b.out_channels <= 0 || b.layers <= 0)
            throw model_error("architecture block with non-positive size");
    if (hp.fc_units <= 0) throw model_error("fc_units must be positive");
    if (hp.dropout_p < 0.0 || hp.dropout_p >= 1.0) throw model_error("dropout_p must be in [0, 1)");
    const int n_conv = arch.conv_layer_count();
    if (hp.freeze_depth < 0 || hp.freeze_depth > n_conv)
        throw model_error("freeze_depth " + std::to_string(hp.freeze_depth) + " exceeds conv layer count " +
                          std::to_string(n_conv));

    model_state<T> m;
    m.arch = arch;
    m.fc_units = hp.fc_units;
    m.dropout_p = hp.dropout_p;
    m.freeze_depth = hp.freeze_depth;

    rng_stream rng(seed);
    auto add_param = [&](const std::string& name, std::vector<std::size_t> shape, bool frozen,
                         std::size_t fan_in) {
        tensor<T> t(shape);
        if (fan_in > 0) {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
        }
        m.rms_acc.push_back(tensor<T>::zeros_like(t));
        m.params.push_back(std::move(t));
        m.names.push_back(name);
        m.frozen.push_back(frozen ? 1 : 0);
    };

    const auto convs = detail::conv_layer_channels(arch);
    for (std::size_t l = 0; l < convs.size(); ++l) {
        const auto [in_c, out_c] = convs[l];
        const bool frozen = static_cast<int>(l) < hp.freeze_depth;
        const std::string base = "conv" + std::to_string(l);
        add_param(base + ".weight",
                  {static_cast<std::size_t>(out_c), static_cast<std::size_t>(in_c), 3, 3}, frozen,
                  static_cast<std::size_t>(in_c) * 9);
        add_param(base + ".bias", {static_cast<std::size_t>(out_c)}, frozen, 0);
    }
    const int last_c = arch.blocks.back().out_channels;
    add_param("fc1.weight",
              {static_cast<std::size_t>(hp.fc_units), static_cast<std::size_t>(last_c)}, false,
              static_cast<std::size_t>(last_c));
    add_param("fc1.bias", {static_cast<std::size_t>(hp.fc_units)}, false, 0);
    add_param("fc2.weight",
              {static_cast<std::size_t>(num_classes), static_cast<std::size_t>(hp.fc_units)}, false,
              static_cast<std::size_t>(hp.fc_units));
    add_param("fc2.bias", {static_cast<std::size_t>(num_classes)}, false, 0);
    return m;
}

enum class run_mode { train, eval };

template <typename T>
std::array<T, num_classes> softmax3(const std::array<T, num_classes>& logits) {
    T mx = logits[0];
    for (int k = 1; k < num_classes; ++k) mx = logits[k] > mx ? logits[k] : mx;
    std::array<T, num_classes> p;
    T sum = T(0);
    for (int k = 0; k < num_classes; ++k) {
        p[k] = std::exp(logits[k] - mx);
        sum += p[k];
    }
    for (int k = 0; k < num_classes; ++k) p[k] /= sum;
    return p;
}

// Hard class decision; ties go to the lowest index.
template <typename T>
int predict_class3(const std::array<T, num_classes>& probs) {
    int best = 0;
    for (int k = 1; k < num_classes; ++k)
        if (probs[k] > probs[best]) best = k;
    return best;
}

template <typename T>
struct example_cache {
    std::vector<image<T>> conv_in;                  // input of each conv layer
    std::vector<image<T>> conv_act;                 // relu output of each conv layer
    std::vector<std::vector<std::uint32_t>> pool_src;  // per block: plane-local argmax per pooled element
    std::vector<std::size_t> pool_h, pool_w;        // pooled dims per block
    std::vector<T> gap;                             // per channel
    std::vector<T> fc1_act;                         // relu(fc1)
    std::vector<T> drop_scale;                      // per unit multiplier, empty at eval/p=0
    std::vector<T> fc2_in;                          // fc1_act after dropout
    std::array<T, num_classes> probs{};
};

template <typename T>
struct forward_cache {
    std::vector<example_cache<T>> examples;
};

namespace detail {

// 3x3, stride 1, pad 1 convolution; output plane pre-filled with the bias.
template <typename T>
void conv3x3_forward(const image<T>& in, const tensor<T>& weight, const tensor<T>& bias,
                     image<T>& out) {
    const long H = static_cast<long>(in.height);
    const long W = static_cast<long>(in.width);
    const std::size_t out_c = weight.shape[0];
    const std::size_t in_c = weight.shape[1];
    for (std::size_t o = 0; o < out_c; ++o) {
        T* op = out.channel(o);
        const T b = bias[o];
        for (long i = 0; i < H * W; ++i) op[i] = b;
        for (std::size_t ic = 0; ic < in_c; ++ic) {
            const T* ip = in.channel(ic);
            const T* k = &weight.data[(o * in_c + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                const long sy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const long sx = kx - 1;
                    const T w = k[ky * 3 + kx];
                    const long y_lo = sy < 0 ? 1 : 0;
                    const long y_hi = sy > 0 ? H - 1 : H;
                    const long x_lo = sx < 0 ? 1 : 0;
                    const long x_hi = sx > 0 ? W - 1 : W;
                    for (long y = y_lo; y < y_hi; ++y) {
                        const T* irow = ip + (y + sy) * W + sx;
                        T* orow = op + y * W;
                        for (long x = x_lo; x < x_hi; ++x) orow[x] += w * irow[x];
                    }
                }
            }
        }
    }
}

// Gradient of conv3x3_forward with respect to weights, bias, and input.
template <typename T>
void conv3x3_backward(const image<T>& in, const tensor<T>& weight, const image<T>& dz,
                      tensor<T>& dweight, tensor<T>& dbias, image<T>& din) {
    const long H = static_cast<long>(in.height);
    const long W = static_cast<long>(in.width);
    const std::size_t out_c = weight.shape[0];
    const std::size_t in_c = weight.shape[1];
    for (std::size_t o = 0; o < out_c; ++o) {
        const T* dzp = dz.channel(o);
        double bsum = 0.0;
        for (long i = 0; i < H * W; ++i) bsum += dzp[i];
        dbias[o] += static_cast<T>(bsum);
        for (std::size_t ic = 0; ic < in_c; ++ic) {
            const T* ip = in.channel(ic);
            T* dip = din.channel(ic);
            const T* k = &weight.data[(o * in_c + ic) * 9];
            T* dk = &dweight.data[(o * in_c + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                const long sy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const long sx = kx - 1;
                    const long y_lo = sy < 0 ? 1 : 0;
                    const long y_hi = sy > 0 ? H - 1 : H;
                    const long x_lo = sx < 0 ? 1 : 0;
                    const long x_hi = sx > 0 ? W - 1 : W;
                    double wsum = 0.0;
                    const T w = k[ky * 3 + kx];
                    for (long y = y_lo; y < y_hi; ++y) {
                        const T* irow = ip + (y + sy) * W + sx;
                        T* dirow = dip + (y + sy) * W + sx;
                        const T* dzrow = dzp + y * W;
                        for (long x = x_lo; x < x_hi; ++x) {
                            wsum += dzrow[x] * irow[x];
                            dirow[x] += w * dzrow[x];
                        }
                    }
                    dk[ky * 3 + kx] += static_cast<T>(wsum);
                }
            }
        }
    }
}

// 2x2 max-pool, stride 2, floor semantics; records the plane-local source
// index of each maximum (first maximum wins within the fixed scan order).
template <typename T>
image<T> maxpool2_forward(const image<T>& in, std::vector<std::uint32_t>& src) {
    const std::size_t H = in.height, W = in.width;
    if (H < 2 || W < 2) throw model_error("feature map too small to pool");
    const std::size_t Hp = H / 2, Wp = W / 2;
    image<T> out(in.channels, Hp, Wp);
    src.resize(in.channels * Hp * Wp);
    for (std::size_t c = 0; c < in.channels; ++c) {
        const T* ip = in.channel(c);
        T* op = out.channel(c);
        std::uint32_t* sp = src.data() + c * Hp * Wp;
        for (std::size_t y = 0; y < Hp; ++y) {
            for (std::size_t x = 0; x < Wp; ++x) {
                const std::size_t base = (2 * y) * W + 2 * x;
                std::uint32_t best = static_cast<std::uint32_t>(base);
                T bv = ip[base];
                const std::size_t cand[3] = {base + 1, base + W, base + W + 1};
                for (std::size_t k = 0; k < 3; ++k) {
                    if (ip[cand[k]] > bv) {
                        bv = ip[cand[k]];
                        best = static_cast<std::uint32_t>(cand[k]);
                    }
                }
                op[y * Wp + x] = bv;
                sp[y * Wp + x] = best;
            }
        }
    }
    return out;
}

}  // namespace detail

// Runs the network on one example; the cache is filled for backward.
template <typename T>
std::array<T, num_classes> forward_example(const model_state<T>& m, const image<T>& input,
                                           run_mode mode, rng_stream* dropout_rng,
                                           example_cache<std::type_identity_t<T>>* cache) {
    if (static_cast<int>(input.channels) != m.arch.in_channels)
        throw model_error("input has " + std::to_string(input.channels) + " channels, model expects " +
                          std::to_string(m.arch.in_channels));

    example_cache<T> local;
    example_cache<T>& cc = cache ? *cache : local;
    cc = example_cache<T>{};

    const auto convs = detail::conv_layer_channels(m.arch);
    image<T> x = input;
    std::size_t layer = 0;
    for (std::size_t b = 0; b < m.arch.blocks.size(); ++b) {
        for (int l = 0; l < m.arch.blocks[b].layers; ++l, ++layer) {
            const tensor<T>& wgt = m.params[2 * layer];
            const tensor<T>& bias = m.params[2 * layer + 1];
            image<T> z(static_cast<std::size_t>(convs[layer].second), x.height, x.width);
            detail::conv3x3_forward(x, wgt, bias, z);
            for (auto& v : z.data) v = v > T(0) ? v : T(0);
            cc.conv_in.push_back(std::move(x));
            x = z;
            cc.conv_act.push_back(x);
        }
        cc.pool_src.emplace_back();
        image<T> pooled = detail::maxpool2_forward(x, cc.pool_src.back());
        cc.pool_h.push_back(pooled.height);
        cc.pool_w.push_back(pooled.width);
        x = std::move(pooled);
    }

    // global average pooling
    const std::size_t spatial = x.height * x.width;
    cc.gap.resize(x.channels);
    for (std::size_t c = 0; c < x.channels; ++c) {
        double sum = 0.0;
        const T* p = x.channel(c);
        for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
        cc.gap[c] = static_cast<T>(sum / static_cast<double>(spatial));
    }
    cc.conv_in.push_back(std::move(x));  // final pooled map, needed for GAP backward

    const std::size_t n_params = m.params.size();
    const tensor<T>& w1 = m.params[n_params - 4];
    const tensor<T>& b1 = m.params[n_params - 3];
    const tensor<T>& w2 = m.params[n_params - 2];
    const tensor<T>& b2 = m.params[n_params - 1];

    const std::size_t fc_in = w1.shape[1];
    const std::size_t fc_units = w1.shape[0];
    cc.fc1_act.resize(fc_units);
    for (std::size_t o = 0; o < fc_units; ++o) {
        T acc = b1[o];
        const T* row = &w1.data[o * fc_in];
        for (std::size_t i = 0; i < fc_in; ++i) acc += row[i] * cc.gap[i];
        cc.fc1_act[o] = acc > T(0) ? acc : T(0);
    }

    // inverted dropout: kept units scale by 1/(1-p) so eval needs no scaling
    cc.fc2_in = cc.fc1_act;
    if (mode == run_mode::train && m.dropout_p > 0.0) {
        if (!dropout_rng) throw model_error("train-mode forward with dropout needs a random stream");
        cc.drop_scale.resize(fc_units);
        const T keep_scale = static_cast<T>(1.0 / (1.0 - m.dropout_p));
        for (std::size_t o = 0; o < fc_units; ++o) {
            const bool keep = !dropout_rng->bernoulli(m.dropout_p);
            cc.drop_scale[o] = keep ? keep_scale : T(0);
            cc.fc2_in[o] *= cc.drop_scale[o];
        }
    }

    std::array<T, num_classes> logits;
    for (int o = 0; o < num_classes; ++o) {
        T acc = b2[o];
        const T* row = &w2.data[static_cast<std::size_t>(o) * fc_units];
        for (std::size_t i = 0; i < fc_units; ++i) acc += row[i] * cc.fc2_in[i];
        logits[o] = acc;
    }
    cc.probs = softmax3(logits);
    return cc.probs;
}

// Batch forward. In train mode example e draws its dropout mask from
// rng->substream(e), which keeps results independent of the worker count.
template <typename T>
std::vector<std::array<T, num_classes>> forward(const model_state<T>& m,
                                                const std::vector<image<T>>& batch, run_mode mode,
                                                rng_stream* rng,
                                                forward_cache<std::type_identity_t<T>>* cache,
                                                int workers = 1) {
    std::vector<std::array<T, num_classes>> probs(batch.size());
    if (cache) cache->examples.assign(batch.size(), example_cache<T>{});
    parallel_for(batch.size(), workers, [&](std::size_t e) {
        rng_stream sub = rng ? rng->substream(e) : rng_stream(0);
        probs[e] = forward_example(m, batch[e], mode, rng ? &sub : nullptr,
                                   cache ? &cache->examples[e] : nullptr);
    });
    return probs;
}

// Mean soft-label cross entropy; probabilities are floored at 1e-12 inside
// the log so saturated predictions keep the loss finite.
template <typename T>
double loss_softmax_ce(const std::vector<std::array<T, num_classes>>& probs,
                       const std::vector<soft_label>& targets) {
    if (probs.size() != targets.size()) throw model_error("loss: batch size mismatch");
    if (probs.empty()) throw model_error("loss: empty batch");
    double total = 0.0;
    for (std::size_t b = 0; b < probs.size(); ++b) {
        for (int k = 0; k < num_classes; ++k) {
            const double p = std::max(static_cast<double>(probs[b][k]), 1e-12);
            total -= targets[b].w[k] * std::log(p);
        }
    }
    return total / static_cast<double>(probs.size());
}

// Gradients of the mean cross entropy for every parameter tensor, frozen ones
// included. Per-example gradients are computed independently and summed in
// example order, so results do not depend on the worker count.
template <typename T>
std::vector<tensor<T>> backward(const model_state<T>& m, const forward_cache<T>& cache,
                                const std::vector<soft_label>& targets, int workers = 1) {
    const std::size_t B = cache.examples.size();
    if (B == 0) throw model_error("backward: empty cache");
    if (targets.size() != B) throw model_error("backward: target count mismatch");

    std::vector<std::vector<tensor<T>>> per_example(B);
    parallel_for(B, workers, [&](std::size_t e) {
        const example_cache<T>& cc = cache.examples[e];
        if (cc.fc1_act.empty()) throw model_error("backward: cache not produced by a train forward");
        std::vector<tensor<T>> g;
        g.reserve(m.params.size());
        for (const auto& p : m.params) g.push_back(tensor<T>::zeros_like(p));

        const std::size_t n_params = m.params.size();
        const tensor<T>& w1 = m.params[n_params - 4];
        const tensor<T>& w2 = m.params[n_params - 2];
        tensor<T>& dw1 = g[n_params - 4];
        tensor<T>& db1 = g[n_params - 3];
        tensor<T>& dw2 = g[n_params - 2];
        tensor<T>& db2 = g[n_params - 1];
        const std::size_t fc_units = w1.shape[0];
        const std::size_t fc_in = w1.shape[1];

        // d(mean CE)/d(logits) = (p - y) / B
        std::array<T, num_classes> dlogits;
        for (int k = 0; k < num_classes; ++k)
            dlogits[k] = static_cast<T>((static_cast<double>(cc.probs[k]) - targets[e].w[k]) /
                                        static_cast<double>(B));

        std::vector<T> dfc2_in(fc_units, T(0));
        for (int o = 0; o < num_classes; ++o) {
            const T d = dlogits[o];
            db2[o] += d;
            const T* row = &w2.data[static_cast<std::size_t>(o) * fc_units];
            T* drow = &dw2.data[static_cast<std::size_t>(o) * fc_units];
            for (std::size_t i = 0; i < fc_units; ++i) {
                drow[i] += d * cc.fc2_in[i];
                dfc2_in[i] += d * row[i];
            }
        }

        // dropout, then the fc1 ReLU
        std::vector<T> dfc1(fc_units);
        for (std::size_t i = 0; i < fc_units; ++i) {
            T d = dfc2_in[i];
            if (!cc.drop_scale.empty()) d *= cc.drop_scale[i];
            dfc1[i] = cc.fc1_act[i] > T(0) ? d : T(0);
        }

        std::vector<T> dgap(fc_in, T(0));
        for (std::size_t o = 0; o < fc_units; ++o) {
            const T d = dfc1[o];
            db1[o] += d;
            const T* row = &w1.data[o * fc_in];
            T* drow = &dw1.data[o * fc_in];
            for (std::size_t i = 0; i < fc_in; ++i) {
                drow[i] += d * cc.gap[i];
                dgap[i] += d * row[i];
            }
        }

        // GAP backward into the last pooled map
        const image<T>& last_pooled = cc.conv_in.back();
        image<T> dx(last_pooled.channels, last_pooled.height, last_pooled.width);
        const std::size_t spatial = last_pooled.height * last_pooled.width;
        for (std::size_t c = 0; c < last_pooled.channels; ++c) {
            const T d = dgap[c] / static_cast<T>(spatial);
            T* p = dx.channel(c);
            for (std::size_t i = 0; i < spatial; ++i) p[i] = d;
        }

        // walk blocks and conv layers backwards
        int layer = m.conv_layer_count() - 1;
        for (int b = static_cast<int>(m.arch.blocks.size()) - 1; b >= 0; --b) {
            // un-pool: scatter into the block's last activation
            const image<T>& pre_pool = cc.conv_act[static_cast<std::size_t>(layer)];
            image<T> dpre(pre_pool.channels, pre_pool.height, pre_pool.width);
            const std::vector<std::uint32_t>& src = cc.pool_src[static_cast<std::size_t>(b)];
            const std::size_t plane = cc.pool_h[b] * cc.pool_w[b];
            for (std::size_t c = 0; c < pre_pool.channels; ++c) {
                T* dp = dpre.channel(c);
                const T* dxs = dx.channel(c);
                const std::uint32_t* sp = src.data() + c * plane;
                for (std::size_t i = 0; i < plane; ++i) dp[sp[i]] += dxs[i];
            }
            dx = std::move(dpre);

            for (int l = m.arch.blocks[b].layers - 1; l >= 0; --l, --layer) {
                const image<T>& act = cc.conv_act[static_cast<std::size_t>(layer)];
                for (std::size_t i = 0; i < dx.data.size(); ++i)
                    if (!(act.data[i] > T(0))) dx.data[i] = T(0);
                const image<T>& in = cc.conv_in[static_cast<std::size_t>(layer)];
                image<T> din(in.channels, in.height, in.width);
                detail::conv3x3_backward(in, m.params[2 * layer], dx, g[2 * layer],
                                         g[2 * layer + 1], din);
                dx = std::move(din);
            }
        }

        per_example[e] = std::move(g);
    });

    std::vector<tensor<T>> grads;
    grads.reserve(m.params.size());
    for (const auto& p : m.params) grads.push_back(tensor<T>::zeros_like(p));
    for (std::size_t e = 0; e < B; ++e)
        for (std::size_t t = 0; t < grads.size(); ++t)
            for (std::size_t i = 0; i < grads[t].size(); ++i)
                grads[t][i] += per_example[e][t][i];
    return grads;
}

}  // namespace cxr

#endif
