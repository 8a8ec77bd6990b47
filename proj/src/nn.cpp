#include "causalnet/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "causalnet/errors.hpp"
#include "json.hpp"

namespace causalnet::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

double act_apply(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::elu: return x > 0.0 ? x : std::expm1(x);
        case Activation::tanh: {
            // Symmetrized so that tanh(-x) == -tanh(x) bit-exactly.
            const double t = std::tanh(std::abs(x));
            return std::copysign(t, x);
        }
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Activation::linear: return x;
    }
    return x;
}

double act_derivative(Activation a, double x, double y) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::elu: return x > 0.0 ? 1.0 : y + 1.0;
        case Activation::tanh: return 1.0 - y * y;
        case Activation::sigmoid: return y * (1.0 - y);
        case Activation::linear: return 1.0;
    }
    return 1.0;
}

struct Dims {
    std::size_t batch = 0;
    std::size_t time = 0;      // 0 when there is no time axis
    std::size_t channels = 0;  // feature dimension (last axis)
};

Dims dims_of(const Tensor& t, const char* ctx) {
    if (t.shape.size() == 2) return {t.shape[0], 0, t.shape[1]};
    if (t.shape.size() == 3) return {t.shape[0], t.shape[1], t.shape[2]};
    throw UsageError(std::string(ctx) + ": expected a {batch, dim} or {batch, time, channels} "
                                        "tensor, got rank " + std::to_string(t.shape.size()));
}

struct LayerCache {
    Tensor input;
    Tensor output;             // populated for activation layers only
    RowMat im2col;             // conv1d only
    std::vector<double> mask;  // dropout scale factors
};

struct ParamRef {
    int weight = -1;
    int bias = -1;
};

bool layer_has_params(const LayerSpec& l) {
    return l.kind == LayerKind::conv1d || l.kind == LayerKind::conv1d_transpose ||
           l.kind == LayerKind::dense;
}

std::vector<ParamRef> param_layout(const ModelSpec& spec) {
    std::vector<ParamRef> refs(spec.layers.size());
    int cursor = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (!layer_has_params(l)) continue;
        refs[i].weight = cursor++;
        if (l.has_bias) refs[i].bias = cursor++;
    }
    return refs;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_params(
    const ModelSpec& spec) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const std::string base = "layer" + std::to_string(i);
        switch (l.kind) {
            case LayerKind::conv1d:
                out.push_back({base + ".weight", {l.window * l.in_channels, l.out_channels}});
                if (l.has_bias) out.push_back({base + ".bias", {l.out_channels}});
                break;
            case LayerKind::conv1d_transpose:
                out.push_back({base + ".weight", {l.in_channels, l.window * l.out_channels}});
                if (l.has_bias) out.push_back({base + ".bias", {l.out_channels}});
                break;
            case LayerKind::dense:
                out.push_back({base + ".weight", {l.in_dim, l.out_dim}});
                if (l.has_bias) out.push_back({base + ".bias", {l.out_dim}});
                break;
            default: break;
        }
    }
    return out;
}

// ---- conv1d ----

Tensor conv1d_forward(const LayerSpec& l, const Tensor& w, const Tensor* b, const Tensor& in,
                      LayerCache& cache) {
    const Dims d = dims_of(in, "conv1d");
    const std::size_t cin = d.time == 0 ? 1 : d.channels;
    const std::size_t T = d.time == 0 ? d.channels : d.time;
    if (cin != l.in_channels)
        throw UsageError("conv1d: expected " + std::to_string(l.in_channels) +
                         " input channels, got " + std::to_string(cin));
    if (T < l.window) throw UsageError("conv1d: input shorter than window");
    const std::size_t P = T - l.window + 1;
    const std::size_t B = d.batch;

    cache.im2col.resize(static_cast<Eigen::Index>(B * P),
                        static_cast<Eigen::Index>(l.window * cin));
    const double* src = in.values.data();
    for (std::size_t bi = 0; bi < B; ++bi) {
        const double* series = src + bi * T * cin;
        for (std::size_t p = 0; p < P; ++p) {
            double* row = cache.im2col.data() + (bi * P + p) * l.window * cin;
            std::copy(series + p * cin, series + (p + l.window) * cin, row);
        }
    }
    Tensor out({B, P, l.out_channels});
    MapMat Y(out.values.data(), static_cast<Eigen::Index>(B * P),
             static_cast<Eigen::Index>(l.out_channels));
    CMapMat W(w.values.data(), static_cast<Eigen::Index>(l.window * cin),
              static_cast<Eigen::Index>(l.out_channels));
    Y.noalias() = cache.im2col * W;
    if (b) {
        CMapMat bias(b->values.data(), 1, static_cast<Eigen::Index>(l.out_channels));
        Y.rowwise() += bias.row(0);
    }
    return out;
}

Tensor conv1d_backward(const LayerSpec& l, const Tensor& w, const LayerCache& cache,
                       const Tensor& gout, Tensor* gw, Tensor* gb, bool need_input_grad) {
    const Dims din = dims_of(cache.input, "conv1d");
    const std::size_t cin = din.time == 0 ? 1 : din.channels;
    const std::size_t T = din.time == 0 ? din.channels : din.time;
    const std::size_t P = T - l.window + 1;
    const std::size_t B = din.batch;
    CMapMat dY(gout.values.data(), static_cast<Eigen::Index>(B * P),
               static_cast<Eigen::Index>(l.out_channels));
    {
        MapMat dW(gw->values.data(), static_cast<Eigen::Index>(l.window * cin),
                  static_cast<Eigen::Index>(l.out_channels));
        dW.noalias() += cache.im2col.transpose() * dY;
    }
    if (gb) {
        for (std::size_t c = 0; c < l.out_channels; ++c)
            gb->values[c] += dY.col(static_cast<Eigen::Index>(c)).sum();
    }
    Tensor gin;
    if (need_input_grad) {
        gin = Tensor(cache.input.shape);
        CMapMat W(w.values.data(), static_cast<Eigen::Index>(l.window * cin),
                  static_cast<Eigen::Index>(l.out_channels));
        RowMat dcol = dY * W.transpose();  // (B*P, window*cin)
        double* dst = gin.values.data();
        for (std::size_t bi = 0; bi < B; ++bi) {
            double* series = dst + bi * T * cin;
            for (std::size_t p = 0; p < P; ++p) {
                const double* row = dcol.data() + (bi * P + p) * l.window * cin;
                for (std::size_t k = 0; k < l.window * cin; ++k) series[p * cin + k] += row[k];
            }
        }
    }
    return gin;
}

// ---- conv1d_transpose ----

Tensor conv1d_transpose_forward(const LayerSpec& l, const Tensor& w, const Tensor* b,
                                const Tensor& in) {
    const Dims d = dims_of(in, "conv1d_transpose");
    if (d.time == 0) throw UsageError("conv1d_transpose: input must have a time axis");
    if (d.channels != l.in_channels)
        throw UsageError("conv1d_transpose: channel mismatch");
    const std::size_t B = d.batch, P = d.time;
    const std::size_t Tout = P + l.window - 1;
    CMapMat X(in.values.data(), static_cast<Eigen::Index>(B * P),
              static_cast<Eigen::Index>(l.in_channels));
    CMapMat W(w.values.data(), static_cast<Eigen::Index>(l.in_channels),
              static_cast<Eigen::Index>(l.window * l.out_channels));
    RowMat M = X * W;  // (B*P, window*out)
    Tensor out({B, Tout, l.out_channels});
    double* dst = out.values.data();
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t p = 0; p < P; ++p) {
            const double* row = M.data() + (bi * P + p) * l.window * l.out_channels;
            double* base = dst + (bi * Tout + p) * l.out_channels;
            for (std::size_t k = 0; k < l.window * l.out_channels; ++k) base[k] += row[k];
        }
    if (b) {
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t t = 0; t < Tout; ++t)
                for (std::size_t c = 0; c < l.out_channels; ++c)
                    dst[(bi * Tout + t) * l.out_channels + c] += b->values[c];
    }
    return out;
}

Tensor conv1d_transpose_backward(const LayerSpec& l, const Tensor& w, const LayerCache& cache,
                                 const Tensor& gout, Tensor* gw, Tensor* gb,
                                 bool need_input_grad) {
    const Dims d = dims_of(cache.input, "conv1d_transpose");
    const std::size_t B = d.batch, P = d.time;
    const std::size_t Tout = P + l.window - 1;
    // Gather dM[bp, k*out+c] = gout[b, p+k, c].
    RowMat dM(static_cast<Eigen::Index>(B * P),
              static_cast<Eigen::Index>(l.window * l.out_channels));
    const double* gsrc = gout.values.data();
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t p = 0; p < P; ++p) {
            double* row = dM.data() + (bi * P + p) * l.window * l.out_channels;
            const double* base = gsrc + (bi * Tout + p) * l.out_channels;
            std::copy(base, base + l.window * l.out_channels, row);
        }
    CMapMat X(cache.input.values.data(), static_cast<Eigen::Index>(B * P),
              static_cast<Eigen::Index>(l.in_channels));
    {
        MapMat dW(gw->values.data(), static_cast<Eigen::Index>(l.in_channels),
                  static_cast<Eigen::Index>(l.window * l.out_channels));
        dW.noalias() += X.transpose() * dM;
    }
    if (gb) {
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t t = 0; t < Tout; ++t)
                for (std::size_t c = 0; c < l.out_channels; ++c)
                    gb->values[c] += gsrc[(bi * Tout + t) * l.out_channels + c];
    }
    Tensor gin;
    if (need_input_grad) {
        gin = Tensor(cache.input.shape);
        CMapMat W(w.values.data(), static_cast<Eigen::Index>(l.in_channels),
                  static_cast<Eigen::Index>(l.window * l.out_channels));
        MapMat dX(gin.values.data(), static_cast<Eigen::Index>(B * P),
                  static_cast<Eigen::Index>(l.in_channels));
        dX.noalias() = dM * W.transpose();
    }
    return gin;
}

// ---- dense ----

Tensor dense_forward(const LayerSpec& l, const Tensor& w, const Tensor* b, const Tensor& in) {
    if (in.shape.empty() || in.shape.back() != l.in_dim)
        throw UsageError("dense: expected last dimension " + std::to_string(l.in_dim));
    const std::size_t rows = in.numel() / l.in_dim;
    std::vector<std::size_t> out_shape = in.shape;
    out_shape.back() = l.out_dim;
    Tensor out(out_shape);
    CMapMat X(in.values.data(), static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(l.in_dim));
    CMapMat W(w.values.data(), static_cast<Eigen::Index>(l.in_dim),
              static_cast<Eigen::Index>(l.out_dim));
    MapMat Y(out.values.data(), static_cast<Eigen::Index>(rows),
             static_cast<Eigen::Index>(l.out_dim));
    Y.noalias() = X * W;
    if (b) {
        CMapMat bias(b->values.data(), 1, static_cast<Eigen::Index>(l.out_dim));
        Y.rowwise() += bias.row(0);
    }
    return out;
}

Tensor dense_backward(const LayerSpec& l, const Tensor& w, const LayerCache& cache,
                      const Tensor& gout, Tensor* gw, Tensor* gb, bool need_input_grad) {
    const std::size_t rows = cache.input.numel() / l.in_dim;
    CMapMat X(cache.input.values.data(), static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(l.in_dim));
    CMapMat dY(gout.values.data(), static_cast<Eigen::Index>(rows),
               static_cast<Eigen::Index>(l.out_dim));
    {
        MapMat dW(gw->values.data(), static_cast<Eigen::Index>(l.in_dim),
                  static_cast<Eigen::Index>(l.out_dim));
        dW.noalias() += X.transpose() * dY;
    }
    if (l.l1_coefficient > 0.0) {
        for (std::size_t i = 0; i < w.values.size(); ++i) {
            const double v = w.values[i];
            gw->values[i] += l.l1_coefficient * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
        }
    }
    if (gb) {
        for (std::size_t c = 0; c < l.out_dim; ++c)
            gb->values[c] += dY.col(static_cast<Eigen::Index>(c)).sum();
    }
    Tensor gin;
    if (need_input_grad) {
        gin = Tensor(cache.input.shape);
        CMapMat W(w.values.data(), static_cast<Eigen::Index>(l.in_dim),
                  static_cast<Eigen::Index>(l.out_dim));
        MapMat dX(gin.values.data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(l.in_dim));
        dX.noalias() = dY * W.transpose();
    }
    return gin;
}

// ---- pooling / upsample / flatten ----

Tensor avg_pool_time_forward(const Tensor& in) {
    const Dims d = dims_of(in, "avg_pool_time");
    if (d.time == 0) throw UsageError("avg_pool_time: input must have a time axis");
    Tensor out({d.batch, d.channels});
    const double inv = 1.0 / static_cast<double>(d.time);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t p = 0; p < d.time; ++p)
            for (std::size_t c = 0; c < d.channels; ++c)
                out.values[b * d.channels + c] +=
                    in.values[(b * d.time + p) * d.channels + c] * inv;
    return out;
}

Tensor avg_pool_time_backward(const LayerCache& cache, const Tensor& gout) {
    const Dims d = dims_of(cache.input, "avg_pool_time");
    Tensor gin(cache.input.shape);
    const double inv = 1.0 / static_cast<double>(d.time);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t p = 0; p < d.time; ++p)
            for (std::size_t c = 0; c < d.channels; ++c)
                gin.values[(b * d.time + p) * d.channels + c] =
                    gout.values[b * d.channels + c] * inv;
    return gin;
}

Tensor avg_pool2_forward(const Tensor& in) {
    const Dims d = dims_of(in, "avg_pool2");
    if (d.time < 2) throw UsageError("avg_pool2: need at least 2 time positions");
    const std::size_t Q = d.time / 2;
    Tensor out({d.batch, Q, d.channels});
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t q = 0; q < Q; ++q)
            for (std::size_t c = 0; c < d.channels; ++c)
                out.values[(b * Q + q) * d.channels + c] =
                    0.5 * (in.values[(b * d.time + 2 * q) * d.channels + c] +
                           in.values[(b * d.time + 2 * q + 1) * d.channels + c]);
    return out;
}

Tensor avg_pool2_backward(const LayerCache& cache, const Tensor& gout) {
    const Dims d = dims_of(cache.input, "avg_pool2");
    const std::size_t Q = d.time / 2;
    Tensor gin(cache.input.shape);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t q = 0; q < Q; ++q)
            for (std::size_t c = 0; c < d.channels; ++c) {
                const double g = 0.5 * gout.values[(b * Q + q) * d.channels + c];
                gin.values[(b * d.time + 2 * q) * d.channels + c] = g;
                gin.values[(b * d.time + 2 * q + 1) * d.channels + c] = g;
            }
    return gin;
}

Tensor upsample_forward(const LayerSpec& l, const Tensor& in) {
    const Dims d = dims_of(in, "upsample");
    if (d.time == 0) throw UsageError("upsample: input must have a time axis");
    Tensor out({d.batch, l.output_length, d.channels});
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t t = 0; t < l.output_length; ++t) {
            const std::size_t src = std::min(t / 2, d.time - 1);
            for (std::size_t c = 0; c < d.channels; ++c)
                out.values[(b * l.output_length + t) * d.channels + c] =
                    in.values[(b * d.time + src) * d.channels + c];
        }
    return out;
}

Tensor upsample_backward(const LayerSpec& l, const LayerCache& cache, const Tensor& gout) {
    const Dims d = dims_of(cache.input, "upsample");
    Tensor gin(cache.input.shape);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t t = 0; t < l.output_length; ++t) {
            const std::size_t src = std::min(t / 2, d.time - 1);
            for (std::size_t c = 0; c < d.channels; ++c)
                gin.values[(b * d.time + src) * d.channels + c] +=
                    gout.values[(b * l.output_length + t) * d.channels + c];
        }
    return gin;
}

// ---- per-layer dispatch ----

Tensor forward_layer(const LayerSpec& l, const ModelWeights& mw, const ParamRef& ref,
                     Tensor input, bool training, Rng& dropout_rng, LayerCache& cache) {
    cache.input = std::move(input);
    const Tensor* w = ref.weight >= 0 ? &mw.params[static_cast<std::size_t>(ref.weight)].tensor
                                      : nullptr;
    const Tensor* b = ref.bias >= 0 ? &mw.params[static_cast<std::size_t>(ref.bias)].tensor
                                    : nullptr;
    switch (l.kind) {
        case LayerKind::conv1d: return conv1d_forward(l, *w, b, cache.input, cache);
        case LayerKind::conv1d_transpose: return conv1d_transpose_forward(l, *w, b, cache.input);
        case LayerKind::dense: return dense_forward(l, *w, b, cache.input);
        case LayerKind::avg_pool_time: return avg_pool_time_forward(cache.input);
        case LayerKind::avg_pool2: return avg_pool2_forward(cache.input);
        case LayerKind::upsample: return upsample_forward(l, cache.input);
        case LayerKind::flatten: {
            Tensor out = cache.input;
            const std::size_t B = out.shape.empty() ? 0 : out.shape[0];
            out.shape = {B, out.numel() / std::max<std::size_t>(B, 1)};
            return out;
        }
        case LayerKind::activation: {
            Tensor out(cache.input.shape);
            for (std::size_t i = 0; i < out.numel(); ++i)
                out.values[i] = act_apply(l.act, cache.input.values[i]);
            cache.output = out;
            return out;
        }
        case LayerKind::dropout: {
            Tensor out = cache.input;
            if (training && l.rate > 0.0) {
                cache.mask.resize(out.numel());
                const double keep_scale = 1.0 / (1.0 - l.rate);
                for (std::size_t i = 0; i < out.numel(); ++i) {
                    cache.mask[i] = dropout_rng.uniform() < l.rate ? 0.0 : keep_scale;
                    out.values[i] *= cache.mask[i];
                }
            }
            return out;
        }
    }
    throw UsageError("forward_layer: unknown layer kind");
}

Tensor backward_layer(const LayerSpec& l, const ModelWeights& mw, const ParamRef& ref,
                      const LayerCache& cache, const Tensor& gout, std::vector<Tensor>& grads,
                      bool need_input_grad) {
    const Tensor* w = ref.weight >= 0 ? &mw.params[static_cast<std::size_t>(ref.weight)].tensor
                                      : nullptr;
    Tensor* gw = ref.weight >= 0 ? &grads[static_cast<std::size_t>(ref.weight)] : nullptr;
    Tensor* gb = ref.bias >= 0 ? &grads[static_cast<std::size_t>(ref.bias)] : nullptr;
    switch (l.kind) {
        case LayerKind::conv1d:
            return conv1d_backward(l, *w, cache, gout, gw, gb, need_input_grad);
        case LayerKind::conv1d_transpose:
            return conv1d_transpose_backward(l, *w, cache, gout, gw, gb, need_input_grad);
        case LayerKind::dense: return dense_backward(l, *w, cache, gout, gw, gb, need_input_grad);
        case LayerKind::avg_pool_time:
            return need_input_grad ? avg_pool_time_backward(cache, gout) : Tensor{};
        case LayerKind::avg_pool2:
            return need_input_grad ? avg_pool2_backward(cache, gout) : Tensor{};
        case LayerKind::upsample:
            return need_input_grad ? upsample_backward(l, cache, gout) : Tensor{};
        case LayerKind::flatten: {
            if (!need_input_grad) return {};
            Tensor gin = gout;
            gin.shape = cache.input.shape;
            return gin;
        }
        case LayerKind::activation: {
            if (!need_input_grad) return {};
            Tensor gin(cache.input.shape);
            for (std::size_t i = 0; i < gin.numel(); ++i)
                gin.values[i] = gout.values[i] * act_derivative(l.act, cache.input.values[i],
                                                                cache.output.values[i]);
            return gin;
        }
        case LayerKind::dropout: {
            if (!need_input_grad) return {};
            Tensor gin = gout;
            if (!cache.mask.empty())
                for (std::size_t i = 0; i < gin.numel(); ++i) gin.values[i] *= cache.mask[i];
            return gin;
        }
    }
    throw UsageError("backward_layer: unknown layer kind");
}

}  // namespace

struct ForwardCache {
    bool training = false;
    std::vector<std::vector<LayerCache>> branch_caches;  // one per input
    std::vector<Tensor> branch_outputs;
    std::vector<LayerCache> head_caches;
    Tensor combined;
};

// ---- combiners (exposed via combine_forward/backward for direct testing) ----

Tensor combine_forward(Combiner c, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) throw UsageError("combiner: branch output shapes differ");
    if (a.shape.size() != 2) throw UsageError("combiner: branch outputs must be {batch, dim}");
    const std::size_t B = a.shape[0], D = a.shape[1];
    if (c == Combiner::dot) {
        Tensor out({B, 1});
        for (std::size_t i = 0; i < B; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < D; ++j)
                s += a.values[i * D + j] * b.values[i * D + j];
            out.values[i] = s;
        }
        return out;
    }
    if (c == Combiner::subtract) {
        Tensor out({B, D});
        for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = a.values[i] - b.values[i];
        return out;
    }
    throw UsageError("combiner: no combiner configured");
}

std::pair<Tensor, Tensor> combine_backward(Combiner c, const Tensor& a, const Tensor& b,
                                           const Tensor& gout) {
    const std::size_t B = a.shape[0], D = a.shape[1];
    Tensor ga(a.shape), gb(b.shape);
    if (c == Combiner::dot) {
        for (std::size_t i = 0; i < B; ++i) {
            const double g = gout.values[i];
            for (std::size_t j = 0; j < D; ++j) {
                ga.values[i * D + j] = g * b.values[i * D + j];
                gb.values[i * D + j] = g * a.values[i * D + j];
            }
        }
    } else if (c == Combiner::subtract) {
        for (std::size_t i = 0; i < ga.numel(); ++i) {
            ga.values[i] = gout.values[i];
            gb.values[i] = -gout.values[i];
        }
    } else {
        throw UsageError("combiner: no combiner configured");
    }
    return {std::move(ga), std::move(gb)};
}

ForwardResult forward(const ModelWeights& weights, const std::vector<Tensor>& inputs,
                      bool training, std::uint64_t seed) {
    const ModelSpec& spec = weights.spec;
    const bool siamese = spec.combiner != Combiner::none;
    if (siamese && inputs.size() != 2)
        throw UsageError("forward: Siamese model needs exactly 2 inputs");
    if (!siamese && inputs.size() != 1)
        throw UsageError("forward: sequential model needs exactly 1 input");
    const auto layout = param_layout(spec);
    auto cache = std::make_shared<ForwardCache>();
    cache->training = training;

    auto run_span = [&](std::size_t lo, std::size_t hi, Tensor x, std::size_t stream,
                        std::vector<LayerCache>& caches) {
        caches.resize(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            Rng drop_rng(derive_seed(seed, stream, i));
            x = forward_layer(spec.layers[i], weights, layout[i], std::move(x), training,
                              drop_rng, caches[i - lo]);
        }
        return x;
    };

    Tensor out;
    if (siamese) {
        cache->branch_caches.resize(2);
        cache->branch_outputs.resize(2);
        cache->branch_outputs[0] =
            run_span(0, spec.branch_depth, inputs[0], 0, cache->branch_caches[0]);
        cache->branch_outputs[1] =
            run_span(0, spec.branch_depth, inputs[1], 1, cache->branch_caches[1]);
        cache->combined =
            combine_forward(spec.combiner, cache->branch_outputs[0], cache->branch_outputs[1]);
        out = run_span(spec.branch_depth, spec.layers.size(), cache->combined, 2,
                       cache->head_caches);
    } else {
        cache->branch_caches.resize(1);
        out = run_span(0, spec.layers.size(), inputs[0], 0, cache->branch_caches[0]);
    }
    return {std::move(out), std::move(cache)};
}

std::vector<Tensor> backward(const ModelWeights& weights, const ForwardCache& cache,
                             const Tensor& loss_grad) {
    const ModelSpec& spec = weights.spec;
    const auto layout = param_layout(spec);
    std::vector<Tensor> grads;
    grads.reserve(weights.params.size());
    for (const auto& p : weights.params) grads.emplace_back(Tensor(p.tensor.shape));

    auto run_back = [&](std::size_t lo, std::size_t hi, Tensor g,
                        const std::vector<LayerCache>& caches, bool need_first_input_grad) {
        for (std::size_t i = hi; i-- > lo;) {
            const bool need = (i > lo) || need_first_input_grad;
            g = backward_layer(spec.layers[i], weights, layout[i], caches[i - lo], g, grads,
                               need);
        }
        return g;
    };

    const bool siamese = spec.combiner != Combiner::none;
    if (siamese) {
        Tensor g = run_back(spec.branch_depth, spec.layers.size(), loss_grad, cache.head_caches,
                            true);
        auto [ga, gb] = combine_backward(spec.combiner, cache.branch_outputs[0],
                                         cache.branch_outputs[1], g);
        run_back(0, spec.branch_depth, std::move(ga), cache.branch_caches[0], false);
        run_back(0, spec.branch_depth, std::move(gb), cache.branch_caches[1], false);
    } else {
        run_back(0, spec.layers.size(), loss_grad, cache.branch_caches[0], false);
    }
    return grads;
}

double l1_penalty(const ModelWeights& weights) {
    const auto layout = param_layout(weights.spec);
    double total = 0.0;
    for (std::size_t i = 0; i < weights.spec.layers.size(); ++i) {
        const auto& l = weights.spec.layers[i];
        if (l.kind != LayerKind::dense || l.l1_coefficient <= 0.0) continue;
        const auto& w = weights.params[static_cast<std::size_t>(layout[i].weight)].tensor;
        double s = 0.0;
        for (double v : w.values) s += std::abs(v);
        total += l.l1_coefficient * s;
    }
    return total;
}

// ---- factories ----

LayerSpec LayerSpec::Conv1d(std::size_t window, std::size_t in_ch, std::size_t out_ch,
                            bool bias) {
    LayerSpec l;
    l.kind = LayerKind::conv1d;
    l.window = window;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.has_bias = bias;
    return l;
}

LayerSpec LayerSpec::Conv1dTranspose(std::size_t window, std::size_t in_ch, std::size_t out_ch,
                                     bool bias) {
    LayerSpec l;
    l.kind = LayerKind::conv1d_transpose;
    l.window = window;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.has_bias = bias;
    return l;
}

LayerSpec LayerSpec::Dense(std::size_t in, std::size_t out, bool bias, double l1) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.in_dim = in;
    l.out_dim = out;
    l.has_bias = bias;
    l.l1_coefficient = l1;
    return l;
}

LayerSpec LayerSpec::AvgPoolTime() {
    LayerSpec l;
    l.kind = LayerKind::avg_pool_time;
    return l;
}

LayerSpec LayerSpec::AvgPool2() {
    LayerSpec l;
    l.kind = LayerKind::avg_pool2;
    return l;
}

LayerSpec LayerSpec::Upsample(std::size_t output_length) {
    LayerSpec l;
    l.kind = LayerKind::upsample;
    l.output_length = output_length;
    return l;
}

LayerSpec LayerSpec::Act(Activation a) {
    LayerSpec l;
    l.kind = LayerKind::activation;
    l.act = a;
    return l;
}

LayerSpec LayerSpec::Dropout(double rate) {
    if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout rate must be in [0, 1)");
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.rate = rate;
    return l;
}

LayerSpec LayerSpec::Flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
}

ModelWeights ModelWeights::init(const ModelSpec& spec, std::uint64_t seed) {
    ModelWeights mw;
    mw.spec = spec;
    if (mw.spec.branch_depth == 0 && mw.spec.combiner == Combiner::none)
        mw.spec.branch_depth = spec.layers.size();
    Rng rng(seed);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (!layer_has_params(l)) continue;
        std::size_t fan_in = 0, fan_out = 0;
        std::vector<std::size_t> wshape, bshape;
        switch (l.kind) {
            case LayerKind::conv1d:
                fan_in = l.window * l.in_channels;
                fan_out = l.window * l.out_channels;
                wshape = {l.window * l.in_channels, l.out_channels};
                bshape = {l.out_channels};
                break;
            case LayerKind::conv1d_transpose:
                fan_in = l.window * l.in_channels;
                fan_out = l.window * l.out_channels;
                wshape = {l.in_channels, l.window * l.out_channels};
                bshape = {l.out_channels};
                break;
            case LayerKind::dense:
                fan_in = l.in_dim;
                fan_out = l.out_dim;
                wshape = {l.in_dim, l.out_dim};
                bshape = {l.out_dim};
                break;
            default: break;
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w(wshape);
        for (auto& v : w.values) v = (2.0 * rng.uniform() - 1.0) * bound;
        mw.params.push_back({"layer" + std::to_string(i) + ".weight", std::move(w)});
        if (l.has_bias)
            mw.params.push_back({"layer" + std::to_string(i) + ".bias", Tensor(bshape)});
    }
    return mw;
}

std::size_t ModelWeights::total_parameters() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

// ---- Adam ----

AdamState AdamState::init(const ModelWeights& weights, double lr) {
    AdamState s;
    s.learning_rate = lr;
    s.first_moment.assign(weights.total_parameters(), 0.0);
    s.second_moment.assign(weights.total_parameters(), 0.0);
    return s;
}

void adam_step(AdamState& state, ModelWeights& weights, const std::vector<Tensor>& grads) {
    if (grads.size() != weights.params.size())
        throw UsageError("adam_step: gradient count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::size_t k = 0;
    for (std::size_t pi = 0; pi < weights.params.size(); ++pi) {
        auto& w = weights.params[pi].tensor;
        const auto& g = grads[pi];
        if (g.numel() != w.numel()) throw UsageError("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < w.numel(); ++i, ++k) {
            double& m = state.first_moment[k];
            double& v = state.second_moment[k];
            const double gi = g.values[i];
            m = state.beta1 * m + (1.0 - state.beta1) * gi;
            v = state.beta2 * v + (1.0 - state.beta2) * gi * gi;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            w.values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

// ---- losses ----

LossResult loss(LossKind kind, const Tensor& predictions, const std::vector<double>& labels) {
    if (predictions.numel() != labels.size())
        throw UsageError("loss: prediction/label count mismatch");
    const double n = static_cast<double>(labels.size());
    LossResult r;
    r.grad = Tensor(predictions.shape);
    if (kind == LossKind::bce) {
        constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
        double total = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double p_raw = predictions.values[i];
            const double p = std::min(hi, std::max(lo, p_raw));
            const double y = labels[i];
            total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
            r.grad.values[i] =
                (p_raw > lo && p_raw < hi) ? (-y / p + (1.0 - y) / (1.0 - p)) / n : 0.0;
        }
        r.value = total / n;
    } else {
        double total = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double d = predictions.values[i] - labels[i];
            total += d * d;
            r.grad.values[i] = 2.0 * d / n;
        }
        r.value = total / n;
    }
    return r;
}

// ---- enum names ----

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::elu: return "elu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::linear: return "linear";
    }
    return "linear";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "elu") return Activation::elu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "linear") return Activation::linear;
    throw FormatError("unknown activation: " + s);
}

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::conv1d_transpose: return "conv1d_transpose";
        case LayerKind::dense: return "dense";
        case LayerKind::avg_pool_time: return "avg_pool_time";
        case LayerKind::avg_pool2: return "avg_pool2";
        case LayerKind::upsample: return "upsample";
        case LayerKind::activation: return "activation";
        case LayerKind::dropout: return "dropout";
        case LayerKind::flatten: return "flatten";
    }
    return "dense";
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv1d") return LayerKind::conv1d;
    if (s == "conv1d_transpose") return LayerKind::conv1d_transpose;
    if (s == "dense") return LayerKind::dense;
    if (s == "avg_pool_time") return LayerKind::avg_pool_time;
    if (s == "avg_pool2") return LayerKind::avg_pool2;
    if (s == "upsample") return LayerKind::upsample;
    if (s == "activation") return LayerKind::activation;
    if (s == "dropout") return LayerKind::dropout;
    if (s == "flatten") return LayerKind::flatten;
    throw FormatError("unknown layer kind: " + s);
}

std::string to_string(Combiner c) {
    switch (c) {
        case Combiner::none: return "none";
        case Combiner::dot: return "dot";
        case Combiner::subtract: return "subtract";
    }
    return "none";
}

Combiner combiner_from_string(const std::string& s) {
    if (s == "none") return Combiner::none;
    if (s == "dot") return Combiner::dot;
    if (s == "subtract") return Combiner::subtract;
    throw FormatError("unknown combiner: " + s);
}

// ---- persistence ----

namespace {

nlohmann::json layer_to_json(const LayerSpec& l) {
    nlohmann::json j;
    j["kind"] = to_string(l.kind);
    switch (l.kind) {
        case LayerKind::conv1d:
        case LayerKind::conv1d_transpose:
            j["window"] = l.window;
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["has_bias"] = l.has_bias;
            break;
        case LayerKind::dense:
            j["in_dim"] = l.in_dim;
            j["out_dim"] = l.out_dim;
            j["has_bias"] = l.has_bias;
            j["l1_coefficient"] = l.l1_coefficient;
            break;
        case LayerKind::activation: j["activation"] = to_string(l.act); break;
        case LayerKind::dropout: j["rate"] = l.rate; break;
        case LayerKind::upsample: j["output_length"] = l.output_length; break;
        default: break;
    }
    return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec l;
    l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    switch (l.kind) {
        case LayerKind::conv1d:
        case LayerKind::conv1d_transpose:
            l.window = j.at("window").get<std::size_t>();
            l.in_channels = j.at("in_channels").get<std::size_t>();
            l.out_channels = j.at("out_channels").get<std::size_t>();
            l.has_bias = j.at("has_bias").get<bool>();
            break;
        case LayerKind::dense:
            l.in_dim = j.at("in_dim").get<std::size_t>();
            l.out_dim = j.at("out_dim").get<std::size_t>();
            l.has_bias = j.at("has_bias").get<bool>();
            l.l1_coefficient = j.value("l1_coefficient", 0.0);
            break;
        case LayerKind::activation:
            l.act = activation_from_string(j.at("activation").get<std::string>());
            break;
        case LayerKind::dropout: l.rate = j.at("rate").get<double>(); break;
        case LayerKind::upsample:
            l.output_length = j.at("output_length").get<std::size_t>();
            break;
        default: break;
    }
    return l;
}

}  // namespace

std::string model_to_json(const ModelWeights& weights) {
    nlohmann::json j;
    j["descriptor"] = nlohmann::json::array();
    for (const auto& l : weights.spec.layers) j["descriptor"].push_back(layer_to_json(l));
    if (weights.spec.combiner == Combiner::none)
        j["combiner"] = nullptr;
    else
        j["combiner"] = to_string(weights.spec.combiner);
    j["branch_depth"] = weights.spec.branch_depth;
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& p : weights.params) {
        tensors[p.name] = {{"shape", p.tensor.shape}, {"values", p.tensor.values}};
    }
    j["tensors"] = std::move(tensors);
    return j.dump();
}

ModelWeights model_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("model JSON parse error: ") + e.what());
    }
    ModelWeights mw;
    for (const auto& lj : j.at("descriptor")) mw.spec.layers.push_back(layer_from_json(lj));
    mw.spec.combiner = j.at("combiner").is_null()
                           ? Combiner::none
                           : combiner_from_string(j.at("combiner").get<std::string>());
    mw.spec.branch_depth = j.at("branch_depth").get<std::size_t>();
    const auto& tensors = j.at("tensors");
    for (const auto& [name, shape] : expected_params(mw.spec)) {
        if (!tensors.contains(name)) throw FormatError("model JSON: missing tensor '" + name + "'");
        const auto& tj = tensors.at(name);
        Tensor t;
        t.shape = tj.at("shape").get<std::vector<std::size_t>>();
        t.values = tj.at("values").get<std::vector<double>>();
        if (t.shape != shape)
            throw FormatError("model JSON: tensor '" + name + "' has unexpected shape");
        if (t.values.size() != Tensor::numel_of(t.shape))
            throw FormatError("model JSON: tensor '" + name +
                              "' value count does not match its shape");
        mw.params.push_back({name, std::move(t)});
    }
    return mw;
}

void save_model(const ModelWeights& weights, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open model file for writing: " + path);
    out << model_to_json(weights);
}

ModelWeights load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open model file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

std::string save_adam_state(const AdamState& s) {
    nlohmann::json j;
    j["step"] = s.step;
    j["learning_rate"] = s.learning_rate;
    j["beta1"] = s.beta1;
    j["beta2"] = s.beta2;
    j["epsilon"] = s.epsilon;
    j["first_moment"] = s.first_moment;
    j["second_moment"] = s.second_moment;
    return j.dump();
}

AdamState load_adam_state(const std::string& json_text) {
    const auto j = nlohmann::json::parse(json_text);
    AdamState s;
    s.step = j.at("step").get<std::size_t>();
    s.learning_rate = j.at("learning_rate").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.first_moment = j.at("first_moment").get<std::vector<double>>();
    s.second_moment = j.at("second_moment").get<std::vector<double>>();
    return s;
}

}  // namespace causalnet::nn
