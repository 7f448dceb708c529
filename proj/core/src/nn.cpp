#include "icumort/nn.hpp"
#include "icumort/errors.hpp"
#include "icumort/metrics.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace icumort::nn {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// dot with four independent accumulators so the reduction vectorizes without
// relaxed floating-point flags
double dot4(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    for (; k < n; ++k) s0 += a[k] * b[k];
    return (s0 + s1) + (s2 + s3);
}

// resize without zeroing; callers overwrite every cell
void reshape(Matrix& m, std::size_t r, std::size_t c) {
    m.rows = r;
    m.cols = c;
    m.a.resize(r * c);
}

// z = x * w^T + b ; w is out x in, both operands row-major. Four output rows
// per pass share each load of the input row.
void linear_forward(const Matrix& x, const Matrix& w, const std::vector<double>& b, Matrix& z) {
    reshape(z, x.rows, w.rows);
    const std::size_t n = w.cols;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* __restrict xi = x.row(i);
        double* zi = z.row(i);
        std::size_t o = 0;
        for (; o + 4 <= w.rows; o += 4) {
            const double* __restrict w0 = w.row(o);
            const double* __restrict w1 = w.row(o + 1);
            const double* __restrict w2 = w.row(o + 2);
            const double* __restrict w3 = w.row(o + 3);
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const double v = xi[k];
                s0 += v * w0[k];
                s1 += v * w1[k];
                s2 += v * w2[k];
                s3 += v * w3[k];
            }
            zi[o] = b[o] + s0;
            zi[o + 1] = b[o + 1] + s1;
            zi[o + 2] = b[o + 2] + s2;
            zi[o + 3] = b[o + 3] + s3;
        }
        for (; o < w.rows; ++o) {
            zi[o] = b[o] + dot4(xi, w.row(o), n);
        }
    }
}

double activate(double v, Activation a) {
    switch (a) {
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-v));
    case Activation::Relu: return v > 0.0 ? v : 0.0;
    case Activation::Identity: return v;
    }
    return v;
}

double activate_grad(double pre, double post, Activation a) {
    switch (a) {
    case Activation::Sigmoid: return post * (1.0 - post);
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
    }
    return 1.0;
}

struct LayerCache {
    const Matrix* input = nullptr; // owned by the batch or the previous layer
    Matrix z;        // pre-normalization
    Matrix xhat;     // normalized (batch_norm only)
    std::vector<double> mean, inv_std;
    Matrix act_in;   // value entering the activation
    Matrix act_out;
    Matrix mask;     // dropout scale per cell (train only); empty in eval
    Matrix output;
};

struct EncoderCacheT {
    std::vector<LayerCache> layers;
};

} // namespace

struct ForwardCache {
    std::vector<EncoderCacheT> blocks;
    EncoderCacheT head;
    LayerCache out;
    Matrix pooled;
    std::vector<double> logits;
    std::vector<double> probs;
    Mode mode = Mode::Eval;
    std::vector<bool> frozen;
};

namespace {

void layer_forward(const DenseLayer& layer, const Matrix& x, Mode mode, Rng* rng,
                   LayerCache& cache, DenseLayer* mutable_layer) {
    cache.input = &x;
    linear_forward(x, layer.w, layer.b, cache.z);
    const std::size_t B = x.rows;
    const std::size_t out = layer.w.rows;

    const Matrix* pre_act = &cache.z;
    if (layer.batch_norm) {
        reshape(cache.xhat, B, out);
        reshape(cache.act_in, B, out);
        cache.mean.assign(out, 0.0);
        cache.inv_std.assign(out, 0.0);
        if (mode == Mode::Train) {
            for (std::size_t o = 0; o < out; ++o) {
                double mu = 0.0;
                for (std::size_t i = 0; i < B; ++i) mu += cache.z.at(i, o);
                mu /= static_cast<double>(B);
                double var = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                    const double d = cache.z.at(i, o) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(B);
                cache.mean[o] = mu;
                cache.inv_std[o] = 1.0 / std::sqrt(var + kBnEps);
                if (mutable_layer) {
                    const double unbiased =
                        B > 1 ? var * static_cast<double>(B) / static_cast<double>(B - 1) : var;
                    mutable_layer->bn_run_mean[o] =
                        (1.0 - kBnMomentum) * mutable_layer->bn_run_mean[o] + kBnMomentum * mu;
                    mutable_layer->bn_run_var[o] =
                        (1.0 - kBnMomentum) * mutable_layer->bn_run_var[o] + kBnMomentum * unbiased;
                }
            }
        } else {
            for (std::size_t o = 0; o < out; ++o) {
                cache.mean[o] = layer.bn_run_mean[o];
                cache.inv_std[o] = 1.0 / std::sqrt(layer.bn_run_var[o] + kBnEps);
            }
        }
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t o = 0; o < out; ++o) {
                const double xh = (cache.z.at(i, o) - cache.mean[o]) * cache.inv_std[o];
                cache.xhat.at(i, o) = xh;
                cache.act_in.at(i, o) = layer.bn_gamma[o] * xh + layer.bn_beta[o];
            }
        }
        pre_act = &cache.act_in;
    } else {
        cache.act_in = cache.z;
        pre_act = &cache.act_in;
    }

    reshape(cache.act_out, B, out);
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
            cache.act_out.at(i, o) = activate(pre_act->at(i, o), layer.act);
        }
    }

    if (layer.dropout > 0.0 && mode == Mode::Train) {
        if (!rng) throw internal_error("dropout in train mode requires an rng");
        reshape(cache.mask, B, out);
        const double keep = 1.0 - layer.dropout;
        reshape(cache.output, B, out);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t o = 0; o < out; ++o) {
                const double scale = rng->uniform() < keep ? 1.0 / keep : 0.0;
                cache.mask.at(i, o) = scale;
                cache.output.at(i, o) = cache.act_out.at(i, o) * scale;
            }
        }
    } else {
        cache.mask = Matrix();
    }
}

// dropout is the only stage that rewrites activations; without it the layer
// output is the activation buffer itself
const Matrix& layer_output(const LayerCache& cache) {
    return cache.mask.rows > 0 ? cache.output : cache.act_out;
}

// offsets of each layer's parameter slices inside the flat gradient vector,
// in visit_params order
struct GradSlices {
    std::size_t w = 0, b = 0, gamma = 0, beta = 0;
    bool has_bn = false;
};

struct GradLayout {
    std::vector<GradSlices> layers; // blocks' layers, then head, then out
    std::size_t total = 0;
};

GradLayout grad_layout(const FusedNet& net) {
    GradLayout layout;
    std::size_t off = 0;
    auto add = [&](const DenseLayer& l) {
        GradSlices s;
        s.w = off;
        off += l.w.a.size();
        s.b = off;
        off += l.b.size();
        if (l.batch_norm) {
            s.has_bn = true;
            s.gamma = off;
            off += l.bn_gamma.size();
            s.beta = off;
            off += l.bn_beta.size();
        }
        layout.layers.push_back(s);
    };
    for (const auto& b : net.blocks)
        for (const auto& l : b.layers) add(l);
    for (const auto& l : net.head.layers) add(l);
    add(net.out);
    layout.total = off;
    return layout;
}

// gradient w.r.t. the layer input; accumulates into the flat slices
Matrix layer_backward(const DenseLayer& layer, const LayerCache& cache, const Matrix& d_output,
                      Mode mode, const GradSlices& slices, std::vector<double>& flat) {
    const std::size_t B = cache.input->rows;
    const std::size_t out = layer.w.rows;
    double* __restrict d_w = flat.data() + slices.w;
    double* __restrict d_b = flat.data() + slices.b;
    double* d_gamma = slices.has_bn ? flat.data() + slices.gamma : nullptr;
    double* d_beta = slices.has_bn ? flat.data() + slices.beta : nullptr;

    Matrix d_act = d_output;
    if (cache.mask.rows > 0) {
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t o = 0; o < out; ++o) {
                d_act.at(i, o) *= cache.mask.at(i, o);
            }
        }
    }

    // through the activation
    Matrix d_pre(B, out);
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
            d_pre.at(i, o) =
                d_act.at(i, o) *
                activate_grad(cache.act_in.at(i, o), cache.act_out.at(i, o), layer.act);
        }
    }

    Matrix d_z;
    if (layer.batch_norm) {
        d_z = Matrix(B, out);
        for (std::size_t o = 0; o < out; ++o) {
            double dg = 0.0, db_ = 0.0;
            for (std::size_t i = 0; i < B; ++i) {
                dg += d_pre.at(i, o) * cache.xhat.at(i, o);
                db_ += d_pre.at(i, o);
            }
            d_gamma[o] += dg;
            d_beta[o] += db_;

            if (mode == Mode::Train) {
                // batch statistics participate in the graph
                const double inv_std = cache.inv_std[o];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                    const double dxh = d_pre.at(i, o) * layer.bn_gamma[o];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * cache.xhat.at(i, o);
                }
                const double invB = 1.0 / static_cast<double>(B);
                for (std::size_t i = 0; i < B; ++i) {
                    const double dxh = d_pre.at(i, o) * layer.bn_gamma[o];
                    d_z.at(i, o) = inv_std * (dxh - invB * sum_dxhat -
                                              cache.xhat.at(i, o) * invB * sum_dxhat_xhat);
                }
            } else {
                // running stats are constants: plain affine map
                for (std::size_t i = 0; i < B; ++i) {
                    d_z.at(i, o) = d_pre.at(i, o) * layer.bn_gamma[o] * cache.inv_std[o];
                }
            }
        }
    } else {
        d_z = std::move(d_pre);
    }

    // linear: dW += dZ^T X, db += sum dZ, dX = dZ W. Loops are ordered so the
    // accumulator row stays hot while the larger operand streams.
    const std::size_t in_w = layer.w.cols;
    const Matrix& input = *cache.input;
    for (std::size_t o = 0; o < out; ++o) {
        double* __restrict dwo = d_w + o * in_w;
        std::size_t i = 0;
        for (; i + 4 <= B; i += 4) {
            const double g0 = d_z.at(i, o);
            const double g1 = d_z.at(i + 1, o);
            const double g2 = d_z.at(i + 2, o);
            const double g3 = d_z.at(i + 3, o);
            d_b[o] += g0 + g1 + g2 + g3;
            if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g3 == 0.0) continue;
            const double* __restrict x0 = input.row(i);
            const double* __restrict x1 = input.row(i + 1);
            const double* __restrict x2 = input.row(i + 2);
            const double* __restrict x3 = input.row(i + 3);
            for (std::size_t k = 0; k < in_w; ++k) {
                dwo[k] += g0 * x0[k] + g1 * x1[k] + g2 * x2[k] + g3 * x3[k];
            }
        }
        for (; i < B; ++i) {
            const double g = d_z.at(i, o);
            if (g == 0.0) continue;
            d_b[o] += g;
            const double* __restrict xi = input.row(i);
            for (std::size_t k = 0; k < in_w; ++k) dwo[k] += g * xi[k];
        }
    }
    Matrix d_x(B, in_w);
    for (std::size_t i = 0; i < B; ++i) {
        const double* dzi = d_z.row(i);
        double* __restrict dxi = d_x.row(i);
        std::size_t o = 0;
        for (; o + 4 <= out; o += 4) {
            const double g0 = dzi[o], g1 = dzi[o + 1], g2 = dzi[o + 2], g3 = dzi[o + 3];
            if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g3 == 0.0) continue;
            const double* __restrict w0 = layer.w.row(o);
            const double* __restrict w1 = layer.w.row(o + 1);
            const double* __restrict w2 = layer.w.row(o + 2);
            const double* __restrict w3 = layer.w.row(o + 3);
            for (std::size_t k = 0; k < in_w; ++k) {
                dxi[k] += g0 * w0[k] + g1 * w1[k] + g2 * w2[k] + g3 * w3[k];
            }
        }
        for (; o < out; ++o) {
            const double g = dzi[o];
            if (g == 0.0) continue;
            const double* __restrict wo = layer.w.row(o);
            for (std::size_t k = 0; k < in_w; ++k) dxi[k] += g * wo[k];
        }
    }
    return d_x;
}

DenseLayer make_layer(const LayerSpec& spec, std::uint64_t seed) {
    DenseLayer l;
    l.w = xavier_init(spec.in, spec.out, seed);
    l.b.assign(spec.out, 0.0);
    l.act = spec.act;
    l.dropout = spec.dropout;
    l.batch_norm = spec.batch_norm;
    if (spec.batch_norm) {
        l.bn_gamma.assign(spec.out, 1.0);
        l.bn_beta.assign(spec.out, 0.0);
        l.bn_run_mean.assign(spec.out, 0.0);
        l.bn_run_var.assign(spec.out, 1.0);
    }
    return l;
}

std::size_t encoder_output_width(const Encoder& e) {
    return e.layers.empty() ? 0 : e.layers.back().w.rows;
}

json layer_to_json(const DenseLayer& l) {
    json j;
    j["in"] = l.w.cols;
    j["out"] = l.w.rows;
    j["w"] = l.w.a;
    j["b"] = l.b;
    j["act"] = l.act == Activation::Sigmoid ? "sigmoid"
               : l.act == Activation::Relu  ? "relu"
                                            : "identity";
    j["dropout"] = l.dropout;
    j["batch_norm"] = l.batch_norm;
    if (l.batch_norm) {
        j["bn_gamma"] = l.bn_gamma;
        j["bn_beta"] = l.bn_beta;
        j["bn_run_mean"] = l.bn_run_mean;
        j["bn_run_var"] = l.bn_run_var;
    }
    return j;
}

DenseLayer layer_from_json(const json& j) {
    DenseLayer l;
    l.w.rows = j.at("out").get<std::size_t>();
    l.w.cols = j.at("in").get<std::size_t>();
    l.w.a = j.at("w").get<std::vector<double>>();
    l.b = j.at("b").get<std::vector<double>>();
    const std::string act = j.at("act").get<std::string>();
    l.act = act == "sigmoid" ? Activation::Sigmoid
            : act == "relu"  ? Activation::Relu
                             : Activation::Identity;
    l.dropout = j.at("dropout").get<double>();
    l.batch_norm = j.at("batch_norm").get<bool>();
    if (l.batch_norm) {
        l.bn_gamma = j.at("bn_gamma").get<std::vector<double>>();
        l.bn_beta = j.at("bn_beta").get<std::vector<double>>();
        l.bn_run_mean = j.at("bn_run_mean").get<std::vector<double>>();
        l.bn_run_var = j.at("bn_run_var").get<std::vector<double>>();
    }
    return l;
}

} // namespace

Matrix xavier_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
    if (fan_in == 0 || fan_out == 0) throw usage_error("xavier_init: fans must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(seed);
    Matrix w(fan_out, fan_in);
    for (double& v : w.a) v = rng.uniform(-limit, limit);
    return w;
}

EncoderSpec EncoderSpec::static_block(const std::string& name, std::size_t input_width,
                                      double dropout) {
    EncoderSpec s;
    s.name = name;
    s.input_width = input_width;
    s.layers.push_back({input_width, 32, Activation::Sigmoid, true, dropout});
    s.layers.push_back({32, 16, Activation::Sigmoid, true, dropout});
    return s;
}

EncoderSpec EncoderSpec::dynamic_block(const std::string& name, std::size_t input_width,
                                       double dropout) {
    EncoderSpec s;
    s.name = name;
    s.input_width = input_width;
    const std::size_t hidden = std::max<std::size_t>(4, input_width / 2);
    s.layers.push_back({input_width, hidden, Activation::Relu, true, dropout});
    s.layers.push_back({hidden, 32, Activation::Relu, true, dropout});
    return s;
}

std::size_t FusedNet::block_index(const std::string& name) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].name == name) return i;
    }
    throw usage_error(fmt::format("no block named '{}'", name));
}

std::size_t FusedNet::input_width() const {
    std::size_t w = 0;
    for (const auto& b : blocks) w += b.layers.empty() ? 0 : b.layers.front().w.cols;
    return w;
}

json FusedNet::to_json() const {
    json j;
    j["pooling"] = pooling == Pooling::Concat ? "concat" : "add";
    json jb = json::array();
    for (const auto& b : blocks) {
        json be;
        be["name"] = b.name;
        be["layers"] = json::array();
        for (const auto& l : b.layers) be["layers"].push_back(layer_to_json(l));
        jb.push_back(be);
    }
    j["blocks"] = jb;
    j["head"] = json::array();
    for (const auto& l : head.layers) j["head"].push_back(layer_to_json(l));
    j["out"] = layer_to_json(out);
    return j;
}

FusedNet FusedNet::from_json(const json& j) {
    FusedNet net;
    net.pooling = j.at("pooling").get<std::string>() == "add" ? Pooling::Add : Pooling::Concat;
    for (const auto& be : j.at("blocks")) {
        Encoder e;
        e.name = be.at("name").get<std::string>();
        for (const auto& lj : be.at("layers")) e.layers.push_back(layer_from_json(lj));
        net.blocks.push_back(std::move(e));
    }
    net.head.name = "head";
    for (const auto& lj : j.at("head")) net.head.layers.push_back(layer_from_json(lj));
    net.out = layer_from_json(j.at("out"));
    return net;
}

FusedNet build_net(const NetConfig& cfg, std::uint64_t seed) {
    if (cfg.blocks.empty()) throw config_error("build_net: at least one block required");
    FusedNet net;
    net.pooling = cfg.pooling;
    std::size_t pooled_width = 0;
    std::optional<std::size_t> add_width;
    for (const auto& spec : cfg.blocks) {
        Encoder e;
        e.name = spec.name;
        for (std::size_t li = 0; li < spec.layers.size(); ++li) {
            const std::uint64_t layer_seed = seed ^ fnv1a64(fmt::format("{}:{}", spec.name, li));
            e.layers.push_back(make_layer(spec.layers[li], layer_seed));
        }
        const std::size_t w = encoder_output_width(e);
        if (cfg.pooling == Pooling::Add) {
            if (add_width && *add_width != w) {
                throw data_error(fmt::format(
                    "element-wise addition pooling needs equal block widths; block '{}' has {} "
                    "but an earlier block has {}",
                    spec.name, w, *add_width));
            }
            add_width = w;
            pooled_width = w;
        } else {
            pooled_width += w;
        }
        net.blocks.push_back(std::move(e));
    }

    net.head.name = "head";
    std::size_t in = pooled_width;
    for (std::size_t hi = 0; hi < cfg.head_widths.size(); ++hi) {
        LayerSpec spec{in, cfg.head_widths[hi], Activation::Relu, cfg.head_batch_norm, cfg.dropout};
        net.head.layers.push_back(make_layer(spec, seed ^ fnv1a64(fmt::format("head:{}", hi))));
        in = cfg.head_widths[hi];
    }
    if (in == 0) throw config_error("build_net: head has zero input width");
    LayerSpec out_spec{in, 1, Activation::Identity, false, 0.0};
    net.out = make_layer(out_spec, seed ^ fnv1a64("out"));
    return net;
}

void visit_params(FusedNet& net, const std::function<void(int, std::vector<double>&)>& fn) {
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        for (auto& l : net.blocks[bi].layers) {
            fn(static_cast<int>(bi), l.w.a);
            fn(static_cast<int>(bi), l.b);
            if (l.batch_norm) {
                fn(static_cast<int>(bi), l.bn_gamma);
                fn(static_cast<int>(bi), l.bn_beta);
            }
        }
    }
    for (auto& l : net.head.layers) {
        fn(-1, l.w.a);
        fn(-1, l.b);
        if (l.batch_norm) {
            fn(-1, l.bn_gamma);
            fn(-1, l.bn_beta);
        }
    }
    fn(-1, net.out.w.a);
    fn(-1, net.out.b);
}

void visit_params_const(const FusedNet& net,
                        const std::function<void(int, const std::vector<double>&)>& fn) {
    visit_params(const_cast<FusedNet&>(net),
                 [&](int b, std::vector<double>& v) { fn(b, v); });
}

std::vector<double> flatten_params(const FusedNet& net) {
    std::vector<double> flat;
    visit_params_const(net, [&](int, const std::vector<double>& v) {
        flat.insert(flat.end(), v.begin(), v.end());
    });
    return flat;
}

void load_params(FusedNet& net, const std::vector<double>& flat) {
    std::size_t cursor = 0;
    visit_params(net, [&](int, std::vector<double>& v) {
        if (cursor + v.size() > flat.size()) throw usage_error("load_params: size mismatch");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(cursor),
                  flat.begin() + static_cast<std::ptrdiff_t>(cursor + v.size()), v.begin());
        cursor += v.size();
    });
    if (cursor != flat.size()) throw usage_error("load_params: size mismatch");
}

namespace {

void run_forward(FusedNet& net, const Batch& batch, Mode mode, ForwardCache& cache, Rng* rng,
                 const std::vector<bool>* frozen) {
    if (batch.block_inputs.size() != net.blocks.size()) {
        throw data_error(fmt::format("forward: batch has {} blocks, net has {}",
                                     batch.block_inputs.size(), net.blocks.size()));
    }
    const std::size_t B = batch.size();
    cache.mode = mode;
    cache.blocks.resize(net.blocks.size()); // buffers are reused across calls
    cache.frozen.assign(net.blocks.size(), false);

    std::vector<const Matrix*> block_outs(net.blocks.size());
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        const Matrix& x = batch.block_inputs[bi];
        if (x.rows != B) throw data_error("forward: ragged batch");
        const std::size_t want = net.blocks[bi].layers.front().w.cols;
        if (x.cols != want) {
            throw data_error(fmt::format("forward: block '{}' expects width {}, got {}",
                                         net.blocks[bi].name, want, x.cols));
        }
        const bool is_frozen = frozen && (*frozen)[bi];
        cache.frozen[bi] = is_frozen;
        const Mode block_mode = is_frozen ? Mode::Eval : mode;
        const Matrix* cur = &x;
        auto& bcache = cache.blocks[bi];
        bcache.layers.resize(net.blocks[bi].layers.size());
        for (std::size_t li = 0; li < net.blocks[bi].layers.size(); ++li) {
            DenseLayer& layer = net.blocks[bi].layers[li];
            layer_forward(layer, *cur, block_mode, rng, bcache.layers[li],
                          block_mode == Mode::Train ? &layer : nullptr);
            cur = &layer_output(bcache.layers[li]);
        }
        block_outs[bi] = cur;
    }

    if (net.pooling == Pooling::Concat) {
        std::size_t width = 0;
        for (const Matrix* m : block_outs) width += m->cols;
        reshape(cache.pooled, B, width);
        std::size_t offset = 0;
        for (const Matrix* m : block_outs) {
            for (std::size_t i = 0; i < B; ++i) {
                std::copy(m->row(i), m->row(i) + m->cols, cache.pooled.row(i) + offset);
            }
            offset += m->cols;
        }
    } else {
        const std::size_t width = block_outs.front()->cols;
        for (const Matrix* m : block_outs) {
            if (m->cols != width) {
                throw data_error("forward: element-wise addition pooling with unequal widths");
            }
        }
        reshape(cache.pooled, B, width);
        std::fill(cache.pooled.a.begin(), cache.pooled.a.end(), 0.0);
        for (const Matrix* m : block_outs) {
            for (std::size_t i = 0; i < B * width; ++i) cache.pooled.a[i] += m->a[i];
        }
    }

    const Matrix* cur = &cache.pooled;
    cache.head.layers.resize(net.head.layers.size());
    for (std::size_t li = 0; li < net.head.layers.size(); ++li) {
        DenseLayer& layer = net.head.layers[li];
        layer_forward(layer, *cur, mode, rng, cache.head.layers[li],
                      mode == Mode::Train ? &layer : nullptr);
        cur = &layer_output(cache.head.layers[li]);
    }
    layer_forward(net.out, *cur, mode, rng, cache.out, nullptr);

    cache.logits.resize(B);
    cache.probs.resize(B);
    const Matrix& final_out = layer_output(cache.out);
    for (std::size_t i = 0; i < B; ++i) {
        cache.logits[i] = final_out.at(i, 0);
        cache.probs[i] = 1.0 / (1.0 + std::exp(-cache.logits[i]));
    }
}

// dlogit -> parameter gradients written into the flat vector (same layout as
// flatten_params), plus optional input gradients
void run_backward(FusedNet& net, ForwardCache& cache, const std::vector<double>& d_logit,
                  const GradLayout& layout, std::vector<double>& flat,
                  std::vector<Matrix>* input_grads) {
    flat.assign(layout.total, 0.0);

    const std::size_t B = cache.probs.size();
    Matrix d_out(B, 1);
    for (std::size_t i = 0; i < B; ++i) d_out.at(i, 0) = d_logit[i];

    // slice indices in visit order: blocks' layers first, then head, then out
    std::size_t n_block_layers = 0;
    for (const auto& b : net.blocks) n_block_layers += b.layers.size();
    const std::size_t head_base = n_block_layers;
    const std::size_t out_idx = head_base + net.head.layers.size();

    Matrix d_cur = layer_backward(net.out, cache.out, d_out, cache.mode,
                                  layout.layers[out_idx], flat);

    for (std::size_t li = net.head.layers.size(); li-- > 0;) {
        d_cur = layer_backward(net.head.layers[li], cache.head.layers[li], d_cur, cache.mode,
                               layout.layers[head_base + li], flat);
    }

    // split pooled gradient per block
    if (input_grads) input_grads->assign(net.blocks.size(), Matrix());
    std::size_t offset = 0;
    std::size_t slice = 0;
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        const std::size_t width = layer_output(cache.blocks[bi].layers.back()).cols;
        Matrix d_block(B, width);
        if (net.pooling == Pooling::Concat) {
            for (std::size_t i = 0; i < B; ++i) {
                std::copy(d_cur.row(i) + offset, d_cur.row(i) + offset + width, d_block.row(i));
            }
            offset += width;
        } else {
            d_block = d_cur;
        }
        const std::size_t block_slice_base = slice;
        Matrix d = std::move(d_block);
        for (std::size_t li = net.blocks[bi].layers.size(); li-- > 0;) {
            d = layer_backward(net.blocks[bi].layers[li], cache.blocks[bi].layers[li], d,
                               cache.mode, layout.layers[block_slice_base + li], flat);
        }
        slice += net.blocks[bi].layers.size();
        if (input_grads) (*input_grads)[bi] = std::move(d);
    }
}

} // namespace

std::vector<double> forward(const FusedNet& net, const Batch& batch, Mode mode,
                            ForwardCache* cache, Rng* dropout_rng) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    run_forward(const_cast<FusedNet&>(net), batch, mode, c, dropout_rng, nullptr);
    return c.probs;
}

ClassWeights ClassWeights::balanced(const std::vector<double>& labels) {
    std::size_t pos = 0;
    for (double y : labels)
        if (y > 0.5) ++pos;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw data_error("class weights: need both classes");
    ClassWeights w;
    w.w_pos = static_cast<double>(labels.size()) / (2.0 * static_cast<double>(pos));
    w.w_neg = static_cast<double>(labels.size()) / (2.0 * static_cast<double>(neg));
    return w;
}

double loss_and_grad(FusedNet& net, const Batch& batch, const ClassWeights& weights,
                     double weight_decay, Mode mode, Rng* dropout_rng, Gradients& grads,
                     std::vector<Matrix>* input_grads) {
    if (batch.labels.size() != batch.size()) {
        throw usage_error("loss_and_grad: labels must match the batch");
    }
    ForwardCache cache;
    run_forward(net, batch, mode, cache, dropout_rng, nullptr);

    const std::size_t B = batch.size();
    double loss = 0.0;
    std::vector<double> d_logit(B);
    for (std::size_t i = 0; i < B; ++i) {
        const double y = batch.labels[i];
        const double w = y > 0.5 ? weights.w_pos : weights.w_neg;
        const double p = std::clamp(cache.probs[i], 1e-12, 1.0 - 1e-12);
        loss += -w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        d_logit[i] = w * (cache.probs[i] - y) / static_cast<double>(B);
    }
    loss /= static_cast<double>(B);

    const GradLayout layout = grad_layout(net);
    run_backward(net, cache, d_logit, layout, grads.flat, input_grads);

    if (weight_decay > 0.0) {
        const std::vector<double> theta = flatten_params(net);
        double l2 = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            l2 += theta[i] * theta[i];
            grads.flat[i] += weight_decay * theta[i];
        }
        loss += 0.5 * weight_decay * l2;
    }
    return loss;
}

std::vector<double> make_sampler(const std::vector<double>& labels) {
    std::size_t pos = 0;
    for (double y : labels)
        if (y > 0.5) ++pos;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) {
        throw data_error("make_sampler: both classes must be present");
    }
    std::vector<double> w(labels.size());
    const double wp = 1.0 / static_cast<double>(pos);
    const double wn = 1.0 / static_cast<double>(neg);
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = labels[i] > 0.5 ? wp : wn;
    return w;
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", 5e-4);
    c.weight_decay = j.value("weight_decay", 0.01);
    c.lr_step_epochs = j.value("lr_step_epochs", 10);
    c.lr_step_factor = j.value("lr_step_factor", 0.1);
    c.batch_size = j.value("batch_size", std::size_t{16});
    c.patience = j.value("patience", 20);
    c.max_epochs = j.value("max_epochs", 200);
    c.seed = j.value("seed", std::uint64_t{1});
    c.monitor = j.value("monitor", "auroc");
    c.dropout = j.value("dropout", 0.2);
    if (c.learning_rate <= 0 || c.batch_size == 0 || c.patience < 1 || c.max_epochs < 1) {
        throw config_error("train config: rates and sizes must be positive, patience >= 1");
    }
    if (c.monitor != "auroc" && c.monitor != "f1") {
        throw config_error(fmt::format("train config: unknown monitor '{}'", c.monitor));
    }
    return c;
}

json TrainConfig::to_json() const {
    json j;
    j["learning_rate"] = learning_rate;
    j["weight_decay"] = weight_decay;
    j["lr_step_epochs"] = lr_step_epochs;
    j["lr_step_factor"] = lr_step_factor;
    j["batch_size"] = batch_size;
    j["patience"] = patience;
    j["max_epochs"] = max_epochs;
    j["seed"] = seed;
    j["monitor"] = monitor;
    j["dropout"] = dropout;
    return j;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    const int steps = epoch / cfg.lr_step_epochs;
    return cfg.learning_rate * std::pow(cfg.lr_step_factor, steps);
}

json TrainResult::log_to_json() const {
    json arr = json::array();
    for (const auto& e : log) {
        arr.push_back({{"epoch", e.epoch},
                       {"lr", e.lr},
                       {"train_loss", e.train_loss},
                       {"val_metric", e.val_metric},
                       {"improved", e.improved}});
    }
    return arr;
}

namespace {

Batch gather(const Batch& src, const std::vector<std::size_t>& idx) {
    Batch out;
    out.block_inputs.reserve(src.block_inputs.size());
    for (const auto& m : src.block_inputs) {
        Matrix g(idx.size(), m.cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols, g.row(i));
        }
        out.block_inputs.push_back(std::move(g));
    }
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(src.labels[i]);
    return out;
}

double monitor_metric(const std::string& monitor, const std::vector<double>& scores,
                      const std::vector<double>& labels);

} // namespace

TrainResult train(const NetConfig& net_cfg, const TrainConfig& cfg, const Batch& train_set,
                  const Batch& val_set, const std::vector<std::string>& frozen_blocks,
                  const FusedNet* init) {
    FusedNet net = init ? *init : build_net(net_cfg, cfg.seed);

    std::vector<bool> frozen(net.blocks.size(), false);
    for (const auto& name : frozen_blocks) frozen[net.block_index(name)] = true;
    const bool all_frozen_and_no_head =
        net.head.layers.empty() &&
        static_cast<std::size_t>(std::count(frozen.begin(), frozen.end(), true)) == frozen.size();
    if (all_frozen_and_no_head) {
        throw config_error("train: every block frozen and no head layers; nothing to train");
    }

    const std::vector<double> sampler = make_sampler(train_set.labels);
    std::vector<double> cumulative(sampler.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < sampler.size(); ++i) {
        acc += sampler[i];
        cumulative[i] = acc;
    }

    // flat views over the parameters so the optimizer loop runs on raw arrays
    struct ParamSegment {
        double* data;
        std::size_t size;
        bool frozen;
    };
    std::vector<ParamSegment> segments;
    visit_params(net, [&](int block, std::vector<double>& v) {
        segments.push_back(
            {v.data(), v.size(), block >= 0 && frozen[static_cast<std::size_t>(block)]});
    });

    Rng sample_rng = Rng(cfg.seed).fork("sampler");
    Rng dropout_rng = Rng(cfg.seed).fork("dropout");

    const ClassWeights weights = ClassWeights::balanced(train_set.labels);

    std::vector<double> adam_m, adam_v;
    long long adam_t = 0;

    TrainResult result;
    result.best_net = net;
    result.best_val_metric = -1.0;
    int since_best = 0;

    const std::size_t N = train_set.labels.size();
    const std::size_t steps = (N + cfg.batch_size - 1) / cfg.batch_size;

    const GradLayout layout = grad_layout(net);
    std::vector<double> g;
    ForwardCache cache; // buffers reused across steps

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        double loss_sum = 0.0;

        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<std::size_t> idx(cfg.batch_size);
            for (std::size_t k = 0; k < cfg.batch_size; ++k) {
                const double u = sample_rng.uniform() * acc;
                idx[k] = static_cast<std::size_t>(
                    std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                    cumulative.begin());
                if (idx[k] >= N) idx[k] = N - 1;
            }
            Batch batch = gather(train_set, idx);

            run_forward(net, batch, Mode::Train, cache, &dropout_rng,
                        frozen_blocks.empty() ? nullptr : &frozen);
            double loss = 0.0;
            std::vector<double> d_logit(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const double y = batch.labels[i];
                const double w = y > 0.5 ? weights.w_pos : weights.w_neg;
                const double p = std::clamp(cache.probs[i], 1e-12, 1.0 - 1e-12);
                loss += -w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
                d_logit[i] = w * (cache.probs[i] - y) / static_cast<double>(batch.size());
            }
            loss /= static_cast<double>(batch.size());
            loss_sum += loss;
            if (!std::isfinite(loss)) {
                throw internal_error(fmt::format(
                    "training aborted: non-finite loss at epoch {} step {} (lr {})", epoch, step,
                    lr));
            }

            run_backward(net, cache, d_logit, layout, g, nullptr);

            if (adam_m.empty()) {
                adam_m.assign(g.size(), 0.0);
                adam_v.assign(g.size(), 0.0);
            }
            ++adam_t;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));

            // weight decay shrinks parameters directly; Adam moments see only
            // the data gradient
            const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
            const double shrink = 1.0 - lr * cfg.weight_decay;
            std::size_t cursor = 0;
            for (const auto& seg : segments) {
                if (seg.frozen) {
                    cursor += seg.size;
                    continue;
                }
                double* __restrict theta = seg.data;
                double* __restrict m = adam_m.data() + cursor;
                double* __restrict v = adam_v.data() + cursor;
                const double* __restrict gs = g.data() + cursor;
                for (std::size_t i = 0; i < seg.size; ++i) {
                    m[i] = b1 * m[i] + (1.0 - b1) * gs[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * gs[i] * gs[i];
                    theta[i] = theta[i] * shrink -
                               lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
                }
                cursor += seg.size;
            }
        }

        // validation, eval mode
        const std::vector<double> val_scores = predict(net, val_set);
        const double metric = monitor_metric(cfg.monitor, val_scores, val_set.labels);

        EpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.train_loss = loss_sum / static_cast<double>(steps);
        entry.val_metric = metric;
        entry.improved = metric > result.best_val_metric;
        result.log.push_back(entry);

        if (entry.improved) {
            result.best_val_metric = metric;
            result.best_epoch = epoch;
            result.best_net = net;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) break;
        }
    }
    if (result.best_epoch < 0) result.best_net = net;
    return result;
}

std::vector<double> integrated_gradients(const FusedNet& net, const Batch& x,
                                         const Batch& baseline, int steps,
                                         AttributionOutput output) {
    if (steps < 2) throw usage_error("integrated_gradients: steps must be >= 2");
    if (x.size() != 1 || baseline.size() != 1) {
        throw usage_error("integrated_gradients: one example at a time");
    }
    FusedNet& mutable_net = const_cast<FusedNet&>(net);

    std::vector<double> total; // concatenated over blocks
    std::size_t width = 0;
    for (const auto& m : x.block_inputs) width += m.cols;
    total.assign(width, 0.0);

    // all midpoint interpolation points in one eval batch; eval mode keeps the
    // rows independent, so per-row input gradients are exact
    Batch points;
    points.labels.assign(static_cast<std::size_t>(steps), 0.0);
    for (std::size_t bi = 0; bi < x.block_inputs.size(); ++bi) {
        Matrix m(static_cast<std::size_t>(steps), x.block_inputs[bi].cols);
        for (int k = 1; k <= steps; ++k) {
            const double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
            for (std::size_t c = 0; c < m.cols; ++c) {
                const double b = baseline.block_inputs[bi].at(0, c);
                m.at(static_cast<std::size_t>(k - 1), c) =
                    b + alpha * (x.block_inputs[bi].at(0, c) - b);
            }
        }
        points.block_inputs.push_back(std::move(m));
    }

    ForwardCache cache;
    run_forward(mutable_net, points, Mode::Eval, cache, nullptr, nullptr);
    std::vector<double> d_logit(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        d_logit[static_cast<std::size_t>(k)] =
            output == AttributionOutput::Probability
                ? cache.probs[static_cast<std::size_t>(k)] *
                      (1.0 - cache.probs[static_cast<std::size_t>(k)])
                : 1.0;
    }

    std::vector<double> flat_grads;
    std::vector<Matrix> input_grads;
    run_backward(mutable_net, cache, d_logit, grad_layout(mutable_net), flat_grads, &input_grads);

    std::size_t off = 0;
    for (const auto& g : input_grads) {
        for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) total[off + c] += g.at(r, c);
        }
        off += g.cols;
    }

    std::size_t offset = 0;
    std::vector<double> attr(width, 0.0);
    for (std::size_t bi = 0; bi < x.block_inputs.size(); ++bi) {
        for (std::size_t c = 0; c < x.block_inputs[bi].cols; ++c) {
            const double diff = x.block_inputs[bi].at(0, c) - baseline.block_inputs[bi].at(0, c);
            attr[offset + c] = diff * total[offset + c] / static_cast<double>(steps);
        }
        offset += x.block_inputs[bi].cols;
    }
    return attr;
}

std::vector<double> predict(const FusedNet& net, const Batch& batch) {
    ForwardCache cache;
    run_forward(const_cast<FusedNet&>(net), batch, Mode::Eval, cache, nullptr, nullptr);
    return cache.probs;
}

namespace {

double monitor_metric(const std::string& monitor, const std::vector<double>& scores,
                      const std::vector<double>& labels) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] > 0.5 ? 1 : 0;
    if (monitor == "f1") {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const bool pred = scores[i] >= 0.5;
            if (pred && y[i]) ++tp;
            else if (pred && !y[i]) ++fp;
            else if (!pred && y[i]) ++fn;
        }
        const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
        return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    }
    return metrics::auroc(scores, y).value_or(0.0);
}

} // namespace

} // namespace icumort::nn
