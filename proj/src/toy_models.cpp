#include "dermpolar/toy_models.hpp"

#include <cmath>

#include "dermpolar/errors.hpp"
#include "dermpolar/rng.hpp"
#include "dermpolar/structure_layers.hpp"

namespace dermpolar {

namespace {

int conv_extent(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

void check_conv_input(const ValueGrid& input, const ConvLayer& layer) {
    if (input.rank() != 3) {
        throw InvalidShape("convolution input must be H x W x C");
    }
    if (layer.weight.rank() != 4 || layer.weight.extent(2) != input.extent(2)) {
        throw ShapeError("convolution weight does not match the input channel count");
    }
    if (layer.stride < 1) {
        throw InvalidShape("convolution stride must be positive");
    }
}

} // namespace

ConvLayer ConvLayer::seeded(int kernel, int in_channels, int out_channels, int stride,
                            int pad, std::uint64_t seed) {
    Rng rng(seed);
    ConvLayer layer;
    layer.stride = stride;
    layer.pad = pad;
    layer.weight = ValueGrid({kernel, kernel, in_channels, out_channels}, 0.0);
    const double scale =
        1.0 / std::sqrt(static_cast<double>(kernel) * kernel * in_channels);
    for (std::size_t i = 0; i < layer.weight.size(); ++i) {
        layer.weight[i] = rng.normal() * scale;
    }
    layer.bias = ValueGrid({out_channels}, 0.0);
    return layer;
}

ValueGrid conv2d(const ValueGrid& input, const ConvLayer& layer) {
    check_conv_input(input, layer);
    const int h = input.extent(0);
    const int w = input.extent(1);
    const int in_c = input.extent(2);
    const int kh = layer.weight.extent(0);
    const int kw = layer.weight.extent(1);
    const int out_c = layer.weight.extent(3);
    const int oh = conv_extent(h, kh, layer.stride, layer.pad);
    const int ow = conv_extent(w, kw, layer.stride, layer.pad);
    if (oh < 1 || ow < 1) {
        throw ShapeError("convolution output would be empty");
    }

    ValueGrid out({oh, ow, out_c}, 0.0);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int ky = 0; ky < kh; ++ky) {
                const int sy = oy * layer.stride - layer.pad + ky;
                if (sy < 0 || sy >= h) {
                    continue;
                }
                for (int kx = 0; kx < kw; ++kx) {
                    const int sx = ox * layer.stride - layer.pad + kx;
                    if (sx < 0 || sx >= w) {
                        continue;
                    }
                    for (int i = 0; i < in_c; ++i) {
                        const double v = input.at(sy, sx, i);
                        for (int o = 0; o < out_c; ++o) {
                            out.at(oy, ox, o) += v * layer.weight.at(ky, kx, i, o);
                        }
                    }
                }
            }
            for (int o = 0; o < out_c; ++o) {
                out.at(oy, ox, o) += layer.bias[static_cast<std::size_t>(o)];
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const ValueGrid& input, const ConvLayer& layer,
                          const ValueGrid& grad_out) {
    check_conv_input(input, layer);
    const int h = input.extent(0);
    const int w = input.extent(1);
    const int in_c = input.extent(2);
    const int kh = layer.weight.extent(0);
    const int kw = layer.weight.extent(1);
    const int out_c = layer.weight.extent(3);
    const int oh = conv_extent(h, kh, layer.stride, layer.pad);
    const int ow = conv_extent(w, kw, layer.stride, layer.pad);
    if (grad_out.rank() != 3 || grad_out.extent(0) != oh || grad_out.extent(1) != ow ||
        grad_out.extent(2) != out_c) {
        throw ShapeError("convolution gradient has the wrong shape");
    }

    ConvGrads grads;
    grads.input = ValueGrid({h, w, in_c}, 0.0);
    grads.weight = ValueGrid({kh, kw, in_c, out_c}, 0.0);
    grads.bias = ValueGrid({out_c}, 0.0);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int o = 0; o < out_c; ++o) {
                grads.bias[static_cast<std::size_t>(o)] += grad_out.at(oy, ox, o);
            }
            for (int ky = 0; ky < kh; ++ky) {
                const int sy = oy * layer.stride - layer.pad + ky;
                if (sy < 0 || sy >= h) {
                    continue;
                }
                for (int kx = 0; kx < kw; ++kx) {
                    const int sx = ox * layer.stride - layer.pad + kx;
                    if (sx < 0 || sx >= w) {
                        continue;
                    }
                    for (int i = 0; i < in_c; ++i) {
                        const double v = input.at(sy, sx, i);
                        double acc = 0.0;
                        for (int o = 0; o < out_c; ++o) {
                            const double g = grad_out.at(oy, ox, o);
                            grads.weight.at(ky, kx, i, o) += v * g;
                            acc += layer.weight.at(ky, kx, i, o) * g;
                        }
                        grads.input.at(sy, sx, i) += acc;
                    }
                }
            }
        }
    }
    return grads;
}

ValueGrid relu(const ValueGrid& input) {
    ValueGrid out = input;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] < 0.0) {
            out[i] = 0.0;
        }
    }
    return out;
}

ValueGrid relu_backward(const ValueGrid& input, const ValueGrid& grad_out) {
    if (!input.same_shape(grad_out)) {
        throw ShapeError("relu gradient has the wrong shape");
    }
    ValueGrid grad = grad_out;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (input[i] <= 0.0) {
            grad[i] = 0.0;
        }
    }
    return grad;
}

ToyScoreNet ToyScoreNet::seeded(std::uint64_t seed) {
    ToyScoreNet net;
    net.c1_ = ConvLayer::seeded(5, 3, 16, 4, 2, seed * 3 + 1);
    net.c2_ = ConvLayer::seeded(3, 16, 16, 1, 1, seed * 3 + 2);
    net.c3_ = ConvLayer::seeded(3, 16, kStructureCount, 1, 1, seed * 3 + 3);
    return net;
}

ValueGrid ToyScoreNet::forward(const ValueGrid& image) const {
    ValueGrid a = relu(conv2d(image, c1_));
    a = relu(conv2d(a, c2_));
    return conv2d(a, c3_);
}

ToyBackbone ToyBackbone::seeded(int channels, std::uint64_t seed) {
    if (channels < 1) {
        throw InvalidShape("backbone channel count must be positive");
    }
    ToyBackbone net;
    net.channels_ = channels;
    net.c1_ = ConvLayer::seeded(5, 3, 8, 4, 2, seed * 5 + 1);
    net.c2_ = ConvLayer::seeded(5, 8, 16, 4, 2, seed * 5 + 2);
    net.c3_ = ConvLayer::seeded(3, 16, channels, 2, 1, seed * 5 + 3);
    return net;
}

ValueGrid ToyBackbone::forward(const ValueGrid& image) const {
    ValueGrid a = relu(conv2d(image, c1_));
    a = relu(conv2d(a, c2_));
    return relu(conv2d(a, c3_));
}

ToySegmenter ToySegmenter::seeded(std::uint64_t seed) {
    ToySegmenter net;
    net.c1_ = ConvLayer::seeded(3, 1, 8, 1, 1, seed * 7 + 1);
    net.c2_ = ConvLayer::seeded(3, 8, 8, 1, 1, seed * 7 + 2);
    net.c3_ = ConvLayer::seeded(3, 8, kStructureCount, 1, 1, seed * 7 + 3);
    return net;
}

ValueGrid ToySegmenter::forward(const ValueGrid& input, Trace* trace) const {
    ValueGrid z1 = conv2d(input, c1_);
    ValueGrid a1 = relu(z1);
    ValueGrid z2 = conv2d(a1, c2_);
    ValueGrid a2 = relu(z2);
    ValueGrid scores = conv2d(a2, c3_);
    if (trace != nullptr) {
        trace->input = input;
        trace->z1 = std::move(z1);
        trace->a1 = a1;
        trace->z2 = std::move(z2);
        trace->a2 = a2;
        trace->scores = scores;
    }
    return scores;
}

std::vector<ValueGrid*> ToySegmenter::parameters() {
    return {&c1_.weight, &c1_.bias, &c2_.weight, &c2_.bias, &c3_.weight, &c3_.bias};
}

std::vector<ValueGrid> ToySegmenter::gradients(const Trace& trace,
                                               const ValueGrid& grad_scores) const {
    ConvGrads g3 = conv2d_backward(trace.a2, c3_, grad_scores);
    ValueGrid d2 = relu_backward(trace.z2, g3.input);
    ConvGrads g2 = conv2d_backward(trace.a1, c2_, d2);
    ValueGrid d1 = relu_backward(trace.z1, g2.input);
    ConvGrads g1 = conv2d_backward(trace.input, c1_, d1);
    return {std::move(g1.weight), std::move(g1.bias), std::move(g2.weight),
            std::move(g2.bias),   std::move(g3.weight), std::move(g3.bias)};
}

Adam::Adam(std::vector<ValueGrid*> params, double learning_rate)
    : params_(std::move(params)), lr_(learning_rate) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ValueGrid* p : params_) {
        m_.emplace_back(p->shape(), 0.0);
        v_.emplace_back(p->shape(), 0.0);
    }
}

void Adam::step(const std::vector<ValueGrid>& grads) {
    if (grads.size() != params_.size()) {
        throw ShapeError("gradient list does not match the parameter list");
    }
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        ValueGrid& p = *params_[k];
        const ValueGrid& g = grads[k];
        if (!p.same_shape(g)) {
            throw ShapeError("gradient shape does not match its parameter");
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m_[k][i] = beta1 * m_[k][i] + (1.0 - beta1) * g[i];
            v_[k][i] = beta2 * v_[k][i] + (1.0 - beta2) * g[i] * g[i];
            const double mh = m_[k][i] / bc1;
            const double vh = v_[k][i] / bc2;
            p[i] -= lr_ * mh / (std::sqrt(vh) + eps);
        }
    }
}

} // namespace dermpolar
