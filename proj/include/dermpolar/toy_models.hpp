#pragma once

#include <cstdint>
#include <vector>

#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// Zero-padded direct convolution. Weights are kh x kw x in x out.
struct ConvLayer {
    int stride = 1;
    int pad = 0;
    ValueGrid weight;
    ValueGrid bias;

    static ConvLayer seeded(int kernel, int in_channels, int out_channels, int stride,
                            int pad, std::uint64_t seed);
};

ValueGrid conv2d(const ValueGrid& input, const ConvLayer& layer);

struct ConvGrads {
    ValueGrid input;
    ValueGrid weight;
    ValueGrid bias;
};

ConvGrads conv2d_backward(const ValueGrid& input, const ConvLayer& layer,
                          const ValueGrid& grad_out);

ValueGrid relu(const ValueGrid& input);
ValueGrid relu_backward(const ValueGrid& input, const ValueGrid& grad_out);

/// Stand-in structure scorer: RGB view in, one raw score map per
/// structure out at a quarter of the input resolution. Fixed weights,
/// deterministic in the seed.
class ToyScoreNet {
public:
    static ToyScoreNet seeded(std::uint64_t seed);

    /// H x W x 3 in [0, 1] -> (H/4) x (W/4) x kStructureCount scores.
    ValueGrid forward(const ValueGrid& image) const;

private:
    ConvLayer c1_, c2_, c3_;
};

/// Stand-in feature extractor: RGB view in, (H/32) x (W/32) x channels
/// features out. Fixed weights, deterministic in the seed.
class ToyBackbone {
public:
    static ToyBackbone seeded(int channels, std::uint64_t seed);

    ValueGrid forward(const ValueGrid& image) const;

    int channels() const { return channels_; }

private:
    int channels_ = 0;
    ConvLayer c1_, c2_, c3_;
};

/// Small trainable scorer for recovery experiments: grayscale grid in,
/// structure scores out at the same resolution.
class ToySegmenter {
public:
    static ToySegmenter seeded(std::uint64_t seed);

    struct Trace {
        ValueGrid input, z1, a1, z2, a2, scores;
    };

    ValueGrid forward(const ValueGrid& input, Trace* trace = nullptr) const;

    std::vector<ValueGrid*> parameters();

    /// Parameter gradients in parameters() order for a score gradient.
    std::vector<ValueGrid> gradients(const Trace& trace, const ValueGrid& grad_scores) const;

private:
    ConvLayer c1_, c2_, c3_;
};

/// Adam optimizer over externally owned parameter grids.
class Adam {
public:
    Adam(std::vector<ValueGrid*> params, double learning_rate);

    void step(const std::vector<ValueGrid>& grads);

private:
    std::vector<ValueGrid*> params_;
    std::vector<ValueGrid> m_;
    std::vector<ValueGrid> v_;
    double lr_;
    int t_ = 0;
};

} // namespace dermpolar
