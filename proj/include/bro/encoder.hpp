#pragma once

#include <cstdint>
#include <vector>

#include "bro/tensor.hpp"

namespace bro::enc {

/// 3x3 convolution, zero padding 1. Weight rows are output channels; row
/// layout is [in_channel][ky][kx].
struct ConvLayer {
  Index in_channels = 0, out_channels = 0, stride = 1;
  Matrix weight;
  Vector bias;
};

struct Encoder {
  std::vector<ConvLayer> layers;
  Index out_channels() const { return layers.empty() ? 0 : layers.back().out_channels; }
};

/// Channels 1 -> 8 -> 16 -> d with strides (2, 2, 1); He-initialized weights,
/// zero biases. Output spatial extent is input/4.
Encoder make_encoder(Index d, std::uint64_t seed);

struct Activations {
  std::vector<FeatureMap> inputs;  // input of each layer
  std::vector<FeatureMap> pre;     // pre-activation of each layer
  FeatureMap output;               // after the last ReLU
};

Activations forward(const Encoder& enc, const Matrix& image);

struct Grads {
  std::vector<Matrix> d_weight;
  std::vector<Vector> d_bias;

  Grads& operator+=(const Grads& other);
  void scale(Scalar factor);
};

Grads zero_grads(const Encoder& enc);

/// Backpropagates d_output through the cached activations; gradients with
/// respect to the input image are discarded (images are not trainable).
Grads backward(const Encoder& enc, const Activations& acts, const FeatureMap& d_output);

}  // namespace bro::enc
