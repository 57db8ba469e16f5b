#include "bro/encoder.hpp"

#include <cmath>

namespace bro::enc {

namespace {

Index out_extent(Index in, Index stride) { return (in - 1) / stride + 1; }

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in) {
  const Index oh = out_extent(in.height, layer.stride);
  const Index ow = out_extent(in.width, layer.stride);
  FeatureMap out = FeatureMap::zeros(layer.out_channels, oh, ow);
  for (Index o = 0; o < layer.out_channels; ++o) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar sum = layer.bias(o);
        for (Index c = 0; c < layer.in_channels; ++c) {
          for (Index ky = 0; ky < 3; ++ky) {
            const Index iy = oy * layer.stride + ky - 1;
            if (iy < 0 || iy >= in.height) continue;
            for (Index kx = 0; kx < 3; ++kx) {
              const Index ix = ox * layer.stride + kx - 1;
              if (ix < 0 || ix >= in.width) continue;
              sum += layer.weight(o, c * 9 + ky * 3 + kx) * in.at(c, iy, ix);
            }
          }
        }
        out.values(o, oy * ow + ox) = sum;
      }
    }
  }
  return out;
}

FeatureMap relu(const FeatureMap& f) {
  FeatureMap out = f;
  out.values = out.values.cwiseMax(0.0);
  return out;
}

}  // namespace

Encoder make_encoder(Index d, std::uint64_t seed) {
  if (d < 1) throw ConfigError("make_encoder: channel count must be >= 1");
  Rng rng(seed);
  Encoder enc;
  const Index widths[4] = {1, 8, 16, d};
  const Index strides[3] = {2, 2, 1};
  for (int i = 0; i < 3; ++i) {
    ConvLayer layer;
    layer.in_channels = widths[i];
    layer.out_channels = widths[i + 1];
    layer.stride = strides[i];
    const Index fan_in = layer.in_channels * 9;
    const Scalar std_dev = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
    layer.weight.resize(layer.out_channels, fan_in);
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      for (Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = std_dev * rng.normal();
      }
    }
    layer.bias = Vector::Zero(layer.out_channels);
    enc.layers.push_back(std::move(layer));
  }
  return enc;
}

Activations forward(const Encoder& enc, const Matrix& image) {
  if (image.rows() % 4 != 0 || image.cols() % 4 != 0) {
    throw DimensionError("encoder forward: image extents must be divisible by 4, got " +
                         shape_string(image.rows(), image.cols()));
  }
  Activations acts;
  FeatureMap cur(1, image.rows(), image.cols());
  for (Index y = 0; y < image.rows(); ++y) {
    for (Index x = 0; x < image.cols(); ++x) {
      cur.at(0, y, x) = image(y, x);
    }
  }
  for (const ConvLayer& layer : enc.layers) {
    acts.inputs.push_back(cur);
    FeatureMap pre = conv_forward(layer, cur);
    acts.pre.push_back(pre);
    cur = relu(pre);
  }
  acts.output = cur;
  return acts;
}

Grads zero_grads(const Encoder& enc) {
  Grads g;
  for (const ConvLayer& layer : enc.layers) {
    g.d_weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    g.d_bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return g;
}

Grads& Grads::operator+=(const Grads& other) {
  for (std::size_t i = 0; i < d_weight.size(); ++i) {
    d_weight[i] += other.d_weight[i];
    d_bias[i] += other.d_bias[i];
  }
  return *this;
}

void Grads::scale(Scalar factor) {
  for (std::size_t i = 0; i < d_weight.size(); ++i) {
    d_weight[i] *= factor;
    d_bias[i] *= factor;
  }
}

Grads backward(const Encoder& enc, const Activations& acts, const FeatureMap& d_output) {
  Grads grads = zero_grads(enc);
  FeatureMap d_cur = d_output;
  for (int i = static_cast<int>(enc.layers.size()) - 1; i >= 0; --i) {
    const ConvLayer& layer = enc.layers[static_cast<std::size_t>(i)];
    const FeatureMap& pre = acts.pre[static_cast<std::size_t>(i)];
    const FeatureMap& in = acts.inputs[static_cast<std::size_t>(i)];
    if (d_cur.channels != pre.channels || d_cur.height != pre.height ||
        d_cur.width != pre.width) {
      throw DimensionError("encoder backward: gradient shape mismatch at layer " +
                           std::to_string(i));
    }
    FeatureMap dz = d_cur;
    for (Index r = 0; r < dz.values.rows(); ++r) {
      for (Index c = 0; c < dz.values.cols(); ++c) {
        if (pre.values(r, c) <= 0) dz.values(r, c) = 0;
      }
    }
    Matrix& dw = grads.d_weight[static_cast<std::size_t>(i)];
    Vector& db = grads.d_bias[static_cast<std::size_t>(i)];
    FeatureMap d_in = FeatureMap::zeros(in.channels, in.height, in.width);
    const Index ow = dz.width;
    for (Index o = 0; o < layer.out_channels; ++o) {
      for (Index oy = 0; oy < dz.height; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          const Scalar g = dz.values(o, oy * ow + ox);
          if (g == 0) continue;
          db(o) += g;
          for (Index c = 0; c < layer.in_channels; ++c) {
            for (Index ky = 0; ky < 3; ++ky) {
              const Index iy = oy * layer.stride + ky - 1;
              if (iy < 0 || iy >= in.height) continue;
              for (Index kx = 0; kx < 3; ++kx) {
                const Index ix = ox * layer.stride + kx - 1;
                if (ix < 0 || ix >= in.width) continue;
                dw(o, c * 9 + ky * 3 + kx) += g * in.at(c, iy, ix);
                d_in.values(c, iy * in.width + ix) += g * layer.weight(o, c * 9 + ky * 3 + kx);
              }
            }
          }
        }
      }
    }
    d_cur = std::move(d_in);
  }
  return grads;
}

}  // namespace bro::enc
