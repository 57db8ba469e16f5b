#include "bro/spectrum.hpp"

#include "bro/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace bro::spectrum {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_pow2(std::vector<Complex>& v, bool inverse) {
  const std::size_t n = v.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(v[i], v[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const Scalar angle = (inverse ? 1.0 : -1.0) * kTau / static_cast<Scalar>(len);
    const Complex step(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      Complex w(1, 0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const Complex even = v[i + k];
        const Complex odd = v[i + k + len / 2] * w;
        v[i + k] = even + odd;
        v[i + k + len / 2] = even - odd;
        w *= step;
      }
    }
  }
}

Complex chirp(std::uint64_t index, std::size_t n, bool inverse) {
  // exp(±i*pi*index^2/n) with the square reduced mod 2n to keep the angle small.
  const std::uint64_t sq = (index * index) % (2 * static_cast<std::uint64_t>(n));
  const Scalar angle =
      (inverse ? 1.0 : -1.0) * (kTau / 2.0) * static_cast<Scalar>(sq) / static_cast<Scalar>(n);
  return {std::cos(angle), std::sin(angle)};
}

void bluestein(std::vector<Complex>& v, bool inverse) {
  const std::size_t n = v.size();
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<Complex> a(m, Complex(0, 0)), b(m, Complex(0, 0));
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = v[i] * chirp(i, n, inverse);
    const Complex c = chirp(i, n, !inverse);
    b[i] = c;
    if (i != 0) b[m - i] = c;
  }
  fft_pow2(a, false);
  fft_pow2(b, false);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  fft_pow2(a, true);
  const Scalar scale = 1.0 / static_cast<Scalar>(m);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = a[i] * scale * chirp(i, n, inverse);
  }
}

}  // namespace

void dft_inplace(std::vector<Complex>& values, bool inverse) {
  if (values.size() <= 1) return;
  if (is_pow2(values.size())) {
    fft_pow2(values, inverse);
  } else {
    bluestein(values, inverse);
  }
}

Matrix magnitude_spectrum(const Matrix& image) {
  const Index h = image.rows(), w = image.cols();
  if (h < 2 || w < 2) {
    throw DimensionError("magnitude_spectrum: image must be at least 2x2, got " +
                         shape_string(h, w));
  }
  std::vector<std::vector<Complex>> rows(static_cast<std::size_t>(h));
  for (Index y = 0; y < h; ++y) {
    auto& row = rows[static_cast<std::size_t>(y)];
    row.resize(static_cast<std::size_t>(w));
    for (Index x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = Complex(image(y, x), 0);
    dft_inplace(row);
  }
  Matrix out(h, w);
  std::vector<Complex> col(static_cast<std::size_t>(h));
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] =
        rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
    dft_inplace(col);
    for (Index y = 0; y < h; ++y) out(y, x) = std::abs(col[static_cast<std::size_t>(y)]);
  }
  return out;
}

Scalar spectral_entropy(const Matrix& spectrum, EntropyBase base, SpectrumWeight weight) {
  Scalar total = 0;
  for (Index y = 0; y < spectrum.rows(); ++y) {
    for (Index x = 0; x < spectrum.cols(); ++x) {
      const Scalar s = spectrum(y, x);
      if (s < 0) throw DegenerateInput("spectral_entropy: negative spectrum entry");
      total += weight == SpectrumWeight::Power ? s * s : s;
    }
  }
  if (total == 0) throw DegenerateInput("spectral_entropy: spectrum is identically zero");
  Scalar entropy = 0;
  for (Index y = 0; y < spectrum.rows(); ++y) {
    for (Index x = 0; x < spectrum.cols(); ++x) {
      const Scalar s = spectrum(y, x);
      const Scalar p = (weight == SpectrumWeight::Power ? s * s : s) / total;
      if (p > 0) entropy -= p * std::log(p);
    }
  }
  if (base == EntropyBase::Bit) entropy /= std::log(2.0);
  return entropy;
}

NormalFit fit_normal(const std::vector<Scalar>& values) {
  if (values.size() < 2) {
    throw DegenerateInput("fit_normal: need at least 2 values, got " +
                          std::to_string(values.size()));
  }
  NormalFit fit;
  const auto n = static_cast<Scalar>(values.size());
  for (Scalar v : values) fit.mean += v;
  fit.mean /= n;
  Scalar ss = 0;
  for (Scalar v : values) ss += (v - fit.mean) * (v - fit.mean);
  if (ss == 0) throw DegenerateInput("fit_normal: zero variance");
  fit.std = std::sqrt(ss / (n - 1));
  return fit;
}

Scalar normal_pdf(Scalar x, const NormalFit& fit) {
  const Scalar z = (x - fit.mean) / fit.std;
  return std::exp(-0.5 * z * z) / (fit.std * std::sqrt(kTau));
}

SpectrumReport analyze_group(const std::vector<Matrix>& images, std::string label,
                             EntropyBase base, SpectrumWeight weight) {
  if (images.size() < 2) {
    throw DegenerateInput("analyze_group: group '" + label + "' needs at least 2 images");
  }
  SpectrumReport report;
  report.group_label = std::move(label);
  report.per_image_entropy.reserve(images.size());
  for (const Matrix& img : images) {
    report.per_image_entropy.push_back(spectral_entropy(magnitude_spectrum(img), base, weight));
  }
  const NormalFit fit = fit_normal(report.per_image_entropy);
  report.fitted_mean = fit.mean;
  report.fitted_std = fit.std;
  return report;
}

std::pair<SpectrumReport, SpectrumReport> compare_groups(const std::vector<Matrix>& group_a,
                                                         const std::vector<Matrix>& group_b,
                                                         std::string label_a, std::string label_b,
                                                         EntropyBase base, SpectrumWeight weight) {
  return {analyze_group(group_a, std::move(label_a), base, weight),
          analyze_group(group_b, std::move(label_b), base, weight)};
}

Matrix broadband_texture(std::uint64_t seed, Index height, Index width) {
  Rng rng(seed);
  Matrix img(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) img(y, x) = rng.uniform();
  // A few random straight step edges on top of the noise.
  const int edges = 3 + static_cast<int>(rng.below(3));
  for (int e = 0; e < edges; ++e) {
    const Scalar angle = rng.uniform(0.0, kTau);
    const Scalar nx = std::cos(angle), ny = std::sin(angle);
    const Scalar off = rng.uniform(0.25, 0.75);
    const Scalar amp = rng.uniform(-0.3, 0.3);
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        const Scalar px = static_cast<Scalar>(x) / static_cast<Scalar>(width) - off;
        const Scalar py = static_cast<Scalar>(y) / static_cast<Scalar>(height) - off;
        if (px * nx + py * ny > 0) img(y, x) += amp;
      }
    }
  }
  return img.array().min(1.0).max(0.0).matrix();
}

Matrix lowpass_texture(std::uint64_t seed, Index height, Index width) {
  Rng rng(seed);
  Matrix img(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) img(y, x) = rng.uniform();
  // Two passes of a separable box blur.
  const Index radius = std::max<Index>(2, std::min(height, width) / 16);
  for (int pass = 0; pass < 2; ++pass) {
    Matrix tmp(height, width);
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        Scalar sum = 0;
        for (Index dx = -radius; dx <= radius; ++dx) {
          sum += img(y, std::clamp<Index>(x + dx, 0, width - 1));
        }
        tmp(y, x) = sum / static_cast<Scalar>(2 * radius + 1);
      }
    }
    for (Index x = 0; x < width; ++x) {
      for (Index y = 0; y < height; ++y) {
        Scalar sum = 0;
        for (Index dy = -radius; dy <= radius; ++dy) {
          sum += tmp(std::clamp<Index>(y + dy, 0, height - 1), x);
        }
        img(y, x) = sum / static_cast<Scalar>(2 * radius + 1);
      }
    }
  }
  const Scalar mn = img.minCoeff(), mx = img.maxCoeff();
  if (mx - mn < 1e-12) return Matrix::Constant(height, width, 0.5);
  return ((img.array() - mn) / (mx - mn)).matrix();
}

}  // namespace bro::spectrum
