#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bro/common.hpp"

namespace bro::spectrum {

using Complex = std::complex<Scalar>;

/// Unnormalized discrete Fourier transform of arbitrary length; radix-2 when
/// the size is a power of two, Bluestein's algorithm otherwise. The inverse
/// flag conjugates the kernel but applies no 1/N scaling.
void dft_inplace(std::vector<Complex>& values, bool inverse = false);

/// Modulus of the 2-D DFT; DC component at (0, 0).
Matrix magnitude_spectrum(const Matrix& image);

enum class EntropyBase { Nat, Bit };
enum class SpectrumWeight { Magnitude, Power };

/// Entropy of the spectrum normalized to a probability distribution.
Scalar spectral_entropy(const Matrix& spectrum, EntropyBase base = EntropyBase::Nat,
                        SpectrumWeight weight = SpectrumWeight::Magnitude);

struct NormalFit {
  Scalar mean = 0;
  Scalar std = 0;  // sample (n-1) standard deviation
};

NormalFit fit_normal(const std::vector<Scalar>& values);
Scalar normal_pdf(Scalar x, const NormalFit& fit);

struct SpectrumReport {
  std::vector<Scalar> per_image_entropy;
  Scalar fitted_mean = 0;
  Scalar fitted_std = 0;
  std::string group_label;
};

SpectrumReport analyze_group(const std::vector<Matrix>& images, std::string label,
                             EntropyBase base = EntropyBase::Nat,
                             SpectrumWeight weight = SpectrumWeight::Magnitude);

std::pair<SpectrumReport, SpectrumReport> compare_groups(
    const std::vector<Matrix>& group_a, const std::vector<Matrix>& group_b,
    std::string label_a = "a", std::string label_b = "b",
    EntropyBase base = EntropyBase::Nat, SpectrumWeight weight = SpectrumWeight::Magnitude);

/// Synthetic corpora for the direction experiment: broadband textures are
/// white noise plus step edges, low-pass ones are box-blurred noise.
Matrix broadband_texture(std::uint64_t seed, Index height, Index width);
Matrix lowpass_texture(std::uint64_t seed, Index height, Index width);

}  // namespace bro::spectrum
