#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bro/common.hpp"

namespace bro::episodes {

struct PhantomSpec {
  Index height = 64, width = 64;
  Index organs = 2;
  // Organ radii as fractions of min(height, width).
  Scalar min_radius_frac = 0.10, max_radius_frac = 0.20;
  // Intensity ranges deliberately overlap: foreground and background share
  // most of their dynamic range, which is the regime the pipeline targets.
  Scalar background_low = 0.35, background_high = 0.65;
  Scalar organ_low = 0.30, organ_high = 0.70;
  // Small deterministic per-class intensity offset, alternating in sign.
  Scalar class_shift = 0.03;
  Scalar noise = 0.01;
  Index max_retries = 200;
};

struct Phantom {
  Matrix image;  // height x width, values in [0, 1]
  std::vector<Mask> organ_masks;
  std::vector<int> organ_classes;
  std::uint64_t seed = 0;
};

Phantom phantom_generate(std::uint64_t seed, const PhantomSpec& spec);

/// SLIC-style superpixels: k-means over (x/S, y/S, lambda * intensity) from a
/// regular seed grid, windowed assignment, then connectivity enforcement.
/// Resulting label count is within [1, 2k].
LabelMap superpixels(const Matrix& image, Index k, Scalar lambda = 10.0, Index iterations = 10);

struct WarpParams {
  Scalar rotation = 0;  // radians
  Scalar scale = 1;
  Scalar shift_x = 0, shift_y = 0;  // pixels
  Scalar gamma = 1;
};

WarpParams sample_warp(Rng& rng, Index height, Index width);

/// Applies the same affine warp to image (bilinear) and mask (nearest), plus
/// gamma jitter on the image. Identity parameters reproduce the pair exactly.
std::pair<Matrix, Mask> warp_pair(const Matrix& image, const Mask& mask, const WarpParams& params);

std::pair<Matrix, Mask> augment_pair(const Matrix& image, const Mask& mask, std::uint64_t seed);

enum class EpisodeSource { SupervisedPhantom, SslSuperpixel };

struct EpisodeConfig {
  EpisodeSource source = EpisodeSource::SupervisedPhantom;
  PhantomSpec phantom;
  Index superpixel_count = 32;
  // Pseudo-foreground superpixels must cover this fraction range of pixels.
  Scalar min_pseudo_frac = 0.01, max_pseudo_frac = 0.30;
  Index max_retries = 64;
};

struct Episode {
  Matrix support_image;
  Mask support_mask;
  Matrix query_image;
  Mask query_mask;
  int class_id = 0;
};

Episode sample_episode(const EpisodeConfig& config, std::uint64_t seed);

// 8-bit binary PGM (P5) import/export.
void write_pgm_image(const std::string& path, const Matrix& image);
void write_pgm_mask(const std::string& path, const Mask& mask);
Matrix read_pgm_image(const std::string& path);
Mask read_pgm_mask(const std::string& path);

struct ManifestEntry {
  std::uint64_t id = 0;
  int class_id = 0;
  std::string support_image, support_mask, query_image, query_mask;
};

void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(std::istream& in);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace bro::episodes
