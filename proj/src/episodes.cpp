#include "bro/episodes.hpp"

#include "bro/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bro::episodes {

namespace {

Mask ellipse_mask(Index h, Index w, Scalar cy, Scalar cx, Scalar ry, Scalar rx, Scalar angle) {
  Mask m = Mask::Zero(h, w);
  const Scalar c = std::cos(angle), s = std::sin(angle);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Scalar dy = static_cast<Scalar>(y) - cy;
      const Scalar dx = static_cast<Scalar>(x) - cx;
      const Scalar u = (dx * c + dy * s) / rx;
      const Scalar v = (-dx * s + dy * c) / ry;
      if (u * u + v * v <= 1.0) m(y, x) = 1;
    }
  }
  return m;
}

Matrix background_field(Rng& rng, Index h, Index w, Scalar lo, Scalar hi) {
  Matrix field = Matrix::Zero(h, w);
  for (int wave = 0; wave < 3; ++wave) {
    const Scalar amp = rng.uniform(0.5, 1.0);
    const Scalar fx = rng.uniform(0.5, 2.5);
    const Scalar fy = rng.uniform(0.5, 2.5);
    const Scalar phase = rng.uniform(0.0, kTau);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        field(y, x) += amp * std::cos(kTau * (fx * x / static_cast<Scalar>(w) +
                                              fy * y / static_cast<Scalar>(h)) +
                                      phase);
      }
    }
  }
  const Scalar mn = field.minCoeff(), mx = field.maxCoeff();
  if (mx - mn < 1e-12) return Matrix::Constant(h, w, 0.5 * (lo + hi));
  return ((field.array() - mn) / (mx - mn) * (hi - lo) + lo).matrix();
}

}  // namespace

Phantom phantom_generate(std::uint64_t seed, const PhantomSpec& spec) {
  if (spec.height < 32 || spec.width < 32) {
    throw ConfigError("phantom_generate: dimensions must be at least 32x32");
  }
  if (spec.organs < 1 || spec.min_radius_frac <= 0 ||
      spec.max_radius_frac < spec.min_radius_frac || spec.background_high < spec.background_low ||
      spec.organ_high < spec.organ_low) {
    throw ConfigError("phantom_generate: invalid phantom spec ranges");
  }
  Rng rng(seed);
  Phantom out;
  out.seed = seed;
  const Index h = spec.height, w = spec.width;
  out.image = background_field(rng, h, w, spec.background_low, spec.background_high);

  const Scalar base_dim = static_cast<Scalar>(std::min(h, w));
  const Index min_area = std::max<Index>(1, h * w / 100);
  Mask occupied = Mask::Zero(h, w);

  for (int cls = 0; cls < spec.organs; ++cls) {
    const Scalar aspect = 0.55 + 0.10 * static_cast<Scalar>(cls % 4);
    const Scalar shift = spec.class_shift * (cls % 2 == 0 ? 1.0 : -1.0);
    bool placed = false;
    for (Index attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      // Later attempts shrink toward the minimum radius to ease placement.
      const Scalar ease =
          1.0 - 0.5 * static_cast<Scalar>(attempt) / static_cast<Scalar>(spec.max_retries);
      const Scalar hi_frac =
          spec.min_radius_frac + (spec.max_radius_frac - spec.min_radius_frac) * ease;
      const Scalar ry = rng.uniform(spec.min_radius_frac, hi_frac) * base_dim;
      const Scalar rx = ry * aspect;
      const Scalar margin = std::max(ry, rx) + 2.0;
      if (2 * margin + 2 >= static_cast<Scalar>(std::min(h, w))) continue;
      const Scalar cy = rng.uniform(margin, static_cast<Scalar>(h - 1) - margin);
      const Scalar cx = rng.uniform(margin, static_cast<Scalar>(w - 1) - margin);
      const Scalar angle = rng.uniform(0.0, kTau);
      Mask m = ellipse_mask(h, w, cy, cx, ry, rx, angle);
      const Index area = static_cast<Index>((m.array() != 0).count());
      if (area < min_area) continue;
      if ((m.array() * occupied.array()).sum() != 0) continue;
      const Scalar base =
          std::clamp(rng.uniform(spec.organ_low, spec.organ_high) + shift, 0.05, 0.95);
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          if (m(y, x) != 0) out.image(y, x) = base;
        }
      }
      occupied = (occupied.array() + m.array()).matrix();
      out.organ_masks.push_back(std::move(m));
      out.organ_classes.push_back(cls);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("phantom_generate: could not place organ " + std::to_string(cls) +
                            " after " + std::to_string(spec.max_retries) + " attempts");
    }
  }

  if (spec.noise > 0) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        out.image(y, x) =
            std::clamp(out.image(y, x) + spec.noise * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
      }
    }
  }
  return out;
}

namespace {

struct SlicCenter {
  Scalar x = 0, y = 0, feat = 0;  // normalized coords and lambda-scaled intensity
  Scalar px = 0, py = 0;          // pixel coords, for the search window
};

LabelMap enforce_connectivity(const LabelMap& labels, Index min_size) {
  const Index h = labels.rows(), w = labels.cols();
  LabelMap out = LabelMap::Constant(h, w, -1);
  std::vector<Index> stack;
  int next_label = 0;
  const Index dy[4] = {-1, 1, 0, 0};
  const Index dx[4] = {0, 0, -1, 1};
  for (Index y0 = 0; y0 < h; ++y0) {
    for (Index x0 = 0; x0 < w; ++x0) {
      if (out(y0, x0) >= 0) continue;
      // Label of an already-processed raster neighbor, used to absorb runts.
      int adjacent = -1;
      if (x0 > 0 && out(y0, x0 - 1) >= 0) adjacent = out(y0, x0 - 1);
      else if (y0 > 0 && out(y0 - 1, x0) >= 0) adjacent = out(y0 - 1, x0);
      std::vector<Index> component;
      stack.assign(1, y0 * w + x0);
      out(y0, x0) = next_label;
      while (!stack.empty()) {
        const Index p = stack.back();
        stack.pop_back();
        component.push_back(p);
        const Index py = p / w, px = p % w;
        for (int d = 0; d < 4; ++d) {
          const Index ny = py + dy[d], nx = px + dx[d];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (out(ny, nx) < 0 && labels(ny, nx) == labels(y0, x0)) {
            out(ny, nx) = next_label;
            stack.push_back(ny * w + nx);
          }
        }
      }
      if (static_cast<Index>(component.size()) < min_size && adjacent >= 0) {
        for (Index p : component) out(p / w, p % w) = adjacent;
      } else {
        ++next_label;
      }
    }
  }
  return out;
}

int relabel_dense(LabelMap& labels) {
  std::vector<int> remap;
  const Index h = labels.rows(), w = labels.cols();
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const int old = labels(y, x);
      auto it = std::find(remap.begin(), remap.end(), old);
      int dense;
      if (it == remap.end()) {
        dense = static_cast<int>(remap.size());
        remap.push_back(old);
      } else {
        dense = static_cast<int>(it - remap.begin());
      }
      labels(y, x) = dense;
    }
  }
  return static_cast<int>(remap.size());
}

void merge_smallest_label(LabelMap& labels, int label_count) {
  const Index h = labels.rows(), w = labels.cols();
  std::vector<Index> counts(static_cast<std::size_t>(label_count), 0);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) ++counts[static_cast<std::size_t>(labels(y, x))];
  int smallest = 0;
  for (int l = 1; l < label_count; ++l) {
    if (counts[static_cast<std::size_t>(l)] < counts[static_cast<std::size_t>(smallest)])
      smallest = l;
  }
  int target = -1;
  for (Index y = 0; y < h && target < 0; ++y) {
    for (Index x = 0; x < w && target < 0; ++x) {
      if (labels(y, x) != smallest) continue;
      if (y > 0 && labels(y - 1, x) != smallest) target = labels(y - 1, x);
      else if (x > 0 && labels(y, x - 1) != smallest) target = labels(y, x - 1);
      else if (y + 1 < h && labels(y + 1, x) != smallest) target = labels(y + 1, x);
      else if (x + 1 < w && labels(y, x + 1) != smallest) target = labels(y, x + 1);
    }
  }
  if (target < 0) return;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      if (labels(y, x) == smallest) labels(y, x) = target;
}

}  // namespace

LabelMap superpixels(const Matrix& image, Index k, Scalar lambda, Index iterations) {
  if (k < 1) throw ConfigError("superpixels: segment count must be >= 1");
  const Index h = image.rows(), w = image.cols();
  if (h < 1 || w < 1) throw DimensionError("superpixels: empty image");
  const Scalar step = std::sqrt(static_cast<Scalar>(h * w) / static_cast<Scalar>(k));

  std::vector<SlicCenter> centers;
  for (Scalar py = step / 2; py < static_cast<Scalar>(h); py += step) {
    for (Scalar px = step / 2; px < static_cast<Scalar>(w); px += step) {
      SlicCenter c;
      c.px = px;
      c.py = py;
      c.x = px / step;
      c.y = py / step;
      c.feat = lambda * image(static_cast<Index>(py), static_cast<Index>(px));
      centers.push_back(c);
    }
  }
  if (centers.empty()) {
    SlicCenter c;
    c.px = static_cast<Scalar>(w - 1) / 2;
    c.py = static_cast<Scalar>(h - 1) / 2;
    c.x = c.px / step;
    c.y = c.py / step;
    c.feat = lambda * image(h / 2, w / 2);
    centers.push_back(c);
  }

  LabelMap labels = LabelMap::Zero(h, w);
  Matrix best = Matrix::Constant(h, w, std::numeric_limits<Scalar>::infinity());
  for (Index it = 0; it < iterations; ++it) {
    best.setConstant(std::numeric_limits<Scalar>::infinity());
    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
      const SlicCenter& c = centers[ci];
      const Index y0 = std::max<Index>(0, static_cast<Index>(c.py - 2 * step));
      const Index y1 = std::min<Index>(h, static_cast<Index>(c.py + 2 * step) + 1);
      const Index x0 = std::max<Index>(0, static_cast<Index>(c.px - 2 * step));
      const Index x1 = std::min<Index>(w, static_cast<Index>(c.px + 2 * step) + 1);
      for (Index y = y0; y < y1; ++y) {
        for (Index x = x0; x < x1; ++x) {
          const Scalar dx = static_cast<Scalar>(x) / step - c.x;
          const Scalar dy = static_cast<Scalar>(y) / step - c.y;
          const Scalar df = lambda * image(y, x) - c.feat;
          const Scalar dist = dx * dx + dy * dy + df * df;
          if (dist < best(y, x)) {
            best(y, x) = dist;
            labels(y, x) = static_cast<int>(ci);
          }
        }
      }
    }
    // Pixels outside every search window (possible with irregular grids) go
    // to the nearest center by full scan.
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        if (std::isfinite(best(y, x))) continue;
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
          const Scalar dx = static_cast<Scalar>(x) / step - centers[ci].x;
          const Scalar dy = static_cast<Scalar>(y) / step - centers[ci].y;
          const Scalar df = lambda * image(y, x) - centers[ci].feat;
          const Scalar dist = dx * dx + dy * dy + df * df;
          if (dist < best(y, x)) {
            best(y, x) = dist;
            labels(y, x) = static_cast<int>(ci);
          }
        }
      }
    }
    std::vector<Scalar> sx(centers.size(), 0), sy(centers.size(), 0), sf(centers.size(), 0);
    std::vector<Index> count(centers.size(), 0);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const auto ci = static_cast<std::size_t>(labels(y, x));
        sx[ci] += static_cast<Scalar>(x);
        sy[ci] += static_cast<Scalar>(y);
        sf[ci] += lambda * image(y, x);
        ++count[ci];
      }
    }
    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
      if (count[ci] == 0) continue;
      const Scalar n = static_cast<Scalar>(count[ci]);
      centers[ci].px = sx[ci] / n;
      centers[ci].py = sy[ci] / n;
      centers[ci].x = centers[ci].px / step;
      centers[ci].y = centers[ci].py / step;
      centers[ci].feat = sf[ci] / n;
    }
  }

  const Index min_size = (h * w + 2 * k - 1) / (2 * k);  // ceil, keeps label count <= 2k
  labels = enforce_connectivity(labels, min_size);
  int label_count = relabel_dense(labels);
  while (label_count > 2 * k) {
    merge_smallest_label(labels, label_count);
    label_count = relabel_dense(labels);
  }
  return labels;
}

WarpParams sample_warp(Rng& rng, Index height, Index width) {
  WarpParams p;
  p.rotation = rng.uniform(-15.0, 15.0) * kTau / 360.0;
  p.scale = rng.uniform(0.9, 1.1);
  p.shift_x = rng.uniform(-0.05, 0.05) * static_cast<Scalar>(width);
  p.shift_y = rng.uniform(-0.05, 0.05) * static_cast<Scalar>(height);
  p.gamma = rng.uniform(0.8, 1.25);
  return p;
}

std::pair<Matrix, Mask> warp_pair(const Matrix& image, const Mask& mask, const WarpParams& params) {
  if (image.rows() != mask.rows() || image.cols() != mask.cols()) {
    throw DimensionError("warp_pair: image shape " + shape_string(image.rows(), image.cols()) +
                         " does not match mask " + shape_string(mask.rows(), mask.cols()));
  }
  const Index h = image.rows(), w = image.cols();
  const Scalar cy = static_cast<Scalar>(h - 1) / 2, cx = static_cast<Scalar>(w - 1) / 2;
  const Scalar cosr = std::cos(params.rotation), sinr = std::sin(params.rotation);
  Matrix out_img(h, w);
  Mask out_mask = Mask::Zero(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      // Invert dst = R * s * (src - c) + c + t.
      const Scalar qx = (static_cast<Scalar>(x) - cx - params.shift_x) / params.scale;
      const Scalar qy = (static_cast<Scalar>(y) - cy - params.shift_y) / params.scale;
      const Scalar sx = qx * cosr + qy * sinr + cx;
      const Scalar sy = -qx * sinr + qy * cosr + cy;

      const Scalar ix = std::clamp(sx, 0.0, static_cast<Scalar>(w - 1));
      const Scalar iy = std::clamp(sy, 0.0, static_cast<Scalar>(h - 1));
      const Index x0 = std::min<Index>(static_cast<Index>(ix), w - 1);
      const Index y0 = std::min<Index>(static_cast<Index>(iy), h - 1);
      const Index x1 = std::min<Index>(x0 + 1, w - 1);
      const Index y1 = std::min<Index>(y0 + 1, h - 1);
      const Scalar fx = ix - static_cast<Scalar>(x0);
      const Scalar fy = iy - static_cast<Scalar>(y0);
      out_img(y, x) = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                      fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));

      const Index nx = static_cast<Index>(std::lround(sx));
      const Index ny = static_cast<Index>(std::lround(sy));
      if (nx >= 0 && nx < w && ny >= 0 && ny < h) out_mask(y, x) = mask(ny, nx);
    }
  }
  if (params.gamma != 1.0) {
    out_img = out_img.array().max(0.0).pow(params.gamma).matrix();
  }
  return {std::move(out_img), std::move(out_mask)};
}

std::pair<Matrix, Mask> augment_pair(const Matrix& image, const Mask& mask, std::uint64_t seed) {
  Rng rng(seed);
  return warp_pair(image, mask, sample_warp(rng, image.rows(), image.cols()));
}

Episode sample_episode(const EpisodeConfig& config, std::uint64_t seed) {
  Episode ep;
  if (config.source == EpisodeSource::SupervisedPhantom) {
    Phantom support = phantom_generate(mix_seed(seed, 1), config.phantom);
    Phantom query = phantom_generate(mix_seed(seed, 2), config.phantom);
    Rng rng(mix_seed(seed, 0));
    const auto pick = static_cast<std::size_t>(rng.below(support.organ_masks.size()));
    ep.class_id = support.organ_classes[pick];
    ep.support_image = std::move(support.image);
    ep.support_mask = support.organ_masks[pick];
    ep.query_image = std::move(query.image);
    ep.query_mask = query.organ_masks[pick];
    return ep;
  }

  Rng rng(mix_seed(seed, 0));
  for (Index attempt = 0; attempt < config.max_retries; ++attempt) {
    Phantom ph = phantom_generate(mix_seed(seed, 1 + static_cast<std::uint64_t>(attempt)),
                                  config.phantom);
    LabelMap labels = superpixels(ph.image, config.superpixel_count);
    const int n_labels = labels.maxCoeff() + 1;
    const auto total = static_cast<Scalar>(labels.size());
    std::vector<int> candidates;
    for (int l = 0; l < n_labels; ++l) {
      const Scalar frac = static_cast<Scalar>((labels.array() == l).count()) / total;
      if (frac >= config.min_pseudo_frac && frac <= config.max_pseudo_frac) candidates.push_back(l);
    }
    if (candidates.empty()) continue;
    const int chosen = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
    Mask pseudo = (labels.array() == chosen).cast<Scalar>().matrix();
    auto [q_img, q_mask] =
        augment_pair(ph.image, pseudo, mix_seed(seed, 1000 + static_cast<std::uint64_t>(attempt)));
    if ((q_mask.array() != 0).count() == 0) continue;
    ep.support_image = std::move(ph.image);
    ep.support_mask = std::move(pseudo);
    ep.query_image = std::move(q_img);
    ep.query_mask = std::move(q_mask);
    ep.class_id = chosen;
    return ep;
  }
  throw GenerationError("sample_episode: no usable pseudo-label after " +
                        std::to_string(config.max_retries) + " attempts");
}

namespace {

void write_pgm_bytes(const std::string& path, const Matrix& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << values.cols() << " " << values.rows() << "\n255\n";
  for (Index y = 0; y < values.rows(); ++y) {
    for (Index x = 0; x < values.cols(); ++x) {
      const auto byte = static_cast<unsigned char>(
          std::clamp(std::lround(values(y, x) * 255.0), 0L, 255L));
      out.put(static_cast<char>(byte));
    }
  }
  if (!out) throw IoError("failed while writing " + path);
}

Matrix read_pgm_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path + ": not a binary PGM file");
  auto next_int = [&](const char* what) {
    // Skip whitespace and '#' comment lines between header tokens.
    int c = in.peek();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else {
        in.get();
      }
      c = in.peek();
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw IoError(path + ": malformed PGM header (" + what + ")");
    return v;
  };
  const long w = next_int("width");
  const long h = next_int("height");
  const long maxval = next_int("maxval");
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw IoError(path + ": unsupported PGM geometry");
  }
  in.get();  // single whitespace after maxval
  Matrix out(h, w);
  std::vector<char> row(static_cast<std::size_t>(w));
  for (long y = 0; y < h; ++y) {
    in.read(row.data(), w);
    if (!in) throw IoError(path + ": truncated PGM data");
    for (long x = 0; x < w; ++x) {
      out(y, x) = static_cast<Scalar>(static_cast<unsigned char>(row[static_cast<std::size_t>(x)])) /
                  static_cast<Scalar>(maxval);
    }
  }
  return out;
}

}  // namespace

void write_pgm_image(const std::string& path, const Matrix& image) {
  write_pgm_bytes(path, image);
}

void write_pgm_mask(const std::string& path, const Mask& mask) {
  Matrix scaled(mask.rows(), mask.cols());
  for (Index y = 0; y < mask.rows(); ++y)
    for (Index x = 0; x < mask.cols(); ++x) scaled(y, x) = mask(y, x) != 0 ? 1.0 : 0.0;
  write_pgm_bytes(path, scaled);
}

Matrix read_pgm_image(const std::string& path) { return read_pgm_bytes(path); }

Mask read_pgm_mask(const std::string& path) {
  Matrix raw = read_pgm_bytes(path);
  Mask out(raw.rows(), raw.cols());
  for (Index y = 0; y < raw.rows(); ++y)
    for (Index x = 0; x < raw.cols(); ++x) out(y, x) = raw(y, x) >= 0.5 ? 1.0 : 0.0;
  return out;
}

void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  for (const ManifestEntry& e : entries) {
    out << "episode " << e.id << " class " << e.class_id << " support " << e.support_image << " "
        << e.support_mask << " query " << e.query_image << " " << e.query_mask << "\n";
  }
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_manifest(out, entries);
  if (!out) throw IoError("failed while writing " + path);
}

std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string kw_episode, kw_class, kw_support, kw_query;
    ls >> kw_episode >> e.id >> kw_class >> e.class_id >> kw_support >> e.support_image >>
        e.support_mask >> kw_query >> e.query_image >> e.query_mask;
    if (!ls || kw_episode != "episode" || kw_class != "class" || kw_support != "support" ||
        kw_query != "query") {
      throw IoError("manifest line " + std::to_string(line_no) + " is malformed: " + line);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return read_manifest(in);
}

}  // namespace bro::episodes
