// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "hinge/matrix.hpp"
#include "hinge/network.hpp"

namespace hinge {

struct DatasetSpec {
  std::uint64_t seed = 42;
  std::size_t classes = 4;
  std::size_t n_train = 512;
  std::size_t n_test = 512;
  InputSpec input;
  double noise = 0.3;
};

/// Images stored one per row in HWC order, so a batch of rows reshapes
/// directly into the (batch * H * W) × C activation layout.
struct Split {
  Matrix images;
  std::vector<int> labels;
  InputSpec input;

  std::size_t size() const noexcept { return labels.size(); }

  Matrix batch(std::span<const std::size_t> ids) const {
    const std::size_t pixels = input.height * input.width;
    Matrix x(ids.size() * pixels, input.channels);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto src = images.row(ids[i]);
      std::copy(src.begin(), src.end(), x.data().begin() + i * src.size());
    }
    return x;
  }

  std::vector<int> batch_labels(std::span<const std::size_t> ids) const {
    std::vector<int> y;
    y.reserve(ids.size());
    for (auto i : ids) y.push_back(labels[i]);
    return y;
  }
};

struct SyntheticDataset {
  DatasetSpec spec;
  Matrix templates;  // classes × (H*W*C)
  Split train;
  Split test;
};

/// One Gaussian blob per class, at evenly spaced positions on a circle around
/// the image center and with a class-specific channel mix, plus i.i.d.
/// Gaussian pixel noise. Labels cycle through the classes, so every split is
/// balanced. Regeneration from the same spec is bit-identical.
inline SyntheticDataset make_synthetic_dataset(const DatasetSpec& spec) {
  if (spec.classes < 2) throw ParameterError("dataset needs at least two classes");
  const auto& in = spec.input;
  const std::size_t dim = in.height * in.width * in.channels;
  SyntheticDataset ds;
  ds.spec = spec;
  ds.templates = Matrix(spec.classes, dim);
  const double cy = (static_cast<double>(in.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(in.width) - 1.0) / 2.0;
  const double radius = static_cast<double>(std::min(in.height, in.width)) / 4.0;
  const double sigma = static_cast<double>(std::min(in.height, in.width)) / 8.0;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
    const double py = cy + radius * std::sin(angle);
    const double px = cx + radius * std::cos(angle);
    for (std::size_t y = 0; y < in.height; ++y)
      for (std::size_t x = 0; x < in.width; ++x) {
        const double d2 = (y - py) * (y - py) + (x - px) * (x - px);
        const double blob = std::exp(-d2 / (2.0 * sigma * sigma));
        for (std::size_t c = 0; c < in.channels; ++c) {
          const double mix = std::cos(2.0 * std::numbers::pi *
                                      (static_cast<double>(k) / static_cast<double>(spec.classes) +
                                       static_cast<double>(c) / static_cast<double>(in.channels)));
          ds.templates(k, (y * in.width + x) * in.channels + c) = mix * blob;
        }
      }
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const auto fill = [&](Split& s, std::size_t n) {
    s.input = in;
    s.images = Matrix(n, dim);
    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % spec.classes;
      s.labels[i] = static_cast<int>(k);
      for (std::size_t j = 0; j < dim; ++j) s.images(i, j) = ds.templates(k, j) + noise(rng);
    }
  };
  fill(ds.train, spec.n_train);
  fill(ds.test, spec.n_test);
  return ds;
}

}  // namespace hinge
