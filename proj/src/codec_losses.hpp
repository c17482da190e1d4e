#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "imusic/numcore.hpp"

namespace imusic::detail {

// spectral_weight * (multi-resolution STFT magnitude, linear + log L1, plus
// log-mel L1) + wave_weight * time-domain L1. `target` carries no history.
nc::Tensor reconstruction_loss(const nc::Tensor& estimate, const nc::Tensor& target, int sample_rate,
                               double spectral_weight, double wave_weight);

// Codebook and commitment terms of a single quantizer stage plus the
// straight-through output. h [F, D], e [F, D] (e = codebook rows).
struct VqTerms {
  nc::Tensor quantized;  // h + sg(e - h)
  nc::Tensor codebook;   // ||sg(h) - e||^2
  nc::Tensor commit;     // ||h - sg(e)||^2
};
VqTerms vq_terms(const nc::Tensor& h, const nc::Tensor& e);

// Lloyd k-means on rows of `points` [n, dim] with k centers; fewer points
// than centers are padded by jittered copies so that no two rows coincide.
std::vector<float> kmeans(const std::vector<float>& points, int dim, int k, int iterations,
                          std::uint64_t seed);

}  // namespace imusic::detail
