#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmreid/dataset.hpp"

namespace xmreid {

// Seeded cross-modal generator. The "world" (vision projections, vocabulary)
// depends only on `seed`; `identity_stream` selects a disjoint population of
// people drawn in that world, so train/test/auxiliary splits share one world.
//
// Per identity: z ~ N(0, I_latent). Per (identity, view): pose p ~ N(0, I_pose)
// and appearance u = sqrt(1 - view_shift) z + sqrt(view_shift) s, s ~ N(0, I).
//   vision = A u + B p + noise_sigma * e
//   text   = one attribute word per coordinate of [u, p], chosen by uniform
//            quantization of the coordinate over [-2.5, 2.5] into `levels`
//            cells, with distractor words interleaved at `distractor_rate`.
// Sample k of an identity has view k % view_count; text k describes image k.
struct SyntheticSpec {
  int identity_count = 200;
  int samples_per_identity_per_modality = 4;
  int latent_dim = 8;
  int vision_dim = 32;
  int text_vocab = 256;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;

  int view_count = 2;
  int pose_dim = 4;
  int levels = 16;
  double distractor_rate = 0.5;
  double view_shift = 0.0;
  int identity_stream = 0;
  Split split = Split::train;

  int attribute_words() const { return (latent_dim + pose_dim) * levels; }
};

void validate(const SyntheticSpec& spec);
Dataset generate_synthetic(const SyntheticSpec& spec);

// Quantization cell of a latent coordinate value.
int quantize_level(double value, int levels);

// Word naming used by the generator.
std::string attribute_word(int coordinate, int level);
std::string distractor_word(int k);

}  // namespace xmreid
