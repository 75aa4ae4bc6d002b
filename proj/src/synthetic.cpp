#include "xmreid/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "xmreid/rng.hpp"

namespace xmreid {

void validate(const SyntheticSpec& spec) {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("synthetic spec: ") + name + " must be >= 1");
  };
  positive(spec.identity_count, "identity_count");
  positive(spec.samples_per_identity_per_modality, "samples_per_identity_per_modality");
  positive(spec.latent_dim, "latent_dim");
  positive(spec.vision_dim, "vision_dim");
  positive(spec.text_vocab, "text_vocab");
  positive(spec.view_count, "view_count");
  positive(spec.levels, "levels");
  if (spec.pose_dim < 0) throw ValidationError("synthetic spec: pose_dim must be >= 0");
  if (!(spec.noise_sigma >= 0.0)) throw ValidationError("synthetic spec: noise_sigma must be >= 0");
  if (!(spec.distractor_rate >= 0.0 && spec.distractor_rate < 1.0)) {
    throw ValidationError("synthetic spec: distractor_rate must be in [0, 1)");
  }
  if (!(spec.view_shift >= 0.0 && spec.view_shift <= 1.0)) {
    throw ValidationError("synthetic spec: view_shift must be in [0, 1]");
  }
  if (spec.identity_stream < 0) throw ValidationError("synthetic spec: identity_stream must be >= 0");
  if (spec.text_vocab < spec.attribute_words()) {
    throw ValidationError("synthetic spec: text_vocab " + std::to_string(spec.text_vocab) +
                          " is smaller than the " + std::to_string(spec.attribute_words()) +
                          " required quantization words");
  }
}

int quantize_level(double value, int levels) {
  const double t = (value + 2.5) / 5.0 * levels;
  const int q = static_cast<int>(std::floor(t));
  return std::clamp(q, 0, levels - 1);
}

std::string attribute_word(int coordinate, int level) {
  return "c" + std::to_string(coordinate) + "l" + std::to_string(level);
}

std::string distractor_word(int k) { return "x" + std::to_string(k); }

Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const int coords = spec.latent_dim + spec.pose_dim;
  const int distractors = spec.text_vocab - spec.attribute_words();

  Rng world = Rng::derive(spec.seed, 0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(coords));
  Matrix identity_map(spec.vision_dim, spec.latent_dim);
  Matrix pose_map(spec.vision_dim, spec.pose_dim);
  for (int c = 0; c < spec.latent_dim; ++c)
    for (int r = 0; r < spec.vision_dim; ++r) identity_map(r, c) = scale * world.normal();
  for (int c = 0; c < spec.pose_dim; ++c)
    for (int r = 0; r < spec.vision_dim; ++r) pose_map(r, c) = scale * world.normal();

  Rng people = Rng::derive(spec.seed, 1000 + static_cast<std::uint64_t>(spec.identity_stream));
  const int per = spec.samples_per_identity_per_modality;
  std::vector<SampleRecord> records;
  records.reserve(static_cast<std::size_t>(spec.identity_count * per * 2));

  for (int n = 0; n < spec.identity_count; ++n) {
    Vector z(spec.latent_dim);
    for (int c = 0; c < spec.latent_dim; ++c) z(c) = people.normal();
    std::vector<Vector> poses(static_cast<std::size_t>(spec.view_count), Vector(spec.pose_dim));
    for (auto& p : poses)
      for (int c = 0; c < spec.pose_dim; ++c) p(c) = people.normal();
    // Appearance seen from each view; equals z when view_shift is 0.
    std::vector<Vector> looks(static_cast<std::size_t>(spec.view_count), z);
    if (spec.view_shift > 0.0) {
      const double keep = std::sqrt(1.0 - spec.view_shift);
      const double shift = std::sqrt(spec.view_shift);
      for (auto& u : looks)
        for (int c = 0; c < spec.latent_dim; ++c) u(c) = keep * z(c) + shift * people.normal();
    }

    IdentityLabel label{"s" + std::to_string(spec.identity_stream) + "p" + std::to_string(n), false};
    const std::string prefix = label.name + "_";

    for (int k = 0; k < per; ++k) {
      const int view = k % spec.view_count;
      Vector v = identity_map * looks[static_cast<std::size_t>(view)] + pose_map * poses[static_cast<std::size_t>(view)];
      for (int r = 0; r < spec.vision_dim; ++r) v(r) += spec.noise_sigma * people.normal();
      SampleRecord rec;
      rec.sample_id = prefix + "v" + std::to_string(k);
      rec.identity = label;
      rec.modality = Modality::vision;
      rec.view_id = view;
      rec.vision.assign(v.data(), v.data() + v.size());
      records.push_back(std::move(rec));
    }
    for (int k = 0; k < per; ++k) {
      const int view = k % spec.view_count;
      const auto& p = poses[static_cast<std::size_t>(view)];
      const auto& u = looks[static_cast<std::size_t>(view)];
      std::string sentence;
      auto append = [&](const std::string& w) {
        if (!sentence.empty()) sentence += ' ';
        sentence += w;
      };
      for (int c = 0; c < coords; ++c) {
        const double value = c < spec.latent_dim ? u(c) : p(c - spec.latent_dim);
        append(attribute_word(c, quantize_level(value, spec.levels)));
        if (distractors > 0 && people.bernoulli(spec.distractor_rate)) {
          append(distractor_word(static_cast<int>(people.index(static_cast<std::size_t>(distractors)))));
        }
      }
      SampleRecord rec;
      rec.sample_id = prefix + "t" + std::to_string(k);
      rec.identity = label;
      rec.modality = Modality::text;
      rec.view_id = view;
      rec.text = std::move(sentence);
      rec.image_ref = prefix + "v" + std::to_string(k);
      records.push_back(std::move(rec));
    }
  }
  return Dataset::from_records(std::move(records), spec.split);
}

}  // namespace xmreid
