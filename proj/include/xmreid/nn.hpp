#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmreid/common.hpp"
#include "xmreid/rng.hpp"

namespace xmreid {

enum class LayerKind { dense, conv1d_k3, relu, batch_norm, dropout, global_avg_pool };
// backbone: the feature extractor of a branch. head: fully-connected
// layers trained together with the classifier.
enum class ParamGroup { backbone, head };
enum class Mode { train, eval };

std::string_view to_string(LayerKind k);
LayerKind parse_layer_kind(std::string_view s);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int width = 0;            // dense / conv1d_k3 output channels
  bool bias = true;         // dense / conv1d_k3
  bool residual = false;    // dense / conv1d_k3: output += input (needs equal widths)
  double keep_prob = 0.25;  // dropout
  bool masked = false;      // global_avg_pool: average over non-padding positions only
  ParamGroup group = ParamGroup::backbone;

  bool operator==(const LayerSpec&) const = default;
};

// A batch of sequences stored as rows: row b * positions + t holds position t
// of sample b. Vectors are sequences with positions == 1.
struct Activation {
  Matrix values;
  int positions = 1;
  Vector mask;  // per row, 1 = token and 0 = padding; empty = all valid

  int batch() const { return static_cast<int>(values.rows()) / positions; }
};

struct ParamBlock {
  std::string name;
  Matrix value;
  bool trainable = true;  // false for batch-norm running statistics
};

// Whatever a layer keeps from its forward pass for backward().
struct LayerCache {
  Mode mode = Mode::eval;
  int positions = 1;
  Matrix a;
  Matrix b;
  Vector v;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;

  // Pure in the parameters; randomness (dropout) comes from `rng`.
  virtual Activation forward(const Activation& in, Mode mode, Rng* rng, LayerCache* cache) const = 0;
  // Returns dL/d(input); writes dL/d(block) for every parameter block.
  virtual Matrix backward(const LayerCache& cache, const Matrix& grad_out,
                          std::vector<Matrix>& grads) const = 0;
  // Folds batch statistics from a training-mode forward into running stats.
  virtual void commit(const LayerCache&) {}

  const LayerSpec& spec() const { return spec_; }
  int input_width() const { return input_width_; }
  int output_width() const { return output_width_; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

 protected:
  Layer(const LayerSpec& spec, int input_width, int output_width)
      : spec_(spec), input_width_(input_width), output_width_(output_width) {}

  LayerSpec spec_;
  int input_width_;
  int output_width_;
  std::vector<ParamBlock> blocks_;
};

// Ordered stack of layers. Copies are deep.
class Encoder {
 public:
  struct Trace {
    Mode mode = Mode::eval;
    std::uint64_t structure = 0;
    std::vector<LayerCache> caches;
  };

  struct Gradients {
    std::vector<std::vector<Matrix>> layers;  // parallel to each layer's blocks()
    Matrix input;
  };

  Encoder() = default;
  Encoder(int input_width, std::vector<LayerSpec> specs, Rng& init_rng);
  Encoder(const Encoder& other);
  Encoder& operator=(const Encoder& other);
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;

  int input_width() const { return input_width_; }
  int output_width() const;
  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  // Throws NumericError naming the layer when an activation is not finite.
  Activation forward(const Activation& input, Mode mode, Rng* rng = nullptr,
                     Trace* trace = nullptr) const;
  Gradients backward(const Trace& trace, const Matrix& grad_output) const;
  Gradients zero_gradients() const;

  // Only layers for which `include` returns true are updated.
  void commit_running_stats(const Trace& trace,
                            const std::function<bool(const LayerSpec&)>& include = {});

  std::size_t parameter_count() const;  // trainable scalars
  std::uint64_t structure_hash() const;

 private:
  int input_width_ = 0;
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// N x D inputs -> N x d features. Requires a stack without sequence layers.
Matrix forward_vision(const Encoder& encoder, const Matrix& inputs, Mode mode, Rng* rng = nullptr,
                      Encoder::Trace* trace = nullptr);

// Stacks L x e embedded sequences into one activation. `token_indices`, if
// given, marks non-padding (non-zero) positions per sequence.
Activation stack_sequences(std::span<const Matrix> embedded,
                           std::span<const std::vector<int>> token_indices = {});

// Sequence activation -> N x d features. Rejects samples that are all padding.
Matrix forward_language(const Encoder& encoder, const Activation& embedded, Mode mode,
                        Rng* rng = nullptr, Encoder::Trace* trace = nullptr);

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  // |analytic - numeric| / max(|analytic|, |numeric|, scale_floor)
  double scale_floor = 1e-3;
  std::size_t max_checks = 0;  // 0 = every entry
  std::uint64_t seed = 0;      // output projection, dropout masks, subsample
  Mode mode = Mode::train;
  bool check_input = true;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_entry;
  bool passed = true;
};

// Analytic gradients of L = sum(R .* forward(input)) with R and the dropout
// masks fixed by options.seed.
Encoder::Gradients analytic_gradients(const Encoder& encoder, const Activation& input,
                                      const GradientCheckOptions& options);

// Central differences of the same L against the supplied gradients.
GradientCheckReport compare_with_finite_differences(const Encoder& encoder, const Activation& input,
                                                    const Encoder::Gradients& analytic,
                                                    const GradientCheckOptions& options);

GradientCheckReport gradient_check(const Encoder& encoder, const Activation& input,
                                   const GradientCheckOptions& options = {});

}  // namespace xmreid
