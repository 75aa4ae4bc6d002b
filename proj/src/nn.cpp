#include "xmreid/nn.hpp"

#include <algorithm>
#include <cmath>

namespace xmreid {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv1d_k3: return "conv1d_k3";
    case LayerKind::relu: return "relu";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::dense, LayerKind::conv1d_k3, LayerKind::relu, LayerKind::batch_norm,
                 LayerKind::dropout, LayerKind::global_avg_pool}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown layer kind '" + std::string(s) + "'");
}

namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

Matrix he_normal(int rows, int cols, int fan_in, Rng& rng) {
  const double sigma = std::sqrt(2.0 / fan_in);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = sigma * rng.normal();
  return m;
}

class DenseLayer final : public Layer {
 public:
  DenseLayer(const LayerSpec& spec, int in, Rng& rng) : Layer(spec, in, spec.width) {
    blocks_.push_back({"weight", he_normal(spec.width, in, in, rng), true});
    if (spec.bias) blocks_.push_back({"bias", Matrix::Zero(1, spec.width), true});
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }

  Activation forward(const Activation& in, Mode mode, Rng*, LayerCache* cache) const override {
    Activation out;
    out.positions = in.positions;
    out.mask = in.mask;
    out.values = in.values * blocks_[0].value.transpose();
    if (spec_.bias) out.values.rowwise() += blocks_[1].value.row(0);
    if (spec_.residual) out.values += in.values;
    if (cache) {
      cache->mode = mode;
      cache->positions = in.positions;
      cache->a = in.values;
    }
    return out;
  }

  Matrix backward(const LayerCache& cache, const Matrix& g, std::vector<Matrix>& grads) const override {
    grads[0] = g.transpose() * cache.a;
    if (spec_.bias) grads[1] = g.colwise().sum();
    Matrix dx = g * blocks_[0].value;
    if (spec_.residual) dx += g;
    return dx;
  }
};

// Kernel taps [t-1, t, t+1] with zero (same) padding inside each sequence.
class Conv1dK3Layer final : public Layer {
 public:
  Conv1dK3Layer(const LayerSpec& spec, int in, Rng& rng) : Layer(spec, in, spec.width) {
    blocks_.push_back({"weight", he_normal(spec.width, 3 * in, 3 * in, rng), true});
    if (spec.bias) blocks_.push_back({"bias", Matrix::Zero(1, spec.width), true});
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1dK3Layer>(*this); }

  Activation forward(const Activation& in, Mode mode, Rng*, LayerCache* cache) const override {
    const Eigen::Index rows = in.values.rows();
    const int L = in.positions;
    const int c = input_width_;
    Matrix col = Matrix::Zero(rows, 3 * c);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int t = static_cast<int>(r % L);
      if (t > 0) col.block(r, 0, 1, c) = in.values.row(r - 1);
      col.block(r, c, 1, c) = in.values.row(r);
      if (t + 1 < L) col.block(r, 2 * c, 1, c) = in.values.row(r + 1);
    }
    Activation out;
    out.positions = L;
    out.mask = in.mask;
    out.values = col * blocks_[0].value.transpose();
    if (spec_.bias) out.values.rowwise() += blocks_[1].value.row(0);
    if (spec_.residual) out.values += in.values;
    if (cache) {
      cache->mode = mode;
      cache->positions = L;
      cache->a = std::move(col);
    }
    return out;
  }

  Matrix backward(const LayerCache& cache, const Matrix& g, std::vector<Matrix>& grads) const override {
    grads[0] = g.transpose() * cache.a;
    if (spec_.bias) grads[1] = g.colwise().sum();
    const Matrix dcol = g * blocks_[0].value;
    const int L = cache.positions;
    const int c = input_width_;
    const Eigen::Index rows = g.rows();
    Matrix dx = dcol.middleCols(c, c);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int t = static_cast<int>(r % L);
      if (t + 1 < L) dx.row(r) += dcol.block(r + 1, 0, 1, c);
      if (t > 0) dx.row(r) += dcol.block(r - 1, 2 * c, 1, c);
    }
    if (spec_.residual) dx += g;
    return dx;
  }
};

class ReluLayer final : public Layer {
 public:
  ReluLayer(const LayerSpec& spec, int in) : Layer(spec, in, in) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReluLayer>(*this); }

  Activation forward(const Activation& in, Mode mode, Rng*, LayerCache* cache) const override {
    Activation out;
    out.positions = in.positions;
    out.mask = in.mask;
    out.values = in.values.cwiseMax(0.0);
    if (cache) {
      cache->mode = mode;
      cache->positions = in.positions;
      cache->a = (in.values.array() > 0.0).cast<double>().matrix();
    }
    return out;
  }

  Matrix backward(const LayerCache& cache, const Matrix& g, std::vector<Matrix>&) const override {
    return g.cwiseProduct(cache.a);
  }
};

// Statistics are taken per channel over every row (batch x positions).
class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(const LayerSpec& spec, int in) : Layer(spec, in, in) {
    blocks_.push_back({"gamma", Matrix::Ones(1, in), true});
    blocks_.push_back({"beta", Matrix::Zero(1, in), true});
    blocks_.push_back({"running_mean", Matrix::Zero(1, in), false});
    blocks_.push_back({"running_var", Matrix::Ones(1, in), false});
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNormLayer>(*this); }

  Activation forward(const Activation& in, Mode mode, Rng*, LayerCache* cache) const override {
    const Eigen::Index rows = in.values.rows();
    Eigen::RowVectorXd mean, var;
    if (mode == Mode::train) {
      mean = in.values.colwise().mean();
      var = (in.values.rowwise() - mean).array().square().colwise().mean().matrix();
    } else {
      mean = blocks_[2].value.row(0);
      var = blocks_[3].value.row(0);
    }
    const Eigen::RowVectorXd inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
    Matrix xhat = (in.values.rowwise() - mean).array().rowwise() * inv_std.array();
    Activation out;
    out.positions = in.positions;
    out.mask = in.mask;
    out.values = (xhat.array().rowwise() * blocks_[0].value.row(0).array()).rowwise() +
                 blocks_[1].value.row(0).array();
    if (cache) {
      cache->mode = mode;
      cache->positions = in.positions;
      cache->v = inv_std.transpose();
      cache->b.resize(2, input_width_);
      cache->b.row(0) = mean;
      // unbiased estimate for the running variance
      cache->b.row(1) = rows > 1 ? Eigen::RowVectorXd(var * (double(rows) / double(rows - 1))) : var;
      cache->a = std::move(xhat);
    }
    return out;
  }

  Matrix backward(const LayerCache& cache, const Matrix& g, std::vector<Matrix>& grads) const override {
    const Matrix& xhat = cache.a;
    const Eigen::RowVectorXd inv_std = cache.v.transpose();
    grads[0] = g.cwiseProduct(xhat).colwise().sum();
    grads[1] = g.colwise().sum();
    grads[2] = Matrix::Zero(1, input_width_);
    grads[3] = Matrix::Zero(1, input_width_);
    const Eigen::RowVectorXd gamma = blocks_[0].value.row(0);
    const Matrix dxhat = g.array().rowwise() * gamma.array();
    if (cache.mode == Mode::eval) {
      return dxhat.array().rowwise() * inv_std.array();
    }
    const double m = static_cast<double>(g.rows());
    const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
    Matrix dx = (dxhat * m).rowwise() - sum_d;
    dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
    return (dx.array().rowwise() * (inv_std.array() / m)).matrix();
  }

  void commit(const LayerCache& cache) override {
    if (cache.mode != Mode::train) return;
    blocks_[2].value = (1.0 - kBatchNormMomentum) * blocks_[2].value + kBatchNormMomentum * cache.b.row(0);
    blocks_[3].value = (1.0 - kBatchNormMomentum) * blocks_[3].value + kBatchNormMomentum * cache.b.row(1);
  }
};

// Inverted dropout: kept units are scaled by 1 / keep_prob during training.
// Mask draws are row-major over the activation, one uniform() per entry.
class DropoutLayer final : public Layer {
 public:
  DropoutLayer(const LayerSpec& spec, int in) : Layer(spec, in, in) {
    if (!(spec.keep_prob > 0.0 && spec.keep_prob <= 1.0)) {
      throw ValidationError("dropout keep_prob must be in (0, 1]");
    }
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DropoutLayer>(*this); }

  Activation forward(const Activation& in, Mode mode, Rng* rng, LayerCache* cache) const override {
    Activation out = in;
    const bool active = mode == Mode::train && spec_.keep_prob < 1.0;
    Matrix mask;
    if (active) {
      if (!rng) throw ValidationError("training-mode dropout needs a generator");
      mask.resize(in.values.rows(), in.values.cols());
      const double scale = 1.0 / spec_.keep_prob;
      for (Eigen::Index r = 0; r < mask.rows(); ++r)
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          mask(r, c) = rng->uniform() < spec_.keep_prob ? scale : 0.0;
      out.values = in.values.cwiseProduct(mask);
    }
    if (cache) {
      cache->mode = mode;
      cache->positions = in.positions;
      cache->a = std::move(mask);
    }
    return out;
  }

  Matrix backward(const LayerCache& cache, const Matrix& g, std::vector<Matrix>&) const override {
    if (cache.a.size() == 0) return g;
    return g.cwiseProduct(cache.a);
  }
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  GlobalAvgPoolLayer(const LayerSpec& spec, int in) : Layer(spec, in, in) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPoolLayer>(*this); }

  Activation forward(const Activation& in, Mode mode, Rng*, LayerCache* cache) const override {
    const int L = in.positions;
    const int batch = in.batch();
    Vector weight(in.values.rows());
    for (int b = 0; b < batch; ++b) {
      double count = L;
      if (spec_.masked && in.mask.size() > 0) count = in.mask.segment(b * L, L).sum();
      if (count <= 0.0) {
        throw ValidationError("masked pooling over a sequence without tokens (sample " +
                              std::to_string(b) + ")");
      }
      for (int t = 0; t < L; ++t) {
        const bool valid = !spec_.masked || in.mask.size() == 0 || in.mask(b * L + t) > 0.0;
        weight(b * L + t) = valid ? 1.0 / count : 0.0;
      }
    }
    Activation out;
    out.positions = 1;
    out.values.resize(batch, in.values.cols());
    for (int b = 0; b < batch; ++b) {
      out.values.row(b) = weight.segment(b * L, L).transpose() * in.values.middleRows(b * L, L);
    }
    if (cache) {
      cache->mode = mode;
      cache->positions = L;
      cache->v = std::move(weight);
    }
    return out;
  }

  Matrix backward(const LayerCache& cache, const Matrix& g, std::vector<Matrix>&) const override {
    const int L = cache.positions;
    Matrix dx(cache.v.size(), g.cols());
    for (Eigen::Index r = 0; r < dx.rows(); ++r) dx.row(r) = cache.v(r) * g.row(r / L);
    return dx;
  }
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, int in, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::dense:
    case LayerKind::conv1d_k3:
      if (spec.width < 1) throw ValidationError(std::string(to_string(spec.kind)) + " needs width >= 1");
      if (spec.residual && spec.width != in) {
        throw ValidationError("residual layer needs equal input and output widths");
      }
      if (spec.kind == LayerKind::dense) return std::make_unique<DenseLayer>(spec, in, rng);
      return std::make_unique<Conv1dK3Layer>(spec, in, rng);
    case LayerKind::relu: return std::make_unique<ReluLayer>(spec, in);
    case LayerKind::batch_norm: return std::make_unique<BatchNormLayer>(spec, in);
    case LayerKind::dropout: return std::make_unique<DropoutLayer>(spec, in);
    case LayerKind::global_avg_pool: return std::make_unique<GlobalAvgPoolLayer>(spec, in);
  }
  throw ValidationError("unknown layer kind");
}

}  // namespace

Encoder::Encoder(int input_width, std::vector<LayerSpec> specs, Rng& init_rng)
    : input_width_(input_width), specs_(std::move(specs)) {
  if (input_width < 1) throw ValidationError("encoder input width must be >= 1");
  int width = input_width;
  for (const auto& s : specs_) {
    layers_.push_back(make_layer(s, width, init_rng));
    width = layers_.back()->output_width();
  }
}

Encoder::Encoder(const Encoder& other) : input_width_(other.input_width_), specs_(other.specs_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Encoder& Encoder::operator=(const Encoder& other) {
  if (this != &other) {
    Encoder copy(other);
    *this = std::move(copy);
  }
  return *this;
}

int Encoder::output_width() const {
  return layers_.empty() ? input_width_ : layers_.back()->output_width();
}

Activation Encoder::forward(const Activation& input, Mode mode, Rng* rng, Trace* trace) const {
  if (input.values.cols() != input_width_) {
    throw ValidationError("encoder expects input width " + std::to_string(input_width_) + ", got " +
                          std::to_string(input.values.cols()));
  }
  if (input.positions < 1 || input.values.rows() % input.positions != 0) {
    throw ValidationError("activation rows are not a multiple of positions");
  }
  if (trace) {
    trace->mode = mode;
    trace->structure = structure_hash();
    trace->caches.assign(layers_.size(), {});
  }
  Activation x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, mode, rng, trace ? &trace->caches[i] : nullptr);
    if (!x.values.allFinite()) {
      throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                         std::string(to_string(specs_[i].kind)) + ")");
    }
  }
  return x;
}

Encoder::Gradients Encoder::zero_gradients() const {
  Gradients g;
  g.layers.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const auto& b : layers_[i]->blocks()) {
      g.layers[i].push_back(Matrix::Zero(b.value.rows(), b.value.cols()));
    }
  }
  return g;
}

Encoder::Gradients Encoder::backward(const Trace& trace, const Matrix& grad_output) const {
  if (trace.structure != structure_hash() || trace.caches.size() != layers_.size()) {
    throw ValidationError("trace was not produced by this encoder");
  }
  if (trace.mode != Mode::train) throw ValidationError("backward needs a training-mode trace");
  Gradients g = zero_gradients();
  Matrix grad = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grad = layers_[i]->backward(trace.caches[i], grad, g.layers[i]);
  }
  g.input = std::move(grad);
  return g;
}

void Encoder::commit_running_stats(const Trace& trace,
                                   const std::function<bool(const LayerSpec&)>& include) {
  if (trace.caches.size() != layers_.size()) throw ValidationError("trace/encoder mismatch");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!include || include(specs_[i])) layers_[i]->commit(trace.caches[i]);
  }
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    for (const auto& b : l->blocks())
      if (b.trainable) n += static_cast<std::size_t>(b.value.size());
  return n;
}

std::uint64_t Encoder::structure_hash() const {
  std::string s = std::to_string(input_width_);
  for (const auto& spec : specs_) {
    s += '|';
    s += to_string(spec.kind);
    s += ',' + std::to_string(spec.width) + ',' + std::to_string(spec.bias) + ',' +
         std::to_string(spec.residual) + ',' + std::to_string(spec.keep_prob) + ',' +
         std::to_string(spec.masked) + ',' + std::to_string(static_cast<int>(spec.group));
  }
  return fnv1a(s);
}

Matrix forward_vision(const Encoder& encoder, const Matrix& inputs, Mode mode, Rng* rng,
                      Encoder::Trace* trace) {
  Activation a;
  a.values = inputs;
  a.positions = 1;
  Activation out = encoder.forward(a, mode, rng, trace);
  if (out.positions != 1) throw ValidationError("vision encoder must output one vector per sample");
  return std::move(out.values);
}

Activation stack_sequences(std::span<const Matrix> embedded,
                           std::span<const std::vector<int>> token_indices) {
  if (embedded.empty()) throw ValidationError("empty sequence batch");
  const auto L = embedded.front().rows();
  const auto e = embedded.front().cols();
  Activation a;
  a.positions = static_cast<int>(L);
  a.values.resize(static_cast<Eigen::Index>(embedded.size()) * L, e);
  for (std::size_t b = 0; b < embedded.size(); ++b) {
    if (embedded[b].rows() != L || embedded[b].cols() != e) {
      throw ValidationError("sequences in a batch must share shape");
    }
    a.values.middleRows(static_cast<Eigen::Index>(b) * L, L) = embedded[b];
  }
  if (!token_indices.empty()) {
    if (token_indices.size() != embedded.size()) throw ValidationError("token/embedding count mismatch");
    a.mask.resize(a.values.rows());
    for (std::size_t b = 0; b < token_indices.size(); ++b) {
      if (static_cast<Eigen::Index>(token_indices[b].size()) != L) {
        throw ValidationError("token sequence length does not match embedding");
      }
      for (Eigen::Index t = 0; t < L; ++t) {
        a.mask(static_cast<Eigen::Index>(b) * L + t) = token_indices[b][static_cast<std::size_t>(t)] != 0;
      }
    }
  }
  return a;
}

Matrix forward_language(const Encoder& encoder, const Activation& embedded, Mode mode, Rng* rng,
                        Encoder::Trace* trace) {
  const int L = embedded.positions;
  for (int b = 0; b < embedded.batch(); ++b) {
    const bool empty = embedded.mask.size() > 0
                           ? embedded.mask.segment(b * L, L).sum() == 0.0
                           : embedded.values.middleRows(b * L, L).isZero(0.0);
    if (empty) throw ValidationError("sequence " + std::to_string(b) + " is all padding");
  }
  Activation out = encoder.forward(embedded, mode, rng, trace);
  if (out.positions != 1) throw ValidationError("language encoder must end with global_avg_pool");
  return std::move(out.values);
}

namespace {

Matrix projection_weights(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 1);
  Matrix r(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) r(i, j) = rng.normal();
  return r;
}

double projected_loss(const Encoder& enc, const Activation& input, const Matrix& weights,
                      const GradientCheckOptions& o) {
  Rng dropout = Rng::derive(o.seed, 2);
  return enc.forward(input, o.mode, &dropout).values.cwiseProduct(weights).sum();
}

}  // namespace

Encoder::Gradients analytic_gradients(const Encoder& encoder, const Activation& input,
                                      const GradientCheckOptions& o) {
  Rng dropout = Rng::derive(o.seed, 2);
  Encoder::Trace trace;
  const Activation out = encoder.forward(input, o.mode, &dropout, &trace);
  const Matrix weights = projection_weights(out.values.rows(), out.values.cols(), o.seed);
  if (o.mode == Mode::train) return encoder.backward(trace, weights);
  // Each cache records its own mode, so an eval trace differentiates the
  // eval-mode map.
  trace.mode = Mode::train;
  return encoder.backward(trace, weights);
}

GradientCheckReport compare_with_finite_differences(const Encoder& encoder, const Activation& input,
                                                    const Encoder::Gradients& analytic,
                                                    const GradientCheckOptions& o) {
  Encoder probe(encoder);
  Activation x = input;
  Matrix weights;
  {
    Rng dropout = Rng::derive(o.seed, 2);
    const Activation out = encoder.forward(input, o.mode, &dropout);
    weights = projection_weights(out.values.rows(), out.values.cols(), o.seed);
  }

  struct Entry {
    int layer;  // -1 = input
    int block;
    Eigen::Index index;
  };
  std::vector<Entry> entries;
  for (std::size_t l = 0; l < probe.layer_count(); ++l) {
    const auto& blocks = probe.layer(l).blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (!blocks[b].trainable) continue;
      for (Eigen::Index i = 0; i < blocks[b].value.size(); ++i) {
        entries.push_back({static_cast<int>(l), static_cast<int>(b), i});
      }
    }
  }
  if (o.check_input) {
    for (Eigen::Index i = 0; i < x.values.size(); ++i) entries.push_back({-1, 0, i});
  }
  if (o.max_checks > 0 && entries.size() > o.max_checks) {
    Rng pick = Rng::derive(o.seed, 3);
    pick.shuffle(entries);
    entries.resize(o.max_checks);
  }

  GradientCheckReport report;
  for (const auto& e : entries) {
    double* slot = e.layer < 0 ? x.values.data() + e.index
                               : probe.layer(static_cast<std::size_t>(e.layer))
                                         .blocks()[static_cast<std::size_t>(e.block)]
                                         .value.data() + e.index;
    const double a = e.layer < 0 ? analytic.input.data()[e.index]
                                 : analytic.layers[static_cast<std::size_t>(e.layer)]
                                                  [static_cast<std::size_t>(e.block)]
                                                      .data()[e.index];
    const double saved = *slot;
    // Divide by the representable step actually taken.
    const double hi = saved + o.step;
    const double lo = saved - o.step;
    *slot = hi;
    const double up = projected_loss(probe, x, weights, o);
    *slot = lo;
    const double down = projected_loss(probe, x, weights, o);
    *slot = saved;
    const double numeric = (up - down) / (hi - lo);
    const double scale = std::max({std::abs(a), std::abs(numeric), o.scale_floor});
    const double err = std::abs(a - numeric) / scale;
    ++report.checked;
    if (report.checked == 1 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_entry =
          e.layer < 0 ? "input[" + std::to_string(e.index) + "]"
                      : "layer " + std::to_string(e.layer) + " " +
                            probe.layer(static_cast<std::size_t>(e.layer))
                                .blocks()[static_cast<std::size_t>(e.block)].name +
                            "[" + std::to_string(e.index) + "]";
    }
  }
  report.passed = report.max_relative_error < o.tolerance;
  return report;
}

GradientCheckReport gradient_check(const Encoder& encoder, const Activation& input,
                                   const GradientCheckOptions& options) {
  return compare_with_finite_differences(encoder, input, analytic_gradients(encoder, input, options),
                                         options);
}

}  // namespace xmreid
