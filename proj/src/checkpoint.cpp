#include "xmreid/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "layer_json.hpp"

namespace xmreid {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'X', 'M', 'R', 'D'};

template <typename T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Checkpoint::at(std::string_view name) const {
  const NamedArray* a = find(name);
  if (!a) throw FormatError("checkpoint has no array '" + std::string(name) + "'");
  return *a;
}

void Checkpoint::put(NamedArray a) {
  if (element_count(a.shape) != a.data.size()) {
    throw ValidationError("array '" + a.name + "' shape does not match its data");
  }
  for (auto& existing : arrays) {
    if (existing.name == a.name) {
      existing = std::move(a);
      return;
    }
  }
  arrays.push_back(std::move(a));
}

void Checkpoint::put_matrix(const std::string& name, const Matrix& m) {
  NamedArray a{name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
  a.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.data.push_back(m(r, c));
  put(std::move(a));
}

void Checkpoint::put_vector(const std::string& name, const Vector& v) {
  put({name, {static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())});
}

Matrix Checkpoint::matrix(std::string_view name) const {
  const NamedArray& a = at(name);
  if (a.shape.size() != 2) throw FormatError("array '" + a.name + "' is not two-dimensional");
  const auto rows = static_cast<Eigen::Index>(a.shape[0]);
  const auto cols = static_cast<Eigen::Index>(a.shape[1]);
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = a.data[k++];
  return m;
}

Vector Checkpoint::vector(std::string_view name) const {
  const NamedArray& a = at(name);
  if (a.shape.size() != 1) throw FormatError("array '" + a.name + "' is not one-dimensional");
  return Eigen::Map<const Vector>(a.data.data(), static_cast<Eigen::Index>(a.data.size()));
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, 4);
  put_raw<std::uint32_t>(out, kCheckpointVersion);
  put_raw<std::uint64_t>(out, c.metadata.size());
  out += c.metadata;
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    if (element_count(a.shape) != a.data.size()) {
      throw ValidationError("array '" + a.name + "' shape does not match its data");
    }
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_raw<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const char*>(a.data.data());
    out.append(p, a.data.size() * sizeof(double));
  }
  put_raw<std::uint64_t>(out, fnv1a(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const auto meta_len = in.get<std::uint64_t>("metadata length");
  if (meta_len > in.remaining()) throw FormatError("checkpoint truncated in metadata");
  c.metadata = std::string(in.take(static_cast<std::size_t>(meta_len), "metadata"));
  const auto count = in.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = in.get<std::uint32_t>("array name length");
    a.name = std::string(in.take(name_len, "array name"));
    const auto ndim = in.get<std::uint32_t>("array rank");
    if (ndim > 8) throw FormatError("array '" + a.name + "' has an implausible rank " + std::to_string(ndim));
    for (std::uint32_t d = 0; d < ndim; ++d) a.shape.push_back(in.get<std::uint64_t>("array shape"));
    const auto n = element_count(a.shape);
    if (n > in.remaining() / sizeof(double)) {
      throw FormatError("checkpoint truncated or shape table inconsistent for array '" + a.name + "'");
    }
    a.data.resize(static_cast<std::size_t>(n));
    const auto raw = in.take(static_cast<std::size_t>(n) * sizeof(double), "array data");
    std::memcpy(a.data.data(), raw.data(), raw.size());
    if (c.find(a.name)) throw FormatError("duplicate array '" + a.name + "' in checkpoint");
    c.arrays.push_back(std::move(a));
  }
  const std::size_t body = in.pos();
  const auto checksum = in.get<std::uint64_t>("checksum");
  if (checksum != fnv1a(bytes.substr(0, body))) throw FormatError("checkpoint checksum mismatch (corrupted file)");
  if (in.remaining() != 0) throw FormatError("trailing bytes after checkpoint checksum");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

void put_encoder(Checkpoint& c, const Encoder& enc, const std::string& prefix) {
  for (std::size_t i = 0; i < enc.layer_count(); ++i) {
    for (const auto& b : enc.layer(i).blocks()) c.put_matrix(prefix + std::to_string(i) + "/" + b.name, b.value);
  }
}

void get_encoder(const Checkpoint& c, Encoder& enc, const std::string& prefix) {
  for (std::size_t i = 0; i < enc.layer_count(); ++i) {
    for (auto& b : enc.layer(i).blocks()) {
      const std::string name = prefix + std::to_string(i) + "/" + b.name;
      Matrix m = c.matrix(name);
      if (m.rows() != b.value.rows() || m.cols() != b.value.cols()) {
        throw FormatError("array '" + name + "' has the wrong shape for the recorded architecture");
      }
      b.value = std::move(m);
    }
  }
}

}  // namespace

Checkpoint model_to_checkpoint(const CrossModalModel& model, const CheckpointInfo& info) {
  nlohmann::json meta;
  meta["kind"] = "model";
  meta["config_hash"] = info.config_hash;
  meta["seed"] = info.seed;
  meta["stage"] = info.stage;
  meta["epoch"] = info.epoch;
  meta["strategy"] = info.strategy;
  const ModelSpec spec = model.spec();
  meta["model"] = {
      {"vision_input", spec.vision_input},
      {"vision_layers", detail::layers_to_json(spec.vision_layers)},
      {"embed_dim", spec.embed_dim},
      {"max_length", spec.max_length},
      {"language_layers", detail::layers_to_json(spec.language_layers)},
      {"identity_count", spec.identity_count},
      {"sharing", std::string(to_string(spec.sharing))},
      {"embedding_trainable", model.embedding.trainable()},
  };
  meta["dictionary"] = nlohmann::json::parse(model.dictionary.to_json());

  Checkpoint c;
  c.metadata = meta.dump();
  put_encoder(c, model.vision, "vision/");
  c.put_matrix("embedding", model.embedding.weights());
  put_encoder(c, model.language, "language/");
  if (spec.sharing == ClassifierSharing::shared) {
    c.put_matrix("classifier/joint", model.classifier.image_weights());
  } else {
    c.put_matrix("classifier/image", model.classifier.image_weights());
    c.put_matrix("classifier/text", model.classifier.text_weights());
  }
  return c;
}

CheckpointInfo checkpoint_info(const Checkpoint& c) {
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    CheckpointInfo info;
    info.config_hash = meta.value("config_hash", std::string());
    info.seed = meta.value("seed", std::uint64_t{0});
    info.stage = meta.value("stage", 0);
    info.epoch = meta.value("epoch", 0);
    info.strategy = meta.value("strategy", 0);
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

CrossModalModel model_from_checkpoint(const Checkpoint& c) {
  nlohmann::json meta;
  ModelSpec spec;
  Dictionary dict;
  bool embedding_trainable = true;
  try {
    meta = nlohmann::json::parse(c.metadata);
    if (meta.value("kind", std::string()) != "model") throw FormatError("checkpoint does not hold a model");
    const auto& m = meta.at("model");
    spec.vision_input = m.at("vision_input").get<int>();
    spec.vision_layers = detail::layers_from_json(m.at("vision_layers"));
    spec.embed_dim = m.at("embed_dim").get<int>();
    spec.max_length = m.at("max_length").get<int>();
    spec.language_layers = detail::layers_from_json(m.at("language_layers"));
    spec.identity_count = m.at("identity_count").get<int>();
    spec.sharing = parse_sharing(m.at("sharing").get<std::string>());
    embedding_trainable = m.value("embedding_trainable", true);
    dict = Dictionary::from_json(meta.at("dictionary").dump());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  Rng scratch(0);
  CrossModalModel model = CrossModalModel::create(spec, std::move(dict), scratch);
  get_encoder(c, model.vision, "vision/");
  get_encoder(c, model.language, "language/");
  Matrix emb = c.matrix("embedding");
  if (emb.rows() != model.embedding.rows() || emb.cols() != model.embedding.dim()) {
    throw FormatError("embedding array has the wrong shape for the dictionary");
  }
  model.embedding = EmbeddingTable::from_weights(std::move(emb), embedding_trainable);
  auto load_classifier = [&](const char* name, Matrix& dst) {
    Matrix m = c.matrix(name);
    if (m.rows() != dst.rows() || m.cols() != dst.cols()) {
      throw FormatError(std::string("array '") + name + "' has the wrong shape");
    }
    dst = std::move(m);
  };
  if (spec.sharing == ClassifierSharing::shared) {
    load_classifier("classifier/joint", model.classifier.mutable_image_weights());
  } else {
    load_classifier("classifier/image", model.classifier.mutable_image_weights());
    load_classifier("classifier/text", model.classifier.mutable_text_weights());
  }
  return model;
}

void put_cca(Checkpoint& c, const CcaModel& cca) {
  c.put_matrix("cca/w_img", cca.w_x);
  c.put_matrix("cca/w_txt", cca.w_y);
  c.put_vector("cca/correlations", cca.correlations);
  c.put_vector("cca/mean_img", cca.mean_x);
  c.put_vector("cca/mean_txt", cca.mean_y);
  Vector r(2);
  r << cca.r_x, cca.r_y;
  c.put_vector("cca/r", r);
}

std::optional<CcaModel> cca_from_checkpoint(const Checkpoint& c) {
  if (!c.find("cca/w_img")) return std::nullopt;
  CcaModel m;
  m.w_x = c.matrix("cca/w_img");
  m.w_y = c.matrix("cca/w_txt");
  m.correlations = c.vector("cca/correlations");
  m.mean_x = c.vector("cca/mean_img");
  m.mean_y = c.vector("cca/mean_txt");
  const Vector r = c.vector("cca/r");
  if (r.size() != 2 || m.w_x.cols() != m.correlations.size() || m.w_y.cols() != m.correlations.size() ||
      m.mean_x.size() != m.w_x.rows() || m.mean_y.size() != m.w_y.rows()) {
    throw FormatError("CCA arrays in checkpoint are inconsistent");
  }
  m.r_x = r(0);
  m.r_y = r(1);
  return m;
}

}  // namespace xmreid
