#include "fptreg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fptreg/errors.hpp"
#include "fptreg/random.hpp"

namespace fptreg::net {

// --- architecture -------------------------------------------------------------

FptArchitecture FptArchitecture::desk() {
  FptArchitecture a;
  a.tnet_conv = {16, 32, 64};
  a.tnet_fc = {32, 16};
  a.embed = {32, 32};
  a.feature = {32, 64, 128};
  a.transformer = {128, 64, 64, 32, 16};
  return a;
}

FptArchitecture FptArchitecture::tiny() {
  FptArchitecture a;
  a.tnet_conv = {6, 8, 10};
  a.tnet_fc = {8, 6};
  a.embed = {5, 4};
  a.feature = {6, 8, 10};
  a.transformer = {12, 10, 8, 6, 5};
  return a;
}

FptArchitecture architecture_by_name(const std::string& name) {
  if (name == "paper") return FptArchitecture::paper();
  if (name == "desk") return FptArchitecture::desk();
  if (name == "tiny") return FptArchitecture::tiny();
  throw ParameterError("unknown architecture '" + name + "' (expected paper, desk or tiny)");
}

void FptArchitecture::validate() const {
  auto positive = [](const std::vector<std::size_t>& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](std::size_t w) { return w > 0; });
  };
  if (!positive(tnet_conv) || !positive(tnet_fc) || !positive(embed) || !positive(feature) ||
      !positive(transformer)) {
    throw ParameterError("every layer group needs at least one layer of positive width");
  }
}

std::vector<LayerSpec> declare_layers(const FptArchitecture& arch) {
  arch.validate();
  std::vector<LayerSpec> out;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t width) {
    out.push_back({name + ".weight", {in, width}});
    out.push_back({name + ".bias", {width}});
  };
  auto tnet = [&](const std::string& prefix, std::size_t dim) {
    std::size_t in = dim;
    for (std::size_t i = 0; i < arch.tnet_conv.size(); ++i) {
      dense(prefix + ".conv" + std::to_string(i), in, arch.tnet_conv[i]);
      in = arch.tnet_conv[i];
    }
    for (std::size_t i = 0; i < arch.tnet_fc.size(); ++i) {
      dense(prefix + ".fc" + std::to_string(i), in, arch.tnet_fc[i]);
      in = arch.tnet_fc[i];
    }
    dense(prefix + ".out", in, dim * dim);
  };

  tnet("input_tnet", 3);
  std::size_t in = 3;
  for (std::size_t i = 0; i < arch.embed.size(); ++i) {
    dense("embed" + std::to_string(i), in, arch.embed[i]);
    in = arch.embed[i];
  }
  tnet("feature_tnet", arch.embed.back());
  for (std::size_t i = 0; i < arch.feature.size(); ++i) {
    dense("feature" + std::to_string(i), in, arch.feature[i]);
    in = arch.feature[i];
  }
  in = arch.global_dim() + 3;
  for (std::size_t i = 0; i < arch.transformer.size(); ++i) {
    dense("transformer" + std::to_string(i), in, arch.transformer[i]);
    in = arch.transformer[i];
  }
  dense("transformer.out", in, 3);
  return out;
}

// --- parameters ---------------------------------------------------------------

FptParameters::FptParameters(FptArchitecture arch, std::vector<ParameterArray> arrays)
    : arch_(std::move(arch)), arrays_(std::move(arrays)) {
  validate();
}

FptParameters FptParameters::initialize(const FptArchitecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ParameterArray> arrays;
  for (const auto& spec : declare_layers(arch)) {
    ParameterArray a{spec.name, spec.shape, std::vector<double>(ad::element_count(spec.shape), 0.0)};
    const bool is_weight = spec.name.ends_with(".weight");
    const bool tnet_out = spec.name.ends_with("tnet.out.bias");
    const bool zero_layer = spec.name.starts_with("transformer.out") || spec.name.ends_with("tnet.out.weight");
    if (tnet_out) {
      const auto dim = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(a.values.size()))));
      for (std::size_t i = 0; i < dim; ++i) a.values[i * dim + i] = 1.0;
    } else if (is_weight && !zero_layer) {
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.shape[0]));
      for (double& v : a.values) v = uniform(rng, -bound, bound);
    }
    arrays.push_back(std::move(a));
  }
  return FptParameters(arch, std::move(arrays));
}

const ParameterArray& FptParameters::at(std::string_view name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return a;
  }
  throw ParameterError("no parameter array named '" + std::string(name) + "'");
}

ParameterArray& FptParameters::at(std::string_view name) {
  return const_cast<ParameterArray&>(std::as_const(*this).at(name));
}

std::size_t FptParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.values.size();
  return n;
}

void FptParameters::validate() const {
  const auto specs = declare_layers(arch_);
  for (const auto& spec : specs) {
    auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const ParameterArray& a) { return a.name == spec.name; });
    if (it == arrays_.end()) throw ShapeMismatchError("missing layer '" + spec.name + "'", spec.name);
    if (it->shape != spec.shape || it->values.size() != ad::element_count(spec.shape)) {
      throw ShapeMismatchError("layer '" + spec.name + "' has shape " + ad::shape_string(it->shape) + ", expected " +
                                   ad::shape_string(spec.shape),
                               spec.name);
    }
    if (!std::all_of(it->values.begin(), it->values.end(), [](double v) { return std::isfinite(v); })) {
      throw InvariantError("layer '" + spec.name + "' has non-finite values");
    }
  }
  if (arrays_.size() != specs.size()) {
    for (const auto& a : arrays_) {
      if (std::none_of(specs.begin(), specs.end(), [&](const LayerSpec& s) { return s.name == a.name; })) {
        throw ShapeMismatchError("unexpected layer '" + a.name + "'", a.name);
      }
    }
    throw ShapeMismatchError("duplicate layers in parameter set", "");
  }
}

bool FptParameters::operator==(const FptParameters& other) const {
  if (!(arch_ == other.arch_) || arrays_.size() != other.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    const auto& a = arrays_[i];
    const auto& b = other.arrays_[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) return false;
    if (std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

BoundParameters::BoundParameters(ad::Tape& tape, const FptParameters& params, bool trainable)
    : tape_(&tape), arch_(params.architecture()) {
  for (const auto& a : params.arrays()) {
    lookup_.emplace(a.name, tensors_.size());
    auto values = ad::Tape::buffer(a.values.size());
    std::copy(a.values.begin(), a.values.end(), values.begin());
    tensors_.emplace_back(a.name, trainable ? tape.parameter(a.shape, std::move(values))
                                            : tape.constant(a.shape, std::move(values)));
  }
}

const ad::Tensor& BoundParameters::operator[](std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) throw ParameterError("no parameter array named '" + std::string(name) + "'");
  return tensors_[it->second].second;
}

// --- forward graph --------------------------------------------------------------

ad::Tensor points_tensor(ad::Tape& tape, const Points& p) {
  const auto n = static_cast<std::size_t>(p.rows());
  auto values = ad::Tape::buffer(3 * n);
  std::copy(p.data(), p.data() + 3 * n, values.begin());
  return tape.constant({n, 3}, std::move(values));
}

Points tensor_points(const ad::Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3) throw DimensionError("expected an N x 3 tensor, got " + ad::shape_string(t.shape()));
  Points out(static_cast<Eigen::Index>(t.dim(0)), 3);
  std::copy(t.value().begin(), t.value().end(), out.data());
  return out;
}

namespace {

ad::Tensor dense(const BoundParameters& p, const std::string& name, const ad::Tensor& x) {
  return ad::pointwise_linear(x, p[name + ".weight"], p[name + ".bias"]);
}

// Regresses a dim x dim matrix from a point set's per-point features.
ad::Tensor tnet(const BoundParameters& p, const std::string& prefix, const ad::Tensor& x, std::size_t dim) {
  const auto& arch = p.architecture();
  ad::Tensor h = x;
  for (std::size_t i = 0; i < arch.tnet_conv.size(); ++i) h = ad::relu(dense(p, prefix + ".conv" + std::to_string(i), h));
  ad::Tensor g = ad::reshape(ad::max_pool_points(h), {1, arch.tnet_conv.back()});
  for (std::size_t i = 0; i < arch.tnet_fc.size(); ++i) g = ad::relu(dense(p, prefix + ".fc" + std::to_string(i), g));
  return ad::reshape(dense(p, prefix + ".out", g), {dim, dim});
}

}  // namespace

ad::Tensor encode(const BoundParameters& p, const ad::Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("encoder expects N x 3 points, got " + ad::shape_string(points.shape()));
  }
  if (points.dim(0) == 0) throw EmptyInputError("cannot encode an empty point set");
  const auto& arch = p.architecture();
  ad::Tensor x = ad::matmul(points, tnet(p, "input_tnet", points, 3));
  for (std::size_t i = 0; i < arch.embed.size(); ++i) x = ad::relu(dense(p, "embed" + std::to_string(i), x));
  x = ad::matmul(x, tnet(p, "feature_tnet", x, arch.embed.back()));
  for (std::size_t i = 0; i < arch.feature.size(); ++i) x = ad::relu(dense(p, "feature" + std::to_string(i), x));
  return ad::max_pool_points(x);
}

ad::Tensor transformer_displacement(const BoundParameters& p, const ad::Tensor& global, const ad::Tensor& points) {
  const auto& arch = p.architecture();
  ad::Tensor h = ad::relu(ad::conditioned_linear(points, global, p["transformer0.weight"], p["transformer0.bias"]));
  for (std::size_t i = 1; i < arch.transformer.size(); ++i) h = ad::relu(dense(p, "transformer" + std::to_string(i), h));
  return dense(p, "transformer.out", h);
}

ForwardGraph build_forward(const BoundParameters& p, const ad::Tensor& source, const ad::Tensor& target) {
  ForwardGraph g;
  g.global = ad::concat(encode(p, source), encode(p, target));
  g.displacement = transformer_displacement(p, g.global, source);
  g.transformed = ad::add(source, g.displacement);
  return g;
}

std::vector<double> extract_features(const PointSet& p, const FptParameters& params) {
  if (p.empty()) throw EmptyInputError("cannot extract features from an empty point set");
  ad::Tape tape;
  const BoundParameters bound(tape, params, false);
  const auto f = encode(bound, points_tensor(tape, p.points));
  return {f.value().begin(), f.value().end()};
}

FptOutput fpt_forward(const PointSet& source, const PointSet& target, const FptParameters& params) {
  if (source.empty() || target.empty()) throw EmptyInputError("FPT needs non-empty source and target sets");
  ad::Tape tape;
  const BoundParameters bound(tape, params, false);
  const auto g = build_forward(bound, points_tensor(tape, source.points), points_tensor(tape, target.points));
  FptOutput out;
  out.displacements = tensor_points(g.displacement);
  out.transformed = source;
  out.transformed.points = tensor_points(g.transformed);
  out.transformed.frame = Frame::transformed;
  out.global_feature.assign(g.global.value().begin(), g.global.value().end());
  return out;
}

Points displace_queries(const std::vector<double>& global_feature, const Points& queries, const FptParameters& params) {
  if (global_feature.size() != params.architecture().global_dim()) {
    throw DimensionError("global feature has " + std::to_string(global_feature.size()) + " values, expected " +
                         std::to_string(params.architecture().global_dim()));
  }
  if (queries.rows() == 0) return Points(0, 3);
  ad::Tape tape;
  const BoundParameters bound(tape, params, false);
  const auto g = tape.constant({global_feature.size()}, global_feature);
  return tensor_points(transformer_displacement(bound, g, points_tensor(tape, queries)));
}

double pair_loss(const PointSet& source, const PointSet& target, const FptParameters& params) {
  ad::Tape tape;
  const BoundParameters bound(tape, params, false);
  const auto t = points_tensor(tape, target.points);
  const auto g = build_forward(bound, points_tensor(tape, source.points), t);
  return ad::chamfer_squared(g.transformed, t).item();
}

// --- training -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (minibatch_size < 1) throw ParameterError("minibatch_size must be at least 1");
  if (!(learning_rate >= 0.0)) throw ParameterError("learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ParameterError("Adam epsilon must be positive");
  if (points_per_set < 1) throw ParameterError("points_per_set must be at least 1");
}

namespace {

PointSet subsample(const PointSet& p, std::size_t n, Rng& rng) {
  if (p.size() <= n) return p;
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  PointSet out = p;
  out.points.resize(static_cast<Eigen::Index>(n), 3);
  out.labels.clear();
  for (std::size_t i = 0; i < n; ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = p.points.row(static_cast<Eigen::Index>(idx[i]));
    if (!p.labels.empty()) out.labels.push_back(p.labels[idx[i]]);
  }
  return out;
}

struct Adam {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;

  explicit Adam(const FptParameters& p) {
    for (const auto& a : p.arrays()) {
      m.emplace_back(a.values.size(), 0.0);
      v.emplace_back(a.values.size(), 0.0);
    }
  }

  void step(FptParameters& p, const std::vector<std::vector<double>>& grads, const TrainConfig& cfg) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto& arrays = p.arrays();
    for (std::size_t k = 0; k < arrays.size(); ++k) {
      auto& values = arrays[k].values;
      const auto& g = grads[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * g[i];
        v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[k][i] / c1;
        const double vhat = v[k][i] / c2;
        values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
      }
    }
  }
};

}  // namespace

std::pair<PointSet, PointSet> prepare_pair(const TrainingItem& item, const TrainConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  PointSet target = subsample(item.target, cfg.points_per_set, rng);
  if (item.source) {
    PointSet source = subsample(*item.source, cfg.points_per_set, rng);
    return {std::move(source), std::move(target)};
  }
  target = data::normalize_to_unit_box(target).points;
  target.frame = Frame::target;
  if (!cfg.augment) {
    PointSet source = target;
    source.frame = Frame::source;
    return {std::move(source), std::move(target)};
  }
  auto pair = data::augment_pair(target, cfg.augmentation, mix_seed(seed, 0xa0));
  return {std::move(pair.source), std::move(pair.target)};
}

TrainResult train(std::span<const TrainingItem> corpus, const TrainConfig& cfg, const FptParameters& init,
                  const ProgressFn& progress) {
  cfg.validate();
  init.validate();
  if (corpus.empty()) throw EmptyInputError("training corpus is empty");

  TrainResult result;
  result.params = init;
  Adam adam(result.params);
  Rng order_rng(mix_seed(cfg.rng_seed, 0x0de5));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<std::vector<double>> grads;
  for (const auto& a : result.params.arrays()) grads.emplace_back(a.values.size(), 0.0);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + cfg.minibatch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t slot = start; slot < end; ++slot) {
        const auto [source, target] = prepare_pair(corpus[order[slot]], cfg, mix_seed(cfg.rng_seed, step * 1000003 + slot));
        ad::Tape tape;
        const BoundParameters bound(tape, result.params, true);
        const auto t = points_tensor(tape, target.points);
        const auto g = build_forward(bound, points_tensor(tape, source.points), t);
        const auto loss = ad::chamfer_squared(g.transformed, t);
        batch_loss += loss.item() * inv_batch;
        tape.backward(loss);
        const auto& tensors = bound.tensors();
        for (std::size_t k = 0; k < tensors.size(); ++k) {
          if (!tensors[k].second.has_grad()) continue;
          const auto gk = tensors[k].second.grad();
          for (std::size_t i = 0; i < gk.size(); ++i) grads[k][i] += gk[i] * inv_batch;
        }
      }

      if (!std::isfinite(batch_loss)) {
        result.aborted = true;
        result.message = "non-finite loss at step " + std::to_string(step) + "; returning the last finite parameters";
        return result;
      }
      adam.step(result.params, grads, cfg);
      result.step_losses.push_back(batch_loss);
      if (progress) progress(step, batch_loss);
      epoch_total += batch_loss;
      ++epoch_steps;
      ++step;
    }
    if (epoch_steps) result.epoch_losses.push_back(epoch_total / static_cast<double>(epoch_steps));
    if (cfg.max_steps && step >= cfg.max_steps) break;
  }
  return result;
}

// --- checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'P', 'T', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_widths(const std::vector<std::size_t>& w) {
    put(static_cast<std::uint32_t>(w.size()));
    for (auto v : w) put(static_cast<std::uint64_t>(v));
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const char> b) : bytes_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::size_t> get_widths() {
    const auto n = get<std::uint32_t>();
    if (n > 64) throw CorruptCheckpointError("checkpoint architecture block is implausible");
    std::vector<std::size_t> w(n);
    for (auto& v : w) v = static_cast<std::size_t>(get<std::uint64_t>());
    return w;
  }
  void read_doubles(std::vector<double>& out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptCheckpointError("checkpoint is truncated");
  }
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(const FptParameters& params) {
  params.validate();
  Writer w;
  w.bytes.insert(w.bytes.end(), kMagic, kMagic + sizeof kMagic);
  w.put(FptParameters::format_version);
  const auto& arch = params.architecture();
  for (const auto* widths : {&arch.tnet_conv, &arch.tnet_fc, &arch.embed, &arch.feature, &arch.transformer}) {
    w.put_widths(*widths);
  }
  w.put(static_cast<std::uint32_t>(params.arrays().size()));
  for (const auto& a : params.arrays()) {
    w.put_string(a.name);
    w.put(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.put(static_cast<std::uint64_t>(d));
  }
  for (const auto& a : params.arrays()) {
    const char* p = reinterpret_cast<const char*>(a.values.data());
    w.bytes.insert(w.bytes.end(), p, p + a.values.size() * sizeof(double));
  }
  w.put(fnv1a(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

FptParameters decode_checkpoint(std::span<const char> bytes, const FptArchitecture* expected) {
  constexpr std::size_t header = sizeof kMagic + sizeof(std::uint32_t);
  if (bytes.size() < header + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CorruptCheckpointError("not an FPT checkpoint (bad magic or too short)");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version != FptParameters::format_version) {
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(FptParameters::format_version) + ")");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (fnv1a(bytes.data(), body) != stored) throw CorruptCheckpointError("checkpoint checksum mismatch");

  Reader r(bytes.subspan(header, body - header));
  FptArchitecture arch;
  for (auto* widths : {&arch.tnet_conv, &arch.tnet_fc, &arch.embed, &arch.feature, &arch.transformer}) {
    *widths = r.get_widths();
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<ParameterArray> arrays(count);
  for (auto& a : arrays) {
    a.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CorruptCheckpointError("checkpoint layer '" + a.name + "' has implausible rank");
    a.shape.resize(rank);
    for (auto& d : a.shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  for (auto& a : arrays) {
    const std::size_t n = ad::element_count(a.shape);
    if (n > r.remaining() / sizeof(double)) throw CorruptCheckpointError("checkpoint is truncated");
    a.values.resize(n);
    r.read_doubles(a.values);
  }
  if (r.remaining() != 0) throw CorruptCheckpointError("checkpoint has trailing bytes");
  try {
    arch.validate();
  } catch (const ParameterError& e) {
    throw CorruptCheckpointError(std::string("checkpoint architecture is invalid: ") + e.what());
  }
  // Checked against the caller's declaration when given, else against the
  // architecture the file itself declares.
  FptParameters params;
  if (expected) {
    if (!(arch == *expected)) {
      // Name the first layer whose declared shape differs.
      const auto want = declare_layers(*expected);
      for (const auto& spec : want) {
        auto it = std::find_if(arrays.begin(), arrays.end(), [&](const ParameterArray& a) { return a.name == spec.name; });
        if (it == arrays.end()) throw ShapeMismatchError("checkpoint lacks layer '" + spec.name + "'", spec.name);
        if (it->shape != spec.shape) {
          throw ShapeMismatchError("layer '" + spec.name + "' has shape " + ad::shape_string(it->shape) +
                                       " in the checkpoint, expected " + ad::shape_string(spec.shape),
                                   spec.name);
        }
      }
      throw ShapeMismatchError("checkpoint architecture differs from the expected one", "");
    }
  }
  return FptParameters(std::move(arch), std::move(arrays));
}

void save_checkpoint(const FptParameters& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

FptParameters load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_checkpoint(bytes, nullptr);
}

FptParameters load_checkpoint(const std::filesystem::path& path, const FptArchitecture& expected) {
  const auto bytes = read_file(path);
  return decode_checkpoint(bytes, &expected);
}

}  // namespace fptreg::net
