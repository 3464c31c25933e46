#include "fptreg/data.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "fptreg/errors.hpp"
#include "fptreg/random.hpp"

namespace fptreg::data {

// --- meshes -------------------------------------------------------------------

double TriangleMesh::face_area(std::size_t f) const {
  const auto& t = faces.at(f);
  const Vec3 a = vertices.row(static_cast<Eigen::Index>(t[0])).transpose();
  const Vec3 b = vertices.row(static_cast<Eigen::Index>(t[1])).transpose();
  const Vec3 c = vertices.row(static_cast<Eigen::Index>(t[2])).transpose();
  return 0.5 * (b - a).cross(c - a).norm();
}

double TriangleMesh::total_area() const {
  double total = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) total += face_area(f);
  return total;
}

namespace {

// Splits an OFF stream into whitespace tokens, skipping comments and blank
// lines, and remembers which line each token came from.
class OffTokens {
 public:
  explicit OffTokens(std::istream& in) : in_(in) {}

  std::vector<std::string> next_line() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream ss(line);
      std::vector<std::string> toks;
      for (std::string t; ss >> t;) toks.push_back(t);
      if (!toks.empty()) return toks;
    }
    ++line_no_;
    throw ParseError("unexpected end of OFF file", line_no_);
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

template <typename T>
T parse_number(const std::string& tok, std::size_t line, const char* what) {
  T value{};
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(std::string("bad ") + what + " '" + tok + "'", line);
  }
  return value;
}

}  // namespace

TriangleMesh parse_off(std::istream& in) {
  OffTokens tokens(in);
  auto header = tokens.next_line();
  // Some corpora glue the counts onto the keyword ("OFF490 518 0").
  if (header[0].rfind("OFF", 0) != 0) throw ParseError("missing OFF header", tokens.line());
  std::vector<std::string> counts;
  if (header[0].size() > 3) counts.push_back(header[0].substr(3));
  counts.insert(counts.end(), header.begin() + 1, header.end());
  if (counts.empty()) counts = tokens.next_line();
  if (counts.size() < 2) throw ParseError("OFF counts line needs vertex and face counts", tokens.line());
  const auto nv = parse_number<std::size_t>(counts[0], tokens.line(), "vertex count");
  const auto nf = parse_number<std::size_t>(counts[1], tokens.line(), "face count");

  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(nv), 3);
  for (std::size_t v = 0; v < nv; ++v) {
    auto toks = tokens.next_line();
    if (toks.size() < 3) throw ParseError("vertex needs three coordinates", tokens.line());
    for (int k = 0; k < 3; ++k) {
      const double c = parse_number<double>(toks[static_cast<std::size_t>(k)], tokens.line(), "coordinate");
      if (!std::isfinite(c)) throw ParseError("non-finite coordinate", tokens.line());
      mesh.vertices(static_cast<Eigen::Index>(v), k) = c;
    }
  }
  for (std::size_t f = 0; f < nf; ++f) {
    auto toks = tokens.next_line();
    const auto corners = parse_number<std::size_t>(toks[0], tokens.line(), "corner count");
    if (corners < 3 || toks.size() < corners + 1) {
      throw ParseError("face needs at least three vertex indices", tokens.line());
    }
    std::vector<std::size_t> idx(corners);
    for (std::size_t c = 0; c < corners; ++c) {
      idx[c] = parse_number<std::size_t>(toks[c + 1], tokens.line(), "vertex index");
      if (idx[c] >= nv) {
        throw ParseError("face index " + std::to_string(idx[c]) + " out of range for " + std::to_string(nv) +
                             " vertices",
                         tokens.line());
      }
    }
    for (std::size_t c = 1; c + 1 < corners; ++c) {
      mesh.faces.push_back({idx[0], idx[c], idx[c + 1]});
      if (!(mesh.face_area(mesh.faces.size() - 1) > 0.0)) mesh.faces.pop_back();
    }
  }
  return mesh;
}

TriangleMesh load_off_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh " + path.string());
  try {
    return parse_off(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

PointSet sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(f);
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw DegeneracyError("cannot sample a mesh with zero surface area");

  Rng rng(seed);
  Points out(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = uniform(rng, 0.0, total);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const auto f = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), mesh.faces.size() - 1);
    const auto& t = mesh.faces[f];
    const double s = std::sqrt(uniform(rng, 0.0, 1.0));
    const double r = uniform(rng, 0.0, 1.0);
    out.row(static_cast<Eigen::Index>(i)) = (1.0 - s) * mesh.vertices.row(static_cast<Eigen::Index>(t[0])) +
                                            s * (1.0 - r) * mesh.vertices.row(static_cast<Eigen::Index>(t[1])) +
                                            s * r * mesh.vertices.row(static_cast<Eigen::Index>(t[2]));
  }
  return PointSet(std::move(out));
}

// --- synthetic shapes ------------------------------------------------------------

ShapeFamily parse_family(const std::string& name) {
  if (name == "ellipsoid") return ShapeFamily::ellipsoid;
  if (name == "blob" || name == "gland") return ShapeFamily::blob;
  throw ParameterError("unknown shape family '" + name + "' (expected ellipsoid or blob)");
}

std::string to_string(ShapeFamily family) { return family == ShapeFamily::ellipsoid ? "ellipsoid" : "blob"; }

void ShapeParams::validate() const {
  if (n == 0) throw ParameterError("shape needs at least one point");
  if (!(semi_axes.minCoeff() > 0.0) || !semi_axes.allFinite()) throw ParameterError("semi-axes must be positive");
  if (!(amplitude >= 0.0 && amplitude < 1.0)) throw ParameterError("blob amplitude must lie in [0, 1)");
}

namespace {

Vec3 random_direction(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Vec3 v;
    for (int k = 0; k < 3; ++k) v[k] = normal(rng);
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

}  // namespace

BlobSurface::BlobSurface(const ShapeParams& params, std::uint64_t seed) : params_(params) {
  params.validate();
  Rng rng(mix_seed(seed, 0xb10b));
  double weight_sum = 0.0;
  for (std::size_t k = 0; k < params.terms; ++k) {
    Wave wave;
    wave.direction = random_direction(rng);
    wave.frequency = uniform(rng, 1.0, 2.5);
    wave.phase = uniform(rng, 0.0, 2.0 * M_PI);
    wave.weight = uniform(rng, 0.5, 1.0);
    weight_sum += wave.weight;
    waves_.push_back(wave);
  }
  for (auto& w : waves_) w.weight /= weight_sum;
}

double BlobSurface::radius(const Vec3& u) const {
  double s = 0.0;
  for (const auto& w : waves_) s += w.weight * std::cos(w.frequency * w.direction.dot(u) + w.phase);
  return 1.0 + params_.amplitude * s;
}

Vec3 BlobSurface::surface_point(const Vec3& u) const {
  return (radius(u) * u).cwiseProduct(params_.semi_axes);
}

PointSet synth_shape(ShapeFamily family, const ShapeParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(mix_seed(seed, 0x5a3));
  Points out(static_cast<Eigen::Index>(params.n), 3);
  const Vec3& ax = params.semi_axes;
  if (family == ShapeFamily::ellipsoid) {
    // Rejection on the ellipsoid's area element keeps the density uniform.
    const Vec3 cross(ax.y() * ax.z(), ax.x() * ax.z(), ax.x() * ax.y());
    const double peak = cross.maxCoeff();
    for (std::size_t i = 0; i < params.n;) {
      const Vec3 u = random_direction(rng);
      const double g = cross.cwiseProduct(u).norm();
      if (uniform(rng, 0.0, peak) > g) continue;
      out.row(static_cast<Eigen::Index>(i++)) = u.cwiseProduct(ax).transpose();
    }
  } else {
    // Directions weighted by r^2 approximate the area element (the slope
    // term is ignored; the perturbation is low-frequency).
    const BlobSurface blob(params, seed);
    const double r_max = 1.0 + params.amplitude;
    for (std::size_t i = 0; i < params.n;) {
      const Vec3 u = random_direction(rng);
      const double r = blob.radius(u);
      if (uniform(rng, 0.0, r_max * r_max) > r * r) continue;
      out.row(static_cast<Eigen::Index>(i++)) = blob.surface_point(u).transpose();
    }
  }
  return PointSet(std::move(out));
}

// --- normalisation ------------------------------------------------------------

Points NormalizationRecord::apply(const Points& p) const {
  Points out = p.rowwise() - offset.transpose();
  return out / scale;
}

Points NormalizationRecord::invert(const Points& q) const {
  Points out = q * scale;
  out.rowwise() += offset.transpose();
  return out;
}

Normalized normalize_to_unit_box(const PointSet& p) {
  if (p.empty()) throw EmptyInputError("cannot normalise an empty point set");
  Normalized out;
  out.record.offset = p.centroid();
  const double extent = (p.points.rowwise() - out.record.offset.transpose()).cwiseAbs().maxCoeff();
  if (!(extent > 0.0)) throw DegeneracyError("cannot normalise a point set with zero extent");
  out.record.scale = extent;
  out.points = p;
  out.points.points = out.record.apply(p.points);
  out.points.unit = Unit::normalized;
  return out;
}

// --- augmentation -------------------------------------------------------------

Points GroundTruth::apply(const Points& p) const {
  return rigid.apply(tps ? tps->evaluate(p) : p);
}

TpsField random_tps(std::size_t grid, double sigma, Rng& rng) {
  if (grid < 2) throw ParameterError("TPS control grid needs at least 2 nodes per axis");
  const auto k = static_cast<Eigen::Index>(grid * grid * grid);
  Points controls(k, 3);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      for (std::size_t l = 0; l < grid; ++l) {
        auto at = [grid](std::size_t v) { return -1.0 + 2.0 * static_cast<double>(v) / static_cast<double>(grid - 1); };
        controls.row(row++) << at(i), at(j), at(l);
      }
    }
  }
  Points displaced = controls;
  for (Eigen::Index r = 0; r < k; ++r) {
    for (int c = 0; c < 3; ++c) displaced(r, c) += gaussian(rng, sigma);
  }
  return fit_tps(controls, displaced);
}

RigidTransform random_rigid(double rotation_deg, double displacement, Rng& rng) {
  const double r = rotation_deg * M_PI / 180.0;
  Vec3 angles, shift;
  for (int k = 0; k < 3; ++k) angles[k] = uniform(rng, -r, r);
  for (int k = 0; k < 3; ++k) shift[k] = uniform(rng, -displacement, displacement);
  return RigidTransform::from_euler_xyz(angles, shift);
}

AugmentedPair augment_pair(const PointSet& p, const AugmentationConfig& cfg, std::uint64_t seed) {
  p.validate();
  Rng rng(seed);
  AugmentedPair out;
  out.target = p;
  out.target.frame = Frame::target;
  if (cfg.tps_sigma > 0.0) out.truth.tps = random_tps(cfg.grid, cfg.tps_sigma, rng);
  if (cfg.rotation_deg > 0.0 || cfg.displacement > 0.0) {
    out.truth.rigid = random_rigid(cfg.rotation_deg, cfg.displacement, rng);
  }
  out.source = p;
  out.source.frame = Frame::source;
  out.source.points = out.truth.apply(p.points);
  return out;
}

// --- sparse targets -------------------------------------------------------------

void SparseSliceConfig::validate() const {
  if (!(tau > 0.0)) throw ParameterError("slab half-thickness must be positive");
  const double ns = sagittal.normal.norm(), nt = transverse.normal.norm();
  if (!(ns > 0.0) || !(nt > 0.0)) throw ParameterError("plane normals must be non-zero");
  if (sagittal.normal.cross(transverse.normal).norm() <= 1e-9 * ns * nt) {
    throw ParameterError("sagittal and transverse planes must not be parallel");
  }
}

namespace {

bool visible(const Vec3& x, const Plane& plane, double tau, const std::optional<Sector>& sector) {
  const Vec3 n = plane.normal.normalized();
  const double dist = n.dot(x - plane.point);
  if (std::abs(dist) > tau) return false;
  if (!sector) return true;
  const Vec3 in_plane = (x - plane.point) - dist * n;
  const Vec3 dir = sector->direction - n.dot(sector->direction) * n;
  if (in_plane.norm() == 0.0 || dir.norm() == 0.0) return true;
  const double c = std::clamp(in_plane.normalized().dot(dir.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI <= sector->half_angle_deg;
}

}  // namespace

PointSet biplane_sparse(const PointSet& p, const SparseSliceConfig& cfg) {
  cfg.validate();
  if (p.empty()) throw EmptyInputError("cannot slice an empty point set");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < p.points.rows(); ++i) {
    const Vec3 x = p.points.row(i).transpose();
    if (visible(x, cfg.sagittal, cfg.tau, cfg.sagittal_sector) ||
        visible(x, cfg.transverse, cfg.tau, cfg.transverse_sector)) {
      keep.push_back(i);
    }
  }
  if (keep.empty()) {
    throw VisibilityError("no points within " + std::to_string(cfg.tau) +
                          " of either imaging plane; increase the slab half-thickness or move the planes");
  }
  PointSet out;
  out.frame = p.frame;
  out.unit = p.unit;
  out.points.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.points.row(static_cast<Eigen::Index>(k)) = p.points.row(keep[k]);
    out.labels.push_back(p.labels.empty() ? static_cast<std::size_t>(keep[k])
                                           : p.labels[static_cast<std::size_t>(keep[k])]);
  }
  return out;
}

// --- splits -------------------------------------------------------------------

DatasetSplit split_dataset(const std::vector<std::string>& ids, const std::vector<std::string>& subjects,
                           double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("split fraction must lie in (0, 1)");
  if (!subjects.empty() && subjects.size() != ids.size()) {
    throw PairingError("split needs one subject per item");
  }
  const auto& groups = subjects.empty() ? ids : subjects;
  // Unique subjects in first-seen order, then a seeded shuffle.
  std::vector<std::string> unique;
  std::set<std::string> seen;
  for (const auto& s : groups) {
    if (seen.insert(s).second) unique.push_back(s);
  }
  Rng rng(seed);
  std::shuffle(unique.begin(), unique.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(unique.size())));
  const std::set<std::string> train_subjects(unique.begin(), unique.begin() + static_cast<std::ptrdiff_t>(n_train));

  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    (train_subjects.count(groups[i]) ? split.train : split.test).push_back(ids[i]);
  }
  return split;
}

// --- point and landmark files -------------------------------------------------

namespace {

Points rows_to_points(const std::vector<std::array<double, 3>>& rows) {
  Points out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int k = 0; k < 3; ++k) out(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return out;
}

void write_rows(std::ostream& out, const Points& points) {
  char buf[96];
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", points(i, 0), points(i, 1), points(i, 2));
    out << buf;
  }
}

}  // namespace

Points read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::array<double, 3>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::vector<std::string> toks;
    for (std::string t; ss >> t;) toks.push_back(t);
    if (toks.empty()) continue;
    if (toks.size() < 3) throw ParseError(path.string() + ": expected x y z", line_no);
    std::array<double, 3> r{};
    for (std::size_t k = 0; k < 3; ++k) r[k] = parse_number<double>(toks[k], line_no, "coordinate");
    rows.push_back(r);
  }
  return rows_to_points(rows);
}

void write_xyz(const std::filesystem::path& path, const Points& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_rows(out, points);
  if (!out) throw IoError("failed writing " + path.string());
}

Points read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") throw ParseError(path.string() + ": missing ply magic", line_no);
  std::size_t vertices = 0;
  bool in_vertex = false, ascii = false;
  std::vector<std::string> props;
  for (;;) {
    if (!next()) throw ParseError(path.string() + ": unterminated PLY header", line_no);
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      std::string name;
      std::size_t count = 0;
      ss >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) vertices = count;
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
    }
  }
  if (!ascii) throw ParseError(path.string() + ": only ASCII PLY is supported", line_no);
  auto col = [&](const char* name) -> std::size_t {
    auto it = std::find(props.begin(), props.end(), name);
    if (it == props.end()) throw ParseError(path.string() + ": vertex property '" + name + "' missing", line_no);
    return static_cast<std::size_t>(it - props.begin());
  };
  const std::array<std::size_t, 3> cols{col("x"), col("y"), col("z")};
  std::vector<std::array<double, 3>> rows;
  rows.reserve(vertices);
  while (rows.size() < vertices) {
    if (!next()) throw ParseError(path.string() + ": truncated vertex list", line_no);
    std::istringstream ss(line);
    std::vector<std::string> toks;
    for (std::string t; ss >> t;) toks.push_back(t);
    if (toks.empty()) continue;
    if (toks.size() < props.size()) throw ParseError(path.string() + ": short vertex row", line_no);
    std::array<double, 3> r{};
    for (std::size_t k = 0; k < 3; ++k) r[k] = parse_number<double>(toks[cols[k]], line_no, "coordinate");
    rows.push_back(r);
  }
  return rows_to_points(rows);
}

void write_ply(const std::filesystem::path& path, const Points& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << points.rows()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  write_rows(out, points);
  if (!out) throw IoError("failed writing " + path.string());
}

Points read_points(const std::filesystem::path& path) {
  return path.extension() == ".ply" ? read_ply(path) : read_xyz(path);
}

void write_points(const std::filesystem::path& path, const Points& points) {
  if (path.extension() == ".ply") {
    write_ply(path, points);
  } else {
    write_xyz(path, points);
  }
}

}  // namespace fptreg::data
