#include "tacvit/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tacvit/rng.hpp"

namespace fs = std::filesystem;

namespace tacvit {

namespace {
constexpr double kRefRes = 128.0;  // px units in SensorProfile refer to this resolution
constexpr double kDegToRad = M_PI / 180.0;
constexpr double kMarkerBrightness = 0.9;

// deformation coefficients in normalized image units
constexpr double kShearGain = 0.06;
constexpr double kBulgeGain = 0.22;
constexpr double kTiltGain = 0.08;
}  // namespace

std::vector<SensorProfile> default_profiles() {
  std::vector<SensorProfile> ps(5);
  for (int i = 0; i < 5; ++i) {
    ps[i].sensor_id = i + 1;
    ps[i].jitter_seed = 0x5eed0000ull + static_cast<uint64_t>(i + 1);
  }
  ps[0].grid = {7, 7, 14.0};
  ps[0].marker_radius_px = 3.2;
  ps[0].illum = {1.00, 0.95, 0.92, 1.05};
  ps[0].glare_cx = 0.35; ps[0].glare_cy = -0.30; ps[0].glare_radius = 0.28; ps[0].glare_intensity = 0.10;
  ps[0].lens_warp = 0.04; ps[0].jitter_amp_px = 0.8; ps[0].skin_stiffness = 2.5; ps[0].background_level = 0.08;

  ps[1].grid = {7, 7, 13.2};
  ps[1].marker_radius_px = 2.8;
  ps[1].illum = {0.80, 1.10, 1.00, 0.90};
  ps[1].glare_cx = -0.40; ps[1].glare_cy = 0.25; ps[1].glare_radius = 0.35; ps[1].glare_intensity = 0.16;
  ps[1].lens_warp = -0.05; ps[1].jitter_amp_px = 1.2; ps[1].skin_stiffness = 2.7; ps[1].background_level = 0.12;

  ps[2].grid = {8, 8, 12.0};
  ps[2].marker_radius_px = 3.6;
  ps[2].illum = {1.15, 0.85, 1.05, 0.95};
  ps[2].glare_cx = 0.05; ps[2].glare_cy = 0.45; ps[2].glare_radius = 0.22; ps[2].glare_intensity = 0.08;
  ps[2].lens_warp = 0.08; ps[2].jitter_amp_px = 0.6; ps[2].skin_stiffness = 2.3; ps[2].background_level = 0.06;

  ps[3].grid = {6, 6, 16.0};
  ps[3].marker_radius_px = 4.0;
  ps[3].illum = {0.90, 0.90, 1.20, 1.00};
  ps[3].glare_cx = -0.25; ps[3].glare_cy = -0.40; ps[3].glare_radius = 0.40; ps[3].glare_intensity = 0.12;
  ps[3].lens_warp = 0.02; ps[3].jitter_amp_px = 1.0; ps[3].skin_stiffness = 2.6; ps[3].background_level = 0.10;

  ps[4].grid = {7, 6, 14.5};
  ps[4].marker_radius_px = 3.0;
  ps[4].illum = {1.05, 1.10, 0.80, 0.95};
  ps[4].glare_cx = 0.45; ps[4].glare_cy = 0.35; ps[4].glare_radius = 0.30; ps[4].glare_intensity = 0.20;
  ps[4].lens_warp = -0.08; ps[4].jitter_amp_px = 1.4; ps[4].skin_stiffness = 2.4; ps[4].background_level = 0.14;
  return ps;
}

SensorProfile identity_profile() {
  SensorProfile p;
  p.sensor_id = 0;
  return p;
}

SensorProfile random_profile(int sensor_id, uint64_t seed) {
  Rng rng(Rng::mix(seed, static_cast<uint64_t>(sensor_id)));
  SensorProfile p;
  p.sensor_id = sensor_id;
  p.grid.rows = 6 + int(rng.next_below(3));
  p.grid.cols = 6 + int(rng.next_below(3));
  p.grid.spacing_px = rng.uniform(11.0, 16.0);
  p.marker_radius_px = rng.uniform(2.6, 4.2);
  for (auto& g : p.illum) g = rng.uniform(0.75, 1.25);
  p.glare_cx = rng.uniform(-0.5, 0.5);
  p.glare_cy = rng.uniform(-0.5, 0.5);
  p.glare_radius = rng.uniform(0.2, 0.45);
  p.glare_intensity = rng.uniform(0.0, 0.22);
  p.lens_warp = rng.uniform(-0.09, 0.09);
  p.jitter_seed = rng.next_u64();
  p.jitter_amp_px = rng.uniform(0.4, 1.5);
  p.skin_stiffness = rng.uniform(2.2, 2.8);
  p.background_level = rng.uniform(0.05, 0.15);
  return p;
}

void force_model(ContactLabel& label, const SensorProfile& profile) {
  double fz = profile.skin_stiffness * label.z *
              (1.0 + 0.1 * std::cos(label.rx * kDegToRad) * std::cos(label.ry * kDegToRad) - 0.1);
  fz = std::clamp(fz, 0.0, LabelRanges::fz_n);
  label.fz = fz;
  // mu = 0.3 puts the extremes (|x|=2, Fz=10) exactly at +-3 N
  label.fx = 0.3 * fz * (label.x / LabelRanges::xy_mm);
  label.fy = 0.3 * fz * (label.y / LabelRanges::xy_mm);
}

std::vector<ContactLabel> sample_labels(int n, uint64_t seed, const SensorProfile& profile) {
  if (n < 1) throw UsageError("sample_labels: n must be >= 1");
  Rng rng(seed);
  std::vector<ContactLabel> out(static_cast<size_t>(n));
  for (auto& l : out) {
    l.x = rng.uniform(-LabelRanges::xy_mm, LabelRanges::xy_mm);
    l.y = rng.uniform(-LabelRanges::xy_mm, LabelRanges::xy_mm);
    l.z = rng.uniform(0.0, LabelRanges::z_mm);
    l.rx = rng.uniform(-LabelRanges::rot_deg, LabelRanges::rot_deg);
    l.ry = rng.uniform(-LabelRanges::rot_deg, LabelRanges::rot_deg);
    force_model(l, profile);
  }
  return out;
}

std::array<double, 2> displacement_field(const ContactLabel& label, double u, double v) {
  const double w = std::exp(-(u * u + v * v));
  const double du = kShearGain * (label.x / LabelRanges::xy_mm) +
                    kBulgeGain * (label.z / LabelRanges::z_mm) * u * w +
                    kTiltGain * (label.ry / LabelRanges::rot_deg) * w;
  const double dv = kShearGain * (label.y / LabelRanges::xy_mm) +
                    kBulgeGain * (label.z / LabelRanges::z_mm) * v * w +
                    kTiltGain * (label.rx / LabelRanges::rot_deg) * w;
  return {du, dv};
}

std::vector<std::array<double, 2>> marker_rest_positions(const SensorProfile& profile) {
  std::vector<std::array<double, 2>> out;
  Rng jitter(profile.jitter_seed);
  const double sp = profile.grid.spacing_px / kRefRes * 2.0;  // normalized spacing
  const double amp = profile.jitter_amp_px / kRefRes * 2.0;
  const double u0 = -sp * (profile.grid.cols - 1) / 2.0;
  const double v0 = -sp * (profile.grid.rows - 1) / 2.0;
  for (int r = 0; r < profile.grid.rows; ++r)
    for (int c = 0; c < profile.grid.cols; ++c) {
      double ju = jitter.uniform(-amp, amp);
      double jv = jitter.uniform(-amp, amp);
      out.push_back({u0 + sp * c + ju, v0 + sp * r + jv});
    }
  return out;
}

Tensor<float> render(const ContactLabel& label, const SensorProfile& profile, int image_size) {
  const int n = image_size;
  const double half = n / 2.0;
  Tensor<float> img = Tensor<float>::zeros({1, n, n});
  auto& px = img.mutable_value();

  // displaced + lens-warped marker centers in pixel coordinates
  std::vector<std::array<double, 2>> centers;
  for (const auto& m : marker_rest_positions(profile)) {
    auto d = displacement_field(label, m[0], m[1]);
    double u = m[0] + d[0], v = m[1] + d[1];
    const double rho2 = u * u + v * v;
    u *= 1.0 + profile.lens_warp * rho2;
    v *= 1.0 + profile.lens_warp * rho2;
    centers.push_back({half + u * half, half + v * half});
  }

  const double radius = profile.marker_radius_px * n / kRefRes;
  const double sigma2 = 2.0 * (radius / 2.0) * (radius / 2.0);
  const int reach = static_cast<int>(std::ceil(radius * 3.0));
  const double glare_sigma2 = 2.0 * profile.glare_radius * profile.glare_radius;

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) px[static_cast<size_t>(y) * n + x] = float(profile.background_level);

  for (const auto& c : centers) {
    const int x0 = std::max(0, int(c[0]) - reach), x1 = std::min(n - 1, int(c[0]) + reach);
    const int y0 = std::max(0, int(c[1]) - reach), y1 = std::min(n - 1, int(c[1]) + reach);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - c[0], dy = y + 0.5 - c[1];
        px[static_cast<size_t>(y) * n + x] +=
            float(kMarkerBrightness * std::exp(-(dx * dx + dy * dy) / sigma2));
      }
  }

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double u = (x + 0.5) / n, v = (y + 0.5) / n;  // [0,1] for bilinear corner gains
      const double gain = profile.illum[0] * (1 - u) * (1 - v) + profile.illum[1] * u * (1 - v) +
                          profile.illum[2] * (1 - u) * v + profile.illum[3] * u * v;
      double val = px[static_cast<size_t>(y) * n + x] * gain;
      if (profile.glare_intensity > 0) {
        const double gu = (2.0 * u - 1.0) - profile.glare_cx, gv = (2.0 * v - 1.0) - profile.glare_cy;
        val += profile.glare_intensity * std::exp(-(gu * gu + gv * gv) / glare_sigma2);
      }
      px[static_cast<size_t>(y) * n + x] = float(std::clamp(val, 0.0, 1.0));
    }
  return img;
}

void save_pgm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 1)
    throw ShapeError("save_pgm: expects [1,H,W], got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write image: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      float v = image.value()[y * w + x];
      row[static_cast<size_t>(x)] =
          static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(row.data()), w);
  }
  if (!f) throw IoError("short write on image: " + path);
}

Tensor<float> load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w < 1 || h < 1)
    throw IoError("not a maxval-255 binary PGM: " + path);
  f.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw IoError("truncated PGM: " + path);
  Tensor<float> img = Tensor<float>::zeros({1, h, w});
  for (size_t i = 0; i < raw.size(); ++i) img.mutable_value()[i] = raw[i] / 255.0f;
  return img;
}

namespace {

std::string label_csv_row(int index, const ContactLabel& l) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", index, l.x, l.y,
                l.z, l.rx, l.ry, l.fx, l.fy, l.fz);
  return buf;
}

constexpr const char* kLabelsHeader = "index,x_mm,y_mm,z_mm,rx_deg,ry_deg,fx_n,fy_n,fz_n";

}  // namespace

DatasetManifest generate_dataset(const SensorProfile& profile, int n, uint64_t seed,
                                 const std::string& out_dir, int image_size) {
  if (n < 1) throw UsageError("generate_dataset: sample count must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

  DatasetManifest m;
  m.sensor_id = profile.sensor_id;
  m.count = n;
  m.image_size = image_size;
  m.seed = seed;
  m.dir = out_dir;

  auto labels = sample_labels(n, seed, profile);
  std::ofstream csv(out_dir + "/labels.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + out_dir + "/labels.csv");
  csv << kLabelsHeader << "\n";
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%06d.pgm", i);
    save_pgm(out_dir + "/" + name, render(labels[static_cast<size_t>(i)], profile, image_size));
    csv << label_csv_row(i, labels[static_cast<size_t>(i)]) << "\n";
    m.entries.push_back({name, labels[static_cast<size_t>(i)]});
  }
  if (!csv) throw IoError("short write on " + out_dir + "/labels.csv");

  std::ofstream mf(out_dir + "/manifest.txt", std::ios::binary);
  if (!mf) throw IoError("cannot write " + out_dir + "/manifest.txt");
  mf << "sensor_id=" << m.sensor_id << "\n"
     << "count=" << m.count << "\n"
     << "image_size=" << m.image_size << "\n"
     << "seed=" << m.seed << "\n";
  for (const auto& e : m.entries) mf << "file=" << e.file << "\n";
  if (!mf) throw IoError("short write on " + out_dir + "/manifest.txt");
  return m;
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw IoError("cannot open manifest: " + dir + "/manifest.txt");
  DatasetManifest m;
  m.dir = dir;
  std::string line;
  std::vector<std::string> files;
  while (std::getline(mf, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "sensor_id") m.sensor_id = std::stoi(v);
    else if (k == "count") m.count = std::stoi(v);
    else if (k == "image_size") m.image_size = std::stoi(v);
    else if (k == "seed") m.seed = std::stoull(v);
    else if (k == "file") files.push_back(v);
  }
  std::ifstream csv(dir + "/labels.csv");
  if (!csv) throw IoError("cannot open labels: " + dir + "/labels.csv");
  std::getline(csv, line);
  if (line != kLabelsHeader) throw IoError("unexpected labels.csv header in " + dir);
  size_t row = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ContactLabel l;
    int idx = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &idx, &l.x, &l.y, &l.z,
                    &l.rx, &l.ry, &l.fx, &l.fy, &l.fz) != 9)
      throw IoError("bad labels.csv row in " + dir + ": " + line);
    if (row >= files.size()) throw IoError("labels.csv has more rows than manifest files in " + dir);
    m.entries.push_back({files[row], l});
    ++row;
  }
  if (row != files.size()) throw IoError("manifest/labels count mismatch in " + dir);
  for (const auto& e : m.entries)
    if (!fs::exists(dir + "/" + e.file)) throw IoError("missing dataset file: " + dir + "/" + e.file);
  return m;
}

}  // namespace tacvit
