#pragma once

#include <array>
#include <string>
#include <vector>

#include "tacvit/tensor.hpp"

namespace tacvit {

// The eight contact quantities; x/y shear are nuisance inputs, the remaining
// six are regression targets.
struct ContactLabel {
  double x = 0, y = 0;    // mm, shear
  double z = 0;           // mm, depth
  double rx = 0, ry = 0;  // degrees
  double fx = 0, fy = 0, fz = 0;  // N
};

struct LabelRanges {
  static constexpr double xy_mm = 2.0;
  static constexpr double z_mm = 4.0;
  static constexpr double rot_deg = 20.0;
  static constexpr double fxy_n = 3.0;
  static constexpr double fz_n = 10.0;
};

struct MarkerGrid {
  int rows = 7;
  int cols = 7;
  double spacing_px = 14.0;  // at the 128 px reference resolution
};

// Per-sensor nuisance parameters; these create the domain shift between
// sensors while labels stay untouched.
struct SensorProfile {
  int sensor_id = 0;
  MarkerGrid grid;
  double marker_radius_px = 3.2;
  std::array<double, 4> illum = {1.0, 1.0, 1.0, 1.0};  // corner gains tl,tr,bl,br in (0,2]
  double glare_cx = 0.0, glare_cy = 0.0;               // normalized [-1,1]
  double glare_radius = 0.3;                           // normalized
  double glare_intensity = 0.0;
  double lens_warp = 0.0;  // radial distortion coefficient
  uint64_t jitter_seed = 0;
  double jitter_amp_px = 0.0;
  double skin_stiffness = 2.5;  // N/mm
  double background_level = 0.08;
};

// The five shipped sensor fixtures plus a nuisance-free identity profile.
std::vector<SensorProfile> default_profiles();
SensorProfile identity_profile();

// Seeded random profile spanning the nuisance axes; used for the
// pretraining corpus so the base model never sees the fixture sensors.
SensorProfile random_profile(int sensor_id, uint64_t seed);

// Fz = stiffness*z*(1 + 0.1*cos(Rx)*cos(Ry) - 0.1) clipped to [0,10];
// Fx,Fy = 0.3*Fz*(x/2), 0.3*Fz*(y/2).
void force_model(ContactLabel& label, const SensorProfile& profile);

// Uniform iid poses in the sampling ranges with forces attached.
std::vector<ContactLabel> sample_labels(int n, uint64_t seed, const SensorProfile& profile);

// Smooth deformation field at normalized position (u,v) in [-1,1]^2, returned
// in normalized units: uniform shear + radial bulge (prop. to z) + tilt term.
std::array<double, 2> displacement_field(const ContactLabel& label, double u, double v);

// Marker rest positions in normalized coordinates, jitter applied.
std::vector<std::array<double, 2>> marker_rest_positions(const SensorProfile& profile);

// Deterministic grayscale rendering, all pixels in [0,1].
Tensor<float> render(const ContactLabel& label, const SensorProfile& profile, int image_size);

struct DatasetEntry {
  std::string file;
  ContactLabel label;
};

struct DatasetManifest {
  int sensor_id = 0;
  int count = 0;
  int image_size = 0;
  uint64_t seed = 0;
  std::string dir;
  std::vector<DatasetEntry> entries;
};

DatasetManifest generate_dataset(const SensorProfile& profile, int n, uint64_t seed,
                                 const std::string& out_dir, int image_size);
DatasetManifest load_manifest(const std::string& dir);

// Binary PGM (P5, maxval 255) as the single image codec.
void save_pgm(const std::string& path, const Tensor<float>& image);
Tensor<float> load_pgm(const std::string& path);

}  // namespace tacvit
