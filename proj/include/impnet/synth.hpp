#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "impnet/metrics.hpp"
#include "impnet/tensor.hpp"
#include "impnet/warp.hpp"

namespace impnet {

enum class ShapeKind { rect, disc };

struct SceneObject {
  int class_id = 0;
  ShapeKind shape = ShapeKind::rect;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  double width = 8, height = 8;
  double x = 0, y = 0;    // top-left corner at frame 0, pixels
  double vx = 0, vy = 0;  // pixels per frame

  Box box_at(std::size_t frame) const;
  // Whether the point (px, py) lies inside the object at `frame`.
  bool covers(double px, double py, std::size_t frame) const;
};

enum class DegradationKind { gaussian_blur, motion_blur, noise };

std::string to_string(DegradationKind kind);
DegradationKind degradation_from_string(const std::string& name);

// Applies to frames first_frame..last_frame inclusive. Severity is sigma in pixels for
// gaussian_blur, kernel length in pixels for motion_blur, and tenths of the uniform
// noise amplitude for noise.
struct Degradation {
  std::size_t first_frame = 0;
  std::size_t last_frame = 0;
  DegradationKind kind = DegradationKind::gaussian_blur;
  double severity = 0;
};

struct SceneSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t frame_count = 40;
  std::size_t num_classes = 4;
  std::array<double, 3> background{0.15, 0.15, 0.15};
  double texture = 0.05;  // amplitude of the static background texture
  std::vector<SceneObject> objects;
  std::vector<Degradation> degradations;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledBox {
  int class_id = 0;
  Box box;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct VideoClip {
  SceneSpec spec;
  std::vector<Tensor> frames;                   // (3, H, W), values in [0, 1]
  std::vector<std::vector<LabeledBox>> boxes;   // per frame

  std::size_t size() const { return frames.size(); }
  // Ground-truth backward flow at the given stride: for each grid cell of `target`, the
  // displacement (in grid cells) to the same content in `reference`.
  FlowField flow(std::size_t target, std::size_t reference, std::size_t stride) const;
  // Largest scheduled severity of `kind` covering the frame (0 when none).
  double severity(std::size_t frame, DegradationKind kind) const;
  bool is_degraded(std::size_t frame) const;
};

VideoClip render(const SceneSpec& spec);

Tensor degrade(const Tensor& frame, DegradationKind kind, double severity, std::uint64_t noise_seed = 0,
               bool horizontal = true);

// Normalized Gaussian taps with radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);
// Separable Gaussian blur with symmetric (edge-duplicating) reflection at borders.
Tensor gaussian_blur(const Tensor& frame, double sigma);
// Sum of squared forward differences over all channels.
double gradient_energy(const Tensor& frame);

// Flat text scene format, one directive per line:
//   canvas W H | frames N | classes K | seed S | background r g b texture
//   object class rect|disc r g b w h x y vx vy
//   degrade first last gaussian_blur|motion_blur|noise severity
SceneSpec parse_scene(std::istream& is);
void write_scene(std::ostream& os, const SceneSpec& spec);
SceneSpec load_scene(const std::filesystem::path& path);

struct SuiteOptions {
  std::uint64_t seed = 1;
  std::size_t clips = 10;
  std::size_t frames = 40;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t num_classes = 4;
  std::size_t segment_length = 10;
  double min_blur = 3.0;
  double max_blur = 5.0;
  double noise = 3.0;
};

// Clips where a run of consecutive whole segments (keyframes included) is heavily
// degraded; segment 0 is always clean.
std::vector<SceneSpec> blur_heavy_suite(const SuiteOptions& options);
std::vector<VideoClip> render_all(const std::vector<SceneSpec>& specs);

// Benchmark manifest: lines "scene <path>" and/or "suite blur_heavy <seed> <clips>".
std::vector<SceneSpec> load_manifest(const std::filesystem::path& path);

}  // namespace impnet
