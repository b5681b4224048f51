#include "impnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace impnet {

Box SceneObject::box_at(std::size_t frame) const {
  const double t = static_cast<double>(frame);
  const double x0 = x + vx * t;
  const double y0 = y + vy * t;
  return {x0, y0, x0 + width, y0 + height};
}

bool SceneObject::covers(double px, double py, std::size_t frame) const {
  const Box b = box_at(frame);
  if (shape == ShapeKind::rect) return px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2;
  const double cx = 0.5 * (b.x1 + b.x2);
  const double cy = 0.5 * (b.y1 + b.y2);
  const double rx = (px - cx) / (0.5 * width);
  const double ry = (py - cy) / (0.5 * height);
  return rx * rx + ry * ry <= 1.0;
}

std::string to_string(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::gaussian_blur: return "gaussian_blur";
    case DegradationKind::motion_blur: return "motion_blur";
    case DegradationKind::noise: return "noise";
  }
  return "unknown";
}

DegradationKind degradation_from_string(const std::string& name) {
  if (name == "gaussian_blur") return DegradationKind::gaussian_blur;
  if (name == "motion_blur") return DegradationKind::motion_blur;
  if (name == "noise") return DegradationKind::noise;
  throw ValidationError("unknown degradation kind '" + name + "'");
}

void SceneSpec::validate() const {
  if (width == 0 || height == 0 || frame_count == 0) throw ValidationError("scene: empty canvas or clip");
  const Box canvas{0.0, 0.0, static_cast<double>(width), static_cast<double>(height)};
  for (const auto& o : objects) {
    if (o.class_id < 0 || static_cast<std::size_t>(o.class_id) >= num_classes) {
      throw ValidationError("scene: object class out of range");
    }
    if (!(o.width > 0 && o.height > 0)) throw ValidationError("scene: object size must be positive");
    for (std::size_t t = 0; t < frame_count; ++t) {
      const Box b = o.box_at(t);
      if (b.x2 <= canvas.x1 || b.x1 >= canvas.x2 || b.y2 <= canvas.y1 || b.y1 >= canvas.y2) {
        throw ValidationError("scene: object leaves the canvas entirely at frame " + std::to_string(t));
      }
    }
  }
  for (const auto& d : degradations) {
    if (!(d.severity >= 0)) throw ValidationError("scene: negative degradation severity");
    if (d.first_frame > d.last_frame || d.last_frame >= frame_count) {
      throw ValidationError("scene: degradation frame range out of bounds");
    }
  }
}

namespace {

// Symmetric reflection (edge sample duplicated), folded for arbitrarily large offsets.
inline std::size_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  std::ptrdiff_t j = i % period;
  if (j < 0) j += period;
  if (j >= n) j = period - 1 - j;
  return static_cast<std::size_t>(j);
}

Tensor convolve_axis(const Tensor& in, const std::vector<double>& taps, std::ptrdiff_t first_offset,
                     bool horizontal) {
  Tensor out(in.shape());
  const auto H = static_cast<std::ptrdiff_t>(in.height());
  const auto W = static_cast<std::ptrdiff_t>(in.width());
  for (std::size_t c = 0; c < in.channels(); ++c) {
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const std::ptrdiff_t off = first_offset + static_cast<std::ptrdiff_t>(k);
          if (horizontal) {
            acc += taps[k] * in(c, static_cast<std::size_t>(y), reflect(x + off, W));
          } else {
            acc += taps[k] * in(c, reflect(y + off, H), static_cast<std::size_t>(x));
          }
        }
        out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
    }
  }
  return out;
}

const std::array<std::array<double, 3>, 6> kPalette{{
    {0.90, 0.20, 0.20},
    {0.20, 0.85, 0.25},
    {0.25, 0.35, 0.95},
    {0.95, 0.85, 0.20},
    {0.85, 0.30, 0.90},
    {0.20, 0.85, 0.90},
}};

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

Tensor gaussian_blur(const Tensor& frame, double sigma) {
  if (!(sigma > 0)) return frame;
  const auto taps = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  return convolve_axis(convolve_axis(frame, taps, -radius, true), taps, -radius, false);
}

double gradient_energy(const Tensor& frame) {
  double e = 0.0;
  for (std::size_t c = 0; c < frame.channels(); ++c) {
    for (std::size_t y = 0; y < frame.height(); ++y) {
      for (std::size_t x = 0; x < frame.width(); ++x) {
        if (x + 1 < frame.width()) {
          const double d = frame(c, y, x + 1) - frame(c, y, x);
          e += d * d;
        }
        if (y + 1 < frame.height()) {
          const double d = frame(c, y + 1, x) - frame(c, y, x);
          e += d * d;
        }
      }
    }
  }
  return e;
}

Tensor degrade(const Tensor& frame, DegradationKind kind, double severity, std::uint64_t noise_seed,
               bool horizontal) {
  if (!(severity >= 0)) throw ValidationError("degrade: severity must be non-negative");
  if (severity == 0) return frame;
  switch (kind) {
    case DegradationKind::gaussian_blur:
      return gaussian_blur(frame, severity);
    case DegradationKind::motion_blur: {
      const auto n = std::max<std::ptrdiff_t>(1, std::lround(severity));
      if (n == 1) return frame;
      const std::vector<double> taps(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
      return convolve_axis(frame, taps, -(n - 1) / 2, horizontal);
    }
    case DegradationKind::noise: {
      const double amplitude = 0.1 * severity;
      std::mt19937_64 rng(noise_seed);
      std::uniform_real_distribution<double> u(-amplitude, amplitude);
      Tensor out(frame.shape());
      for (std::size_t i = 0; i < frame.size(); ++i) out[i] = std::clamp(frame[i] + u(rng), 0.0, 1.0);
      return out;
    }
  }
  throw ValidationError("degrade: unknown kind");
}

VideoClip render(const SceneSpec& spec) {
  spec.validate();
  VideoClip clip;
  clip.spec = spec;

  Tensor background(3, spec.height, spec.width);
  {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double t = spec.texture * u(rng);
        for (std::size_t c = 0; c < 3; ++c) background(c, y, x) = std::clamp(spec.background[c] + t, 0.0, 1.0);
      }
    }
  }

  double sum_vx = 0.0, sum_vy = 0.0;
  for (const auto& o : spec.objects) {
    sum_vx += std::abs(o.vx);
    sum_vy += std::abs(o.vy);
  }
  const bool horizontal = sum_vx >= sum_vy;

  const Box canvas{0.0, 0.0, static_cast<double>(spec.width), static_cast<double>(spec.height)};
  for (std::size_t t = 0; t < spec.frame_count; ++t) {
    Tensor frame = background;
    std::vector<LabeledBox> boxes;
    for (const auto& o : spec.objects) {
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          if (o.covers(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, t)) {
            for (std::size_t c = 0; c < 3; ++c) frame(c, y, x) = o.color[c];
          }
        }
      }
      Box b = o.box_at(t);
      b.x1 = std::clamp(b.x1, canvas.x1, canvas.x2);
      b.x2 = std::clamp(b.x2, canvas.x1, canvas.x2);
      b.y1 = std::clamp(b.y1, canvas.y1, canvas.y2);
      b.y2 = std::clamp(b.y2, canvas.y1, canvas.y2);
      if (b.valid()) boxes.push_back({o.class_id, b});
    }
    for (const auto& d : spec.degradations) {
      if (t >= d.first_frame && t <= d.last_frame) {
        frame = degrade(frame, d.kind, d.severity, spec.seed * 7919 + t, horizontal);
      }
    }
    clip.frames.push_back(std::move(frame));
    clip.boxes.push_back(std::move(boxes));
  }
  return clip;
}

FlowField VideoClip::flow(std::size_t target, std::size_t reference, std::size_t stride) const {
  if (target >= frames.size() || reference >= frames.size()) throw ValidationError("flow: frame out of range");
  if (stride == 0 || spec.width % stride != 0 || spec.height % stride != 0) {
    throw ValidationError("flow: stride must divide the canvas");
  }
  const std::size_t h = spec.height / stride;
  const std::size_t w = spec.width / stride;
  FlowField f(2, h, w);
  const double s = static_cast<double>(stride);
  const double dt = static_cast<double>(reference) - static_cast<double>(target);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double px = (static_cast<double>(j) + 0.5) * s;
      const double py = (static_cast<double>(i) + 0.5) * s;
      // Topmost (last drawn) object wins, matching the rasterizer.
      for (auto it = spec.objects.rbegin(); it != spec.objects.rend(); ++it) {
        if (it->covers(px, py, target)) {
          f(0, i, j) = it->vx * dt / s;
          f(1, i, j) = it->vy * dt / s;
          break;
        }
      }
    }
  }
  return f;
}

double VideoClip::severity(std::size_t frame, DegradationKind kind) const {
  double s = 0.0;
  for (const auto& d : spec.degradations) {
    if (d.kind == kind && frame >= d.first_frame && frame <= d.last_frame) s = std::max(s, d.severity);
  }
  return s;
}

bool VideoClip::is_degraded(std::size_t frame) const {
  return std::any_of(spec.degradations.begin(), spec.degradations.end(), [&](const Degradation& d) {
    return d.severity > 0 && frame >= d.first_frame && frame <= d.last_frame;
  });
}

SceneSpec parse_scene(std::istream& is) {
  SceneSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "canvas") {
      ls >> spec.width >> spec.height;
    } else if (key == "frames") {
      ls >> spec.frame_count;
    } else if (key == "classes") {
      ls >> spec.num_classes;
    } else if (key == "seed") {
      ls >> spec.seed;
    } else if (key == "background") {
      ls >> spec.background[0] >> spec.background[1] >> spec.background[2] >> spec.texture;
    } else if (key == "object") {
      SceneObject o;
      std::string shape;
      ls >> o.class_id >> shape >> o.color[0] >> o.color[1] >> o.color[2] >> o.width >> o.height >> o.x >> o.y >>
          o.vx >> o.vy;
      if (shape == "rect") {
        o.shape = ShapeKind::rect;
      } else if (shape == "disc") {
        o.shape = ShapeKind::disc;
      } else {
        throw ValidationError("scene line " + std::to_string(line_no) + ": unknown shape '" + shape + "'");
      }
      spec.objects.push_back(o);
    } else if (key == "degrade") {
      Degradation d;
      std::string kind;
      ls >> d.first_frame >> d.last_frame >> kind >> d.severity;
      d.kind = degradation_from_string(kind);
      spec.degradations.push_back(d);
    } else {
      throw ValidationError("scene line " + std::to_string(line_no) + ": unknown directive '" + key + "'");
    }
    if (ls.fail()) throw ValidationError("scene line " + std::to_string(line_no) + ": malformed");
  }
  spec.validate();
  return spec;
}

void write_scene(std::ostream& os, const SceneSpec& spec) {
  os.precision(17);
  os << "canvas " << spec.width << ' ' << spec.height << '\n';
  os << "frames " << spec.frame_count << '\n';
  os << "classes " << spec.num_classes << '\n';
  os << "seed " << spec.seed << '\n';
  os << "background " << spec.background[0] << ' ' << spec.background[1] << ' ' << spec.background[2] << ' '
     << spec.texture << '\n';
  for (const auto& o : spec.objects) {
    os << "object " << o.class_id << ' ' << (o.shape == ShapeKind::rect ? "rect" : "disc") << ' ' << o.color[0]
       << ' ' << o.color[1] << ' ' << o.color[2] << ' ' << o.width << ' ' << o.height << ' ' << o.x << ' ' << o.y
       << ' ' << o.vx << ' ' << o.vy << '\n';
  }
  for (const auto& d : spec.degradations) {
    os << "degrade " << d.first_frame << ' ' << d.last_frame << ' ' << to_string(d.kind) << ' ' << d.severity
       << '\n';
  }
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open scene " + path.string());
  return parse_scene(is);
}

std::vector<SceneSpec> blur_heavy_suite(const SuiteOptions& options) {
  if (options.num_classes == 0 || options.num_classes > kPalette.size()) {
    throw ValidationError("suite: unsupported class count");
  }
  std::vector<SceneSpec> specs;
  const std::array<double, 5> speeds{-1.0, -0.5, 0.0, 0.5, 1.0};
  for (std::size_t c = 0; c < options.clips; ++c) {
    SceneSpec spec;
    spec.width = options.width;
    spec.height = options.height;
    spec.frame_count = options.frames;
    spec.num_classes = options.num_classes;
    spec.seed = options.seed * 1000003ULL + c;
    std::mt19937_64 rng(spec.seed);
    auto uniform_int = [&](long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); };
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    const double gray = uniform(0.1, 0.3);
    spec.background = {gray, gray, gray};
    spec.texture = 0.05;
    const long n_objects = uniform_int(1, 3);
    const double travel = static_cast<double>(options.frames - 1);
    for (long k = 0; k < n_objects; ++k) {
      SceneObject o;
      o.class_id = static_cast<int>(uniform_int(0, static_cast<long>(options.num_classes) - 1));
      o.shape = uniform_int(0, 1) == 0 ? ShapeKind::rect : ShapeKind::disc;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        o.color[ch] = std::clamp(kPalette[static_cast<std::size_t>(o.class_id)][ch] + uniform(-0.08, 0.08), 0.0, 1.0);
      }
      o.width = static_cast<double>(uniform_int(10, 18));
      o.height = static_cast<double>(uniform_int(10, 18));
      auto place = [&](double size, double extent, double& pos, double& vel) {
        vel = speeds[static_cast<std::size_t>(uniform_int(0, static_cast<long>(speeds.size()) - 1))];
        double lo = std::max(0.0, -vel * travel);
        double hi = std::min(extent - size, extent - size - vel * travel);
        if (lo > hi) {
          vel = 0.0;
          lo = 0.0;
          hi = extent - size;
        }
        pos = static_cast<double>(uniform_int(static_cast<long>(std::ceil(lo)), static_cast<long>(std::floor(hi))));
      };
      place(o.width, static_cast<double>(options.width), o.x, o.vx);
      place(o.height, static_cast<double>(options.height), o.y, o.vy);
      spec.objects.push_back(o);
    }

    const std::size_t l = std::max<std::size_t>(1, options.segment_length);
    const std::size_t segments = (options.frames + l - 1) / l;
    if (segments >= 2) {
      std::size_t start = 1;
      std::size_t run = 1;
      if (segments >= 3) {
        start = static_cast<std::size_t>(uniform_int(1, static_cast<long>(segments) - 2));
        run = 2;
      }
      const std::size_t first = start * l;
      const std::size_t last = std::min((start + run) * l, options.frames) - 1;
      spec.degradations.push_back(
          {first, last, DegradationKind::gaussian_blur, uniform(options.min_blur, options.max_blur)});
      if (options.noise > 0) spec.degradations.push_back({first, last, DegradationKind::noise, options.noise});
    }
    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<VideoClip> render_all(const std::vector<SceneSpec>& specs) {
  std::vector<VideoClip> clips(specs.size());
  const auto n = static_cast<std::ptrdiff_t>(specs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) clips[static_cast<std::size_t>(i)] = render(specs[static_cast<std::size_t>(i)]);
  return clips;
}

std::vector<SceneSpec> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open manifest " + path.string());
  std::vector<SceneSpec> specs;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "scene") {
      std::string file;
      ls >> file;
      std::filesystem::path p(file);
      if (p.is_relative()) p = path.parent_path() / p;
      specs.push_back(load_scene(p));
    } else if (key == "suite") {
      std::string kind;
      SuiteOptions opts;
      ls >> kind >> opts.seed >> opts.clips;
      if (kind != "blur_heavy" || ls.fail()) throw ValidationError("manifest: malformed suite line: " + line);
      auto more = blur_heavy_suite(opts);
      specs.insert(specs.end(), more.begin(), more.end());
    } else {
      throw ValidationError("manifest: unknown directive '" + key + "'");
    }
  }
  return specs;
}

}  // namespace impnet
