#include "mcnn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mcnn/rng.hpp"

namespace mcnn::synth {
namespace {

using maskgen::Part;
using maskgen::Point;

struct Rgb {
  float r, g, b;
};

constexpr std::array<Rgb, 6> kHeadColors = {{
    {0.86f, 0.18f, 0.14f},
    {0.16f, 0.32f, 0.86f},
    {0.92f, 0.82f, 0.16f},
    {0.62f, 0.22f, 0.72f},
    {0.14f, 0.76f, 0.78f},
    {0.95f, 0.52f, 0.10f},
}};
constexpr Rgb kTorsoBase = {0.78f, 0.64f, 0.40f};
constexpr Rgb kStripe = {0.28f, 0.18f, 0.10f};
constexpr Rgb kRing = {0.10f, 0.08f, 0.08f};
constexpr Rgb kOutline = {0.05f, 0.05f, 0.05f};

Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

int torso_pattern_count(int classes) { return classes % 2 == 0 ? 2 : 1; }

void put(Image& img, int y, int x, Rgb c) {
  img.at(0, y, x) = c.r;
  img.at(1, y, x) = c.g;
  img.at(2, y, x) = c.b;
}

Rgb head_colour(int pattern, Point p, Point center, double radius) {
  const Rgb base = kHeadColors[static_cast<std::size_t>(pattern / 2) % kHeadColors.size()];
  if (pattern % 2 == 1) {
    const double d = std::hypot(p.x - center.x, p.y - center.y) / radius;
    if (std::abs(d - 0.55) < 0.14) return kRing;
  }
  return base;
}

Rgb torso_colour(int pattern, Point p, double scale) {
  const double period = (pattern / 2 == 0 ? 4.0 : 6.5) * scale;
  const double coord = pattern % 2 == 0 ? p.y : p.x;
  const double f = coord / period - std::floor(coord / period);
  return f < 0.42 ? kStripe : kTorsoBase;
}

struct Distractor {
  bool triangle;
  bool head_style;
  int pattern;
  Point center;
  double half;
  Point tri[3];

  bool contains(Point p) const {
    if (!triangle) return std::abs(p.x - center.x) <= half && std::abs(p.y - center.y) <= half;
    double s[3];
    for (int i = 0; i < 3; ++i) {
      const Point a = tri[i], b = tri[(i + 1) % 3];
      s[i] = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    }
    return (s[0] >= 0 && s[1] >= 0 && s[2] >= 0) || (s[0] <= 0 && s[1] <= 0 && s[2] <= 0);
  }
};

struct Anchor {
  Part part;
  double u, v;
};

constexpr std::array<Anchor, 5> kHeadAnchors = {{
    {Part::Beak, 0.80, -0.05},
    {Part::Forehead, 0.55, 0.50},
    {Part::Crown, 0.00, 0.80},
    {Part::LeftEye, 0.35, 0.25},
    {Part::RightEye, 0.30, 0.30},
}};
constexpr std::array<Anchor, 8> kTorsoAnchors = {{
    {Part::Back, -0.10, 0.75},
    {Part::Breast, 0.60, -0.50},
    {Part::Belly, 0.05, -0.80},
    {Part::LeftLeg, -0.20, -0.85},
    {Part::RightLeg, 0.15, -0.85},
    {Part::LeftWing, -0.25, 0.35},
    {Part::RightWing, -0.05, 0.45},
    {Part::Tail, -0.92, 0.00},
}};

double round_mil(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
  if (classes > 2 * 2 * static_cast<int>(kHeadColors.size())) throw std::invalid_argument("synth: at most 24 classes");
  if (train_per_class < 0 || test_per_class < 0) throw std::invalid_argument("synth: per-class counts must be >= 0");
  if (image_size < 32) throw std::invalid_argument("synth: image size must be >= 32");
  if (!(clutter >= 0.0) || !std::isfinite(clutter)) throw std::invalid_argument("synth: clutter must be >= 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("synth: noise must be >= 0");
  if (!(near_fraction >= 0.0 && near_fraction <= 1.0)) throw std::invalid_argument("synth: near_fraction must be in [0, 1]");
}

bool BirdGeometry::in_torso(const Point& p) const {
  const Point q = p - torso_center;
  const double u = dot(q, facing) / torso_a, v = dot(q, up) / torso_b;
  return u * u + v * v <= 1.0;
}

bool BirdGeometry::in_head(const Point& p) const {
  return std::hypot(p.x - head_center.x, p.y - head_center.y) <= head_r;
}

int head_pattern_count(int classes) { return (classes + torso_pattern_count(classes) - 1) / torso_pattern_count(classes); }
int head_pattern(int label, int classes) { return label / torso_pattern_count(classes); }
int torso_pattern(int label, int classes) { return label % torso_pattern_count(classes); }

std::string class_name(int label, int classes) {
  static constexpr std::array<const char*, 6> colours = {"red", "blue", "yellow", "purple", "cyan", "orange"};
  const int h = head_pattern(label, classes), t = torso_pattern(label, classes);
  std::string name = std::string(colours[static_cast<std::size_t>(h / 2)]) + (h % 2 ? "-ringed" : "-plain");
  if (torso_pattern_count(classes) > 1) name += t % 2 == 0 ? "_hstripe" : "_vstripe";
  return name;
}

SynthSample render_sample(const SynthConfig& config, int label, dataio::Split split, int index) {
  config.validate();
  if (label < 0 || label >= config.classes) throw std::invalid_argument("synth: label out of range");
  const std::uint64_t salt =
      (static_cast<std::uint64_t>(label) * 2 + (split == dataio::Split::Test ? 1 : 0)) * 1000003ULL + static_cast<std::uint64_t>(index);
  Rng rng(derive_seed(config.seed, salt));
  const int S = config.image_size;
  const double unit = S / 96.0;

  SynthSample out;
  out.label = label;
  out.image = Image(S, S);

  // Background: smooth two-axis gradient plus noise.
  const Rgb bg0{float(rng.uniform(0.30, 0.50)), float(rng.uniform(0.40, 0.58)), float(rng.uniform(0.28, 0.45))};
  const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double shade = gx * (x / double(S) - 0.5) + gy * (y / double(S) - 0.5);
      const double n = rng.uniform(-0.04, 0.04);
      put(out.image, y, x,
          Rgb{float(std::clamp(bg0.r + shade + n, 0.0, 1.0)), float(std::clamp(bg0.g + shade + n, 0.0, 1.0)),
              float(std::clamp(bg0.b + shade + n, 0.0, 1.0))});
    }

  // Bird geometry; resampled until every keypoint sits inside its shapes.
  BirdGeometry& g = out.bird;
  maskgen::KeypointSet& kps = out.keypoints;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100) throw std::logic_error("synth: could not place a bird");
    const double s = rng.uniform(0.85, 1.15) * unit;
    g.torso_a = rng.uniform(17.0, 21.0) * s;
    g.torso_b = rng.uniform(11.0, 13.5) * s;
    g.head_r = rng.uniform(7.0, 8.5) * s;
    const double theta = rng.uniform(-25.0, 25.0) * std::numbers::pi / 180.0;
    const double dir = rng.coin() ? 1.0 : -1.0;
    g.facing = {dir * std::cos(theta), std::sin(theta)};
    g.up = {g.facing.y, -g.facing.x};
    if (g.up.y > 0) g.up = -1.0 * g.up;
    const Point head_offset = (g.torso_a + 0.35 * g.head_r) * g.facing;
    // Extents of the rotated ellipse.
    const double ex = std::sqrt(std::pow(g.torso_a * g.facing.x, 2) + std::pow(g.torso_b * g.up.x, 2));
    const double ey = std::sqrt(std::pow(g.torso_a * g.facing.y, 2) + std::pow(g.torso_b * g.up.y, 2));
    const double x_lo = std::min(-ex, head_offset.x - g.head_r), x_hi = std::max(ex, head_offset.x + g.head_r);
    const double y_lo = std::min(-ey, head_offset.y - g.head_r), y_hi = std::max(ey, head_offset.y + g.head_r);
    const double margin = 2.0;
    if (x_hi - x_lo + 2 * margin >= S || y_hi - y_lo + 2 * margin >= S) continue;
    g.torso_center = {rng.uniform(margin - x_lo, S - margin - x_hi), rng.uniform(margin - y_lo, S - margin - y_hi)};
    g.head_center = g.torso_center + head_offset;

    kps = {};
    auto place = [&](Part p, Point at) { kps[p] = {{round_mil(at.x), round_mil(at.y)}, true}; };
    for (const auto& a : kHeadAnchors) place(a.part, g.head_center + (a.u * g.head_r) * g.facing + (a.v * g.head_r) * g.up);
    for (const auto& a : kTorsoAnchors) place(a.part, g.torso_center + (a.u * g.torso_a) * g.facing + (a.v * g.torso_b) * g.up);
    const Point neck = g.torso_center + (0.92 * g.torso_a) * g.facing;
    place(Part::Nape, neck + (0.3 * g.head_r) * g.up);
    place(Part::Throat, neck - (0.3 * g.head_r) * g.up);
    // The eye on the far side is usually hidden.
    const Part far_eye = dir > 0 ? Part::RightEye : Part::LeftEye;
    if (rng.uniform() < 0.7) kps[far_eye].visible = false;

    bool ok = true;
    for (Part p : maskgen::kHeadParts) ok = ok && g.in_head(kps[p].position);
    for (Part p : maskgen::kTorsoParts) {
      if (p == Part::Nape || p == Part::Throat) continue;
      ok = ok && g.in_torso(kps[p].position);
    }
    ok = ok && g.in_torso(kps[Part::Nape].position) && g.in_torso(kps[Part::Throat].position);
    for (const auto& kp : kps.points) ok = ok && kp.position.x >= 0 && kp.position.y >= 0 && kp.position.x < S && kp.position.y < S;
    if (ok) break;
  }

  // Distractors, biased toward the bird's box so they share its crops.
  const double bx0 = std::min(g.torso_center.x - g.torso_a, g.head_center.x - g.head_r);
  const double bx1 = std::max(g.torso_center.x + g.torso_a, g.head_center.x + g.head_r);
  const double by0 = std::min(g.torso_center.y - g.torso_a, g.head_center.y - g.head_r);
  const double by1 = std::max(g.torso_center.y + g.torso_a, g.head_center.y + g.head_r);
  int count = static_cast<int>(std::floor(config.clutter));
  if (rng.uniform() < config.clutter - count) ++count;
  std::vector<Distractor> clutter;
  for (int i = 0; i < count; ++i) {
    Distractor d{};
    d.triangle = rng.coin();
    d.head_style = rng.coin();
    d.pattern = d.head_style ? rng.uniform_int(0, head_pattern_count(config.classes) - 1)
                             : rng.uniform_int(0, torso_pattern_count(config.classes) - 1);
    // Small shapes inside the bird's box show through the gaps of its crops.
    if (rng.uniform() < config.near_fraction) {
      d.half = rng.uniform(4.0, 9.0) * unit;
      d.center = {rng.uniform(bx0 - 2 * unit, bx1 + 2 * unit), rng.uniform(by0 - 2 * unit, by1 + 2 * unit)};
    } else {
      d.half = rng.uniform(6.0, 12.0) * unit;
      d.center = {rng.uniform(0.0, S), rng.uniform(0.0, S)};
    }
    const double a0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 3; ++k) {
      const double ang = a0 + k * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.3, 0.3);
      d.tri[k] = d.center + Point{1.4 * d.half * std::cos(ang), 1.4 * d.half * std::sin(ang)};
    }
    clutter.push_back(d);
  }
  for (const auto& d : clutter) {
    const int x0 = std::max(0, int(std::floor(d.center.x - 1.5 * d.half)));
    const int x1 = std::min(S - 1, int(std::ceil(d.center.x + 1.5 * d.half)));
    const int y0 = std::max(0, int(std::floor(d.center.y - 1.5 * d.half)));
    const int y1 = std::min(S - 1, int(std::ceil(d.center.y + 1.5 * d.half)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Point p{x + 0.5, y + 0.5};
        if (!d.contains(p)) continue;
        put(out.image, y, x, d.head_style ? head_colour(d.pattern, p, d.center, d.half) : torso_colour(d.pattern, p, unit));
      }
  }

  // Bird: torso, head over it, eye, then a one-pixel outline of the union.
  const int hp = head_pattern(label, config.classes), tp = torso_pattern(label, config.classes);
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(S) * S, 0);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const Point p{x + 0.5, y + 0.5};
      if (g.in_head(p)) {
        put(out.image, y, x, head_colour(hp, p, g.head_center, g.head_r));
        inside[static_cast<std::size_t>(y) * S + x] = 1;
      } else if (g.in_torso(p)) {
        put(out.image, y, x, torso_colour(tp, p, unit));
        inside[static_cast<std::size_t>(y) * S + x] = 1;
      }
    }
  const Point eye = g.head_center + (0.35 * g.head_r) * g.facing + (0.25 * g.head_r) * g.up;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      if (std::hypot(x + 0.5 - eye.x, y + 0.5 - eye.y) <= 1.1 * unit) put(out.image, y, x, kRing);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      if (!inside[static_cast<std::size_t>(y) * S + x]) continue;
      bool edge = false;
      for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= S || xx >= S || !inside[static_cast<std::size_t>(yy) * S + xx]) edge = true;
      }
      if (edge) put(out.image, y, x, kOutline);
    }
  if (config.noise > 0.0)
    for (float& v : out.image.data) v = static_cast<float>(std::clamp(v + config.noise * rng.normal(), 0.0, 1.0));
  return out;
}

dataio::DatasetManifest generate_synthetic_dataset(const SynthConfig& config, const std::filesystem::path& out) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out / "images", ec);
  if (ec) throw std::runtime_error("cannot create '" + (out / "images").string() + "': " + ec.message());

  dataio::DatasetManifest m;
  m.root = out;
  m.image_size = config.image_size;
  for (int k = 0; k < config.classes; ++k) m.classes.push_back(class_name(k, config.classes));
  for (auto split : {dataio::Split::Train, dataio::Split::Test}) {
    const int per_class = split == dataio::Split::Train ? config.train_per_class : config.test_per_class;
    for (int k = 0; k < config.classes; ++k)
      for (int i = 0; i < per_class; ++i) {
        SynthSample s = render_sample(config, k, split, i);
        char name[64];
        std::snprintf(name, sizeof name, "images/%s_c%02d_%04d.ppm", std::string(dataio::split_name(split)).c_str(), k, i);
        write_ppm(out / name, s.image);
        m.records.push_back(dataio::Record{name, k, split, s.keypoints});
      }
  }
  dataio::save_manifest(out / "manifest.txt", m);
  return m;
}

}  // namespace mcnn::synth
