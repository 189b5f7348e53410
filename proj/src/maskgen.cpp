#include "mcnn/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mcnn/diagnostics.hpp"

namespace mcnn::maskgen {
namespace {

constexpr std::array<std::string_view, kNumParts> kPartNames = {
    "beak", "forehead", "crown", "left_eye", "right_eye", "nape", "throat", "back",
    "breast", "belly", "left_leg", "right_leg", "left_wing", "right_wing", "tail"};

constexpr double kEps = 1e-9;

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.x + t * dx - p.x, qy = a.y + t * dy - p.y;
  return std::sqrt(qx * qx + qy * qy);
}

template <typename Tag>
constexpr std::uint8_t max_value() {
  return std::is_same_v<Tag, LabelTag> ? 2 : 1;
}

void paint(LabelMap& map, const BinaryMask& mask, Label label) {
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (mask.at(y, x)) map.set(y, x, static_cast<std::uint8_t>(label));
}

void write_pgm_bytes(const std::filesystem::path& path, int w, int h, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write '" + path.string() + "'");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_pgm_bytes(const std::filesystem::path& path, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open '" + path.string() + "'");
  std::string magic;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw ImageIoError("'" + path.string() + "' is not an 8-bit binary PGM");
  }
  in.get();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ImageIoError("truncated PGM '" + path.string() + "'");
  return bytes;
}

}  // namespace

std::string_view part_name(Part part) { return kPartNames[static_cast<std::size_t>(part)]; }

std::optional<Part> part_from_name(std::string_view name) {
  for (int i = 0; i < kNumParts; ++i)
    if (kPartNames[i] == name) return static_cast<Part>(i);
  return std::nullopt;
}

template <typename Tag>
Grid<Tag>::Grid(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("grid dimensions must be positive");
  if (fill > max_value<Tag>()) throw std::invalid_argument("grid fill value out of range");
  cells_.assign(static_cast<std::size_t>(width) * height, fill);
}

template <typename Tag>
Grid<Tag>::Grid(int width, int height, std::vector<std::uint8_t> cells)
    : width_(width), height_(height), cells_(std::move(cells)) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("grid dimensions must be positive");
  if (cells_.size() != static_cast<std::size_t>(width) * height) throw std::invalid_argument("grid size mismatch");
  for (auto v : cells_)
    if (v > max_value<Tag>()) throw std::invalid_argument("grid value " + std::to_string(v) + " out of range");
}

template <typename Tag>
void Grid<Tag>::set(int y, int x, std::uint8_t v) {
  if (v > max_value<Tag>()) throw std::invalid_argument("grid value " + std::to_string(v) + " out of range");
  cells_[static_cast<std::size_t>(y) * width_ + x] = v;
}

template <typename Tag>
std::size_t Grid<Tag>::count(std::uint8_t v) const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), v));
}

template class Grid<LabelTag>;
template class Grid<MaskTag>;

PartPoints split_keypoints(const KeypointSet& keypoints) {
  PartPoints out;
  for (Part p : kHeadParts)
    if (keypoints[p].visible) out.head.push_back(keypoints[p].position);
  for (Part p : kTorsoParts)
    if (keypoints[p].visible) out.torso.push_back(keypoints[p].position);
  return out;
}

Polygon convex_hull(std::span<const Point> points) {
  if (points.empty()) throw std::invalid_argument("convex_hull: no points");
  std::vector<Point> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() == 1) return Polygon{pts, true};

  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    const Point& p = pts[i];
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  if (hull.size() < 3) {
    // All collinear: the sorted extremes span the segment.
    return Polygon{{pts.front(), pts.back()}, true};
  }
  return Polygon{hull, false};
}

BinaryMask rasterize_polygon(const Polygon& polygon, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("rasterize_polygon: zero-size canvas");
  if (polygon.vertices.empty()) throw std::invalid_argument("rasterize_polygon: empty polygon");
  BinaryMask mask(width, height);
  const auto& v = polygon.vertices;
  double x0 = v[0].x, x1 = v[0].x, y0 = v[0].y, y1 = v[0].y;
  for (const Point& p : v) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double grow = polygon.degenerate ? kDegenerateRadius : 0.0;
  const int jlo = std::max(0, static_cast<int>(std::floor(x0 - grow - 0.5)));
  const int jhi = std::min(width - 1, static_cast<int>(std::ceil(x1 + grow - 0.5)));
  const int ilo = std::max(0, static_cast<int>(std::floor(y0 - grow - 0.5)));
  const int ihi = std::min(height - 1, static_cast<int>(std::ceil(y1 + grow - 0.5)));
  for (int i = ilo; i <= ihi; ++i) {
    for (int j = jlo; j <= jhi; ++j) {
      const Point c{j + 0.5, i + 0.5};
      bool inside = true;
      if (polygon.degenerate) {
        const Point& a = v.front();
        const Point& b = v.back();
        inside = segment_distance(c, a, b) <= kDegenerateRadius + kEps;
      } else {
        for (std::size_t e = 0; e < v.size() && inside; ++e) {
          const Point& a = v[e];
          const Point& b = v[(e + 1) % v.size()];
          const double len = std::hypot(b.x - a.x, b.y - a.y);
          inside = cross(a, b, c) >= -kEps * len;
        }
      }
      if (inside) mask.set(i, j, 1);
    }
  }
  return mask;
}

LabelMap build_label_map(const KeypointSet& keypoints, int width, int height) {
  LabelMap map(width, height);
  const PartPoints parts = split_keypoints(keypoints);
  if (parts.head.empty() && parts.torso.empty()) {
    warn("build_label_map: no visible keypoints; label map is all background");
    return map;
  }
  if (!parts.torso.empty()) paint(map, rasterize_polygon(convex_hull(parts.torso), width, height), Label::Torso);
  if (!parts.head.empty()) paint(map, rasterize_polygon(convex_hull(parts.head), width, height), Label::Head);
  return map;
}

CropOffset center_crop_offset(int width, int height, int crop) {
  if (crop <= 0) throw std::invalid_argument("center_crop: crop size must be positive");
  auto shift = [crop](int size) { return size >= crop ? -((size - crop) / 2) : (crop - size) / 2; };
  return CropOffset{shift(width), shift(height)};
}

CroppedSample center_crop(const Image& image, const KeypointSet& keypoints, int crop) {
  const CropOffset off = center_crop_offset(image.width, image.height, crop);
  CroppedSample out{Image(crop, crop), keypoints, off};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < crop; ++y) {
      const int sy = y - off.dy;
      if (sy < 0 || sy >= image.height) continue;
      for (int x = 0; x < crop; ++x) {
        const int sx = x - off.dx;
        if (sx >= 0 && sx < image.width) out.image.at(c, y, x) = image.at(c, sy, sx);
      }
    }
  for (auto& kp : out.keypoints.points) {
    kp.position.x += off.dx;
    kp.position.y += off.dy;
    if (kp.position.x < 0 || kp.position.y < 0 || kp.position.x >= crop || kp.position.y >= crop) kp.visible = false;
  }
  return out;
}

LabelMap center_crop(const LabelMap& map, int crop) {
  const CropOffset off = center_crop_offset(map.width(), map.height(), crop);
  LabelMap out(crop, crop);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) {
      const int sy = y - off.dy, sx = x - off.dx;
      if (sy >= 0 && sx >= 0 && sy < map.height() && sx < map.width()) out.set(y, x, map.at(sy, sx));
    }
  return out;
}

Box mask_to_bbox(const BinaryMask& mask) {
  Box box{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(y, x)) {
        box.x_min = std::min(box.x_min, x);
        box.y_min = std::min(box.y_min, y);
        box.x_max = std::max(box.x_max, x);
        box.y_max = std::max(box.y_max, y);
      }
  if (box.x_max < 0) {
    warn("mask_to_bbox: empty mask; using the full image box");
    return Box{0, 0, mask.width() - 1, mask.height() - 1};
  }
  return box;
}

BinaryMask union_masks(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw std::invalid_argument("union_masks: dimension mismatch");
  std::vector<std::uint8_t> cells(a.cells().size());
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = (a.cells()[i] | b.cells()[i]);
  return BinaryMask(a.width(), a.height(), std::move(cells));
}

template <typename Tag>
Grid<Tag> resize_nearest(const Grid<Tag>& grid, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_nearest: output dims must be positive");
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    const int si = static_cast<int>((2LL * i + 1) * grid.height() / (2LL * out_h));
    for (int j = 0; j < out_w; ++j) {
      const int sj = static_cast<int>((2LL * j + 1) * grid.width() / (2LL * out_w));
      cells[static_cast<std::size_t>(i) * out_w + j] = grid.at(si, sj);
    }
  }
  return Grid<Tag>(out_w, out_h, std::move(cells));
}

template <typename Tag>
Grid<Tag> crop_grid(const Grid<Tag>& grid, const Box& box) {
  if (box.x_min < 0 || box.y_min < 0 || box.x_max >= grid.width() || box.y_max >= grid.height() ||
      box.x_min > box.x_max || box.y_min > box.y_max) {
    throw std::invalid_argument("crop_grid: box outside grid");
  }
  std::vector<std::uint8_t> cells;
  cells.reserve(static_cast<std::size_t>(box.area()));
  for (int y = box.y_min; y <= box.y_max; ++y)
    for (int x = box.x_min; x <= box.x_max; ++x) cells.push_back(grid.at(y, x));
  return Grid<Tag>(box.width(), box.height(), std::move(cells));
}

PartMasks labelmap_to_part_masks(const LabelMap& map) {
  const std::size_t n = map.cells().size();
  std::vector<std::uint8_t> head(n), torso(n), object(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = map.cells()[i];
    head[i] = v == static_cast<std::uint8_t>(Label::Head);
    torso[i] = v == static_cast<std::uint8_t>(Label::Torso);
    object[i] = head[i] | torso[i];
  }
  return PartMasks{BinaryMask(map.width(), map.height(), std::move(head)),
                   BinaryMask(map.width(), map.height(), std::move(torso)),
                   BinaryMask(map.width(), map.height(), std::move(object))};
}

KeypointSet flip_keypoints(const KeypointSet& keypoints, int width) {
  KeypointSet out = keypoints;
  for (auto& kp : out.points) kp.position.x = width - kp.position.x;
  return out;
}

template <typename Tag>
Grid<Tag> flip_horizontal(const Grid<Tag>& grid) {
  std::vector<std::uint8_t> cells(grid.cells().size());
  for (int y = 0; y < grid.height(); ++y)
    for (int x = 0; x < grid.width(); ++x)
      cells[static_cast<std::size_t>(y) * grid.width() + x] = grid.at(y, grid.width() - 1 - x);
  return Grid<Tag>(grid.width(), grid.height(), std::move(cells));
}

template <typename T>
nn::Tensor<T> mask_tensor(const BinaryMask& mask) {
  nn::Tensor<T> t(nn::Shape{1, 1, mask.height(), mask.width()});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = mask.cells()[i] ? T(1) : T(0);
  return t;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& map) {
  write_pgm_bytes(path, map.width(), map.height(), map.cells());
}

void write_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.cells().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.cells()[i] ? 255 : 0;
  write_pgm_bytes(path, mask.width(), mask.height(), bytes);
}

LabelMap read_label_map_pgm(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_pgm_bytes(path, w, h);
  return LabelMap(w, h, std::move(bytes));
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_pgm_bytes(path, w, h);
  for (auto& b : bytes) {
    if (b != 0 && b != 255) throw ImageIoError("'" + path.string() + "' has mask values other than 0/255");
    b = b ? 1 : 0;
  }
  return BinaryMask(w, h, std::move(bytes));
}

template LabelMap resize_nearest(const LabelMap&, int, int);
template BinaryMask resize_nearest(const BinaryMask&, int, int);
template LabelMap crop_grid(const LabelMap&, const Box&);
template BinaryMask crop_grid(const BinaryMask&, const Box&);
template LabelMap flip_horizontal(const LabelMap&);
template BinaryMask flip_horizontal(const BinaryMask&);
template nn::Tensor<float> mask_tensor(const BinaryMask&);
template nn::Tensor<double> mask_tensor(const BinaryMask&);

}  // namespace mcnn::maskgen
