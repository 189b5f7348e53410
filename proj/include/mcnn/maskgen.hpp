#pragma once
// Part masks from keypoint annotations: head/torso point sets, convex hulls,
// rasterised three-class label maps, crops, boxes and nearest-neighbour mask
// resizing.
//
// Coordinates are continuous pixel units with the origin at the top-left
// corner of the image; pixel (row i, column j) has its centre at
// (j + 0.5, i + 0.5).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcnn/image.hpp"
#include "mcnn/nn/tensor.hpp"

namespace mcnn::maskgen {

enum class Part : int {
  Beak, Forehead, Crown, LeftEye, RightEye, Nape, Throat,
  Back, Breast, Belly, LeftLeg, RightLeg, LeftWing, RightWing, Tail,
};
inline constexpr int kNumParts = 15;

inline constexpr std::array<Part, 7> kHeadParts = {Part::Beak, Part::Forehead, Part::Crown, Part::LeftEye,
                                                   Part::RightEye, Part::Nape, Part::Throat};
inline constexpr std::array<Part, 10> kTorsoParts = {Part::Back,     Part::Breast,   Part::Belly, Part::LeftLeg,
                                                     Part::RightLeg, Part::LeftWing, Part::Nape,  Part::RightWing,
                                                     Part::Tail,     Part::Throat};

std::string_view part_name(Part part);
std::optional<Part> part_from_name(std::string_view name);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Keypoint {
  Point position;
  bool visible = false;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct KeypointSet {
  std::array<Keypoint, kNumParts> points{};

  Keypoint& operator[](Part p) { return points[static_cast<std::size_t>(p)]; }
  const Keypoint& operator[](Part p) const { return points[static_cast<std::size_t>(p)]; }
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

enum class Label : std::uint8_t { Background = 0, Head = 1, Torso = 2 };
inline constexpr int kNumLabels = 3;

struct LabelTag {};
struct MaskTag {};

/// Row-major 8-bit grid. LabelMap cells hold {0,1,2}; BinaryMask cells {0,1}.
template <typename Tag>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, std::uint8_t fill = 0);
  Grid(int width, int height, std::vector<std::uint8_t> cells);

  int width() const { return width_; }
  int height() const { return height_; }
  std::uint8_t at(int y, int x) const { return cells_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, std::uint8_t v);
  const std::vector<std::uint8_t>& cells() const { return cells_; }
  std::size_t count(std::uint8_t v) const;

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

using LabelMap = Grid<LabelTag>;
using BinaryMask = Grid<MaskTag>;

struct PartPoints {
  std::vector<Point> head;
  std::vector<Point> torso;
};

/// Visible points of the head and torso subsets (nape and throat in both).
PartPoints split_keypoints(const KeypointSet& keypoints);

inline constexpr double kDegenerateRadius = 2.0;

struct Polygon {
  std::vector<Point> vertices;  // counter-clockwise
  /// Fewer than three non-collinear points: a point or a segment, rasterised
  /// as a disk/stadium of kDegenerateRadius.
  bool degenerate = false;
};

/// Monotone-chain hull; collinear boundary points are dropped.
/// Throws std::invalid_argument on empty input.
Polygon convex_hull(std::span<const Point> points);

/// Pixels whose centre is inside or on the polygon (boundary inclusive).
BinaryMask rasterize_polygon(const Polygon& polygon, int width, int height);

/// Torso hull painted first, then the head hull over it.
LabelMap build_label_map(const KeypointSet& keypoints, int width, int height);

struct CropOffset {
  int dx = 0;  // added to source coordinates
  int dy = 0;
};

/// Offset of a centred crop; negative when cropping, positive when padding.
CropOffset center_crop_offset(int width, int height, int crop);

struct CroppedSample {
  Image image;
  KeypointSet keypoints;
  CropOffset offset;
};

/// Centred crop x crop window; smaller images are zero-padded symmetrically.
/// Keypoints are shifted, and those falling outside become invisible.
CroppedSample center_crop(const Image& image, const KeypointSet& keypoints, int crop);
LabelMap center_crop(const LabelMap& map, int crop);

/// Tight inclusive box around mask-1 cells; an empty mask yields the full
/// image box and a warning.
Box mask_to_bbox(const BinaryMask& mask);

BinaryMask union_masks(const BinaryMask& a, const BinaryMask& b);

/// Output (i, j) samples the source at (floor((i+0.5)H/out_h), floor((j+0.5)W/out_w)).
template <typename Tag>
Grid<Tag> resize_nearest(const Grid<Tag>& grid, int out_h, int out_w);

/// Inclusive box region of a grid.
template <typename Tag>
Grid<Tag> crop_grid(const Grid<Tag>& grid, const Box& box);

struct PartMasks {
  BinaryMask head;
  BinaryMask torso;
  BinaryMask object;
};

PartMasks labelmap_to_part_masks(const LabelMap& map);

KeypointSet flip_keypoints(const KeypointSet& keypoints, int width);
template <typename Tag>
Grid<Tag> flip_horizontal(const Grid<Tag>& grid);

/// (1, 1, h, w) tensor of 0/1 values.
template <typename T>
nn::Tensor<T> mask_tensor(const BinaryMask& mask);

/// PGM (P5). Label maps store raw class ids, binary masks store 0/255.
void write_pgm(const std::filesystem::path& path, const LabelMap& map);
void write_pgm(const std::filesystem::path& path, const BinaryMask& mask);
LabelMap read_label_map_pgm(const std::filesystem::path& path);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

}  // namespace mcnn::maskgen
