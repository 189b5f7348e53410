#include "mcnn/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace mcnn::dataio {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename N>
bool parse_number(std::string_view s, N& out) {
  if (s.empty()) return false;
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& b, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
  return v;
}

}  // namespace

ManifestError::ManifestError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

std::string_view split_name(Split split) { return split == Split::Train ? "train" : "test"; }

bool Record::degenerate() const {
  const auto parts = maskgen::split_keypoints(keypoints);
  return parts.head.empty() || parts.torso.empty();
}

std::filesystem::path DatasetManifest::image_path(const Record& record) const {
  const std::filesystem::path p(record.image);
  return p.is_absolute() ? p : root / p;
}

std::vector<const Record*> DatasetManifest::select(Split split) const {
  std::vector<const Record*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const Record& r) { return r.split == split; }));
}

void DatasetManifest::validate() const {
  if (classes.empty()) throw std::invalid_argument("manifest has no classes");
  for (const auto& r : records)
    if (r.label < 0 || r.label >= static_cast<int>(classes.size())) {
      throw std::invalid_argument("record '" + r.image + "' has label " + std::to_string(r.label) + " outside [0, " +
                                  std::to_string(classes.size()) + ")");
    }
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out = "classes=";
  for (std::size_t i = 0; i < m.classes.size(); ++i) out += (i ? "," : "") + m.classes[i];
  out += "\nimage_size=" + std::to_string(m.image_size) + "\n";
  for (const auto& r : m.records) {
    out += "image=" + r.image + " label=" + std::to_string(r.label) + " split=" + std::string(split_name(r.split));
    for (int p = 0; p < maskgen::kNumParts; ++p) {
      const auto& kp = r.keypoints.points[p];
      out += " kp." + std::string(maskgen::part_name(maskgen::Part(p))) + "=" + fmt(kp.position.x) + "," +
             fmt(kp.position.y) + "," + (kp.visible ? "1" : "0");
    }
    out += "\n";
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root, const std::string& source) {
  DatasetManifest m;
  m.root = root;
  bool have_classes = false;
  int line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto toks = tokens(std::string_view(line).substr(0, hash));
    if (toks.empty()) continue;
    auto fail = [&](const std::string& msg) { throw ManifestError(source, line_no, msg); };

    if (toks[0].starts_with("classes=")) {
      if (toks.size() != 1) fail("class names may not contain spaces");
      for (auto name : split(toks[0].substr(8), ',')) {
        if (name.empty()) fail("empty class name");
        m.classes.emplace_back(name);
      }
      have_classes = true;
      continue;
    }
    if (toks[0].starts_with("image_size=")) {
      if (toks.size() != 1 || !parse_number(toks[0].substr(11), m.image_size) || m.image_size < 0) fail("bad image_size");
      continue;
    }

    Record r;
    bool seen_image = false, seen_label = false, seen_split = false;
    std::array<bool, maskgen::kNumParts> seen_kp{};
    for (auto tok : toks) {
      const auto eq = tok.find('=');
      if (eq == std::string_view::npos) fail("expected key=value, got '" + std::string(tok) + "'");
      const auto key = tok.substr(0, eq);
      const auto value = tok.substr(eq + 1);
      if (key == "image") {
        if (value.empty()) fail("empty image path");
        r.image = std::string(value);
        seen_image = true;
      } else if (key == "label") {
        if (!parse_number(value, r.label)) fail("bad label '" + std::string(value) + "'");
        seen_label = true;
      } else if (key == "split") {
        if (value == "train") r.split = Split::Train;
        else if (value == "test") r.split = Split::Test;
        else fail("split must be train or test, got '" + std::string(value) + "'");
        seen_split = true;
      } else if (key.starts_with("kp.")) {
        const auto part = maskgen::part_from_name(key.substr(3));
        if (!part) fail("unknown keypoint name '" + std::string(key.substr(3)) + "'");
        const auto idx = static_cast<std::size_t>(*part);
        if (seen_kp[idx]) fail("duplicate keypoint '" + std::string(key.substr(3)) + "'");
        const auto f = split(value, ',');
        int vis = 0;
        auto& kp = r.keypoints.points[idx];
        if (f.size() != 3 || !parse_number(f[0], kp.position.x) || !parse_number(f[1], kp.position.y) ||
            !parse_number(f[2], vis) || (vis != 0 && vis != 1)) {
          fail("keypoint '" + std::string(key.substr(3)) + "' must be x,y,0|1");
        }
        kp.visible = vis == 1;
        if (kp.visible && (kp.position.x < 0 || kp.position.y < 0 ||
                           (m.image_size > 0 && (kp.position.x >= m.image_size || kp.position.y >= m.image_size)))) {
          fail("visible keypoint '" + std::string(key.substr(3)) + "' lies outside the image");
        }
        seen_kp[idx] = true;
      } else {
        fail("unknown field '" + std::string(key) + "'");
      }
    }
    if (!seen_image) fail("missing image=");
    if (!seen_label) fail("missing label=");
    if (!seen_split) fail("missing split=");
    for (int p = 0; p < maskgen::kNumParts; ++p)
      if (!seen_kp[p]) fail("missing keypoint '" + std::string(maskgen::part_name(maskgen::Part(p))) + "'");
    if (!have_classes) fail("record before the classes= header");
    if (r.label < 0 || r.label >= static_cast<int>(m.classes.size())) {
      fail("label " + std::to_string(r.label) + " out of range for " + std::to_string(m.classes.size()) + " classes");
    }
    m.records.push_back(std::move(r));
  }
  if (!have_classes) throw ManifestError(source, line_no, "missing classes= header");
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path(), path.string());
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << format_manifest(manifest);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

DatasetManifest ingest_cub(const std::filesystem::path& root, const std::string& replace_extension) {
  auto table = [&](const std::string& rel, std::size_t min_fields) {
    const auto path = root / rel;
    const std::string text = read_file(path);
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto toks = tokens(line);
      if (toks.empty()) continue;
      if (toks.size() < min_fields) throw ManifestError(path.string(), line_no, "expected " + std::to_string(min_fields) + " fields");
      rows.emplace_back(toks.begin(), toks.end());
      rows.back().push_back(std::to_string(line_no));
    }
    return std::pair{path.string(), rows};
  };
  auto as_int = [](const std::string& src, const std::vector<std::string>& row, std::size_t i) {
    int v = 0;
    if (!parse_number(std::string_view(row[i]), v)) throw ManifestError(src, std::stoi(row.back()), "bad integer '" + row[i] + "'");
    return v;
  };

  DatasetManifest m;
  m.root = root;

  const auto [classes_src, class_rows] = table("classes.txt", 2);
  for (const auto& row : class_rows) {
    if (as_int(classes_src, row, 0) != static_cast<int>(m.classes.size()) + 1) {
      throw ManifestError(classes_src, std::stoi(row.back()), "class ids must be consecutive from 1");
    }
    m.classes.push_back(row[1]);
  }

  // Part ids are mapped through their names, e.g. "left eye" -> left_eye.
  const auto [parts_src, part_rows] = table("parts/parts.txt", 2);
  std::map<int, maskgen::Part> part_of_id;
  for (const auto& row : part_rows) {
    std::string name;
    for (std::size_t i = 1; i + 1 < row.size(); ++i) name += (i > 1 ? "_" : "") + row[i];
    const auto part = maskgen::part_from_name(name);
    if (!part) throw ManifestError(parts_src, std::stoi(row.back()), "unknown part name '" + name + "'");
    part_of_id[as_int(parts_src, row, 0)] = *part;
  }
  if (part_of_id.size() != maskgen::kNumParts) throw ManifestError(parts_src, 0, "expected 15 parts");

  const auto [images_src, image_rows] = table("images.txt", 2);
  const auto [labels_src, label_rows] = table("image_class_labels.txt", 2);
  const auto [split_src, split_rows] = table("train_test_split.txt", 2);
  const auto [locs_src, loc_rows] = table("parts/part_locs.txt", 5);

  std::map<int, std::size_t> index;
  for (const auto& row : image_rows) {
    Record r;
    r.image = "images/" + row[1];
    if (!replace_extension.empty()) r.image = std::filesystem::path(r.image).replace_extension(replace_extension).string();
    index[as_int(images_src, row, 0)] = m.records.size();
    m.records.push_back(std::move(r));
  }
  auto record_for = [&](const std::string& src, const std::vector<std::string>& row) -> Record& {
    const auto it = index.find(as_int(src, row, 0));
    if (it == index.end()) throw ManifestError(src, std::stoi(row.back()), "unknown image id " + row[0]);
    return m.records[it->second];
  };
  for (const auto& row : label_rows) {
    const int label = as_int(labels_src, row, 1) - 1;
    if (label < 0 || label >= static_cast<int>(m.classes.size())) {
      throw ManifestError(labels_src, std::stoi(row.back()), "class id out of range");
    }
    record_for(labels_src, row).label = label;
  }
  for (const auto& row : split_rows) record_for(split_src, row).split = as_int(split_src, row, 1) == 1 ? Split::Train : Split::Test;
  for (const auto& row : loc_rows) {
    Record& r = record_for(locs_src, row);
    const auto it = part_of_id.find(as_int(locs_src, row, 1));
    if (it == part_of_id.end()) throw ManifestError(locs_src, std::stoi(row.back()), "unknown part id " + row[1]);
    auto& kp = r.keypoints[it->second];
    if (!parse_number(std::string_view(row[2]), kp.position.x) || !parse_number(std::string_view(row[3]), kp.position.y)) {
      throw ManifestError(locs_src, std::stoi(row.back()), "bad coordinates");
    }
    kp.visible = as_int(locs_src, row, 4) == 1;
  }
  return m;
}

void FeatureSet::append(const std::vector<float>& feature, int label) {
  if (dim == 0 && labels.empty()) dim = static_cast<int>(feature.size());
  if (static_cast<int>(feature.size()) != dim) throw std::invalid_argument("feature dimension mismatch");
  values.insert(values.end(), feature.begin(), feature.end());
  labels.push_back(label);
}

void write_features(const std::filesystem::path& path, const FeatureSet& f) {
  if (f.values.size() != f.count() * static_cast<std::size_t>(f.dim)) throw FeatureFileError("feature set size mismatch");
  std::string out = "MCFT";
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(f.count()));
  put_u32(out, static_cast<std::uint32_t>(f.dim));
  out.reserve(out.size() + 4 * (f.values.size() + f.labels.size()));
  for (float v : f.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  for (int l : f.labels) put_u32(out, static_cast<std::uint32_t>(l));
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FeatureFileError("cannot write '" + path.string() + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw FeatureFileError("failed writing '" + path.string() + "'");
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::string b;
  try {
    b = read_file(path);
  } catch (const std::runtime_error& e) {
    throw FeatureFileError(e.what());
  }
  const std::string where = "'" + path.string() + "': ";
  if (b.size() < 16 || b.compare(0, 4, "MCFT") != 0) throw FeatureFileError(where + "not a feature file");
  if (get_u32(b, 4) != kFeatureFileVersion) throw FeatureFileError(where + "unsupported version " + std::to_string(get_u32(b, 4)));
  const std::size_t count = get_u32(b, 8), dim = get_u32(b, 12);
  if (b.size() != 16 + 4 * (count * dim + count)) throw FeatureFileError(where + "size does not match header");
  FeatureSet f;
  f.dim = static_cast<int>(dim);
  f.values.resize(count * dim);
  f.labels.resize(count);
  std::size_t pos = 16;
  for (auto& v : f.values) v = std::bit_cast<float>(get_u32(b, pos)), pos += 4;
  for (auto& l : f.labels) l = static_cast<int>(get_u32(b, pos)), pos += 4;
  return f;
}

}  // namespace mcnn::dataio
