#include "occ/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace occ {

static_assert(std::endian::native == std::endian::little,
              "raw tensor I/O assumes a little-endian host");

std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::u8: return "u8";
    case Dtype::u16: return "u16";
    case Dtype::i32: return "i32";
    case Dtype::f32: return "f32";
    case Dtype::f64: return "f64";
  }
  return "?";
}

Dtype parse_dtype(const std::string& name) {
  if (name == "u8") return Dtype::u8;
  if (name == "u16") return Dtype::u16;
  if (name == "i32") return Dtype::i32;
  if (name == "f32") return Dtype::f32;
  if (name == "f64") return Dtype::f64;
  throw DataError("unknown dtype '" + name + "'");
}

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::u8: return 1;
    case Dtype::u16: return 2;
    case Dtype::i32: return 4;
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
  }
  return 0;
}

namespace {

template <typename T>
void append(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename I>
I checked_int(double v, const std::string& path) {
  if (!(v >= static_cast<double>(std::numeric_limits<I>::min()) &&
        v <= static_cast<double>(std::numeric_limits<I>::max())) ||
      v != std::floor(v)) {
    throw DataError(path + ": value not representable in integer dtype");
  }
  return static_cast<I>(v);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

}  // namespace

void write_raw_tensor(const std::string& path, const RawTensor& t) {
  std::size_t expected = 1;
  for (auto d : t.shape) expected *= d;
  if (expected != t.values.size()) {
    throw std::invalid_argument("write_raw_tensor: shape does not match value count");
  }
  std::string buf;
  buf.reserve(t.values.size() * dtype_size(t.dtype));
  for (double v : t.values) {
    switch (t.dtype) {
      case Dtype::u8: append(buf, checked_int<std::uint8_t>(v, path)); break;
      case Dtype::u16: append(buf, checked_int<std::uint16_t>(v, path)); break;
      case Dtype::i32: append(buf, checked_int<std::int32_t>(v, path)); break;
      case Dtype::f32: append(buf, static_cast<float>(v)); break;
      case Dtype::f64: append(buf, v); break;
    }
  }
  write_file(path, buf);
  json side = {{"dtype", dtype_name(t.dtype)},
               {"shape", t.shape},
               {"order", "row-major"},
               {"endian", "little"}};
  if (!t.meta.empty()) side["meta"] = t.meta;
  write_file(path + ".json", side.dump(2) + "\n");
}

RawTensor read_raw_tensor(const std::string& path) {
  RawTensor t;
  json side;
  try {
    side = json::parse(read_file(path + ".json"));
    t.dtype = parse_dtype(side.at("dtype").get<std::string>());
    t.shape = side.at("shape").get<std::vector<std::size_t>>();
    if (side.contains("order") && side["order"] != "row-major") {
      throw DataError(path + ": only row-major tensors are supported");
    }
    if (side.contains("endian") && side["endian"] != "little") {
      throw DataError(path + ": only little-endian tensors are supported");
    }
    if (side.contains("meta")) t.meta = side["meta"];
  } catch (const json::exception& e) {
    throw DataError(path + ".json: " + e.what());
  }
  std::size_t count = 1;
  for (auto d : t.shape) count *= d;
  const std::string bytes = read_file(path);
  const std::size_t width = dtype_size(t.dtype);
  if (bytes.size() != count * width) {
    throw DataError(path + ": byte size does not match sidecar shape");
  }
  t.values.resize(count);
  const char* p = bytes.data();
  for (std::size_t i = 0; i < count; ++i, p += width) {
    switch (t.dtype) {
      case Dtype::u8: t.values[i] = take<std::uint8_t>(p); break;
      case Dtype::u16: t.values[i] = take<std::uint16_t>(p); break;
      case Dtype::i32: t.values[i] = take<std::int32_t>(p); break;
      case Dtype::f32: t.values[i] = take<float>(p); break;
      case Dtype::f64: t.values[i] = take<double>(p); break;
    }
  }
  return t;
}

void write_occupancy(const std::string& path, const OccupancyGrid& grid) {
  write_tensor(path, grid.labels, Dtype::u8,
               json{{"class_count", grid.class_count},
                    {"layout", "rows(y) x cols(x) x height(z)"}});
}

OccupancyGrid read_occupancy(const std::string& path) {
  json meta;
  OccupancyGrid g;
  g.labels = read_tensor<std::uint8_t, 3>(path, &meta);
  if (!meta.contains("class_count")) {
    throw DataError(path + ": occupancy sidecar lacks meta.class_count");
  }
  g.class_count = meta["class_count"].get<std::size_t>();
  for (auto v : g.labels.values()) {
    if (v >= g.class_count) throw DataError(path + ": label outside class range");
  }
  return g;
}

void write_point_cloud(const std::string& path, std::span<const LabeledPoint> points) {
  std::string buf(kPointCloudMagic.begin(), kPointCloudMagic.end());
  append(buf, static_cast<std::uint64_t>(points.size()));
  for (const auto& p : points) {
    append(buf, static_cast<float>(p.position.x));
    append(buf, static_cast<float>(p.position.y));
    append(buf, static_cast<float>(p.position.z));
    append(buf, static_cast<float>(p.class_id));
  }
  write_file(path, buf);
}

std::vector<LabeledPoint> read_point_cloud(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 ||
      !std::equal(kPointCloudMagic.begin(), kPointCloudMagic.end(), bytes.begin())) {
    throw DataError(path + ": not an OCCPTS01 point cloud");
  }
  const auto count = take<std::uint64_t>(bytes.data() + 8);
  if (bytes.size() != 16 + count * 16) {
    throw DataError(path + ": record count does not match file size");
  }
  std::vector<LabeledPoint> pts(count);
  const char* p = bytes.data() + 16;
  for (auto& pt : pts) {
    pt.position = {take<float>(p), take<float>(p + 4), take<float>(p + 8)};
    const float cls = take<float>(p + 12);
    if (!(cls >= 0.0f && cls <= 65535.0f) || cls != std::floor(cls)) {
      throw DataError(path + ": invalid class id");
    }
    pt.class_id = static_cast<std::uint16_t>(cls);
    p += 16;
  }
  return pts;
}

std::vector<LabeledPoint> read_point_cloud_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<LabeledPoint> pts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    double x, y, z, cls;
    if (!(fields >> x >> y >> z >> cls)) {
      if (pts.empty() && line_no == 1) continue;  // header
      throw DataError(path + ":" + std::to_string(line_no) + ": expected x,y,z,class_id");
    }
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || cls < 0 ||
        cls > 65535 || cls != std::floor(cls)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": invalid record");
    }
    pts.push_back({{x, y, z}, static_cast<std::uint16_t>(cls)});
  }
  return pts;
}

std::vector<LabeledPoint> load_point_cloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  if (in.gcount() == 8 && head == kPointCloudMagic) return read_point_cloud(path);
  return read_point_cloud_csv(path);
}

void to_json(json& j, const CameraIntrinsics& k) {
  j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
       {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

void from_json(const json& j, CameraIntrinsics& k) {
  j.at("fx").get_to(k.fx);
  j.at("fy").get_to(k.fy);
  j.at("cx").get_to(k.cx);
  j.at("cy").get_to(k.cy);
  j.at("width").get_to(k.width);
  j.at("height").get_to(k.height);
}

void to_json(json& j, const Extrinsics& e) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({e.rotation(r, 0), e.rotation(r, 1), e.rotation(r, 2)});
  j = {{"rotation", rot},
       {"translation", {e.translation.x(), e.translation.y(), e.translation.z()}}};
}

void from_json(const json& j, Extrinsics& e) {
  const auto rot = j.at("rotation").get<std::vector<std::vector<double>>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (rot.size() != 3 || t.size() != 3) throw DataError("extrinsics: expected 3x3 rotation and 3-vector");
  for (int r = 0; r < 3; ++r) {
    if (rot[r].size() != 3) throw DataError("extrinsics: expected 3x3 rotation");
    for (int c = 0; c < 3; ++c) e.rotation(r, c) = rot[r][c];
    e.translation[r] = t[r];
  }
}

void to_json(json& j, const CameraModel& m) {
  j = {{"intrinsics", m.intrinsics}, {"extrinsics", m.extrinsics}};
}

void from_json(const json& j, CameraModel& m) {
  j.at("intrinsics").get_to(m.intrinsics);
  j.at("extrinsics").get_to(m.extrinsics);
}

void to_json(json& j, const Point3& p) { j = {p.x, p.y, p.z}; }

void from_json(const json& j, Point3& p) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw DataError("expected a 3-vector");
  p = {v[0], v[1], v[2]};
}

void to_json(json& j, const Box& b) {
  j = {{"center", b.center}, {"size", b.size}, {"class_id", b.class_id}};
}

void from_json(const json& j, Box& b) {
  j.at("center").get_to(b.center);
  j.at("size").get_to(b.size);
  j.at("class_id").get_to(b.class_id);
}

void to_json(json& j, const SceneSpec& s) {
  j = {{"seed", s.seed},
       {"extent", {{"x_min", s.x_min}, {"x_max", s.x_max}, {"y_min", s.y_min}, {"y_max", s.y_max}}},
       {"num_classes", s.num_classes},
       {"ground",
        {{"enabled", s.ground.enabled},
         {"z_top", s.ground.z_top},
         {"thickness", s.ground.thickness},
         {"class_id", s.ground.class_id}}},
       {"boxes", s.boxes},
       {"cameras", s.cameras},
       {"lidar",
        {{"origin", s.lidar.origin},
         {"rings", s.lidar.rings},
         {"elevation_min_deg", s.lidar.elevation_min_deg},
         {"elevation_max_deg", s.lidar.elevation_max_deg},
         {"azimuth_step_deg", s.lidar.azimuth_step_deg},
         {"max_range", s.lidar.max_range},
         {"range_noise_sigma", s.lidar.range_noise_sigma}}}};
}

void from_json(const json& j, SceneSpec& s) {
  s = SceneSpec{};
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("extent")) {
    const auto& e = j["extent"];
    e.at("x_min").get_to(s.x_min);
    e.at("x_max").get_to(s.x_max);
    e.at("y_min").get_to(s.y_min);
    e.at("y_max").get_to(s.y_max);
  }
  s.num_classes = j.value("num_classes", s.num_classes);
  if (j.contains("ground")) {
    const auto& g = j["ground"];
    s.ground.enabled = g.value("enabled", true);
    s.ground.z_top = g.value("z_top", s.ground.z_top);
    s.ground.thickness = g.value("thickness", s.ground.thickness);
    s.ground.class_id = g.value("class_id", s.ground.class_id);
  }
  if (j.contains("boxes")) j["boxes"].get_to(s.boxes);
  if (j.contains("cameras")) j["cameras"].get_to(s.cameras);
  if (j.contains("lidar")) {
    const auto& l = j["lidar"];
    if (l.contains("origin")) l["origin"].get_to(s.lidar.origin);
    s.lidar.rings = l.value("rings", s.lidar.rings);
    s.lidar.elevation_min_deg = l.value("elevation_min_deg", s.lidar.elevation_min_deg);
    s.lidar.elevation_max_deg = l.value("elevation_max_deg", s.lidar.elevation_max_deg);
    s.lidar.azimuth_step_deg = l.value("azimuth_step_deg", s.lidar.azimuth_step_deg);
    s.lidar.max_range = l.value("max_range", s.lidar.max_range);
    s.lidar.range_noise_sigma = l.value("range_noise_sigma", s.lidar.range_noise_sigma);
  }
}

void to_json(json& j, const BevGridSpec& g) {
  j = {{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min},
       {"y_max", g.y_max}, {"cell", g.cell},   {"channels", g.channels}};
}

void from_json(const json& j, BevGridSpec& g) {
  g.x_min = j.value("x_min", g.x_min);
  g.x_max = j.value("x_max", g.x_max);
  g.y_min = j.value("y_min", g.y_min);
  g.y_max = j.value("y_max", g.y_max);
  g.cell = j.value("cell", g.cell);
  g.channels = j.value("channels", g.channels);
}

void to_json(json& j, const VoxelGridSpec& g) {
  j = g.bev;
  j["z_min"] = g.z_min;
  j["z_max"] = g.z_max;
}

void from_json(const json& j, VoxelGridSpec& g) {
  from_json(j, g.bev);
  g.z_min = j.value("z_min", g.z_min);
  g.z_max = j.value("z_max", g.z_max);
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, text);
}

void write_pgm(const std::string& path, const Grid2D<std::uint8_t>& img) {
  std::string buf = "P5\n" + std::to_string(img.dim(1)) + " " +
                    std::to_string(img.dim(0)) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(img.values().data()), img.size());
  write_file(path, buf);
}

void write_pgm(const std::string& path, const Grid2D<double>& img) {
  double peak = 0.0;
  for (double v : img.values()) {
    if (std::isfinite(v)) peak = std::max(peak, v);
  }
  Grid2D<std::uint8_t> bytes(img.shape(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = img.values()[i];
    if (peak > 0.0 && std::isfinite(v) && v > 0.0) {
      bytes.values()[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::min(v, peak) / peak));
    }
  }
  write_pgm(path, bytes);
}

}  // namespace occ
