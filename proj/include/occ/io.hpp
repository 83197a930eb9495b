#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "occ/error.hpp"
#include "occ/geometry.hpp"
#include "occ/occupancy_head.hpp"
#include "occ/synthetic_scene.hpp"
#include "occ/tensor.hpp"

namespace occ {

using json = nlohmann::json;

// On-disk element types of raw tensors. Files are little-endian, row-major.
enum class Dtype { u8, u16, i32, f32, f64 };

std::string dtype_name(Dtype d);
Dtype parse_dtype(const std::string& name);
std::size_t dtype_size(Dtype d);

// Raw tensor = `path` (packed values) + `path.json` sidecar holding
// {"dtype", "shape", "order": "row-major", "endian": "little"} plus any
// caller metadata under "meta".
struct RawTensor {
  Dtype dtype = Dtype::f64;
  std::vector<std::size_t> shape;
  std::vector<double> values;  // every supported dtype is exact in double
  json meta = json::object();
};

void write_raw_tensor(const std::string& path, const RawTensor& t);
// Throws DataError on missing files, malformed sidecars, or a size mismatch.
RawTensor read_raw_tensor(const std::string& path);

template <typename T, std::size_t R>
void write_tensor(const std::string& path, const Tensor<T, R>& t, Dtype dtype,
                  json meta = json::object()) {
  RawTensor raw;
  raw.dtype = dtype;
  raw.shape.assign(t.shape().begin(), t.shape().end());
  raw.values.assign(t.values().begin(), t.values().end());
  raw.meta = std::move(meta);
  write_raw_tensor(path, raw);
}

template <typename T, std::size_t R>
Tensor<T, R> read_tensor(const std::string& path, json* meta = nullptr) {
  RawTensor raw = read_raw_tensor(path);
  if (raw.shape.size() != R) {
    throw DataError(path + ": expected rank " + std::to_string(R) + ", got " +
                    std::to_string(raw.shape.size()));
  }
  typename Tensor<T, R>::Shape shape{};
  for (std::size_t i = 0; i < R; ++i) shape[i] = raw.shape[i];
  std::vector<T> values(raw.values.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(raw.values[i]);
  if (meta) *meta = raw.meta;
  return Tensor<T, R>(shape, std::move(values));
}

void write_occupancy(const std::string& path, const OccupancyGrid& grid);
OccupancyGrid read_occupancy(const std::string& path);

// Point clouds: 8-byte magic "OCCPTS01", u64 record count, then count
// records of four little-endian f32 (x, y, z, class_id).
inline constexpr std::array<char, 8> kPointCloudMagic{'O', 'C', 'C', 'P', 'T', 'S', '0', '1'};

void write_point_cloud(const std::string& path, std::span<const LabeledPoint> points);
std::vector<LabeledPoint> read_point_cloud(const std::string& path);
// CSV with columns x,y,z,class_id. Blank lines, '#' comments and a
// non-numeric header line are skipped.
std::vector<LabeledPoint> read_point_cloud_csv(const std::string& path);
// Binary when the file starts with the magic, CSV otherwise.
std::vector<LabeledPoint> load_point_cloud(const std::string& path);

void to_json(json& j, const CameraIntrinsics& k);
void from_json(const json& j, CameraIntrinsics& k);
void to_json(json& j, const Extrinsics& e);
void from_json(const json& j, Extrinsics& e);
void to_json(json& j, const CameraModel& m);
void from_json(const json& j, CameraModel& m);
void to_json(json& j, const Point3& p);
void from_json(const json& j, Point3& p);
void to_json(json& j, const Box& b);
void from_json(const json& j, Box& b);
void to_json(json& j, const SceneSpec& s);
void from_json(const json& j, SceneSpec& s);
void to_json(json& j, const BevGridSpec& g);
void from_json(const json& j, BevGridSpec& g);
void to_json(json& j, const VoxelGridSpec& g);
void from_json(const json& j, VoxelGridSpec& g);

json read_json(const std::string& path);
void write_json(const std::string& path, const json& j);
void write_text(const std::string& path, const std::string& text);

// Binary 8-bit PGM. Real-valued maps are scaled so the maximum maps to 255.
void write_pgm(const std::string& path, const Grid2D<std::uint8_t>& img);
void write_pgm(const std::string& path, const Grid2D<double>& img);

}  // namespace occ
