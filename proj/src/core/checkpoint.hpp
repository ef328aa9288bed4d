#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/env.hpp"
#include "core/policy.hpp"
#include "core/tensor.hpp"

namespace dpa {

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed = 0);

// Named-tensor container: magic "DPAB1", version u32, directory of
// (name, dtype, shape, offset, count), little-endian payload, trailing CRC32.
class Container {
 public:
  enum class Dtype : uint8_t { F32 = 0, U8 = 1 };

  struct Entry {
    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<int> shape;
    std::vector<float> f32;
    std::vector<uint8_t> u8;
  };

  // Values are narrowed to f32; names must be unique.
  void add_tensor(const std::string& name, const Tensor& t);
  void add_f32(const std::string& name, std::vector<int> shape,
               std::vector<float> data);
  void add_u8(const std::string& name, std::vector<int> shape,
              std::vector<uint8_t> data);

  bool has(const std::string& name) const;
  const Entry& entry(const std::string& name) const;  // throws IoError
  Tensor tensor(const std::string& name) const;       // f32 entries only
  const std::vector<Entry>& entries() const { return entries_; }

  void save(const std::string& path) const;
  static Container load(const std::string& path);  // throws IoError

 private:
  std::vector<Entry> entries_;
};

// Policy weights + normalizer; optional optimizer state for exact resume.
void save_policy(const DiffusionPolicy& policy, const std::string& path,
                 const Adam* opt = nullptr, int epochs_done = 0);
struct LoadedPolicy {
  DiffusionPolicy policy;
  Adam opt;
  int epochs_done = 0;
  bool has_opt = false;
};
LoadedPolicy load_policy(const std::string& path);

void save_dataset(const DemoDataset& ds, const std::string& path);
DemoDataset load_dataset(const std::string& path);

// Binary PPM (P6, 8-bit). image: [3, h, w] in [0, 1].
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

}  // namespace dpa
