#include "core/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>

namespace dpa {

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int j = 0; j < 8; ++j)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace {

constexpr char kMagic[5] = {'D', 'P', 'A', 'B', '1'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename T>
void put_le(std::vector<uint8_t>& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<uint8_t>((static_cast<uint64_t>(v) >> (8 * i)) &
                                       0xFF));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le(out, bits);
}

class Reader {
 public:
  Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  size_t pos() const { return pos_; }

  template <typename T>
  T le() {
    need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float f32() {
    uint32_t bits = le<uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  const uint8_t* raw(size_t n) {
    need(n);
    const uint8_t* r = p_ + pos_;
    pos_ += n;
    return r;
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > n_) throw IoError("container: truncated file");
  }
  const uint8_t* p_;
  size_t n_, pos_ = 0;
};

size_t elem_count(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw IoError("container: non-positive dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

void Container::add_f32(const std::string& name, std::vector<int> shape,
                        std::vector<float> data) {
  if (has(name)) throw UsageError("container: duplicate name " + name);
  if (elem_count(shape) != data.size())
    throw UsageError("container: shape/data mismatch for " + name);
  Entry e;
  e.name = name;
  e.dtype = Dtype::F32;
  e.shape = std::move(shape);
  e.f32 = std::move(data);
  entries_.push_back(std::move(e));
}

void Container::add_u8(const std::string& name, std::vector<int> shape,
                       std::vector<uint8_t> data) {
  if (has(name)) throw UsageError("container: duplicate name " + name);
  if (elem_count(shape) != data.size())
    throw UsageError("container: shape/data mismatch for " + name);
  Entry e;
  e.name = name;
  e.dtype = Dtype::U8;
  e.shape = std::move(shape);
  e.u8 = std::move(data);
  entries_.push_back(std::move(e));
}

void Container::add_tensor(const std::string& name, const Tensor& t) {
  std::vector<float> data(t.vec().begin(), t.vec().end());
  add_f32(name, t.shape(), std::move(data));
}

bool Container::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Container::Entry& Container::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw IoError("container: missing entry " + name);
}

Tensor Container::tensor(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != Dtype::F32)
    throw IoError("container: entry " + name + " is not f32");
  std::vector<double> data(e.f32.begin(), e.f32.end());
  return Tensor::from(e.shape, std::move(data));
}

void Container::save(const std::string& path) const {
  std::vector<uint8_t> payload;
  struct DirEntry {
    uint64_t offset, count;
  };
  std::vector<DirEntry> dir;
  for (const auto& e : entries_) {
    DirEntry d{payload.size(), 0};
    if (e.dtype == Dtype::F32) {
      d.count = e.f32.size();
      for (float v : e.f32) put_f32(payload, v);
    } else {
      d.count = e.u8.size();
      put_bytes(payload, e.u8.data(), e.u8.size());
    }
    dir.push_back(d);
  }

  std::vector<uint8_t> out;
  put_bytes(out, kMagic, 5);
  put_le(out, kVersion);
  put_le(out, static_cast<uint32_t>(entries_.size()));
  for (size_t i = 0; i < entries_.size(); ++i) {
    const Entry& e = entries_[i];
    put_le(out, static_cast<uint16_t>(e.name.size()));
    put_bytes(out, e.name.data(), e.name.size());
    put_le(out, static_cast<uint8_t>(e.dtype));
    put_le(out, static_cast<uint8_t>(e.shape.size()));
    for (int d : e.shape) put_le(out, static_cast<uint32_t>(d));
    put_le(out, dir[i].offset);
    put_le(out, dir[i].count);
  }
  put_le(out, static_cast<uint64_t>(payload.size()));
  put_bytes(out, payload.data(), payload.size());
  put_le(out, crc32(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("container: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("container: write failed for " + path);
}

Container Container::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("container: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 5 + 4 + 4 + 8 + 4) throw IoError("container: file too small");

  const uint32_t stored =
      static_cast<uint32_t>(buf[buf.size() - 4]) |
      static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
      static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
      static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
  if (crc32(buf.data(), buf.size() - 4) != stored)
    throw IoError("container: CRC mismatch in " + path);

  Reader r(buf.data(), buf.size() - 4);
  if (r.str(5) != std::string(kMagic, 5))
    throw IoError("container: bad magic in " + path);
  if (r.le<uint32_t>() != kVersion)
    throw IoError("container: unsupported version in " + path);

  const uint32_t n = r.le<uint32_t>();
  struct Pending {
    Entry e;
    uint64_t offset, count;
  };
  std::vector<Pending> pending;
  for (uint32_t i = 0; i < n; ++i) {
    Pending p;
    const uint16_t name_len = r.le<uint16_t>();
    p.e.name = r.str(name_len);
    const uint8_t dtype = r.le<uint8_t>();
    if (dtype > 1) throw IoError("container: unknown dtype");
    p.e.dtype = static_cast<Dtype>(dtype);
    const uint8_t ndim = r.le<uint8_t>();
    for (uint8_t d = 0; d < ndim; ++d)
      p.e.shape.push_back(static_cast<int>(r.le<uint32_t>()));
    p.offset = r.le<uint64_t>();
    p.count = r.le<uint64_t>();
    if (p.count != elem_count(p.e.shape))
      throw IoError("container: shape/count mismatch for " + p.e.name);
    pending.push_back(std::move(p));
  }

  const uint64_t payload_size = r.le<uint64_t>();
  const uint8_t* payload = r.raw(payload_size);
  if (r.pos() != buf.size() - 4)
    throw IoError("container: trailing bytes in " + path);

  Container c;
  for (auto& p : pending) {
    const size_t width = p.e.dtype == Dtype::F32 ? 4 : 1;
    if (p.offset + p.count * width > payload_size)
      throw IoError("container: payload offset out of bounds for " + p.e.name);
    if (p.e.dtype == Dtype::F32) {
      p.e.f32.resize(p.count);
      for (uint64_t i = 0; i < p.count; ++i) {
        uint32_t bits = 0;
        std::memcpy(&bits, payload + p.offset + 4 * i, 4);
        float v;
        std::memcpy(&v, &bits, 4);
        p.e.f32[i] = v;
      }
    } else {
      p.e.u8.assign(payload + p.offset, payload + p.offset + p.count);
    }
    if (c.has(p.e.name))
      throw IoError("container: duplicate name " + p.e.name);
    c.entries_.push_back(std::move(p.e));
  }
  return c;
}

void save_policy(const DiffusionPolicy& policy, const std::string& path,
                 const Adam* opt, int epochs_done) {
  Container c;
  for (const auto& [name, t] : policy.named_params()) c.add_tensor(name, t);
  c.add_f32("normalizer.lo", {DiffusionPolicy::kActionDim},
            {static_cast<float>(policy.normalizer.lo[0]),
             static_cast<float>(policy.normalizer.lo[1])});
  c.add_f32("normalizer.hi", {DiffusionPolicy::kActionDim},
            {static_cast<float>(policy.normalizer.hi[0]),
             static_cast<float>(policy.normalizer.hi[1])});
  c.add_f32("train.epochs_done", {1}, {static_cast<float>(epochs_done)});
  if (opt && !opt->m.empty()) {
    c.add_f32("opt.t", {1}, {static_cast<float>(opt->t)});
    for (size_t i = 0; i < opt->m.size(); ++i) {
      c.add_f32("opt.m." + std::to_string(i),
                {static_cast<int>(opt->m[i].size())},
                std::vector<float>(opt->m[i].begin(), opt->m[i].end()));
      c.add_f32("opt.v." + std::to_string(i),
                {static_cast<int>(opt->v[i].size())},
                std::vector<float>(opt->v[i].begin(), opt->v[i].end()));
    }
  }
  c.save(path);
}

LoadedPolicy load_policy(const std::string& path) {
  Container c = Container::load(path);
  LoadedPolicy out;
  out.policy.init(0);
  for (auto& [name, t] : out.policy.named_params()) {
    Tensor stored = c.tensor(name);
    if (stored.shape() != t.shape())
      throw IoError("policy checkpoint: shape mismatch for " + name);
    t.vec() = stored.vec();
  }
  Tensor lo = c.tensor("normalizer.lo"), hi = c.tensor("normalizer.hi");
  out.policy.normalizer.lo.assign(lo.vec().begin(), lo.vec().end());
  out.policy.normalizer.hi.assign(hi.vec().begin(), hi.vec().end());
  out.epochs_done =
      static_cast<int>(c.tensor("train.epochs_done").item());

  if (c.has("opt.t")) {
    out.has_opt = true;
    out.opt.t = static_cast<long>(c.tensor("opt.t").item());
    const size_t n_params = out.policy.params().size();
    out.opt.m.resize(n_params);
    out.opt.v.resize(n_params);
    for (size_t i = 0; i < n_params; ++i) {
      Tensor m = c.tensor("opt.m." + std::to_string(i));
      Tensor v = c.tensor("opt.v." + std::to_string(i));
      out.opt.m[i].assign(m.vec().begin(), m.vec().end());
      out.opt.v[i].assign(v.vec().begin(), v.vec().end());
    }
  }
  return out;
}

void save_dataset(const DemoDataset& ds, const std::string& path) {
  Container c;
  c.add_f32("meta", {4},
            {static_cast<float>(ds.episodes.size()),
             static_cast<float>(ds.image_size),
             static_cast<float>(ds.action_dim), 0.0f});
  std::vector<uint8_t> seed_bytes(8);
  for (int i = 0; i < 8; ++i)
    seed_bytes[i] = static_cast<uint8_t>((ds.seed >> (8 * i)) & 0xFF);
  c.add_u8("seed", {8}, std::move(seed_bytes));
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    const EpisodeRecord& e = ds.episodes[i];
    const std::string p = "ep" + std::to_string(i) + ".";
    c.add_u8(p + "frames", {e.steps, 3, ds.image_size, ds.image_size},
             e.frames);
    c.add_f32(p + "agent_states", {e.steps, 4}, e.agent_states);
    c.add_f32(p + "actions", {e.steps, ds.action_dim}, e.actions);
    std::vector<uint8_t> es(8);
    for (int b = 0; b < 8; ++b)
      es[b] = static_cast<uint8_t>((e.seed >> (8 * b)) & 0xFF);
    c.add_u8(p + "seed", {8}, std::move(es));
    c.add_f32(p + "meta", {3},
              {static_cast<float>(e.steps), static_cast<float>(e.score),
               e.success ? 1.0f : 0.0f});
  }
  c.save(path);
}

DemoDataset load_dataset(const std::string& path) {
  Container c = Container::load(path);
  const auto& meta = c.entry("meta");
  DemoDataset ds;
  const int n = static_cast<int>(meta.f32.at(0));
  ds.image_size = static_cast<int>(meta.f32.at(1));
  ds.action_dim = static_cast<int>(meta.f32.at(2));
  const auto& sb = c.entry("seed").u8;
  ds.seed = 0;
  for (int i = 0; i < 8; ++i) ds.seed |= static_cast<uint64_t>(sb.at(i)) << (8 * i);
  for (int i = 0; i < n; ++i) {
    const std::string p = "ep" + std::to_string(i) + ".";
    EpisodeRecord e;
    const auto& em = c.entry(p + "meta");
    e.steps = static_cast<int>(em.f32.at(0));
    e.score = em.f32.at(1);
    e.success = em.f32.at(2) != 0.0f;
    e.frames = c.entry(p + "frames").u8;
    e.agent_states = c.entry(p + "agent_states").f32;
    e.actions = c.entry(p + "actions").f32;
    const auto& eb = c.entry(p + "seed").u8;
    e.seed = 0;
    for (int b = 0; b < 8; ++b)
      e.seed |= static_cast<uint64_t>(eb.at(b)) << (8 * b);
    if (e.frames.size() !=
            static_cast<size_t>(e.steps) * 3 * ds.image_size * ds.image_size ||
        e.actions.size() != static_cast<size_t>(e.steps) * ds.action_dim)
      throw IoError("dataset: inconsistent episode sizes");
    ds.episodes.push_back(std::move(e));
  }
  return ds;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.shape().size() != 3 || image.shape()[0] != 3)
    throw UsageError("write_ppm: expected [3, h, w]");
  const int h = image.shape()[1], w = image.shape()[2];
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_ppm: cannot open " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  const double* d = image.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::min(1.0, std::max(0.0, d[(ch * h + y) * w + x]));
        f.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
      }
  if (!f) throw IoError("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError("read_ppm: not a P6 file");
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255)
    throw IoError("read_ppm: unsupported header");
  f.get();  // single whitespace after maxval
  std::vector<char> raw(static_cast<size_t>(w) * h * 3);
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError("read_ppm: truncated pixel data");
  Tensor out = Tensor::zeros({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.data()[(ch * h + y) * w + x] =
            static_cast<uint8_t>(raw[(y * static_cast<size_t>(w) + x) * 3 + ch]) /
            255.0;
  return out;
}

}  // namespace dpa
