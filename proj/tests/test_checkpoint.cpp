#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "core/checkpoint.hpp"

using namespace dpa;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/dpa_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("crc32 matches the standard check value") {
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(s), 9) == 0xCBF43926u);
  CHECK(crc32(nullptr, 0) == 0u);
}

TEST_CASE("container: round trip preserves names, shapes, dtypes, data") {
  Container c;
  Rng rng(4);
  Tensor t = Tensor::randn({3, 5}, rng);
  c.add_tensor("weights", t);
  c.add_u8("image", {2, 2}, {0, 127, 200, 255});
  c.add_f32("empty_dimless", {1}, {42.0f});

  TempFile f("container.dpab");
  c.save(f.path);
  Container r = Container::load(f.path);

  REQUIRE(r.entries().size() == 3);
  Tensor rt = r.tensor("weights");
  CHECK(rt.shape() == std::vector<int>{3, 5});
  for (int i = 0; i < t.numel(); ++i)
    CHECK(rt.data()[i] == static_cast<float>(t.data()[i]));  // f32 narrowing

  const auto& img = r.entry("image");
  CHECK(img.dtype == Container::Dtype::U8);
  CHECK(img.shape == std::vector<int>{2, 2});
  CHECK(img.u8 == std::vector<uint8_t>{0, 127, 200, 255});
  CHECK(r.tensor("empty_dimless").item() == 42.0);

  CHECK_THROWS_AS(r.tensor("image"), IoError);    // dtype mismatch
  CHECK_THROWS_AS(r.tensor("missing"), IoError);  // absent name
}

TEST_CASE("container: rejects duplicates and bad shapes at build time") {
  Container c;
  c.add_f32("a", {2}, {1.0f, 2.0f});
  CHECK_THROWS_AS(c.add_f32("a", {1}, {0.0f}), UsageError);
  CHECK_THROWS_AS(c.add_f32("b", {3}, {0.0f}), UsageError);
}

TEST_CASE("container: every corrupted byte is detected by the CRC") {
  Container c;
  c.add_f32("x", {4}, {1.0f, -2.0f, 3.0f, 0.5f});
  c.add_u8("y", {3}, {9, 8, 7});
  TempFile f("corrupt.dpab");
  c.save(f.path);
  std::vector<uint8_t> bytes = slurp(f.path);
  REQUIRE(bytes.size() > 4);

  for (size_t i = 0; i < bytes.size(); ++i) {
    std::vector<uint8_t> mutated = bytes;
    mutated[i] ^= 0x40;
    spit(f.path, mutated);
    CHECK_THROWS_AS(Container::load(f.path), IoError);
  }

  // truncation is also an error
  spit(f.path, std::vector<uint8_t>(bytes.begin(), bytes.end() - 5));
  CHECK_THROWS_AS(Container::load(f.path), IoError);
  spit(f.path, bytes);
  CHECK_NOTHROW(Container::load(f.path));
}

TEST_CASE("policy checkpoint: save/load/save is byte-stable") {
  DiffusionPolicy p;
  p.init(123);
  p.normalizer.lo = {-0.5, -1.0};
  p.normalizer.hi = {0.5, 1.0};

  TempFile f1("pol1.dpab"), f2("pol2.dpab");
  save_policy(p, f1.path);
  LoadedPolicy lp = load_policy(f1.path);
  CHECK(!lp.has_opt);
  CHECK(lp.epochs_done == 0);
  CHECK(lp.policy.normalizer.lo[0] == -0.5);
  CHECK(lp.policy.normalizer.hi[1] == 1.0);
  save_policy(lp.policy, f2.path);
  CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("policy checkpoint: resume through a file equals uninterrupted run") {
  DemoDataset ds = generate_dataset(2, 200, 55);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 64;
  cfg.seed = 31;
  DiffusionPolicy full = train_policy(ds, cfg);

  // epoch 0, save with optimizer state, reload, epoch 1
  DiffusionPolicy p;
  p.init(derive_seed(cfg.seed, "policy_init"));
  p.normalizer = ActionNormalizer::fit(ds);
  Adam opt;
  opt.lr = cfg.lr;
  TrainConfig one = cfg;
  one.epochs = 1;
  train_policy_continue(p, opt, ds, one, 0);

  TempFile f("resume.dpab");
  save_policy(p, f.path, &opt, 1);
  LoadedPolicy lp = load_policy(f.path);
  REQUIRE(lp.has_opt);
  CHECK(lp.epochs_done == 1);
  lp.opt.lr = cfg.lr;
  train_policy_continue(lp.policy, lp.opt, ds, one, lp.epochs_done);

  auto a = full.named_params(), b = lp.policy.named_params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].second.vec() == b[i].second.vec());
}

TEST_CASE("dataset file: exact round trip") {
  DemoDataset ds = generate_dataset(2, 200, 9);
  TempFile f("data.dpab");
  save_dataset(ds, f.path);
  DemoDataset r = load_dataset(f.path);
  CHECK(r.seed == ds.seed);
  CHECK(r.image_size == ds.image_size);
  CHECK(r.action_dim == ds.action_dim);
  REQUIRE(r.episodes.size() == ds.episodes.size());
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    CHECK(r.episodes[i].frames == ds.episodes[i].frames);
    CHECK(r.episodes[i].agent_states == ds.episodes[i].agent_states);
    CHECK(r.episodes[i].actions == ds.episodes[i].actions);
    CHECK(r.episodes[i].steps == ds.episodes[i].steps);
    CHECK(r.episodes[i].success == ds.episodes[i].success);
    CHECK(r.episodes[i].seed == ds.episodes[i].seed);
  }
}

TEST_CASE("ppm: write/read round trip within quantization error") {
  Rng rng(6);
  Tensor img = Tensor::zeros({3, 5, 7});
  for (auto& v : img.vec()) v = rng.uniform();
  TempFile f("img.ppm");
  write_ppm(f.path, img);

  std::vector<uint8_t> bytes = slurp(f.path);
  REQUIRE(bytes.size() > 11);
  CHECK(bytes[0] == 'P');
  CHECK(bytes[1] == '6');
  CHECK(bytes.size() >= 3 * 5 * 7);

  Tensor back = read_ppm(f.path);
  CHECK(back.shape() == img.shape());
  for (int i = 0; i < img.numel(); ++i)
    CHECK(std::fabs(back.data()[i] - img.data()[i]) <= 0.5 / 255.0 + 1e-12);

  CHECK_THROWS_AS(write_ppm(f.path, Tensor::zeros({1, 4, 4})), UsageError);
  CHECK_THROWS_AS(read_ppm("/tmp/dpa_test_nonexistent.ppm"), IoError);
}
