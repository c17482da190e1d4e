#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "imusic/checkpoint.hpp"
#include "imusic/config.hpp"
#include "imusic/error.hpp"
#include "imusic/pipeline.hpp"
#include "json.hpp"
#include "support/tempdir.hpp"

using namespace imusic;

namespace {

ckpt::Bundle sample_bundle() {
  ckpt::Bundle b;
  b.metadata = R"({"kind":"test","step":3})";
  b.tensors.push_back({"a.w", {2, 3}, {1.5f, -2.0f, 0.0f, 3.25f, 1e-30f, -7.0f}});
  b.tensors.push_back({"b", {4}, {0.1f, 0.2f, 0.3f, 0.4f}});
  return b;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  test::TempDir dir;
  const auto b = sample_bundle();
  ckpt::save(dir / "m.imck", b);
  const auto back = ckpt::load(dir / "m.imck");
  CHECK(back.metadata == b.metadata);
  REQUIRE(back.tensors.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.tensors[i].name == b.tensors[i].name);
    CHECK(back.tensors[i].shape == b.tensors[i].shape);
    CHECK(std::memcmp(back.tensors[i].values.data(), b.tensors[i].values.data(), b.tensors[i].values.size() * 4) == 0);
  }
  CHECK(back.find("b") != nullptr);
  CHECK(back.find("nope") == nullptr);
  CHECK_FALSE(std::filesystem::exists(dir / "m.imck.tmp"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  test::TempDir dir;
  ckpt::save(dir / "m.imck", sample_bundle());
  const auto bytes = slurp(dir / "m.imck");

  SUBCASE("truncated") {
    for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
      spit(dir / "t.imck", std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
      CHECK_THROWS_AS(ckpt::load(dir / "t.imck"), DataError);
    }
  }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    spit(dir / "t.imck", b);
    CHECK_THROWS_WITH_AS(ckpt::load(dir / "t.imck"), doctest::Contains("magic"), DataError);
  }
  SUBCASE("newer version") {
    auto b = bytes;
    std::uint32_t v = ckpt::kVersion + 1;
    std::memcpy(b.data() + 4, &v, 4);
    spit(dir / "t.imck", b);
    CHECK_THROWS_WITH_AS(ckpt::load(dir / "t.imck"), doctest::Contains("version 2"), DataError);
  }
  SUBCASE("overlapping ranges") {
    // Point the second tensor's offset at the first tensor's bytes.
    auto b = bytes;
    const auto info = ckpt::inspect(dir / "m.imck");
    REQUIRE(info.table.size() == 2);
    const std::uint64_t want = info.table[1].offset;
    std::size_t pos = std::string::npos;
    for (std::size_t i = 0; i + 8 <= b.size(); ++i) {
      std::uint64_t x;
      std::memcpy(&x, b.data() + i, 8);
      if (x == want && i > 20) {
        pos = i;
        break;
      }
    }
    REQUIRE(pos != std::string::npos);
    const std::uint64_t zero = 0;
    std::memcpy(b.data() + pos, &zero, 8);
    spit(dir / "t.imck", b);
    CHECK_THROWS_AS(ckpt::load(dir / "t.imck"), DataError);
  }
  CHECK_THROWS_AS(ckpt::load(dir / "missing.imck"), DataError);
}

TEST_CASE("inspect lists the table without touching values") {
  test::TempDir dir;
  ckpt::save(dir / "m.imck", sample_bundle());
  const auto info = ckpt::inspect(dir / "m.imck");
  CHECK(info.version == ckpt::kVersion);
  REQUIRE(info.table.size() == 2);
  CHECK(info.table[0].bytes == 24);
  CHECK(info.table[1].offset >= info.table[0].offset + info.table[0].bytes);
  CHECK(info.payload_bytes == 40);
  const auto j = nlohmann::json::parse(ckpt::describe(info));
  CHECK(j["metadata"]["kind"] == "test");
  CHECK(j["tensors"].size() == 2);
}

TEST_CASE("parameters and optimizer state survive a save") {
  test::TempDir dir;
  std::mt19937_64 rng(1);
  nn::ParamStore ps;
  auto lin = nn::make_linear(ps, "l", 4, 3, rng);
  nc::Adam opt(ps.tensors());
  const auto x = nc::Tensor::randn({5, 4}, rng);
  for (int i = 0; i < 3; ++i) {
    nc::backward(nc::mse(nn::forward(lin, x), nc::Tensor::zeros({5, 3})));
    nn::optimizer_step(opt, 1e-2, 1.0);
  }
  ckpt::save(dir / "p.imck", ckpt::from_params(ps, "{}"));
  ckpt::save_adam(ckpt::adam_sidecar(dir / "p.imck"), opt);
  CHECK(ckpt::adam_sidecar(dir / "p.imck").filename() == "p.imck.adam");

  std::mt19937_64 other(99);
  nn::ParamStore ps2;
  auto lin2 = nn::make_linear(ps2, "l", 4, 3, other);
  nc::Adam opt2(ps2.tensors());
  ckpt::to_params(ckpt::load(dir / "p.imck"), ps2);
  CHECK(ckpt::load_adam(ckpt::adam_sidecar(dir / "p.imck"), opt2));
  CHECK(opt2.state().t == 3);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto a = ps.named()[i].second.data(), b = ps2.named()[i].second.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  CHECK_FALSE(ckpt::load_adam(dir / "none.adam", opt2));

  nn::ParamStore wrong;
  nn::make_linear(wrong, "l", 4, 2, other);
  CHECK_THROWS_AS(ckpt::to_params(ckpt::load(dir / "p.imck"), wrong), DataError);
}

TEST_CASE("config defaults, overrides and validation") {
  cfg::RunConfig c;
  CHECK(c.get("model.preset") == "desk-0.5");
  CHECK(c.get_double("generate.cfg_scale") == 3.0);
  CHECK(c.get_int("generate.top_k") == 350);
  CHECK(c.get_double("train.cfg_dropout") == 0.7);
  c.parse("# run\n[train]\nsteps = 12\nlr = 0.002\n\n[generate]\nsolver = midpoint\n");
  CHECK(c.get_int("train.steps") == 12);
  CHECK(c.get_double("train.lr") == 0.002);
  CHECK(c.get("generate.solver") == "midpoint");
  c.set("train.steps", "30");
  CHECK(c.get_int("train.steps") == 30);
  CHECK_THROWS_AS(c.set("train.stepz", "1"), UsageError);
  CHECK_THROWS_AS(c.set("train.steps", "ten"), UsageError);
  CHECK_THROWS_AS(c.parse("[train]\nbogus = 1\n"), UsageError);
  CHECK_THROWS_AS(c.parse("steps = 1\n"), UsageError);
  CHECK_THROWS_AS(c.parse("[train\n"), UsageError);

  cfg::RunConfig d;
  d.parse(c.dump());
  for (const auto& k : c.keys()) CHECK(d.get(k) == c.get(k));
}

TEST_CASE("config files") {
  test::TempDir dir;
  std::ofstream(dir / "run.cfg") << "[seed]\nseed = 7\n";
  cfg::RunConfig c;
  c.load_file(dir / "run.cfg");
  CHECK(c.get_int("seed.seed") == 7);
  CHECK_THROWS_AS(c.load_file(dir / "missing.cfg"), DataError);
}

TEST_CASE("module names and presets") {
  using namespace pipeline;
  for (auto m : {Module::kSemCodec, Module::kAcCodec, Module::kLm, Module::kFlow}) {
    CHECK(parse_module(module_name(m)) == m);
  }
  CHECK_FALSE(parse_module("vocoder").has_value());
  CHECK(checkpoint_path("runs/x", Module::kLm) == std::filesystem::path("runs/x/lm.imck"));
  CHECK(Preset::named("desk-1.5").lm.max_seconds == 480);
  CHECK(Preset::named("desk-0.5").lm.max_seconds == 30);
  CHECK_THROWS_AS(Preset::named("huge"), UsageError);
  const auto [a, b] = loss_trend({5, 4, 3, 2, 1, 1}, 2);
  CHECK(a == 4.5);
  CHECK(b == 1.0);
}

TEST_CASE("training without prerequisites names the missing checkpoint") {
  test::TempDir dir;
  cfg::RunConfig c;
  c.set("paths.run", (dir / "run").string());
  c.set("paths.corpus", (dir / "corpus").string());
  CHECK_THROWS_WITH_AS(pipeline::train(c, pipeline::Module::kLm), doctest::Contains("sem-codec.imck"), DataError);
}
