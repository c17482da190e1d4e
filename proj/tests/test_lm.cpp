#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "imusic/error.hpp"
#include "imusic/sequence_lm.hpp"

using namespace imusic;
using namespace imusic::lm;

namespace {

LmConfig tiny(int window = 512) {
  LmConfig c;
  c.v_sem = 16;
  c.max_seconds = 4;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.window = window;
  return c;
}

PromptSchema random_schema(std::mt19937_64& rng, const Vocab& v) {
  PromptSchema p;
  std::uniform_int_distribution<int> len(0, 20), byte(0, 255), code(0, v.v_sem - 1), sec(0, v.max_seconds);
  const int m = len(rng), n = len(rng);
  for (int i = 0; i < m; ++i) p.text_tokens.push_back(byte(rng));
  for (int i = 0; i < n; ++i) p.audio_tokens.push_back(code(rng));
  p.time_start = sec(rng);
  p.time_end = sec(rng);
  p.structure = std::uniform_int_distribution<int>(0, kStructureCount - 1)(rng);
  p.label = std::uniform_int_distribution<int>(0, kLabelCount - 1)(rng);
  return p;
}

std::vector<int> random_ids(int n, const Vocab& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> id(0, v.size() - 1);
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (auto& x : ids) x = id(rng);
  return ids;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  const Vocab v{256, 30};
  CHECK(v.audio_begin() == 256);
  CHECK(v.audio_end() == 512);
  CHECK(v.te_begin() - v.ts_begin() == 31);
  CHECK(v.size() == 256 + 256 + 31 + 31 + 5 + 9 + 1);
  CHECK(LmConfig::full_05().vocab_size() == 156032);
  CHECK(LmConfig::full_15().d_model == 1536);
  CHECK(LmConfig::full_05().d_model == 896);
  CHECK(LmConfig::desk_15().max_seq_len() >= 75 * 480);
}

TEST_CASE("sequence length is m + n + 4") {
  const Vocab v{16, 4};
  PromptSchema p;
  p.text_tokens = {1, 2, 3};
  p.audio_tokens = {0, 1, 2, 3, 4};
  CHECK(build_sequence(p, v).size() == 12);
  PromptSchema empty;
  empty.audio_tokens.assign(75, 3);
  CHECK(build_sequence(empty, v).size() == 79);
}

TEST_CASE("parse inverts build on random schemas") {
  std::mt19937_64 rng(5);
  const Vocab v{16, 4};
  for (int i = 0; i < 50; ++i) {
    const auto p = random_schema(rng, v);
    const auto ids = build_sequence(p, v);
    REQUIRE(ids.size() == p.text_tokens.size() + p.audio_tokens.size() + 4);
    for (int id : ids) REQUIRE((id >= 0 && id < v.size()));
    CHECK(parse_sequence(ids, v) == p);
  }
}

TEST_CASE("order is text, specials, audio") {
  const Vocab v{16, 4};
  PromptSchema p;
  p.text_tokens = {65};
  p.time_start = 1;
  p.time_end = 3;
  p.structure = 2;
  p.label = 5;
  p.audio_tokens = {7};
  const std::vector<int> want{65, v.ts_begin() + 1, v.te_begin() + 3, v.structure_begin() + 2, v.label_begin() + 5,
                              v.audio_begin() + 7};
  CHECK(build_sequence(p, v) == want);
}

TEST_CASE("schema errors") {
  const Vocab v{16, 4};
  PromptSchema p;
  p.audio_tokens = {1, 2, 3};
  CHECK_THROWS_AS(build_sequence(p, v, 6), UsageError);
  CHECK(build_sequence(p, v, 7).size() == 7);
  p.time_end = 5;
  CHECK_THROWS_AS(build_sequence(p, v), UsageError);
  p.time_end = 0;
  p.audio_tokens = {16};
  CHECK_THROWS_AS(build_sequence(p, v), UsageError);
}

TEST_CASE("condition dropout") {
  std::mt19937_64 rng(1);
  const Vocab v{16, 4};
  const auto base = random_schema(rng, v);
  auto always = base;
  CHECK(cfg_dropout(always, 1.0, rng));
  CHECK(always.unconditional);
  CHECK(always.audio_tokens == base.audio_tokens);
  CHECK(build_sequence(always, v).front() == v.uncond());
  CHECK(build_sequence(always, v).size() == base.audio_tokens.size() + 1);
  auto never = base;
  CHECK_FALSE(cfg_dropout(never, 0.0, rng));
  CHECK(never == base);
  int dropped = 0;
  for (int i = 0; i < 10000; ++i) {
    auto p = base;
    dropped += cfg_dropout(p, 0.7, rng);
  }
  CHECK(dropped >= 6800);
  CHECK(dropped <= 7200);
}

TEST_CASE("guidance identities") {
  const std::vector<float> c{0.3f, -1.2f, 2.5f, 0.0f}, u{1.1f, 0.4f, -0.7f, 3.0f};
  CHECK(cfg_logits(c, u, 1.0) == c);
  CHECK(cfg_logits(c, u, 0.0) == u);
  for (double s : {0.0, 0.5, 3.0, 10.0}) CHECK(cfg_logits(c, c, s) == c);
  CHECK_THROWS(cfg_logits(c, std::vector<float>{1.0f}, 2.0));
}

TEST_CASE("top-k support and argmax") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> logits(20);
    for (auto& x : logits) x = g(rng);
    const auto support = topk_support(logits, 5);
    for (int i = 0; i < 100; ++i) {
      const int id = sample_topk(logits, 5, 1.0, rng);
      REQUIRE(std::find(support.begin(), support.end(), id) != support.end());
    }
    const int arg = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    CHECK(sample_topk(logits, 1, 1.0, rng) == arg);
  }
}

TEST_CASE("top-k ties keep the lowest indices") {
  const std::vector<float> logits{0.0f, 1.0f, 1.0f, 1.0f, 2.0f};
  CHECK(topk_support(logits, 2) == std::vector<int>{4, 1});
  CHECK(topk_support(logits, 3) == std::vector<int>{4, 1, 2});
}

TEST_CASE("top-k frequencies match the renormalized softmax") {
  const std::vector<float> logits{0.1f, 1.5f, -0.3f, 0.9f, 1.2f, -2.0f, 0.0f, 0.4f};
  std::mt19937_64 rng(8);
  // Exact distribution: softmax over ids 1, 4, 3.
  std::vector<double> exact(8, 0.0);
  double z = 0;
  for (int i : {1, 4, 3}) z += std::exp(static_cast<double>(logits[i]));
  for (int i : {1, 4, 3}) exact[i] = std::exp(static_cast<double>(logits[i])) / z;
  std::vector<double> freq(8, 0.0), shifted(8, 0.0);
  std::vector<float> plus(logits);
  for (auto& x : plus) x += 7.0f;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    freq[sample_topk(logits, 3, 1.0, rng)] += 1.0 / n;
    shifted[sample_topk(plus, 3, 1.0, rng)] += 1.0 / n;
  }
  double tv = 0, tv_shift = 0;
  for (int i = 0; i < 8; ++i) {
    tv += 0.5 * std::abs(freq[i] - exact[i]);
    tv_shift += 0.5 * std::abs(shifted[i] - exact[i]);
  }
  CHECK(tv <= 0.02);
  CHECK(tv_shift <= 0.02);
}

TEST_CASE("forward is causal and shaped") {
  const SequenceLm model(tiny(), 3);
  std::mt19937_64 rng(4);
  auto ids = random_ids(24, model.vocab(), rng);
  const auto a = model.forward(ids, 0);
  CHECK(a.dim(0) == 24);
  CHECK(a.dim(1) == model.config().vocab_size());
  const int j = 13;
  ids[j] = (ids[j] + 1) % model.vocab().size();
  const auto b = model.forward(ids, 0);
  const int V = a.dim(1);
  for (int i = 0; i < j * V; ++i) REQUIRE(a.data()[i] == b.data()[i]);
  bool changed = false;
  for (int i = j * V; i < 24 * V; ++i) changed = changed || a.data()[i] != b.data()[i];
  CHECK(changed);
}

TEST_CASE("random-init cross-entropy is near ln V") {
  const SequenceLm model(tiny(), 6);
  std::mt19937_64 rng(6);
  const auto ids = random_ids(64, model.vocab(), rng);
  const auto logits = model.forward(std::span(ids).first(63), 0);
  const std::vector<int> targets(ids.begin() + 1, ids.end());
  const double ce = nc::cross_entropy(logits, targets).data()[0];
  const double lnv = std::log(static_cast<double>(model.config().vocab_size()));
  CHECK(ce == doctest::Approx(lnv).epsilon(0.1));
}

TEST_CASE("cached decoding matches the full forward pass") {
  // Small window so the ring buffer wraps and the pinned prefix matters.
  const SequenceLm model(tiny(8), 7);
  std::mt19937_64 rng(7);
  const auto ids = random_ids(30, model.vocab(), rng);
  const int prefix = 5;
  const auto full = model.forward(ids, prefix);
  SequenceLm::Session s(model);
  s.set_prefix(prefix);
  const int V = full.dim(1);
  double worst = 0;
  for (int t = 0; t < 30; ++t) {
    const auto& l = s.push(ids[static_cast<std::size_t>(t)]);
    for (int k = 0; k < V; ++k) worst = std::max(worst, std::abs(static_cast<double>(l[k]) - full.data()[t * V + k]));
    CHECK(s.cached_positions() <= static_cast<std::size_t>(prefix + 8));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("loss targets skip caption bytes") {
  const Vocab v{16, 4};
  PromptSchema p;
  p.text_tokens = {10, 11};
  p.audio_tokens = {1, 2};
  const auto ids = build_sequence(p, v);
  const auto t = loss_targets(ids, v);
  REQUIRE(t.size() == ids.size());
  CHECK(t[0] == -1);  // predicts a caption byte
  CHECK(t[1] == ids[2]);
  CHECK(t.back() == -1);
  CHECK(t[t.size() - 2] == ids.back());
}

TEST_CASE("training lowers the loss on a repeated sequence") {
  SequenceLm model(tiny(), 9);
  LmTrainerOptions o;
  o.lr = 3e-3;
  o.cfg_dropout = 0.0;
  LmTrainer trainer(model, o, 9);
  std::mt19937_64 rng(9);
  auto p = random_schema(rng, model.vocab());
  p.audio_tokens = {1, 5, 9, 2, 7, 7, 3, 0, 12, 4};
  const std::vector<PromptSchema> batch{p};
  const double first = trainer.step(batch);
  double last = first;
  for (int i = 0; i < 40; ++i) last = trainer.step(batch);
  CHECK(trainer.steps() == 41);
  CHECK(last < 0.5 * first);
}

TEST_CASE("generation length, range and determinism") {
  const SequenceLm model(tiny(), 10);
  PromptSchema cond;
  cond.text_tokens = tokenize_caption("calm piano");
  cond.time_end = 2;
  GenParams gp;
  gp.seed = 7;
  gp.top_k = 5;
  const auto a = generate_t2m(model, cond, 2.0, gp);
  const auto b = generate_t2m(model, cond, 2.0, gp);
  CHECK(a.codes.size() == 150);
  CHECK(a.codes == b.codes);
  for (int c : a.codes) CHECK((c >= 0 && c < 16));
  gp.seed = 8;
  CHECK(generate_t2m(model, cond, 2.0, gp).codes != a.codes);
  CHECK_THROWS_AS(generate_t2m(model, cond, 5.0, gp), UsageError);
}

TEST_CASE("continuation keeps the prompt") {
  const SequenceLm model(tiny(), 11);
  PromptSchema cond;
  cond.audio_tokens = {3, 1, 4, 1, 5, 9, 2, 6};
  GenParams gp;
  gp.top_k = 16;
  const auto out = generate(model, cond, 20, gp);
  CHECK(out.codes.size() == 28);
  CHECK(std::equal(cond.audio_tokens.begin(), cond.audio_tokens.end(), out.codes.begin()));
  CHECK(generate(model, cond, 0, gp).codes == cond.audio_tokens);
}
