#pragma once

// Decoder-only transformer over one vocabulary that holds caption bytes,
// semantic audio codes and the conditioning specials, plus the pieces
// around it: sequence layout, condition dropout, guidance, top-K sampling
// and the cached generation loop.
//
// Vocabulary layout (ids ascending):
//   [0, 256)             caption bytes
//   audio                V_sem semantic codes
//   time start           one id per whole second, 0..max_seconds
//   time end             same
//   structure            intro, verse, chorus, outro, none
//   label                eight genres, none
//   unconditional        single sentinel replacing all conditioning

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imusic/nn.hpp"
#include "imusic/semantic_codec.hpp"

namespace imusic::lm {

inline constexpr int kTextVocab = 256;
inline constexpr int kStructureCount = 5;  // intro, verse, chorus, outro, none
inline constexpr int kStructureNone = 4;
inline constexpr int kLabelCount = 9;  // eight genres, none
inline constexpr int kLabelNone = 8;
inline constexpr int kFullScaleVocab = 156032;

struct Vocab {
  int v_sem = 256;
  int max_seconds = 30;

  int audio_begin() const { return kTextVocab; }
  int audio_end() const { return audio_begin() + v_sem; }
  int ts_begin() const { return audio_end(); }
  int te_begin() const { return ts_begin() + max_seconds + 1; }
  int structure_begin() const { return te_begin() + max_seconds + 1; }
  int label_begin() const { return structure_begin() + kStructureCount; }
  int uncond() const { return label_begin() + kLabelCount; }
  int size() const { return uncond() + 1; }

  bool is_audio(int id) const { return id >= audio_begin() && id < audio_end(); }
  bool is_text(int id) const { return id >= 0 && id < kTextVocab; }
};

struct PromptSchema {
  std::vector<int> text_tokens;  // caption bytes
  int time_start = 0;            // whole seconds
  int time_end = 0;
  int structure = kStructureNone;
  int label = kLabelNone;
  std::vector<int> audio_tokens;  // semantic codes, not offset
  bool unconditional = false;     // conditioning replaced by the sentinel

  bool operator==(const PromptSchema&) const = default;
};

std::vector<int> tokenize_caption(std::string_view caption);
// Section names of the corpus plus "none".
std::optional<int> parse_structure(std::string_view name);
std::string_view structure_name(int s);

// Conditioning ids only: text, ts, te, structure, label (or the sentinel).
std::vector<int> build_prefix(const PromptSchema& p, const Vocab& v);
// Prefix followed by offset audio ids; length m + n + 4 for a conditioned
// schema, n + 1 for an unconditional one. UsageError when the result would
// exceed max_len (max_len <= 0 disables the check) or a field is out of range.
std::vector<int> build_sequence(const PromptSchema& p, const Vocab& v, int max_len = 0);
PromptSchema parse_sequence(std::span<const int> ids, const Vocab& v);

// With probability p the conditioning is dropped: returns true and marks the
// schema unconditional (text cleared, specials reset).
bool cfg_dropout(PromptSchema& p, double drop_prob, std::mt19937_64& rng);

// uncond + scale * (cond - uncond), elementwise.
std::vector<float> cfg_logits(std::span<const float> cond, std::span<const float> uncond, double scale);

// Samples from softmax(logits / temperature) restricted to the k largest
// logits. Ties at the k-th value keep the lowest indices.
int sample_topk(std::span<const float> logits, int k, double temperature, std::mt19937_64& rng);
// The k ids sample_topk may return, in descending logit order.
std::vector<int> topk_support(std::span<const float> logits, int k);

struct LmConfig {
  int v_sem = 256;
  int max_seconds = 30;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 4;
  int window = 512;      // local attention span; conditioning stays visible
  int vocab_override = 0;  // > layout size pads the vocabulary (full-scale presets)

  static LmConfig desk_05();
  static LmConfig desk_15();
  // Shape-only presets.
  static LmConfig full_05();
  static LmConfig full_15();

  Vocab vocab() const { return {v_sem, max_seconds}; }
  int vocab_size() const;
  // Longest conditioning (bytes capped at 256) plus every audio token of a
  // max_seconds clip.
  int max_seq_len() const;
  void validate() const;
  std::string to_json() const;
  static LmConfig from_json(const std::string& text);
};

inline constexpr int kMaxCaptionBytes = 256;

struct GenParams {
  double cfg_scale = 3.0;
  int top_k = 350;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

class SequenceLm {
 public:
  SequenceLm(const LmConfig& cfg, std::uint64_t seed);

  const LmConfig& config() const { return cfg_; }
  Vocab vocab() const { return cfg_.vocab(); }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // Logits [T, V]. `prefix` positions stay visible beyond the local window.
  nc::Tensor forward(std::span<const int> ids, int prefix) const;

  // Incremental decoding with a bounded key/value cache (prefix plus the
  // last `window` positions per layer).
  class Session {
   public:
    explicit Session(const SequenceLm& model);
    // Appends one id and returns the logits predicting the next one.
    const std::vector<float>& push(int id);
    // Declares the first n pushed ids as the pinned conditioning prefix.
    void set_prefix(int n) { prefix_ = n; }
    int position() const { return pos_; }
    std::size_t cached_positions() const;

   private:
    const SequenceLm& m_;
    int pos_ = 0;
    int prefix_ = 0;
    // per layer: keys/values of pinned positions, then a ring of `window`
    std::vector<std::vector<float>> pk_, pv_, rk_, rv_;
    std::vector<float> logits_;
  };

 private:
  friend class Session;
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear q, k, v, o, ff1, ff2;
  };
  LmConfig cfg_;
  nn::ParamStore ps_;
  nc::Tensor tok_emb_;
  std::vector<Block> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear head_;
};

// Next-token loss over special and audio targets; caption bytes and padding
// are ignored.
std::vector<int> loss_targets(std::span<const int> ids, const Vocab& v);

enum class Stage { kPretrain = 1, kCaptioned = 2, kFullLength = 3 };

struct LmTrainerOptions {
  double lr = 1e-3;
  std::int64_t warmup_steps = 0;
  double clip = 1.0;
  double cfg_dropout = 0.7;
  Stage stage = Stage::kPretrain;
};

class LmTrainer {
 public:
  LmTrainer(SequenceLm& model, LmTrainerOptions opts, std::uint64_t seed);

  // Mean next-token loss of the batch before the update. Stage 1 strips
  // captions; condition dropout is applied per sample.
  double step(std::span<const PromptSchema> batch);

  std::int64_t steps() const { return opt_.state().t; }
  nc::Adam& optimizer() { return opt_; }

 private:
  SequenceLm& model_;
  LmTrainerOptions opts_;
  nc::Adam opt_;
  std::mt19937_64 rng_;
};

// Audio tokens after `cond.audio_tokens` (which act as a continuation
// prompt), guided and sampled one at a time. Returns prompt + new tokens.
sem::SemanticTokenSeq generate(const SequenceLm& model, const PromptSchema& cond, int new_tokens,
                               const GenParams& params);

// Text-to-music: round(75 * duration) tokens from a caption schema.
sem::SemanticTokenSeq generate_t2m(const SequenceLm& model, PromptSchema cond, double duration_s,
                                   const GenParams& params);

}  // namespace imusic::lm
