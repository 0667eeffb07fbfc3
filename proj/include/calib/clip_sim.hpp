#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calib/matrix.hpp"
#include "calib/rng.hpp"

namespace calib {

struct TaskConfig {
  int num_base = 8;
  int num_novel = 8;
  int token_dim = 16;    // class/context token width
  int hidden_dim = 32;   // encoder hidden width
  int embed_dim = 16;    // output embedding width
  int context_len = 4;   // learnable prefix length M
  int shots = 16;        // few-shot samples per base class
  double sigma = 0.6;    // image feature noise level
  std::string prompt_template = "a nice image of a {}";

  void validate() const;
};

/// Frozen two-layer tanh text encoder with mean pooling and L2-normalized
/// output. Weights are drawn once from the seed and never change.
class FrozenEncoder {
 public:
  FrozenEncoder() = default;

  static FrozenEncoder build(int token_dim, int hidden_dim, int embed_dim, std::uint64_t seed);

  /// Forward pass over a T x token_dim sequence, keeping the intermediates
  /// needed for the backward pass.
  struct Encoding {
    std::vector<double> embedding;  // unit-norm, embed_dim
    std::vector<double> hidden;     // tanh activations
    std::vector<double> raw;        // pre-normalization output
    double inv_norm = 0.0;
    std::size_t num_tokens = 0;
  };
  Encoding encode(const Matrix& tokens) const;

  /// dL/dtokens from dL/dembedding for a cached forward pass.
  Matrix backward(const Encoding& enc, std::span<const double> upstream) const;

  int token_dim() const { return static_cast<int>(w1_.cols()); }
  int hidden_dim() const { return static_cast<int>(w1_.rows()); }
  int embed_dim() const { return static_cast<int>(w2_.rows()); }

  const Matrix& w1() const { return w1_; }
  const Matrix& w2() const { return w2_; }
  const std::vector<double>& b1() const { return b1_; }
  const std::vector<double>& b2() const { return b2_; }

 private:
  Matrix w1_;               // hidden x token
  Matrix w2_;               // embed x hidden
  std::vector<double> b1_;  // hidden
  std::vector<double> b2_;  // embed
};

/// Deterministic desk-scale stand-in for a frozen CLIP setup: encoder,
/// per-class tokens, the hand-crafted template, zero-shot anchors, and the
/// base/novel split. Classes [0, num_base) are base, the rest novel.
struct SyntheticTask {
  TaskConfig cfg;
  std::uint64_t seed = 0;
  FrozenEncoder encoder;
  Matrix class_tokens;     // (num_base + num_novel) x token_dim, unit rows
  Matrix template_tokens;  // context_len x token_dim
  Matrix anchors;          // (num_base + num_novel) x embed_dim, unit rows

  int num_classes() const { return cfg.num_base + cfg.num_novel; }
  std::vector<int> base_class_ids() const;
  std::vector<int> novel_class_ids() const;
};

SyntheticTask build_task(const TaskConfig& cfg, std::uint64_t seed);

/// The fixed random token matrix standing in for a named prompt template.
/// Distinct names give distinct matrices; the same (cfg, seed, name)
/// always gives the same tokens.
Matrix template_tokens_for(const TaskConfig& cfg, std::uint64_t seed, const std::string& name);

/// Names of the template variants exercised by the initialization sweep.
std::vector<std::string> named_templates();

/// Learnable context tokens in front of a frozen encoder and frozen class
/// tokens. Only `context` is trainable.
struct PromptModel {
  Matrix context;  // context_len x token_dim
  const SyntheticTask* task = nullptr;
};

/// Context initialized to the task's hand-crafted template, so the initial
/// tuned embeddings equal the zero-shot anchors exactly.
PromptModel make_prompt_model(const SyntheticTask& task);
PromptModel make_prompt_model(const SyntheticTask& task, const std::string& init_template);

/// Tuned class embeddings c~_y = encode(context ++ e_y) with the cached
/// encodings needed to push gradients back into the context.
struct TunedEmbeddings {
  Matrix embeddings;  // |class_ids| x embed_dim, unit rows
  std::vector<FrozenEncoder::Encoding> encodings;
  std::vector<int> class_ids;
};
TunedEmbeddings tuned_class_embeddings(const PromptModel& model, std::span<const int> class_ids);

/// Accumulate dL/dcontext from per-class upstream gradients dL/dembedding
/// (rows of `upstream` align with `tuned.class_ids`).
Matrix context_grad(const PromptModel& model, const TunedEmbeddings& tuned,
                    const Matrix& upstream);

/// Class-conditional image features: normalize(anchor_y + sigma * g) with
/// g drawn from a stream keyed by (seed, class, index). Labels are local
/// indices into `class_ids`.
struct ImageBatch {
  Matrix features;          // N x embed_dim, unit rows
  std::vector<int> labels;  // indices into the class_ids list used to sample
};
ImageBatch sample_images(const SyntheticTask& task, std::span<const int> class_ids,
                         int per_class, double sigma, std::uint64_t seed);

}  // namespace calib
