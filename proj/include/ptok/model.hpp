#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptok/vocab.hpp"

namespace ptok {

struct LmConfig {
  int vocab_size = 0;  // base vocabulary size; set from the vocabulary
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_context = 2048;
  uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  uint64_t hash() const;
};

struct LayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::MatrixXd wfc1;            // 4d x d
  Eigen::MatrixXd wfc2;            // d x 4d
};

// Parameter bundle; also reused as the gradient accumulator shape.
struct LmParams {
  Eigen::MatrixXd wte;  // V x d
  std::vector<LayerParams> layers;
  Eigen::MatrixXd wout;  // V x d

  void set_zero();
  size_t scalar_count() const;

  template <class F>
  void for_each(F&& f) {
    f(wte);
    for (LayerParams& l : layers) {
      f(l.wq);
      f(l.wk);
      f(l.wv);
      f(l.wo);
      f(l.wfc1);
      f(l.wfc2);
    }
    f(wout);
  }
  template <class F>
  void for_each(F&& f) const {
    f(wte);
    for (const LayerParams& l : layers) {
      f(l.wq);
      f(l.wk);
      f(l.wv);
      f(l.wo);
      f(l.wfc1);
      f(l.wfc2);
    }
    f(wout);
  }
};

struct Distribution {
  Eigen::VectorXd probs;  // length = base vocabulary size, sums to 1
};

enum class PTokenInitKind { MeanNoise, Gaussian };

struct PTokenInitSpec {
  PTokenInitKind kind = PTokenInitKind::MeanNoise;
  double sigma = 0.02;
};

// Trainable prompt tokens: m BEGIN_EDIT and m END_EDIT markers. Rows
// 0..m-1 of `embeddings` are the begin tokens, m..2m-1 the end tokens.
// The ids live in the owning model's special-token range and are
// input-only: the output head never scores them.
struct PTokenSet {
  int m = 0;
  std::vector<int> begin_ids, end_ids;
  Eigen::MatrixXd embeddings;  // 2m x d

  int row_of(int id) const {
    for (int i = 0; i < m; ++i)
      if (begin_ids[static_cast<size_t>(i)] == id) return i;
    for (int i = 0; i < m; ++i)
      if (end_ids[static_cast<size_t>(i)] == id) return m + i;
    return -1;
  }
};

// Activations recorded by forward_tape for the backward pass.
struct ForwardTape {
  std::vector<int> ids;
  std::vector<int> seg_start;  // per position: index where its segment begins
  const PTokenSet* pt = nullptr;
  Eigen::MatrixXd x0;  // T x d input embeddings
  struct LayerTape {
    Eigen::MatrixXd x_in, n1, q, k, v;   // T x d (q, k post-rotation)
    std::vector<Eigen::MatrixXd> att;    // per segment: (H*L) x L, head blocks stacked
    Eigen::MatrixXd ctx, x_mid, n2;      // T x d
    Eigen::MatrixXd z, g;                // T x 4d
  };
  std::vector<LayerTape> layers;
  Eigen::MatrixXd x_final, n_final;  // T x d
  Eigen::MatrixXd logits;            // T x V
};

// Pre-norm decoder-only transformer: RMSNorm, rotary position encoding,
// tanh-approximated GELU, untied output head, no biases. All arithmetic in
// double precision. Positions restart at each segment start, and attention
// never crosses a segment boundary, so one packed call equals processing
// the segments separately.
class LmModel {
 public:
  LmModel(LmConfig cfg, Vocabulary vocab);

  const LmConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  LmParams& params() { return p_; }
  const LmParams& params() const { return p_; }

  // Logits for positions from_row..T-1 (rows of the result are offset by
  // from_row). Hidden states are always computed for the full sequence.
  Eigen::MatrixXd forward_logits(const std::vector<int>& ids,
                                 const std::vector<int>& seg_start,
                                 const PTokenSet* pt = nullptr,
                                 int from_row = 0) const;

  ForwardTape forward_tape(const std::vector<int>& ids,
                           const std::vector<int>& seg_start,
                           const PTokenSet* pt = nullptr) const;

  // dlogits is T x V. Fills param_grads (accumulating) when non-null and
  // writes the T x d gradient w.r.t. the input embedding rows to dembed
  // when non-null. wte gradients for special ids are not accumulated; pick
  // them out of dembed by position instead.
  void backward(const ForwardTape& tape, const Eigen::MatrixXd& dlogits,
                LmParams* param_grads, Eigen::MatrixXd* dembed) const;

  Distribution next_token_distribution(const std::vector<int>& ids,
                                       const PTokenSet* pt = nullptr) const;

  // Mean per-token log-probability of `continuation` after `prompt`.
  double sequence_score(const std::vector<int>& prompt,
                        const std::vector<int>& continuation,
                        const PTokenSet* pt = nullptr) const;

  // Greedy argmax decoding; ties resolve to the lowest token id. Stops
  // before emitting the end-of-sequence token.
  std::vector<int> greedy_decode(const std::vector<int>& prompt,
                                 int max_new_tokens,
                                 const PTokenSet* pt = nullptr) const;
  std::vector<std::vector<int>> greedy_decode_batch(
      const std::vector<std::vector<int>>& prompts, int max_new_tokens,
      const PTokenSet* pt = nullptr) const;

  // Registers m begin and m end tokens with the vocabulary and returns
  // their initialized embeddings. May be called once per model instance.
  PTokenSet add_ptokens(int m, PTokenInitSpec init, uint64_t seed);

  // FNV-1a over all base parameter bytes; the freeze contract is checked
  // by comparing this before and after prompt-token training.
  uint64_t base_checksum() const;
  // Binds checkpoints to an architecture + vocabulary.
  uint64_t config_hash() const;

  Vocabulary& mutable_vocab() { return vocab_; }

 private:
  Eigen::MatrixXd embed(const std::vector<int>& ids, const PTokenSet* pt) const;
  void check_ids(const std::vector<int>& ids, const PTokenSet* pt) const;

  LmConfig cfg_;
  Vocabulary vocab_;
  LmParams p_;
};

// Single-segment positions [0, n).
std::vector<int> trivial_segments(size_t n);

}  // namespace ptok
