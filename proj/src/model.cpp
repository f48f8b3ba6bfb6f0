#include "ptok/model.hpp"

#include <algorithm>
#include <cmath>

#include "ptok/errors.hpp"
#include "ptok/hash.hpp"
#include "ptok/rng.hpp"

namespace ptok {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kRopeBase = 10000.0;
constexpr double kInitSigma = 0.08;

Eigen::MatrixXd rmsnorm_rows(const Eigen::MatrixXd& x) {
  const double d = static_cast<double>(x.cols());
  Eigen::MatrixXd n(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    double r = std::sqrt(x.row(t).squaredNorm() / d + kRmsEps);
    n.row(t) = x.row(t) / r;
  }
  return n;
}

Eigen::MatrixXd rmsnorm_backward_rows(const Eigen::MatrixXd& g, const Eigen::MatrixXd& x) {
  const double d = static_cast<double>(x.cols());
  Eigen::MatrixXd dx(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    double r2 = x.row(t).squaredNorm() / d + kRmsEps;
    double r = std::sqrt(r2);
    double gx = g.row(t).dot(x.row(t));
    dx.row(t) = g.row(t) / r - x.row(t) * (gx / (d * r2 * r));
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

Eigen::MatrixXd gelu(const Eigen::MatrixXd& z) {
  Eigen::ArrayXXd a = z.array();
  Eigen::ArrayXXd u = kGeluC * (a + kGeluA * a.cube());
  return (0.5 * a * (1.0 + u.tanh())).matrix();
}

Eigen::MatrixXd gelu_grad(const Eigen::MatrixXd& z) {
  Eigen::ArrayXXd a = z.array();
  Eigen::ArrayXXd u = kGeluC * (a + kGeluA * a.cube());
  Eigen::ArrayXXd th = u.tanh();
  Eigen::ArrayXXd sech2 = 1.0 - th.square();
  return (0.5 * (1.0 + th) + 0.5 * a * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * a.square()))
      .matrix();
}

struct RopeTables {
  Eigen::MatrixXd cos_t, sin_t;  // T x head_dim/2
};

RopeTables rope_tables(const std::vector<int>& positions, int head_dim) {
  const int half = head_dim / 2;
  const Eigen::Index t_len = static_cast<Eigen::Index>(positions.size());
  RopeTables rt{Eigen::MatrixXd(t_len, half), Eigen::MatrixXd(t_len, half)};
  std::vector<double> theta(static_cast<size_t>(half));
  for (int i = 0; i < half; ++i)
    theta[static_cast<size_t>(i)] = std::pow(kRopeBase, -2.0 * i / head_dim);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    double pos = static_cast<double>(positions[static_cast<size_t>(t)]);
    for (int i = 0; i < half; ++i) {
      rt.cos_t(t, i) = std::cos(pos * theta[static_cast<size_t>(i)]);
      rt.sin_t(t, i) = std::sin(pos * theta[static_cast<size_t>(i)]);
    }
  }
  return rt;
}

std::vector<int> positions_from_segments(const std::vector<int>& seg_start) {
  std::vector<int> pos(seg_start.size());
  for (size_t t = 0; t < seg_start.size(); ++t)
    pos[t] = static_cast<int>(t) - seg_start[t];
  return pos;
}

// In-place rotation of each head's (2i, 2i+1) column pairs. sign=-1 applies
// the inverse rotation (used for the gradient).
void apply_rope(Eigen::MatrixXd& m, const RopeTables& rt, int n_heads, double sign) {
  const int d = static_cast<int>(m.cols());
  const int dh = d / n_heads;
  const int half = dh / 2;
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    for (int h = 0; h < n_heads; ++h) {
      const int base = h * dh;
      for (int i = 0; i < half; ++i) {
        double c = rt.cos_t(t, i);
        double s = sign * rt.sin_t(t, i);
        double a = m(t, base + 2 * i);
        double b = m(t, base + 2 * i + 1);
        m(t, base + 2 * i) = a * c - b * s;
        m(t, base + 2 * i + 1) = a * s + b * c;
      }
    }
  }
}

// [start, end) extents of the segments described by seg_start.
std::vector<std::pair<int, int>> segment_ranges(const std::vector<int>& seg_start) {
  std::vector<std::pair<int, int>> out;
  const int n = static_cast<int>(seg_start.size());
  int t = 0;
  while (t < n) {
    int e = t + 1;
    while (e < n && seg_start[static_cast<size_t>(e)] == t) ++e;
    out.emplace_back(t, e);
    t = e;
  }
  return out;
}

// Softmax over columns [0, r] of each row r of a within-segment score block;
// entries above the diagonal are zeroed.
void causal_softmax_block_inplace(Eigen::Ref<Eigen::MatrixXd> s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const Eigen::Index len = r + 1;
    double mx = row.head(len).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < len; ++j) {
      double e = std::exp(row(j) - mx);
      row(j) = e;
      sum += e;
    }
    if (len < s.cols()) row.tail(s.cols() - len).setZero();
    row.head(len) /= sum;
  }
}

void fill_gaussian(Eigen::MatrixXd& m, Rng& rng, double sigma) {
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = sigma * rng.gaussian();
}

}  // namespace

std::vector<int> trivial_segments(size_t n) { return std::vector<int>(n, 0); }

void LmConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if ((d_model / n_heads) % 2 != 0)
    throw ConfigError("head dimension must be even for rotary encoding");
  if (max_context < 1024) throw ConfigError("max_context must be at least 1024");
}

uint64_t LmConfig::hash() const {
  uint64_t h = kFnvOffset;
  auto mix = [&h](uint64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  mix(static_cast<uint64_t>(vocab_size));
  mix(static_cast<uint64_t>(d_model));
  mix(static_cast<uint64_t>(n_layers));
  mix(static_cast<uint64_t>(n_heads));
  mix(static_cast<uint64_t>(max_context));
  mix(seed);
  return h;
}

void LmParams::set_zero() {
  for_each([](Eigen::MatrixXd& m) { m.setZero(); });
}

size_t LmParams::scalar_count() const {
  size_t n = 0;
  for_each([&n](const Eigen::MatrixXd& m) { n += static_cast<size_t>(m.size()); });
  return n;
}

LmModel::LmModel(LmConfig cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (cfg_.vocab_size != vocab_.base_size())
    throw ConfigError("config vocab_size does not match the vocabulary");
  const int d = cfg_.d_model;
  const int v = cfg_.vocab_size;
  Rng rng(mix_seed(cfg_.seed, 0x6d6f64656cull));
  p_.wte.resize(v, d);
  p_.wout.resize(v, d);
  p_.layers.resize(static_cast<size_t>(cfg_.n_layers));
  for (LayerParams& l : p_.layers) {
    l.wq.resize(d, d);
    l.wk.resize(d, d);
    l.wv.resize(d, d);
    l.wo.resize(d, d);
    l.wfc1.resize(4 * d, d);
    l.wfc2.resize(d, 4 * d);
  }
  const double resid_scale = 1.0 / std::sqrt(2.0 * cfg_.n_layers);
  fill_gaussian(p_.wte, rng, kInitSigma);
  for (LayerParams& l : p_.layers) {
    fill_gaussian(l.wq, rng, kInitSigma);
    fill_gaussian(l.wk, rng, kInitSigma);
    fill_gaussian(l.wv, rng, kInitSigma);
    fill_gaussian(l.wo, rng, kInitSigma * resid_scale);
    fill_gaussian(l.wfc1, rng, kInitSigma);
    fill_gaussian(l.wfc2, rng, kInitSigma * resid_scale);
  }
  fill_gaussian(p_.wout, rng, kInitSigma);
}

void LmModel::check_ids(const std::vector<int>& ids, const PTokenSet* pt) const {
  if (ids.empty()) throw ConfigError("token sequence must be non-empty");
  for (int id : ids) {
    if (id < 0 || id >= vocab_.total_size())
      throw ComputeError("token id out of range: " + std::to_string(id));
    if (id >= cfg_.vocab_size) {
      if (pt == nullptr || pt->row_of(id) < 0)
        throw ComputeError("special token id " + std::to_string(id) +
                           " used without its prompt-token set");
    }
  }
}

Eigen::MatrixXd LmModel::embed(const std::vector<int>& ids, const PTokenSet* pt) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ids.size()), cfg_.d_model);
  for (size_t t = 0; t < ids.size(); ++t) {
    int id = ids[t];
    if (id < cfg_.vocab_size) {
      x.row(static_cast<Eigen::Index>(t)) = p_.wte.row(id);
    } else {
      x.row(static_cast<Eigen::Index>(t)) = pt->embeddings.row(pt->row_of(id));
    }
  }
  return x;
}

namespace {

void validate_segments(const std::vector<int>& ids, const std::vector<int>& seg_start,
                       int max_context) {
  if (seg_start.size() != ids.size())
    throw ConfigError("segment vector length does not match token count");
  for (size_t t = 0; t < seg_start.size(); ++t) {
    int s = seg_start[t];
    if (s < 0 || s > static_cast<int>(t)) throw ConfigError("invalid segment start");
    if (t > 0 && s != seg_start[t - 1] && s != static_cast<int>(t))
      throw ConfigError("segments must be contiguous");
    if (static_cast<int>(t) - s >= max_context)
      throw ComputeError("segment exceeds max_context");
  }
}

}  // namespace

Eigen::MatrixXd LmModel::forward_logits(const std::vector<int>& ids,
                                        const std::vector<int>& seg_start,
                                        const PTokenSet* pt, int from_row) const {
  check_ids(ids, pt);
  validate_segments(ids, seg_start, cfg_.max_context);
  const Eigen::Index t_len = static_cast<Eigen::Index>(ids.size());
  if (from_row < 0 || from_row >= t_len) throw ConfigError("from_row out of range");
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int dh = cfg_.head_dim();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd x = embed(ids, pt);
  RopeTables rt = rope_tables(positions_from_segments(seg_start), dh);
  const std::vector<std::pair<int, int>> segs = segment_ranges(seg_start);
  Eigen::MatrixXd n1, q, k, v, ctx, n2, z;
  for (const LayerParams& l : p_.layers) {
    n1 = rmsnorm_rows(x);
    q.noalias() = n1 * l.wq.transpose();
    k.noalias() = n1 * l.wk.transpose();
    v.noalias() = n1 * l.wv.transpose();
    apply_rope(q, rt, heads, 1.0);
    apply_rope(k, rt, heads, 1.0);
    ctx.resize(t_len, d);
    for (const auto& [s0, s1] : segs) {
      const Eigen::Index sl = s1 - s0;
      for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd s =
            alpha * (q.block(s0, h * dh, sl, dh) * k.block(s0, h * dh, sl, dh).transpose());
        causal_softmax_block_inplace(s);
        ctx.block(s0, h * dh, sl, dh).noalias() = s * v.block(s0, h * dh, sl, dh);
      }
    }
    x.noalias() += ctx * l.wo.transpose();
    n2 = rmsnorm_rows(x);
    z.noalias() = n2 * l.wfc1.transpose();
    x.noalias() += gelu(z) * l.wfc2.transpose();
  }
  Eigen::MatrixXd nf = rmsnorm_rows(x.bottomRows(t_len - from_row));
  return nf * p_.wout.transpose();
}

ForwardTape LmModel::forward_tape(const std::vector<int>& ids,
                                  const std::vector<int>& seg_start,
                                  const PTokenSet* pt) const {
  check_ids(ids, pt);
  validate_segments(ids, seg_start, cfg_.max_context);
  const Eigen::Index t_len = static_cast<Eigen::Index>(ids.size());
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int dh = cfg_.head_dim();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTape tape;
  tape.ids = ids;
  tape.seg_start = seg_start;
  tape.pt = pt;
  tape.x0 = embed(ids, pt);
  tape.layers.resize(p_.layers.size());
  RopeTables rt = rope_tables(positions_from_segments(seg_start), dh);
  const std::vector<std::pair<int, int>> segs = segment_ranges(seg_start);

  Eigen::MatrixXd x = tape.x0;
  for (size_t li = 0; li < p_.layers.size(); ++li) {
    const LayerParams& l = p_.layers[li];
    ForwardTape::LayerTape& lt = tape.layers[li];
    lt.x_in = x;
    lt.n1 = rmsnorm_rows(x);
    lt.q.noalias() = lt.n1 * l.wq.transpose();
    lt.k.noalias() = lt.n1 * l.wk.transpose();
    lt.v.noalias() = lt.n1 * l.wv.transpose();
    apply_rope(lt.q, rt, heads, 1.0);
    apply_rope(lt.k, rt, heads, 1.0);
    lt.att.clear();
    lt.att.reserve(segs.size());
    lt.ctx.resize(t_len, d);
    for (const auto& [s0, s1] : segs) {
      const Eigen::Index sl = s1 - s0;
      Eigen::MatrixXd a(static_cast<Eigen::Index>(heads) * sl, sl);
      for (int h = 0; h < heads; ++h) {
        auto s = a.middleRows(static_cast<Eigen::Index>(h) * sl, sl);
        s.noalias() =
            alpha * (lt.q.block(s0, h * dh, sl, dh) * lt.k.block(s0, h * dh, sl, dh).transpose());
        causal_softmax_block_inplace(s);
        lt.ctx.block(s0, h * dh, sl, dh).noalias() = s * lt.v.block(s0, h * dh, sl, dh);
      }
      lt.att.push_back(std::move(a));
    }
    x.noalias() += lt.ctx * l.wo.transpose();
    lt.x_mid = x;
    lt.n2 = rmsnorm_rows(x);
    lt.z.noalias() = lt.n2 * l.wfc1.transpose();
    lt.g = gelu(lt.z);
    x.noalias() += lt.g * l.wfc2.transpose();
  }
  tape.x_final = x;
  tape.n_final = rmsnorm_rows(x);
  tape.logits.noalias() = tape.n_final * p_.wout.transpose();
  return tape;
}

void LmModel::backward(const ForwardTape& tape, const Eigen::MatrixXd& dlogits,
                       LmParams* param_grads, Eigen::MatrixXd* dembed) const {
  const Eigen::Index t_len = static_cast<Eigen::Index>(tape.ids.size());
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int dh = cfg_.head_dim();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dlogits.rows() != t_len || dlogits.cols() != cfg_.vocab_size)
    throw ConfigError("dlogits shape mismatch");
  RopeTables rt = rope_tables(positions_from_segments(tape.seg_start), dh);
  const std::vector<std::pair<int, int>> segs = segment_ranges(tape.seg_start);

  if (param_grads) param_grads->wout.noalias() += dlogits.transpose() * tape.n_final;
  Eigen::MatrixXd dnf = dlogits * p_.wout;
  Eigen::MatrixXd dx = rmsnorm_backward_rows(dnf, tape.x_final);

  for (size_t li = p_.layers.size(); li-- > 0;) {
    const LayerParams& l = p_.layers[li];
    const ForwardTape::LayerTape& lt = tape.layers[li];
    LayerParams* lg = param_grads ? &param_grads->layers[li] : nullptr;

    // MLP block.
    Eigen::MatrixXd dg = dx * l.wfc2;
    if (lg) lg->wfc2.noalias() += dx.transpose() * lt.g;
    Eigen::MatrixXd dz = dg.cwiseProduct(gelu_grad(lt.z));
    Eigen::MatrixXd dn2 = dz * l.wfc1;
    if (lg) lg->wfc1.noalias() += dz.transpose() * lt.n2;
    Eigen::MatrixXd dx_mid = dx + rmsnorm_backward_rows(dn2, lt.x_mid);

    // Attention block.
    Eigen::MatrixXd dctx = dx_mid * l.wo;
    if (lg) lg->wo.noalias() += dx_mid.transpose() * lt.ctx;
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(t_len, d);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(t_len, d);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(t_len, d);
    for (size_t si = 0; si < segs.size(); ++si) {
      const auto [s0, s1] = segs[si];
      const Eigen::Index sl = s1 - s0;
      const Eigen::MatrixXd& ablk = lt.att[si];
      for (int h = 0; h < heads; ++h) {
        auto a = ablk.middleRows(static_cast<Eigen::Index>(h) * sl, sl);
        auto dch = dctx.block(s0, h * dh, sl, dh);
        Eigen::MatrixXd da = dch * lt.v.block(s0, h * dh, sl, dh).transpose();
        dv.block(s0, h * dh, sl, dh).noalias() = a.transpose() * dch;
        Eigen::MatrixXd ds(sl, sl);
        for (Eigen::Index t = 0; t < sl; ++t) {
          double dot = a.row(t).dot(da.row(t));
          ds.row(t) = a.row(t).cwiseProduct((da.row(t).array() - dot).matrix());
        }
        ds *= alpha;
        dq.block(s0, h * dh, sl, dh).noalias() = ds * lt.k.block(s0, h * dh, sl, dh);
        dk.block(s0, h * dh, sl, dh).noalias() = ds.transpose() * lt.q.block(s0, h * dh, sl, dh);
      }
    }
    apply_rope(dq, rt, heads, -1.0);
    apply_rope(dk, rt, heads, -1.0);
    Eigen::MatrixXd dn1 = dq * l.wq + dk * l.wk + dv * l.wv;
    if (lg) {
      lg->wq.noalias() += dq.transpose() * lt.n1;
      lg->wk.noalias() += dk.transpose() * lt.n1;
      lg->wv.noalias() += dv.transpose() * lt.n1;
    }
    dx = dx_mid + rmsnorm_backward_rows(dn1, lt.x_in);
  }

  if (dembed) *dembed = dx;
  if (param_grads) {
    for (size_t t = 0; t < tape.ids.size(); ++t) {
      int id = tape.ids[t];
      if (id < cfg_.vocab_size)
        param_grads->wte.row(id) += dx.row(static_cast<Eigen::Index>(t));
    }
  }
}

Distribution LmModel::next_token_distribution(const std::vector<int>& ids,
                                              const PTokenSet* pt) const {
  Eigen::MatrixXd logits =
      forward_logits(ids, trivial_segments(ids.size()), pt, static_cast<int>(ids.size()) - 1);
  Eigen::VectorXd z = logits.row(0);
  double mx = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - mx).exp();
  Distribution out;
  out.probs = e / e.sum();
  return out;
}

double LmModel::sequence_score(const std::vector<int>& prompt,
                               const std::vector<int>& continuation,
                               const PTokenSet* pt) const {
  if (prompt.empty()) throw ConfigError("sequence_score: empty prompt");
  if (continuation.empty()) throw ConfigError("sequence_score: empty continuation");
  std::vector<int> ids = prompt;
  ids.insert(ids.end(), continuation.begin(), continuation.end());
  const int p_len = static_cast<int>(prompt.size());
  const int c_len = static_cast<int>(continuation.size());
  Eigen::MatrixXd logits = forward_logits(ids, trivial_segments(ids.size()), pt, p_len - 1);
  double total = 0.0;
  for (int i = 0; i < c_len; ++i) {
    Eigen::VectorXd z = logits.row(i);
    double mx = z.maxCoeff();
    double lse = mx + std::log((z.array() - mx).exp().sum());
    total += z(continuation[static_cast<size_t>(i)]) - lse;
  }
  return total / c_len;
}

PTokenSet LmModel::add_ptokens(int m, PTokenInitSpec init, uint64_t seed) {
  if (m < 1 || m > 64) throw ConfigError("prompt token count m must be in [1, 64]");
  if (vocab_.n_special() != 0)
    throw ConfigError("model already has registered prompt tokens");
  PTokenSet set;
  set.m = m;
  for (int i = 0; i < m; ++i)
    set.begin_ids.push_back(vocab_.add_special("<edit:b" + std::to_string(i) + ">"));
  for (int i = 0; i < m; ++i)
    set.end_ids.push_back(vocab_.add_special("<edit:e" + std::to_string(i) + ">"));
  set.embeddings.resize(2 * m, cfg_.d_model);
  Rng rng(mix_seed(seed, 0x70746f6bull));
  Eigen::RowVectorXd mean = p_.wte.colwise().mean();
  for (int r = 0; r < 2 * m; ++r) {
    for (int c = 0; c < cfg_.d_model; ++c) {
      double noise = init.sigma * rng.gaussian();
      set.embeddings(r, c) = (init.kind == PTokenInitKind::MeanNoise ? mean(c) : 0.0) + noise;
    }
  }
  return set;
}

namespace {

// Per-sequence decoding state: cached post-rotation keys and values.
struct SeqState {
  std::vector<Eigen::MatrixXd> k, v;  // per layer, capacity x head-count*dh
  int len = 0;
  int last_token = -1;
  std::vector<int> out;
  bool done = false;
};

int argmax_lowest(const Eigen::VectorXd& z) {
  int best = 0;
  for (int j = 1; j < z.size(); ++j)
    if (z(j) > z(best)) best = j;
  return best;
}

}  // namespace

std::vector<std::vector<int>> LmModel::greedy_decode_batch(
    const std::vector<std::vector<int>>& prompts, int max_new_tokens,
    const PTokenSet* pt) const {
  if (prompts.empty()) throw ConfigError("greedy_decode: no prompts");
  if (max_new_tokens < 1) throw ConfigError("greedy_decode: max_new_tokens must be positive");
  const int n_seq = static_cast<int>(prompts.size());
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int dh = cfg_.head_dim();
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index v_size = cfg_.vocab_size;

  // Prefill: one packed forward over all prompts, capturing keys/values.
  std::vector<int> ids, seg;
  std::vector<int> last_row(static_cast<size_t>(n_seq));
  for (int b = 0; b < n_seq; ++b) {
    const std::vector<int>& p = prompts[static_cast<size_t>(b)];
    if (p.empty()) throw ConfigError("greedy_decode: empty prompt");
    if (static_cast<int>(p.size()) + max_new_tokens > cfg_.max_context)
      throw ComputeError("decode would exceed max_context");
    int start = static_cast<int>(ids.size());
    ids.insert(ids.end(), p.begin(), p.end());
    seg.insert(seg.end(), p.size(), start);
    last_row[static_cast<size_t>(b)] = static_cast<int>(ids.size()) - 1;
  }
  check_ids(ids, pt);
  validate_segments(ids, seg, cfg_.max_context);
  const Eigen::Index t_len = static_cast<Eigen::Index>(ids.size());

  std::vector<SeqState> states(static_cast<size_t>(n_seq));
  for (int b = 0; b < n_seq; ++b) {
    SeqState& st = states[static_cast<size_t>(b)];
    int cap = static_cast<int>(prompts[static_cast<size_t>(b)].size()) + max_new_tokens;
    st.k.assign(static_cast<size_t>(cfg_.n_layers), Eigen::MatrixXd(cap, d));
    st.v.assign(static_cast<size_t>(cfg_.n_layers), Eigen::MatrixXd(cap, d));
    st.len = static_cast<int>(prompts[static_cast<size_t>(b)].size());
  }

  RopeTables rt = rope_tables(positions_from_segments(seg), dh);
  const std::vector<std::pair<int, int>> segs = segment_ranges(seg);
  Eigen::MatrixXd x = embed(ids, pt);
  Eigen::MatrixXd n1, q, k, v, ctx, n2, z;
  for (size_t li = 0; li < p_.layers.size(); ++li) {
    const LayerParams& l = p_.layers[li];
    n1 = rmsnorm_rows(x);
    q.noalias() = n1 * l.wq.transpose();
    k.noalias() = n1 * l.wk.transpose();
    v.noalias() = n1 * l.wv.transpose();
    apply_rope(q, rt, heads, 1.0);
    apply_rope(k, rt, heads, 1.0);
    for (int b = 0; b < n_seq; ++b) {
      SeqState& st = states[static_cast<size_t>(b)];
      int start = last_row[static_cast<size_t>(b)] - st.len + 1;
      st.k[li].topRows(st.len) = k.middleRows(start, st.len);
      st.v[li].topRows(st.len) = v.middleRows(start, st.len);
    }
    ctx.resize(t_len, d);
    for (const auto& [s0, s1] : segs) {
      const Eigen::Index sl = s1 - s0;
      for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd s =
            alpha * (q.block(s0, h * dh, sl, dh) * k.block(s0, h * dh, sl, dh).transpose());
        causal_softmax_block_inplace(s);
        ctx.block(s0, h * dh, sl, dh).noalias() = s * v.block(s0, h * dh, sl, dh);
      }
    }
    x.noalias() += ctx * l.wo.transpose();
    n2 = rmsnorm_rows(x);
    z.noalias() = n2 * l.wfc1.transpose();
    x.noalias() += gelu(z) * l.wfc2.transpose();
  }
  Eigen::MatrixXd ends(n_seq, d);
  for (int b = 0; b < n_seq; ++b) ends.row(b) = x.row(last_row[static_cast<size_t>(b)]);
  Eigen::MatrixXd logits = rmsnorm_rows(ends) * p_.wout.transpose();
  for (int b = 0; b < n_seq; ++b) {
    int tok = argmax_lowest(logits.row(b).head(v_size));
    SeqState& st = states[static_cast<size_t>(b)];
    if (tok == vocab_.eos_id()) {
      st.done = true;
    } else {
      st.out.push_back(tok);
      st.last_token = tok;
    }
  }

  // Incremental steps, one new token per live sequence.
  for (int step = 1; step < max_new_tokens; ++step) {
    std::vector<int> live;
    for (int b = 0; b < n_seq; ++b)
      if (!states[static_cast<size_t>(b)].done) live.push_back(b);
    if (live.empty()) break;
    const int n_live = static_cast<int>(live.size());
    std::vector<int> step_ids(static_cast<size_t>(n_live));
    std::vector<int> step_pos(static_cast<size_t>(n_live));
    for (int i = 0; i < n_live; ++i) {
      const SeqState& st = states[static_cast<size_t>(live[static_cast<size_t>(i)])];
      step_ids[static_cast<size_t>(i)] = st.last_token;
      step_pos[static_cast<size_t>(i)] = st.len;
    }
    RopeTables srt = rope_tables(step_pos, dh);
    Eigen::MatrixXd sx = embed(step_ids, pt);
    Eigen::MatrixXd sn1, sq, sk, sv, sctx, sn2, sz;
    for (size_t li = 0; li < p_.layers.size(); ++li) {
      const LayerParams& l = p_.layers[li];
      sn1 = rmsnorm_rows(sx);
      sq.noalias() = sn1 * l.wq.transpose();
      sk.noalias() = sn1 * l.wk.transpose();
      sv.noalias() = sn1 * l.wv.transpose();
      apply_rope(sq, srt, heads, 1.0);
      apply_rope(sk, srt, heads, 1.0);
      sctx.resize(n_live, d);
      for (int i = 0; i < n_live; ++i) {
        SeqState& st = states[static_cast<size_t>(live[static_cast<size_t>(i)])];
        st.k[li].row(st.len) = sk.row(i);
        st.v[li].row(st.len) = sv.row(i);
        for (int h = 0; h < heads; ++h) {
          auto kh = st.k[li].block(0, h * dh, st.len + 1, dh);
          auto vh = st.v[li].block(0, h * dh, st.len + 1, dh);
          Eigen::VectorXd sc = alpha * (kh * sq.row(i).segment(h * dh, dh).transpose());
          double mx = sc.maxCoeff();
          Eigen::VectorXd e = (sc.array() - mx).exp();
          e /= e.sum();
          sctx.row(i).segment(h * dh, dh).noalias() = (e.transpose() * vh);
        }
      }
      sx.noalias() += sctx * l.wo.transpose();
      sn2 = rmsnorm_rows(sx);
      sz.noalias() = sn2 * l.wfc1.transpose();
      sx.noalias() += gelu(sz) * l.wfc2.transpose();
    }
    Eigen::MatrixXd slogits = rmsnorm_rows(sx) * p_.wout.transpose();
    for (int i = 0; i < n_live; ++i) {
      SeqState& st = states[static_cast<size_t>(live[static_cast<size_t>(i)])];
      st.len += 1;
      int tok = argmax_lowest(slogits.row(i).head(v_size));
      if (tok == vocab_.eos_id()) {
        st.done = true;
      } else {
        st.out.push_back(tok);
        st.last_token = tok;
      }
    }
  }

  std::vector<std::vector<int>> out;
  out.reserve(static_cast<size_t>(n_seq));
  for (SeqState& st : states) out.push_back(std::move(st.out));
  return out;
}

std::vector<int> LmModel::greedy_decode(const std::vector<int>& prompt, int max_new_tokens,
                                        const PTokenSet* pt) const {
  return greedy_decode_batch({prompt}, max_new_tokens, pt)[0];
}

uint64_t LmModel::base_checksum() const {
  uint64_t h = kFnvOffset;
  p_.for_each([&h](const Eigen::MatrixXd& m) {
    uint64_t rows = static_cast<uint64_t>(m.rows());
    uint64_t cols = static_cast<uint64_t>(m.cols());
    h = fnv1a64(&rows, sizeof(rows), h);
    h = fnv1a64(&cols, sizeof(cols), h);
    h = fnv1a64(m.data(), sizeof(double) * static_cast<size_t>(m.size()), h);
  });
  return h;
}

uint64_t LmModel::config_hash() const {
  uint64_t h = cfg_.hash();
  uint64_t vh = vocab_.content_hash();
  return fnv1a64(&vh, sizeof(vh), h);
}

}  // namespace ptok
