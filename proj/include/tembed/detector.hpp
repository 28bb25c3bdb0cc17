#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tembed/errors.hpp"
#include "tembed/rng.hpp"

namespace tembed::detector {

enum class ModelKind { rnn_hg, rnn_mhca };

inline std::string to_string(ModelKind k) {
  return k == ModelKind::rnn_hg ? "rnn-hg" : "rnn-mhca";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "rnn-hg" || s == "rnn_hg") return ModelKind::rnn_hg;
  if (s == "rnn-mhca" || s == "rnn_mhca") return ModelKind::rnn_mhca;
  throw InvalidArgError("unknown model kind: " + s);
}

struct TokenInput {
  std::string token;
  std::vector<float> literal_vec;     // g_t
  std::vector<float> contextual_vec;  // e_t; empty = absent
};

struct LabeledSequence {
  std::vector<TokenInput> tokens;
  std::vector<int> labels;       // 1 = metaphorical
  std::vector<int> weight_mask;  // 1 = position counted in loss/metrics
};

// row-major double matrix; all detector math runs in 64-bit so analytic
// gradients can be checked against central finite differences
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a[r * cols + c];
  }
  double* row_ptr(std::size_t r) { return a.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return a.data() + r * cols; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

using Vec = std::vector<double>;

// One LSTM direction. Gate layout inside the stacked 4H rows, in order:
//   [input gate i | forget gate f | candidate g | output gate o]
// with i,f,o = sigmoid(...), g = tanh(...),
//   c_t = f * c_{t-1} + i * g,   h_t = o * tanh(c_t).
struct LstmCell {
  Mat w;  // 4H x D
  Mat u;  // 4H x H
  Vec b;  // 4H
};

struct DetectorConfig {
  ModelKind kind = ModelKind::rnn_hg;
  int d_g = 0;
  int d_e = 0;  // 0 = no precomputed contextual vectors
  int hidden = 300;
  int n_heads = 4;
  double dropout_in = 0.5;
  double dropout_out = 0.1;
  double threshold = 0.5;
  double lr = 1e-3;
  int epochs = 50;
  int batch_size = 32;    // 0 = full batch
  double pos_weight = 0;  // <= 0: #literal / #metaphor of the training fold
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
};

struct DetectorParams {
  ModelKind kind = ModelKind::rnn_hg;
  int d_g = 0, d_e = 0, hidden = 0, n_heads = 0;
  double dropout_in = 0.0, dropout_out = 0.0, threshold = 0.5;

  LstmCell fwd, bwd;
  Vec classifier_w;  // 2H + d_g (rnn_hg) or 4H (rnn_mhca)
  double classifier_b = 0.0;
  std::vector<Mat> head_q, head_k, head_v;  // each d_k x 2H (rnn_mhca)

  int input_dim() const { return d_g + d_e; }
  int head_dim() const { return n_heads ? 2 * hidden / n_heads : 0; }
};

// Visits every parameter tensor in a fixed order; the optimizer, the
// checkpoint format and the finite-difference oracle all rely on it.
template <typename F>
void visit_params(DetectorParams& p, F&& f) {
  f(p.fwd.w.a);
  f(p.fwd.u.a);
  f(p.fwd.b);
  f(p.bwd.w.a);
  f(p.bwd.u.a);
  f(p.bwd.b);
  f(p.classifier_w);
  std::vector<double> bias{p.classifier_b};
  f(bias);
  p.classifier_b = bias[0];
  for (int h = 0; h < p.n_heads && p.kind == ModelKind::rnn_mhca; ++h) {
    f(p.head_q[h].a);
    f(p.head_k[h].a);
    f(p.head_v[h].a);
  }
}

// const overload; must visit in exactly the same order
template <typename F>
void visit_params(const DetectorParams& p, F&& f) {
  f(p.fwd.w.a);
  f(p.fwd.u.a);
  f(p.fwd.b);
  f(p.bwd.w.a);
  f(p.bwd.u.a);
  f(p.bwd.b);
  f(p.classifier_w);
  const std::vector<double> bias{p.classifier_b};
  f(bias);
  for (int h = 0; h < p.n_heads && p.kind == ModelKind::rnn_mhca; ++h) {
    f(p.head_q[h].a);
    f(p.head_k[h].a);
    f(p.head_v[h].a);
  }
}

inline std::size_t param_count(const DetectorParams& p) {
  std::size_t n = 0;
  visit_params(p, [&](const std::vector<double>& v) { n += v.size(); });
  return n;
}

inline std::vector<double> flatten(const DetectorParams& p) {
  std::vector<double> out;
  out.reserve(param_count(p));
  visit_params(p, [&](const std::vector<double>& v) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

inline void unflatten(DetectorParams& p, const std::vector<double>& flat) {
  std::size_t off = 0;
  visit_params(p, [&](std::vector<double>& v) {
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
  });
  if (off != flat.size())
    throw ShapeError("unflatten: parameter count mismatch");
}

inline int classifier_len(const DetectorConfig& cfg) {
  return cfg.kind == ModelKind::rnn_hg ? 2 * cfg.hidden + cfg.d_g
                                       : 4 * cfg.hidden;
}

inline DetectorParams init_params(const DetectorConfig& cfg, Rng& rng) {
  if (cfg.d_g <= 0) throw InvalidArgError("detector: d_g must be positive");
  if (cfg.hidden <= 0) throw InvalidArgError("detector: hidden must be positive");
  if (cfg.kind == ModelKind::rnn_mhca) {
    if (cfg.n_heads <= 0 || (2 * cfg.hidden) % cfg.n_heads != 0)
      throw InvalidArgError("detector: n_heads must divide 2*hidden");
  }
  if (cfg.dropout_in < 0 || cfg.dropout_in >= 1 || cfg.dropout_out < 0 ||
      cfg.dropout_out >= 1)
    throw InvalidArgError("detector: dropout must lie in [0,1)");

  DetectorParams p;
  p.kind = cfg.kind;
  p.d_g = cfg.d_g;
  p.d_e = cfg.d_e;
  p.hidden = cfg.hidden;
  p.n_heads = cfg.kind == ModelKind::rnn_mhca ? cfg.n_heads : 0;
  p.dropout_in = cfg.dropout_in;
  p.dropout_out = cfg.dropout_out;
  p.threshold = cfg.threshold;

  const int h = cfg.hidden, d = cfg.d_g + cfg.d_e;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  auto fill = [&](std::vector<double>& v, double bnd) {
    for (auto& x : v) x = rng.uniform(-bnd, bnd);
  };
  for (LstmCell* cell : {&p.fwd, &p.bwd}) {
    cell->w = Mat(4 * h, d);
    cell->u = Mat(4 * h, h);
    cell->b.assign(4 * h, 0.0);
    fill(cell->w.a, bound);
    fill(cell->u.a, bound);
    fill(cell->b, bound);
    for (int i = h; i < 2 * h; ++i) cell->b[i] += 1.0;  // forget-gate bias
  }
  p.classifier_w.assign(classifier_len(cfg), 0.0);
  fill(p.classifier_w, 1.0 / std::sqrt(static_cast<double>(classifier_len(cfg))));
  p.classifier_b = 0.0;
  if (p.kind == ModelKind::rnn_mhca) {
    const int dk = p.head_dim();
    const double hb = 1.0 / std::sqrt(2.0 * h);
    for (int i = 0; i < p.n_heads; ++i) {
      p.head_q.emplace_back(dk, 2 * h);
      p.head_k.emplace_back(dk, 2 * h);
      p.head_v.emplace_back(dk, 2 * h);
      fill(p.head_q.back().a, hb);
      fill(p.head_k.back().a, hb);
      fill(p.head_v.back().a, hb);
    }
  }
  return p;
}

inline DetectorParams zeros_like(const DetectorParams& p) {
  DetectorParams g = p;
  visit_params(g, [](std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return g;
}

struct ForwardTrace {
  std::size_t length = 0;
  Mat x;                      // T x D, inputs after dropout
  Mat in_mask;                // dropout multipliers (empty in eval mode)
  Mat h_mask;                 // T x 2H multipliers (empty in eval mode)
  Mat dir_i[2], dir_f[2], dir_g[2], dir_o[2], dir_c[2], dir_tc[2], dir_h[2];
  Mat hidden_states;          // T x 2H, after dropout; feeds classifier/attention
  Mat attn_ctx;               // T x 2H (rnn_mhca)
  std::vector<Mat> q, k, v;   // per head, T x d_k
  std::vector<Mat> alpha;     // per head, T x T; row t sums to 1 over j != t
  std::vector<double> logits;
  std::vector<double> probabilities;  // clamped to the open interval (0,1)
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void check_params(const DetectorParams& p) {
  const std::size_t h = static_cast<std::size_t>(p.hidden);
  const std::size_t d = static_cast<std::size_t>(p.input_dim());
  if (p.hidden <= 0 || p.d_g <= 0)
    throw ShapeError("detector params: hidden and d_g must be positive");
  for (const LstmCell* cell : {&p.fwd, &p.bwd}) {
    if (cell->w.rows != 4 * h || cell->w.cols != d || cell->u.rows != 4 * h ||
        cell->u.cols != h || cell->b.size() != 4 * h)
      throw ShapeError("detector params: BiLSTM tensor shapes inconsistent");
  }
  const std::size_t want_w = p.kind == ModelKind::rnn_hg
                                 ? 2 * h + static_cast<std::size_t>(p.d_g)
                                 : 4 * h;
  if (p.classifier_w.size() != want_w)
    throw ShapeError("detector params: classifier_w has length " +
                     std::to_string(p.classifier_w.size()) + ", expected " +
                     std::to_string(want_w));
  if (p.kind == ModelKind::rnn_mhca) {
    if (p.n_heads <= 0 || (2 * p.hidden) % p.n_heads != 0)
      throw ShapeError("detector params: n_heads must divide 2*hidden");
    const std::size_t heads = static_cast<std::size_t>(p.n_heads);
    const std::size_t dk = static_cast<std::size_t>(p.head_dim());
    if (p.head_q.size() != heads || p.head_k.size() != heads ||
        p.head_v.size() != heads)
      throw ShapeError("detector params: wrong number of head matrices");
    for (std::size_t i = 0; i < heads; ++i)
      if (p.head_q[i].rows != dk || p.head_q[i].cols != 2 * h ||
          p.head_k[i].rows != dk || p.head_k[i].cols != 2 * h ||
          p.head_v[i].rows != dk || p.head_v[i].cols != 2 * h)
        throw ShapeError("detector params: head matrix shapes inconsistent");
  }
}

inline void check_sequence(const LabeledSequence& seq,
                           const DetectorParams& params) {
  const std::size_t t = seq.tokens.size();
  if (t == 0) throw ShapeError("empty sequence");
  if (seq.labels.size() != t || seq.weight_mask.size() != t)
    throw ShapeError("tokens/labels/weight_mask lengths differ");
  bool any_mask = false;
  for (int m : seq.weight_mask) any_mask |= m != 0;
  if (!any_mask) throw ShapeError("sequence has no masked-in position");
  bool want_ctx = params.d_e > 0;
  for (const auto& tok : seq.tokens) {
    if (static_cast<int>(tok.literal_vec.size()) != params.d_g)
      throw ShapeError("literal vector of '" + tok.token + "' has length " +
                       std::to_string(tok.literal_vec.size()) + ", expected " +
                       std::to_string(params.d_g));
    if (want_ctx && static_cast<int>(tok.contextual_vec.size()) != params.d_e)
      throw ShapeError("contextual vector of '" + tok.token +
                       "' has length " +
                       std::to_string(tok.contextual_vec.size()) +
                       ", expected " + std::to_string(params.d_e));
    if (!want_ctx && !tok.contextual_vec.empty())
      throw ShapeError("unexpected contextual vector (d_e = 0)");
  }
}

// one LSTM direction over the cached inputs; dir 0 runs t ascending, dir 1
// descending
inline void run_direction(const LstmCell& cell, const Mat& x, int dir,
                          ForwardTrace& tr) {
  const std::size_t t_len = x.rows;
  const std::size_t h = cell.u.cols;
  const std::size_t d = x.cols;
  Mat &mi = tr.dir_i[dir], &mf = tr.dir_f[dir], &mg = tr.dir_g[dir],
      &mo = tr.dir_o[dir], &mc = tr.dir_c[dir], &mtc = tr.dir_tc[dir],
      &mh = tr.dir_h[dir];
  mi = Mat(t_len, h);
  mf = Mat(t_len, h);
  mg = Mat(t_len, h);
  mo = Mat(t_len, h);
  mc = Mat(t_len, h);
  mtc = Mat(t_len, h);
  mh = Mat(t_len, h);

  Vec h_prev(h, 0.0), c_prev(h, 0.0), z(4 * h);
  for (std::size_t step = 0; step < t_len; ++step) {
    const std::size_t t = dir == 0 ? step : t_len - 1 - step;
    const double* xt = x.row_ptr(t);
    for (std::size_t r = 0; r < 4 * h; ++r) {
      double s = cell.b[r];
      const double* wr = cell.w.row_ptr(r);
      for (std::size_t c = 0; c < d; ++c) s += wr[c] * xt[c];
      const double* ur = cell.u.row_ptr(r);
      for (std::size_t c = 0; c < h; ++c) s += ur[c] * h_prev[c];
      z[r] = s;
    }
    for (std::size_t c = 0; c < h; ++c) {
      const double gi = sigmoid(z[c]);
      const double gf = sigmoid(z[h + c]);
      const double gg = std::tanh(z[2 * h + c]);
      const double go = sigmoid(z[3 * h + c]);
      const double cc = gf * c_prev[c] + gi * gg;
      const double tc = std::tanh(cc);
      mi(t, c) = gi;
      mf(t, c) = gf;
      mg(t, c) = gg;
      mo(t, c) = go;
      mc(t, c) = cc;
      mtc(t, c) = tc;
      mh(t, c) = go * tc;
      h_prev[c] = go * tc;
      c_prev[c] = cc;
    }
  }
}

// backward through one direction; dh is T x H of gradients flowing into this
// direction's hidden outputs. Accumulates into grads and dx.
inline void backprop_direction(const LstmCell& cell, const Mat& x, int dir,
                               const ForwardTrace& tr, const Mat& dh_in,
                               LstmCell& grad, Mat& dx) {
  const std::size_t t_len = x.rows;
  const std::size_t h = cell.u.cols;
  const std::size_t d = x.cols;
  const Mat &mi = tr.dir_i[dir], &mf = tr.dir_f[dir], &mg = tr.dir_g[dir],
            &mo = tr.dir_o[dir], &mc = tr.dir_c[dir], &mtc = tr.dir_tc[dir],
            &mh = tr.dir_h[dir];

  Vec dh_carry(h, 0.0), dc_carry(h, 0.0), dz(4 * h);
  for (std::size_t step = 0; step < t_len; ++step) {
    // walk in reverse processing order
    const std::size_t t = dir == 0 ? t_len - 1 - step : step;
    const bool has_prev = dir == 0 ? t > 0 : t + 1 < t_len;
    const std::size_t t_prev = dir == 0 ? t - 1 : t + 1;

    for (std::size_t c = 0; c < h; ++c) {
      const double dh = dh_in(t, c) + dh_carry[c];
      const double gi = mi(t, c), gf = mf(t, c), gg = mg(t, c), go = mo(t, c);
      const double tc = mtc(t, c);
      const double c_prev = has_prev ? mc(t_prev, c) : 0.0;
      const double dgo = dh * tc;
      const double dc = dc_carry[c] + dh * go * (1.0 - tc * tc);
      const double dgi = dc * gg;
      const double dgg = dc * gi;
      const double dgf = dc * c_prev;
      dc_carry[c] = dc * gf;
      dz[c] = dgi * gi * (1.0 - gi);
      dz[h + c] = dgf * gf * (1.0 - gf);
      dz[2 * h + c] = dgg * (1.0 - gg * gg);
      dz[3 * h + c] = dgo * go * (1.0 - go);
    }

    const double* xt = x.row_ptr(t);
    const double* hp = has_prev ? mh.row_ptr(t_prev) : nullptr;
    std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
    double* dxt = dx.row_ptr(t);
    for (std::size_t r = 0; r < 4 * h; ++r) {
      const double dzr = dz[r];
      if (dzr == 0.0) continue;
      double* gw = grad.w.row_ptr(r);
      const double* wr = cell.w.row_ptr(r);
      for (std::size_t c = 0; c < d; ++c) {
        gw[c] += dzr * xt[c];
        dxt[c] += wr[c] * dzr;
      }
      double* gu = grad.u.row_ptr(r);
      const double* ur = cell.u.row_ptr(r);
      for (std::size_t c = 0; c < h; ++c) {
        if (hp) gu[c] += dzr * hp[c];
        dh_carry[c] += ur[c] * dzr;
      }
      grad.b[r] += dzr;
    }
  }
}

constexpr double kProbClamp = 1e-12;

}  // namespace detail

// Shared forward pass. x_t = [g_t ; e_t] feeds the BiLSTM; dropout hits the
// inputs and the concatenated hidden states only in train mode. RNN_HG
// classifies logistic(w . [h_t ; g_t] + b); RNN_MHCA builds a multi-head
// scaled-dot attentive context over all other positions and classifies
// logistic(w . [h_t ; c_t] + b). With a single token the attentive context is
// the zero vector.
inline ForwardTrace forward(const LabeledSequence& seq,
                            const DetectorParams& params, bool train_mode,
                            std::uint64_t dropout_seed = 0) {
  detail::check_params(params);
  detail::check_sequence(seq, params);
  const std::size_t t_len = seq.tokens.size();
  const int h = params.hidden;
  const int d = params.input_dim();

  ForwardTrace tr;
  tr.length = t_len;
  tr.x = Mat(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto& tok = seq.tokens[t];
    for (int j = 0; j < params.d_g; ++j) tr.x(t, j) = tok.literal_vec[j];
    for (int j = 0; j < params.d_e; ++j)
      tr.x(t, params.d_g + j) = tok.contextual_vec[j];
  }

  Rng drop_rng(hash_mix(dropout_seed, 0xd70));
  if (train_mode && params.dropout_in > 0.0) {
    tr.in_mask = Mat(t_len, d);
    const double keep = 1.0 - params.dropout_in;
    for (auto& m : tr.in_mask.a)
      m = drop_rng.uniform() < params.dropout_in ? 0.0 : 1.0 / keep;
    for (std::size_t i = 0; i < tr.x.a.size(); ++i) tr.x.a[i] *= tr.in_mask.a[i];
  }

  detail::run_direction(params.fwd, tr.x, 0, tr);
  detail::run_direction(params.bwd, tr.x, 1, tr);

  tr.hidden_states = Mat(t_len, 2 * h);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (int c = 0; c < h; ++c) {
      tr.hidden_states(t, c) = tr.dir_h[0](t, c);
      tr.hidden_states(t, h + c) = tr.dir_h[1](t, c);
    }
  }
  if (train_mode && params.dropout_out > 0.0) {
    tr.h_mask = Mat(t_len, 2 * h);
    const double keep = 1.0 - params.dropout_out;
    for (auto& m : tr.h_mask.a)
      m = drop_rng.uniform() < params.dropout_out ? 0.0 : 1.0 / keep;
    for (std::size_t i = 0; i < tr.hidden_states.a.size(); ++i)
      tr.hidden_states.a[i] *= tr.h_mask.a[i];
  }

  if (params.kind == ModelKind::rnn_mhca) {
    const int heads = params.n_heads;
    const int dk = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    tr.attn_ctx = Mat(t_len, 2 * h);
    tr.q.assign(heads, Mat(t_len, dk));
    tr.k.assign(heads, Mat(t_len, dk));
    tr.v.assign(heads, Mat(t_len, dk));
    tr.alpha.assign(heads, Mat(t_len, t_len));
    for (int hd = 0; hd < heads; ++hd) {
      Mat &q = tr.q[hd], &k = tr.k[hd], &v = tr.v[hd];
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* ht = tr.hidden_states.row_ptr(t);
        for (int r = 0; r < dk; ++r) {
          double sq = 0, sk = 0, sv = 0;
          const double* qr = params.head_q[hd].row_ptr(r);
          const double* kr = params.head_k[hd].row_ptr(r);
          const double* vr = params.head_v[hd].row_ptr(r);
          for (int c = 0; c < 2 * h; ++c) {
            sq += qr[c] * ht[c];
            sk += kr[c] * ht[c];
            sv += vr[c] * ht[c];
          }
          q(t, r) = sq;
          k(t, r) = sk;
          v(t, r) = sv;
        }
      }
      for (std::size_t t = 0; t < t_len; ++t) {
        if (t_len == 1) break;  // degenerate context: zero vector
        double max_s = -std::numeric_limits<double>::infinity();
        std::vector<double> scores(t_len, 0.0);
        for (std::size_t j = 0; j < t_len; ++j) {
          if (j == t) continue;
          double s = 0;
          for (int r = 0; r < dk; ++r) s += q(t, r) * k(j, r);
          scores[j] = s * scale;
          max_s = std::max(max_s, scores[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < t_len; ++j) {
          if (j == t) continue;
          scores[j] = std::exp(scores[j] - max_s);
          z += scores[j];
        }
        for (std::size_t j = 0; j < t_len; ++j) {
          if (j == t) continue;
          const double a = scores[j] / z;
          tr.alpha[hd](t, j) = a;
          for (int r = 0; r < dk; ++r)
            tr.attn_ctx(t, hd * dk + r) += a * v(j, r);
        }
      }
    }
  }

  tr.logits.resize(t_len);
  tr.probabilities.resize(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    double z = params.classifier_b;
    const double* ht = tr.hidden_states.row_ptr(t);
    for (int c = 0; c < 2 * h; ++c) z += params.classifier_w[c] * ht[c];
    if (params.kind == ModelKind::rnn_hg) {
      // the classifier reads the same (dropout-scaled) literal vector the
      // recurrence saw
      for (int j = 0; j < params.d_g; ++j)
        z += params.classifier_w[2 * h + j] * tr.x(t, j);
    } else {
      const double* ct = tr.attn_ctx.row_ptr(t);
      for (int c = 0; c < 2 * h; ++c)
        z += params.classifier_w[2 * h + c] * ct[c];
    }
    tr.logits[t] = z;
    tr.probabilities[t] = std::clamp(detail::sigmoid(z), detail::kProbClamp,
                                     1.0 - detail::kProbClamp);
  }
  return tr;
}

inline ForwardTrace forward_rnn_hg(const LabeledSequence& seq,
                                   const DetectorParams& params,
                                   bool train_mode,
                                   std::uint64_t dropout_seed = 0) {
  if (params.kind != ModelKind::rnn_hg)
    throw ShapeError("params are not RNN_HG parameters");
  return forward(seq, params, train_mode, dropout_seed);
}

inline ForwardTrace forward_rnn_mhca(const LabeledSequence& seq,
                                     const DetectorParams& params,
                                     bool train_mode,
                                     std::uint64_t dropout_seed = 0) {
  if (params.kind != ModelKind::rnn_mhca)
    throw ShapeError("params are not RNN_MHCA parameters");
  return forward(seq, params, train_mode, dropout_seed);
}

// probe of the classifier concatenation: the logit recomputed from an
// explicit hidden state and literal vector (RNN_HG wiring of Eq-style
// contrast inputs)
inline double classifier_logit_hg(const DetectorParams& params,
                                  std::span<const double> hidden,
                                  std::span<const double> literal) {
  if (params.kind != ModelKind::rnn_hg)
    throw ShapeError("classifier_logit_hg expects RNN_HG parameters");
  const int h2 = 2 * params.hidden;
  if (static_cast<int>(hidden.size()) != h2 ||
      static_cast<int>(literal.size()) != params.d_g)
    throw ShapeError("classifier_logit_hg: bad input lengths");
  double z = params.classifier_b;
  for (int c = 0; c < h2; ++c) z += params.classifier_w[c] * hidden[c];
  for (int j = 0; j < params.d_g; ++j)
    z += params.classifier_w[h2 + j] * literal[j];
  return z;
}

// Masked weighted binary cross-entropy, averaged over masked positions; the
// metaphor class is weighted by pos_weight.
inline double sequence_loss(const LabeledSequence& seq, const ForwardTrace& tr,
                            double pos_weight) {
  double loss = 0.0;
  std::size_t masked = 0;
  for (std::size_t t = 0; t < tr.length; ++t) {
    if (!seq.weight_mask[t]) continue;
    ++masked;
    const double p = tr.probabilities[t];
    loss += seq.labels[t] ? -pos_weight * std::log(p) : -std::log(1.0 - p);
  }
  return loss / static_cast<double>(masked);
}

// Loss plus exact gradients of the composed forward (including attention
// parameters), shaped like DetectorParams.
inline std::pair<double, DetectorParams> loss_and_gradients(
    const LabeledSequence& seq, const DetectorParams& params,
    double pos_weight, bool train_mode = false,
    std::uint64_t dropout_seed = 0) {
  ForwardTrace tr = forward(seq, params, train_mode, dropout_seed);
  const std::size_t t_len = tr.length;
  const int h = params.hidden;
  const int d = params.input_dim();

  std::size_t masked = 0;
  for (std::size_t t = 0; t < t_len; ++t) masked += seq.weight_mask[t] ? 1 : 0;
  const double inv_m = 1.0 / static_cast<double>(masked);

  DetectorParams grads = zeros_like(params);
  Mat dh(t_len, 2 * h);   // into post-dropout hidden states
  Mat dx(t_len, d);       // into post-dropout inputs
  Mat dctx;
  if (params.kind == ModelKind::rnn_mhca) dctx = Mat(t_len, 2 * h);

  double loss = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!seq.weight_mask[t]) continue;
    const double p = tr.probabilities[t];
    const int y = seq.labels[t];
    loss += y ? -pos_weight * std::log(p) : -std::log(1.0 - p);
    // d loss / d logit, using the unclamped sigmoid identity
    const double ps = detail::sigmoid(tr.logits[t]);
    const double dlogit =
        inv_m * (y ? pos_weight * (ps - 1.0) : ps);
    grads.classifier_b += dlogit;
    const double* ht = tr.hidden_states.row_ptr(t);
    for (int c = 0; c < 2 * h; ++c) {
      grads.classifier_w[c] += dlogit * ht[c];
      dh(t, c) += dlogit * params.classifier_w[c];
    }
    if (params.kind == ModelKind::rnn_hg) {
      for (int j = 0; j < params.d_g; ++j) {
        grads.classifier_w[2 * h + j] += dlogit * tr.x(t, j);
        dx(t, j) += dlogit * params.classifier_w[2 * h + j];
      }
    } else {
      const double* ct = tr.attn_ctx.row_ptr(t);
      for (int c = 0; c < 2 * h; ++c) {
        grads.classifier_w[2 * h + c] += dlogit * ct[c];
        dctx(t, c) += dlogit * params.classifier_w[2 * h + c];
      }
    }
  }
  loss *= inv_m;

  if (params.kind == ModelKind::rnn_mhca && t_len > 1) {
    const int heads = params.n_heads;
    const int dk = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int hd = 0; hd < heads; ++hd) {
      const Mat &q = tr.q[hd], &k = tr.k[hd], &v = tr.v[hd], &al = tr.alpha[hd];
      Mat dq(t_len, dk), dkm(t_len, dk), dvm(t_len, dk);
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* dct = dctx.row_ptr(t) + hd * dk;
        // value path and softmax backward
        std::vector<double> dalpha(t_len, 0.0);
        double dot_ad = 0.0;
        for (std::size_t j = 0; j < t_len; ++j) {
          if (j == t) continue;
          const double a = al(t, j);
          for (int r = 0; r < dk; ++r) dvm(j, r) += a * dct[r];
          double s = 0;
          for (int r = 0; r < dk; ++r) s += dct[r] * v(j, r);
          dalpha[j] = s;
          dot_ad += a * s;
        }
        for (std::size_t j = 0; j < t_len; ++j) {
          if (j == t) continue;
          const double ds = al(t, j) * (dalpha[j] - dot_ad) * scale;
          if (ds == 0.0) continue;
          for (int r = 0; r < dk; ++r) {
            dq(t, r) += ds * k(j, r);
            dkm(j, r) += ds * q(t, r);
          }
        }
      }
      // project q/k/v gradients onto the head matrices and hidden states
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* ht = tr.hidden_states.row_ptr(t);
        double* dht = dh.row_ptr(t);
        for (int r = 0; r < dk; ++r) {
          const double gq = dq(t, r), gk = dkm(t, r), gv = dvm(t, r);
          double* hq = grads.head_q[hd].row_ptr(r);
          double* hk = grads.head_k[hd].row_ptr(r);
          double* hv = grads.head_v[hd].row_ptr(r);
          const double* pq = params.head_q[hd].row_ptr(r);
          const double* pk = params.head_k[hd].row_ptr(r);
          const double* pv = params.head_v[hd].row_ptr(r);
          for (int c = 0; c < 2 * h; ++c) {
            hq[c] += gq * ht[c];
            hk[c] += gk * ht[c];
            hv[c] += gv * ht[c];
            dht[c] += pq[c] * gq + pk[c] * gk + pv[c] * gv;
          }
        }
      }
    }
  }

  // undo hidden dropout, split directions, run BPTT
  if (tr.h_mask.a.size())
    for (std::size_t i = 0; i < dh.a.size(); ++i) dh.a[i] *= tr.h_mask.a[i];
  Mat dh_f(t_len, h), dh_b(t_len, h);
  for (std::size_t t = 0; t < t_len; ++t)
    for (int c = 0; c < h; ++c) {
      dh_f(t, c) = dh(t, c);
      dh_b(t, c) = dh(t, h + c);
    }
  detail::backprop_direction(params.fwd, tr.x, 0, tr, dh_f, grads.fwd, dx);
  detail::backprop_direction(params.bwd, tr.x, 1, tr, dh_b, grads.bwd, dx);
  // dx would feed embedding gradients; embeddings are fixed inputs here

  return {loss, std::move(grads)};
}

struct Prediction {
  std::vector<int> labels;
  std::vector<double> probabilities;
};

// label 1 iff probability >= threshold; dropout disabled. Masking plays no
// role here: every position gets a probability.
inline std::vector<Prediction> predict(const std::vector<LabeledSequence>& seqs,
                                       const DetectorParams& params,
                                       double threshold = -1.0) {
  if (threshold < 0.0) threshold = params.threshold;
  std::vector<Prediction> out;
  out.reserve(seqs.size());
  for (const auto& seq : seqs) {
    ForwardTrace tr = forward(seq, params, /*train_mode=*/false);
    Prediction p;
    p.probabilities = tr.probabilities;
    p.labels.resize(tr.length);
    for (std::size_t t = 0; t < tr.length; ++t)
      p.labels[t] = tr.probabilities[t] >= threshold ? 1 : 0;
    out.push_back(std::move(p));
  }
  return out;
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_precision = -1.0, dev_recall = -1.0, dev_f1 = -1.0,
         dev_accuracy = -1.0;
};

struct TrainResult {
  DetectorParams params;
  std::vector<EpochStats> log;
  int best_epoch = -1;  // -1 when no dev set was given
};

namespace detail {

struct DevMetrics {
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
};

inline DevMetrics dev_metrics(const std::vector<LabeledSequence>& dev,
                              const DetectorParams& params) {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  auto preds = predict(dev, params);
  for (std::size_t i = 0; i < dev.size(); ++i) {
    for (std::size_t t = 0; t < dev[i].tokens.size(); ++t) {
      if (!dev[i].weight_mask[t]) continue;
      const int y = dev[i].labels[t], p = preds[i].labels[t];
      if (y == 1 && p == 1) ++tp;
      else if (y == 0 && p == 1) ++fp;
      else if (y == 1 && p == 0) ++fn;
      else ++tn;
    }
  }
  DevMetrics m;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0
             ? 2 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  m.accuracy = static_cast<double>(tp + tn) /
               static_cast<double>(std::max<long>(1, tp + fp + tn + fn));
  return m;
}

}  // namespace detail

// Mini-batch Adam with global-norm clipping. Deterministic for a fixed seed:
// example order, dropout masks and updates are all driven by the seed, and
// everything runs single-threaded. Per-example dropout seeds depend on
// (seed, epoch, example index), not on batch position.
inline TrainResult train_detector(const std::vector<LabeledSequence>& train,
                                  const std::vector<LabeledSequence>* dev,
                                  const DetectorConfig& cfg) {
  if (train.empty()) throw InvalidArgError("train_detector: empty train set");

  double pos_weight = cfg.pos_weight;
  if (pos_weight <= 0.0) {
    long pos = 0, neg = 0;
    for (const auto& seq : train)
      for (std::size_t t = 0; t < seq.tokens.size(); ++t)
        if (seq.weight_mask[t]) (seq.labels[t] ? pos : neg) += 1;
    pos_weight = pos > 0 ? static_cast<double>(neg) / static_cast<double>(pos)
                         : 1.0;
  }

  Rng rng(hash_mix(cfg.seed, 0x747261696e));  // "train"
  DetectorParams params = init_params(cfg, rng);
  for (const auto& seq : train) detail::check_sequence(seq, params);
  if (dev)
    for (const auto& seq : *dev) detail::check_sequence(seq, params);

  const std::size_t n_params = param_count(params);
  std::vector<double> adam_m(n_params, 0.0), adam_v(n_params, 0.0);
  long adam_t = 0;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  TrainResult result;
  DetectorParams best;
  double best_f1 = -1.0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch =
      cfg.batch_size <= 0 ? train.size()
                          : static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with our own rng keeps the order platform-independent
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.bounded(i));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      DetectorParams grads = zeros_like(params);
      for (std::size_t bi = start; bi < end; ++bi) {
        const std::size_t ex = order[bi];
        const std::uint64_t drop_seed =
            hash_mix(hash_mix(cfg.seed, 0xd50 + epoch), ex);
        auto [loss, g] = loss_and_gradients(train[ex], params, pos_weight,
                                            /*train_mode=*/true, drop_seed);
        if (!std::isfinite(loss))
          throw NonFiniteLossError(
              "non-finite loss at epoch " + std::to_string(epoch) +
              ", example " + std::to_string(ex));
        epoch_loss += loss;
        std::vector<double> gflat = flatten(g);
        std::size_t off = 0;
        visit_params(grads, [&](std::vector<double>& v) {
          for (auto& x : v) x += gflat[off++];
        });
      }
      const double inv_b = 1.0 / static_cast<double>(end - start);
      std::vector<double> gflat = flatten(grads);
      double norm_sq = 0.0;
      for (auto& g : gflat) {
        g *= inv_b;
        norm_sq += g * g;
      }
      double scale = 1.0;
      if (cfg.clip_norm > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
      }
      ++adam_t;
      const double bc1 = 1.0 - std::pow(beta1, adam_t);
      const double bc2 = 1.0 - std::pow(beta2, adam_t);
      std::vector<double> pflat = flatten(params);
      for (std::size_t i = 0; i < n_params; ++i) {
        const double g = gflat[i] * scale;
        adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g;
        adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g;
        pflat[i] -= cfg.lr * (adam_m[i] / bc1) /
                    (std::sqrt(adam_v[i] / bc2) + eps);
      }
      unflatten(params, pflat);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(train.size());
    if (dev && !dev->empty()) {
      auto m = detail::dev_metrics(*dev, params);
      stats.dev_precision = m.precision;
      stats.dev_recall = m.recall;
      stats.dev_f1 = m.f1;
      stats.dev_accuracy = m.accuracy;
      if (m.f1 > best_f1) {
        best_f1 = m.f1;
        best = params;
        result.best_epoch = epoch;
      }
    }
    result.log.push_back(stats);
  }

  result.params = (dev && !dev->empty() && best_f1 >= 0.0) ? best : params;
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint format: self-describing ASCII header, then the parameter tensors
// as little-endian float32 in visit_params order

namespace detail {

inline void write_f32_le(std::ofstream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  unsigned char b[4] = {static_cast<unsigned char>(bits & 0xFF),
                        static_cast<unsigned char>((bits >> 8) & 0xFF),
                        static_cast<unsigned char>((bits >> 16) & 0xFF),
                        static_cast<unsigned char>((bits >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("unexpected end of checkpoint file");
  std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                       (static_cast<std::uint32_t>(b[1]) << 8) |
                       (static_cast<std::uint32_t>(b[2]) << 16) |
                       (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const DetectorParams& params,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgError("cannot write checkpoint: " + path);
  out << "tembed-detector 1\n";
  out << "kind " << to_string(params.kind) << '\n';
  out << "d_g " << params.d_g << '\n';
  out << "d_e " << params.d_e << '\n';
  out << "hidden " << params.hidden << '\n';
  out << "n_heads " << params.n_heads << '\n';
  out << "threshold " << params.threshold << '\n';
  out << "dropout " << params.dropout_in << ' ' << params.dropout_out << '\n';
  out << "end\n";
  visit_params(params, [&](const std::vector<double>& v) {
    for (double x : v) detail::write_f32_le(out, static_cast<float>(x));
  });
}

inline DetectorParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "tembed-detector 1")
    throw FormatError("not a detector checkpoint: " + path);
  DetectorConfig cfg;
  double dropout_in = 0, dropout_out = 0, threshold = 0.5;
  int n_heads = 0;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "kind") {
      std::string v;
      ls >> v;
      cfg.kind = model_kind_from_string(v);
    } else if (key == "d_g") ls >> cfg.d_g;
    else if (key == "d_e") ls >> cfg.d_e;
    else if (key == "hidden") ls >> cfg.hidden;
    else if (key == "n_heads") ls >> n_heads;
    else if (key == "threshold") ls >> threshold;
    else if (key == "dropout") ls >> dropout_in >> dropout_out;
    else throw FormatError("unknown checkpoint header field: " + key);
    if (!ls) throw FormatError("malformed checkpoint header line: " + line);
  }
  if (line != "end") throw FormatError("checkpoint header missing 'end'");
  cfg.n_heads = std::max(1, n_heads);
  cfg.dropout_in = dropout_in;
  cfg.dropout_out = dropout_out;
  cfg.threshold = threshold;
  Rng rng(0);
  DetectorParams params = init_params(cfg, rng);
  params.n_heads = n_heads;
  if (cfg.kind == ModelKind::rnn_mhca && n_heads <= 0)
    throw FormatError("rnn-mhca checkpoint without n_heads");
  visit_params(params, [&](std::vector<double>& v) {
    for (auto& x : v) x = detail::read_f32_le(in);
  });
  char extra;
  if (in.get(extra))
    throw FormatError("trailing bytes in checkpoint: " + path);
  return params;
}

// ---------------------------------------------------------------------------
// contextual-vector sidecar: per sentence id a T x d_e float32 block
//
//   tembed-ctx 1
//   <count> <dim>
//   <id> <T>
//   ... T*dim little-endian float32 ...

struct ContextualVectors {
  int dim = 0;
  std::unordered_map<std::string, std::vector<float>> by_id;  // size T*dim
};

inline void save_contextual(const ContextualVectors& ctx,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgError("cannot write sidecar: " + path);
  out << "tembed-ctx 1\n" << ctx.by_id.size() << ' ' << ctx.dim << '\n';
  std::vector<std::string> ids;
  ids.reserve(ctx.by_id.size());
  for (const auto& [id, _] : ctx.by_id) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    if (id.find_first_of(" \n") != std::string::npos)
      throw InvalidArgError("sidecar sentence id contains whitespace: " + id);
    const auto& block = ctx.by_id.at(id);
    if (block.size() % ctx.dim != 0)
      throw ShapeError("sidecar block for '" + id + "' is not T*dim");
    out << id << ' ' << block.size() / ctx.dim << '\n';
    for (float v : block) detail::write_f32_le(out, v);
  }
}

inline ContextualVectors load_contextual(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgError("cannot open sidecar: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "tembed-ctx 1")
    throw FormatError("not a contextual-vector sidecar: " + path);
  if (!std::getline(in, line))
    throw FormatError("sidecar missing count/dim line");
  std::istringstream hs(line);
  long count = -1;
  ContextualVectors ctx;
  if (!(hs >> count >> ctx.dim) || count < 0 || ctx.dim <= 0)
    throw FormatError("malformed sidecar header: " + line);
  for (long i = 0; i < count; ++i) {
    if (!std::getline(in, line))
      throw FormatError("sidecar truncated at sentence " + std::to_string(i));
    std::istringstream ls(line);
    std::string id;
    long t_len = -1;
    if (!(ls >> id >> t_len) || t_len < 0)
      throw FormatError("malformed sidecar sentence line: " + line);
    std::vector<float> block(static_cast<std::size_t>(t_len) * ctx.dim);
    for (auto& v : block) v = detail::read_f32_le(in);
    ctx.by_id.emplace(std::move(id), std::move(block));
  }
  return ctx;
}

}  // namespace tembed::detector
