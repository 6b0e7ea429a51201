#pragma once

// Dense layers with explicit forward/backward passes. Every layer keeps its
// parameters as plain matrices; gradients accumulate into a second instance of
// the same layer type, so a forward pass never mutates the model.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "katsum/common.hpp"

namespace katsum::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Forward-pass mode. Dropout is active only when `train` is set and rate > 0.
struct Pass {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool dropping() const { return train && dropout > 0.0 && rng != nullptr; }
};

template <typename T>
void init_uniform(Mat<T>& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_normal(Mat<T>& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
}

template <typename T>
struct Dropout {
  Mat<T> mask;  // empty when inactive

  Mat<T> forward(const Mat<T>& x, const Pass& pass) {
    if (!pass.dropping()) {
      mask.resize(0, 0);
      return x;
    }
    const T keep = static_cast<T>(1.0 / (1.0 - pass.dropout));
    mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = pass.rng->uniform() < pass.dropout ? T(0) : keep;
    return x.cwiseProduct(mask);
  }

  Mat<T> backward(const Mat<T>& dy) const { return mask.size() == 0 ? dy : Mat<T>(dy.cwiseProduct(mask)); }
};

template <typename T>
struct Linear {
  Mat<T> W;  // in x out
  Mat<T> b;  // 1 x out

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out) : W(Mat<T>::Zero(in, out)), b(Mat<T>::Zero(1, out)) {}

  void init(Rng& rng) {
    init_uniform(W, std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols())), rng);
    b.setZero();
  }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x * W;
    y.rowwise() += b.row(0);
    return y;
  }

  /// Accumulates parameter gradients into `g` and returns dL/dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Linear& g) const {
    g.W.noalias() += x.transpose() * dy;
    g.b += dy.colwise().sum();
    return dy * W.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".W", W);
    f(prefix + ".b", b);
  }
};

template <typename T>
struct LayerNorm {
  static constexpr double eps = 1e-5;
  Mat<T> gamma;  // 1 x d
  Mat<T> beta;   // 1 x d

  struct Cache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index d) : gamma(Mat<T>::Ones(1, d)), beta(Mat<T>::Zero(1, d)) {}

  Mat<T> forward(const Mat<T>& x, Cache& c) const {
    const auto n = x.rows();
    const auto d = x.cols();
    c.xhat.resize(n, d);
    c.inv_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mean = x.row(i).mean();
      const T var = (x.row(i).array() - mean).square().mean();
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      c.inv_std[i] = inv;
      c.xhat.row(i) = (x.row(i).array() - mean) * inv;
    }
    Mat<T> y = c.xhat.array().rowwise() * gamma.row(0).array();
    y.rowwise() += beta.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, LayerNorm& g) const {
    g.gamma += dy.cwiseProduct(c.xhat).colwise().sum();
    g.beta += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * gamma.row(0).array();
    const auto d = static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const T m1 = dxhat.row(i).sum() / d;
      const T m2 = dxhat.row(i).dot(c.xhat.row(i)) / d;
      dx.row(i) = c.inv_std[i] * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

/// Lookup table: one row per id.
template <typename T>
struct Embedding {
  Mat<T> table;

  Embedding() = default;
  Embedding(Eigen::Index n, Eigen::Index d) : table(Mat<T>::Zero(n, d)) {}

  Mat<T> forward(const std::vector<int>& ids) const {
    Mat<T> y(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= table.rows()) throw invalid_argument("embedding id " + std::to_string(ids[i]) + " out of range");
      y.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
    }
    return y;
  }

  void backward(const std::vector<int>& ids, const Mat<T>& dy, Embedding& g) const {
    for (std::size_t i = 0; i < ids.size(); ++i) g.table.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".table", table);
  }
};

/// Multi-head scaled dot-product attention. Keys flagged invalid (and, when
/// causal, keys after the query position) receive zero weight; a query with no
/// admissible key attends to nothing and yields the output bias.
template <typename T>
struct MultiHeadAttention {
  int heads = 1;
  Linear<T> q, k, v, o;

  struct Cache {
    Mat<T> xq, xkv;
    Mat<T> Q, K, V, O;
    std::vector<Mat<T>> P;  // per head, nq x nk
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(Eigen::Index d, int n_heads) : heads(n_heads), q(d, d), k(d, d), v(d, d), o(d, d) {}

  void init(Rng& rng) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    o.init(rng);
  }

  Mat<T> forward(const Mat<T>& xq, const Mat<T>& xkv, const std::vector<char>& key_valid, bool causal, Cache& c) const {
    const auto nq = xq.rows();
    const auto nk = xkv.rows();
    const auto d = q.W.cols();
    const auto dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    c.xq = xq;
    c.xkv = xkv;
    c.Q = q.forward(xq);
    c.K = k.forward(xkv);
    c.V = v.forward(xkv);
    c.O.resize(nq, d);
    c.P.assign(static_cast<std::size_t>(heads), Mat<T>());
    for (int h = 0; h < heads; ++h) {
      Mat<T>& P = c.P[static_cast<std::size_t>(h)];
      P.noalias() = c.Q.middleCols(h * dh, dh) * c.K.middleCols(h * dh, dh).transpose();
      for (Eigen::Index i = 0; i < nq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < nk; ++j) {
          const bool ok = key_valid[static_cast<std::size_t>(j)] && !(causal && j > i);
          if (ok) mx = std::max(mx, P(i, j) * scale);
        }
        if (mx == -std::numeric_limits<T>::infinity()) {
          P.row(i).setZero();
          continue;
        }
        T sum = 0;
        for (Eigen::Index j = 0; j < nk; ++j) {
          const bool ok = key_valid[static_cast<std::size_t>(j)] && !(causal && j > i);
          const T e = ok ? std::exp(P(i, j) * scale - mx) : T(0);
          P(i, j) = e;
          sum += e;
        }
        P.row(i) /= sum;
      }
      c.O.middleCols(h * dh, dh).noalias() = P * c.V.middleCols(h * dh, dh);
    }
    return o.forward(c.O);
  }

  struct InputGrads {
    Mat<T> dxq;
    Mat<T> dxkv;
  };

  InputGrads backward(const Mat<T>& dy, const Cache& c, MultiHeadAttention& g) const {
    const auto d = q.W.cols();
    const auto dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Mat<T> dO = o.backward(c.O, dy, g.o);
    Mat<T> dQ(c.Q.rows(), d), dK(c.K.rows(), d), dV(c.V.rows(), d);
    for (int h = 0; h < heads; ++h) {
      const Mat<T>& P = c.P[static_cast<std::size_t>(h)];
      const auto dOh = dO.middleCols(h * dh, dh);
      dV.middleCols(h * dh, dh).noalias() = P.transpose() * dOh;
      Mat<T> dP = dOh * c.V.middleCols(h * dh, dh).transpose();
      const auto rowdot = dP.cwiseProduct(P).rowwise().sum().eval();
      Mat<T> dS = P.cwiseProduct((dP.colwise() - rowdot));
      dS *= scale;
      dQ.middleCols(h * dh, dh).noalias() = dS * c.K.middleCols(h * dh, dh);
      dK.middleCols(h * dh, dh).noalias() = dS.transpose() * c.Q.middleCols(h * dh, dh);
    }
    InputGrads r;
    r.dxq = q.backward(c.xq, dQ, g.q);
    r.dxkv = k.backward(c.xkv, dK, g.k);
    r.dxkv += v.backward(c.xkv, dV, g.v);
    return r;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    o.visit(prefix + ".o", f);
  }
};

/// Position-wise Linear -> ReLU -> Linear.
template <typename T>
struct FeedForward {
  Linear<T> in, out;

  struct Cache {
    Mat<T> x, pre, act;
  };

  FeedForward() = default;
  FeedForward(Eigen::Index d, Eigen::Index d_ff) : in(d, d_ff), out(d_ff, d) {}

  void init(Rng& rng) {
    in.init(rng);
    out.init(rng);
  }

  Mat<T> forward(const Mat<T>& x, Cache& c) const {
    c.x = x;
    c.pre = in.forward(x);
    c.act = c.pre.cwiseMax(T(0));
    return out.forward(c.act);
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, FeedForward& g) const {
    Mat<T> da = out.backward(c.act, dy, g.out);
    da.array() *= (c.pre.array() > T(0)).template cast<T>();
    return in.backward(c.x, da, g.in);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    in.visit(prefix + ".in", f);
    out.visit(prefix + ".out", f);
  }
};

/// Pre-norm encoder block: x + Drop(SelfAttn(LN(x))), then + Drop(FFN(LN(.))).
template <typename T>
struct EncoderLayer {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2;
    typename MultiHeadAttention<T>::Cache attn;
    typename FeedForward<T>::Cache ffn;
    Dropout<T> drop1, drop2;
  };

  EncoderLayer() = default;
  EncoderLayer(Eigen::Index d, int heads, Eigen::Index d_ff) : ln1(d), ln2(d), attn(d, heads), ffn(d, d_ff) {}

  void init(Rng& rng) {
    attn.init(rng);
    ffn.init(rng);
  }

  Mat<T> forward(const Mat<T>& x, const std::vector<char>& valid, const Pass& pass, Cache& c) const {
    const Mat<T> a = ln1.forward(x, c.ln1);
    Mat<T> h = x + c.drop1.forward(attn.forward(a, a, valid, false, c.attn), pass);
    const Mat<T> b = ln2.forward(h, c.ln2);
    h += c.drop2.forward(ffn.forward(b, c.ffn), pass);
    return h;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, EncoderLayer& g) const {
    Mat<T> dh = dy + ln2.backward(ffn.backward(c.drop2.backward(dy), c.ffn, g.ffn), c.ln2, g.ln2);
    auto da = attn.backward(c.drop1.backward(dh), c.attn, g.attn);
    return dh + ln1.backward(da.dxq + da.dxkv, c.ln1, g.ln1);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".self_attn", f);
    ln2.visit(prefix + ".ln2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

/// Pre-norm decoder block: causal self-attention, cross-attention over memory, FFN.
template <typename T>
struct DecoderLayer {
  LayerNorm<T> ln1, ln2, ln3;
  MultiHeadAttention<T> self_attn, cross_attn;
  FeedForward<T> ffn;

  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2, ln3;
    typename MultiHeadAttention<T>::Cache self_attn, cross_attn;
    typename FeedForward<T>::Cache ffn;
    Dropout<T> drop1, drop2, drop3;
  };

  DecoderLayer() = default;
  DecoderLayer(Eigen::Index d, int heads, Eigen::Index d_ff)
      : ln1(d), ln2(d), ln3(d), self_attn(d, heads), cross_attn(d, heads), ffn(d, d_ff) {}

  void init(Rng& rng) {
    self_attn.init(rng);
    cross_attn.init(rng);
    ffn.init(rng);
  }

  Mat<T> forward(const Mat<T>& x, const std::vector<char>& target_valid, const Mat<T>& memory,
                 const std::vector<char>& memory_valid, const Pass& pass, Cache& c) const {
    const Mat<T> a = ln1.forward(x, c.ln1);
    Mat<T> h = x + c.drop1.forward(self_attn.forward(a, a, target_valid, true, c.self_attn), pass);
    const Mat<T> b = ln2.forward(h, c.ln2);
    h += c.drop2.forward(cross_attn.forward(b, memory, memory_valid, false, c.cross_attn), pass);
    const Mat<T> e = ln3.forward(h, c.ln3);
    h += c.drop3.forward(ffn.forward(e, c.ffn), pass);
    return h;
  }

  /// Returns dL/dx; adds dL/dmemory into `dmemory`.
  Mat<T> backward(const Mat<T>& dy, const Cache& c, DecoderLayer& g, Mat<T>& dmemory) const {
    Mat<T> dh = dy + ln3.backward(ffn.backward(c.drop3.backward(dy), c.ffn, g.ffn), c.ln3, g.ln3);
    auto dc = cross_attn.backward(c.drop2.backward(dh), c.cross_attn, g.cross_attn);
    dmemory += dc.dxkv;
    dh += ln2.backward(dc.dxq, c.ln2, g.ln2);
    auto ds = self_attn.backward(c.drop1.backward(dh), c.self_attn, g.self_attn);
    return dh + ln1.backward(ds.dxq + ds.dxkv, c.ln1, g.ln1);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    self_attn.visit(prefix + ".self_attn", f);
    ln2.visit(prefix + ".ln2", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    ln3.visit(prefix + ".ln3", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

/// Row-wise log-softmax.
template <typename T>
Mat<T> log_softmax(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T mx = logits.row(i).maxCoeff();
    const T lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

}  // namespace katsum::nn
