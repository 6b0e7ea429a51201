#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "katsum/common.hpp"
#include "katsum/corpus.hpp"
#include "katsum/nn.hpp"

namespace katsum {

using nn::Mat;

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 512;
  int max_len = 256;
  double dropout = 0.1;
  int vocab_size = 0;
  int kg_dim = 150;

  /// 768 hidden units, FFN 2048, six decoder layers, 512-token encoder window.
  static ModelConfig reference_scale(int vocab_size, int kg_dim) {
    return {768, 12, 12, 6, 2048, 512, 0.1, vocab_size, kg_dim};
  }

  void validate() const {
    if (d_model < 1 || n_heads < 1 || enc_layers < 1 || dec_layers < 1 || d_ff < 1 || max_len < 3 || vocab_size < 5 ||
        kg_dim < 1)
      throw config_error("model config counts must be positive (max_len >= 3, vocab_size >= 5)");
    if (d_model % n_heads != 0) throw config_error("d_model must be divisible by n_heads");
    if (!(dropout >= 0 && dropout < 1)) throw config_error("dropout must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Closed-form number of trainable scalars for `c`.
inline std::int64_t parameter_count(const ModelConfig& c) {
  const std::int64_t d = c.d_model, f = c.d_ff, V = c.vocab_size, L = c.max_len, kg = c.kg_dim;
  const std::int64_t attn = 4 * (d * d + d);
  const std::int64_t ffn = d * f + f + f * d + d;
  const std::int64_t ln = 2 * d;
  const std::int64_t encoder = V * d + L * d + 2 * d + c.enc_layers * (attn + ffn + 2 * ln) + ln;
  const std::int64_t fusion = kg * d + d + d;
  const std::int64_t decoder = V * d + L * d + c.dec_layers * (2 * attn + ffn + 3 * ln) + ln + d * V + V;
  return encoder + fusion + decoder;
}

enum class ParamGroup { encoder, decoder };

/// Decoder memory: projected triplet rows first, then encoder states.
template <typename T>
struct Memory {
  Mat<T> vectors;
  std::size_t kg_count = 0;
  std::vector<char> valid;

  std::size_t size() const { return static_cast<std::size_t>(vectors.rows()); }
};

/// One training/inference instance: source ids, optional segment ids (all 0
/// when empty), selected triplet embeddings (rows, in selection order), target ids.
template <typename T>
struct Example {
  IdSeq source;
  std::vector<int> segments;
  Mat<T> kg;  // K x kg_dim; zero rows means no knowledge
  IdSeq target;
};

struct LossOptions {
  double label_smoothing = 0.1;
};

template <typename T>
struct TokenLoss {
  T loss = 0;
  Mat<T> dlogits;
  std::size_t tokens = 0;
};

/// Mean label-smoothed cross-entropy; row t of `logits` predicts target[t+1].
/// PAD labels are skipped. The last row has no label.
template <typename T>
TokenLoss<T> token_loss(const Mat<T>& logits, const IdSeq& target, double epsilon) {
  if (static_cast<std::size_t>(logits.rows()) != target.size())
    throw invalid_argument("token_loss: logits rows must equal target length");
  TokenLoss<T> r;
  r.dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
  for (std::size_t t = 0; t + 1 < target.size(); ++t)
    if (target[t + 1] != Vocab::pad) ++r.tokens;
  if (r.tokens == 0) throw invalid_argument("token_loss: target has no non-PAD label");
  const auto V = logits.cols();
  const T eps = static_cast<T>(epsilon);
  const T off = eps / static_cast<T>(V);
  const T on = T(1) - eps + off;
  const T inv_n = T(1) / static_cast<T>(r.tokens);
  for (std::size_t t = 0; t + 1 < target.size(); ++t) {
    const int y = target[t + 1];
    if (y == Vocab::pad) continue;
    const auto i = static_cast<Eigen::Index>(t);
    const T mx = logits.row(i).maxCoeff();
    const auto ex = (logits.row(i).array() - mx).exp();
    const T z = ex.sum();
    const T lse = mx + std::log(z);
    // -sum_k q_k log p_k with q = off everywhere plus (on - off) at y
    const T sum_logp = logits.row(i).sum() - static_cast<T>(V) * lse;
    r.loss += -(off * sum_logp + (on - off) * (logits(i, y) - lse));
    r.dlogits.row(i) = ex / z - off;
    r.dlogits(i, y) -= on - off;
    r.dlogits.row(i) *= inv_n;
  }
  r.loss *= inv_n;
  return r;
}

enum class DecodeMode { greedy, beam };

/// Knowledge-aware encoder-decoder. The fusion projection maps each selected
/// triplet embedding into d_model, adds a learned KG-type vector, and the
/// results are prepended to the encoder states as decoder memory.
template <typename T = double>
class Summarizer {
 public:
  ModelConfig config;

  nn::Embedding<T> enc_tok, enc_pos, enc_seg;
  std::vector<nn::EncoderLayer<T>> encoder;
  nn::LayerNorm<T> enc_ln;

  nn::Linear<T> fuse_proj;
  Mat<T> kg_type;  // 1 x d_model

  nn::Embedding<T> dec_tok, dec_pos;
  std::vector<nn::DecoderLayer<T>> decoder;
  nn::LayerNorm<T> dec_ln;
  nn::Linear<T> out_proj;

  Summarizer() = default;

  /// Zero-initialized model with the shapes of `c`.
  explicit Summarizer(const ModelConfig& c) : config(c) {
    c.validate();
    const Eigen::Index d = c.d_model;
    enc_tok = nn::Embedding<T>(c.vocab_size, d);
    enc_pos = nn::Embedding<T>(c.max_len, d);
    enc_seg = nn::Embedding<T>(2, d);
    encoder.assign(static_cast<std::size_t>(c.enc_layers), nn::EncoderLayer<T>(d, c.n_heads, c.d_ff));
    enc_ln = nn::LayerNorm<T>(d);
    fuse_proj = nn::Linear<T>(c.kg_dim, d);
    kg_type = Mat<T>::Zero(1, d);
    dec_tok = nn::Embedding<T>(c.vocab_size, d);
    dec_pos = nn::Embedding<T>(c.max_len, d);
    decoder.assign(static_cast<std::size_t>(c.dec_layers), nn::DecoderLayer<T>(d, c.n_heads, c.d_ff));
    dec_ln = nn::LayerNorm<T>(d);
    out_proj = nn::Linear<T>(d, c.vocab_size);
  }

  static Summarizer initialized(const ModelConfig& c, std::uint64_t seed) {
    Summarizer m(c);
    Rng rng(seed);
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(c.d_model));
    nn::init_normal(m.enc_tok.table, emb_std, rng);
    nn::init_normal(m.enc_pos.table, emb_std, rng);
    nn::init_normal(m.enc_seg.table, emb_std, rng);
    for (auto& l : m.encoder) l.init(rng);
    m.fuse_proj.init(rng);
    nn::init_normal(m.kg_type, emb_std, rng);
    nn::init_normal(m.dec_tok.table, emb_std, rng);
    nn::init_normal(m.dec_pos.table, emb_std, rng);
    for (auto& l : m.decoder) l.init(rng);
    m.out_proj.init(rng);
    return m;
  }

  /// Same shapes, all zeros: the gradient/optimizer-state container.
  Summarizer zeros_like() const {
    Summarizer z(config);
    z.visit([](const std::string&, Mat<T>& m, ParamGroup) { m.setZero(); });
    return z;
  }

  /// Visits every parameter tensor in a fixed order as f(name, tensor, group).
  template <typename F>
  void visit(F&& f) {
    auto enc = [&](const std::string& n, Mat<T>& m) { f(n, m, ParamGroup::encoder); };
    auto dec = [&](const std::string& n, Mat<T>& m) { f(n, m, ParamGroup::decoder); };
    enc_tok.visit("encoder.tok", enc);
    enc_pos.visit("encoder.pos", enc);
    enc_seg.visit("encoder.seg", enc);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("encoder.layer" + std::to_string(i), enc);
    enc_ln.visit("encoder.ln", enc);
    fuse_proj.visit("fusion.proj", dec);
    dec("fusion.kg_type", kg_type);
    dec_tok.visit("decoder.tok", dec);
    dec_pos.visit("decoder.pos", dec);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder.layer" + std::to_string(i), dec);
    dec_ln.visit("decoder.ln", dec);
    out_proj.visit("decoder.out", dec);
  }

  struct ParamRef {
    std::string name;
    Mat<T>* tensor;
    ParamGroup group;
  };

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    visit([&](const std::string& n, Mat<T>& m, ParamGroup g) { out.push_back({n, &m, g}); });
    return out;
  }

  std::int64_t num_parameters() {
    std::int64_t n = 0;
    visit([&](const std::string&, Mat<T>& m, ParamGroup) { n += m.size(); });
    return n;
  }

  bool all_finite() {
    bool ok = true;
    visit([&](const std::string&, Mat<T>& m, ParamGroup) { ok = ok && m.allFinite(); });
    return ok;
  }

  // ---------------------------------------------------------------- forward

  struct EncodeCache {
    IdSeq ids;
    std::vector<int> segments;
    std::vector<char> valid;
    nn::Dropout<T> drop;
    std::vector<typename nn::EncoderLayer<T>::Cache> layers;
    typename nn::LayerNorm<T>::Cache ln;
  };

  /// Token + segment + position embeddings, summed per position.
  Mat<T> embed_inputs(const IdSeq& ids, const std::vector<int>& segments) const {
    if (ids.size() > static_cast<std::size_t>(config.max_len))
      throw invalid_argument("input length " + std::to_string(ids.size()) + " exceeds max_len " +
                             std::to_string(config.max_len));
    if (!segments.empty() && segments.size() != ids.size()) throw invalid_argument("segment ids length mismatch");
    const auto segs = segments.empty() ? std::vector<int>(ids.size(), 0) : segments;
    Mat<T> x = enc_tok.forward(ids) + enc_seg.forward(segs);
    x += enc_pos.table.topRows(static_cast<Eigen::Index>(ids.size()));
    return x;
  }

  /// Encoder hidden states H (n x d_model). PAD positions are masked as keys.
  Mat<T> encode(const IdSeq& ids, const std::vector<int>& segments, const nn::Pass& pass, EncodeCache& c) const {
    c.ids = ids;
    c.segments = segments.empty() ? std::vector<int>(ids.size(), 0) : segments;
    c.valid.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) c.valid[i] = ids[i] != Vocab::pad;
    Mat<T> x = c.drop.forward(embed_inputs(ids, c.segments), pass);
    c.layers.resize(encoder.size());
    for (std::size_t l = 0; l < encoder.size(); ++l) x = encoder[l].forward(x, c.valid, pass, c.layers[l]);
    return enc_ln.forward(x, c.ln);
  }

  Mat<T> encode(const IdSeq& ids, const std::vector<int>& segments = {}) const {
    EncodeCache c;
    return encode(ids, segments, nn::Pass{}, c);
  }

  /// Validity of each encoder position (non-PAD) for memory masking.
  static std::vector<char> source_mask(const IdSeq& ids) {
    std::vector<char> v(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) v[i] = ids[i] != Vocab::pad;
    return v;
  }

  /// Prepends projected triplet rows (W e_i + b + kg_type) to H.
  Memory<T> fuse(const Mat<T>& H, const std::vector<char>& source_valid, const Mat<T>& kg) const {
    if (kg.rows() > 0 && kg.cols() != config.kg_dim)
      throw invalid_argument("triplet embedding dim " + std::to_string(kg.cols()) + " != kg_dim " +
                             std::to_string(config.kg_dim));
    if (static_cast<std::size_t>(H.rows()) != source_valid.size()) throw invalid_argument("fuse: mask length mismatch");
    Memory<T> m;
    m.kg_count = static_cast<std::size_t>(kg.rows());
    if (kg.rows() == 0) {
      m.vectors = H;
    } else {
      m.vectors.resize(kg.rows() + H.rows(), H.cols());
      Mat<T> proj = fuse_proj.forward(kg);
      proj.rowwise() += kg_type.row(0);
      m.vectors.topRows(kg.rows()) = proj;
      m.vectors.bottomRows(H.rows()) = H;
    }
    m.valid.assign(m.kg_count, 1);
    m.valid.insert(m.valid.end(), source_valid.begin(), source_valid.end());
    return m;
  }

  struct DecodeCache {
    IdSeq ids;
    std::vector<char> valid;
    nn::Dropout<T> drop;
    std::vector<typename nn::DecoderLayer<T>::Cache> layers;
    typename nn::LayerNorm<T>::Cache ln;
    Mat<T> hidden;
  };

  /// Final decoder states (m x d_model) under causal self-attention and cross-attention over `memory`.
  Mat<T> decode_hidden(const Memory<T>& memory, const IdSeq& target, const nn::Pass& pass, DecodeCache& c) const {
    if (target.empty()) throw invalid_argument("decode: empty target");
    if (target.size() > static_cast<std::size_t>(config.max_len))
      throw invalid_argument("target length exceeds max_len");
    c.ids = target;
    c.valid.resize(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) c.valid[i] = target[i] != Vocab::pad;
    Mat<T> x = dec_tok.forward(target);
    x += dec_pos.table.topRows(static_cast<Eigen::Index>(target.size()));
    x = c.drop.forward(x, pass);
    c.layers.resize(decoder.size());
    for (std::size_t l = 0; l < decoder.size(); ++l)
      x = decoder[l].forward(x, c.valid, memory.vectors, memory.valid, pass, c.layers[l]);
    c.hidden = dec_ln.forward(x, c.ln);
    return c.hidden;
  }

  /// Teacher-forced logits (m x vocab_size).
  Mat<T> decode_train(const Memory<T>& memory, const IdSeq& target, const nn::Pass& pass, DecodeCache& c) const {
    if (target.empty() || target.front() != Vocab::bos) throw invalid_argument("decode_train: target must begin with BOS");
    return out_proj.forward(decode_hidden(memory, target, pass, c));
  }

  Mat<T> decode_train(const Memory<T>& memory, const IdSeq& target) const {
    DecodeCache c;
    return decode_train(memory, target, nn::Pass{}, c);
  }

  static Mat<T> to_kg_matrix(const std::vector<Eigen::VectorXd>& rows, int kg_dim) {
    Mat<T> kg(static_cast<Eigen::Index>(rows.size()), kg_dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != kg_dim) throw invalid_argument("triplet embedding dim mismatch");
      kg.row(static_cast<Eigen::Index>(i)) = rows[i].transpose().template cast<T>();
    }
    return kg;
  }

  /// Full knowledge-aware forward pass in evaluation mode: logits for ex.target.
  Mat<T> forward(const Example<T>& ex) const {
    const Mat<T> H = encode(ex.source, ex.segments);
    return decode_train(fuse(H, source_mask(ex.source), ex.kg), ex.target);
  }

  /// Plain encoder-decoder: encoder states are the memory, no fusion step.
  Mat<T> forward_baseline(const IdSeq& source, const IdSeq& target, const std::vector<int>& segments = {}) const {
    Memory<T> m;
    m.vectors = encode(source, segments);
    m.valid = source_mask(source);
    return decode_train(m, target);
  }

  // --------------------------------------------------------------- backward

  /// Forward + backward for one example; gradients accumulate (scaled by
  /// `weight`) into `grads`. Returns the unscaled loss.
  T forward_backward(const Example<T>& ex, const LossOptions& opt, const nn::Pass& pass, Summarizer& grads,
                     T weight = T(1)) const {
    EncodeCache ec;
    const Mat<T> H = encode(ex.source, ex.segments, pass, ec);
    const Memory<T> mem = fuse(H, ec.valid, ex.kg);
    DecodeCache dc;
    const Mat<T> logits = decode_train(mem, ex.target, pass, dc);
    auto tl = token_loss(logits, ex.target, opt.label_smoothing);
    if (weight != T(1)) tl.dlogits *= weight;
    backward(ex, ec, mem, dc, tl.dlogits, grads);
    return tl.loss;
  }

  void backward(const Example<T>& ex, const EncodeCache& ec, const Memory<T>& mem, const DecodeCache& dc,
                const Mat<T>& dlogits, Summarizer& g) const {
    Mat<T> dx = out_proj.backward(dc.hidden, dlogits, g.out_proj);
    dx = dec_ln.backward(dx, dc.ln, g.dec_ln);
    Mat<T> dmem = Mat<T>::Zero(mem.vectors.rows(), mem.vectors.cols());
    for (std::size_t l = decoder.size(); l-- > 0;) dx = decoder[l].backward(dx, dc.layers[l], g.decoder[l], dmem);
    dx = dc.drop.backward(dx);
    dec_tok.backward(dc.ids, dx, g.dec_tok);
    g.dec_pos.table.topRows(dx.rows()) += dx;

    const auto K = static_cast<Eigen::Index>(mem.kg_count);
    if (K > 0) {
      const Mat<T> dproj = dmem.topRows(K);
      g.kg_type += dproj.colwise().sum();
      fuse_proj.backward(ex.kg, dproj, g.fuse_proj);
    }
    Mat<T> dh = dmem.bottomRows(dmem.rows() - K);
    dh = enc_ln.backward(dh, ec.ln, g.enc_ln);
    for (std::size_t l = encoder.size(); l-- > 0;) dh = encoder[l].backward(dh, ec.layers[l], g.encoder[l]);
    dh = ec.drop.backward(dh);
    enc_tok.backward(ec.ids, dh, g.enc_tok);
    enc_seg.backward(ec.segments, dh, g.enc_seg);
    g.enc_pos.table.topRows(dh.rows()) += dh;
  }

  // ------------------------------------------------------------- generation

  /// Summary ids: BOS, generated tokens, and EOS when one was produced.
  /// Greedy takes the argmax per step (ties to the lowest id). Beam keeps
  /// `beam_width` hypotheses ranked by mean token log-probability. Output
  /// length (excluding BOS) never exceeds min(max_out, source content length).
  IdSeq generate(const IdSeq& source, const Mat<T>& kg, DecodeMode mode, int beam_width, std::size_t max_out,
                 const std::vector<int>& segments = {}) const {
    const Mat<T> H = encode(source, segments);
    return generate_from_memory(fuse(H, source_mask(source), kg), source, mode, beam_width, max_out);
  }

  /// Generation over externally supplied encoder states (one row per source position).
  IdSeq generate_from_states(const Mat<T>& H, const IdSeq& source, const Mat<T>& kg, DecodeMode mode, int beam_width,
                             std::size_t max_out) const {
    if (H.cols() != config.d_model || static_cast<std::size_t>(H.rows()) != source.size())
      throw invalid_argument("encoder states must be n x d_model");
    return generate_from_memory(fuse(H, source_mask(source), kg), source, mode, beam_width, max_out);
  }

  IdSeq generate_from_memory(const Memory<T>& mem, const IdSeq& source, DecodeMode mode, int beam_width,
                             std::size_t max_out) const {
    std::size_t content = 0;
    for (auto id : source)
      if (id != Vocab::pad && id != Vocab::bos && id != Vocab::eos) ++content;
    std::size_t limit = std::min(max_out, content);
    limit = std::min(limit, static_cast<std::size_t>(config.max_len - 1));
    if (mode == DecodeMode::greedy || beam_width <= 1) return greedy(mem, limit);
    return beam(mem, limit, beam_width);
  }

 private:
  Eigen::Matrix<T, 1, Eigen::Dynamic> next_log_probs(const Memory<T>& mem, const IdSeq& prefix) const {
    DecodeCache c;
    const Mat<T> h = decode_hidden(mem, prefix, nn::Pass{}, c);
    const Mat<T> last = out_proj.forward(h.bottomRows(1));
    return nn::log_softmax(last).row(0);
  }

  IdSeq greedy(const Memory<T>& mem, std::size_t limit) const {
    IdSeq out{Vocab::bos};
    for (std::size_t step = 0; step < limit; ++step) {
      const auto lp = next_log_probs(mem, out);
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < lp.size(); ++k)
        if (lp[k] > lp[best]) best = k;
      out.push_back(static_cast<TokenId>(best));
      if (best == Vocab::eos) break;
    }
    return out;
  }

  struct Hypothesis {
    IdSeq ids;
    double sum_logp = 0;
    double mean() const { return ids.size() > 1 ? sum_logp / static_cast<double>(ids.size() - 1) : 0.0; }
  };

  IdSeq beam(const Memory<T>& mem, std::size_t limit, int width) const {
    std::vector<Hypothesis> alive{{{Vocab::bos}, 0.0}};
    std::vector<Hypothesis> finished;
    for (std::size_t step = 0; step < limit && !alive.empty(); ++step) {
      struct Cand {
        double score;
        std::size_t beam;
        TokenId tok;
        double sum;
      };
      std::vector<Cand> cands;
      for (std::size_t b = 0; b < alive.size(); ++b) {
        const auto lp = next_log_probs(mem, alive[b].ids);
        const double len = static_cast<double>(alive[b].ids.size());
        for (Eigen::Index k = 0; k < lp.size(); ++k) {
          const double s = alive[b].sum_logp + static_cast<double>(lp[k]);
          cands.push_back({s / len, b, static_cast<TokenId>(k), s});
        }
      }
      std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
      std::vector<Hypothesis> next;
      for (std::size_t i = 0; i < cands.size() && i < static_cast<std::size_t>(width); ++i) {
        Hypothesis h{alive[cands[i].beam].ids, cands[i].sum};
        h.ids.push_back(cands[i].tok);
        (cands[i].tok == Vocab::eos ? finished : next).push_back(std::move(h));
      }
      alive = std::move(next);
    }
    const auto& pool = finished.empty() ? alive : finished;
    const Hypothesis* best = &pool.front();
    for (const auto& h : pool)
      if (h.mean() > best->mean()) best = &h;
    return best->ids;
  }
};

/// Reads externally exported encoder states: one whitespace-separated row per
/// source position, for use with Summarizer::generate_from_states.
inline Mat<double> parse_encoder_states(const std::string& text, const std::string& name = "encoder states") {
  std::vector<std::vector<double>> rows;
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos < line.size()) {
      const auto end = line.find_first_of(" \t", pos);
      const auto tok = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      if (!tok.empty()) row.push_back(parse_double(tok, name + ":" + std::to_string(i + 1)));
      if (end == std::string::npos) break;
      pos = end + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw format_error(name + ":" + std::to_string(i + 1) + ": expected " + std::to_string(rows.front().size()) +
                         " values, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw format_error(name + ": no rows");
  Mat<double> H(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  if (!H.allFinite()) throw format_error(name + ": non-finite value");
  return H;
}

inline Mat<double> load_encoder_states(const std::string& path) { return parse_encoder_states(read_file(path), path); }

}  // namespace katsum
