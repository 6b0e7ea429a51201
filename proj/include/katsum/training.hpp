#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "katsum/checkpoint.hpp"
#include "katsum/common.hpp"
#include "katsum/corpus.hpp"
#include "katsum/rouge.hpp"
#include "katsum/seq2seq.hpp"

namespace katsum {

struct ScheduleSpec {
  double lr_tilde = 1e-3;
  long warmup = 1;

  void validate() const {
    if (!(lr_tilde > 0)) throw config_error("schedule lr_tilde must be > 0");
    if (warmup < 1) throw config_error("schedule warmup must be >= 1");
  }
};

/// lr = lr_tilde * min(step^-0.5, step * warmup^-1.5): linear ramp up to
/// `warmup`, inverse-square-root decay after it.
inline double lr_schedule(long step, const ScheduleSpec& spec) {
  if (step < 1) throw invalid_argument("lr_schedule: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(spec.warmup);
  return spec.lr_tilde * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

struct TrainConfig {
  ScheduleSpec encoder{2e-3, 20000};
  ScheduleSpec decoder{0.1, 10000};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-9;
  int accumulate_every = 5;
  int batch_size = 1;
  long checkpoint_every = 2500;
  long total_steps = 200000;  ///< optimizer steps, not micro-batches
  long log_every = 100;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (accumulate_every < 1 || batch_size < 1 || checkpoint_every < 1 || total_steps < 0 || log_every < 1)
      throw config_error("training counts must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw config_error("Adam betas must be in [0, 1)");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) throw config_error("label_smoothing must be in [0, 1)");
  }
};

/// Adam over one parameter group.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Mat<T>*>& params, const std::vector<Mat<T>*>& grads, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
        v_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const T a = static_cast<T>(lr), e = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = *grads[i];
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseAbs2();
      params[i]->array() -= a * (m.array() / c1) / ((v.array() / c2).sqrt() + e);
    }
  }

  long steps() const { return t_; }

  void save(Archive& ar, const std::string& prefix, const std::vector<std::string>& names) const {
    ar.strings[prefix + ".t"] = std::to_string(t_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      ar.tensors[prefix + ".m/" + names[i]] = m_[i].template cast<double>();
      ar.tensors[prefix + ".v/" + names[i]] = v_[i].template cast<double>();
    }
  }

  void load(const Archive& ar, const std::string& prefix, const std::vector<std::string>& names) {
    t_ = std::stol(ar.string(prefix + ".t"));
    m_.clear();
    v_.clear();
    if (t_ == 0) return;
    for (const auto& n : names) {
      m_.push_back(ar.tensor(prefix + ".m/" + n).template cast<T>());
      v_.push_back(ar.tensor(prefix + ".v/" + n).template cast<T>());
    }
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-9;
  long t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

inline std::string model_config_text(const ModelConfig& c) {
  return "d_model=" + std::to_string(c.d_model) + "\nn_heads=" + std::to_string(c.n_heads) +
         "\nenc_layers=" + std::to_string(c.enc_layers) + "\ndec_layers=" + std::to_string(c.dec_layers) +
         "\nd_ff=" + std::to_string(c.d_ff) + "\nmax_len=" + std::to_string(c.max_len) + "\ndropout=" + exact(c.dropout) +
         "\nvocab_size=" + std::to_string(c.vocab_size) + "\nkg_dim=" + std::to_string(c.kg_dim) + "\n";
}

inline ModelConfig parse_model_config_text(const std::string& text) {
  ModelConfig c;
  for (const auto& line : split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw format_error("model config line without '='");
    const auto k = line.substr(0, eq), v = line.substr(eq + 1);
    auto i = [&] { return static_cast<int>(parse_int(v, "model config " + k)); };
    if (k == "d_model") c.d_model = i();
    else if (k == "n_heads") c.n_heads = i();
    else if (k == "enc_layers") c.enc_layers = i();
    else if (k == "dec_layers") c.dec_layers = i();
    else if (k == "d_ff") c.d_ff = i();
    else if (k == "max_len") c.max_len = i();
    else if (k == "dropout") c.dropout = parse_double(v, "model config dropout");
    else if (k == "vocab_size") c.vocab_size = i();
    else if (k == "kg_dim") c.kg_dim = i();
    else throw format_error("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

template <typename T>
void store_model(Archive& ar, Summarizer<T>& model, const Vocab& vocab) {
  ar.strings["model.config"] = model_config_text(model.config);
  ar.strings["model.vocab"] = vocab.serialize();
  model.visit([&](const std::string& n, Mat<T>& m, ParamGroup) { ar.tensors["param/" + n] = m.template cast<double>(); });
}

template <typename T>
Summarizer<T> restore_model(const Archive& ar) {
  Summarizer<T> model(parse_model_config_text(ar.string("model.config")));
  model.visit([&](const std::string& n, Mat<T>& m, ParamGroup) {
    const auto& t = ar.tensor("param/" + n);
    if (t.rows() != m.rows() || t.cols() != m.cols()) throw format_error("checkpoint tensor '" + n + "' has wrong shape");
    m = t.template cast<T>();
  });
  return model;
}

/// Model-only checkpoint (no optimizer state).
template <typename T>
void save_model(const std::string& path, Summarizer<T>& model, const Vocab& vocab) {
  Archive ar;
  store_model(ar, model, vocab);
  ar.save(path);
}

template <typename T>
std::pair<Summarizer<T>, Vocab> load_model(const std::string& path) {
  const auto ar = Archive::load(path);
  return {restore_model<T>(ar), Vocab::parse(ar.string("model.vocab"))};
}

/// Optimizer-step loop: two Adam optimizers (encoder group, fusion+decoder
/// group) on their own warmup schedules, gradient accumulation over
/// `accumulate_every` micro-batches, seed-determined data order.
template <typename T = double>
class Trainer {
 public:
  Trainer(Summarizer<T> model, std::vector<Example<T>> data, const TrainConfig& cfg)
      : model_(std::move(model)),
        grads_(model_.zeros_like()),
        data_(std::move(data)),
        cfg_(cfg),
        enc_opt_(cfg.beta1, cfg.beta2, cfg.adam_eps),
        dec_opt_(cfg.beta1, cfg.beta2, cfg.adam_eps),
        order_rng_(cfg.seed * 0x9e3779b97f4a7c15ULL + 11),
        dropout_rng_(cfg.seed * 0x9e3779b97f4a7c15ULL + 23) {
    cfg_.validate();
    if (data_.empty()) throw invalid_argument("Trainer: no training examples");
    collect();
  }

  Summarizer<T>& model() { return model_; }
  const Summarizer<T>& model() const { return model_; }
  long step() const { return step_; }
  long micro_batches() const { return micro_batches_; }
  const TrainConfig& config() const { return cfg_; }

  double lr_encoder() const { return lr_schedule(std::max(1L, step_), cfg_.encoder); }
  double lr_decoder() const { return lr_schedule(std::max(1L, step_), cfg_.decoder); }

  /// One optimizer step. Returns the mean micro-batch loss.
  double train_step() {
    const nn::Pass pass{true, model_.config.dropout, &dropout_rng_};
    const LossOptions opt{cfg_.label_smoothing};
    const T weight = static_cast<T>(1.0 / (cfg_.accumulate_every * cfg_.batch_size));
    double total = 0;
    for (int a = 0; a < cfg_.accumulate_every; ++a) {
      for (int b = 0; b < cfg_.batch_size; ++b)
        total += static_cast<double>(model_.forward_backward(data_[next_index()], opt, pass, grads_, weight));
      ++micro_batches_;
    }
    const double loss = total / (cfg_.accumulate_every * cfg_.batch_size);
    if (!std::isfinite(loss)) throw numeric_error("non-finite training loss at optimizer step " + std::to_string(step_ + 1));
    ++step_;
    enc_opt_.step(enc_params_, enc_grads_, lr_schedule(step_, cfg_.encoder));
    dec_opt_.step(dec_params_, dec_grads_, lr_schedule(step_, cfg_.decoder));
    grads_.visit([](const std::string&, Mat<T>& m, ParamGroup) { m.setZero(); });
    return loss;
  }

  /// Everything needed to resume: parameters, both optimizer states, data order and RNGs.
  Archive state(const Vocab& vocab) {
    Archive ar;
    store_model(ar, model_, vocab);
    enc_opt_.save(ar, "adam.encoder", enc_names_);
    dec_opt_.save(ar, "adam.decoder", dec_names_);
    std::string order;
    for (auto i : order_) order += std::to_string(i) + " ";
    ar.strings["trainer.order"] = order;
    ar.strings["trainer.counters"] = std::to_string(step_) + " " + std::to_string(micro_batches_) + " " +
                                     std::to_string(cursor_);
    ar.strings["trainer.order_rng"] = order_rng_.state();
    ar.strings["trainer.dropout_rng"] = dropout_rng_.state();
    return ar;
  }

  void save(const std::string& path, const Vocab& vocab) { state(vocab).save(path); }

  void restore(const Archive& ar) {
    Summarizer<T> m = restore_model<T>(ar);
    if (!(m.config == model_.config)) throw format_error("checkpoint model config does not match trainer");
    model_ = std::move(m);
    collect();
    enc_opt_.load(ar, "adam.encoder", enc_names_);
    dec_opt_.load(ar, "adam.decoder", dec_names_);
    order_.clear();
    std::istringstream os(ar.string("trainer.order"));
    for (std::size_t i; os >> i;) order_.push_back(i);
    std::istringstream cs(ar.string("trainer.counters"));
    cs >> step_ >> micro_batches_ >> cursor_;
    if (!cs) throw format_error("corrupt trainer counters");
    order_rng_.restore(ar.string("trainer.order_rng"));
    dropout_rng_.restore(ar.string("trainer.dropout_rng"));
  }

  void load(const std::string& path) { restore(Archive::load(path)); }

 private:
  void collect() {
    enc_params_.clear(), enc_grads_.clear(), dec_params_.clear(), dec_grads_.clear();
    enc_names_.clear(), dec_names_.clear();
    auto ps = model_.parameters();
    auto gs = grads_.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i].group == ParamGroup::encoder) {
        enc_params_.push_back(ps[i].tensor);
        enc_grads_.push_back(gs[i].tensor);
        enc_names_.push_back(ps[i].name);
      } else {
        dec_params_.push_back(ps[i].tensor);
        dec_grads_.push_back(gs[i].tensor);
        dec_names_.push_back(ps[i].name);
      }
    }
  }

  std::size_t next_index() {
    if (cursor_ >= order_.size()) {
      order_.resize(data_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      order_rng_.shuffle(order_.begin(), order_.end());
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  Summarizer<T> model_;
  Summarizer<T> grads_;
  std::vector<Example<T>> data_;
  TrainConfig cfg_;
  Adam<T> enc_opt_, dec_opt_;
  std::vector<Mat<T>*> enc_params_, enc_grads_, dec_params_, dec_grads_;
  std::vector<std::string> enc_names_, dec_names_;
  Rng order_rng_, dropout_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  long step_ = 0;
  long micro_batches_ = 0;
};

struct TraceRow {
  long step = 0;
  double loss = 0;
  double lr_e = 0;
  double lr_d = 0;
  std::optional<rouge::Report> rouge;
};

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = "step,loss,lr_e,lr_d,rouge1,rouge2,rougeL\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + exact(r.loss) + "," + exact(r.lr_e) + "," + exact(r.lr_d) + ",";
    if (r.rouge) out += exact(r.rouge->rouge1) + "," + exact(r.rouge->rouge2) + "," + exact(r.rouge->rougeL);
    else out += ",,";
    out += "\n";
  }
  return out;
}

template <typename T = double>
struct TrainHooks {
  /// Validation ROUGE for checkpoint selection; may be empty.
  std::function<rouge::Report(const Summarizer<T>&)> validate;
  /// Called for every logged row.
  std::function<void(const TraceRow&)> on_row;
  /// Called at every checkpoint row (after on_row) with the trainer, to persist state.
  std::function<void(Trainer<T>&, const TraceRow&)> on_checkpoint;
  /// Called after a non-finite loss, before the error propagates.
  std::function<void(Trainer<T>&)> on_diverged;
  /// Stop early once this returns true (checked after each log/checkpoint row).
  std::function<bool(const TraceRow&)> stop;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  long best_step = 0;
  double best_rouge1 = -1;
};

/// Runs the trainer up to cfg.total_steps optimizer steps, logging every
/// log_every steps and validating/checkpointing every checkpoint_every steps
/// and at the last step.
template <typename T>
TrainResult train_summarizer(Trainer<T>& trainer, const TrainHooks<T>& hooks) {
  TrainResult res;
  const auto& cfg = trainer.config();
  double window = 0;
  long window_n = 0;
  while (trainer.step() < cfg.total_steps) {
    double loss;
    try {
      loss = trainer.train_step();
    } catch (const Error& e) {
      if (e.kind() == "numeric" && hooks.on_diverged) hooks.on_diverged(trainer);
      throw;
    }
    window += loss;
    ++window_n;
    const long s = trainer.step();
    const bool ckpt = s % cfg.checkpoint_every == 0 || s == cfg.total_steps;
    if (s % cfg.log_every == 0 || ckpt || s == cfg.total_steps) {
      TraceRow row{s, window / window_n, trainer.lr_encoder(), trainer.lr_decoder(), std::nullopt};
      window = 0;
      window_n = 0;
      if (ckpt) {
        if (hooks.validate) {
          row.rouge = hooks.validate(trainer.model());
          if (row.rouge->rouge1 > res.best_rouge1) {
            res.best_rouge1 = row.rouge->rouge1;
            res.best_step = s;
          }
        }
      }
      res.trace.push_back(row);
      if (hooks.on_row) hooks.on_row(row);
      if (ckpt && hooks.on_checkpoint) hooks.on_checkpoint(trainer, row);
      if (hooks.stop && hooks.stop(row)) break;
    }
  }
  return res;
}

}  // namespace katsum
