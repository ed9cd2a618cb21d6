#pragma once

// Tiny autoregressive categorical policy with hand-written backprop.
//
// Every position sees three feature groups, concatenated:
//   * the embedded prompt, one embedding per prompt slot,
//   * the embeddings of the last `window` tokens of the running context,
//   * a learned embedding of the response position.
// A gated hidden layer, a tanh mixing layer and an output projection turn
// that vector into next-token logits.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dyme/errors.hpp"
#include "dyme/vocabulary.hpp"

namespace dyme {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct PolicyConfig {
  int vocab_size = 48;
  int dim = 16;           // embedding width
  int window = 8;         // trailing context tokens seen at each position
  int hidden = 96;
  int prompt_slots = 16;  // longest prompt accepted
  int max_length = 64;    // longest response
  TokenId pad = 0;

  int feature_size() const { return (prompt_slots + window + 1) * dim; }

  /// Offsets of the parameter blocks inside the flat vector, in storage order.
  struct Layout {
    Eigen::Index embedding, position, gate_in, gate_in_bias, gate, gate_bias, mix, mix_bias, out,
        out_bias, total;
  };

  Layout layout() const {
    Layout l{};
    const Eigen::Index V = vocab_size, d = dim, H = hidden, F = feature_size();
    Eigen::Index at = 0;
    l.embedding = at, at += d * V;
    l.position = at, at += d * max_length;
    l.gate_in = at, at += H * F;
    l.gate_in_bias = at, at += H;
    l.gate = at, at += H * F;
    l.gate_bias = at, at += H;
    l.mix = at, at += H * H;
    l.mix_bias = at, at += H;
    l.out = at, at += V * H;
    l.out_bias = at, at += V;
    l.total = at;
    return l;
  }

  Eigen::Index parameter_count() const { return layout().total; }

  bool operator==(const PolicyConfig&) const = default;
};

/// Uniform draw in [0, 1) built from the top 53 bits of a 64-bit engine, so
/// sampled trajectories do not depend on the standard library's
/// distribution implementation.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// All weights of the policy in one contiguous vector. Named blocks are
/// exposed as Eigen maps over that storage; a gradient is another
/// PolicyParameters with the same config.
template <typename Scalar>
class PolicyParameters {
 public:
  using MatMap = Eigen::Map<Mat<Scalar>>;
  using ConstMatMap = Eigen::Map<const Mat<Scalar>>;
  using VecMap = Eigen::Map<Vec<Scalar>>;
  using ConstVecMap = Eigen::Map<const Vec<Scalar>>;

  PolicyParameters() = default;
  explicit PolicyParameters(const PolicyConfig& config)
      : config_(config), theta_(Vec<Scalar>::Zero(config.parameter_count())) {}

  /// Embeddings with unit variance, linear layers uniform in
  /// +-1/sqrt(fan_in), all drawn from `seed`.
  static PolicyParameters random(const PolicyConfig& config, std::uint64_t seed) {
    PolicyParameters p(config);
    std::mt19937_64 rng(seed);
    auto fill = [&](Eigen::Index from, Eigen::Index to, double bound) {
      for (Eigen::Index i = from; i < to; ++i)
        p.theta_[i] = Scalar((2.0 * uniform01(rng) - 1.0) * bound);
    };
    const auto l = config.layout();
    const double unit = std::sqrt(3.0);
    fill(l.embedding, l.gate_in, unit);
    fill(l.gate_in, l.mix, 1.0 / std::sqrt(double(config.feature_size())));
    fill(l.mix, l.out_bias + config.vocab_size, 1.0 / std::sqrt(double(config.hidden)));
    return p;
  }

  const PolicyConfig& config() const { return config_; }
  Eigen::Index size() const { return theta_.size(); }
  Vec<Scalar>& theta() { return theta_; }
  const Vec<Scalar>& theta() const { return theta_; }

  MatMap embedding() { return block(config_.layout().embedding, config_.dim, config_.vocab_size); }
  ConstMatMap embedding() const {
    return block(config_.layout().embedding, config_.dim, config_.vocab_size);
  }
  MatMap position() { return block(config_.layout().position, config_.dim, config_.max_length); }
  ConstMatMap position() const {
    return block(config_.layout().position, config_.dim, config_.max_length);
  }
  MatMap gate_in() { return block(config_.layout().gate_in, config_.hidden, config_.feature_size()); }
  ConstMatMap gate_in() const {
    return block(config_.layout().gate_in, config_.hidden, config_.feature_size());
  }
  VecMap gate_in_bias() { return vec(config_.layout().gate_in_bias, config_.hidden); }
  ConstVecMap gate_in_bias() const { return vec(config_.layout().gate_in_bias, config_.hidden); }
  MatMap gate() { return block(config_.layout().gate, config_.hidden, config_.feature_size()); }
  ConstMatMap gate() const {
    return block(config_.layout().gate, config_.hidden, config_.feature_size());
  }
  VecMap gate_bias() { return vec(config_.layout().gate_bias, config_.hidden); }
  ConstVecMap gate_bias() const { return vec(config_.layout().gate_bias, config_.hidden); }
  MatMap mix() { return block(config_.layout().mix, config_.hidden, config_.hidden); }
  ConstMatMap mix() const { return block(config_.layout().mix, config_.hidden, config_.hidden); }
  VecMap mix_bias() { return vec(config_.layout().mix_bias, config_.hidden); }
  ConstVecMap mix_bias() const { return vec(config_.layout().mix_bias, config_.hidden); }
  MatMap out() { return block(config_.layout().out, config_.vocab_size, config_.hidden); }
  ConstMatMap out() const { return block(config_.layout().out, config_.vocab_size, config_.hidden); }
  VecMap out_bias() { return vec(config_.layout().out_bias, config_.vocab_size); }
  ConstVecMap out_bias() const { return vec(config_.layout().out_bias, config_.vocab_size); }

  bool all_finite() const { return theta_.allFinite(); }

  /// Same parameters in another scalar type.
  template <typename Other>
  PolicyParameters<Other> cast() const {
    PolicyParameters<Other> out(config_);
    out.theta() = theta_.template cast<Other>();
    return out;
  }

 private:
  MatMap block(Eigen::Index at, Eigen::Index rows, Eigen::Index cols) {
    return MatMap(theta_.data() + at, rows, cols);
  }
  ConstMatMap block(Eigen::Index at, Eigen::Index rows, Eigen::Index cols) const {
    return ConstMatMap(theta_.data() + at, rows, cols);
  }
  VecMap vec(Eigen::Index at, Eigen::Index n) { return VecMap(theta_.data() + at, n); }
  ConstVecMap vec(Eigen::Index at, Eigen::Index n) const {
    return ConstVecMap(theta_.data() + at, n);
  }

  PolicyConfig config_;
  Vec<Scalar> theta_;
};

/// Deep copy used for the rollout policy and the reference policy.
template <typename Scalar>
PolicyParameters<Scalar> snapshot(const PolicyParameters<Scalar>& params) {
  return params;
}

template <typename Scalar>
struct SequenceLogProb {
  Scalar total{0};
  std::vector<Scalar> per_token;
};

template <typename Scalar>
struct Rollout {
  Tokens tokens;
  std::vector<Scalar> logprobs;  // under the sampling-time parameters

  Scalar total_logprob() const {
    Scalar s{0};
    for (Scalar v : logprobs) s += v;
    return s;
  }
};

/// log softmax of each column.
template <typename Derived>
auto log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Scalar m = logits.col(c).maxCoeff();
    const Scalar lse = m + std::log((logits.col(c).array() - m).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

namespace detail {

inline void check_tokens(std::span<const TokenId> tokens, int vocab, const char* what) {
  for (TokenId t : tokens)
    if (t < 0 || t >= vocab)
      throw InvalidInput(std::string(what) + " token id out of range: " + std::to_string(t));
}

inline void check_prompt(const PolicyConfig& cfg, std::span<const TokenId> prompt) {
  if (static_cast<int>(prompt.size()) > cfg.prompt_slots)
    throw InvalidInput("prompt longer than " + std::to_string(cfg.prompt_slots) + " slots");
  check_tokens(prompt, cfg.vocab_size, "prompt");
}

/// Prompt padded on the right to the full slot count.
inline Tokens padded_prompt(const PolicyConfig& cfg, std::span<const TokenId> prompt) {
  Tokens p(prompt.begin(), prompt.end());
  p.resize(static_cast<std::size_t>(cfg.prompt_slots), cfg.pad);
  return p;
}

/// Token seen in window slot `j` when predicting response position `t`.
inline TokenId window_token(const PolicyConfig& cfg, const Tokens& padded,
                            std::span<const TokenId> response, int t, int j) {
  const int at = cfg.prompt_slots + t - 1 - j;  // index into prompt ++ response
  if (at < 0) return cfg.pad;
  if (at < cfg.prompt_slots) return padded[static_cast<std::size_t>(at)];
  return response[static_cast<std::size_t>(at - cfg.prompt_slots)];
}

}  // namespace detail

/// Everything the backward pass needs from one forward pass over a
/// response. Column t holds the values used to predict response[t].
template <typename Scalar>
struct SequenceActivations {
  Tokens prompt;                  // padded to prompt_slots
  std::vector<Tokens> windows;    // per position, window tokens
  Vec<Scalar> prompt_features;    // stacked prompt embeddings
  Mat<Scalar> window_features;    // (window * dim) x T
  Mat<Scalar> gate_in_act;        // tanh(pre)
  Mat<Scalar> gate_act;           // sigmoid(pre)
  Mat<Scalar> hidden1, hidden2;   // H x T
  Mat<Scalar> logits;             // V x T
};

/// Forward pass over `count` positions of `response` (all of it by default).
template <typename Scalar>
SequenceActivations<Scalar> forward_sequence(const PolicyParameters<Scalar>& params,
                                             std::span<const TokenId> prompt,
                                             std::span<const TokenId> response,
                                             int count = -1) {
  const PolicyConfig& cfg = params.config();
  detail::check_prompt(cfg, prompt);
  detail::check_tokens(response, cfg.vocab_size, "response");
  const int T = count < 0 ? static_cast<int>(response.size()) : count;
  if (T > cfg.max_length) throw InvalidInput("response longer than max_length");
  const int d = cfg.dim, W = cfg.window, P = cfg.prompt_slots;

  SequenceActivations<Scalar> a;
  a.prompt = detail::padded_prompt(cfg, prompt);
  const auto E = params.embedding();
  a.prompt_features.resize(P * d);
  for (int s = 0; s < P; ++s) a.prompt_features.segment(s * d, d) = E.col(a.prompt[s]);

  a.windows.resize(T);
  a.window_features.resize(W * d, T);
  for (int t = 0; t < T; ++t) {
    a.windows[t].resize(W);
    for (int j = 0; j < W; ++j) {
      const TokenId tok = detail::window_token(cfg, a.prompt, response, t, j);
      a.windows[t][j] = tok;
      a.window_features.block(j * d, t, d, 1) = E.col(tok);
    }
  }

  const auto positions = params.position().leftCols(T);
  auto pre = [&](const auto& M, const auto& bias) {
    Mat<Scalar> z = M.middleCols(P * d, W * d) * a.window_features;
    z.noalias() += M.rightCols(d) * positions;
    const Vec<Scalar> constant = M.leftCols(P * d) * a.prompt_features + bias;
    z.colwise() += constant;
    return z;
  };
  a.gate_in_act = pre(params.gate_in(), params.gate_in_bias()).array().tanh();
  a.gate_act = (Scalar(1) + (-pre(params.gate(), params.gate_bias()).array()).exp()).inverse();
  a.hidden1 = a.gate_in_act.cwiseProduct(a.gate_act);
  a.hidden2 = ((params.mix() * a.hidden1).colwise() + params.mix_bias()).array().tanh();
  a.logits = (params.out() * a.hidden2).colwise() + params.out_bias();
  return a;
}

/// Adds the gradient of sum_t <upstream[:,t], logits[:,t]> to `grad`.
template <typename Scalar>
void backpropagate(const PolicyParameters<Scalar>& params, const SequenceActivations<Scalar>& a,
                   const Mat<Scalar>& upstream, PolicyParameters<Scalar>& grad) {
  const PolicyConfig& cfg = params.config();
  const int d = cfg.dim, W = cfg.window, P = cfg.prompt_slots;
  const Eigen::Index T = upstream.cols();

  grad.out().noalias() += upstream * a.hidden2.transpose();
  grad.out_bias() += upstream.rowwise().sum();
  const Mat<Scalar> dz2 = (params.out().transpose() * upstream)
                              .cwiseProduct((Scalar(1) - a.hidden2.array().square()).matrix());
  grad.mix().noalias() += dz2 * a.hidden1.transpose();
  grad.mix_bias() += dz2.rowwise().sum();
  const Mat<Scalar> dh1 = params.mix().transpose() * dz2;
  const Mat<Scalar> dpre_in =
      (dh1.array() * a.gate_act.array() * (Scalar(1) - a.gate_in_act.array().square())).matrix();
  const Mat<Scalar> dpre_gate =
      (dh1.array() * a.gate_in_act.array() * a.gate_act.array() * (Scalar(1) - a.gate_act.array()))
          .matrix();

  const auto positions = params.position().leftCols(T);
  Vec<Scalar> dprompt = Vec<Scalar>::Zero(P * d);
  Mat<Scalar> dwindow = Mat<Scalar>::Zero(W * d, T);
  Mat<Scalar> dpos = Mat<Scalar>::Zero(d, T);
  auto layer = [&](const auto& M, auto&& dM, auto&& dbias, const Mat<Scalar>& dpre) {
    const Vec<Scalar> summed = dpre.rowwise().sum();
    dM.leftCols(P * d).noalias() += summed * a.prompt_features.transpose();
    dM.middleCols(P * d, W * d).noalias() += dpre * a.window_features.transpose();
    dM.rightCols(d).noalias() += dpre * positions.transpose();
    dbias += summed;
    dprompt.noalias() += M.leftCols(P * d).transpose() * summed;
    dwindow.noalias() += M.middleCols(P * d, W * d).transpose() * dpre;
    dpos.noalias() += M.rightCols(d).transpose() * dpre;
  };
  layer(params.gate_in(), grad.gate_in(), grad.gate_in_bias(), dpre_in);
  layer(params.gate(), grad.gate(), grad.gate_bias(), dpre_gate);

  auto dE = grad.embedding();
  for (int s = 0; s < P; ++s) dE.col(a.prompt[s]) += dprompt.segment(s * d, d);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int j = 0; j < W; ++j) dE.col(a.windows[t][j]) += dwindow.block(j * d, t, d, 1);
  grad.position().leftCols(T) += dpos;
}

/// Next-token logits after `prompt` followed by `prefix`.
template <typename Scalar>
Vec<Scalar> forward_logits(const PolicyParameters<Scalar>& params, std::span<const TokenId> prompt,
                           std::span<const TokenId> prefix) {
  const PolicyConfig& cfg = params.config();
  if (static_cast<int>(prefix.size()) >= cfg.max_length)
    throw InvalidInput("prefix leaves no room for another token");
  detail::check_tokens(prefix, cfg.vocab_size, "prefix");
  // Position t = |prefix| only reads prefix tokens, so a dummy last entry
  // is never consulted.
  Tokens extended(prefix.begin(), prefix.end());
  extended.push_back(cfg.pad);
  auto a = forward_sequence(params, prompt, std::span<const TokenId>(extended));
  return a.logits.col(a.logits.cols() - 1);
}

template <typename Scalar>
SequenceLogProb<Scalar> sequence_logprob(const PolicyParameters<Scalar>& params,
                                         std::span<const TokenId> prompt,
                                         std::span<const TokenId> response) {
  if (response.empty()) throw InvalidInput("empty response");
  const auto a = forward_sequence(params, prompt, response);
  const Mat<Scalar> lp = log_softmax(a.logits);
  SequenceLogProb<Scalar> out;
  out.per_token.resize(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    out.per_token[t] = lp(response[t], static_cast<Eigen::Index>(t));
    out.total += out.per_token[t];
  }
  return out;
}

/// Adds weight * d log p(response | prompt) / d theta to `grad` and returns
/// the log-probability.
template <typename Scalar>
Scalar accumulate_logprob_gradient(const PolicyParameters<Scalar>& params,
                                   std::span<const TokenId> prompt,
                                   std::span<const TokenId> response, Scalar weight,
                                   PolicyParameters<Scalar>& grad) {
  if (response.empty()) throw InvalidInput("empty response");
  const auto a = forward_sequence(params, prompt, response);
  const Mat<Scalar> lp = log_softmax(a.logits);
  Mat<Scalar> upstream = -weight * lp.array().exp().matrix();
  Scalar total{0};
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto col = static_cast<Eigen::Index>(t);
    upstream(response[t], col) += weight;
    total += lp(response[t], col);
  }
  backpropagate(params, a, upstream, grad);
  return total;
}

template <typename Scalar>
PolicyParameters<Scalar> logprob_gradient(const PolicyParameters<Scalar>& params,
                                          std::span<const TokenId> prompt,
                                          std::span<const TokenId> response) {
  PolicyParameters<Scalar> grad(params.config());
  accumulate_logprob_gradient(params, prompt, response, Scalar(1), grad);
  return grad;
}

/// Draws K responses token by token. Each stops at `eos` or after
/// max_length tokens. With `greedy` every step takes the argmax and the
/// seed is irrelevant. Cached log-probs are untempered.
template <typename Scalar>
std::vector<Rollout<Scalar>> sample_group(const PolicyParameters<Scalar>& params,
                                          std::span<const TokenId> prompt, int K,
                                          double temperature, std::uint64_t seed, TokenId eos,
                                          bool greedy = false) {
  const PolicyConfig& cfg = params.config();
  if (K < 1) throw InvalidInput("group size must be positive");
  if (!(temperature > 0.0)) throw InvalidInput("temperature must be positive");
  detail::check_prompt(cfg, prompt);
  const int d = cfg.dim, W = cfg.window, P = cfg.prompt_slots;
  const Tokens padded = detail::padded_prompt(cfg, prompt);
  const auto E = params.embedding();

  Vec<Scalar> prompt_features(P * d);
  for (int s = 0; s < P; ++s) prompt_features.segment(s * d, d) = E.col(padded[s]);
  const Vec<Scalar> in_const =
      params.gate_in().leftCols(P * d) * prompt_features + params.gate_in_bias();
  const Vec<Scalar> gate_const =
      params.gate().leftCols(P * d) * prompt_features + params.gate_bias();

  std::mt19937_64 rng(seed);
  std::vector<Rollout<Scalar>> group(static_cast<std::size_t>(K));
  std::vector<int> active(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) active[k] = k;

  for (int t = 0; t < cfg.max_length && !active.empty(); ++t) {
    const auto n = static_cast<Eigen::Index>(active.size());
    Mat<Scalar> window(W * d, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Tokens& r = group[active[c]].tokens;
      for (int j = 0; j < W; ++j)
        window.block(j * d, c, d, 1) = E.col(detail::window_token(cfg, padded, r, t, j));
    }
    auto pre = [&](const auto& M, const Vec<Scalar>& constant) {
      Mat<Scalar> z = M.middleCols(P * d, W * d) * window;
      z.colwise() += constant + M.rightCols(d) * params.position().col(t);
      return z;
    };
    const Mat<Scalar> h1 =
        pre(params.gate_in(), in_const).array().tanh() *
        (Scalar(1) + (-pre(params.gate(), gate_const).array()).exp()).inverse();
    const Mat<Scalar> h2 = ((params.mix() * h1).colwise() + params.mix_bias()).array().tanh();
    const Mat<Scalar> logits = (params.out() * h2).colwise() + params.out_bias();
    const Mat<Scalar> lp = log_softmax(logits);

    std::vector<int> still;
    for (Eigen::Index c = 0; c < n; ++c) {
      Eigen::Index tok = 0;
      if (greedy) {
        logits.col(c).maxCoeff(&tok);
      } else {
        const Vec<Scalar> scaled = logits.col(c) / Scalar(temperature);
        const Vec<Scalar> p = log_softmax(scaled).array().exp();
        double u = uniform01(rng), acc = 0.0;
        tok = p.size() - 1;
        for (Eigen::Index v = 0; v < p.size(); ++v) {
          acc += static_cast<double>(p[v]);
          if (u < acc) {
            tok = v;
            break;
          }
        }
      }
      Rollout<Scalar>& r = group[active[c]];
      r.tokens.push_back(static_cast<TokenId>(tok));
      r.logprobs.push_back(lp(tok, c));
      if (static_cast<TokenId>(tok) != eos) still.push_back(active[c]);
    }
    active.swap(still);
  }
  return group;
}

}  // namespace dyme
