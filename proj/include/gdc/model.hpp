// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gdc/rng.hpp"

namespace gdc {

using TokenId = std::uint32_t;

/// Ordered set of distinct symbols, one of which terminates sequences.
class Vocab {
 public:
  Vocab(std::vector<std::string> tokens, std::size_t eos_index);

  std::size_t size() const { return tokens_.size(); }
  /// Number of non-eos symbols.
  std::size_t content_size() const { return tokens_.size() - 1; }
  TokenId eos() const { return static_cast<TokenId>(eos_); }
  const std::string& symbol(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<TokenId> find(std::string_view symbol) const;

  /// Dense index over non-eos tokens, used for state arithmetic.
  std::size_t content_index(TokenId id) const { return id < eos_ ? id : id - 1; }
  TokenId content_token(std::size_t index) const {
    return static_cast<TokenId>(index < eos_ ? index : index + 1);
  }

  /// Greedy longest-match segmentation of free text into non-eos tokens.
  /// Characters that start no symbol (whitespace, punctuation) are skipped.
  std::vector<TokenId> tokenize(std::string_view text) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const = default;

 private:
  std::vector<std::string> tokens_;
  std::size_t eos_;
};

/// An eos-terminated token string.
class Sequence {
 public:
  /// Appends eos to `content`; throws if `content` holds eos or unknown ids.
  static Sequence from_content(const Vocab& vocab, std::vector<TokenId> content);
  /// `ids` must end with the single eos.
  static Sequence from_ids(const Vocab& vocab, std::vector<TokenId> ids);
  /// Tokenizes `text` (see Vocab::tokenize); an empty text is the empty sequence.
  static Sequence parse(const Vocab& vocab, std::string_view text);

  const std::vector<TokenId>& token_ids() const { return ids_; }
  std::span<const TokenId> content() const { return {ids_.data(), ids_.size() - 1}; }
  /// Number of tokens before eos.
  std::size_t length() const { return ids_.size() - 1; }
  /// Symbols joined by single spaces; parse() reads it back.
  const std::string& text() const { return text_; }

  bool operator==(const Sequence& other) const { return ids_ == other.ids_; }
  bool operator<(const Sequence& other) const { return ids_ < other.ids_; }

 private:
  Sequence(std::vector<TokenId> ids, std::string text)
      : ids_(std::move(ids)), text_(std::move(text)) {}

  std::vector<TokenId> ids_;
  std::string text_;
};

/// Conditioning input. The empty text is the unconditional context.
struct Context {
  std::string text;

  bool operator==(const Context&) const = default;
  auto operator<=>(const Context&) const = default;
};

/// Anything that assigns a log-score to sequences over a fixed vocabulary and
/// horizon. Implementations must be safe to call concurrently.
class PositiveScorer {
 public:
  virtual ~PositiveScorer() = default;

  virtual const Vocab& vocab() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual std::vector<double> log_score(std::span<const Sequence> sequences,
                                        const Context& context) const = 0;
};

struct SampledSequence {
  Sequence sequence;
  double log_prob;
};

enum class ModelKind { tabular, softmax_parametric };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

/// Autoregressive distribution over eos-terminated sequences of at most
/// `horizon()` content tokens; eos is forced once the horizon is reached, so
/// the sequence space is finite and every context's distribution sums to one.
///
/// Next-token distributions are conditioned on a state: the last
/// min(order, prefix length) tokens. `order >= horizon - 1` conditions on the
/// full prefix.
///
/// Tabular models store explicit next-token probabilities per (context, state).
/// Contexts must be listed in the model's context table, except that a table
/// holding only the empty context serves every context.
///
/// Softmax models store unconstrained logits per state and, when built with
/// `context_copy`, a second logit table whose entry for token v is added
/// whenever v occurs in the context text. The copy table is what lets one
/// parameter set generalize across contexts, seq2seq style.
class AutoregressiveModel final : public PositiveScorer {
 public:
  /// `probabilities[c]` is a row-major (state x vocab) table for `contexts[c]`.
  static AutoregressiveModel tabular(Vocab vocab, std::size_t horizon, std::size_t order,
                                     std::vector<std::string> contexts,
                                     std::vector<std::vector<double>> probabilities);

  /// Logits drawn i.i.d. N(0, scale^2); eos logits are shifted by `eos_bias`.
  static AutoregressiveModel random_softmax(Vocab vocab, std::size_t horizon, std::size_t order,
                                            bool context_copy, double scale, double eos_bias,
                                            Rng& rng);

  /// Softmax model with explicit (state x vocab) logits.
  static AutoregressiveModel softmax(Vocab vocab, std::size_t horizon, std::size_t order,
                                     std::vector<double> logits,
                                     std::vector<double> copy_logits = {});

  const Vocab& vocab() const override { return vocab_; }
  std::size_t horizon() const override { return horizon_; }
  ModelKind kind() const { return kind_; }
  std::size_t order() const { return order_; }
  bool frozen() const { return frozen_; }
  bool has_context_copy() const { return context_copy_; }
  std::size_t state_count() const { return state_count_; }
  const std::vector<std::string>& contexts() const { return contexts_; }

  /// Ancestral sampling. Each returned log_prob is the value log_score would
  /// give the same sequence.
  std::vector<SampledSequence> sample(const Context& context, std::size_t n, Rng& rng) const;

  std::vector<double> log_score(std::span<const Sequence> sequences,
                                const Context& context) const override;
  double log_prob(const Sequence& sequence, const Context& context) const;

  /// Probabilities of the next token after `prefix` (content tokens only).
  std::vector<double> next_token_probabilities(std::span<const TokenId> prefix,
                                               const Context& context) const;

  /// d log pi(x|c) / d theta, laid out like `parameters()`.
  std::vector<double> grad_log_score(const Sequence& sequence, const Context& context) const;

  /// grad += scale * d log pi(x|c) / d theta, touching only visited states.
  void accumulate_grad_log_score(const Sequence& sequence, const Context& context,
                                 double scale, std::span<double> grad) const;

  /// Flat parameter vector of a softmax model: logits, then copy logits.
  std::span<const double> parameters() const;
  std::size_t parameter_count() const { return parameters_.size(); }

  /// Writable view of the parameters; rejects frozen and tabular models.
  std::span<double> mutable_parameters();

  /// theta += step * direction; rejects frozen and tabular models.
  void apply_update(double step, std::span<const double> direction);

  AutoregressiveModel clone(bool freeze) const;

  nlohmann::json to_json() const;
  static AutoregressiveModel from_json(const nlohmann::json& j);

 private:
  AutoregressiveModel(Vocab vocab, std::size_t horizon, std::size_t order, ModelKind kind);

  struct ContextView {
    std::size_t table = 0;
    std::vector<double> copy_mask;
  };

  ContextView resolve(const Context& context) const;
  std::size_t state_of(std::span<const TokenId> prefix) const;
  /// Log next-token probabilities at `state` into `out` (size vocab).
  void step_log_probs(const ContextView& view, std::size_t state, std::span<double> out) const;
  void check_sequence(const Sequence& sequence) const;
  void require_tunable(const char* op) const;

  Vocab vocab_;
  std::size_t horizon_;
  std::size_t order_;
  ModelKind kind_;
  bool frozen_ = false;
  std::size_t state_count_ = 0;
  std::vector<std::size_t> state_offsets_;

  // tabular
  std::vector<std::string> contexts_;
  std::vector<std::vector<double>> probabilities_;
  std::vector<std::vector<double>> log_probabilities_;

  // softmax; parameters_ holds logits followed by copy logits
  std::vector<double> parameters_;
  bool context_copy_ = false;
};

}  // namespace gdc
