// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "gdc/error.hpp"
#include "gdc/kernels.hpp"

namespace gdc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxTableEntries = std::size_t{1} << 25;
constexpr int kFormatVersion = 1;

template <class T>
T json_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("model document is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model document field '") + key + "': " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens, std::size_t eos_index)
    : tokens_(std::move(tokens)), eos_(eos_index) {
  if (tokens_.empty()) throw InvalidArgument("vocabulary must not be empty");
  if (eos_ >= tokens_.size()) throw InvalidArgument("eos index out of range");
  std::set<std::string> seen;
  for (const auto& t : tokens_) {
    if (t.empty()) throw InvalidArgument("vocabulary symbols must be non-empty");
    if (!seen.insert(t).second) throw InvalidArgument("duplicate vocabulary symbol: " + t);
  }
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == symbol) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

std::vector<TokenId> Vocab::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best_len = 0;
    TokenId best = 0;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i == eos_) continue;
      const auto& t = tokens_[i];
      if (t.size() > best_len && text.substr(pos, t.size()) == t) {
        best_len = t.size();
        best = static_cast<TokenId>(i);
      }
    }
    if (best_len == 0) {
      ++pos;
    } else {
      out.push_back(best);
      pos += best_len;
    }
  }
  return out;
}

nlohmann::json Vocab::to_json() const { return {{"tokens", tokens_}, {"eos", eos_}}; }

Vocab Vocab::from_json(const nlohmann::json& j) {
  return Vocab(json_get<std::vector<std::string>>(j, "tokens"), json_get<std::size_t>(j, "eos"));
}

// ---------------------------------------------------------------------------
// Sequence

Sequence Sequence::from_content(const Vocab& vocab, std::vector<TokenId> content) {
  std::string text;
  for (TokenId id : content) {
    if (id >= vocab.size()) throw InvalidArgument("token id out of vocabulary");
    if (id == vocab.eos()) throw InvalidArgument("eos inside sequence content");
    if (!text.empty()) text += ' ';
    text += vocab.symbol(id);
  }
  content.push_back(vocab.eos());
  return Sequence(std::move(content), std::move(text));
}

Sequence Sequence::from_ids(const Vocab& vocab, std::vector<TokenId> ids) {
  if (ids.empty() || ids.back() != vocab.eos()) {
    throw InvalidArgument("sequence must end with eos");
  }
  ids.pop_back();
  return from_content(vocab, std::move(ids));
}

Sequence Sequence::parse(const Vocab& vocab, std::string_view text) {
  return from_content(vocab, vocab.tokenize(text));
}

// ---------------------------------------------------------------------------
// AutoregressiveModel

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::tabular ? "tabular" : "softmax_parametric";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "tabular") return ModelKind::tabular;
  if (name == "softmax_parametric") return ModelKind::softmax_parametric;
  throw ConfigError("unknown model kind: " + std::string(name));
}

AutoregressiveModel::AutoregressiveModel(Vocab vocab, std::size_t horizon, std::size_t order,
                                         ModelKind kind)
    : vocab_(std::move(vocab)), horizon_(horizon), order_(order), kind_(kind) {
  if (horizon_ == 0) throw InvalidArgument("horizon must be positive");
  const std::size_t depth = std::min(order_, horizon_ - 1);
  const std::size_t base = vocab_.content_size();
  state_offsets_.assign(depth + 2, 0);
  std::size_t power = 1;
  for (std::size_t m = 0; m <= depth; ++m) {
    state_offsets_[m + 1] = state_offsets_[m] + power;
    if (state_offsets_[m + 1] * vocab_.size() > kMaxTableEntries) {
      throw InvalidArgument("model state table too large; lower the order or horizon");
    }
    power *= base;
  }
  state_count_ = state_offsets_.back();
}

AutoregressiveModel AutoregressiveModel::tabular(Vocab vocab, std::size_t horizon,
                                                 std::size_t order,
                                                 std::vector<std::string> contexts,
                                                 std::vector<std::vector<double>> probabilities) {
  AutoregressiveModel m(std::move(vocab), horizon, order, ModelKind::tabular);
  if (contexts.empty() || contexts.size() != probabilities.size()) {
    throw InvalidArgument("tabular model needs one probability table per context");
  }
  if (std::set<std::string>(contexts.begin(), contexts.end()).size() != contexts.size()) {
    throw InvalidArgument("duplicate context in tabular model");
  }
  const std::size_t v = m.vocab_.size();
  for (const auto& table : probabilities) {
    if (table.size() != m.state_count_ * v) {
      throw InvalidArgument("tabular probability table has wrong size");
    }
    for (std::size_t s = 0; s < m.state_count_; ++s) {
      double total = 0.0;
      for (std::size_t t = 0; t < v; ++t) {
        const double p = table[s * v + t];
        if (!(p >= 0.0) || !std::isfinite(p)) {
          throw InvalidArgument("tabular probabilities must be finite and non-negative");
        }
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        throw InvalidArgument("tabular next-token probabilities must sum to 1");
      }
    }
  }
  m.contexts_ = std::move(contexts);
  m.probabilities_ = std::move(probabilities);
  m.log_probabilities_.reserve(m.probabilities_.size());
  for (const auto& table : m.probabilities_) {
    std::vector<double> logs(table.size());
    std::transform(table.begin(), table.end(), logs.begin(),
                   [](double p) { return p > 0.0 ? std::log(p) : kNegInf; });
    m.log_probabilities_.push_back(std::move(logs));
  }
  return m;
}

AutoregressiveModel AutoregressiveModel::softmax(Vocab vocab, std::size_t horizon,
                                                 std::size_t order, std::vector<double> logits,
                                                 std::vector<double> copy_logits) {
  AutoregressiveModel m(std::move(vocab), horizon, order, ModelKind::softmax_parametric);
  const std::size_t n = m.state_count_ * m.vocab_.size();
  if (logits.size() != n) throw InvalidArgument("logit table has wrong size");
  if (!copy_logits.empty() && copy_logits.size() != n) {
    throw InvalidArgument("copy logit table has wrong size");
  }
  m.context_copy_ = !copy_logits.empty();
  m.parameters_ = std::move(logits);
  m.parameters_.insert(m.parameters_.end(), copy_logits.begin(), copy_logits.end());
  for (double x : m.parameters_) {
    if (!std::isfinite(x)) throw InvalidArgument("logits must be finite");
  }
  return m;
}

AutoregressiveModel AutoregressiveModel::random_softmax(Vocab vocab, std::size_t horizon,
                                                        std::size_t order, bool context_copy,
                                                        double scale, double eos_bias, Rng& rng) {
  AutoregressiveModel m(std::move(vocab), horizon, order, ModelKind::softmax_parametric);
  const std::size_t v = m.vocab_.size();
  std::vector<double> logits(m.state_count_ * v);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] = scale * rng.normal() + (i % v == m.vocab_.eos() ? eos_bias : 0.0);
  }
  std::vector<double> copy;
  if (context_copy) copy.assign(logits.size(), 0.0);
  return softmax(m.vocab_, horizon, order, std::move(logits), std::move(copy));
}

AutoregressiveModel::ContextView AutoregressiveModel::resolve(const Context& context) const {
  ContextView view;
  if (kind_ == ModelKind::tabular) {
    if (contexts_.size() == 1 && contexts_.front().empty()) return view;
    const auto it = std::find(contexts_.begin(), contexts_.end(), context.text);
    if (it == contexts_.end()) {
      throw InvalidArgument("context not in model table: '" + context.text + "'");
    }
    view.table = static_cast<std::size_t>(it - contexts_.begin());
  } else if (context_copy_) {
    view.copy_mask.assign(vocab_.size(), 0.0);
    for (TokenId id : vocab_.tokenize(context.text)) view.copy_mask[id] = 1.0;
  }
  return view;
}

std::size_t AutoregressiveModel::state_of(std::span<const TokenId> prefix) const {
  const std::size_t m = std::min(order_, prefix.size());
  const std::size_t base = vocab_.content_size();
  std::size_t value = 0;
  for (std::size_t i = prefix.size() - m; i < prefix.size(); ++i) {
    value = value * base + vocab_.content_index(prefix[i]);
  }
  return state_offsets_[m] + value;
}

void AutoregressiveModel::step_log_probs(const ContextView& view, std::size_t state,
                                         std::span<double> out) const {
  const std::size_t v = vocab_.size();
  if (kind_ == ModelKind::tabular) {
    const double* row = log_probabilities_[view.table].data() + state * v;
    std::copy(row, row + v, out.begin());
    return;
  }
  const double* row = parameters_.data() + state * v;
  std::copy(row, row + v, out.begin());
  if (context_copy_) {
    const double* copy = parameters_.data() + state_count_ * v + state * v;
    for (std::size_t t = 0; t < v; ++t) out[t] += copy[t] * view.copy_mask[t];
  }
  const double lse = kernels::logsumexp(out);
  for (double& x : out) x -= lse;
}

void AutoregressiveModel::check_sequence(const Sequence& sequence) const {
  for (TokenId id : sequence.token_ids()) {
    if (id >= vocab_.size()) throw InvalidArgument("sequence has out-of-vocabulary token id");
  }
  if (sequence.token_ids().back() != vocab_.eos()) {
    throw InvalidArgument("sequence does not end with this model's eos");
  }
  if (sequence.length() > horizon_) throw InvalidArgument("sequence exceeds model horizon");
}

std::vector<SampledSequence> AutoregressiveModel::sample(const Context& context, std::size_t n,
                                                         Rng& rng) const {
  const ContextView view = resolve(context);
  const std::size_t v = vocab_.size();
  std::vector<double> logp(v);
  std::vector<double> probs(v);
  std::vector<TokenId> prefix;
  prefix.reserve(horizon_);
  std::vector<SampledSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    prefix.clear();
    double total = 0.0;
    while (prefix.size() < horizon_) {
      step_log_probs(view, state_of(prefix), logp);
      for (std::size_t t = 0; t < v; ++t) probs[t] = std::exp(logp[t]);
      const auto token = static_cast<TokenId>(rng.categorical(probs));
      total += logp[token];
      if (token == vocab_.eos()) break;
      prefix.push_back(token);
    }
    out.push_back({Sequence::from_content(vocab_, prefix), total});
  }
  return out;
}

double AutoregressiveModel::log_prob(const Sequence& sequence, const Context& context) const {
  return log_score(std::span<const Sequence>(&sequence, 1), context).front();
}

std::vector<double> AutoregressiveModel::log_score(std::span<const Sequence> sequences,
                                                   const Context& context) const {
  const ContextView view = resolve(context);
  std::vector<double> logp(vocab_.size());
  std::vector<double> out;
  out.reserve(sequences.size());
  for (const Sequence& seq : sequences) {
    check_sequence(seq);
    const auto content = seq.content();
    double total = 0.0;
    for (std::size_t k = 0; k <= content.size() && k < horizon_; ++k) {
      step_log_probs(view, state_of(content.first(k)), logp);
      total += logp[k < content.size() ? content[k] : vocab_.eos()];
      if (total == kNegInf) break;
    }
    out.push_back(total);
  }
  return out;
}

std::vector<double> AutoregressiveModel::next_token_probabilities(std::span<const TokenId> prefix,
                                                                  const Context& context) const {
  std::vector<double> p(vocab_.size(), 0.0);
  if (prefix.size() >= horizon_) {
    p[vocab_.eos()] = 1.0;
    return p;
  }
  for (TokenId id : prefix) {
    if (id >= vocab_.size() || id == vocab_.eos()) throw InvalidArgument("invalid prefix token");
  }
  step_log_probs(resolve(context), state_of(prefix), p);
  for (double& x : p) x = std::exp(x);
  return p;
}

void AutoregressiveModel::require_tunable(const char* op) const {
  if (kind_ != ModelKind::softmax_parametric) {
    throw InvalidArgument(std::string(op) + ": tabular models have no differentiable parameters");
  }
  if (frozen_) throw InvalidArgument(std::string(op) + ": model is frozen");
}

std::vector<double> AutoregressiveModel::grad_log_score(const Sequence& sequence,
                                                        const Context& context) const {
  std::vector<double> grad(parameter_count(), 0.0);
  accumulate_grad_log_score(sequence, context, 1.0, grad);
  return grad;
}

void AutoregressiveModel::accumulate_grad_log_score(const Sequence& sequence,
                                                    const Context& context, double scale,
                                                    std::span<double> grad) const {
  require_tunable("grad_log_score");
  if (grad.size() != parameter_count()) throw InvalidArgument("gradient buffer has wrong size");
  check_sequence(sequence);
  const ContextView view = resolve(context);
  const std::size_t v = vocab_.size();
  const std::size_t copy_offset = state_count_ * v;
  std::vector<double> p(v);
  const auto content = sequence.content();
  for (std::size_t k = 0; k <= content.size() && k < horizon_; ++k) {
    const std::size_t state = state_of(content.first(k));
    step_log_probs(view, state, p);
    for (double& x : p) x = std::exp(x);
    const TokenId chosen = k < content.size() ? content[k] : vocab_.eos();
    double* g = grad.data() + state * v;
    for (std::size_t t = 0; t < v; ++t) {
      g[t] += scale * ((t == chosen ? 1.0 : 0.0) - p[t]);
    }
    if (context_copy_) {
      double* gc = grad.data() + copy_offset + state * v;
      for (std::size_t t = 0; t < v; ++t) {
        gc[t] += scale * view.copy_mask[t] * ((t == chosen ? 1.0 : 0.0) - p[t]);
      }
    }
  }
}

std::span<const double> AutoregressiveModel::parameters() const { return parameters_; }

std::span<double> AutoregressiveModel::mutable_parameters() {
  require_tunable("mutable_parameters");
  return parameters_;
}

void AutoregressiveModel::apply_update(double step, std::span<const double> direction) {
  require_tunable("apply_update");
  if (direction.size() != parameters_.size()) {
    throw InvalidArgument("update direction has wrong size");
  }
  kernels::axpy(step, direction, parameters_);
}

AutoregressiveModel AutoregressiveModel::clone(bool freeze) const {
  AutoregressiveModel copy = *this;
  copy.frozen_ = freeze;
  return copy;
}

nlohmann::json AutoregressiveModel::to_json() const {
  const std::size_t v = vocab_.size();
  auto matrix = [&](const double* data) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t s = 0; s < state_count_; ++s) {
      rows.push_back(std::vector<double>(data + s * v, data + (s + 1) * v));
    }
    return rows;
  };
  nlohmann::json j = {
      {"version", kFormatVersion},
      {"kind", std::string(to_string(kind_))},
      {"vocab", vocab_.to_json()},
      {"t_max", horizon_},
      {"order", order_},
      {"frozen", frozen_},
  };
  if (kind_ == ModelKind::tabular) {
    j["contexts"] = contexts_;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& table : probabilities_) params.push_back(matrix(table.data()));
    j["params"] = std::move(params);
  } else {
    j["context_copy"] = context_copy_;
    j["params"] = {{"logits", matrix(parameters_.data())}};
    if (context_copy_) j["params"]["copy_logits"] = matrix(parameters_.data() + state_count_ * v);
  }
  return j;
}

AutoregressiveModel AutoregressiveModel::from_json(const nlohmann::json& j) {
  if (json_get<int>(j, "version") != kFormatVersion) {
    throw ConfigError("unsupported model document version");
  }
  const ModelKind kind = model_kind_from_string(json_get<std::string>(j, "kind"));
  Vocab vocab = Vocab::from_json(j.at("vocab"));
  const auto horizon = json_get<std::size_t>(j, "t_max");
  const auto order = json_get<std::size_t>(j, "order");
  const bool frozen = j.value("frozen", false);

  auto flatten = [](const nlohmann::json& rows) {
    std::vector<double> flat;
    for (const auto& row : rows) {
      for (const auto& x : row) flat.push_back(x.get<double>());
    }
    return flat;
  };

  try {
    if (kind == ModelKind::tabular) {
      std::vector<std::vector<double>> tables;
      for (const auto& table : j.at("params")) tables.push_back(flatten(table));
      auto m = tabular(std::move(vocab), horizon, order,
                       json_get<std::vector<std::string>>(j, "contexts"), std::move(tables));
      m.frozen_ = frozen;
      return m;
    }
    const auto& params = j.at("params");
    std::vector<double> copy;
    if (j.value("context_copy", false)) copy = flatten(params.at("copy_logits"));
    auto m = softmax(std::move(vocab), horizon, order, flatten(params.at("logits")),
                     std::move(copy));
    m.frozen_ = frozen;
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model parameters: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid model document: ") + e.what());
  }
}

}  // namespace gdc
