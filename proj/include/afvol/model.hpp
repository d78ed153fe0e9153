#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "afvol/layers.hpp"

namespace afvol {

enum class ModelKind { lstm, af_lstm };

inline std::string_view to_string(ModelKind m) { return m == ModelKind::lstm ? "lstm" : "af-lstm"; }

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "lstm") return ModelKind::lstm;
  if (s == "af-lstm" || s == "af_lstm") return ModelKind::af_lstm;
  throw ConfigError("unknown model '" + std::string(s) + "' (expected lstm or af-lstm)");
}

using ModelParams = std::variant<LstmModelParams, AfLstmParams>;

inline ModelParams make_model(ModelKind kind, const LayerSizes& sizes, AfVariant variant, std::uint64_t seed) {
  if (kind == ModelKind::lstm) return init_lstm_model(sizes, seed);
  return init_af_lstm(sizes, variant, seed);
}

inline ModelKind kind_of(const ModelParams& m) {
  return std::holds_alternative<LstmModelParams>(m) ? ModelKind::lstm : ModelKind::af_lstm;
}

inline Var forecast(const ModelParams& m, Var x) {
  return std::visit([&](const auto& p) { return forecast(p, x); }, m);
}

}  // namespace afvol
