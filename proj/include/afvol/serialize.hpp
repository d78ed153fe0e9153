#pragma once

// Text format for trained parameters:
//
//   afvol-params 1
//   model <lstm|af-lstm>
//   variant <simple|position-bias>
//   seed <u64>
//   sizes <input> <hidden> <dim> <t_max>
//   tensors <count>
//   <name> <rank> <d0> ... <d{rank-1}>
//   <row-major values, %.17g, space separated, one line>
//   ... repeated <count> times, in for_each_param order
//
// %.17g round-trips every double exactly.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include "afvol/model.hpp"

namespace afvol {

struct ParamHeader {
  ModelKind model = ModelKind::af_lstm;
  AfVariant variant = AfVariant::simple;
  std::uint64_t seed = 0;
  LayerSizes sizes{};
};

inline void write_params(std::ostream& os, const ModelParams& params, const ParamHeader& header) {
  std::size_t count = 0;
  std::visit([&](const auto& p) { for_each_param(p, [&](const std::string&, const Tensor&) { ++count; }); }, params);
  os << "afvol-params 1\n"
     << "model " << to_string(header.model) << "\n"
     << "variant " << to_string(header.variant) << "\n"
     << "seed " << header.seed << "\n"
     << "sizes " << header.sizes.input << ' ' << header.sizes.hidden << ' ' << header.sizes.dim << ' '
     << header.sizes.t_max << "\n"
     << "tensors " << count << "\n";
  char buf[32];
  std::visit(
      [&](const auto& p) {
        for_each_param(p, [&](const std::string& name, const Tensor& t) {
          os << name << ' ' << t.rank();
          for (std::size_t d : t.shape) os << ' ' << d;
          os << '\n';
          for (std::size_t i = 0; i < t.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", t[i]);
            os << (i ? " " : "") << buf;
          }
          os << '\n';
        });
      },
      params);
}

namespace detail {

template <class T>
T expect_field(std::istream& is, const char* key) {
  std::string k;
  T value{};
  if (!(is >> k) || k != key || !(is >> value)) {
    throw DataError(std::string("parameter file: expected '") + key + "' field");
  }
  return value;
}

}  // namespace detail

inline std::pair<ParamHeader, ModelParams> read_params(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "afvol-params" || version != 1) {
    throw DataError("parameter file: bad magic line (expected 'afvol-params 1')");
  }
  ParamHeader h;
  h.model = parse_model_kind(detail::expect_field<std::string>(is, "model"));
  h.variant = parse_af_variant(detail::expect_field<std::string>(is, "variant"));
  h.seed = detail::expect_field<std::uint64_t>(is, "seed");
  h.sizes.input = detail::expect_field<std::size_t>(is, "sizes");
  if (!(is >> h.sizes.hidden >> h.sizes.dim >> h.sizes.t_max)) throw DataError("parameter file: bad sizes line");
  const auto count = detail::expect_field<std::size_t>(is, "tensors");

  ModelParams params = make_model(h.model, h.sizes, h.variant, h.seed);
  std::size_t seen = 0;
  std::visit(
      [&](auto& p) {
        for_each_param(p, [&](const std::string& name, Tensor& t) {
          std::string got;
          std::size_t rank = 0;
          if (!(is >> got >> rank) || got != name) {
            throw DataError("parameter file: expected tensor '" + name + "', found '" + got + "'");
          }
          Shape shape(rank);
          for (auto& d : shape) is >> d;
          if (!is || shape != t.shape) {
            throw DataError("parameter file: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(t.shape));
          }
          std::string tok;
          for (double& v : t.data) {
            char* end = nullptr;
            if (!(is >> tok)) throw DataError("parameter file: truncated values for '" + name + "'");
            v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) throw DataError("parameter file: bad number '" + tok + "'");
          }
          ++seen;
        });
      },
      params);
  if (seen != count) throw DataError("parameter file: tensor count mismatch");
  return {h, std::move(params)};
}

}  // namespace afvol
