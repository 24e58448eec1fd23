#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <type_traits>

#include "json.hpp"
#include "pbd/training.hpp"

namespace pbd {

// Checkpoint container, version 1:
//   "PBDC" | u32 version | u32 len | config JSON (UTF-8)
//   u32 n_tensors | n x (u32 name_len | name | u32 ndim | u64 dims... | values)
//   u8 has_optimizer | [ u64 t | u32 n | n x (name | u64 count | m... | v...) ]
// Integers and float payloads are little-endian; values are f32 or f64 as
// recorded in the config's "dtype" field. Shared tensors are stored once
// under their canonical name.
inline constexpr char CHECKPOINT_MAGIC[4] = {'P', 'B', 'D', 'C'};
inline constexpr std::uint32_t CHECKPOINT_VERSION = 1;

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 8);
}

template <class S>
void put_scalar(std::ostream& os, S value) {
  if constexpr (std::is_same_v<S, float>) {
    std::uint32_t u;
    std::memcpy(&u, &value, 4);
    put_u32(os, u);
  } else {
    std::uint64_t u;
    std::memcpy(&u, &value, 8);
    put_u64(os, u);
  }
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw format_error("truncated checkpoint");
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  get_bytes(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

template <class S>
S get_scalar(std::istream& is) {
  S value;
  if constexpr (std::is_same_v<S, float>) {
    std::uint32_t u = get_u32(is);
    std::memcpy(&value, &u, 4);
  } else {
    std::uint64_t u = get_u64(is);
    std::memcpy(&value, &u, 8);
  }
  return value;
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t len = get_u32(is);
  std::string s(len, '\0');
  if (len) get_bytes(is, s.data(), len);
  return s;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

}  // namespace detail

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["d_ff"] = c.d_ff;
  j["max_len"] = c.max_len;
  j["dropout"] = c.dropout_rate;
  j["use_pbd"] = c.use_pbd;
  j["use_segment"] = c.use_segment;
  j["share_params"] = c.share_params;
  j["tie_output_embedding"] = c.tie_output_embedding;
  j["learned_positions"] = c.learned_positions;
  j["gelu_ff"] = c.gelu_ff;
  j["copy_from_layer_output"] = c.copy_from_layer_output;
  j["segment_per_layer"] = c.segment_per_layer;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dropout_rate = j.at("dropout").get<double>();
    c.use_pbd = j.at("use_pbd").get<bool>();
    c.use_segment = j.at("use_segment").get<bool>();
    c.share_params = j.at("share_params").get<bool>();
    c.tie_output_embedding = j.at("tie_output_embedding").get<bool>();
    c.learned_positions = j.at("learned_positions").get<bool>();
    c.gelu_ff = j.at("gelu_ff").get<bool>();
    c.copy_from_layer_output = j.at("copy_from_layer_output").get<bool>();
    c.segment_per_layer = j.at("segment_per_layer").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad checkpoint config: ") + e.what());
  }
  return c;
}

template <class S>
void save_checkpoint(const std::string& path, const TransformerModel<S>& model,
                     const std::string& alphabet, const AdamState<S>* opt = nullptr) {
  const auto params = model.named_params();
  if (opt && !opt->m.empty() && opt->m.size() != params.size())
    throw contract_error("save_checkpoint: optimizer state does not match parameter list");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot open " + path + " for writing");
  detail::put_bytes(os, CHECKPOINT_MAGIC, 4);
  detail::put_u32(os, CHECKPOINT_VERSION);

  nlohmann::ordered_json j = model_config_to_json(model.cfg);
  j["dtype"] = std::is_same_v<S, double> ? "f64" : "f32";
  j["alphabet"] = alphabet;
  detail::put_string(os, j.dump());

  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    detail::put_string(os, name);
    detail::put_u32(os, static_cast<std::uint32_t>(p.ndim()));
    for (std::size_t d : p.shape()) detail::put_u64(os, d);
    for (std::size_t i = 0; i < p.size(); ++i) detail::put_scalar<S>(os, p.data()[i]);
  }

  const bool with_opt = opt && !opt->m.empty();
  os.put(with_opt ? '\1' : '\0');
  if (with_opt) {
    detail::put_u64(os, opt->t);
    detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
      detail::put_string(os, params[k].first);
      detail::put_u64(os, opt->m[k].size());
      for (S x : opt->m[k]) detail::put_scalar<S>(os, x);
      for (S x : opt->v[k]) detail::put_scalar<S>(os, x);
    }
  }
  if (!os) throw data_error("failed writing " + path);
}

namespace detail {

inline std::ifstream open_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open " + path);
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, CHECKPOINT_MAGIC, 4) != 0)
    throw format_error(path + " is not a checkpoint (bad magic)");
  const std::uint32_t version = get_u32(is);
  if (version != CHECKPOINT_VERSION)
    throw format_error("unsupported checkpoint version " + std::to_string(version));
  return is;
}

inline nlohmann::ordered_json parse_checkpoint_config(std::istream& is) {
  const std::string text = get_string(is);
  try {
    return nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad checkpoint config: ") + e.what());
  }
}

}  // namespace detail

// Header-only peek, used by the CLI to pick the precision before loading.
inline nlohmann::ordered_json read_checkpoint_config(const std::string& path) {
  std::ifstream is = detail::open_checkpoint(path);
  return detail::parse_checkpoint_config(is);
}

template <class S>
struct LoadedCheckpoint {
  ModelConfig config;
  std::string alphabet;
  TransformerModel<S> model;
  bool has_optimizer = false;
  AdamState<S> opt;
};

template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is = detail::open_checkpoint(path);
  const nlohmann::ordered_json j = detail::parse_checkpoint_config(is);

  std::string dtype;
  std::string alphabet;
  try {
    dtype = j.at("dtype").get<std::string>();
    alphabet = j.at("alphabet").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad checkpoint config: ") + e.what());
  }
  const std::string expected = std::is_same_v<S, double> ? "f64" : "f32";
  if (dtype != expected)
    throw config_error("checkpoint dtype " + dtype + " does not match requested precision " + expected);

  const ModelConfig cfg = model_config_from_json(j);
  LoadedCheckpoint<S> out{cfg, alphabet, init_model<S>(cfg, 0)};

  struct Record {
    std::vector<std::size_t> shape;
    std::vector<S> values;
  };
  std::map<std::string, Record> records;
  const std::uint32_t n_tensors = detail::get_u32(is);
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    const std::string name = detail::get_string(is);
    const std::uint32_t ndim = detail::get_u32(is);
    if (ndim > 4) throw format_error("tensor '" + name + "' has implausible rank");
    Record rec;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      rec.shape.push_back(static_cast<std::size_t>(detail::get_u64(is)));
      count *= rec.shape.back();
    }
    rec.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) rec.values[i] = detail::get_scalar<S>(is);
    if (!records.emplace(name, std::move(rec)).second)
      throw format_error("duplicate tensor '" + name + "'");
  }

  auto params = out.model.named_params();
  if (records.size() != params.size())
    throw format_error("checkpoint stores " + std::to_string(records.size()) +
                       " tensors, model expects " + std::to_string(params.size()));
  for (auto& [name, p] : params) {
    auto it = records.find(name);
    if (it == records.end()) throw format_error("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != p.shape())
      throw format_error("tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                         ", model expects " + shape_str(p.shape()));
    std::copy(it->second.values.begin(), it->second.values.end(), p.data());
  }

  const int flag = is.get();
  if (flag == std::char_traits<char>::eof()) throw format_error("truncated checkpoint");
  if (flag != 0 && flag != 1) throw format_error("bad optimizer flag");
  if (flag == 1) {
    out.has_optimizer = true;
    out.opt.t = static_cast<std::size_t>(detail::get_u64(is));
    const std::uint32_t n_opt = detail::get_u32(is);
    if (n_opt != params.size()) throw format_error("optimizer state count mismatch");
    std::map<std::string, std::pair<std::vector<S>, std::vector<S>>> mv;
    for (std::uint32_t k = 0; k < n_opt; ++k) {
      const std::string name = detail::get_string(is);
      const std::uint64_t count = detail::get_u64(is);
      std::vector<S> m(count), v(count);
      for (auto& x : m) x = detail::get_scalar<S>(is);
      for (auto& x : v) x = detail::get_scalar<S>(is);
      mv[name] = {std::move(m), std::move(v)};
    }
    for (const auto& [name, p] : params) {
      auto it = mv.find(name);
      if (it == mv.end()) throw format_error("optimizer state is missing '" + name + "'");
      if (it->second.first.size() != p.size())
        throw format_error("optimizer state size mismatch for '" + name + "'");
      out.opt.m.push_back(std::move(it->second.first));
      out.opt.v.push_back(std::move(it->second.second));
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw format_error("trailing bytes in checkpoint");
  return out;
}

template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path, const ModelConfig& expected) {
  LoadedCheckpoint<S> out = load_checkpoint<S>(path);
  if (!out.config.same_structure(expected))
    throw config_error("checkpoint model structure does not match the requested configuration");
  return out;
}

}  // namespace pbd
