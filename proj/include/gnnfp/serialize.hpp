#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gnnfp/gnn.hpp"

namespace gnnfp {

using nlohmann::json;

inline json config_to_json(const GnnConfig& c) {
  return json{{"arch", arch_name(c.arch)},
              {"num_layers", c.num_layers},
              {"hidden_dim", c.hidden_dim},
              {"neighbor_samples", c.neighbor_samples},
              {"attention_heads", c.attention_heads},
              {"dropout", c.dropout},
              {"learning_rate", c.learning_rate},
              {"max_epochs", c.max_epochs},
              {"early_stop_patience", c.early_stop_patience},
              {"head_hidden", c.head_hidden},
              {"input_dim", c.input_dim},
              {"num_classes", c.num_classes},
              {"seed", c.seed}};
}

inline GnnConfig config_from_json(const json& j) {
  GnnConfig c;
  c.arch = arch_from_name(j.at("arch").get<std::string>());
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.neighbor_samples = j.at("neighbor_samples").get<std::vector<int>>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.early_stop_patience = j.at("early_stop_patience").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace detail {

constexpr char kMagic[6] = {'G', 'N', 'F', 'P', '1', '\n'};

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  std::string_view data;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > data.size())
      throw std::runtime_error("model bytes: truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(data[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
};

inline void put_tensor_header(std::string& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.name.size()));
  out += t.name;
  put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
  put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
}

inline void put_tensor_payload(std::string& out, const Tensor& t) {
  for (Eigen::Index i = 0; i < t.value.size(); ++i) {
    float f = static_cast<float>(t.value.data()[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

}  // namespace detail

// Canonical single-file container: magic, config JSON (sorted keys), tensor
// shape table, then flat little-endian float32 payloads in table order. The
// registry hashes exactly these bytes, so the layout is fixed.
inline std::string serialize_model(const GnnModel& model) {
  std::string out(detail::kMagic, sizeof(detail::kMagic));
  std::string cfg = config_to_json(model.config).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  std::vector<const Tensor*> all;
  for (const auto* t : model.all_tensors()) all.push_back(t);
  for (const auto& t : model.extra_tensors) all.push_back(&t);
  detail::put_u32(out, static_cast<std::uint32_t>(all.size()));
  for (const auto* t : all) detail::put_tensor_header(out, *t);
  for (const auto* t : all) detail::put_tensor_payload(out, *t);
  return out;
}

// Lenient on shapes and unknown tensors (the registry's well-formedness check
// reports those); strict on structure and on missing expected tensors.
inline GnnModel deserialize_model(std::string_view bytes) {
  detail::Reader r{bytes};
  if (r.bytes(sizeof(detail::kMagic)) !=
      std::string(detail::kMagic, sizeof(detail::kMagic)))
    throw std::runtime_error("model bytes: bad magic");
  GnnConfig cfg;
  try {
    cfg = config_from_json(json::parse(r.bytes(r.u32())));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model bytes: bad config: ") + e.what());
  }
  GnnModel model = build_model(cfg);

  std::uint32_t count = r.u32();
  struct Entry {
    std::string name;
    int rows, cols;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    e.name = r.bytes(r.u32());
    e.rows = static_cast<int>(r.u32());
    e.cols = static_cast<int>(r.u32());
    if (e.rows < 0 || e.cols < 0 ||
        static_cast<std::uint64_t>(e.rows) * e.cols > (1ull << 28))
      throw std::runtime_error("model bytes: absurd tensor shape");
  }
  auto own = model.all_tensors();
  std::vector<bool> filled(own.size(), false);
  for (const auto& e : entries) {
    Matrix v(e.rows, e.cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::uint32_t bits = r.u32();
      float f;
      std::memcpy(&f, &bits, 4);
      v.data()[i] = f;
    }
    bool matched = false;
    for (std::size_t ti = 0; ti < own.size(); ++ti) {
      if (own[ti]->name == e.name) {
        own[ti]->value = std::move(v);
        own[ti]->grad = Matrix::Zero(e.rows, e.cols);
        filled[ti] = true;
        matched = true;
        break;
      }
    }
    if (!matched) model.extra_tensors.emplace_back(e.name, std::move(v));
  }
  for (std::size_t ti = 0; ti < own.size(); ++ti)
    if (!filled[ti])
      throw std::runtime_error("model bytes: missing tensor " + own[ti]->name);
  return model;
}

inline void save_model(const GnnModel& model, const std::filesystem::path& p) {
  if (!p.parent_path().empty())
    std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  auto bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(in)),
                std::istreambuf_iterator<char>());
  return s;
}

inline GnnModel load_model(const std::filesystem::path& p) {
  return deserialize_model(read_file_bytes(p));
}

}  // namespace gnnfp
