#include "cliffm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace cliffm {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'L', 'I', 'F', 'F', 'M', 'C', 'K'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const fs::path& path,
                     const std::string& metadata_json) {
  nlohmann::ordered_json header;
  header["format"] = "cliffm-checkpoint-1";
  header["config"] = nlohmann::ordered_json::parse(model_config_to_json(params.config));
  header["metadata"] = nlohmann::ordered_json::parse(metadata_json);
  header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    header["tensors"].push_back({{"name", params.names[i]},
                                 {"shape", {t.rows(), t.cols()}},
                                 {"dtype", "float32"},
                                 {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + offset);
  for (const auto& t : params.tensors)
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(t.data()[k]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ArtifactError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("missing checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";
  if (data.size() < 16 || std::memcmp(data.data(), kMagic, 8) != 0)
    throw ParseError(where + "bad magic");
  const std::uint64_t hlen = get_u64(data.data() + 8);
  if (hlen > data.size() - 16) throw ParseError(where + "truncated header");
  LoadedCheckpoint out;
  const char* payload = data.data() + 16 + hlen;
  const std::uint64_t payload_size = data.size() - 16 - hlen;
  try {
    auto header = nlohmann::json::parse(data.substr(16, hlen));
    out.params.config = model_config_from_json(header.at("config").dump());
    out.metadata_json = header.value("metadata", nlohmann::json::object()).dump();
    for (const auto& jt : header.at("tensors")) {
      if (jt.at("dtype") != "float32") throw ParseError(where + "unsupported dtype");
      auto shape = jt.at("shape").get<std::vector<Eigen::Index>>();
      auto offset = jt.at("offset").get<std::uint64_t>();
      if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0)
        throw ParseError(where + "bad tensor shape");
      const std::uint64_t count = static_cast<std::uint64_t>(shape[0] * shape[1]);
      if (offset > payload_size || count * 4 > payload_size - offset)
        throw ParseError(where + "tensor " + jt.at("name").get<std::string>() + " out of bounds");
      Matrix<float> m(shape[0], shape[1]);
      const char* p = payload + offset;
      for (std::uint64_t k = 0; k < count; ++k) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[4 * k + b])) << (8 * b);
        m.data()[k] = std::bit_cast<float>(bits);
      }
      out.params.names.push_back(jt.at("name").get<std::string>());
      out.params.tensors.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + e.what());
  }
  const auto& p = out.params;
  if (p.tensors.size() != p.output_index() + 1 && !p.has_head())
    throw ParseError(where + "tensor count does not match config");
  if (p.tensors[0].rows() != p.config.vocab_size)
    throw ParseError(where + "embedding rows differ from vocab_size");
  for (const auto& t : p.tensors)
    if (!t.allFinite()) throw NumericError(where + "non-finite weights");
  return out;
}

}  // namespace cliffm
