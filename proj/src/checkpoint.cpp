#include "kalm/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "kalm/errors.hpp"

namespace kalm {

static constexpr char kMagic[8] = {'K', 'A', 'L', 'M', 'C', 'K', 'P', '1'};

// Checkpoints are declared little-endian; this code assumes a little-endian
// host (asserted at load/save time).
static bool host_is_little_endian() {
  uint16_t x = 1;
  unsigned char b;
  std::memcpy(&b, &x, 1);
  return b == 1;
}

void Checkpoint::save(const std::string& path) const {
  if (!host_is_little_endian()) throw NumericalError("big-endian hosts unsupported");
  nlohmann::json header;
  header["format_version"] = 1;
  header["vocab_hash"] = vocab_hash;
  header["seed"] = seed;
  header["epoch"] = epoch;
  header["model"] = {
      {"embed_dim", params.cfg.embed_dim},   {"hidden_dim", params.cfg.hidden_dim},
      {"layers", params.cfg.layers},         {"type_dim", params.cfg.type_dim},
      {"feedback", params.cfg.feedback},     {"bidirectional", params.cfg.bidirectional},
      {"K", params.K},                       {"general_size", params.general_size},
      {"embedding_rows", params.embedding_rows}, {"type_sizes", params.type_sizes}};
  nlohmann::json manifest = nlohmann::json::array();
  params.for_each([&](const std::string& name, const Tensor& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}});
  });
  header["tensors"] = manifest;
  std::string htext = header.dump();

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + tmp);
    out.write(kMagic, sizeof(kMagic));
    uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    params.for_each([&](const std::string&, const Tensor& t) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw DataError("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename checkpoint into place: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  if (!host_is_little_endian()) throw NumericalError("big-endian hosts unsupported");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header: " + std::string(e.what()));
  }
  if (header.at("format_version").get<int>() != 1)
    throw DataError("unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.vocab_hash = header.at("vocab_hash").get<uint64_t>();
  ckpt.seed = header.at("seed").get<uint64_t>();
  ckpt.epoch = header.at("epoch").get<size_t>();
  const auto& m = header.at("model");
  ModelParams& p = ckpt.params;
  p.cfg.embed_dim = m.at("embed_dim").get<size_t>();
  p.cfg.hidden_dim = m.at("hidden_dim").get<size_t>();
  p.cfg.layers = m.at("layers").get<size_t>();
  p.cfg.type_dim = m.at("type_dim").get<size_t>();
  p.cfg.feedback = m.at("feedback").get<bool>();
  p.cfg.bidirectional = m.at("bidirectional").get<bool>();
  p.K = m.at("K").get<size_t>();
  p.general_size = m.at("general_size").get<size_t>();
  p.embedding_rows = m.at("embedding_rows").get<size_t>();
  p.type_sizes = m.at("type_sizes").get<std::vector<size_t>>();

  // Allocate tensors from the manifest, then read the payload in order.
  p.embeddings = Tensor::zeros(p.embedding_rows, p.cfg.embed_dim);
  auto alloc_dir = [&](DirectionParams& d) {
    for (size_t l = 0; l < p.cfg.layers; ++l) {
      size_t input = (l == 0) ? p.cfg.input_dim() : p.cfg.hidden_dim;
      d.layers.push_back({Tensor::zeros(4 * p.cfg.hidden_dim, input),
                          Tensor::zeros(4 * p.cfg.hidden_dim, p.cfg.hidden_dim),
                          Tensor::zeros(4 * p.cfg.hidden_dim)});
    }
    d.W_out = Tensor::zeros(p.cfg.embed_dim, p.cfg.hidden_dim);
    d.W_ctx = Tensor::zeros(p.cfg.type_dim, p.cfg.embed_dim);
  };
  alloc_dir(p.fwd);
  if (p.cfg.bidirectional) {
    alloc_dir(p.bwd);
    p.W_ctx_fused = Tensor::zeros(p.cfg.type_dim, 2 * p.cfg.embed_dim);
  }
  p.type_emb = Tensor::zeros(p.K + 1, p.cfg.type_dim);
  p.bias.push_back(Tensor::zeros(p.general_size));
  for (size_t j = 0; j < p.K; ++j) {
    if (p.type_sizes[j] > 0) {
      p.W_p.push_back(Tensor::zeros(p.type_sizes[j], p.cfg.embed_dim));
      p.bias.push_back(Tensor::zeros(p.type_sizes[j]));
    } else {
      p.W_p.emplace_back();
      p.bias.emplace_back();
    }
  }

  size_t idx = 0;
  const auto& manifest = header.at("tensors");
  p.for_each([&](const std::string& name, Tensor& t) {
    if (idx >= manifest.size()) throw DataError("checkpoint manifest too short");
    if (manifest[idx].at("name").get<std::string>() != name ||
        manifest[idx].at("shape").get<std::vector<size_t>>() != t.shape())
      throw DataError("checkpoint manifest mismatch at tensor " + name);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    ++idx;
  });
  if (!in || idx != manifest.size()) throw DataError("truncated checkpoint payload: " + path);
  return ckpt;
}

Checkpoint Checkpoint::load(const std::string& path, uint64_t expected_vocab_hash) {
  Checkpoint ckpt = load(path);
  if (ckpt.vocab_hash != expected_vocab_hash)
    throw DataError("checkpoint was trained with a different vocabulary (hash mismatch)");
  return ckpt;
}

}  // namespace kalm
