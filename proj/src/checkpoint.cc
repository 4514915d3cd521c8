/* Copyright 2026 The VirAAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "viraal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace viraal {

namespace {

constexpr char kMagic[8] = {'V', 'I', 'R', 'A', 'A', 'L', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const ModelParams& p = ck.params;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t s = 0; s < ModelParams::kCount; ++s) {
    tensors.push_back({{"name", ModelParams::name(s)},
                       {"rows", p[s].rows()},
                       {"cols", p[s].cols()},
                       {"offset", offset}});
    offset += static_cast<std::uint64_t>(p[s].size()) * sizeof(double);
  }
  const nlohmann::json header = {
      {"dims", p.dims().to_json()},
      {"vocab", ck.vocab.to_json()},
      {"vocab_hashes",
       {{"words", ck.vocab.word_hash()},
        {"slots", ck.vocab.slot_hash()},
        {"intents", ck.vocab.intent_hash()}}},
      {"run_config", ck.run_config},
      {"tensors", tensors}};
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t s = 0; s < ModelParams::kCount; ++s) {
      out.write(reinterpret_cast<const char*>(p[s].data()),
                static_cast<std::streamsize>(p[s].size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto length = read_pod<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw CheckpointError("checkpoint header truncated");
  const auto header = nlohmann::json::parse(text);
  const std::streamoff payload = in.tellg();

  Checkpoint ck;
  ck.vocab = Vocabulary::from_json(header.at("vocab"));
  const auto& hashes = header.at("vocab_hashes");
  if (hashes.at("words").get<std::uint64_t>() != ck.vocab.word_hash() ||
      hashes.at("slots").get<std::uint64_t>() != ck.vocab.slot_hash() ||
      hashes.at("intents").get<std::uint64_t>() != ck.vocab.intent_hash()) {
    throw CheckpointError(path.string() + ": vocabulary hash mismatch");
  }
  ck.run_config = header.value("run_config", nlohmann::json::object());
  const ModelDims dims = ModelDims::from_json(header.at("dims"));
  std::vector<Matrix> tensors(ModelParams::kCount);
  for (const auto& t : header.at("tensors")) {
    const auto slot = ModelParams::slot_of(t.at("name").get<std::string>());
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.seekg(payload + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint payload truncated");
    tensors[slot] = std::move(m);
  }
  ck.params = ModelParams::from_tensors(dims, std::move(tensors));
  return ck;
}

}  // namespace viraal
