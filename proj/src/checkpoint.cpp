#include "debias/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <iterator>

namespace debias {

namespace {

constexpr const char* kFormat = "debias-checkpoint-v1";

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const std::string& in, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest_path, const ParamStore& params,
                     const nlohmann::json& meta) {
  std::string blob;
  blob.reserve(params.total_values() * 8);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    entries.push_back({{"name", params.name_at(i)},
                       {"shape", t.shape()},
                       {"offset", blob.size()},
                       {"count", t.numel()}});
    for (double v : t.values()) put_le(blob, v);
  }
  const auto blob_path = blob_path_for(manifest_path);
  nlohmann::json manifest = {{"format", kFormat},
                             {"blob", blob_path.filename().string()},
                             {"blob_bytes", blob.size()},
                             {"fnv1a64", fmt::format("{:016x}", fnv1a64(blob))},
                             {"meta", meta},
                             {"params", entries}};
  {
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError(fmt::format("cannot write {}", blob_path.string()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IntegrityError(fmt::format("cannot write {}", manifest_path.string()));
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IntegrityError(fmt::format("checkpoint manifest {} not found", manifest_path.string()));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(fmt::format("checkpoint manifest unreadable: {}", e.what()));
  }
  if (manifest.value("format", "") != kFormat)
    throw IntegrityError("checkpoint manifest has an unknown format tag");

  Checkpoint ckpt;
  try {
    const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw IntegrityError(fmt::format("checkpoint blob {} not found", blob_path.string()));
    std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const auto expected = manifest.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected)
      throw IntegrityError(fmt::format("checkpoint blob has {} bytes, manifest says {}",
                                       blob.size(), expected));
    if (fmt::format("{:016x}", fnv1a64(blob)) != manifest.at("fnv1a64").get<std::string>())
      throw IntegrityError("checkpoint blob checksum mismatch");

    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest.at("params")) {
      CheckpointEntry entry;
      entry.name = e.at("name").get<std::string>();
      entry.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != numel_of(entry.shape))
        throw IntegrityError(fmt::format("checkpoint entry '{}' count disagrees with its shape", entry.name));
      if (offset % 8 != 0 || offset + count * 8 > blob.size())
        throw IntegrityError(fmt::format("checkpoint entry '{}' overruns the blob", entry.name));
      entry.values.resize(count);
      for (std::size_t j = 0; j < count; ++j) entry.values[j] = get_le(blob, offset + 8 * j);
      ckpt.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(fmt::format("checkpoint manifest malformed: {}", e.what()));
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name_at(i);
    auto it = std::find_if(ckpt.entries.begin(), ckpt.entries.end(),
                           [&](const CheckpointEntry& e) { return e.name == name; });
    if (it == ckpt.entries.end())
      throw IntegrityError(fmt::format("checkpoint is missing parameter '{}'", name));
    Tensor& t = params.at(i);
    if (it->shape != t.shape())
      throw IntegrityError(fmt::format("checkpoint parameter '{}' has shape {}, model expects {}",
                                       name, shape_str(it->shape), shape_str(t.shape())));
    std::copy(it->values.begin(), it->values.end(), t.mutable_values().begin());
  }
}

}  // namespace debias
