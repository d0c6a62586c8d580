#include "rvlm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rvlm/config.hpp"
#include "rvlm/errors.hpp"

namespace rvlm {
namespace {

constexpr char kMagic[8] = {'R', 'V', 'L', 'M', 'C', 'K', 'P', 'T'};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

[[noreturn]] void corrupt(const std::string& what) { throw Error(Errc::CorruptArchive, what); }

}  // namespace

std::string serialize_checkpoint(const RegionVlm& model, const nlohmann::json& provenance) {
  const ParamStore& ps = model.params();
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t data_hash = fingerprint({});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Parameter& p = ps.at(i);
    params.push_back({{"name", p.name},
                      {"group", p.group},
                      {"shape", {p.value.rows(), p.value.cols()}},
                      {"offset", offset},
                      {"hash", hex(fingerprint(p.value.flat()))}});
    data_hash = fingerprint(p.value.flat(), data_hash);
    offset += p.value.size();
  }
  nlohmann::json fps = nlohmann::json::object();
  for (const auto& [g, h] : ps.fingerprints()) fps[g] = hex(h);
  const nlohmann::json manifest = {{"format", "rvlm-checkpoint"},
                                   {"version", 1},
                                   {"config", to_json(model.config())},
                                   {"provenance", provenance},
                                   {"params", params},
                                   {"n_values", offset},
                                   {"data_hash", hex(data_hash)},
                                   {"fingerprints", fps}};
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (double v : ps.at(i).value.flat()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

void save_checkpoint(const RegionVlm& model, const std::filesystem::path& path, const nlohmann::json& provenance) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(model, provenance);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot write checkpoint '" + path.string() + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(Errc::IoError, "short write to '" + path.string() + "'");
}

namespace {

struct Parsed {
  nlohmann::json manifest;
  const char* data = nullptr;
  std::size_t n_values = 0;
};

Parsed parse(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) corrupt("not a checkpoint (bad magic)");
  const std::uint64_t len = get_u64(bytes.data() + 8);
  if (len > bytes.size() - 16) corrupt("truncated manifest");
  Parsed p;
  try {
    p.manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    p.n_values = p.manifest.at("n_values").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("unreadable manifest: ") + e.what());
  }
  const std::size_t data_bytes = bytes.size() - 16 - len;
  if (data_bytes != p.n_values * 8)
    corrupt("data block holds " + std::to_string(data_bytes) + " bytes, manifest expects " +
            std::to_string(p.n_values * 8));
  p.data = bytes.data() + 16 + len;
  return p;
}

void fill(RegionVlm& model, const Parsed& parsed) {
  ParamStore& ps = model.params();
  const auto& entries = parsed.manifest.at("params");
  if (entries.size() != ps.size())
    corrupt("checkpoint has " + std::to_string(entries.size()) + " parameters, model has " + std::to_string(ps.size()));
  std::uint64_t data_hash = fingerprint({});
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = ps.at(i);
    const auto& e = entries[i];
    if (e.at("name") != p.name || e.at("group") != p.group || e.at("shape")[0] != p.value.rows() ||
        e.at("shape")[1] != p.value.cols())
      corrupt("parameter " + std::to_string(i) + " ('" + e.at("name").get<std::string>() + "') does not match '" +
              p.name + "'");
    const auto off = e.at("offset").get<std::size_t>();
    if (off + p.value.size() > parsed.n_values) corrupt("parameter '" + p.name + "' runs past the data block");
    auto dst = p.value.flat();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = std::bit_cast<double>(get_u64(parsed.data + 8 * (off + k)));
    if (e.at("hash") != hex(fingerprint(p.value.flat()))) corrupt("hash mismatch for parameter '" + p.name + "'");
    data_hash = fingerprint(p.value.flat(), data_hash);
  }
  if (parsed.manifest.at("data_hash") != hex(data_hash)) corrupt("data hash mismatch");
  model.sync_encoder();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::unique_ptr<RegionVlm> deserialize_checkpoint(const std::string& bytes, CheckpointManifest* manifest) {
  const Parsed parsed = parse(bytes);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(parsed.manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad config in manifest: ") + e.what());
  } catch (const Error& e) {
    corrupt(std::string("bad config in manifest: ") + e.what());
  }
  auto model = std::make_unique<RegionVlm>(cfg);
  try {
    fill(*model, parsed);
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed manifest: ") + e.what());
  }
  if (manifest != nullptr) {
    manifest->config = cfg;
    manifest->provenance = parsed.manifest.value("provenance", nlohmann::json::object());
    manifest->fingerprints = model->params().fingerprints();
  }
  return model;
}

std::unique_ptr<RegionVlm> load_checkpoint(const std::filesystem::path& path, CheckpointManifest* manifest) {
  return deserialize_checkpoint(read_file(path), manifest);
}

void restore_checkpoint(RegionVlm& model, const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const Parsed parsed = parse(bytes);
  try {
    fill(model, parsed);
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace rvlm
