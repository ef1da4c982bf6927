#include "plume/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "plume/error.hpp"

namespace plume {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'L', 'U', 'M', 'E', 'C', 'K', 'P'};
constexpr const char* kChannelOrder = "seismic,well_saturation,well_pressure";

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

json config_json(const FlowConfig& c) {
  return json{{"channels", c.channels},
              {"cond_channels", c.cond_channels},
              {"height", c.height},
              {"width", c.width},
              {"levels", c.levels},
              {"steps_per_level", c.steps_per_level},
              {"hidden_channels", c.hidden_channels},
              {"clamp", c.clamp},
              {"seed", c.seed}};
}

FlowConfig config_from(const json& j) {
  FlowConfig c;
  c.channels = j.at("channels").get<int>();
  c.cond_channels = j.at("cond_channels").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.levels = j.at("levels").get<int>();
  c.steps_per_level = j.at("steps_per_level").get<int>();
  c.hidden_channels = j.at("hidden_channels").get<int>();
  c.clamp = j.at("clamp").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct Raw {
  json header;
  std::vector<char> data;
};

Raw read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0, header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_len), 4);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("checkpoint: " + path.string() + " is not a plume checkpoint");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  std::string text(header_len, '\0');
  in.read(text.data(), header_len);
  if (!in) throw FormatError("checkpoint: truncated header");
  Raw raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  const auto bytes = raw.header.at("data_bytes").get<std::size_t>();
  raw.data.resize(bytes);
  in.read(raw.data.data(), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError("checkpoint: truncated data");
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(raw.data.data()),
                           static_cast<uInt>(raw.data.size()));
  if (crc != raw.header.at("data_crc32").get<std::uint32_t>())
    throw FormatError("checkpoint: data checksum mismatch");
  return raw;
}

CheckpointInfo info_from(const json& h) {
  CheckpointInfo info;
  info.version = h.at("format_version").get<int>();
  info.dtype = h.at("dtype").get<std::string>();
  info.config = config_from(h.at("architecture"));
  info.actnorm_initialized = h.at("actnorm_initialized").get<bool>();
  info.channel_order = h.at("channel_order").get<std::string>();
  info.extra_json = h.value("extra", json::object()).dump();
  return info;
}

template <typename S, typename T>
void copy_array(const std::vector<char>& data, const json& entry, std::span<T> dst) {
  const auto offset = entry.at("offset").get<std::size_t>();
  const auto count = entry.at("count").get<std::size_t>();
  if (count != dst.size() || offset + count * sizeof(S) > data.size())
    throw FormatError("checkpoint: array " + entry.at("name").get<std::string>() +
                      " has an unexpected size");
  for (std::size_t j = 0; j < count; ++j) {
    S v;
    std::memcpy(&v, data.data() + offset + j * sizeof(S), sizeof(S));
    dst[j] = static_cast<T>(v);
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FlowModel<T>& model,
                     const std::string& extra_json) {
  std::vector<char> data;
  json arrays = json::array();
  const auto append = [&](const std::string& name, const std::vector<int>& shape, const T* p,
                          std::size_t count) {
    arrays.push_back({{"name", name}, {"shape", shape}, {"offset", data.size()}, {"count", count}});
    const char* b = reinterpret_cast<const char*>(p);
    data.insert(data.end(), b, b + count * sizeof(T));
  };
  for (const auto& info : model.param_info())
    append(info.name, info.shape, model.params().data() + info.offset, info.count);
  append("cond_scale", {static_cast<int>(model.cond_scale().size())}, model.cond_scale().data(),
         model.cond_scale().size());

  json header;
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<T>();
  header["architecture"] = config_json(model.config());
  header["resolution"] = {model.config().height, model.config().width};
  header["channel_order"] = kChannelOrder;
  header["actnorm_initialized"] = model.actnorm_initialized();
  header["actnorm_floor_hit"] = model.actnorm_floor_hit();
  header["permutations"] = model.permutations();
  header["arrays"] = arrays;
  header["data_bytes"] = data.size();
  header["data_crc32"] = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
  try {
    header["extra"] = json::parse(extra_json);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("save_checkpoint: extra metadata is not JSON: ") + e.what());
  }
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write " + tmp);
    const std::uint32_t version = kCheckpointVersion;
    const auto header_len = static_cast<std::uint32_t>(text.size());
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&header_len), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
FlowModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const Raw raw = read_raw(path);
  const json& h = raw.header;
  CheckpointInfo ci = info_from(h);
  FlowModel<T> model(ci.config);
  model.set_permutations(h.at("permutations").get<std::vector<std::vector<int>>>());

  const json& arrays = h.at("arrays");
  const bool f32 = ci.dtype == "f32";
  if (!f32 && ci.dtype != "f64") throw FormatError("checkpoint: unknown dtype " + ci.dtype);
  std::size_t j = 0;
  for (const auto& p : model.param_info()) {
    if (j >= arrays.size() || arrays[j].at("name").get<std::string>() != p.name)
      throw FormatError("checkpoint: parameter " + p.name + " missing or out of order");
    std::span<T> dst(model.params().data() + p.offset, p.count);
    if (f32)
      copy_array<float>(raw.data, arrays[j], dst);
    else
      copy_array<double>(raw.data, arrays[j], dst);
    ++j;
  }
  if (j >= arrays.size() || arrays[j].at("name").get<std::string>() != "cond_scale")
    throw FormatError("checkpoint: cond_scale missing");
  std::vector<T> scale(ci.config.cond_channels);
  if (f32)
    copy_array<float>(raw.data, arrays[j], std::span<T>(scale));
  else
    copy_array<double>(raw.data, arrays[j], std::span<T>(scale));
  model.set_cond_scale(std::move(scale));
  model.set_actnorm_initialized(ci.actnorm_initialized);
  if (info != nullptr) *info = std::move(ci);
  return model;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return info_from(read_raw(path).header);
}

template void save_checkpoint<float>(const std::filesystem::path&, const FlowModel<float>&,
                                     const std::string&);
template void save_checkpoint<double>(const std::filesystem::path&, const FlowModel<double>&,
                                      const std::string&);
template FlowModel<float> load_checkpoint<float>(const std::filesystem::path&, CheckpointInfo*);
template FlowModel<double> load_checkpoint<double>(const std::filesystem::path&, CheckpointInfo*);

}  // namespace plume
