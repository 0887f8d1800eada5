#include "mcpm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mcpm {

namespace {

using nlohmann::json;

constexpr char kMagic[5] = {'M', 'P', 'C', 'K', 0x01};

void put_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64_le(std::istream& is, const std::string& what) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (is.gcount() != 8) throw runtime_error(what + ": truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

json seg_to_json(const SegConfig& c) {
  return json{{"in_channels", c.in_channels},
              {"out_channels", c.out_channels},
              {"depth", c.depth},
              {"base_channels", c.base_channels}};
}

SegConfig seg_from_json(const json& j) {
  SegConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.depth = j.at("depth").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  return c;
}

json mask_to_json(const MaskConfig& c) {
  return json{{"hidden_channels", c.hidden_channels}, {"normalize_input", c.normalize_input}};
}

MaskConfig mask_from_json(const json& j) {
  MaskConfig c;
  c.hidden_channels = j.at("hidden_channels").get<int>();
  c.normalize_input = j.at("normalize_input").get<bool>();
  return c;
}

void check_against_layout(const ParamSet& params, const std::vector<TensorSpec>& layout,
                          const char* role, const std::string& path) {
  if (params.tensors.size() != layout.size()) {
    throw runtime_error(path + ": " + role + " section has " +
                        std::to_string(params.tensors.size()) + " tensors, config implies " +
                        std::to_string(layout.size()));
  }
  for (size_t i = 0; i < layout.size(); ++i) {
    if (params.tensors[i].name != layout[i].name || params.tensors[i].value.shape != layout[i].shape) {
      throw runtime_error(path + ": tensor " + std::to_string(i) + " is " +
                          params.tensors[i].name + params.tensors[i].value.shape_str() +
                          ", config implies " + layout[i].name +
                          Tensor(layout[i].shape).shape_str());
    }
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  check_against_layout(ckpt.seg, seg_param_layout(ckpt.seg_config), "seg", path);
  if (ckpt.has_mask) {
    check_against_layout(ckpt.mask, mask_param_layout(ckpt.mask_config), "mask", path);
  }

  // serialize the blob section first so offsets are known
  std::ostringstream blobs(std::ios::binary);
  json tensors = json::array();
  auto emit = [&](const ParamSet& p, const char* role) {
    for (const NamedTensor& t : p.tensors) {
      json e{{"name", t.name},
             {"role", role},
             {"shape", t.value.shape},
             {"offset", static_cast<uint64_t>(blobs.tellp())}};
      tensors.push_back(std::move(e));
      write_mptd_stream(blobs, t.value);
    }
  };
  emit(ckpt.seg, "seg");
  if (ckpt.has_mask) emit(ckpt.mask, "mask");

  json manifest{{"format", 1},
                {"seg", seg_to_json(ckpt.seg_config)},
                {"tensors", std::move(tensors)}};
  if (ckpt.has_mask) manifest["mask"] = mask_to_json(ckpt.mask_config);
  if (!ckpt.extra.empty()) {
    json extra = json::parse(ckpt.extra, nullptr, false);
    if (extra.is_discarded()) throw runtime_error(path + ": extra is not valid JSON");
    manifest["extra"] = std::move(extra);
  }

  const std::string mtext = manifest.dump();
  const std::string btext = blobs.str();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw runtime_error(path + ": cannot open for writing");
  os.write(kMagic, 5);
  put_u64_le(os, mtext.size());
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  os.write(btext.data(), static_cast<std::streamsize>(btext.size()));
  os.flush();
  if (!os) throw runtime_error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw runtime_error(path + ": cannot open");
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0) {
    throw runtime_error(path + ": not a checkpoint file");
  }
  const uint64_t mlen = get_u64_le(is, path);
  if (mlen > (1ull << 30)) throw runtime_error(path + ": manifest length is implausible");
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (static_cast<uint64_t>(is.gcount()) != mlen) throw runtime_error(path + ": truncated manifest");

  json manifest = json::parse(mtext, nullptr, false);
  if (manifest.is_discarded()) throw runtime_error(path + ": manifest is not valid JSON");

  Checkpoint ckpt;
  try {
    if (manifest.at("format").get<int>() != 1) {
      throw runtime_error(path + ": unsupported format version");
    }
    ckpt.seg_config = seg_from_json(manifest.at("seg"));
    ckpt.has_mask = manifest.contains("mask");
    if (ckpt.has_mask) ckpt.mask_config = mask_from_json(manifest.at("mask"));
    if (manifest.contains("extra")) ckpt.extra = manifest["extra"].dump();

    const std::streampos blob_base = is.tellg();
    for (const json& e : manifest.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const std::string role = e.at("role").get<std::string>();
      const uint64_t offset = e.at("offset").get<uint64_t>();
      is.seekg(blob_base + static_cast<std::streamoff>(offset));
      Tensor t = read_mptd_stream(is, path + ":" + name);
      const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
      if (t.shape != shape) {
        throw runtime_error(path + ":" + name + ": shape " + t.shape_str() +
                            " does not match manifest");
      }
      if (role == "seg") {
        ckpt.seg.tensors.push_back({name, std::move(t)});
      } else if (role == "mask") {
        ckpt.mask.tensors.push_back({name, std::move(t)});
      } else {
        throw runtime_error(path + ":" + name + ": unknown role " + role);
      }
    }
  } catch (const json::exception& e) {
    throw runtime_error(path + ": bad manifest: " + e.what());
  }

  check_against_layout(ckpt.seg, seg_param_layout(ckpt.seg_config), "seg", path);
  if (ckpt.has_mask) {
    check_against_layout(ckpt.mask, mask_param_layout(ckpt.mask_config), "mask", path);
  } else if (!ckpt.mask.tensors.empty()) {
    throw runtime_error(path + ": mask tensors present without a mask config");
  }
  return ckpt;
}

}  // namespace mcpm
