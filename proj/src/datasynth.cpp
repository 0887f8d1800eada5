#include "mcpm/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mcpm/rng.hpp"

namespace mcpm {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void check_binary(const Tensor& t, const char* what) {
  for (double v : t.data) {
    if (v != 0.0 && v != 1.0) {
      throw runtime_error(std::string(what) + ": value " + std::to_string(v) + " is not 0 or 1");
    }
  }
}

void check_mask2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw runtime_error(std::string(what) + ": want [h,w], got " + t.shape_str());
  }
  check_binary(t, what);
}

// round half away from zero, for the corrupted-sample count
int round_count(double x) { return static_cast<int>(std::floor(x + 0.5)); }

Tensor band_of(const Tensor& label, const Tensor& clean) {
  const int c = label.shape[0], h = label.shape[1], w = label.shape[2];
  Tensor band({h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (label.at(ch, y, x) != clean.at(ch, y, x)) band.at(y, x) = 1.0;
      }
  return band;
}

void check_spec(const SyntheticSpec& s) {
  if (s.train_count < 1 || s.meta_count < 1 || s.test_count < 1) {
    throw config_error("synthetic spec: every split needs at least one sample");
  }
  if (s.h < 8 || s.w < 8) throw config_error("synthetic spec: h and w must be at least 8");
  if (s.blobs_lo < 1 || s.blobs_hi < s.blobs_lo) {
    throw config_error("synthetic spec: blob count range is invalid");
  }
  if (s.radius_lo <= 0.0 || s.radius_hi < s.radius_lo) {
    throw config_error("synthetic spec: blob radius range is invalid");
  }
  if (s.noise_sigma < 0.0) throw config_error("synthetic spec: negative noise sigma");
}

Tensor draw_blob_mask(const SyntheticSpec& s, Rng& rng) {
  Tensor mask({s.h, s.w});
  const int blobs = s.blobs_lo + static_cast<int>(rng.integer(
                                     static_cast<uint64_t>(s.blobs_hi - s.blobs_lo + 1)));
  for (int b = 0; b < blobs; ++b) {
    const double cy = rng.uniform(0.0, s.h - 1.0);
    const double cx = rng.uniform(0.0, s.w - 1.0);
    const double ra = rng.uniform(s.radius_lo, s.radius_hi);
    const double rb = rng.uniform(s.radius_lo, s.radius_hi);
    const double phi = rng.uniform(0.0, 3.14159265358979323846);
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double u = (dx * cphi + dy * sphi) / ra;
        const double v = (-dx * sphi + dy * cphi) / rb;
        if (u * u + v * v <= 1.0) mask.at(y, x) = 1.0;
      }
  }
  return mask;
}

Sample draw_sample(const SyntheticSpec& s, uint64_t seed) {
  Rng rng(seed);
  // resample shapes whose foreground fraction leaves the usable band;
  // tiny clipped slivers and near-full frames both starve the metrics
  Tensor mask;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    mask = draw_blob_mask(s, rng);
    double fg = 0.0;
    for (double v : mask.data) fg += v;
    fg /= static_cast<double>(mask.numel());
    ok = fg >= 0.03 && fg <= 0.5;
  }
  if (!ok) throw runtime_error("synthetic generator: no usable foreground in 100 attempts");

  Sample out;
  out.clean_label = Tensor({1, s.h, s.w}, mask.data);
  out.label = out.clean_label;
  out.corruption_band = Tensor({s.h, s.w});
  out.image = Tensor({1, s.h, s.w});
  for (size_t i = 0; i < mask.numel(); ++i) {
    const double base = mask.data[i] > 0.5 ? s.fg_mean : s.bg_mean;
    const double noisy = base + (s.noise_sigma > 0.0 ? s.noise_sigma * rng.normal() : 0.0);
    out.image.data[i] = std::min(std::max(noisy, 0.0), 1.0);
  }
  return out;
}

Dataset draw_split(const SyntheticSpec& s, Split split, const char* tag, int count) {
  Dataset ds;
  ds.split = split;
  ds.samples.reserve(count);
  for (int i = 0; i < count; ++i) ds.samples.push_back(draw_sample(s, derive_seed(s.seed, tag, i)));
  return ds;
}

}  // namespace

DatasetBundle generate(const SyntheticSpec& spec) {
  check_spec(spec);
  DatasetBundle b;
  b.train = draw_split(spec, Split::kTrain, "train", spec.train_count);
  b.meta = draw_split(spec, Split::kMeta, "meta", spec.meta_count);
  b.test = draw_split(spec, Split::kTest, "test", spec.test_count);
  return b;
}

Tensor dilate(const Tensor& mask, int radius) {
  check_mask2d(mask, "dilate");
  if (radius < 0) throw config_error("dilate: negative radius");
  if (radius == 0) return mask;
  const int h = mask.shape[0], w = mask.shape[1];
  // disk offsets once; dx^2 + dy^2 <= r^2
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) disk.emplace_back(dy, dx);
    }
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0.0) continue;
      for (const auto& [dy, dx] : disk) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < h && nx >= 0 && nx < w) out.at(ny, nx) = 1.0;
      }
    }
  return out;
}

Tensor elastic_warp(const Tensor& mask, const Tensor& disp, double theta, double ty, double tx) {
  check_mask2d(mask, "elastic warp");
  const int h = mask.shape[0], w = mask.shape[1];
  if (disp.rank() != 3 || disp.shape[0] != 2 || disp.shape[1] != h || disp.shape[2] != w) {
    throw runtime_error("elastic warp: displacement field " + disp.shape_str() + ", want [2," +
                        std::to_string(h) + "," + std::to_string(w) + "]");
  }
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ct = std::cos(-theta), st = std::sin(-theta);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double py = y - ty - cy, px = x - tx - cx;
      const double sy = ct * py - st * px + cy + disp.at(0, y, x);
      const double sx = st * py + ct * px + cx + disp.at(1, y, x);
      const long iy = std::lround(sy), ix = std::lround(sx);
      if (iy >= 0 && iy < h && ix >= 0 && ix < w) out.at(y, x) = mask.at(static_cast<int>(iy), static_cast<int>(ix));
    }
  return out;
}

Tensor elastic(const Tensor& mask, const ElasticParams& params, uint64_t seed) {
  check_mask2d(mask, "elastic");
  if (params.grid_spacing < 4) throw config_error("elastic: grid spacing must be at least 4");
  if (params.displacement_sigma < 0.0) throw config_error("elastic: negative displacement sigma");
  if (params.dilation_lo < 0 || params.dilation_hi < params.dilation_lo) {
    throw config_error("elastic: dilation radius range is invalid");
  }
  const int h = mask.shape[0], w = mask.shape[1];
  Rng rng(seed);

  // gaussian offsets on a coarse grid covering the image
  const int g = params.grid_spacing;
  const int gh = (h - 1) / g + 2, gw = (w - 1) / g + 2;
  Tensor coarse({2, gh, gw});
  for (double& v : coarse.data) v = params.displacement_sigma * rng.normal();

  // bilinear upsample to a dense field
  Tensor disp({2, h, w});
  for (int p = 0; p < 2; ++p)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double fy = static_cast<double>(y) / g, fx = static_cast<double>(x) / g;
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const double ay = fy - y0, ax = fx - x0;
        const double v00 = coarse.at(p, y0, x0), v01 = coarse.at(p, y0, x0 + 1);
        const double v10 = coarse.at(p, y0 + 1, x0), v11 = coarse.at(p, y0 + 1, x0 + 1);
        disp.at(p, y, x) = (1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11);
      }

  const double theta = params.rotation_max > 0.0
                           ? rng.uniform(-params.rotation_max, params.rotation_max)
                           : 0.0;
  const double ty = params.translation_max > 0.0
                        ? rng.uniform(-params.translation_max, params.translation_max)
                        : 0.0;
  const double tx = params.translation_max > 0.0
                        ? rng.uniform(-params.translation_max, params.translation_max)
                        : 0.0;
  Tensor warped = elastic_warp(mask, disp, theta, ty, tx);
  const int radius =
      params.dilation_lo +
      static_cast<int>(rng.integer(static_cast<uint64_t>(params.dilation_hi - params.dilation_lo + 1)));
  return dilate(warped, radius);
}

Dataset corrupt(const Dataset& dataset, const CorruptionSpec& spec) {
  if (spec.r < 0.0 || spec.r > 1.0) throw config_error("corrupt: r must lie in [0,1]");
  if (spec.radius_lo < 0 || spec.radius_hi < spec.radius_lo) {
    throw config_error("corrupt: dilation radius range is invalid");
  }
  if (dataset.split == Split::kMeta) {
    throw config_error("corrupt: the meta split stays clean by definition");
  }
  const int n = static_cast<int>(dataset.samples.size());
  const int k = round_count(spec.r * n);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng select(derive_seed(spec.seed, "select"));
  select.shuffle(order);
  std::vector<bool> chosen(n, false);
  for (int i = 0; i < k; ++i) chosen[order[i]] = true;

  Dataset out;
  out.split = dataset.split;
  out.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Sample& in = dataset.samples[i];
    check_binary(in.clean_label, "corrupt: clean label");
    Sample s;
    s.image = in.image;
    s.clean_label = in.clean_label;
    if (!chosen[i]) {
      s.label = in.clean_label;
      s.corrupted = false;
      s.corruption_band = Tensor({in.clean_label.shape[1], in.clean_label.shape[2]});
      out.samples.push_back(std::move(s));
      continue;
    }
    Rng per_image(derive_seed(spec.seed, "image", i));
    const int c = in.clean_label.shape[0];
    const int h = in.clean_label.shape[1], w = in.clean_label.shape[2];
    s.label = Tensor({c, h, w});
    if (spec.kind == CorruptionKind::kDilation) {
      const int radius =
          spec.radius_lo +
          static_cast<int>(per_image.integer(static_cast<uint64_t>(spec.radius_hi - spec.radius_lo + 1)));
      for (int ch = 0; ch < c; ++ch) {
        Tensor plane({h, w});
        std::copy_n(in.clean_label.data.begin() + static_cast<size_t>(ch) * h * w, plane.numel(),
                    plane.data.begin());
        Tensor grown = dilate(plane, radius);
        std::copy(grown.data.begin(), grown.data.end(),
                  s.label.data.begin() + static_cast<size_t>(ch) * h * w);
      }
    } else {
      const uint64_t warp_seed = per_image.next();
      for (int ch = 0; ch < c; ++ch) {
        Tensor plane({h, w});
        std::copy_n(in.clean_label.data.begin() + static_cast<size_t>(ch) * h * w, plane.numel(),
                    plane.data.begin());
        Tensor warped = elastic(plane, spec.elastic, warp_seed);
        std::copy(warped.data.begin(), warped.data.end(),
                  s.label.data.begin() + static_cast<size_t>(ch) * h * w);
      }
    }
    s.corrupted = true;
    s.corruption_band = band_of(s.label, s.clean_label);
    out.samples.push_back(std::move(s));
  }
  return out;
}

namespace {

const char* split_dir(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kMeta: return "meta";
    case Split::kTest: return "test";
  }
  return "train";
}

void save_split(const fs::path& root, const Dataset& ds) {
  const fs::path dir = root / split_dir(ds.split);
  fs::create_directories(dir);
  std::ofstream flags(dir / "flags.csv");
  if (!flags) throw runtime_error((dir / "flags.csv").string() + ": cannot open for writing");
  flags << "index,corrupted\n";
  char name[32];
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    std::snprintf(name, sizeof(name), "img_%05zu.mptd", i);
    write_mptd((dir / name).string(), s.image);
    std::snprintf(name, sizeof(name), "lbl_%05zu.mptd", i);
    write_mptd((dir / name).string(), s.label);
    std::snprintf(name, sizeof(name), "clean_%05zu.mptd", i);
    write_mptd((dir / name).string(), s.clean_label);
    flags << i << "," << (s.corrupted ? 1 : 0) << "\n";
  }
  flags.flush();
  if (!flags) throw runtime_error((dir / "flags.csv").string() + ": write failed");
}

Dataset load_split(const fs::path& root, Split split, int count) {
  const fs::path dir = root / split_dir(split);
  std::ifstream flags(dir / "flags.csv");
  if (!flags) throw runtime_error((dir / "flags.csv").string() + ": cannot open");
  std::string header;
  std::getline(flags, header);
  if (header != "index,corrupted") {
    throw runtime_error((dir / "flags.csv").string() + ": unexpected header '" + header + "'");
  }
  Dataset ds;
  ds.split = split;
  ds.samples.resize(count);
  std::vector<bool> seen(count, false);
  std::string line;
  while (std::getline(flags, line)) {
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw runtime_error((dir / "flags.csv").string() + ": bad row '" + line + "'");
    }
    const int idx = std::stoi(line.substr(0, comma));
    const int flag = std::stoi(line.substr(comma + 1));
    if (idx < 0 || idx >= count) {
      throw runtime_error((dir / "flags.csv").string() + ": index " + std::to_string(idx) +
                          " outside the manifest count");
    }
    ds.samples[idx].corrupted = flag != 0;
    seen[idx] = true;
  }
  for (int i = 0; i < count; ++i) {
    if (!seen[i]) {
      throw runtime_error((dir / "flags.csv").string() + ": missing row for sample " +
                          std::to_string(i));
    }
  }
  char name[32];
  for (int i = 0; i < count; ++i) {
    Sample& s = ds.samples[i];
    std::snprintf(name, sizeof(name), "img_%05d.mptd", i);
    s.image = read_mptd((dir / name).string());
    std::snprintf(name, sizeof(name), "lbl_%05d.mptd", i);
    s.label = read_mptd((dir / name).string());
    std::snprintf(name, sizeof(name), "clean_%05d.mptd", i);
    s.clean_label = read_mptd((dir / name).string());
    check_binary(s.label, "dataset label");
    check_binary(s.clean_label, "dataset clean label");
    if (!s.label.same_shape(s.clean_label) || s.label.rank() != 3) {
      throw runtime_error("dataset: sample " + std::to_string(i) + " label shapes disagree");
    }
    s.corruption_band = band_of(s.label, s.clean_label);
    if (!s.corrupted && s.corruption_band.numel() > 0) {
      for (double v : s.corruption_band.data) {
        if (v != 0.0) {
          throw runtime_error("dataset: sample " + std::to_string(i) +
                              " is flagged clean but label and clean label disagree");
        }
      }
    }
  }
  return ds;
}

}  // namespace

void save_bundle(const std::string& dir, const DatasetBundle& bundle, const SyntheticSpec& spec,
                 const CorruptionSpec* corruption) {
  const fs::path root(dir);
  fs::create_directories(root);
  json manifest{
      {"format", 1},
      {"h", spec.h},
      {"w", spec.w},
      {"counts",
       {{"train", bundle.train.samples.size()},
        {"meta", bundle.meta.samples.size()},
        {"test", bundle.test.samples.size()}}},
      {"spec",
       {{"train_count", spec.train_count},
        {"meta_count", spec.meta_count},
        {"test_count", spec.test_count},
        {"h", spec.h},
        {"w", spec.w},
        {"blobs_lo", spec.blobs_lo},
        {"blobs_hi", spec.blobs_hi},
        {"radius_lo", spec.radius_lo},
        {"radius_hi", spec.radius_hi},
        {"fg_mean", spec.fg_mean},
        {"bg_mean", spec.bg_mean},
        {"noise_sigma", spec.noise_sigma},
        {"seed", spec.seed}}},
  };
  if (corruption) {
    manifest["corruption"] = json{
        {"r", corruption->r},
        {"kind", corruption->kind == CorruptionKind::kDilation ? "dilation" : "elastic"},
        {"radius_lo", corruption->radius_lo},
        {"radius_hi", corruption->radius_hi},
        {"elastic",
         {{"grid_spacing", corruption->elastic.grid_spacing},
          {"displacement_sigma", corruption->elastic.displacement_sigma},
          {"rotation_max", corruption->elastic.rotation_max},
          {"translation_max", corruption->elastic.translation_max},
          {"dilation_lo", corruption->elastic.dilation_lo},
          {"dilation_hi", corruption->elastic.dilation_hi}}},
        {"seed", corruption->seed},
    };
  }
  std::ofstream os(root / "manifest.json");
  if (!os) throw runtime_error((root / "manifest.json").string() + ": cannot open for writing");
  os << manifest.dump(2) << "\n";
  os.flush();
  if (!os) throw runtime_error((root / "manifest.json").string() + ": write failed");
  save_split(root, bundle.train);
  save_split(root, bundle.meta);
  save_split(root, bundle.test);
}

DatasetBundle load_bundle(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream is(root / "manifest.json");
  if (!is) throw runtime_error((root / "manifest.json").string() + ": cannot open");
  json manifest = json::parse(is, nullptr, false);
  if (manifest.is_discarded()) {
    throw runtime_error((root / "manifest.json").string() + ": not valid JSON");
  }
  int train_n = 0, meta_n = 0, test_n = 0;
  try {
    if (manifest.at("format").get<int>() != 1) {
      throw runtime_error((root / "manifest.json").string() + ": unsupported format version");
    }
    train_n = manifest.at("counts").at("train").get<int>();
    meta_n = manifest.at("counts").at("meta").get<int>();
    test_n = manifest.at("counts").at("test").get<int>();
  } catch (const json::exception& e) {
    throw runtime_error((root / "manifest.json").string() + ": bad manifest: " + e.what());
  }
  DatasetBundle b;
  b.train = load_split(root, Split::kTrain, train_n);
  b.meta = load_split(root, Split::kMeta, meta_n);
  b.test = load_split(root, Split::kTest, test_n);
  for (const Sample& s : b.meta.samples) {
    if (s.corrupted) {
      throw runtime_error(dir + ": meta split contains a corrupted sample");
    }
  }
  return b;
}

}  // namespace mcpm
