#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgf/core/error.hpp"
#include "cgf/data/raster.hpp"
#include "cgf/data/synth.hpp"

namespace cgf::data {

inline constexpr const char* kManifestName = "manifest.json";

struct ManifestEntry {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  std::string pan;
  std::string lrms;
  std::string gt;  // empty when the pair has no reference
};

struct Manifest {
  std::size_t ratio = kDefaultRatio;
  double blur_sigma = kDefaultBlurSigma;
  std::vector<ManifestEntry> samples;
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["ratio"] = m.ratio;
  j["blur_sigma"] = m.blur_sigma;
  j["samples"] = nlohmann::json::array();
  for (const auto& e : m.samples) {
    nlohmann::json s{{"id", e.id}, {"seed", e.seed}, {"pan", e.pan}, {"lrms", e.lrms}};
    if (!e.gt.empty()) s["gt"] = e.gt;
    j["samples"].push_back(s);
  }
  return j;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.ratio = j.at("ratio").get<std::size_t>();
    m.blur_sigma = j.value("blur_sigma", kDefaultBlurSigma);
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::size_t>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.pan = s.at("pan").get<std::string>();
      e.lrms = s.at("lrms").get<std::string>();
      e.gt = s.value("gt", std::string());
      m.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, path.string() + ": " + e.what());
  }
  return m;
}

// Writes n scenes (seed, seed+1, ...) as PAN/LRMS(/GT) rasters plus a manifest.
inline Manifest write_synthetic_dataset(const std::filesystem::path& dir, std::size_t n, std::size_t size, std::size_t channels,
                                        std::uint64_t seed, bool with_gt = true, std::size_t ratio = kDefaultRatio,
                                        double blur_sigma = kDefaultBlurSigma) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw FormatError(FormatError::Kind::io, "cannot create directory " + dir.string());
  Manifest m;
  m.ratio = ratio;
  m.blur_sigma = blur_sigma;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = seed + i;
    const SamplePair pair = wald_degrade(synth_scene(s, size, channels), ratio, blur_sigma);
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04zu", i);
    ManifestEntry e{i, s, std::string(stem) + "_pan.msr", std::string(stem) + "_lrms.msr", ""};
    write_raster(dir / e.pan, pair.pan);
    write_raster(dir / e.lrms, pair.lrms);
    if (with_gt) {
      e.gt = std::string(stem) + "_gt.msr";
      write_raster(dir / e.gt, *pair.gt);
    }
    m.samples.push_back(e);
  }
  std::ofstream out(dir / kManifestName);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot write manifest in " + dir.string());
  out << to_json(m).dump(2) << '\n';
  return m;
}

inline std::vector<SamplePair> load_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<SamplePair> out;
  for (const auto& e : m.samples) {
    SamplePair p;
    p.ratio = m.ratio;
    p.pan = read_raster(dir / e.pan);
    p.lrms = read_raster(dir / e.lrms);
    if (!e.gt.empty()) p.gt = read_raster(dir / e.gt);
    p.validate();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace cgf::data
