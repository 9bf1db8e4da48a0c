#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/rng.hpp"
#include "pcl_forge/synth/generate.hpp"
#include "pcl_forge/synth/pnm.hpp"

namespace pclf::synth {

struct DatasetConfig {
  SynthConfig synth;
  int train = 200;
  int test = 50;
  int test_pristine = 0;
  double labeled_fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<ManipType> types{ManipType::splice, ManipType::copy_move, ManipType::removal};
};

inline nlohmann::json to_json(const DatasetConfig& c) {
  nlohmann::json types = nlohmann::json::array();
  for (auto t : c.types) types.push_back(std::string(to_string(t)));
  return {{"size", c.synth.size},
          {"noise_sigma_min", c.synth.noise_sigma_min},
          {"noise_sigma_max", c.synth.noise_sigma_max},
          {"area_min", c.synth.area_min},
          {"area_max", c.synth.area_max},
          {"blur", c.synth.blur},
          {"blur_sigma", c.synth.blur_sigma},
          {"regions", c.synth.regions},
          {"inpaint_iterations", c.synth.inpaint_iterations},
          {"max_shapes", c.synth.max_shapes},
          {"train", c.train},
          {"test", c.test},
          {"test_pristine", c.test_pristine},
          {"labeled_fraction", c.labeled_fraction},
          {"seed", c.seed},
          {"types", types}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.synth.size = j.value("size", c.synth.size);
  c.synth.noise_sigma_min = j.value("noise_sigma_min", c.synth.noise_sigma_min);
  c.synth.noise_sigma_max = j.value("noise_sigma_max", c.synth.noise_sigma_max);
  c.synth.area_min = j.value("area_min", c.synth.area_min);
  c.synth.area_max = j.value("area_max", c.synth.area_max);
  c.synth.blur = j.value("blur", c.synth.blur);
  c.synth.blur_sigma = j.value("blur_sigma", c.synth.blur_sigma);
  c.synth.regions = j.value("regions", c.synth.regions);
  c.synth.inpaint_iterations = j.value("inpaint_iterations", c.synth.inpaint_iterations);
  c.synth.max_shapes = j.value("max_shapes", c.synth.max_shapes);
  c.train = j.value("train", c.train);
  c.test = j.value("test", c.test);
  c.test_pristine = j.value("test_pristine", c.test_pristine);
  c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
  c.seed = j.value("seed", c.seed);
  if (j.contains("types")) {
    c.types.clear();
    for (const auto& t : j.at("types")) c.types.push_back(manip_type_from_string(t.get<std::string>()));
  }
  return c;
}

struct ManifestRecord {
  std::string image;
  std::string mask;
  std::vector<Box> boxes;
  ManipType type = ManipType::splice;
  bool labeled = true;
  std::string split;
};

struct Manifest {
  std::filesystem::path root;
  std::uint64_t global_seed = 0;
  nlohmann::json config;
  std::vector<ManifestRecord> records;

  std::vector<int> indices(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(records.size()); ++i)
      if (records[static_cast<std::size_t>(i)].split == split) out.push_back(i);
    return out;
  }
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    recs.push_back({{"image", r.image},
                    {"mask", r.mask},
                    {"boxes", boxes},
                    {"type", std::string(to_string(r.type))},
                    {"labeled", r.labeled},
                    {"split", r.split}});
  }
  return {{"global_seed", m.global_seed}, {"config", m.config}, {"records", recs}};
}

inline Manifest manifest_from_json(const nlohmann::json& j, std::filesystem::path root) {
  Manifest m;
  m.root = std::move(root);
  m.global_seed = j.value("global_seed", std::uint64_t{0});
  m.config = j.value("config", nlohmann::json::object());
  for (const auto& r : j.at("records")) {
    ManifestRecord rec;
    rec.image = r.at("image").get<std::string>();
    rec.mask = r.at("mask").get<std::string>();
    for (const auto& b : r.at("boxes")) rec.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
    rec.type = manip_type_from_string(r.at("type").get<std::string>());
    rec.labeled = r.at("labeled").get<bool>();
    rec.split = r.at("split").get<std::string>();
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

// One loaded sample, ready for the detector.
struct Sample {
  Image image;
  Mask mask;
  std::vector<Box> boxes;
  ManipType type = ManipType::splice;
  bool labeled = true;
};

inline Sample load_sample(const Manifest& m, int index) {
  const auto& r = m.records.at(static_cast<std::size_t>(index));
  return {read_ppm(m.root / r.image), read_pgm(m.root / r.mask), r.boxes, r.type, r.labeled};
}

inline std::uint64_t record_seed(std::uint64_t global_seed, int index) {
  return hash_seed(global_seed, static_cast<std::uint64_t>(index));
}

// Pure function of (config, record seed). Generation failures are retried
// with derived sub-seeds so the per-type counts stay exact.
inline TamperRecord generate_record(const DatasetConfig& cfg, std::uint64_t seed, ManipType type) {
  const int size = cfg.synth.size;
  for (std::uint64_t attempt = 0; attempt < 50; ++attempt) {
    const std::uint64_t s = hash_seed(seed, attempt);
    try {
      switch (type) {
        case ManipType::splice:
          return apply_splice(generate_base_image(hash_seed(s, 1), size, cfg.synth),
                              generate_base_image(hash_seed(s, 2), size, cfg.synth), hash_seed(s, 3), cfg.synth);
        case ManipType::copy_move:
          return apply_copy_move(generate_base_image(hash_seed(s, 1), size, cfg.synth), hash_seed(s, 3), cfg.synth);
        case ManipType::removal:
          return apply_removal(generate_base_image(hash_seed(s, 1), size, cfg.synth), hash_seed(s, 3), cfg.synth);
        case ManipType::pristine:
          return make_pristine(generate_base_image(hash_seed(s, 1), size, cfg.synth));
      }
    } catch (const GenerationFailure&) {
    }
  }
  throw GenerationFailure("generate_record: exhausted retries");
}

struct PlannedRecord {
  int index;
  std::string split;
  ManipType type;
  bool labeled;
};

// Split/type/label assignment without any pixel work.
inline std::vector<PlannedRecord> plan_records(const DatasetConfig& cfg) {
  PCLF_REQUIRE(cfg.train >= 0 && cfg.test >= 0 && cfg.test_pristine >= 0, InvalidArgument, "negative record count");
  PCLF_REQUIRE(!cfg.types.empty(), InvalidArgument, "no manipulation types configured");
  PCLF_REQUIRE(cfg.labeled_fraction >= 0 && cfg.labeled_fraction <= 1, InvalidArgument, "labeled_fraction outside [0,1]");
  std::vector<PlannedRecord> plan;
  const int n_types = static_cast<int>(cfg.types.size());
  for (int i = 0; i < cfg.train; ++i) plan.push_back({i, "train", cfg.types[static_cast<std::size_t>(i % n_types)], false});
  for (int i = 0; i < cfg.test; ++i)
    plan.push_back({cfg.train + i, "test", cfg.types[static_cast<std::size_t>(i % n_types)], true});
  for (int i = 0; i < cfg.test_pristine; ++i) plan.push_back({cfg.train + cfg.test + i, "test", ManipType::pristine, true});

  std::vector<int> order(static_cast<std::size_t>(cfg.train));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_seed(cfg.seed, 0x1abe1ULL));
  std::shuffle(order.begin(), order.end(), rng);
  const int n_labeled = static_cast<int>(std::lround(cfg.labeled_fraction * cfg.train));
  for (int k = 0; k < n_labeled; ++k) plan[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].labeled = true;
  return plan;
}

inline Manifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  Manifest m;
  m.root = out_dir;
  m.global_seed = cfg.seed;
  m.config = to_json(cfg);
  for (const auto& p : plan_records(cfg)) {
    const TamperRecord rec = generate_record(cfg, record_seed(cfg.seed, p.index), p.type);
    char name[32];
    std::snprintf(name, sizeof(name), "%05d", p.index);
    ManifestRecord mr{std::string("images/") + name + ".ppm", std::string("masks/") + name + ".pgm", rec.boxes,
                      p.type, p.labeled, p.split};
    write_ppm(out_dir / mr.image, rec.image);
    write_pgm(out_dir / mr.mask, rec.mask);
    m.records.push_back(std::move(mr));
  }
  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + out_dir.string());
  os << to_json(m).dump(1) << "\n";
  return m;
}

}  // namespace pclf::synth
