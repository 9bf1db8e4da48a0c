#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "oracles.hpp"

using namespace pclf;
using namespace pclf::synth;
namespace fs = std::filesystem;

namespace {

SynthConfig no_blur() {
  SynthConfig c;
  c.blur = false;
  return c;
}

// Independent bbox scan of one 8-connected component grown from a seed pixel.
std::vector<Box> component_boxes_oracle(const Mask& m) {
  std::vector<int> seen(m.bits.size(), 0);
  std::vector<Box> out;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x) || seen[std::size_t(y * m.width + x)]) continue;
      int x1 = x, x2 = x, y1 = y, y2 = y;
      std::vector<std::pair<int, int>> stack{{y, x}};
      seen[std::size_t(y * m.width + x)] = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        x1 = std::min(x1, cx), x2 = std::max(x2, cx), y1 = std::min(y1, cy), y2 = std::max(y2, cy);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width || !m.at(ny, nx)) continue;
            auto& s = seen[std::size_t(ny * m.width + nx)];
            if (!s) {
              s = 1;
              stack.emplace_back(ny, nx);
            }
          }
      }
      out.push_back({double(x1), double(y1), double(x2 + 1), double(y2 + 1)});
    }
  return out;
}

double mean_abs_laplacian(const Image& img, const Mask& m) {
  double sum = 0;
  int n = 0;
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x) {
      if (!m.at(y, x)) continue;
      for (int c = 0; c < 3; ++c)
        sum += std::abs(4 * img.at(y, x, c) - img.at(y - 1, x, c) - img.at(y + 1, x, c) - img.at(y, x - 1, c) -
                        img.at(y, x + 1, c));
      ++n;
    }
  return n ? sum / n : 0.0;
}

void check_record(const TamperRecord& r, const SynthConfig& cfg) {
  EXPECT_FALSE(r.boxes.empty());
  EXPECT_EQ(r.boxes, component_boxes_oracle(r.mask));
  const double frac = r.mask.area_fraction();
  EXPECT_GE(frac, cfg.area_min);
  EXPECT_LE(frac, cfg.area_max);
  for (const auto& b : r.boxes) {
    EXPECT_GE(b.x1, 0);
    EXPECT_LT(b.x1, b.x2);
    EXPECT_LE(b.x2, r.image.width);
    EXPECT_GE(b.y1, 0);
    EXPECT_LT(b.y1, b.y2);
    EXPECT_LE(b.y2, r.image.height);
  }
  for (double v : r.image.pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

}  // namespace

TEST(BaseImage, DeterministicAndSeedSensitive) {
  const auto a = generate_base_image(7, 64), b = generate_base_image(7, 64), c = generate_base_image(8, 64);
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  EXPECT_NE(a.image.pixels, c.image.pixels);
}

TEST(BaseImage, RangeShapesAndSize) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto b = generate_base_image(s, 48);
    EXPECT_EQ(b.image.height, 48);
    EXPECT_GE(b.shapes.size(), 1u);
    EXPECT_LE(b.shapes.size(), 4u);
    for (double v : b.image.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(generate_base_image(0, 31), InvalidArgument);
}

TEST(Splice, PasteSemantics) {
  BaseImage donor, target;
  donor.image = Image(64, 64, 0.0);
  target.image = Image(64, 64, 1.0);
  const auto r = apply_splice(donor, target, 3, no_blur());
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(r.image.at(y, x, c), r.mask.at(y, x) ? 0.0 : 1.0);
  EXPECT_EQ(r.type, ManipType::splice);
}

TEST(Splice, SizeMismatchRejected) {
  BaseImage a, b;
  a.image = Image(64, 64);
  b.image = Image(32, 32);
  EXPECT_THROW(apply_splice(a, b, 1), InvalidArgument);
}

TEST(Splice, RecordsSatisfyContract) {
  const SynthConfig cfg;
  for (std::uint64_t s = 0; s < 25; ++s)
    check_record(apply_splice(generate_base_image(2 * s, 64), generate_base_image(2 * s + 1, 64), s, cfg), cfg);
}

TEST(CopyMove, CopySemanticsAndDisjoint) {
  for (std::uint64_t s = 0; s < 25; ++s) {
    const auto base = generate_base_image(s, 64);
    std::vector<CopyMoveRects> rects;
    const auto r = apply_copy_move(base, s, no_blur(), &rects);
    check_record(r, no_blur());
    ASSERT_EQ(rects.size(), 1u);
    const auto& [src, dst] = rects[0];
    EXPECT_EQ(intersection_area(src, dst), 0.0);
    for (int y = 0; y < int(dst.height()); ++y)
      for (int x = 0; x < int(dst.width()); ++x)
        for (int c = 0; c < 3; ++c)
          EXPECT_EQ(r.image.at(int(dst.y1) + y, int(dst.x1) + x, c), base.image.at(int(src.y1) + y, int(src.x1) + x, c));
    EXPECT_EQ(r.boxes[0], dst);
  }
}

TEST(CopyMove, Deterministic) {
  const auto base = generate_base_image(5, 64);
  EXPECT_EQ(apply_copy_move(base, 9).image.pixels, apply_copy_move(base, 9).image.pixels);
}

TEST(Removal, LocalConvexAndSmooth) {
  int checked = 0;
  for (std::uint64_t s = 0; s < 40 && checked < 15; ++s) {
    const auto base = generate_base_image(s, 64);
    TamperRecord r;
    try {
      r = apply_removal(base, s, no_blur());
    } catch (const GenerationFailure&) {
      continue;
    }
    ++checked;
    check_record(r, no_blur());
    const Mask ring_zone = dilate(r.mask, 2);
    for (int c = 0; c < 3; ++c) {
      double lo = 1, hi = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (ring_zone.at(y, x) && !r.mask.at(y, x)) {
            lo = std::min(lo, base.image.at(y, x, c));
            hi = std::max(hi, base.image.at(y, x, c));
          }
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          if (r.mask.at(y, x)) {
            EXPECT_GE(r.image.at(y, x, c), lo - 1e-12);
            EXPECT_LE(r.image.at(y, x, c), hi + 1e-12);
          } else {
            EXPECT_EQ(r.image.at(y, x, c), base.image.at(y, x, c));
          }
        }
    }
    EXPECT_LT(mean_abs_laplacian(r.image, r.mask), mean_abs_laplacian(base.image, r.mask));
  }
  EXPECT_GE(checked, 10);
}

TEST(Removal, NoShapeFails) {
  BaseImage b;
  b.image = Image(64, 64, 0.5);
  EXPECT_THROW(apply_removal(b, 1), GenerationFailure);
}

TEST(Components, BoxesMatchOracleOnRandomMasks) {
  oracle::Gen g(21);
  for (int t = 0; t < 50; ++t) {
    Mask m(20, 20);
    for (auto& b : m.bits) b = g.coin(0.15);
    EXPECT_EQ(component_boxes(m), component_boxes_oracle(m));
  }
}

TEST(Pnm, RoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "pclf_pnm_test";
  fs::create_directories(dir);
  oracle::Gen g(22);
  Image img = oracle::random_image(g, 9, 13);
  for (auto& v : img.pixels) v = std::round(v * 255) / 255;
  write_ppm(dir / "a.ppm", img);
  const Image back = read_ppm(dir / "a.ppm");
  ASSERT_EQ(back.width, 13);
  ASSERT_EQ(back.height, 9);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-12);
  Mask m(9, 13);
  for (auto& b : m.bits) b = g.coin();
  write_pgm(dir / "a.pgm", m);
  EXPECT_EQ(read_pgm(dir / "a.pgm").bits, m.bits);
  EXPECT_THROW(read_ppm(dir / "missing.ppm"), IoError);
  fs::remove_all(dir);
}

TEST(Dataset, PlanCountsBalanceAndLabels) {
  DatasetConfig cfg;
  cfg.labeled_fraction = 0.5;
  const auto plan = plan_records(cfg);
  ASSERT_EQ(plan.size(), 250u);
  int labeled_train = 0;
  std::map<ManipType, int> per_type;
  for (const auto& p : plan) {
    if (p.split == "train") {
      labeled_train += p.labeled;
      ++per_type[p.type];
    } else {
      EXPECT_TRUE(p.labeled);
    }
  }
  EXPECT_EQ(labeled_train, 100);
  for (auto [t, n] : per_type) EXPECT_NEAR(n, 200.0 / 3, 1.0);
  cfg.labeled_fraction = 1.0;
  for (const auto& p : plan_records(cfg)) EXPECT_TRUE(p.labeled);
}

TEST(Dataset, BuildIsDeterministicAndLoadable) {
  const fs::path a = fs::temp_directory_path() / "pclf_ds_a", b = fs::temp_directory_path() / "pclf_ds_b";
  DatasetConfig cfg;
  cfg.train = 6;
  cfg.test = 3;
  cfg.test_pristine = 1;
  const auto ma = build_dataset(cfg, a);
  build_dataset(cfg, b);
  const auto la = load_manifest(a / "manifest.json"), lb = load_manifest(b / "manifest.json");
  ASSERT_EQ(la.records.size(), 10u);
  EXPECT_EQ(to_json(la).dump(), to_json(lb).dump());
  EXPECT_EQ(la.indices("test").size(), 4u);
  for (std::size_t i = 0; i < la.records.size(); ++i) {
    const auto sa = load_sample(la, int(i)), sb = load_sample(lb, int(i));
    EXPECT_EQ(sa.image.pixels, sb.image.pixels);
    EXPECT_EQ(sa.mask.bits, sb.mask.bits);
    EXPECT_EQ(sa.boxes, component_boxes_oracle(sa.mask));
    EXPECT_EQ(sa.boxes.empty(), sa.type == ManipType::pristine);
  }
  EXPECT_EQ(dataset_config_from_json(la.config).train, 6);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, UnwritableDirectory) {
  DatasetConfig cfg;
  cfg.train = 1;
  cfg.test = 0;
  EXPECT_THROW(build_dataset(cfg, "/proc/pclf_forbidden"), IoError);
}
