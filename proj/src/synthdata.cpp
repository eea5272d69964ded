#include "psym/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>

#include "psym/errors.hpp"

namespace psym::synth {

std::string to_string(Side s) { return s == Side::Left ? "left" : "right"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Side side_from_string(const std::string& s) {
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw DataError("unknown side '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "'");
}

void to_json(nlohmann::json& j, const BBox& b) {
  j = nlohmann::json{{"x_min", b.x_min}, {"x_max", b.x_max}, {"y_min", b.y_min}, {"y_max", b.y_max}};
}

void from_json(const nlohmann::json& j, BBox& b) {
  b.x_min = j.at("x_min").get<int>();
  b.x_max = j.at("x_max").get<int>();
  b.y_min = j.at("y_min").get<int>();
  b.y_max = j.at("y_max").get<int>();
}

double abnormal_area(const BBox& patch, const BBox& roi) {
  if (!patch.valid() || !roi.valid()) throw ArgumentError("abnormal_area: degenerate rectangle");
  const long long ox = std::min(patch.x_max, roi.x_max) - std::max(patch.x_min, roi.x_min);
  const long long oy = std::min(patch.y_max, roi.y_max) - std::max(patch.y_min, roi.y_min);
  if (ox <= 0 || oy <= 0) return 0.0;
  return static_cast<double>(ox * oy) / static_cast<double>(std::min(patch.area(), roi.area()));
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, img.width - 1 - x);
  return out;
}

// ---------------------------------------------------------------------------
// Phantom generation

void PhantomConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("phantom image size must be positive");
  if (lesion_probability < 0.0 || lesion_probability > 1.0) throw ConfigError("lesion_probability must be in [0,1]");
  if (max_lesions < 0) throw ConfigError("max_lesions must be >= 0");
  if (lesion_radius_min < 1 || lesion_radius_max < lesion_radius_min)
    throw ConfigError("lesion radius range is invalid");
  if (lesion_contrast < 0.0) throw ConfigError("lesion_contrast must be >= 0");
  if (noise_level < 0.0 || asymmetry < 0.0 || fine_texture < 0.0 || coarse_texture < 0.0)
    throw ConfigError("noise and texture amplitudes must be >= 0");
  if (max_planted_shift < 0 || max_search_shift < 0) throw ConfigError("shifts must be >= 0");
}

void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"lesion_probability", c.lesion_probability},
                     {"max_lesions", c.max_lesions},
                     {"lesion_radius_min", c.lesion_radius_min},
                     {"lesion_radius_max", c.lesion_radius_max},
                     {"lesion_contrast", c.lesion_contrast},
                     {"noise_level", c.noise_level},
                     {"fine_texture", c.fine_texture},
                     {"coarse_texture", c.coarse_texture},
                     {"asymmetry", c.asymmetry},
                     {"max_planted_shift", c.max_planted_shift},
                     {"max_search_shift", c.max_search_shift},
                     {"breast_mask", c.breast_mask}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.lesion_probability = j.value("lesion_probability", c.lesion_probability);
  c.max_lesions = j.value("max_lesions", c.max_lesions);
  c.lesion_radius_min = j.value("lesion_radius_min", c.lesion_radius_min);
  c.lesion_radius_max = j.value("lesion_radius_max", c.lesion_radius_max);
  c.lesion_contrast = j.value("lesion_contrast", c.lesion_contrast);
  c.noise_level = j.value("noise_level", c.noise_level);
  c.fine_texture = j.value("fine_texture", c.fine_texture);
  c.coarse_texture = j.value("coarse_texture", c.coarse_texture);
  c.asymmetry = j.value("asymmetry", c.asymmetry);
  c.max_planted_shift = j.value("max_planted_shift", c.max_planted_shift);
  c.max_search_shift = j.value("max_search_shift", c.max_search_shift);
  c.breast_mask = j.value("breast_mask", c.breast_mask);
}

namespace {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// In-place separable box blur with clamped borders.
void box_blur(std::vector<double>& f, int h, int w, int r) {
  std::vector<double> tmp(f.size());
  const double inv = 1.0 / (2 * r + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += f[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc * inv;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
      f[static_cast<std::size_t>(y) * w + x] = acc * inv;
    }
}

// Smooth zero-mean unit-variance random field.
std::vector<double> smooth_field(Rng& rng, int h, int w, int radius) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> f(static_cast<std::size_t>(h) * w);
  for (auto& v : f) v = n01(rng);
  for (int pass = 0; pass < 3; ++pass) box_blur(f, h, w, radius);
  double m = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double var = 0.0;
  for (auto& v : f) {
    v -= m;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  if (sd > 0.0)
    for (auto& v : f) v /= sd;
  return f;
}

bool box_inside_mask(const Image& img, const BBox& b) {
  if (b.x_min < 0 || b.y_min < 0 || b.x_max > img.width || b.y_max > img.height) return false;
  for (int y = b.y_min; y < b.y_max; ++y)
    for (int x = b.x_min; x < b.x_max; ++x)
      if (img.at(y, x) <= 0.0f) return false;
  return true;
}

void paint_lesion(Image& img, const BBox& b, double contrast) {
  const double cx = 0.5 * (b.x_min + b.x_max - 1);
  const double cy = 0.5 * (b.y_min + b.y_max - 1);
  const double r = 0.5 * (b.x_max - b.x_min);
  for (int y = b.y_min; y < b.y_max; ++y)
    for (int x = b.x_min; x < b.x_max; ++x) {
      const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
      if (d2 >= 1.0) continue;
      const double bump = (1.0 - d2) * (1.0 - d2);
      img.at(y, x) = static_cast<float>(std::min(1.0, img.at(y, x) + contrast * bump));
    }
}

constexpr float kTissueFloor = 0.02f;

}  // namespace

PhantomCase generate_case(std::uint64_t seed, const PhantomConfig& config, int case_id) {
  config.validate();
  const int h = config.height, w = config.width;
  Rng rng(splitmix64(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };

  // Breast region: half-ellipse against the chest wall at x = 0 (left frame).
  const double ecy = h * uniform(0.46, 0.54);
  const double eax = w * uniform(0.82, 0.96);
  const double eay = h * uniform(0.40, 0.47);
  auto radius2 = [&](double x, double y) {
    const double a = x / eax, b = (y - ecy) / eay;
    return a * a + b * b;
  };
  auto inside = [&](int x, int y) { return !config.breast_mask || radius2(x, y) <= 1.0; };

  const auto fine = smooth_field(rng, h, w, 3);
  const auto coarse = smooth_field(rng, h, w, 12);
  const auto asym_l = smooth_field(rng, h, w, 6);
  const auto asym_r = smooth_field(rng, h, w, 6);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto tissue = [&](int x, int y) {
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    const double rho2 = radius2(x, y);
    return 0.45 + config.fine_texture * fine[i] + config.coarse_texture * coarse[i] - 0.15 * rho2 * rho2;
  };

  PhantomCase pc;
  pc.case_id = case_id;
  std::uniform_int_distribution<int> shift(-config.max_planted_shift, config.max_planted_shift);
  pc.planted_dx = shift(rng);
  pc.planted_dy = shift(rng);

  pc.left = Image(h, w);
  Image right_unflipped(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (inside(x, y)) {
        const double v = tissue(x, y) + config.asymmetry * asym_l[i] + config.noise_level * noise(rng);
        pc.left.at(y, x) = std::clamp(static_cast<float>(v), kTissueFloor, 1.0f);
      }
      const int sx = x - pc.planted_dx, sy = y - pc.planted_dy;
      if (sx >= 0 && sx < w && sy >= 0 && sy < h && inside(sx, sy)) {
        const double v = tissue(sx, sy) + config.asymmetry * asym_r[i] + config.noise_level * noise(rng);
        right_unflipped.at(y, x) = std::clamp(static_cast<float>(v), kTissueFloor, 1.0f);
      }
    }
  pc.right = flip_horizontal(right_unflipped);

  int count = 0;
  if (config.max_lesions > 0 && u01(rng) < config.lesion_probability)
    count = std::uniform_int_distribution<int>(1, config.max_lesions)(rng);
  const Side side = u01(rng) < 0.5 ? Side::Left : Side::Right;

  // Place lesions fully inside the breast region; drop one lesion and retry
  // if any placement fails 100 times.
  std::vector<Lesion> placed;
  for (; count > 0; --count) {
    placed.clear();
    const Image& target = side == Side::Left ? pc.left : pc.right;
    bool ok = true;
    for (int k = 0; k < count && ok; ++k) {
      ok = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const int r = std::uniform_int_distribution<int>(config.lesion_radius_min, config.lesion_radius_max)(rng);
        const int cx = std::uniform_int_distribution<int>(0, w - 1)(rng);
        const int cy = std::uniform_int_distribution<int>(0, h - 1)(rng);
        BBox box{cx - r, cx + r + 1, cy - r, cy + r + 1};
        if (!box_inside_mask(target, box)) continue;
        const double u = uniform(0.5, 1.5);
        placed.push_back({side, box, config.lesion_contrast * u, u >= 1.0 ? 2 : 1});
        ok = true;
        break;
      }
    }
    if (ok) break;
  }
  if (count == 0) placed.clear();
  for (const auto& les : placed) paint_lesion(les.side == Side::Left ? pc.left : pc.right, les.box, les.contrast);
  pc.lesions = std::move(placed);
  return pc;
}

// ---------------------------------------------------------------------------
// Registration

Registration register_pair(const Image& fixed, const Image& moving, int max_shift) {
  if (fixed.height != moving.height || fixed.width != moving.width)
    throw ConfigError("register_pair: images differ in size");
  if (max_shift < 0) throw ConfigError("register_pair: max_shift must be >= 0");
  const int h = fixed.height, w = fixed.width;
  const Image flipped = flip_horizontal(moving);

  std::vector<int> xs, ys;
  std::vector<double> fv;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (fixed.at(y, x) > 0.0f) {
        xs.push_back(x);
        ys.push_back(y);
        fv.push_back(fixed.at(y, x));
      }
  if (fv.empty()) throw DataError("register_pair: fixed image has no foreground");

  std::vector<std::pair<int, int>> candidates;
  for (int dx = -max_shift; dx <= max_shift; ++dx)
    for (int dy = -max_shift; dy <= max_shift; ++dy) candidates.emplace_back(dx, dy);
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return std::tuple(a.first * a.first + a.second * a.second, a.first, a.second) <
           std::tuple(b.first * b.first + b.second * b.second, b.first, b.second);
  });

  // NCC over fixed-mask pixels whose shifted sample lies inside the moving
  // image; samples outside the image are excluded rather than read as zero.
  Registration best;
  best.ncc = -std::numeric_limits<double>::infinity();
  for (auto [dx, dy] : candidates) {
    double n = 0.0, sf = 0.0, sff = 0.0, sm = 0.0, smm = 0.0, sfm = 0.0;
    for (std::size_t i = 0; i < fv.size(); ++i) {
      const int mx = xs[i] + dx, my = ys[i] + dy;
      if (mx < 0 || mx >= w || my < 0 || my >= h) continue;
      const double f = fv[i], m = flipped.at(my, mx);
      n += 1.0;
      sf += f;
      sff += f * f;
      sm += m;
      smm += m * m;
      sfm += f * m;
    }
    if (n < 2.0) continue;
    const double vf = sff - sf * sf / n, vm = smm - sm * sm / n;
    const double ncc = (vf > 0.0 && vm > 0.0) ? (sfm - sf * sm / n) / std::sqrt(vf * vm) : 0.0;
    if (ncc > best.ncc) {
      best.ncc = ncc;
      best.dx = dx;
      best.dy = dy;
    }
  }

  best.aligned = Image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int mx = x + best.dx, my = y + best.dy;
      if (mx >= 0 && mx < w && my >= 0 && my < h) best.aligned.at(y, x) = flipped.at(my, mx);
    }
  return best;
}

RegisteredCase register_case(const PhantomCase& c, int max_shift) {
  RegisteredCase rc;
  rc.case_id = c.case_id;
  rc.fixed_side = c.lesion_side();
  rc.lesions = c.lesions;
  if (rc.fixed_side == Side::Left) {
    auto reg = register_pair(c.left, c.right, max_shift);
    rc.left = c.left;
    rc.right = std::move(reg.aligned);
    rc.dx = reg.dx;
    rc.dy = reg.dy;
  } else {
    auto reg = register_pair(c.right, c.left, max_shift);
    rc.right = c.right;
    rc.left = std::move(reg.aligned);
    rc.dx = reg.dx;
    rc.dy = reg.dy;
  }
  return rc;
}

// ---------------------------------------------------------------------------
// Patch sampling

nn::Tensor crop(const Image& img, int x, int y, int size) {
  if (size <= 0 || x < 0 || y < 0 || x + size > img.width || y + size > img.height)
    throw ConfigError("crop outside image bounds");
  std::vector<float> v(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(y + r) * img.width + x, size,
                v.begin() + static_cast<std::ptrdiff_t>(r) * size);
  return nn::Tensor({static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, std::move(v));
}

double tile_area(const std::vector<Lesion>& lesions, const BBox& tile) {
  double a = 0.0;
  for (const auto& les : lesions) a = std::max(a, abnormal_area(tile, les.box));
  return a;
}

std::vector<PatchPair> sample_pairs(const RegisteredCase& c, int patch_size, const SamplingRules& rules) {
  if (patch_size <= 0) throw ConfigError("patch size must be positive");
  std::vector<PatchPair> out;
  const int rows = c.left.height / patch_size, cols = c.left.width / patch_size;
  const double npx = static_cast<double>(patch_size) * patch_size;
  for (int r = 0; r < rows; ++r)
    for (int q = 0; q < cols; ++q) {
      const int x = q * patch_size, y = r * patch_size;
      int bg1 = 0, bg2 = 0, disagree = 0;
      for (int yy = y; yy < y + patch_size; ++yy)
        for (int xx = x; xx < x + patch_size; ++xx) {
          const bool m1 = c.left.at(yy, xx) > 0.0f, m2 = c.right.at(yy, xx) > 0.0f;
          bg1 += !m1;
          bg2 += !m2;
          disagree += m1 != m2;
        }
      if (bg1 / npx > rules.max_background_fraction || bg2 / npx > rules.max_background_fraction) continue;
      if (disagree / npx > rules.max_mask_disagreement) continue;
      PatchPair p;
      p.case_id = c.case_id;
      p.row = r;
      p.col = q;
      p.x = x;
      p.y = y;
      p.size = patch_size;
      p.p1 = crop(c.left, x, y, patch_size);
      p.p2 = crop(c.right, x, y, patch_size);
      p.area = tile_area(c.lesions, p.box());
      out.push_back(std::move(p));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Splits and dataset assembly

void DataConfig::validate() const {
  phantom.validate();
  if (n_cases < 10) throw ConfigError("need at least 10 cases for an 8:1:1 split, got " + std::to_string(n_cases));
  if (patch_size <= 0 || phantom.height % patch_size || phantom.width % patch_size)
    throw ConfigError("image size must be divisible by patch size " + std::to_string(patch_size));
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"phantom", c.phantom},
                     {"n_cases", c.n_cases},
                     {"patch_size", c.patch_size},
                     {"seed", c.seed},
                     {"leakage_guard", c.leakage_guard}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  if (j.contains("phantom")) from_json(j.at("phantom"), c.phantom);
  c.n_cases = j.value("n_cases", c.n_cases);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.seed = j.value("seed", c.seed);
  c.leakage_guard = j.value("leakage_guard", c.leakage_guard);
}

std::vector<PatchPair> Dataset::pairs_in(Split s) const {
  std::vector<PatchPair> out;
  for (const auto& p : pairs)
    if (p.split == s) out.push_back(p);
  return out;
}

std::vector<LabeledPatch> Dataset::labeled_in(Split s) const {
  std::vector<LabeledPatch> out;
  for (const auto& p : labeled)
    if (p.split == s) out.push_back(p);
  return out;
}

namespace {

std::vector<Split> split_811(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_val = n / 10, n_test = n / 10, n_train = n - n_val - n_test;
  std::vector<Split> out(n, Split::Train);
  for (std::size_t k = 0; k < n; ++k)
    out[order[k]] = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
  return out;
}

}  // namespace

std::vector<Split> make_case_splits(int n_cases, std::uint64_t seed) {
  if (n_cases < 10)
    throw DataError("refusing to split " + std::to_string(n_cases) + " cases: at least 10 are needed for 8:1:1");
  Rng rng(splitmix64(seed ^ 0x5157u));
  return split_811(static_cast<std::size_t>(n_cases), rng);
}

void make_splits(Dataset& ds, const SplitOptions& options) {
  const auto splits = make_case_splits(static_cast<int>(ds.cases.size()), options.seed);
  for (std::size_t i = 0; i < ds.cases.size(); ++i) ds.cases[i].split = splits[i];
  auto case_split = [&](int case_id) { return ds.cases.at(static_cast<std::size_t>(case_id)).split; };
  for (auto& p : ds.pairs) p.split = case_split(p.case_id);

  ds.labeled.clear();
  const int s = ds.config.patch_size;
  for (const auto& rc : ds.images) {
    for (const auto& les : rc.lesions) {
      const int cx = (les.box.x_min + les.box.x_max) / 2, cy = (les.box.y_min + les.box.y_max) / 2;
      const int x = std::clamp(cx - s / 2, 0, rc.left.width - s);
      const int y = std::clamp(cy - s / 2, 0, rc.left.height - s);
      const Side other = les.side == Side::Left ? Side::Right : Side::Left;
      const Image& lesion_img = les.side == Side::Left ? rc.left : rc.right;
      const Image& normal_img = les.side == Side::Left ? rc.right : rc.left;
      LabeledPatch ab{0, rc.case_id, les.side, x, y, s, 1, les.grade, Split::Train, crop(lesion_img, x, y, s)};
      LabeledPatch bg{0, rc.case_id, other, x, y, s, 0, 0, Split::Train, crop(normal_img, x, y, s)};
      ds.labeled.push_back(std::move(ab));
      ds.labeled.push_back(std::move(bg));
    }
  }
  for (std::size_t i = 0; i < ds.labeled.size(); ++i) ds.labeled[i].patch_id = static_cast<int>(i);
  if (options.leakage_guard) {
    for (auto& lp : ds.labeled) lp.split = case_split(lp.case_id);
  } else if (!ds.labeled.empty()) {
    Rng rng(splitmix64(options.seed ^ 0x1abe1u));
    const auto patch_splits = split_811(ds.labeled.size(), rng);
    for (std::size_t i = 0; i < ds.labeled.size(); ++i) ds.labeled[i].split = patch_splits[i];
  }
}

Dataset build_dataset(const DataConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  for (int id = 0; id < config.n_cases; ++id) {
    const auto pc = generate_case(splitmix64(config.seed) + static_cast<std::uint64_t>(id), config.phantom, id);
    auto rc = register_case(pc, config.phantom.max_search_shift);
    auto pairs = sample_pairs(rc, config.patch_size);
    for (auto& p : pairs) {
      p.pair_id = static_cast<int>(ds.pairs.size());
      ds.pairs.push_back(std::move(p));
    }
    ds.cases.push_back({id, Split::Train, rc.fixed_side, pc.planted_dx, pc.planted_dy, rc.dx, rc.dy, pc.lesions});
    ds.images.push_back(std::move(rc));
  }
  make_splits(ds, SplitOptions{config.seed, config.leakage_guard});
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string image_name(int case_id, Side side) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/case_%05d_%s.f32", case_id, to_string(side).c_str());
  return buf;
}

void write_blob(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (!out) throw DataError("write failed for " + path.string());
}

Image read_blob(const std::filesystem::path& path, int h, int w) {
  Image img(h, w);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image blob " + path.string());
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (!in) throw DataError("image blob " + path.string() + " is truncated");
  return img;
}

nlohmann::json lesion_json(const Lesion& l) {
  return {{"side", to_string(l.side)}, {"box", l.box}, {"contrast", l.contrast}, {"grade", l.grade}};
}

Lesion lesion_from_json(const nlohmann::json& j) {
  return {side_from_string(j.at("side").get<std::string>()), j.at("box").get<BBox>(), j.at("contrast").get<double>(),
          j.at("grade").get<int>()};
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir, const nlohmann::json& config_echo) {
  std::filesystem::create_directories(dir / "images");
  const int w = ds.config.phantom.width;
  nlohmann::json m;
  m["format"] = "psym-dataset";
  m["format_version"] = kDatasetFormatVersion;
  m["config"] = config_echo;
  m["data_config"] = ds.config;
  m["image_height"] = ds.config.phantom.height;
  m["image_width"] = w;

  auto cases = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.cases.size(); ++i) {
    const auto& c = ds.cases[i];
    auto lesions = nlohmann::json::array();
    for (const auto& l : c.lesions) lesions.push_back(lesion_json(l));
    cases.push_back({{"case_id", c.case_id},
                     {"split", to_string(c.split)},
                     {"fixed_side", to_string(c.fixed_side)},
                     {"planted_shift", {c.planted_dx, c.planted_dy}},
                     {"registration_shift", {c.dx, c.dy}},
                     {"lesions", lesions},
                     {"left_image", image_name(c.case_id, Side::Left)},
                     {"right_image", image_name(c.case_id, Side::Right)}});
    write_blob(dir / image_name(c.case_id, Side::Left), ds.images[i].left);
    write_blob(dir / image_name(c.case_id, Side::Right), ds.images[i].right);
  }
  m["cases"] = std::move(cases);

  auto pairs = nlohmann::json::array();
  for (const auto& p : ds.pairs)
    pairs.push_back({{"pair_id", p.pair_id},
                     {"case_id", p.case_id},
                     {"row", p.row},
                     {"col", p.col},
                     {"x", p.x},
                     {"y", p.y},
                     {"size", p.size},
                     {"offset", static_cast<long long>(p.y) * w + p.x},
                     {"A", p.area},
                     {"split", to_string(p.split)}});
  m["pairs"] = std::move(pairs);

  auto labeled = nlohmann::json::array();
  for (const auto& lp : ds.labeled)
    labeled.push_back({{"patch_id", lp.patch_id},
                       {"case_id", lp.case_id},
                       {"side", to_string(lp.side)},
                       {"x", lp.x},
                       {"y", lp.y},
                       {"size", lp.size},
                       {"offset", static_cast<long long>(lp.y) * w + lp.x},
                       {"binary_label", lp.binary_label},
                       {"class_label", lp.class_label},
                       {"split", to_string(lp.split)}});
  m["labeled_patches"] = std::move(labeled);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << m.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  if (m.value("format", "") != "psym-dataset") throw DataError("manifest is not a psym dataset");
  if (m.value("format_version", -1) != kDatasetFormatVersion)
    throw DataError("dataset format version " + std::to_string(m.value("format_version", -1)) +
                    " does not match expected " + std::to_string(kDatasetFormatVersion));

  Dataset ds;
  try {
    ds.config = m.at("data_config").get<DataConfig>();
    const int h = m.at("image_height").get<int>(), w = m.at("image_width").get<int>();
    for (const auto& c : m.at("cases")) {
      CaseRecord rec;
      rec.case_id = c.at("case_id").get<int>();
      rec.split = split_from_string(c.at("split").get<std::string>());
      rec.fixed_side = side_from_string(c.at("fixed_side").get<std::string>());
      rec.planted_dx = c.at("planted_shift")[0].get<int>();
      rec.planted_dy = c.at("planted_shift")[1].get<int>();
      rec.dx = c.at("registration_shift")[0].get<int>();
      rec.dy = c.at("registration_shift")[1].get<int>();
      for (const auto& l : c.at("lesions")) rec.lesions.push_back(lesion_from_json(l));
      if (rec.case_id != static_cast<int>(ds.cases.size())) throw DataError("case ids must be dense and ordered");
      RegisteredCase rc;
      rc.case_id = rec.case_id;
      rc.fixed_side = rec.fixed_side;
      rc.lesions = rec.lesions;
      rc.dx = rec.dx;
      rc.dy = rec.dy;
      rc.left = read_blob(dir / c.at("left_image").get<std::string>(), h, w);
      rc.right = read_blob(dir / c.at("right_image").get<std::string>(), h, w);
      ds.cases.push_back(std::move(rec));
      ds.images.push_back(std::move(rc));
    }
    for (const auto& p : m.at("pairs")) {
      PatchPair pp;
      pp.pair_id = p.at("pair_id").get<int>();
      pp.case_id = p.at("case_id").get<int>();
      pp.row = p.at("row").get<int>();
      pp.col = p.at("col").get<int>();
      pp.x = p.at("x").get<int>();
      pp.y = p.at("y").get<int>();
      pp.size = p.at("size").get<int>();
      pp.area = p.at("A").get<double>();
      pp.split = split_from_string(p.at("split").get<std::string>());
      const auto& rc = ds.images.at(static_cast<std::size_t>(pp.case_id));
      pp.p1 = crop(rc.left, pp.x, pp.y, pp.size);
      pp.p2 = crop(rc.right, pp.x, pp.y, pp.size);
      ds.pairs.push_back(std::move(pp));
    }
    for (const auto& p : m.at("labeled_patches")) {
      LabeledPatch lp;
      lp.patch_id = p.at("patch_id").get<int>();
      lp.case_id = p.at("case_id").get<int>();
      lp.side = side_from_string(p.at("side").get<std::string>());
      lp.x = p.at("x").get<int>();
      lp.y = p.at("y").get<int>();
      lp.size = p.at("size").get<int>();
      lp.binary_label = p.at("binary_label").get<int>();
      lp.class_label = p.at("class_label").get<int>();
      lp.split = split_from_string(p.at("split").get<std::string>());
      const auto& rc = ds.images.at(static_cast<std::size_t>(lp.case_id));
      lp.pixels = crop(lp.side == Side::Left ? rc.left : rc.right, lp.x, lp.y, lp.size);
      ds.labeled.push_back(std::move(lp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  } catch (const std::out_of_range& e) {
    throw DataError("manifest references an unknown case: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace psym::synth
