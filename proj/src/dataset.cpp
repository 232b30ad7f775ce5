#include "ynet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "ynet/errors.hpp"
#include "ynet/image_io.hpp"

namespace fs = std::filesystem;

namespace ynet {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

struct LabelRow {
  int label;
  std::optional<double> stage;
};

std::map<std::string, LabelRow> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(path.string(), "labels file not found");
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"id", "label", "stage"}) {
    throw DatasetError(path.string(), "header must be exactly id,label,stage");
  }
  std::map<std::string, LabelRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 3) throw DatasetError(where, "expected 3 fields");
    LabelRow row{};
    auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), row.label);
    if (ec != std::errc() || p != f[1].data() + f[1].size() || row.label < 0) {
      throw DatasetError(where, "unknown label '" + f[1] + "'");
    }
    if (!f[2].empty()) {
      double st = 0.0;
      auto [q, ec2] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), st);
      if (ec2 != std::errc() || q != f[2].data() + f[2].size() || !(st >= 0.0 && st <= 1.0)) {
        throw DatasetError(where, "stage '" + f[2] + "' is not a number in [0, 1]");
      }
      row.stage = st;
    }
    if (!rows.emplace(f[0], row).second) throw DatasetError(where, "duplicate id " + f[0]);
  }
  return rows;
}

Tensor image_tensor(const Image8& img, const std::string& path) {
  if (img.width != img.height) throw DatasetError(path, "images must be square");
  const int64_t n = img.width;
  Tensor t({3, n, n});
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const int64_t src_c = img.channels == 1 ? 0 : c;
        t[(c * n + y) * n + x] = img.pixels[static_cast<size_t>((y * n + x) * img.channels + src_c)] / 255.0;
      }
  return t;
}

Image8 to_image8(const Tensor& image) {
  Image8 img;
  img.height = static_cast<int>(image.dim(1));
  img.width = static_cast<int>(image.dim(2));
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(img.width * img.height * 3));
  const int64_t hw = image.dim(1) * image.dim(2);
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * hw + i], 0.0, 1.0);
      img.pixels[static_cast<size_t>(i * 3 + c)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

Image8 mask_image8(const Tensor& mask) {
  Image8 img;
  img.height = static_cast<int>(mask.dim(0));
  img.width = static_cast<int>(mask.dim(1));
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(mask.numel()));
  for (int64_t i = 0; i < mask.numel(); ++i) img.pixels[static_cast<size_t>(i)] = mask[i] >= 0.5 ? 255 : 0;
  return img;
}

std::mt19937_64 sample_rng(uint64_t seed, int index, uint64_t salt) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(index),
                    static_cast<uint32_t>(salt)};
  return std::mt19937_64(seq);
}

struct Rgb {
  double r, g, b;
};

// Smooth random texture: a few oriented sinusoids.
struct Texture {
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  Texture(std::mt19937_64& rng, int count, double max_freq, double amp) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < count; ++i) {
      const double ang = u(rng) * 2.0 * M_PI;
      const double f = (0.3 + 0.7 * u(rng)) * max_freq;
      waves.push_back({f * std::cos(ang), f * std::sin(ang), u(rng) * 2.0 * M_PI, amp * (0.5 + 0.5 * u(rng))});
    }
  }
  double operator()(double x, double y) const {
    double v = 0.0;
    for (const Wave& w : waves) v += w.amp * std::sin(2.0 * M_PI * (w.fx * x + w.fy * y) + w.phase);
    return v;
  }
};

Sample render_dpsd(const SynthSpec& s, int size, uint64_t seed, int index) {
  auto rng = sample_rng(seed, index, 0xD95D);
  std::normal_distribution<double> noise(0.0, 0.025);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Texture tex(rng, 4, 6.0, 0.05);
  const Rgb base{0.58 + 0.08 * u(rng), 0.26 + 0.06 * u(rng), 0.12 + 0.04 * u(rng)};
  const Rgb disc{0.90, 0.66, 0.40};
  const Rgb cup{0.99, 0.92, 0.76};

  Tensor image({3, size, size});
  Tensor mask({size, size});
  const double n = size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double rx = px / n - 0.5, ry = py / n - 0.5;
      const double vignette = 1.0 - 0.9 * (rx * rx + ry * ry);
      const double t = tex(px / n, py / n);
      Rgb c{base.r * vignette + t, base.g * vignette + 0.6 * t, base.b * vignette + 0.3 * t};
      if (inside_ellipse(px, py, s.cx, s.cy, s.axis_x, s.axis_y)) {
        c = {disc.r + 0.5 * t, disc.g + 0.5 * t, disc.b + 0.3 * t};
        mask[y * size + x] = 1.0;
        if (inside_ellipse(px, py, s.cx, s.cy, s.inner_ratio * s.axis_x, s.inner_ratio * s.axis_y)) {
          c = {cup.r + 0.3 * t, cup.g + 0.3 * t, cup.b + 0.2 * t};
        }
      }
      image[(0 * size + y) * size + x] = c.r + noise(rng);
      image[(1 * size + y) * size + x] = c.g + noise(rng);
      image[(2 * size + y) * size + x] = c.b + noise(rng);
    }
  Sample out{s.id, image_tensor(to_image8(image), s.id), std::move(mask), s.label, s.stage};
  return out;
}

Sample render_spdd(const SynthSpec& s, int size, uint64_t seed, int index) {
  auto rng = sample_rng(seed, index, 0x5DD);
  std::normal_distribution<double> noise(0.0, 0.03);
  const Texture tex(rng, 5, 5.0, 0.04);
  const Texture nodule_tex(rng, 3, 10.0, 0.05);
  Tensor image({3, size, size});
  Tensor mask({size, size});
  const double n = size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double rx = px / n - 0.5;
      // Two darker lung fields on a brighter mediastinum.
      const double lung = std::exp(-std::pow((std::abs(rx) - 0.22) / 0.13, 2.0));
      double v = 0.55 - 0.3 * lung + tex(px / n, py / n);
      if (inside_ellipse(px, py, s.cx, s.cy, s.axis_x, s.axis_y)) {
        const double dx = (px - s.cx) / s.axis_x, dy = (py - s.cy) / s.axis_y;
        const double r2 = dx * dx + dy * dy;
        v = 0.62 + 0.25 * (1.0 - r2) + nodule_tex((px - s.cx) / n, (py - s.cy) / n);
        mask[y * size + x] = 1.0;
      }
      const double e = noise(rng);
      for (int c = 0; c < 3; ++c) image[(c * size + y) * size + x] = v + e;
    }
  return Sample{s.id, image_tensor(to_image8(image), s.id), std::move(mask), s.label, s.stage};
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& dir) {
  const fs::path images = dir / "images", masks = dir / "masks", labels_path = dir / "labels.csv";
  if (!fs::is_directory(images)) throw DatasetError(images.string(), "missing images directory");
  if (!fs::is_directory(masks)) throw DatasetError(masks.string(), "missing masks directory");
  auto labels = read_labels(labels_path);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    const fs::path ip = images / (id + ".png"), mp = masks / (id + ".png");
    auto row = labels.find(id);
    if (row == labels.end()) throw DatasetError(ip.string(), "no row in labels.csv");
    if (!fs::exists(mp)) throw DatasetError(mp.string(), "missing mask for image " + id);
    Image8 img, msk;
    try {
      img = read_png(ip);
      msk = read_png(mp);
    } catch (const FormatError& e) {
      throw DatasetError(ip.string(), e.what());
    }
    if (msk.channels != 1) throw DatasetError(mp.string(), "mask must be 8-bit grayscale");
    if (msk.width != img.width || msk.height != img.height) throw DatasetError(mp.string(), "mask size differs from image");
    Sample s;
    s.id = id;
    s.image = image_tensor(img, ip.string());
    s.mask = Tensor({msk.height, msk.width});
    for (size_t i = 0; i < msk.pixels.size(); ++i) {
      const uint8_t v = msk.pixels[i];
      if (v != 0 && v != 255) {
        throw DatasetError(mp.string(), "mask pixel value " + std::to_string(v) + " is not 0 or 255");
      }
      s.mask[static_cast<int64_t>(i)] = v == 255 ? 1.0 : 0.0;
    }
    s.label = row->second.label;
    s.stage = row->second.stage;
    labels.erase(row);
    out.push_back(std::move(s));
  }
  if (!labels.empty()) {
    throw DatasetError((images / (labels.begin()->first + ".png")).string(), "listed in labels.csv but missing");
  }
  return out;
}

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::vector<const Sample*> sorted;
  for (const Sample& s : samples) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });
  std::ofstream csv(dir / "labels.csv", std::ios::trunc);
  if (!csv) throw Error("cannot write " + (dir / "labels.csv").string());
  csv << "id,label,stage\n";
  for (const Sample* s : sorted) {
    write_png(dir / "images" / (s->id + ".png"), to_image8(s->image));
    write_png(dir / "masks" / (s->id + ".png"), mask_image8(s->mask));
    csv << s->id << "," << s->label << "," << (s->stage ? format_double(*s->stage) : "") << "\n";
  }
}

SplitResult split(const std::vector<Sample>& samples, double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  SplitResult out;
  const size_t n = samples.size();
  const auto test_total = static_cast<size_t>(std::llround((1.0 - ratio) * static_cast<double>(n)));
  std::mt19937_64 rng(seed);

  std::map<int, std::vector<size_t>> strata;
  for (size_t i = 0; i < n; ++i) strata[samples[i].label].push_back(i);
  const int max_label = strata.empty() ? -1 : strata.rbegin()->first;
  for (int c = 0; c <= max_label; ++c) {
    if (!strata.count(c)) {
      out.stratified = false;
      out.warnings.push_back("class " + std::to_string(c) + " has no samples; using an unstratified split");
      break;
    }
  }

  std::vector<bool> is_test(n, false);
  if (!out.stratified) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t i = 0; i < test_total; ++i) is_test[order[i]] = true;
  } else {
    // Largest-remainder allocation of test_total over strata.
    struct Quota {
      int label;
      size_t count;
      double remainder;
    };
    std::vector<Quota> quotas;
    size_t assigned = 0;
    for (const auto& [label, idx] : strata) {
      const double exact = static_cast<double>(test_total) * static_cast<double>(idx.size()) / static_cast<double>(n);
      const auto base = static_cast<size_t>(std::floor(exact));
      quotas.push_back({label, base, exact - static_cast<double>(base)});
      assigned += base;
    }
    std::vector<size_t> order(quotas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return quotas[a].remainder > quotas[b].remainder; });
    for (size_t i = 0; assigned < test_total && i < order.size(); ++i, ++assigned) ++quotas[order[i]].count;
    for (const Quota& q : quotas) {
      std::vector<size_t> idx = strata.at(q.label);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (size_t i = 0; i < q.count && i < idx.size(); ++i) is_test[idx[i]] = true;
    }
  }
  for (size_t i = 0; i < n; ++i) (is_test[i] ? out.test : out.train).push_back(samples[i]);
  return out;
}

Scenario parse_scenario(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "dpsd") return Scenario::dpsd;
  if (s == "spdd") return Scenario::spdd;
  throw ConfigError("unknown scenario '" + name + "' (expected dpsd or spdd)");
}

std::string to_string(Scenario s) { return s == Scenario::dpsd ? "dpsd" : "spdd"; }

bool inside_ellipse(double px, double py, double cx, double cy, double ax, double ay) {
  const double dx = (px - cx) / ax, dy = (py - cy) / ay;
  return dx * dx + dy * dy <= 1.0;
}

std::vector<SynthSpec> plan_synthetic(Scenario scenario, int n, int image_size, uint64_t seed) {
  if (n < 4) throw ConfigError("synthetic datasets need n >= 4");
  if (n % 2 != 0) throw ConfigError("synthetic datasets need an even n for class balance");
  if (image_size < 16) throw ConfigError("synthetic image_size must be >= 16");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double size = image_size;
  const int width = std::max(4, static_cast<int>(std::to_string(n - 1).size()));
  std::vector<SynthSpec> out;
  for (int i = 0; i < n; ++i) {
    SynthSpec s;
    std::string num = std::to_string(i);
    s.id = to_string(scenario) + "_" + std::string(static_cast<size_t>(width) - num.size(), '0') + num;
    s.label = i % 2;
    if (scenario == Scenario::dpsd) {
      // Stage drawn inside the class's half of [0.2, 0.9].
      const double r = u(rng);
      const double stage = s.label == 1 ? 0.9 - r * (0.9 - kDpsdStageThreshold) : 0.2 + r * (kDpsdStageThreshold - 0.2);
      s.stage = stage;
      s.inner_ratio = stage;
      s.cx = size * (0.5 + 0.24 * (u(rng) - 0.5));
      s.cy = size * (0.5 + 0.24 * (u(rng) - 0.5));
      s.axis_x = size * (0.17 + 0.07 * u(rng));
      s.axis_y = s.axis_x * (0.9 + 0.2 * u(rng));
    } else {
      std::normal_distribution<double> radius(s.label == 1 ? 0.13 : 0.09, 0.025);
      const double r = std::clamp(radius(rng), 0.05, 0.2) * size;
      s.axis_x = s.axis_y = r;
      const double side = u(rng) < 0.5 ? 0.28 : 0.72;
      s.cx = size * (side + 0.1 * (u(rng) - 0.5));
      s.cy = size * (0.35 + 0.3 * u(rng));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> synth_samples(Scenario scenario, int n, int image_size, uint64_t seed) {
  const auto plan = plan_synthetic(scenario, n, image_size, seed);
  std::vector<Sample> out;
  out.reserve(plan.size());
  for (size_t i = 0; i < plan.size(); ++i) {
    const int idx = static_cast<int>(i);
    out.push_back(scenario == Scenario::dpsd ? render_dpsd(plan[i], image_size, seed, idx)
                                             : render_spdd(plan[i], image_size, seed, idx));
  }
  return out;
}

void synth_generate(Scenario scenario, int n, int image_size, uint64_t seed, const fs::path& out_dir) {
  write_dataset(out_dir, synth_samples(scenario, n, image_size, seed));
}

}  // namespace ynet
