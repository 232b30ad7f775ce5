#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "ynet/dataset.hpp"
#include "ynet/errors.hpp"
#include "ynet/image_io.hpp"

using namespace ynet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ynet_test_dataset" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image8 gray(int size, uint8_t value) { return {size, size, 1, std::vector<uint8_t>(static_cast<size_t>(size * size), value)}; }

// Two-sample layout written by hand, independent of write_dataset.
fs::path handmade(const std::string& name, uint8_t mask_value = 255) {
  const fs::path dir = fresh_dir(name);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  write_png(dir / "images" / "b.png", gray(8, 200));
  write_png(dir / "images" / "a.png", Image8{8, 8, 3, std::vector<uint8_t>(192, 51)});
  Image8 m = gray(8, 0);
  m.pixels[9] = mask_value;
  write_png(dir / "masks" / "a.png", m);
  write_png(dir / "masks" / "b.png", gray(8, 255));
  std::ofstream(dir / "labels.csv") << "id,label,stage\nb,1,0.63\na,0,\n";
  return dir;
}

std::map<fs::path, std::string> tree(const fs::path& root) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root)] = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  return out;
}

std::vector<Sample> labelled(const std::vector<int>& counts) {
  std::vector<Sample> out;
  for (size_t c = 0; c < counts.size(); ++c)
    for (int i = 0; i < counts[c]; ++i) {
      Sample s;
      s.id = "s" + std::to_string(out.size());
      s.label = static_cast<int>(c);
      out.push_back(std::move(s));
    }
  return out;
}

}  // namespace

TEST_CASE("load_dataset reads the layout, sorted by id") {
  const auto data = load_dataset(handmade("ok"));
  REQUIRE(data.size() == 2);
  CHECK(data[0].id == "a");
  CHECK(data[1].id == "b");
  CHECK(data[0].image.shape() == Shape{3, 8, 8});
  CHECK(data[0].image[0] == doctest::Approx(0.2));
  CHECK(data[1].image.shape() == Shape{3, 8, 8});  // gray replicated
  CHECK(data[1].image[130] == doctest::Approx(200.0 / 255.0));
  CHECK(data[0].mask[9] == 1.0);
  CHECK(data[0].mask[10] == 0.0);
  CHECK_FALSE(data[0].stage.has_value());
  CHECK(data[1].stage == 0.63);
  CHECK(data[1].label == 1);
}

TEST_CASE("load_dataset errors name the offending file") {
  SUBCASE("mask value 128") {
    const fs::path dir = handmade("mask128", 128);
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("masks/a.png"), DatasetError);
  }
  SUBCASE("missing mask") {
    const fs::path dir = handmade("nomask");
    fs::remove(dir / "masks" / "b.png");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("masks/b.png"), DatasetError);
  }
  SUBCASE("unknown label") {
    const fs::path dir = handmade("badlabel");
    std::ofstream(dir / "labels.csv") << "id,label,stage\nb,x,\na,0,\n";
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("labels.csv"), DatasetError);
  }
  SUBCASE("stage outside [0, 1]") {
    const fs::path dir = handmade("badstage");
    std::ofstream(dir / "labels.csv") << "id,label,stage\nb,1,1.5\na,0,\n";
    CHECK_THROWS_AS(load_dataset(dir), DatasetError);
  }
  SUBCASE("image without a label row") {
    const fs::path dir = handmade("norow");
    std::ofstream(dir / "labels.csv") << "id,label,stage\nb,1,\n";
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("images/a.png"), DatasetError);
  }
}

TEST_CASE("write then load is the identity up to 8-bit quantisation") {
  const auto samples = synth_samples(Scenario::spdd, 6, 24, 4);
  const fs::path dir = fresh_dir("roundtrip");
  write_dataset(dir, samples);
  const auto back = load_dataset(dir);
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].id == samples[i].id);
    CHECK(back[i].label == samples[i].label);
    CHECK(back[i].stage == samples[i].stage);
    CHECK(back[i].mask.identical(samples[i].mask));
    CHECK(back[i].image.identical(samples[i].image));  // synth images are already quantised
  }
}

TEST_CASE("split sizes") {
  const auto s650 = split(labelled({325, 325}), 0.9, 1);
  CHECK(s650.train.size() == 585);
  CHECK(s650.test.size() == 65);
  const auto s10 = split(labelled({5, 5}), 0.9, 1);
  CHECK(s10.train.size() == 9);
  CHECK(s10.test.size() == 1);
  CHECK_THROWS_AS(split(labelled({5, 5}), 1.0, 1), ConfigError);
}

TEST_CASE("split is deterministic and preserves class proportions") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    const std::vector<int> counts{17 + static_cast<int>(seed), 40, 3 + static_cast<int>(seed % 7)};
    const auto data = labelled(counts);
    const auto a = split(data, 0.8, seed);
    const auto b = split(data, 0.8, seed);
    CHECK(a.stratified);
    REQUIRE(a.test.size() == b.test.size());
    for (size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].id == b.test[i].id);
    const double n = static_cast<double>(data.size());
    CHECK(a.test.size() == static_cast<size_t>(std::llround(0.2 * n)));
    for (size_t c = 0; c < counts.size(); ++c) {
      const auto in_test = std::count_if(a.test.begin(), a.test.end(), [&](const Sample& s) { return s.label == static_cast<int>(c); });
      const double ideal = static_cast<double>(a.test.size()) * counts[c] / n;
      CHECK(std::abs(static_cast<double>(in_test) - ideal) <= 1.0);
    }
  }
}

TEST_CASE("split falls back to an unstratified shuffle when a class is empty") {
  const auto r = split(labelled({6, 0, 4}), 0.5, 3);
  CHECK_FALSE(r.stratified);
  CHECK(r.warnings.size() == 1);
  CHECK(r.test.size() == 5);
}

TEST_CASE("synth_generate is byte-deterministic") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  synth_generate(Scenario::dpsd, 100, 32, 3, a);
  synth_generate(Scenario::dpsd, 100, 32, 3, b);
  const auto ta = tree(a);
  CHECK(ta.size() == 201);
  CHECK(ta == tree(b));
  const fs::path c = fresh_dir("det_c");
  synth_generate(Scenario::dpsd, 100, 32, 4, c);
  CHECK(ta != tree(c));
}

TEST_CASE("DPSD labels follow the stage threshold and masks match the disc") {
  const int size = 48;
  const auto plan = plan_synthetic(Scenario::dpsd, 60, size, 8);
  const auto samples = synth_samples(Scenario::dpsd, 60, size, 8);
  int ones = 0;
  for (size_t i = 0; i < plan.size(); ++i) {
    const SynthSpec& s = plan[i];
    REQUIRE(s.stage.has_value());
    CHECK(*s.stage >= 0.2);
    CHECK(*s.stage <= 0.9);
    CHECK(s.label == (*s.stage > 0.6 ? 1 : 0));
    CHECK(samples[i].stage == s.stage);
    ones += s.label;
    // Independent raster of the disc: pixel centres inside the ellipse.
    int expected = 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = (x + 0.5 - s.cx) / s.axis_x, v = (y + 0.5 - s.cy) / s.axis_y;
        expected += u * u + v * v <= 1.0 ? 1 : 0;
      }
    double area = 0;
    for (double m : samples[i].mask.data()) area += m;
    CHECK(area == expected);
  }
  CHECK(ones == 30);
}

TEST_CASE("SPDD draws wider nodules for class 1") {
  const auto plan = plan_synthetic(Scenario::spdd, 200, 64, 2);
  double r0 = 0, r1 = 0;
  for (const auto& s : plan) {
    CHECK_FALSE(s.stage.has_value());
    (s.label ? r1 : r0) += s.axis_x / 100.0;
  }
  CHECK(r1 > r0);
}

TEST_CASE("synthetic generator argument checks") {
  CHECK_THROWS_AS(synth_samples(Scenario::dpsd, 7, 32, 1), ConfigError);
  CHECK_THROWS_AS(synth_samples(Scenario::dpsd, 2, 32, 1), ConfigError);
  CHECK_THROWS_AS(synth_samples(Scenario::dpsd, 4, 8, 1), ConfigError);
  CHECK(parse_scenario("spdd") == Scenario::spdd);
  CHECK_THROWS_AS(parse_scenario("fundus"), ConfigError);
}
