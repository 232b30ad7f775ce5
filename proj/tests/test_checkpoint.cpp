#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ynet/checkpoint.hpp"
#include "ynet/errors.hpp"

using namespace ynet;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ynet_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
  YNetParams p = build_model(YNetConfig::tiny(3), 5);
  p.bn_stats.at("core.bn").mean[0] = 0.123456789012345678;
  p.config.code_length = 128;
  const fs::path path = temp_file("rt.ynck");
  save_checkpoint(p, path);
  const YNetParams q = load_checkpoint(path);
  CHECK(q.config == p.config);
  CHECK(q.identical(p));
  save_checkpoint(q, temp_file("rt2.ynck"));
  CHECK(read_all(path) == read_all(temp_file("rt2.ynck")));
}

TEST_CASE("config text round-trips") {
  YNetConfig c = YNetConfig::standard(4);
  c.overlap_min = 0.35;
  c.rmac_scales = 2;
  CHECK(config_from_text(config_to_text(c)) == c);
}

TEST_CASE("damaged checkpoints are rejected") {
  const fs::path path = temp_file("bad.ynck");
  save_checkpoint(build_model(YNetConfig::tiny(), 1), path);
  const auto bytes = read_all(path);
  SUBCASE("truncated") {
    for (size_t keep : {size_t{0}, size_t{3}, size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      write_all(path, std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)));
      CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }
  }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write_all(path, b);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("version mismatch") {
    auto b = bytes;
    b[4] = static_cast<char>(kCheckpointVersion + 1);
    write_all(path, b);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), FormatError);
  }
}

TEST_CASE("loading into a mismatched config names the tensor") {
  const fs::path path = temp_file("mismatch.ynck");
  save_checkpoint(build_model(YNetConfig::tiny(2), 1), path);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, YNetConfig::tiny(5)), doctest::Contains("classifier.weight"),
                       ShapeError);
  YNetConfig other = YNetConfig::tiny(2);
  other.code_length = 36;
  CHECK_THROWS_AS(load_checkpoint(path, other), ConfigError);
  CHECK_NOTHROW(load_checkpoint(path, YNetConfig::tiny(2)));
}
