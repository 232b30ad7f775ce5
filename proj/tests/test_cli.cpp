#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ynet/checkpoint.hpp"
#include "ynet/cli.hpp"
#include "ynet/service.hpp"

using namespace ynet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "ynet_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string p(const std::string& name) { return (work_dir() / name).string(); }

std::vector<uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"synth"}).code == 1);  // --out is required
  CHECK(run({"synth", "--out", p("x"), "--bogus"}).code == 1);
  CHECK(run({"query", "--index", "i", "--image", "q.png", "--topk", "0"}).code == 1);
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
}

TEST_CASE("runtime errors exit 2 with a message") {
  const Run r = run({"query", "--index", p("missing.ynix"), "--image", p("missing.png")});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") == 0);
  CHECK(run({"synth", "--n", "5", "--out", p("odd")}).code == 2);
}

TEST_CASE("synth, train, index, query and eval") {
  REQUIRE(run({"synth", "--scenario", "dpsd", "--n", "16", "--size", "64", "--seed", "3", "--out", p("data")}).code == 0);
  CHECK(fs::exists(p("data") + "/labels.csv"));
  CHECK(fs::exists(p("data") + "/images/dpsd_0015.png"));

  const Run tr = run({"train", "--data", p("data"), "--out", p("model.ynck"), "--profile", "tiny", "--epochs", "1",
                      "--batch-size", "8", "--history", p("history.csv"), "--seed", "1"});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(fs::exists(p("model.ynck")));
  std::ifstream hist(p("history.csv"));
  std::string header;
  std::getline(hist, header);
  CHECK(header == "step,loss,loss_seg,loss_cls,omega");

  const Run ix = run({"index", "--checkpoint", p("model.ynck"), "--gallery", p("data"), "--out", p("g.ynix")});
  REQUIRE_MESSAGE(ix.code == 0, ix.err);
  CHECK(fs::exists(p("g.ynix.meta")));

  const std::string image = p("data") + "/images/dpsd_0004.png";
  const Run q = run({"query", "--index", p("g.ynix"), "--image", image, "--topk", "16"});
  REQUIRE_MESSAGE(q.code == 0, q.err);
  std::istringstream lines(q.out);
  std::vector<std::pair<std::string, int>> hits;
  std::string id;
  int d = 0;
  while (lines >> id >> d) hits.emplace_back(id, d);
  REQUIRE(hits.size() == 16);
  CHECK(hits[0] == std::pair<std::string, int>{"dpsd_0004", 0});
  for (size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].second <= hits[i].second);

  // Same ordering as the HTTP handler.
  Service service(load_checkpoint(p("model.ynck")));
  service.install(service.attach_snapshot(HashIndex::load(p("g.ynix")), p("data")));
  QueryRequest req;
  req.image = read_bytes(image);
  req.topk = "16";
  const auto body = nlohmann::json::parse(service.handle_query(req).body);
  for (size_t i = 0; i < hits.size(); ++i) {
    CHECK(body["hits"][i]["id"] == hits[i].first);
    CHECK(body["hits"][i]["hamming_distance"] == hits[i].second);
  }

  const Run ev = run({"eval", "--queries", p("data"), "--index", p("g.ynix"), "--cutoff", "5,10"});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(ev.out.rfind("code_length,cutoff,map,stage_gap\n64,5,", 0) == 0);
  CHECK(std::count(ev.out.begin(), ev.out.end(), '\n') == 3);
  CHECK(run({"eval", "--queries", p("data"), "--index", p("g.ynix"), "--cutoff", "5,10"}).out == ev.out);

  const Run bench = run({"eval", "--queries", p("data"), "--checkpoint", p("model.ynck"), "--gallery", p("data"),
                         "--code-lengths", "36,64", "--cutoff", "5"});
  REQUIRE_MESSAGE(bench.code == 0, bench.err);
  CHECK(std::count(bench.out.begin(), bench.out.end(), '\n') == 3);

  const Run enc = run({"encode", "--checkpoint", p("model.ynck"), "--data", p("data"), "--k", "36"});
  REQUIRE(enc.code == 0);
  CHECK(std::count(enc.out.begin(), enc.out.end(), '\n') == 16);
}

TEST_CASE("options can come from a config file") {
  {
    std::ofstream cfg(p("synth.toml"));
    cfg << "[synth]\nscenario = \"spdd\"\nn = 4\nsize = 32\nout = \"" << p("from_config") << "\"\n";
  }
  const Run r = run({"--config", p("synth.toml"), "synth"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(p("from_config") + "/images/spdd_0003.png"));
}
