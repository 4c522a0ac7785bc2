#include <chrono>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "doctest.h"
#include "grafuse/cli.hpp"
#include "grafuse/error.hpp"
#include "grafuse/io.hpp"

using namespace grafuse;
namespace fs = std::filesystem;

namespace {

int grafuse_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"grafuse"};
  storage.insert(storage.end(), args);
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "grafuse_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string str(const fs::path& p) { return p.string(); }

/// Every regular file under `a` exists under `b` with identical bytes, and vice versa.
bool same_tree(const fs::path& a, const fs::path& b, const std::vector<std::string>& skip = {}) {
  std::size_t count_a = 0, count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (std::find(skip.begin(), skip.end(), rel.string()) != skip.end()) continue;
    ++count_a;
    if (!fs::exists(b / rel) || read_file(e.path()) != read_file(b / rel)) return false;
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    const auto rel = fs::relative(e.path(), b);
    if (e.is_regular_file() && std::find(skip.begin(), skip.end(), rel.string()) == skip.end()) ++count_b;
  }
  return count_a == count_b;
}

void write_text(const fs::path& p, const std::string& s) { write_file(p, s); }

// One small SBM and two trained experts shared by several cases.
struct Fixture {
  fs::path root, bundle, gnn, gat;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.root = scratch("fixture");
    x.bundle = x.root / "sbm";
    x.gnn = x.root / "gnn";
    x.gat = x.root / "gat";
    REQUIRE(grafuse_cli({"gen-sbm", "--out", str(x.bundle), "--seed", "5", "--blocks", "40,40,40", "--p-in", "0.25",
                         "--p-out", "0.05", "--signal", "1.0"}) == 0);
    REQUIRE(grafuse_cli({"train", "--model", "gnn", "--data", str(x.bundle), "--out", str(x.gnn), "--epochs", "40",
                         "--patience", "20", "--hidden", "16"}) == 0);
    REQUIRE(grafuse_cli({"train", "--model", "mhgat", "--data", str(x.bundle), "--out", str(x.gat), "--epochs", "40",
                         "--patience", "20", "--hidden", "8"}) == 0);
    return x;
  }();
  return f;
}

}  // namespace

TEST_CASE("gen-sbm: fixed seed gives byte-identical bundles") {
  const auto dir = scratch("gen");
  for (const char* name : {"a", "b"})
    CHECK(grafuse_cli({"gen-sbm", "--out", str(dir / name), "--seed", "9", "--blocks", "30,20"}) == 0);
  CHECK(same_tree(dir / "a", dir / "b", {"effective_config.json"}));
  CHECK(grafuse_cli({"validate-bundle", "--data", str(dir / "a")}) == 0);
  CHECK(grafuse_cli({"gen-sbm", "--out", str(dir / "c"), "--seed", "10", "--blocks", "30,20"}) == 0);
  CHECK(read_file(dir / "a" / "edges.bin") != read_file(dir / "c" / "edges.bin"));
}

TEST_CASE("exit codes") {
  const auto dir = scratch("codes");
  const auto& f = fixture();
  CHECK(grafuse_cli({"--help"}) == 0);
  CHECK(grafuse_cli({"train", "--help"}) == 0);
  CHECK(grafuse_cli({}) == 1);
  CHECK(grafuse_cli({"train", "--data", str(f.bundle), "--out", str(dir / "x"), "--bogus"}) == 1);
  CHECK(grafuse_cli({"train", "--model", "mlp", "--data", str(f.bundle), "--out", str(dir / "x")}) == 1);
  CHECK(grafuse_cli({"train", "--data", str(f.bundle), "--out", str(dir / "x"), "--hidden", "-3"}) == 1);
  CHECK(grafuse_cli({"train", "--data", str(f.bundle), "--out", str(dir / "x"), "--patience", "0"}) == 1);
  CHECK(grafuse_cli({"train", "--data", str(f.bundle)}) == 1);
  CHECK(grafuse_cli({"train", "--data", str(dir / "missing"), "--out", str(dir / "x")}) == 2);
  CHECK(grafuse_cli({"validate-bundle", "--data", str(dir / "missing")}) == 2);
  CHECK(grafuse_cli({"eval", "--checkpoint", str(dir / "missing"), "--data", str(f.bundle)}) == 2);
  CHECK(grafuse_cli({"train", "--model", "gcn", "--data", str(f.bundle), "--out", str(dir / "nan"), "--lr", "1e300",
                     "--epochs", "5", "--patience", "5"}) == 3);

  write_text(dir / "bad_key.json", R"({"model": {"kind": "gcn", "width": 3}})");
  CHECK(grafuse_cli({"train", "--config", str(dir / "bad_key.json"), "--data", str(f.bundle), "--out",
                     str(dir / "x")}) == 1);
  write_text(dir / "bad_type.json", R"({"seed": "one"})");
  CHECK(grafuse_cli({"train", "--config", str(dir / "bad_type.json"), "--data", str(f.bundle), "--out",
                     str(dir / "x")}) == 1);
  write_text(dir / "broken.json", "{\"seed\": ");
  CHECK(grafuse_cli({"train", "--config", str(dir / "broken.json")}) == 1);
  CHECK(grafuse_cli({"train", "--config", str(dir / "nope.json")}) == 1);

  // A bundle with corrupted edges fails validation before any work.
  fs::copy(f.bundle, dir / "corrupt");
  write_text(dir / "corrupt" / "edges.bin", "abc");
  CHECK(grafuse_cli({"validate-bundle", "--data", str(dir / "corrupt")}) == 2);
}

TEST_CASE("train: outputs, rerun determinism and eval reproduction") {
  const auto dir = scratch("train");
  const auto& f = fixture();
  for (const char* run : {"a", "b"})
    REQUIRE(grafuse_cli({"train", "--model", "gcn", "--data", str(f.bundle), "--out", str(dir / run), "--seed", "3",
                         "--epochs", "30", "--patience", "10"}) == 0);
  for (const char* file : {"checkpoint/meta.json", "checkpoint/params.bin", "history.jsonl", "metrics.json",
                           "training.json", "effective_config.json"})
    CHECK(fs::exists(dir / "a" / file));
  CHECK(same_tree(dir / "a", dir / "b", {"effective_config.json"}));

  // Re-running from the saved effective config reproduces the same bytes.
  REQUIRE(grafuse_cli({"train", "--config", str(dir / "a" / "effective_config.json"), "--out", str(dir / "c")}) == 0);
  CHECK(same_tree(dir / "a", dir / "c", {"effective_config.json"}));
  const auto cfg = read_json(dir / "c" / "effective_config.json");
  CHECK(cfg["model"]["hidden"] == 16);
  CHECK(cfg["model"]["dropout"] == 0.5);

  REQUIRE(grafuse_cli({"eval", "--checkpoint", str(dir / "a"), "--data", str(f.bundle), "--out", str(dir / "eval")}) ==
          0);
  CHECK(read_file(dir / "eval" / "metrics.json") == read_file(dir / "a" / "metrics.json"));

  // Flags override config values.
  write_text(dir / "cfg.json", R"({"model": {"kind": "gnn"}, "train": {"max_epochs": 7, "patience": 7}})");
  REQUIRE(grafuse_cli({"train", "--config", str(dir / "cfg.json"), "--data", str(f.bundle), "--out", str(dir / "o"),
                       "--epochs", "5", "--patience", "5"}) == 0);
  const auto o = read_json(dir / "o" / "effective_config.json");
  CHECK(o["model"]["kind"] == "gnn");
  CHECK(o["train"]["max_epochs"] == 5);
}

TEST_CASE("train: mhgat on the SBM fixture is quick") {
  const auto dir = scratch("timing");
  const auto& f = fixture();
  const auto start = std::chrono::steady_clock::now();
  CHECK(grafuse_cli({"train", "--model", "mhgat", "--hops", "2", "--data", str(f.bundle), "--out", str(dir / "m")}) ==
        0);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(60));
}

TEST_CASE("export-embeddings: files match their metadata") {
  const auto dir = scratch("export");
  const auto& f = fixture();
  REQUIRE(grafuse_cli({"export-embeddings", "--checkpoint", str(f.gnn), "--data", str(f.bundle), "--out",
                       str(dir / "emb")}) == 0);
  const auto meta = read_json(dir / "emb" / "meta.json");
  const auto back = read_embeddings(dir / "emb");
  CHECK(back.num_nodes == 120);
  CHECK(back.dim == 16);
  CHECK(fs::file_size(dir / "emb" / "embeddings.f32") == back.num_nodes * back.dim * 4);
  CHECK(fs::file_size(dir / "emb" / "labels.u16") == back.num_nodes * 2);
}

TEST_CASE("fuse: strategies, policy and table") {
  const auto dir = scratch("fuse");
  const auto& f = fixture();
  REQUIRE(grafuse_cli({"fuse", "--gnn", str(f.gnn), "--gat", str(f.gat), "--data", str(f.bundle), "--out",
                       str(dir / "fixed"), "--strategies", "fixed"}) == 0);
  CHECK_FALSE(fs::exists(dir / "fixed" / "wr_history.jsonl"));
  auto m = read_json(dir / "fixed" / "metrics.json");
  CHECK(m["strategies"].size() == 1);
  CHECK(m["selected"] == "fixed");
  CHECK(read_json(dir / "fixed" / "policy" / "meta.json")["projection_dim"] == 0);

  for (const char* run : {"wr1", "wr2"})
    REQUIRE(grafuse_cli({"fuse", "--gnn", str(f.gnn), "--gat", str(f.gat), "--data", str(f.bundle), "--out",
                         str(dir / run), "--wr", "--epochs", "20", "--patience", "10", "--sample-size", "24"}) == 0);
  CHECK(same_tree(dir / "wr1", dir / "wr2", {"effective_config.json"}));
  m = read_json(dir / "wr1" / "metrics.json");
  REQUIRE(m["strategies"].size() == 3);
  CHECK(m["strategies"][2]["strategy"] == "wr");
  CHECK(m["wr"]["lambda"] == std::vector<double>{0.01, 0.01, 0.1});
  const std::string table = read_file(dir / "wr1" / "comparison.txt");
  for (const char* row : {"\ngnn ", "\ngat ", "\nfixed ", "\nadaptive ", "\nwr "}) CHECK(table.find(row) != std::string::npos);
  double best = 0.0;
  for (const auto& s : m["strategies"]) best = std::max(best, s["val"]["accuracy"].get<double>());
  for (const auto& s : m["strategies"])
    if (s["strategy"] == m["selected"]) CHECK(s["val"]["accuracy"].get<double>() == best);

  REQUIRE(grafuse_cli({"fuse", "--config", str(dir / "wr1" / "effective_config.json"), "--out", str(dir / "wr3")}) == 0);
  CHECK(same_tree(dir / "wr1", dir / "wr3", {"effective_config.json"}));

  // Expert trained on a different feature width.
  REQUIRE(grafuse_cli({"gen-sbm", "--out", str(dir / "other"), "--blocks", "40,40,40", "--feature-dim", "8"}) == 0);
  CHECK(grafuse_cli({"fuse", "--gnn", str(f.gnn), "--gat", str(f.gat), "--data", str(dir / "other"), "--out",
                     str(dir / "mismatch")}) == 2);
  CHECK(grafuse_cli({"fuse", "--gnn", str(f.gnn), "--gat", str(f.gat), "--data", str(f.bundle), "--out",
                     str(dir / "x"), "--balance", "0.5,2,0.5"}) == 1);
  CHECK(grafuse_cli({"fuse", "--gnn", str(f.gnn), "--gat", str(f.gat), "--data", str(f.bundle), "--out",
                     str(dir / "x"), "--balance", "0.5,0.5"}) == 1);
}
