// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "mamil/checkpoint.hpp"
#include "mamil/cli.hpp"
#include "mamil/explain.hpp"
#include "mamil/training.hpp"

#ifndef MAMIL_DATA_DIR
#define MAMIL_DATA_DIR "data"
#endif

using namespace mamil;
namespace fs = std::filesystem;

namespace {

const fs::path kData = MAMIL_DATA_DIR;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::current_path() / "cli_scratch" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Value of `key=` in a line of `k=v` pairs.
double field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + key.size() + 1));
}

bool bit_equal(const Params& a, const Params& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
    if (std::memcmp(x.value.data(), y.value.data(), sizeof(double) * static_cast<std::size_t>(x.value.size())) != 0)
      return false;
  }
  return true;
}

Dataset separable(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dataset ds;
  ds.feature_dim = 2;
  for (std::size_t b = 0; b < count; ++b) {
    double x0 = 0, x1 = 0;
    do {
      x0 = u(rng);
      x1 = u(rng);
    } while (std::abs(x0 - x1) < 0.3);
    Bag bag;
    bag.id = static_cast<std::int64_t>(b + 100);
    bag.label = x0 > x1 ? 1 : 0;
    bag.instances.push_back({{x0, x1}, std::nullopt, std::nullopt});
    ds.bags.push_back(bag);
  }
  return ds;
}

std::vector<std::string> mnist_args() {
  return {"--mnist-images", (kData / "mnist5k-images-idx3-ubyte").string(), "--mnist-labels",
          (kData / "mnist5k-labels-idx1-ubyte").string()};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<std::string> kSmallModel = {"--dim-f", "8", "--encoder-layers", "16", "--templates", "3"};

// Small MNIST-MIL dataset and a one-epoch checkpoint on it, shared by several cases.
struct MnistFixture {
  fs::path dir, data, ckpt;
  MnistFixture() {
    dir = scratch("mnist");
    data = dir / "train.ds";
    ckpt = dir / "model.ckpt";
    REQUIRE(run(cat(cat({"generate", "--bags", "10", "--seed", "3", "--out", data.string()}, mnist_args()), {}))
                .code == 0);
    REQUIRE(run(cat({"train", "--data", data.string(), "--out", ckpt.string(), "--epochs", "1"}, kSmallModel)).code ==
            0);
  }
};

}  // namespace

TEST_CASE("checkpoint round trip and errors") {
  std::mt19937_64 rng(1);
  ModelConfig c;
  c.input_dim = 6;
  c.templates = 3;
  c.dim_f = 5;
  c.encoder_layers = {4, 3};
  c.classifier_layers = {2};
  c.seed = 77;
  Checkpoint ck{fixtures::random_model(c, rng), {"P1", "G"}, CoordMode::grid};
  ck.model.params.at("G")(0, 0) = 0.1 + 0.2;  // needs all 17 digits
  ck.model.params.at("P1")(1, 0) = -1e-310;   // subnormal

  std::ostringstream out;
  write_checkpoint(ck, out);
  const std::string text = out.str();
  CHECK(text.rfind("MAMIL-CKPT v1\n", 0) == 0);
  std::istringstream in(text);
  const Checkpoint back = read_checkpoint(in);
  CHECK(bit_equal(back.model.params, ck.model.params));
  CHECK(back.model.config == ck.model.config);
  CHECK(back.frozen == ck.frozen);
  CHECK(back.coord_mode == CoordMode::grid);

  SUBCASE("truncated inside a block names the last complete block") {
    const auto cut = text.find("V_tp ");
    REQUIRE(cut != std::string::npos);
    std::istringstream partial(text.substr(0, cut + 30));
    try {
      read_checkpoint(partial);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::format);
      CHECK(std::string(e.what()).find("'P3'") != std::string::npos);
    }
  }
  SUBCASE("truncated at a block boundary") {
    std::istringstream partial(text.substr(0, text.find("V_tp ")));
    try {
      read_checkpoint(partial);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("'P3'") != std::string::npos);
    }
  }
  SUBCASE("version mismatch") {
    std::string v2 = text;
    v2.replace(11, 2, "v2");
    std::istringstream s(v2);
    try {
      read_checkpoint(s);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::mismatch);
    }
  }
  SUBCASE("bad magic and unknown keys") {
    std::istringstream bad("MAMIL-DS v1\n");
    CHECK_THROWS_AS(read_checkpoint(bad), Error);
    std::string extra = text;
    extra.insert(text.find('\n') + 1, "colour=blue\n");
    std::istringstream s(extra);
    CHECK_THROWS_AS(read_checkpoint(s), Error);
  }
  SUBCASE("shape mismatch names the block") {
    std::string wrong = text;
    const auto pos = wrong.find("V_fin shape 10 10");
    REQUIRE(pos != std::string::npos);
    std::istringstream s(wrong.replace(pos, 17, "V_fin shape 9 10"));
    try {
      read_checkpoint(s);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("V_fin") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), Error);
}

TEST_CASE("config file parsing and precedence") {
  SUBCASE("parse") {
    std::istringstream in("# comment\nepochs = 3\n\nlr=0.01  # trailing\n");
    const auto v = cli::parse_config_text(in, "cfg");
    CHECK(v.at("epochs") == "3");
    CHECK(v.at("lr") == "0.01");
    std::istringstream unknown("colour = red\n");
    CHECK_THROWS_AS(cli::parse_config_text(unknown, "cfg"), Error);
    std::istringstream dup("epochs = 1\nepochs = 2\n");
    CHECK_THROWS_AS(cli::parse_config_text(dup, "cfg"), Error);
    std::istringstream noeq("epochs 1\n");
    try {
      cli::parse_config_text(noeq, "cfg");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("cfg:1") != std::string::npos);
    }
  }
  SUBCASE("flag beats file beats default for random key subsets") {
    // Two non-default values per key: index 0 goes in the file, 1 on the flag.
    const std::map<std::string, std::pair<std::string, std::string>> alt = {
        {"templates", {"4", "7"}},
        {"radius", {"2", "3"}},
        {"dim_f", {"16", "32"}},
        {"encoder_layers", {"none", "8,4"}},
        {"classifier_layers", {"5", "6,2"}},
        {"neighborhood", {"false", "true"}},
        {"lr", {"0.25", "0.125"}},
        {"beta1", {"0.5", "0.75"}},
        {"beta2", {"0.875", "0.5"}},
        {"eps_adam", {"0.001", "1e-06"}},
        {"weight_decay", {"0", "0.5"}},
        {"epochs", {"3", "9"}},
        {"seed", {"11", "12"}},
        {"variant", {"mil2", "mil3"}},
        {"bags", {"10", "20"}},
        {"min_size", {"2", "3"}},
        {"max_size", {"4", "5"}},
        {"pool", {"test", "all"}},
        {"test_fraction", {"0.5", "0.25"}},
        {"data", {"a.ds", "b.ds"}},
        {"ckpt", {"a.ckpt", "b.ckpt"}},
        {"out", {"x", "y"}},
    };
    REQUIRE(alt.size() == cli::RunConfig::keys().size());
    const cli::RunConfig base;
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      std::map<std::string, std::string> file, flags;
      for (const auto& [k, v] : alt) {
        if (rng() % 2) file[k] = v.first;
        if (rng() % 2) flags[k] = v.second;
      }
      const cli::RunConfig r = cli::resolve(base, file, flags);
      for (const auto& k : cli::RunConfig::keys()) {
        cli::RunConfig expect = base;
        if (flags.count(k))
          expect.set(k, flags.at(k));
        else if (file.count(k))
          expect.set(k, file.at(k));
        CHECK_MESSAGE(r.get(k) == expect.get(k), k);
      }
    }
  }
  SUBCASE("set and get are inverse") {
    cli::RunConfig c;
    for (const auto& k : cli::RunConfig::keys()) {
      const std::string before = c.get(k);
      c.set(k, before);
      CHECK(c.get(k) == before);
    }
    CHECK(c.get("classifier_layers") == "none");
    CHECK_THROWS_AS(c.set("epochs", "-1"), Error);
    CHECK_THROWS_AS(c.set("lr", "fast"), Error);
    CHECK_THROWS_AS(c.set("nope", "1"), Error);
    CHECK(cli::flag_name("dim_f") == "--dim-f");
  }
}

TEST_CASE("generate") {
  const fs::path dir = scratch("generate");
  const auto a = dir / "a.ds", b = dir / "b.ds";
  const Run r = run(cat({"generate", "--bags", "10", "--seed", "4", "--out", a.string()}, mnist_args()));
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("bags=10 positive_fraction=", 0) == 0);
  CHECK(load_dataset(a).bags.size() == 10);
  for (const Bag& bag : load_dataset(a).bags) {
    CHECK(bag.size() >= 6);
    CHECK(bag.size() <= 12);
  }
  REQUIRE(run(cat({"generate", "--bags", "10", "--seed", "4", "--out", b.string()}, mnist_args())).code == 0);
  CHECK(slurp(a) == slurp(b));

  const auto t = dir / "musk.ds";
  const Run m = run({"generate", "--tabular", (kData / "musk1.csv").string(), "--out", t.string()});
  REQUIRE(m.code == 0);
  CHECK(m.out.rfind("bags=92 ", 0) == 0);

  CHECK(run(cat({"generate", "--variant", "mil9", "--out", t.string()}, mnist_args())).code == 2);
  CHECK(run({"generate", "--mnist-images", "/nonexistent", "--mnist-labels", "/nonexistent", "--out", t.string()})
            .code == 3);
}

TEST_CASE("train") {
  MnistFixture fx;
  SUBCASE("one epoch on 10 bags is 10 steps, progress on stderr") {
    const Run r = run(cat({"train", "--data", fx.data.string(), "--out", (fx.dir / "b.ckpt").string(), "--epochs", "1"},
                          kSmallModel));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("steps=10") != std::string::npos);
    CHECK(r.out.rfind("accuracy=", 0) == 0);
    CHECK(r.out.find("epoch") == std::string::npos);
    CHECK_FALSE(r.err.empty());
    CHECK(fs::exists(fx.dir / "b.ckpt.history.csv"));
    CHECK(slurp(fx.dir / "b.ckpt") == slurp(fx.ckpt));
  }
  SUBCASE("templates 3 checkpoint loads with C = 3") {
    const Checkpoint ck = load_checkpoint(fx.ckpt);
    CHECK(ck.model.config.templates == 3);
    CHECK(ck.model.config.dim_f == 8);
    CHECK(ck.coord_mode == CoordMode::line);
  }
  SUBCASE("ablation run") {
    const auto p = fx.dir / "abd.ckpt";
    REQUIRE(run({"train", "--data", fx.data.string(), "--out", p.string(), "--epochs", "1", "--templates", "1",
                 "--no-neighborhood", "--dim-f", "8", "--encoder-layers", "none"})
                .code == 0);
    const Checkpoint ck = load_checkpoint(p);
    CHECK(ck.model.config.templates == 1);
    CHECK_FALSE(ck.model.config.neighborhood);
    CHECK_FALSE(ck.model.params.contains("V_nb"));
  }
  SUBCASE("config file with flag override") {
    const auto cfg = fx.dir / "run.cfg";
    std::ofstream(cfg) << "epochs = 2\ntemplates = 2\ndim_f = 4\nencoder_layers = none\n";
    const auto p = fx.dir / "cfg.ckpt";
    const Run r = run({"train", "--config", cfg.string(), "--data", fx.data.string(), "--out", p.string(), "--epochs",
                       "1"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("steps=10") != std::string::npos);
    CHECK(load_checkpoint(p).model.config.templates == 2);
    CHECK(load_checkpoint(p).model.config.dim_f == 4);

    std::ofstream(cfg) << "epochs = 2\nflavour = mint\n";
    const Run bad = run({"train", "--config", cfg.string(), "--data", fx.data.string(), "--out", p.string()});
    CHECK(bad.code == 2);
    CHECK(bad.out.empty());
    CHECK(bad.err.find("flavour") != std::string::npos);
  }
  SUBCASE("divergence exits 4") {
    const Run r = run(cat({"train", "--data", fx.data.string(), "--out", (fx.dir / "d.ckpt").string(), "--epochs",
                           "2", "--lr", "1e300"},
                          kSmallModel));
    CHECK(r.code == 4);
    CHECK(r.out.empty());
  }
  SUBCASE("missing data exits 3") {
    const Run r = run({"train", "--data", (fx.dir / "none.ds").string(), "--out", (fx.dir / "x.ckpt").string()});
    CHECK(r.code == 3);
    CHECK(r.out.empty());
  }
}

TEST_CASE("eval") {
  const fs::path dir = scratch("eval");
  SUBCASE("memorized toy set scores 1.0") {
    const auto data = dir / "toy.ds", ckpt = dir / "toy.ckpt";
    save_dataset(separable(30, 4), data);
    REQUIRE(run({"train", "--data", data.string(), "--out", ckpt.string(), "--epochs", "60", "--lr", "0.01",
                 "--templates", "2", "--dim-f", "4", "--encoder-layers", "none", "--no-neighborhood"})
                .code == 0);
    const Run r = run({"eval", "--ckpt", ckpt.string(), "--data", data.string()});
    REQUIRE(r.code == 0);
    CHECK(field(r.out, "accuracy") == 1.0);
    CHECK(field(r.out, "f1") == 1.0);
  }
  SUBCASE("cross validation output") {
    const auto data = dir / "toy.ds";
    save_dataset(separable(12, 5), data);
    const Run r = run({"eval", "--data", data.string(), "--cv", "3", "--epochs", "1", "--templates", "2", "--dim-f",
                       "4", "--encoder-layers", "none", "--no-neighborhood"});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("cv_mean_acc=", 0) == 0);
    CHECK(field(r.out, "folds") == 3);
    CHECK(run({"eval", "--data", data.string(), "--cv", "1"}).code == 2);
  }
  SUBCASE("mismatched feature dim exits 5") {
    MnistFixture fx;
    const auto musk = dir / "musk.ds";
    REQUIRE(run({"generate", "--tabular", (kData / "musk1.csv").string(), "--out", musk.string()}).code == 0);
    const Run r = run({"eval", "--ckpt", fx.ckpt.string(), "--data", musk.string()});
    CHECK(r.code == 5);
    CHECK(r.out.empty());
    CHECK_FALSE(r.err.empty());
  }
  SUBCASE("sweep writes one row per template count") {
    const auto data = dir / "toy.ds", csv = dir / "sweep.csv";
    save_dataset(separable(10, 6), data);
    const Run r = run({"eval", "--data", data.string(), "--train-data", data.string(), "--sweep", "1,2,3", "--sweep-out",
                       csv.string(), "--epochs", "1", "--dim-f", "4", "--encoder-layers", "none"});
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(csv));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4);
  }
}

TEST_CASE("explain") {
  const fs::path dir = scratch("explain");
  SUBCASE("single-instance bag reports w = v = 1") {
    const auto data = dir / "toy.ds", ckpt = dir / "toy.ckpt";
    save_dataset(separable(5, 7), data);
    REQUIRE(run({"train", "--data", data.string(), "--out", ckpt.string(), "--epochs", "1", "--templates", "2",
                 "--dim-f", "4", "--encoder-layers", "none"})
                .code == 0);
    const Run r = run({"explain", "--ckpt", ckpt.string(), "--data", data.string(), "--bag-id", "102", "--format",
                       "csv", "--out-dir", (dir / "rep").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("bag=102 ", 0) == 0);
    std::ifstream in(dir / "rep" / "bag_102.csv");
    const auto rows = read_report_csv(in);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].w == 1.0);
    CHECK(rows[0].v == 1.0);

    CHECK(run({"explain", "--ckpt", ckpt.string(), "--data", data.string(), "--bag-id", "7", "--out-dir",
               (dir / "rep").string()})
              .code == 6);
    // No coordinates, so no heatmap.
    const Run pgm = run({"explain", "--ckpt", ckpt.string(), "--data", data.string(), "--bag-id", "102", "--format",
                         "pgm", "--out-dir", (dir / "rep").string()});
    CHECK(pgm.code == 2);
    CHECK(pgm.out.empty());
  }
  SUBCASE("all bags, byte-identical reruns") {
    MnistFixture fx;
    Dataset five = load_dataset(fx.data);
    five.bags.resize(5);
    const auto data = dir / "five.ds";
    save_dataset(five, data);
    for (const std::string fmt : {"pgm", "jsonl"}) {
      const Run a = run({"explain", "--ckpt", fx.ckpt.string(), "--data", data.string(), "--all", "--format", fmt,
                         "--out-dir", (dir / "a").string()});
      const Run b = run({"explain", "--ckpt", fx.ckpt.string(), "--data", data.string(), "--all", "--format", fmt,
                         "--out-dir", (dir / "b").string()});
      REQUIRE(a.code == 0);
      CHECK(a.out == b.out);
      std::size_t files = 0;
      for (const auto& e : fs::directory_iterator(dir / "a")) {
        if (e.path().extension() != "." + fmt) continue;
        ++files;
        CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
      }
      CHECK(files == 5);
    }
    // Digit bags lie on a line: one pixel row per bag.
    const std::string pgm = slurp(dir / "a" / ("bag_" + std::to_string(five.bags[0].id) + ".pgm"));
    CHECK(pgm.rfind("P5\n" + std::to_string(five.bags[0].size()) + " 1\n255\n", 0) == 0);
    // Received-credit variant runs too.
    CHECK(run({"explain", "--ckpt", fx.ckpt.string(), "--data", data.string(), "--all", "--credit", "received",
               "--out-dir", (dir / "c").string()})
              .code == 0);
  }
}

TEST_CASE("gradcheck") {
  const Run r = run({"gradcheck", "--seed", "1"});
  CHECK(r.code == 0);
  for (const char* group : {"encoder", "V_nb", "P_k", "V_tp", "G", "V_fin", "theta"})
    CHECK(r.out.find(std::string(group) + " max_rel_err=") != std::string::npos);
  CHECK(r.out.find("gradcheck=pass") != std::string::npos);
  const Run tiny = run({"gradcheck", "--dim-f", "1", "--templates", "1"});
  CHECK(tiny.code == 0);
  const Run flat = run({"gradcheck", "--no-neighborhood", "--encoder-layers", "none", "--m", "1"});
  CHECK(flat.code == 0);
}

TEST_CASE("templates") {
  MnistFixture fx;
  SUBCASE("prune to C is the identity") {
    const auto p = fx.dir / "same.ckpt";
    const Run r = run({"templates", "--ckpt", fx.ckpt.string(), "--data", fx.data.string(), "--prune-to", "3",
                       "--out", p.string()});
    REQUIRE(r.code == 0);
    CHECK(bit_equal(load_checkpoint(p).model.params, load_checkpoint(fx.ckpt).model.params));
    CHECK(run({"templates", "--ckpt", fx.ckpt.string(), "--data", fx.data.string(), "--prune-to", "4", "--out",
               p.string()})
              .code == 2);
    CHECK(run({"templates", "--ckpt", fx.ckpt.string(), "--prune-to", "2", "--out", p.string()}).code == 2);
  }
  SUBCASE("add then train with the old parameters frozen") {
    const auto added = fx.dir / "added.ckpt", trained = fx.dir / "retrained.ckpt";
    const Run r = run({"templates", "--ckpt", fx.ckpt.string(), "--add", "1", "--out", added.string()});
    REQUIRE(r.code == 0);
    const Checkpoint ck = load_checkpoint(added);
    CHECK(ck.model.config.templates == 4);
    CHECK(ck.frozen.size() == load_checkpoint(fx.ckpt).model.params.size());
    REQUIRE(run({"train", "--data", fx.data.string(), "--init-ckpt", added.string(), "--freeze-old", "--epochs", "1",
                 "--out", trained.string()})
                .code == 0);
    const Checkpoint t = load_checkpoint(trained);
    for (const auto& name : ck.frozen) CHECK(t.model.params.at(name) == ck.model.params.at(name));
    CHECK_FALSE(t.model.params.at("P4") == ck.model.params.at("P4"));
  }
  SUBCASE("pruning a dormant template barely moves holdout accuracy") {
    const auto ckpt = fx.dir / "dormant.ckpt", pruned = fx.dir / "pruned.ckpt";
    const auto train_ds = fx.dir / "dormant_train.ds", test_ds = fx.dir / "dormant_test.ds";
    save_checkpoint({fixtures::dormant_template_model(), {}, std::nullopt}, ckpt);
    save_dataset(fixtures::dormant_dataset(60, 1), train_ds);
    save_dataset(fixtures::dormant_dataset(200, 2), test_ds);
    const Run r = run({"templates", "--ckpt", ckpt.string(), "--data", train_ds.string(), "--prune-to", "2", "--out",
                       pruned.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("kept=P1,P2") != std::string::npos);
    const double before = field(run({"eval", "--ckpt", ckpt.string(), "--data", test_ds.string()}).out, "accuracy");
    const double after = field(run({"eval", "--ckpt", pruned.string(), "--data", test_ds.string()}).out, "accuracy");
    CHECK(std::abs(before - after) < 0.01);
  }
}

TEST_CASE("flag errors and help") {
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  const Run r = run({"train", "--no-such-flag"});
  CHECK(r.code == 2);
  CHECK(r.out.empty());
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--epochs", "many", "--data", "x", "--out", "y"}).code == 2);
  CHECK(cli::exit_code(ErrorKind::not_found) == 6);
  CHECK(cli::exit_code(ErrorKind::io) == 3);
}
