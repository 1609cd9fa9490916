#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "makevlp/cli.hpp"

using namespace makevlp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("makevlp_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int run(std::vector<std::string> args) { return cli::run(std::move(args)); }

// small corpus + configs shared by the train/eval tests
struct Workspace {
  fs::path data = temp_dir();
  fs::path out = temp_dir();

  Workspace() {
    REQUIRE(run({"synth", "--out", data.string(), "--classes", "2", "--per-class", "8",
                 "--image-size", "16", "--seed", "5"}) == 0);
  }

  std::vector<std::string> train_args(const fs::path& out_dir) const {
    return {"train",          "--manifest",   (data / "train.jsonl").string(),
            "--out",          out_dir.string(),
            "--epochs",       "2",
            "--batch-size",   "6",
            "--warmup-steps", "2",
            "--k-max",        "2",
            "--seed",         "3",
            "--vision-image-size", "16", "--vision-patch-size", "8",
            "--vision-embed-dim",  "8",  "--vision-depth",      "1",
            "--vision-heads",      "2",  "--text-vocab-size",   "128",
            "--text-context-length", "10", "--text-embed-dim",  "8",
            "--text-depth", "1", "--text-heads", "2"};
  }
};

}  // namespace

TEST_CASE("synth writes manifests, images and provenance") {
  const fs::path out = temp_dir();
  REQUIRE(run({"synth", "--out", out.string(), "--classes", "4", "--per-class", "10",
               "--image-size", "16", "--seed", "7"}) == 0);
  CHECK(fs::exists(out / "train.jsonl"));
  CHECK(fs::exists(out / "eval.jsonl"));
  CHECK(fs::exists(out / "provenance.json"));
  const CorpusManifest train = load_manifest(out / "train.jsonl");
  const CorpusManifest eval = load_manifest(out / "eval.jsonl", "eval");
  CHECK(train.records.size() == 32);  // 40 records split 80/20 per class
  CHECK(eval.records.size() == 8);
  CHECK(fs::exists(out / train.records[0].base.image_ref));

  SECTION("same seed reproduces identical files") {
    const fs::path out2 = temp_dir();
    REQUIRE(run({"synth", "--out", out2.string(), "--classes", "4", "--per-class", "10",
                 "--image-size", "16", "--seed", "7"}) == 0);
    CHECK(file_bytes(out / "train.jsonl") == file_bytes(out2 / "train.jsonl"));
    CHECK(file_bytes(out / train.records[0].base.image_ref) ==
          file_bytes(out2 / train.records[0].base.image_ref));
  }
  SECTION("a single class is a config error naming the field") {
    CHECK(run({"synth", "--out", temp_dir().string(), "--classes", "1"}) == 2);
  }
}

TEST_CASE("the out dir env var applies when no flag is given") {
  const fs::path env_out = temp_dir();
  ::setenv("MAKE_OUT_DIR", env_out.string().c_str(), 1);
  REQUIRE(run({"synth", "--classes", "2", "--per-class", "4", "--image-size", "16"}) == 0);
  ::unsetenv("MAKE_OUT_DIR");
  CHECK(fs::exists(env_out / "train.jsonl"));
}

TEST_CASE("train runs deterministically and honors flags") {
  const Workspace ws;
  const fs::path out1 = temp_dir(), out2 = temp_dir();
  REQUIRE(run(ws.train_args(out1)) == 0);
  REQUIRE(run(ws.train_args(out2)) == 0);

  SECTION("identical runs give identical logs and checkpoints") {
    CHECK(file_bytes(out1 / "metrics.jsonl") == file_bytes(out2 / "metrics.jsonl"));
    CHECK(file_bytes(out1 / "final.ckpt") == file_bytes(out2 / "final.ckpt"));
  }
  SECTION("metrics lines carry the contract fields") {
    std::ifstream f(out1 / "metrics.jsonl");
    std::string line;
    REQUIRE(std::getline(f, line));
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "epoch", "loss_total", "loss_mkcl_i2t", "loss_mkcl_t2i",
                            "loss_slra", "tau", "lr"})
      CHECK(j.contains(key));
  }
  SECTION("disabling the alignment loss removes its column") {
    const fs::path out3 = temp_dir();
    auto args = ws.train_args(out3);
    args.push_back("--enable-slra");
    args.push_back("false");
    REQUIRE(run(args) == 0);
    CHECK(file_bytes(out3 / "metrics.jsonl").find("loss_slra") == std::string::npos);
  }
  SECTION("a missing manifest is an io error") {
    auto args = ws.train_args(temp_dir());
    args[2] = (ws.data / "absent.jsonl").string();
    CHECK(run(args) == 3);
  }
  SECTION("config file values apply under flag overrides") {
    const fs::path cfg_path = temp_dir() / "cfg.json";
    {
      std::ofstream f(cfg_path);
      f << R"({"manifest":")" << (ws.data / "train.jsonl").string()
        << R"(","epochs":2,"batch_size":6,"warmup_steps":2,"k_max":2,"seed":3,)"
        << R"("vision.image_size":16,"vision.patch_size":8,"vision.embed_dim":8,)"
        << R"("vision.depth":1,"vision.heads":2,"text.vocab_size":128,)"
        << R"("text.context_length":10,"text.embed_dim":8,"text.depth":1,"text.heads":2})";
    }
    const fs::path out3 = temp_dir();
    REQUIRE(run({"train", "--config", cfg_path.string(), "--out", out3.string()}) == 0);
    CHECK(file_bytes(out3 / "metrics.jsonl") == file_bytes(out1 / "metrics.jsonl"));
    // an explicit flag wins over the file value
    const fs::path out4 = temp_dir();
    REQUIRE(run({"train", "--config", cfg_path.string(), "--out", out4.string(), "--seed",
                 "4"}) == 0);
    CHECK(file_bytes(out4 / "metrics.jsonl") != file_bytes(out1 / "metrics.jsonl"));
  }
  SECTION("unknown config keys are rejected") {
    const fs::path cfg_path = temp_dir() / "bad.json";
    {
      std::ofstream f(cfg_path);
      f << R"({"epoch_count": 3})";
    }
    CHECK(run({"train", "--config", cfg_path.string()}) == 2);
  }
}

TEST_CASE("eval reports metrics from a trained checkpoint") {
  const Workspace ws;
  const fs::path train_out = temp_dir();
  REQUIRE(run(ws.train_args(train_out)) == 0);

  const fs::path eval_out = temp_dir();
  REQUIRE(run({"eval", "--checkpoint", (train_out / "final.ckpt").string(), "--manifest",
               (ws.data / "eval.jsonl").string(), "--out", eval_out.string(), "--ks",
               "1,2"}) == 0);
  REQUIRE(fs::exists(eval_out / "eval_report.json"));
  std::ifstream f(eval_out / "eval_report.json");
  const auto reports = nlohmann::json::parse(f);
  REQUIRE(reports.is_array());
  REQUIRE(reports.size() == 3);
  const double acc = reports[0].at("aggregate").at("accuracy").get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(reports[2].at("aggregate").at("image_to_text").contains("R@1"));
  CHECK(reports[2].at("aggregate").at("image_to_text").contains("R@2"));

  SECTION("a resolution-mismatched manifest is a compatibility error") {
    const fs::path other = temp_dir();
    REQUIRE(run({"synth", "--out", other.string(), "--classes", "2", "--per-class", "4",
                 "--image-size", "32", "--seed", "9"}) == 0);
    CHECK(run({"eval", "--checkpoint", (train_out / "final.ckpt").string(), "--manifest",
               (other / "eval.jsonl").string(), "--out", temp_dir().string()}) == 5);
  }
  SECTION("a truncated checkpoint is an io error") {
    const std::string bytes = file_bytes(train_out / "final.ckpt");
    const fs::path broken = temp_dir();
    std::ofstream out(broken / "final.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
    out.close();
    CHECK(run({"eval", "--checkpoint", (broken / "final.ckpt").string(), "--manifest",
               (ws.data / "eval.jsonl").string(), "--out", temp_dir().string()}) == 3);
  }
}

TEST_CASE("gradcheck command reflects pass and fail in its exit code") {
  CHECK(run({"gradcheck", "--runs", "2"}) == 0);
  CHECK(run({"gradcheck", "--runs", "1", "--tol", "10"}) == 0);  // vacuous tolerance
  CHECK(run({"gradcheck", "--runs", "1", "--eps", "-1"}) == 2);
}

TEST_CASE("ablate writes the five-row csv") {
  const Workspace ws;
  const fs::path out = temp_dir();
  REQUIRE(run({"ablate", "--train-manifest", (ws.data / "train.jsonl").string(),
               "--eval-manifest", (ws.data / "eval.jsonl").string(), "--out", out.string(),
               "--seeds", "1,2", "--threads", "2",
               "--epochs", "1", "--batch-size", "6", "--warmup-steps", "2", "--k-max", "2",
               "--vision-image-size", "16", "--vision-patch-size", "8",
               "--vision-embed-dim", "8", "--vision-depth", "1", "--vision-heads", "2",
               "--text-vocab-size", "128", "--text-context-length", "10",
               "--text-embed-dim", "8", "--text-depth", "1", "--text-heads", "2"}) == 0);
  REQUIRE(fs::exists(out / "ablation.csv"));
  const std::string csv = file_bytes(out / "ablation.csv");
  CHECK(csv.rfind("row,flags,acc_mean,acc_sd,auroc_mean,auroc_sd,seeds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header + 5 rows
  CHECK(csv.find("mkcl#") != std::string::npos);
  CHECK(csv.find("mkcl+slra+dkw") != std::string::npos);
  CHECK(fs::exists(out / "ablation_provenance.json"));
}

TEST_CASE("unknown commands and help") {
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({}) == 2);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"train", "--help"}) == 0);
  CHECK(run({"synth", "--help"}) == 0);
}
