#include <sstream>

#include "cli.hpp"
#include "support.hpp"
#include "tesu/binio.hpp"
#include "tesu/checkpoint.hpp"
#include "tesu/eval.hpp"

using namespace tesu;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

const std::string kSmoke = TESU_SOURCE_DIR "/configs/smoke.json";

Run tesu_run(const fs::path& dir, std::vector<std::string> args) {
  std::vector<std::string> full = {"-c", kSmoke, "--work-dir", dir.string()};
  full.insert(full.end(), args.begin(), args.end());
  std::ostringstream out, err;
  const int code = cli::run(full, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
  std::ostringstream out, err;
  CHECK(cli::run({}, out, err) == 2);
  CHECK(err.str().rfind("error[usage]", 0) == 0);
  CHECK(cli::run({"no-such-stage"}, out, err) == 2);
  CHECK(cli::run({"render", "--text", "a b"}, out, err) == 2);
}

TEST_CASE("cli: help exits with 0") {
  std::ostringstream out, err;
  CHECK(cli::run({"--help"}, out, err) == 0);
  CHECK(out.str().find("train-unified") != std::string::npos);
}

TEST_CASE("cli: missing or bad config is a config error") {
  const fs::path dir = testing::scratch_dir("cli_config");
  std::ostringstream out, err;
  CHECK(cli::run({"-c", (dir / "absent.json").string(), "gen-corpus"}, out, err) == cli::exit_code(ErrorKind::kConfig));
  CHECK(err.str().rfind("error[config]", 0) == 0);
  binio::write_file(dir / "bad.json", R"({"lm": {"bogus": 1}})");
  std::ostringstream out2, err2;
  CHECK(cli::run({"-c", (dir / "bad.json").string(), "gen-corpus"}, out2, err2) == cli::exit_code(ErrorKind::kConfig));
  const Run r = tesu_run(dir, {"--set", "novalue", "gen-corpus"});
  CHECK(r.code == cli::exit_code(ErrorKind::kConfig));
}

TEST_CASE("cli: out-of-order stages fail with a dependency error") {
  const fs::path dir = testing::scratch_dir("cli_order");
  Run r = tesu_run(dir, {"pretrain"});
  CHECK(r.code == cli::exit_code(ErrorKind::kDependency));
  CHECK(r.err.rfind("error[dependency]", 0) == 0);
  REQUIRE(tesu_run(dir, {"gen-corpus"}).code == 0);
  r = tesu_run(dir, {"pretrain"});
  CHECK(r.code == cli::exit_code(ErrorKind::kDependency));
  CHECK(r.err.find("train-unified") != std::string::npos);
  r = tesu_run(dir, {"report"});
  CHECK(r.code == cli::exit_code(ErrorKind::kDependency));
  CHECK_FALSE(fs::exists(dir / "checkpoints" / "projector_pretrain.ckpt"));
}

TEST_CASE("cli: artifacts from another config are refused unless mixed chains are allowed") {
  const fs::path dir = testing::scratch_dir("cli_mixed");
  REQUIRE(tesu_run(dir, {"gen-corpus"}).code == 0);
  REQUIRE(tesu_run(dir, {"train-unified"}).code == 0);
  REQUIRE(tesu_run(dir, {"train-lm"}).code == 0);
  Run r = tesu_run(dir, {"--set", "pretrain.seed=99", "pretrain"});
  CHECK(r.code == cli::exit_code(ErrorKind::kDependency));
  CHECK(r.err.find("--allow-mixed") != std::string::npos);
  r = tesu_run(dir, {"--set", "pretrain.seed=99", "--allow-mixed", "pretrain"});
  CHECK(r.code == 0);
  CHECK(r.out.find("warning") != std::string::npos);
}

TEST_CASE("cli: smoke chain writes tagged artifacts and reports") {
  const fs::path dir = testing::scratch_dir("cli_chain");
  for (const auto& stage : std::vector<std::vector<std::string>>{
           {"gen-corpus"}, {"train-unified"}, {"train-lm"}, {"pretrain"}, {"sft"}, {"eval"}}) {
    const Run r = tesu_run(dir, stage);
    REQUIRE_MESSAGE(r.code == 0, stage[0] << ": " << r.err);
  }
  cli::Layout layout{dir};
  const Checkpoint ck = load_checkpoint(layout.projector(false));
  CHECK(tesu::config_hash(ck) == config_hash(parse_run_config(binio::read_file(kSmoke))));
  const Run rep = tesu_run(dir, {"report"});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("heldout") != std::string::npos);
  const auto rows = parse_report_csv(binio::read_file(layout.report("report", "csv")));
  CHECK(rows.size() == 6);
  CHECK(fs::exists(layout.curve("sft")));

  const fs::path frames = dir / "x.frames";
  Run r = tesu_run(dir, {"render", "--text", "the cat sat", "--out", frames.string(), "--sigma", "0"});
  REQUIRE(r.code == 0);
  r = tesu_run(dir, {"infer", "--frames", frames.string(), "--input", "the cat sat", "--residual"});
  CHECK(r.code == 0);
  CHECK(r.out.find("residual mse") != std::string::npos);
  r = tesu_run(dir, {"infer", "--input", "the cat sat"});
  CHECK(r.code == 0);
  r = tesu_run(dir, {"infer"});
  CHECK(r.code == cli::exit_code(ErrorKind::kInvalidArgument));
  r = tesu_run(dir, {"infer", "--control", "--input", "the cat sat"});
  CHECK(r.code == cli::exit_code(ErrorKind::kDependency));
}
