// End-to-end checks of the lnl binary: flag handling, exit codes, artifacts.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "lnl/codec.hpp"
#include "lnl/eval.hpp"
#include "lnl/network.hpp"
#include "support/synth.hpp"
#include "support/tempdir.hpp"

using namespace lnl;
using testsupport::synth_image;
using testsupport::TempDir;

namespace {

int run(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd =
      std::string(LNL_TOOL_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("encode/decode roundtrip respects the bound") {
  TempDir dir("cli_roundtrip");
  const GrayImage x = synth_image(64, 48, 42);
  write_pgm(x, dir.file("a.pgm"));

  CHECK(run("encode --in " + dir.file("a.pgm").string() + " --out " +
                dir.file("a.lnl").string() + " --tau 2",
            dir.file("enc.log")) == 0);
  CHECK(slurp(dir.file("enc.log")).find("bpp,") != std::string::npos);

  CHECK(run("decode --in " + dir.file("a.lnl").string() + " --out " +
                dir.file("a_dec.pgm").string(),
            dir.file("dec.log")) == 0);
  CHECK(linf_bound(read_pgm(dir.file("a_dec.pgm")), x) <= 2);
}

TEST_CASE("tau 0 roundtrip is bit-exact") {
  TempDir dir("cli_tau0");
  const GrayImage x = synth_image(40, 40, 7);
  write_pgm(x, dir.file("a.pgm"));
  run("encode --in " + dir.file("a.pgm").string() + " --out " +
          dir.file("a.lnl").string() + " --tau 0",
      dir.file("enc.log"));
  run("decode --in " + dir.file("a.lnl").string() + " --out " +
          dir.file("b.pgm").string(),
      dir.file("dec.log"));
  CHECK(read_pgm(dir.file("b.pgm")) == x);
}

TEST_CASE("usage errors exit 1") {
  TempDir dir("cli_usage");
  write_pgm(synth_image(16, 16, 1), dir.file("a.pgm"));
  CHECK(run("encode --in " + dir.file("a.pgm").string() + " --out " +
                dir.file("a.lnl").string() + " --tau 9",
            dir.file("log")) == 1);
  CHECK(run("encode --in x.pgm", dir.file("log")) == 1);  // missing flags
  CHECK(run("encode --in x.pgm --out y.lnl --tau 1 --bogus 3",
            dir.file("log")) == 1);  // unknown flag
  CHECK(run("train --out w.lnw", dir.file("log")) == 1);  // missing --data
  CHECK(run("", dir.file("log")) == 1);  // subcommand required
}

TEST_CASE("data errors exit 2") {
  TempDir dir("cli_data");
  // corrupt magic
  std::ofstream(dir.file("bad.lnl"), std::ios::binary) << "XXXX garbage";
  CHECK(run("decode --in " + dir.file("bad.lnl").string() + " --out " +
                dir.file("o.pgm").string(),
            dir.file("log")) == 2);
  CHECK(run("encode --in " + dir.file("missing.pgm").string() + " --out " +
                dir.file("o.lnl").string() + " --tau 1",
            dir.file("log")) == 2);
}

TEST_CASE("decode with a model applies refinement within tau") {
  TempDir dir("cli_model");
  const GrayImage x = synth_image(48, 48, 11);
  write_pgm(x, dir.file("a.pgm"));
  save_weights(build_model({8, 2, 2, 3}, 5), dir.file("m.lnw"));

  run("encode --in " + dir.file("a.pgm").string() + " --out " +
          dir.file("a.lnl").string() + " --tau 3",
      dir.file("log"));
  CHECK(run("decode --in " + dir.file("a.lnl").string() + " --out " +
                dir.file("plain.pgm").string(),
            dir.file("log")) == 0);
  CHECK(run("decode --in " + dir.file("a.lnl").string() + " --out " +
                dir.file("refined.pgm").string() + " --model " +
                dir.file("m.lnw").string(),
            dir.file("log")) == 0);

  const GrayImage plain = read_pgm(dir.file("plain.pgm"));
  const GrayImage refined = read_pgm(dir.file("refined.pgm"));
  CHECK(linf_bound(refined, plain) <= 3);  // truncation, tau from the stream
  CHECK(linf_bound(refined, x) <= 6);
}

TEST_CASE("eval writes the csv") {
  TempDir dir("cli_eval");
  for (int i = 0; i < 2; ++i)
    write_pgm(synth_image(48, 48, uint64_t(20 + i)),
              dir.file("i" + std::to_string(i) + ".pgm"));
  CHECK(run("eval --data " + dir.path.string() + " --taus 1,2,4,8 --csv " +
                dir.file("rd.csv").string(),
            dir.file("log")) == 0);
  const std::string csv = slurp(dir.file("rd.csv"));
  CHECK(csv.starts_with("tau,bpp,psnr_conv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4 + 1);
}

TEST_CASE("roundtrip subcommand prints a table and checks the corpus") {
  TempDir dir("cli_rt");
  for (int i = 0; i < 3; ++i)
    write_pgm(synth_image(32, 32, uint64_t(30 + i)),
              dir.file("i" + std::to_string(i) + ".pgm"));
  CHECK(run("roundtrip --data " + dir.path.string() + " --taus 0,1,4,8",
            dir.file("log")) == 0);
  const std::string text = slurp(dir.file("log"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find("PASS") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);

  TempDir empty("cli_rt_empty");
  CHECK(run("roundtrip --data " + empty.path.string() + " --taus 1",
            dir.file("log")) == 1);
}

TEST_CASE("train smoke run on a 4-image toy set") {
  TempDir dir("cli_train");
  for (int i = 0; i < 4; ++i)
    write_pgm(synth_image(64, 64, uint64_t(40 + i)),
              dir.file("i" + std::to_string(i) + ".pgm"));

  const std::string common =
      "train --data " + dir.path.string() + " --taus 3 --patch 32 --stride 32 "
      "--batch 4 --epochs-hi 1 --epochs-lo 0 --base 4 --blocks 1 --seed 9 ";
  CHECK(run(common + "--out " + dir.file("w1.lnw").string(),
            dir.file("log1")) == 0);
  const std::string log = slurp(dir.file("log1"));
  CHECK(log.find("epoch,0,loss,") != std::string::npos);
  CHECK(log.find("epoch,1,loss,") != std::string::npos);

  CHECK(run(common + "--out " + dir.file("w2.lnw").string(),
            dir.file("log2")) == 0);
  CHECK(slurp(dir.file("w1.lnw")) == slurp(dir.file("w2.lnw")));
}

TEST_CASE("gradcheck subcommand") {
  TempDir dir("cli_gc");
  CHECK(run("gradcheck", dir.file("log")) == 0);
  const std::string text = slurp(dir.file("log"));
  CHECK(text.find("max_rel_err") != std::string::npos);
  CHECK(text.find("tol 1.0e-03") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);

  CHECK(run("gradcheck --f64", dir.file("log64")) == 0);
  CHECK(slurp(dir.file("log64")).find("tol 1.0e-06") != std::string::npos);
}
