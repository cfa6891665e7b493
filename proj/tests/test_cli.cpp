#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "testutil.hpp"

// End-to-end checks of the installed command-line surface. Each run shells
// out to the real binary; the path comes from the build system.

namespace fs = std::filesystem;

namespace {

const std::string kCli = DTI_CLI_PATH;

int run(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = kCli + " " + args + " >" + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace

TEST_CASE("--help exits 0 on every subcommand") {
    CHECK(run("--help") == 0);
    for (const char* sub : {"synth", "quantize", "stats", "train", "xval", "eval", "serve",
                            "classify", "gradcheck"})
        CHECK(run(std::string(sub) + " --help") == 0);
}

TEST_CASE("usage errors exit 1") {
    CHECK(run("") == 1);                       // missing subcommand
    CHECK(run("frobnicate") == 1);             // unknown subcommand
    CHECK(run("xval --corpus x --k 1") == 1);  // k below the allowed range
    CHECK(run("synth") == 1);                  // missing required --out
    CHECK(run("synth --out d --bogus-flag") == 1);
}

TEST_CASE("runtime errors exit 2") {
    CHECK(run("stats --corpus /nonexistent-path") == 2);
    CHECK(run("eval --model /missing.dtim --corpus /nowhere") == 2);
    CHECK(run("classify --server 127.0.0.1:1 --corpus /nowhere") == 2);
}

TEST_CASE("synth / stats / quantize / train / eval / xval round trip") {
    const std::string dir = testutil::temp_dir("cli");
    const std::string corpus = dir + "/corpus";
    REQUIRE(run("--seed 9 synth --out " + corpus + " --classes 2 --frames-per-class 12") == 0);
    CHECK(fs::exists(corpus + "/manifest.tsv"));

    CHECK(run("stats --corpus " + corpus, dir + "/stats.txt") == 0);
    const std::string stats = slurp(dir + "/stats.txt");
    CHECK(stats.find("images: 24") != std::string::npos);
    CHECK(stats.find("dynamics:") != std::string::npos);

    // quantize one frame to a PGM
    std::string frame;
    for (const auto& e : fs::recursive_directory_iterator(corpus))
        if (e.path().extension() == ".dtif") frame = e.path().string();
    REQUIRE(run("quantize --in " + frame + " --out " + dir + "/img.pgm") == 0);
    CHECK(slurp(dir + "/img.pgm").substr(0, 2) == "P5");

    // a flat frame warns about zero dynamics
    dti::ThermalFrame flat;
    flat.width = flat.height = 80;
    flat.temps.assign(80 * 80, 21.0);
    dti::write_dtif(dir + "/flat.dtif", flat);
    REQUIRE(run("quantize --in " + dir + "/flat.dtif --out " + dir + "/flat.pgm",
                dir + "/quant.log") == 0);
    CHECK(slurp(dir + "/quant.log").find("dynamics=0") != std::string::npos);

    // short training run + eval + model reuse
    REQUIRE(run("--seed 4 train --corpus " + corpus + " --epochs 6 --batch 16 --lr 0.01 --out " +
                dir + "/model.dtim") == 0);
    CHECK(fs::exists(dir + "/model.dtim"));
    REQUIRE(run("eval --model " + dir + "/model.dtim --corpus " + corpus, dir + "/eval.txt") == 0);
    CHECK(slurp(dir + "/eval.txt").find("mean class accuracy") != std::string::npos);

    // xval writes report + csv
    REQUIRE(run("--seed 4 xval --corpus " + corpus + " --k 2 --epochs 4 --batch 16 --lr 0.01"
                " --report " + dir + "/rep.json --csv " + dir + "/conf.csv") == 0);
    CHECK(slurp(dir + "/rep.json").find("\"fold_accuracies\"") != std::string::npos);
    CHECK(slurp(dir + "/conf.csv").find("true\\pred") == 0);

    // identical flags + seeds => byte-identical outputs
    REQUIRE(run("--seed 4 train --corpus " + corpus + " --epochs 6 --batch 16 --lr 0.01 --out " +
                dir + "/model2.dtim") == 0);
    CHECK(slurp(dir + "/model.dtim") == slurp(dir + "/model2.dtim"));

    fs::remove_all(dir);
}

TEST_CASE("serve + classify over a loopback socket") {
    const std::string dir = testutil::temp_dir("cliserve");
    const std::string corpus = dir + "/corpus";
    REQUIRE(run("--seed 2 synth --out " + corpus + " --classes 2 --frames-per-class 8") == 0);
    REQUIRE(run("--seed 2 train --corpus " + corpus + " --epochs 4 --batch 16 --lr 0.01 --out " +
                dir + "/m.dtim") == 0);

    // run the server in the background on a fixed high port
    const std::string port = "59071";
    const std::string serve_cmd = kCli + " serve --model " + dir + "/m.dtim --bind 127.0.0.1:" +
                                  port + " --threshold 0.3 >" + dir + "/serve.log 2>&1 & echo $!";
    FILE* p = popen(serve_cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char pidbuf[32] = {0};
    REQUIRE(fgets(pidbuf, sizeof(pidbuf), p) != nullptr);
    pclose(p);
    const int pid = std::atoi(pidbuf);
    REQUIRE(pid > 0);

    // wait for the listener, then stream
    int rc = -1;
    for (int attempt = 0; attempt < 50; ++attempt) {
        rc = run("classify --server 127.0.0.1:" + port + " --corpus " + corpus + " --out " + dir +
                 "/log.tsv");
        if (rc == 0) break;
        if (std::system("sleep 0.1") != 0) break;
    }
    const int killed = std::system(("kill " + std::to_string(pid) + " 2>/dev/null; wait " +
                                    std::to_string(pid) + " 2>/dev/null")
                                       .c_str());
    (void)killed;
    REQUIRE(rc == 0);
    const std::string log = slurp(dir + "/log.tsv");
    CHECK(std::count(log.begin(), log.end(), '\n') == 16); // 2 classes x 8 frames
    CHECK(log.find('\t') != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand runs a reduced suite") {
    const std::string dir = testutil::temp_dir("cligrad");
    REQUIRE(run("gradcheck --instances 1", dir + "/gc.txt") == 0);
    const std::string out = slurp(dir + "/gc.txt");
    CHECK(out.find("conv2d") != std::string::npos);
    CHECK(out.find("st_block") != std::string::npos);
    CHECK(out.find("FAIL") == std::string::npos);
    fs::remove_all(dir);
}
