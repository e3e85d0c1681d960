#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "hads/trainer.hpp"

namespace fs = std::filesystem;

#ifndef HADS_CLI_PATH
#error "HADS_CLI_PATH must point at the hadsnet executable"
#endif

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path work_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "hads_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Run run(const std::string& args) {
    const auto dir = work_dir();
    const std::string cmd = std::string("cd '") + dir.string() + "' && '" + HADS_CLI_PATH + "' " + args +
                            " > stdout.txt 2> stderr.txt";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir / "stdout.txt");
    r.err = slurp(dir / "stderr.txt");
    return r;
}

const std::string kTiny =
    "--set image_size=16 --set texture_dim=16 --set epochs=1 --set folds=2 --set batch_size=4 --set test_frac=0.2";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and usage errors") {
    auto help = run("--help");
    CHECK(help.code == 0);
    for (const char* sub : {"generate-data", "augment", "train", "evaluate", "infer", "report"})
        CHECK_MESSAGE(help.out.find(sub) != std::string::npos, sub);
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("train --bogus-flag").code == 2);
}

TEST_CASE("end-to-end commands and exit codes") {
    auto gen = run("generate-data --out data --counts 8,6,6 --size 16 --seed 3");
    REQUIRE(gen.code == 0);
    CHECK(fs::exists(work_dir() / "data" / "manifest.csv"));

    auto train = run("train --data data --out run --quiet " + kTiny);
    REQUIRE_MESSAGE(train.code == 0, train.err);
    CHECK(train.out.find("global best: fold") != std::string::npos);
    CHECK(train.out.find("accuracy:") != std::string::npos);
    for (const char* f : {"global_best.ckpt", "training_log.csv", "test_report.csv", "run_manifest.json"})
        CHECK_MESSAGE(fs::exists(work_dir() / "run" / f), f);

    auto eval = run("evaluate --checkpoint run/global_best.ckpt --data data --out eval " + kTiny);
    CHECK_MESSAGE(eval.code == 0, eval.err);
    CHECK(eval.out.find("macro AUC") != std::string::npos);
    // the held-out report matches the one written during training
    CHECK(slurp(work_dir() / "eval" / "report.csv") == slurp(work_dir() / "run" / "test_report.csv"));

    auto ablate = run("evaluate --checkpoint run/global_best.ckpt --data data --zero-edge-stream " + kTiny);
    CHECK(ablate.code == 0);

    auto infer = run("infer --checkpoint run/global_best.ckpt --image data/benign/benign_0000.pgm");
    CHECK(infer.code == 0);
    CHECK(infer.out.find("benign=") != std::string::npos);
    CHECK(infer.out.find("prediction=") != std::string::npos);

    auto report = run("report --predictions run/test_predictions.csv");
    CHECK(report.code == 0);
    CHECK(report.out.find("macro avg") != std::string::npos);

    auto aug = run("augment --image data/malignant/malignant_0000.pgm --out aug --count 3 --seed 5 --emit-edges");
    CHECK(aug.code == 0);
    CHECK(fs::exists(work_dir() / "aug" / "aug_0002.pgm"));
    CHECK(fs::exists(work_dir() / "aug" / "edge_0000.pgm"));
    CHECK(fs::exists(work_dir() / "aug" / "augment_manifest.csv"));
    auto aug2 = run("augment --image data/malignant/malignant_0000.pgm --out aug2 --count 3 --seed 5 --emit-edges");
    CHECK(slurp(work_dir() / "aug" / "aug_0001.pgm") == slurp(work_dir() / "aug2" / "aug_0001.pgm"));
    CHECK(slurp(work_dir() / "aug" / "augment_manifest.csv") == slurp(work_dir() / "aug2" / "augment_manifest.csv"));

    SUBCASE("config errors exit 2") {
        auto r = run("train --data data --out bad --set no_such_key=1");
        CHECK(r.code == 2);
        CHECK(r.err.rfind("error: kind=config message=", 0) == 0);
        CHECK(r.err.find("lr_max") != std::string::npos);
        CHECK(run("train --data data --out bad --profile huge").code == 2);
    }
    SUBCASE("data errors exit 3") {
        auto r = run("train --data nowhere --out bad " + kTiny);
        CHECK(r.code == 3);
        CHECK(r.err.rfind("error: kind=data message=", 0) == 0);
        CHECK(run("infer --checkpoint missing.ckpt --image data/benign/benign_0000.pgm").code == 3);
    }
    SUBCASE("architecture mismatch exits 4 and names the dimension") {
        auto r = run("evaluate --checkpoint run/global_best.ckpt --data data --set image_size=16 --set texture_dim=32 "
                     "--set test_frac=0.2");
        CHECK(r.code == 4);
        CHECK(r.err.find("kind=state") != std::string::npos);
        CHECK(r.err.find("texture_dim") != std::string::npos);
    }
}

}  // TEST_SUITE
