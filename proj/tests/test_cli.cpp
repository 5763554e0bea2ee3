#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "diffseg/checkpoint.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/png_io.hpp"

using namespace diffseg;
namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("DIFFSEG_CLI_BIN");
    REQUIRE(p != nullptr);
    return p;
}

int run(const std::string& args, const std::string& out_file = "/dev/null") {
    const std::string cmd = cli() + " " + args + " >" + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

bool dirs_equal(const fs::path& a, const fs::path& b) {
    std::vector<std::string> rel;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a).string());
    }
    for (const auto& r : rel) {
        if (r == "config_resolved.ini") continue;
        if (!fs::exists(b / r)) return false;
        if (slurp((a / r).string()) != slurp((b / r).string())) return false;
    }
    return true;
}

struct TempTree {
    fs::path root;
    TempTree() {
        root = fs::temp_directory_path() / ("diffseg_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
    std::string operator/(const std::string& s) const { return (root / s).string(); }
};

}  // namespace

TEST_CASE("gen-data") {
    TempTree tmp;
    SECTION("same flags produce identical directories") {
        REQUIRE(run("gen-data --out " + (tmp / "a") + " --n 6 --size 16 --classes 3 --seed 7") == 0);
        REQUIRE(run("gen-data --out " + (tmp / "b") + " --n 6 --size 16 --classes 3 --seed 7") == 0);
        REQUIRE(dirs_equal(tmp / "a", tmp / "b"));
        REQUIRE(fs::exists(fs::path(tmp / "a") / "manifest.txt"));
    }
    SECTION("n = 0 writes an empty manifest and succeeds") {
        REQUIRE(run("gen-data --out " + (tmp / "empty") + " --n 0 --size 16 --classes 3") == 0);
        REQUIRE(slurp(tmp / "empty/manifest.txt").empty());
    }
    SECTION("invalid size fails with a nonzero exit") {
        REQUIRE(run("gen-data --out " + (tmp / "bad") + " --n 1 --size 0") != 0);
    }
    SECTION("refuses to clobber a non-empty directory without --overwrite") {
        REQUIRE(run("gen-data --out " + (tmp / "c") + " --n 2 --size 16") == 0);
        REQUIRE(run("gen-data --out " + (tmp / "c") + " --n 2 --size 16") == 65);
        REQUIRE(run("gen-data --out " + (tmp / "c") + " --n 2 --size 16 --overwrite") == 0);
    }
}

TEST_CASE("train, infer, eval pipeline at micro scale") {
    TempTree tmp;
    const std::string data = tmp / "data";
    const std::string run_dir = tmp / "run";
    REQUIRE(run("gen-data --out " + data + " --n 4 --size 8 --classes 3 --seed 3") == 0);

    const std::string train_flags =
        " --data " + data + " --out " + run_dir +
        " --classes 3 --base-channels 4 --depth 1 --embed-dim 4 --time-steps 2 --lr 1e-3 --seed 5";

    SECTION("--epochs 0 emits only the initialized checkpoint") {
        REQUIRE(run(std::string("train") + train_flags + " --epochs 0") == 0);
        REQUIRE(fs::exists(fs::path(run_dir) / "checkpoint.ckpt"));
        Checkpoint<float> ck = load_checkpoint<float>((fs::path(run_dir) / "checkpoint.ckpt").string());
        REQUIRE(ck.epochs_done == 0);
        REQUIRE(ck.opt->step_count() == 0);
    }

    SECTION("training writes log, losses, report and resolved config") {
        REQUIRE(run(std::string("train") + train_flags + " --epochs 2") == 0);
        REQUIRE(fs::exists(fs::path(run_dir) / "train_log.txt"));
        REQUIRE(fs::exists(fs::path(run_dir) / "losses_epoch.txt"));
        REQUIRE(fs::exists(fs::path(run_dir) / "report.txt"));
        REQUIRE(fs::exists(fs::path(run_dir) / "config_resolved.ini"));
        const std::string log = slurp((fs::path(run_dir) / "train_log.txt").string());
        REQUIRE(log.find("epoch=0") != std::string::npos);
        REQUIRE(log.find("scale=1") != std::string::npos);
        REQUIRE(log.find("t=2") != std::string::npos);
        REQUIRE(log.find("loss=") != std::string::npos);

        SECTION("scales=1 vs scales=3 log T vs 3T updates per sample") {
            auto count_lines = [](const std::string& s) {
                return std::count(s.begin(), s.end(), '\n');
            };
            const auto n1 = count_lines(log);
            const std::string run3 = tmp / "run3";
            REQUIRE(run("train --data " + data + " --out " + run3 +
                        " --classes 3 --base-channels 4 --depth 1 --embed-dim 4 --time-steps 2 --scales 3"
                        " --lr 1e-3 --seed 5 --epochs 2") == 0);
            const auto n3 = count_lines(slurp((fs::path(run3) / "train_log.txt").string()));
            REQUIRE(n3 == 3 * n1);
        }

        SECTION("infer writes one prediction per image; stride and explicit steps agree") {
            const std::string ckpt = (fs::path(run_dir) / "checkpoint.ckpt").string();
            REQUIRE(run("infer --checkpoint " + ckpt + " --images " + data + " --out " + (tmp / "pred1") +
                        " --stride 1 --seed 9") == 0);
            REQUIRE(run("infer --checkpoint " + ckpt + " --images " + data + " --out " + (tmp / "pred2") +
                        " --steps 2,1 --seed 9") == 0);
            REQUIRE(dirs_equal(tmp / "pred1", tmp / "pred2"));

            SECTION("--ensemble 1 equals plain inference") {
                REQUIRE(run("infer --checkpoint " + ckpt + " --images " + data + " --out " + (tmp / "pred3") +
                            " --ensemble 1 --seed 9") == 0);
                REQUIRE(dirs_equal(tmp / "pred1", tmp / "pred3"));
            }

            SECTION("eval compares predictions and ground truth") {
                const std::string report = tmp / "metrics.txt";
                REQUIRE(run("eval --pred " + (tmp / "pred1") + " --truth " + data + " --classes 3 --out " + report,
                            tmp / "eval_out.txt") == 0);
                const std::string table = slurp(tmp / "eval_out.txt");
                REQUIRE(table.find("mIoU") != std::string::npos);
                REQUIRE(slurp(report).find("miou=") != std::string::npos);
            }

            SECTION("eval of ground truth against itself is perfect") {
                REQUIRE(run("eval --pred " + data + "/labels --truth " + data + " --classes 3 --out " +
                            (tmp / "perfect.txt")) == 0);
                const std::string kv = slurp(tmp / "perfect.txt");
                REQUIRE(kv.find("miou=1") != std::string::npos);
            }

            SECTION("orphan files are listed and fail the run") {
                fs::create_directories(tmp / "orphan");
                for (const auto& e : fs::directory_iterator(tmp / "pred1")) {
                    if (e.path().extension() == ".png") {
                        fs::copy_file(e.path(), fs::path(tmp / "orphan") / e.path().filename());
                    }
                }
                fs::remove(fs::path(tmp / "orphan") / "00000.png");
                REQUIRE(run("eval --pred " + (tmp / "orphan") + " --truth " + data + " --classes 3",
                            tmp / "orphan_out.txt") == 65);
                REQUIRE(slurp(tmp / "orphan_out.txt").find("00000.png") != std::string::npos);
            }
        }

        SECTION("soft maps written on request") {
            const std::string ckpt = (fs::path(run_dir) / "checkpoint.ckpt").string();
            REQUIRE(run("infer --checkpoint " + ckpt + " --images " + data + " --out " + (tmp / "soft") +
                        " --save-soft") == 0);
            REQUIRE(fs::exists(fs::path(tmp / "soft") / "00000.soft"));
            const std::string head = slurp((fs::path(tmp / "soft") / "00000.soft").string()).substr(0, 17);
            REQUIRE(head == "diffseg-softmap 1");
        }
    }

    SECTION("resume reproduces an uninterrupted run") {
        REQUIRE(run(std::string("train") + train_flags + " --epochs 2") == 0);
        const std::string straight = slurp((fs::path(run_dir) / "report.txt").string());

        const std::string half_dir = tmp / "half";
        const std::string half_flags =
            " --data " + data + " --out " + half_dir +
            " --classes 3 --base-channels 4 --depth 1 --embed-dim 4 --time-steps 2 --lr 1e-3 --seed 5";
        REQUIRE(run(std::string("train") + half_flags + " --epochs 1") == 0);
        REQUIRE(run("train --data " + data + " --out " + (tmp / "resumed") + " --classes 3 --resume " +
                    half_dir + "/checkpoint.ckpt --epochs 2") == 0);
        const std::string resumed = slurp((fs::path(tmp / "resumed") / "report.txt").string());

        auto checksum_line = [](const std::string& report) {
            const auto pos = report.find("param_checksum");
            return report.substr(pos);
        };
        REQUIRE(checksum_line(straight) == checksum_line(resumed));
    }

    SECTION("infer rejects a palette that disagrees with the checkpoint") {
        REQUIRE(run(std::string("train") + train_flags + " --epochs 1") == 0);
        REQUIRE(run("infer --checkpoint " + run_dir + "/checkpoint.ckpt --images " + data + " --out " +
                    (tmp / "badpred") + " --palette uavid") == 65);
    }

    SECTION("config file values are overridden by flags") {
        const std::string cfg_path = tmp / "train.ini";
        {
            std::ofstream os(cfg_path);
            os << "epochs=1\nlr=1e-3\ntime-steps=2\nbase-channels=4\ndepth=1\nembed-dim=4\nclasses=3\nseed=5\n";
        }
        REQUIRE(run("train --config " + cfg_path + " --data " + data + " --out " + (tmp / "cfgrun") +
                    " --epochs 2") == 0);
        const std::string resolved = slurp((fs::path(tmp / "cfgrun") / "config_resolved.ini").string());
        REQUIRE(resolved.find("epochs=2") != std::string::npos);
    }
}

TEST_CASE("eval matches the metrics module on a hand-built fixture") {
    // truth [[0,0],[1,1]] vs prediction [[0,1],[1,1]]: class 0 IoU 1/2,
    // class 1 IoU 2/3, mIoU 7/12.
    TempTree tmp;
    const ClassPalette pal = shapes_palette(3);
    fs::create_directories(tmp / "truth");
    fs::create_directories(tmp / "pred");
    IndexMap truth(2, 2), pred(2, 2);
    truth.at(0, 0) = 0;
    truth.at(0, 1) = 0;
    truth.at(1, 0) = 1;
    truth.at(1, 1) = 1;
    pred = truth;
    pred.at(0, 1) = 1;
    save_label_png(tmp / "truth/x.png", truth, pal);
    save_label_png(tmp / "pred/x.png", pred, pal);

    REQUIRE(run("eval --pred " + (tmp / "pred") + " --truth " + (tmp / "truth") + " --classes 3 --out " +
                (tmp / "kv")) == 0);
    const std::string kv = slurp(tmp / "kv");
    ConfusionMatrix cm(3);
    cm.accumulate(pred, truth);
    REQUIRE(kv.find("iou.background=" + std::to_string(*iou(cm, 0))) != std::string::npos);
    REQUIRE(kv.find("iou.rectangle=" + std::to_string(*iou(cm, 1))) != std::string::npos);
    REQUIRE(kv.find("miou=" + std::to_string(miou(cm)).substr(0, 8)) != std::string::npos);
    REQUIRE(*iou(cm, 0) == 0.5);
    REQUIRE(*iou(cm, 1) == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("inspect-schedule") {
    TempTree tmp;
    SECTION("prints betas, step list and scale ladder") {
        REQUIRE(run("inspect-schedule --time-steps 4 --scales 3 --width 64 --height 64", tmp / "out.txt") == 0);
        const std::string out = slurp(tmp / "out.txt");
        REQUIRE(out.find("0.250000") != std::string::npos);
        REQUIRE(out.find("0.750000") != std::string::npos);
        REQUIRE(out.find("1.000000") != std::string::npos);
        REQUIRE(out.find("executed steps (4): 4 3 2 1") != std::string::npos);
        REQUIRE(out.find("m=3 -> 16x16") != std::string::npos);
        REQUIRE(out.find("m=1 -> 64x64") != std::string::npos);
    }
    SECTION("stride 2 from 25 lists 13 steps") {
        REQUIRE(run("inspect-schedule --time-steps 25 --stride 2", tmp / "out2.txt") == 0);
        REQUIRE(slurp(tmp / "out2.txt").find("executed steps (13): 25 23") != std::string::npos);
    }
    SECTION("invalid parameters give a usage-or-validation failure") {
        REQUIRE(run("inspect-schedule --time-steps 0") == 65);
    }
    SECTION("writes a noise strip PNG") {
        REQUIRE(run("gen-data --out " + (tmp / "d") + " --n 1 --size 16 --classes 3 --seed 1") == 0);
        REQUIRE(run("inspect-schedule --time-steps 4 --noise-strip " + (tmp / "strip.png") + " --labels " +
                    (tmp / "d/labels/00000.png") + " --at 4,2,1 --classes 3") == 0);
        Tensor<float> strip = load_image_png<float>(tmp / "strip.png");
        REQUIRE(strip.width == 48);
        REQUIRE(strip.height == 16);
    }
}

TEST_CASE("usage errors exit with the usage code") {
    REQUIRE(run("no-such-command") == 64);
    REQUIRE(run("") == 64);
}
