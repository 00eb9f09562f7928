#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = FUSIM_CLI_PATH;

const std::string kTiny = R"([experiment]
seed = 5
hidden = 8

[domain a]
source = synthetic
resolution = 8x8
samples_per_class = 10
classes = 3

[partition]
groups = 2
working_resolution = 8x8

[federation]
rounds = 2
unlearn_rounds = 1

[unlearn]
requesting = 0
forget_class = 1
top_n = 4
)";

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("fusim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(dir_ / name) << text;
        return dir_ / name;
    }

    /// Runs the CLI with `args`, returning the exit code; stderr lands in `err_`.
    int run(const std::string& args) {
        const auto err_path = dir_ / "stderr.txt";
        const std::string cmd = "\"" + kCli + "\" " + args + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                                err_path.string();
        const int status = std::system(cmd.c_str());
        std::ifstream in(err_path);
        std::stringstream ss;
        ss << in.rdbuf();
        err_ = ss.str();
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string out_flag() const { return "--out " + (dir_ / "out").string(); }

    fs::path dir_;
    std::string err_;
};

}  // namespace

TEST_F(Cli, HelpAndUsage) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("train"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, ConfigErrorsExitOne) {
    EXPECT_EQ(run("run --config " + (dir_ / "absent.ini").string() + " " + out_flag()), 1);
    std::string bad_text = kTiny;
    bad_text.replace(bad_text.find("groups = 2"), 10, "groups = 2\nalpha = -1");
    const auto bad = write("bad.ini", bad_text);
    EXPECT_EQ(run("run --config " + bad.string() + " " + out_flag()), 1);
    EXPECT_NE(err_.find("alpha"), std::string::npos) << err_;
    const auto good = write("good.ini", kTiny);
    EXPECT_EQ(run("run --config " + good.string() + " --route erase " + out_flag()), 1);
    EXPECT_FALSE(fs::exists(dir_ / "out"));
}

TEST_F(Cli, MissingStageExitsTwo) {
    const auto good = write("good.ini", kTiny);
    EXPECT_EQ(run("train --config " + good.string() + " " + out_flag()), 2);
    EXPECT_NE(err_.find("partition"), std::string::npos) << err_;
}

TEST_F(Cli, StagesThenCompare) {
    const auto good = write("good.ini", kTiny);
    const auto cfg = " --config " + good.string() + " " + out_flag();
    EXPECT_EQ(run("partition" + cfg), 0) << err_;
    EXPECT_EQ(run("train" + cfg), 0) << err_;
    EXPECT_EQ(run("unlearn --route zeroing" + cfg), 0) << err_;
    EXPECT_EQ(run("evaluate --route zeroing" + cfg), 0) << err_;
    EXPECT_TRUE(fs::exists(dir_ / "out" / "evaluate-zeroing" / "metrics.json"));

    EXPECT_EQ(run("compare --route delete --route fedcccu --seed 9" + cfg), 0) << err_;
    EXPECT_TRUE(fs::exists(dir_ / "out" / "compare" / "comparison.csv"));
}
