#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "vmt/data.hpp"
#include "vmt/manifest.hpp"

using namespace vmt;

namespace {

namespace fs = std::filesystem;

struct RunResult {
    int status;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(VMT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return RunResult{WEXITSTATUS(rc)};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / "vmt_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path dir_;
};

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
    EXPECT_EQ(run_cli("frobnicate").status, 2);
    EXPECT_EQ(run_cli("").status, 2);
    EXPECT_EQ(run_cli("--help").status, 0);
}

TEST_F(CliTest, ValidationErrorsExitWithThree) {
    EXPECT_EQ(run_cli("synth-data --out " + (dir_ / "d").string() + " --motion wobble").status,
              3);
}

TEST_F(CliTest, SynthDataProducesLoadableDatasetAndManifest) {
    const fs::path out = dir_ / "circle";
    ASSERT_EQ(run_cli("synth-data --out " + out.string() +
                      " --motion circle --clips 3 --frames 4 --seed 9")
                  .status,
              0);
    MotionDataset ds = load_motion_dataset(out);
    EXPECT_EQ(ds.clips.size(), 3u);
    EXPECT_EQ(ds.verb, "circling");
    RunManifest m = RunManifest::load(out / "dataset.manifest.json");
    EXPECT_EQ(m.command, "synth-data");
    EXPECT_EQ(m.seeds.at("jitter"), "9");
}

TEST_F(CliTest, EndToEndSmokeWithRawBase) {
    const fs::path base = dir_ / "base.ckpt";
    ASSERT_EQ(run_cli("base-init --out " + base.string() + " --seed 17 --pretrain-steps 0")
                  .status,
              0);
    ASSERT_TRUE(fs::exists(base));
    RunManifest bm = RunManifest::load(dir_ / "base.ckpt.manifest.json");
    EXPECT_FALSE(bm.checkpoint_hashes.at("backbone").empty());

    const fs::path data = dir_ / "data";
    ASSERT_EQ(run_cli("synth-data --out " + data.string() +
                      " --motion circle --clips 2 --frames 4")
                  .status,
              0);

    const fs::path spatial = dir_ / "spatial.ckpt";
    ASSERT_EQ(run_cli("train-appearance --dataset " + data.string() + " --base " +
                      base.string() + " --out " + spatial.string() +
                      " --steps 2 --rank 4 --client mock --log " +
                      (dir_ / "s1.tsv").string())
                  .status,
              0);
    EXPECT_NE(read_file(dir_ / "s1.tsv").find("step\tl_t"), std::string::npos);

    const fs::path motion = dir_ / "motion.ckpt";
    ASSERT_EQ(run_cli("train-motion --dataset " + data.string() + " --base " + base.string() +
                      " --spatial " + spatial.string() + " --out " + motion.string() +
                      " --steps 2 --rank 4 --lambda 1e-4")
                  .status,
              0);

    const fs::path frames = dir_ / "gen";
    const std::string gen_cmd = "generate --prompt \"a blue triangle is circling on a white "
                                "background\" --base " +
                                base.string() + " --motion " + motion.string() + " --out " +
                                frames.string() + " --steps 3 --cfg 7 --frames 2 --seed 5" +
                                " --preview " + (dir_ / "p.gif").string();
    ASSERT_EQ(run_cli(gen_cmd).status, 0);
    EXPECT_TRUE(fs::exists(frames / "frame_0000.ppm"));
    EXPECT_TRUE(fs::exists(frames / "frame_0001.ppm"));
    EXPECT_TRUE(fs::exists(dir_ / "p.gif"));
    RunManifest gm = RunManifest::load(frames / "clip.manifest.json");
    EXPECT_EQ(gm.config.at("prompt"), "a blue triangle is circling on a white background");
    EXPECT_FALSE(gm.checkpoint_hashes.at("motion").empty());

    // Same manifest (config + seeds + checkpoints) => byte-identical output.
    const fs::path frames2 = dir_ / "gen2";
    const std::string gen_cmd2 = "generate --prompt \"a blue triangle is circling on a white "
                                 "background\" --base " +
                                 base.string() + " --motion " + motion.string() + " --out " +
                                 frames2.string() + " --steps 3 --cfg 7 --frames 2 --seed 5";
    ASSERT_EQ(run_cli(gen_cmd2).status, 0);
    EXPECT_EQ(read_file(frames / "frame_0000.ppm"), read_file(frames2 / "frame_0000.ppm"));
    EXPECT_EQ(read_file(frames / "frame_0001.ppm"), read_file(frames2 / "frame_0001.ppm"));

    // Evaluate the checkpoint on the same references.
    const fs::path report = dir_ / "report.tsv";
    ASSERT_EQ(run_cli("evaluate --base " + base.string() + " --motions " + motion.string() +
                      " --references " + data.string() + " --out " + report.string() +
                      " --steps 2 --cfg 7 --seed 3")
                  .status,
              0);
    const std::string rep = read_file(report);
    EXPECT_NE(rep.find("motion\ttemplate\tclip_t\tclip_e\ttemp_cons\tmofid"),
              std::string::npos);
    EXPECT_NE(rep.find("aggregate"), std::string::npos);
    // 1 motion x 6 templates + aggregate row.
    int rows = 0;
    for (char ch : rep) rows += ch == '\n' ? 1 : 0;
    EXPECT_GE(rows, 8);
}

TEST_F(CliTest, RecaptionTableFromMock) {
    const fs::path data = dir_ / "data";
    ASSERT_EQ(run_cli("synth-data --out " + data.string() +
                      " --motion sweep --clips 2 --frames 4")
                  .status,
              0);
    const fs::path table = dir_ / "recap.tsv";
    ASSERT_EQ(
        run_cli("recaption --dataset " + data.string() + " --out " + table.string() +
                " --client mock")
            .status,
        0);
    const std::string content = read_file(table);
    EXPECT_NE(content.find("sweeping"), std::string::npos);
    EXPECT_NE(content.find("subject over a"), std::string::npos);
}
