#include <gtest/gtest.h>

#include <sstream>

#include <scorecast/cli.hpp>

#include "test_util.hpp"

using namespace scorecast;
using scorecast::testing::slurp;
using scorecast::testing::spit;
using scorecast::testing::TempDir;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

const std::vector<std::string> kQuick{"--set", "vae.epochs=5",    "--set", "recurrent.epochs=5", "--set", "mlp.epochs=5",
                                      "--set", "rf.n_trees=5",    "--set", "et.n_trees=5",       "--set", "xgb.n_stages=5",
                                      "--set", "cv.folds=2"};

std::vector<std::string> with_quick(std::vector<std::string> args)
{
    args.insert(args.end(), kQuick.begin(), kQuick.end());
    return args;
}

} // namespace

TEST(CliSynth, WritesRequestedRowsDeterministically)
{
    TempDir dir("cli_synth");
    const auto a = dir.file("a.csv"), b = dir.file("b.csv");
    ASSERT_EQ(run({"synth", "--n", "50", "--seed", "3", "--out", a}).code, 0);
    ASSERT_EQ(run({"synth", "--n", "50", "--seed", "3", "--out", b}).code, 0);
    EXPECT_EQ(lines_of(slurp(a)).size(), 51u);
    EXPECT_EQ(slurp(a), slurp(b));
    ASSERT_EQ(run({"synth", "--n", "50", "--seed", "4", "--out", b}).code, 0);
    EXPECT_NE(slurp(a), slurp(b));
}

TEST(CliSynth, ReportsCorrelations)
{
    TempDir dir("cli_synth_corr");
    const auto r = run({"synth", "--n", "200", "--out", dir.file("c.csv"), "--corr", "mte=0.9"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("corr(mte,total)"), std::string::npos);
    EXPECT_NE(r.out.find("(target 0.90)"), std::string::npos);
}

TEST(CliSynth, InvalidCorrelationIsUsageError)
{
    TempDir dir("cli_synth_bad");
    EXPECT_EQ(run({"synth", "--n", "50", "--out", dir.file("x.csv"), "--corr", "ete=1.5"}).code, 2);
    EXPECT_EQ(run({"synth", "--n", "50", "--out", dir.file("x.csv"), "--corr", "quiz=0.5"}).code, 2);
    EXPECT_EQ(run({"synth", "--n", "50"}).code, 2);
}

TEST(CliGeneral, UsageErrors)
{
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"--help"}).code, 0);
    TempDir dir("cli_general");
    EXPECT_EQ(run({"synth", "--n", "20", "--out", dir.file("x.csv"), "--set", "no.such=1"}).code, 2);
}

TEST(CliEda, SmallCohortProducesArtifacts)
{
    TempDir dir("cli_eda");
    const auto full = dir.file("full.csv");
    ASSERT_EQ(run({"synth", "--n", "20", "--out", full}).code, 0);
    const auto rows = lines_of(slurp(full));
    const auto small = dir.file("small.csv");
    spit(small, rows[0] + "\n" + rows[1] + "\n" + rows[2] + "\n" + rows[3] + "\n");
    const auto r = run({"eda", "--input", small, "--out", dir.file("eda")});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* suffix : {"hist", "corr", "gmap"}) {
        const auto path = dir.file("eda/small." + std::string(suffix) + ".csv");
        EXPECT_FALSE(slurp(path).empty()) << path;
    }
    EXPECT_NE(r.out.find("records: 3"), std::string::npos);
}

TEST(CliEda, EmptyCohortIsDataError)
{
    TempDir dir("cli_eda_empty");
    const auto full = dir.file("full.csv");
    ASSERT_EQ(run({"synth", "--n", "20", "--out", full}).code, 0);
    const auto empty = dir.file("empty.csv");
    spit(empty, lines_of(slurp(full))[0] + "\n");
    const auto r = run({"eda", "--input", empty, "--out", dir.file("eda")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("empty cohort"), std::string::npos);
    EXPECT_EQ(run({"eda", "--input", dir.file("missing.csv"), "--out", dir.file("eda")}).code, 1);
}

TEST(CliTrainPredict, LinearPipelineRoundTrip)
{
    TempDir dir("cli_train");
    const auto data = dir.file("cohort.csv");
    ASSERT_EQ(run({"synth", "--n", "120", "--seed", "2", "--out", data}).code, 0);
    const auto ckpt = dir.file("models/lr.ckpt");
    const auto t = run({"train", "--input", data, "--out", ckpt, "--pipeline", "lr", "--view", "d2-ete", "--seed", "1"});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto manifest = slurp(ckpt + ".manifest");
    EXPECT_NE(manifest.find("pipeline=lr"), std::string::npos);
    EXPECT_NE(manifest.find("view=d2-ete"), std::string::npos);
    EXPECT_NE(manifest.find("n_train=120"), std::string::npos);

    const auto pred_path = dir.file("pred.csv");
    const auto p = run({"predict", "--input", data, "--checkpoint", ckpt, "--out", pred_path});
    ASSERT_EQ(p.code, 0) << p.err;

    // Independent in-process fit on the same rows.
    const auto cohort = parse_cohort(std::filesystem::path(data));
    const auto view = build_view(cohort.records, ViewKind::d2_ete);
    const auto direct = fit_linear_regression(view.matrix, view.targets)->predict(view.matrix);
    const auto lines = lines_of(slurp(pred_path));
    ASSERT_EQ(lines.size(), 121u);
    EXPECT_EQ(lines[0], "student_id,predicted_total");
    for (std::size_t i = 0; i < direct.size(); ++i) {
        const auto comma = lines[i + 1].find(',');
        EXPECT_EQ(lines[i + 1].substr(0, comma), view.row_ids[i]);
        EXPECT_NEAR(std::stod(lines[i + 1].substr(comma + 1)), direct[i], 1e-6);
    }
}

TEST(CliTrainPredict, ViewMismatchAndBadPipeline)
{
    TempDir dir("cli_mismatch");
    const auto data = dir.file("cohort.csv");
    ASSERT_EQ(run({"synth", "--n", "60", "--out", data}).code, 0);
    const auto ckpt = dir.file("m.ckpt");
    ASSERT_EQ(run({"train", "--input", data, "--out", ckpt, "--pipeline", "knn", "--view", "d2-mte"}).code, 0);
    const auto r = run({"predict", "--input", data, "--checkpoint", ckpt, "--view", "d1", "--out", dir.file("p.csv")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("mismatch"), std::string::npos);
    EXPECT_EQ(run({"train", "--input", data, "--out", ckpt, "--pipeline", "vae+svm"}).code, 2);
    EXPECT_EQ(run({"train", "--input", data, "--out", ckpt, "--pipeline", "lr", "--view", "d3"}).code, 2);
    EXPECT_EQ(run({"predict", "--input", data, "--checkpoint", dir.file("none.ckpt"), "--out", dir.file("p.csv")}).code, 1);
}

TEST(CliEvaluate, D1FullSetWritesEightRows)
{
    TempDir dir("cli_eval");
    const auto data = dir.file("cohort.csv");
    ASSERT_EQ(run({"synth", "--n", "80", "--out", data}).code, 0);
    const auto csv = dir.file("res.csv");
    const auto r = run(with_quick({"evaluate", "--input", data, "--out", csv, "--view", "d1", "--all-pipelines"}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto lines = lines_of(slurp(csv));
    ASSERT_EQ(lines.size(), 9u);
    EXPECT_EQ(lines[0], kResultsHeader);
    EXPECT_EQ(lines[1].rfind("vae+mlp,d1,", 0), 0u);
    EXPECT_EQ(lines[8].rfind("gru,d1,", 0), 0u);
    EXPECT_NE(r.out.find("view d1"), std::string::npos);
}

TEST(CliEvaluate, RepeatedRunsAreByteIdentical)
{
    TempDir dir("cli_eval_det");
    const auto data = dir.file("cohort.csv");
    ASSERT_EQ(run({"synth", "--n", "60", "--out", data}).code, 0);
    const auto a = dir.file("a.csv"), b = dir.file("b.csv");
    ASSERT_EQ(run(with_quick({"evaluate", "--input", data, "--out", a, "--pipeline", "vae+mlp", "--seed", "5"})).code, 0);
    ASSERT_EQ(run(with_quick({"evaluate", "--input", data, "--out", b, "--pipeline", "vae+mlp", "--seed", "5"})).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_EQ(lines_of(slurp(a)).size(), 4u);
}

TEST(CliEvaluate, FlagConflictsAndFailures)
{
    TempDir dir("cli_eval_bad");
    const auto data = dir.file("cohort.csv");
    ASSERT_EQ(run({"synth", "--n", "8", "--out", data}).code, 0);
    EXPECT_EQ(run({"evaluate", "--input", data, "--out", dir.file("r.csv"), "--pipeline", "lr", "--all-pipelines"}).code, 2);
    // Eight rows cannot be split; every cell fails numerically.
    const auto r = run({"evaluate", "--input", data, "--out", dir.file("r.csv"), "--pipeline", "lr"});
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(lines_of(slurp(dir.file("r.csv"))).size(), 4u);
}
