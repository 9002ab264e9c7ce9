#pragma once

// Command-line front end: synth, eda, train, evaluate, predict.
// Exit codes: 0 success, 1 IO/data, 2 usage, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "checkpoint.hpp"
#include "core_data.hpp"
#include "eda.hpp"
#include "error.hpp"
#include "harness.hpp"
#include "ingest.hpp"

namespace scorecast {

namespace cli_detail {

namespace fs = std::filesystem;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> assignments;
};

inline Config load_config(const CommonOptions& o)
{
    Config cfg = o.config_path.empty() ? Config{} : Config::load(o.config_path);
    for (const auto& a : o.assignments) cfg.set_assignment(a);
    for (const auto& [key, value] : cfg.entries())
        if (!is_known_config_key(key)) throw UsageError("unknown config key '" + key + "'");
    return cfg;
}

inline void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("--config", o.config_path, "Config file of key = value lines");
    cmd->add_option("--set", o.assignments, "Override a config key (key=value); repeatable");
}

inline void ensure_parent(const fs::path& p)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline std::ofstream open_out(const fs::path& p)
{
    ensure_parent(p);
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    return out;
}

inline void close_out(std::ofstream& out, const fs::path& p)
{
    out.close();
    if (!out) throw DataError("write failed for " + p.string());
}

inline CohortFile read_cohort(const std::string& path, const Config& cfg, std::ostream& err)
{
    if (path.empty()) throw UsageError("--input is required");
    auto cohort = parse_cohort(fs::path(path), maxima_from_config(cfg));
    for (const auto& rej : cohort.rejections) err << path << ":" << rej.line << ": rejected: " << rej.reason << '\n';
    return cohort;
}

inline std::string fmt(double v, int precision = 4) { return detail::format_fixed(v, precision); }

// ---------------------------------------------------------------- synth

struct SynthOptions {
    CommonOptions common;
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> corr;
};

inline int cmd_synth(const SynthOptions& o, std::ostream& out)
{
    const auto cfg = load_config(o.common);
    auto spec = synth_spec_from_config(cfg);
    if (o.n) spec.n_students = *o.n;
    if (o.seed) spec.seed = *o.seed;
    for (const auto& c : o.corr) {
        const auto eq = c.find('=');
        if (eq == std::string::npos) throw UsageError("--corr expects feature=value, got '" + c + "'");
        const auto name = c.substr(0, eq);
        const auto f = parse_feature(name);
        if (!f) throw UsageError("--corr: unknown feature '" + name + "'");
        const auto value = c.substr(eq + 1);
        if (value == "none") {
            spec.target_correlations.erase(*f);
            continue;
        }
        const auto v = detail::parse_double(value);
        if (!v) throw UsageError("--corr: '" + value + "' is not a number");
        spec.target_correlations[*f] = *v;
    }
    const auto records = generate_synthetic(spec);
    const fs::path path(o.out);
    auto file = open_out(path);
    write_cohort(file, records);
    close_out(file, path);

    out << "wrote " << records.size() << " students to " << o.out << '\n';
    const auto view = select_features(records, {kAllFeatures.begin(), kAllFeatures.end()}, "all");
    for (std::size_t c = 0; c < view.n_features(); ++c) {
        Vector col(view.n_samples());
        for (std::size_t r = 0; r < view.n_samples(); ++r) col[r] = view.matrix(r, c);
        const Feature f = view.features[c];
        out << "corr(" << feature_name(f) << ",total) = " << fmt(pearson(col, view.targets));
        if (const auto it = spec.target_correlations.find(f); it != spec.target_correlations.end())
            out << "  (target " << fmt(it->second, 2) << ")";
        out << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------- eda

struct EdaOptions {
    CommonOptions common;
    std::string input;
    std::string out;
    std::size_t bins = 10;
};

// Pairwise correlation over all features and the total; undefined entries are written as NA.
inline void write_cohort_correlation(std::ostream& os, std::span<const AssessmentRecord> records)
{
    std::vector<std::string> labels;
    std::vector<std::function<std::optional<double>(const AssessmentRecord&)>> getters;
    for (Feature f : kAllFeatures) {
        labels.emplace_back(feature_name(f));
        getters.emplace_back([f](const AssessmentRecord& r) { return r[f]; });
    }
    labels.emplace_back("total");
    getters.emplace_back([](const AssessmentRecord& r) { return r.total; });
    const std::size_t k = labels.size();
    os << "label";
    for (const auto& l : labels) os << ',' << l;
    os << '\n';
    for (std::size_t i = 0; i < k; ++i) {
        os << labels[i];
        for (std::size_t j = 0; j < k; ++j) {
            Vector a, b;
            for (const auto& r : records) {
                const auto x = getters[i](r), y = getters[j](r);
                if (x && y) {
                    a.push_back(*x);
                    b.push_back(*y);
                }
            }
            std::optional<double> v;
            if (a.size() >= 2) {
                try {
                    v = pearson(a, b);
                } catch (const NumericError&) {
                    v.reset();
                }
            }
            os << ',' << (v ? detail::format_fixed(*v, 6) : std::string("NA"));
        }
        os << '\n';
    }
}

inline int cmd_eda(const EdaOptions& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o.common);
    if (o.out.empty()) throw UsageError("--out is required");
    if (o.bins < 1) throw UsageError("--bins must be at least 1");
    const auto cohort = read_cohort(o.input, cfg, err);
    if (cohort.records.empty()) throw DataError("empty cohort: no valid rows in " + o.input);

    const fs::path dir(o.out);
    fs::create_directories(dir);
    const std::string stem = fs::path(o.input).stem().string();

    std::vector<Histogram> hists;
    auto add_hist = [&](const std::string& name, auto&& get) {
        Vector values;
        for (const auto& r : cohort.records)
            if (const auto v = get(r)) values.push_back(*v);
        if (!values.empty()) hists.push_back(histogram(values, o.bins, name));
    };
    for (Feature f : kAllFeatures) add_hist(std::string(feature_name(f)), [f](const AssessmentRecord& r) { return r[f]; });
    add_hist("total", [](const AssessmentRecord& r) { return r.total; });

    const auto hist_path = dir / (stem + ".hist.csv");
    auto hf = open_out(hist_path);
    write_histograms(hf, hists);
    close_out(hf, hist_path);

    const auto corr_path = dir / (stem + ".corr.csv");
    auto cf = open_out(corr_path);
    write_cohort_correlation(cf, cohort.records);
    close_out(cf, corr_path);

    std::vector<GradientMap> maps;
    for (auto [fx, fy] : {std::pair{Feature::t1, Feature::t2}, std::pair{Feature::mte, Feature::ete}}) {
        try {
            maps.push_back(gradient_map(cohort.records, fx, fy, std::max<std::size_t>(o.bins, 2)));
        } catch (const DataError& e) {
            err << "skipping gradient map " << feature_name(fx) << " x " << feature_name(fy) << ": " << e.what() << '\n';
        }
    }
    const auto gmap_path = dir / (stem + ".gmap.csv");
    auto gf = open_out(gmap_path);
    write_gradient_maps(gf, maps);
    close_out(gf, gmap_path);

    out << "records: " << cohort.records.size() << " (rejected " << cohort.rejections.size() << ")\n";
    for (Feature f : kAllFeatures) {
        Vector a, b;
        for (const auto& r : cohort.records)
            if (r[f] && r.total) {
                a.push_back(*r[f]);
                b.push_back(*r.total);
            }
        out << "corr(" << feature_name(f) << ",total) = ";
        try {
            out << (a.size() >= 2 ? fmt(pearson(a, b)) : std::string("NA"));
        } catch (const NumericError&) {
            out << "NA";
        }
        out << '\n';
    }
    for (const auto& p : {hist_path, corr_path, gmap_path}) out << "wrote " << p.string() << '\n';
    for (const auto& g : maps) {
        out << "gradient trend " << g.x_feature << " x " << g.y_feature << " = ";
        try {
            out << fmt(gradient_map_trend(g)) << '\n';
        } catch (const NumericError&) {
            out << "NA\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------- train

struct ModelOptions {
    CommonOptions common;
    std::string input;
    std::string out;
    std::string view;
    std::string pipeline;
    bool all_pipelines = false;
    std::uint64_t seed = 0;
    std::string checkpoint;
};

inline ViewKind view_or(const std::string& name, ViewKind fallback)
{
    if (name.empty()) return fallback;
    const auto v = parse_view(name);
    if (!v) throw UsageError("unknown view '" + name + "' (expected d1, d2-mte or d2-ete)");
    return *v;
}

inline std::string join_features(const std::vector<Feature>& features)
{
    std::string s;
    for (std::size_t i = 0; i < features.size(); ++i) s += (i ? "," : "") + std::string(feature_name(features[i]));
    return s;
}

inline int cmd_train(const ModelOptions& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o.common);
    if (o.pipeline.empty()) throw UsageError("--pipeline is required");
    if (o.out.empty()) throw UsageError("--out is required");
    const auto spec = parse_pipeline(o.pipeline);
    const auto vk = view_or(o.view, ViewKind::d1);
    const auto pcfg = pipeline_config_from_config(cfg);
    const auto cohort = read_cohort(o.input, cfg, err);
    const auto view = build_view(cohort.records, vk);
    if (view.excluded) err << "excluded " << view.excluded << " rows with missing " << view.name << " features or total\n";

    const auto fitted = fit_pipeline(spec, view.matrix, view.targets, pcfg, o.seed);
    const auto train_metrics = compute_metrics(view.targets, fitted.predict(view.matrix));

    const fs::path ckpt(o.out);
    auto file = open_out(ckpt);
    CheckpointWriter w(file);
    w.kv("view", view.name);
    fitted.save(w);
    w.finish();
    close_out(file, ckpt);

    const fs::path manifest(o.out + ".manifest");
    auto mf = open_out(manifest);
    mf << "pipeline=" << spec.name() << '\n'
       << "view=" << view.name << '\n'
       << "features=" << join_features(view.features) << '\n'
       << "n_train=" << view.n_samples() << '\n'
       << "excluded=" << view.excluded << '\n'
       << "seed=" << o.seed << '\n'
       << "train_r2=" << (train_metrics.r2 ? detail::format_fixed(*train_metrics.r2, 6) : std::string("NA")) << '\n'
       << "train_rmse=" << detail::format_fixed(train_metrics.rmse, 6) << '\n'
       << "checkpoint=" << ckpt.filename().string() << '\n';
    close_out(mf, manifest);

    out << "trained " << spec.name() << " on " << view.name << " (" << view.n_samples() << " rows)";
    if (train_metrics.r2) out << ", training R2 = " << fmt(*train_metrics.r2);
    out << "\nwrote " << ckpt.string() << " and " << manifest.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------- evaluate

inline int cmd_evaluate(const ModelOptions& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o.common);
    if (o.out.empty()) throw UsageError("--out is required");
    if (!o.pipeline.empty() && o.all_pipelines) throw UsageError("--pipeline and --all-pipelines are mutually exclusive");
    std::vector<PipelineSpec> pipelines;
    if (!o.pipeline.empty()) pipelines.push_back(parse_pipeline(o.pipeline));
    std::vector<ViewKind> views;
    if (o.view.empty())
        views.assign(kAllViews.begin(), kAllViews.end());
    else
        views.push_back(view_or(o.view, ViewKind::d1));

    ExperimentConfig ecfg;
    ecfg.pipeline = pipeline_config_from_config(cfg);
    ecfg.cv = cv_config_from_config(cfg, o.seed);
    const auto cohort = read_cohort(o.input, cfg, err);

    const auto cells = run_experiment_matrix(cohort.records, views, pipelines, ecfg, [&](const ExperimentCell& c) {
        err << "  " << c.view << " " << c.pipeline << ": "
            << (c.report ? "r2 = " + fmt(c.report->r2.mean) : "FAILED (" + c.error + ")") << '\n';
    });

    const fs::path path(o.out);
    auto file = open_out(path);
    write_results_csv(file, cells);
    close_out(file, path);
    write_results_text(out, cells);
    out << "\nwrote " << path.string() << '\n';

    const bool any_ok = std::any_of(cells.begin(), cells.end(), [](const ExperimentCell& c) { return c.report.has_value(); });
    if (!any_ok) throw NumericError("every pipeline failed");
    return 0;
}

// ---------------------------------------------------------------- predict

inline int cmd_predict(const ModelOptions& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o.common);
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (o.out.empty()) throw UsageError("--out is required");
    std::ifstream in(o.checkpoint, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + o.checkpoint);
    CheckpointReader r(in);
    const auto trained_view = view_or(r.kv("view"), ViewKind::d1);
    const auto fitted = FittedPipeline::load(r);
    r.finish();

    const auto vk = view_or(o.view, trained_view);
    const auto cohort = read_cohort(o.input, cfg, err);
    const auto view = build_view(cohort.records, vk, false);
    if (view.n_features() != fitted.n_features())
        throw UsageError("checkpoint/view mismatch: expected " + std::to_string(fitted.n_features()) + " features, got " +
                         std::to_string(view.n_features()));
    if (view.excluded) err << "excluded " << view.excluded << " rows with missing " << view.name << " features\n";
    const auto pred = fitted.predict(view.matrix);

    const fs::path path(o.out);
    auto file = open_out(path);
    file << "student_id,predicted_total\n";
    for (std::size_t i = 0; i < pred.size(); ++i) file << view.row_ids[i] << ',' << detail::format_fixed(pred[i], 6) << '\n';
    close_out(file, path);
    out << "predicted " << pred.size() << " students with " << fitted.spec().name() << "; wrote " << path.string() << '\n';
    return 0;
}

} // namespace cli_detail

// Runs the command line; all output goes to `out` / `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    using namespace cli_detail;
    CLI::App app{"scorecast: student score forecasting from partial assessments"};
    app.require_subcommand(1);

    SynthOptions synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic cohort CSV");
    s->add_option("--n", synth.n, "Number of students");
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--out", synth.out, "Output CSV")->required();
    s->add_option("--corr", synth.corr, "Target correlation with the total, feature=value; repeatable");
    add_common(s, synth.common);

    EdaOptions eda;
    auto* e = app.add_subcommand("eda", "Histograms, correlations and gradient maps");
    e->add_option("--input", eda.input, "Cohort CSV")->required();
    e->add_option("--out", eda.out, "Output directory")->required();
    e->add_option("--bins", eda.bins, "Bins per axis");
    add_common(e, eda.common);

    ModelOptions train, eval, pred;
    auto add_model = [&](CLI::App* cmd, ModelOptions& o) {
        cmd->add_option("--input", o.input, "Cohort CSV")->required();
        cmd->add_option("--out", o.out, "Output path")->required();
        cmd->add_option("--view", o.view, "d1 | d2-mte | d2-ete");
        cmd->add_option("--seed", o.seed, "Random seed");
        add_common(cmd, o.common);
    };
    auto* t = app.add_subcommand("train", "Fit one pipeline and write a checkpoint");
    add_model(t, train);
    t->add_option("--pipeline", train.pipeline, "e.g. vae+et, rf, lstm")->required();

    auto* v = app.add_subcommand("evaluate", "Shuffle-split cross-validation over views x pipelines");
    add_model(v, eval);
    v->add_option("--pipeline", eval.pipeline, "Evaluate a single pipeline");
    v->add_flag("--all-pipelines", eval.all_pipelines, "Evaluate the view's full pipeline set (default)");

    auto* p = app.add_subcommand("predict", "Predict totals from a checkpoint");
    add_model(p, pred);
    p->add_option("--checkpoint", pred.checkpoint, "Checkpoint written by train")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        return static_cast<int>(ErrorKind::usage);
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (e->parsed()) return cmd_eda(eda, out, err);
        if (t->parsed()) return cmd_train(train, out, err);
        if (v->parsed()) return cmd_evaluate(eval, out, err);
        if (p->parsed()) return cmd_predict(pred, out, err);
    } catch (const Error& ex) {
        err << "error: " << ex.what() << '\n';
        return static_cast<int>(ex.kind());
    } catch (const std::filesystem::filesystem_error& ex) {
        err << "error: " << ex.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return static_cast<int>(ErrorKind::data);
    }
    return static_cast<int>(ErrorKind::usage);
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    std::vector<const char*> argv{"scorecast"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace scorecast
