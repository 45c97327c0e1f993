#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tleap/chart.hpp"
#include "tleap/datapipe.hpp"
#include "tleap/eval.hpp"
#include "tleap/experiment.hpp"
#include "tleap/net.hpp"
#include "tleap/occlude.hpp"
#include "tleap/synth.hpp"
#include "tleap/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void cmd_report(const std::string& experiment_dir, const std::string& out_dir) {
    const json doc = json::parse(read_file(experiment_dir + "/results.json"));
    fs::create_directories(out_dir);
    const std::string kind = doc.at("experiment").get<std::string>();

    tleap::chart::BarChart chart;
    chart.title = "PCKH@0.2 " + kind;
    if (kind == "generalization") {
        const json& table = doc.at("pckh02");
        chart.conditions = {"overall", "head", "spine", "carpal_tarsal", "fetlock", "hoof"};
        for (const std::string set : {"known", "unknown"}) {
            chart.series.push_back(set);
            std::vector<double> vals;
            vals.push_back(table.at(set).at("mean").get<double>());
            for (size_t c = 1; c < chart.conditions.size(); ++c)
                vals.push_back(table.at(set)
                                   .at("per_group_mean")
                                   .at(chart.conditions[c])
                                   .get<double>());
            chart.values.push_back(vals);
        }
    } else {
        const json& table = doc.at("pckh02");
        for (const auto& [model, conds] : table.items()) {
            chart.series.push_back(model);
            if (chart.conditions.empty())
                for (const auto& [cond, _] : conds.items())
                    chart.conditions.push_back(cond);
            std::vector<double> vals;
            for (const std::string& cond : chart.conditions)
                vals.push_back(conds.at(cond).at("mean").get<double>());
            chart.values.push_back(vals);
        }
    }
    const std::string path = out_dir + "/" + kind + "_pckh02.png";
    tleap::chart::render_bar_chart_png(chart, path);
    std::cout << "wrote " << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LEAP/T-LEAP keypoint estimation toolkit for walking-cow video"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "synthetic data generation");
    synth_cmd->require_subcommand(1);
    auto* synth_gen = synth_cmd->add_subcommand("generate", "render a labeled herd");
    int sg_cows = 30, sg_frames = 140;
    uint64_t sg_seed = 1;
    std::string sg_out;
    synth_gen->add_option("--cows", sg_cows, "number of cows");
    synth_gen->add_option("--frames-per-cow", sg_frames, "frames per video");
    synth_gen->add_option("--seed", sg_seed, "herd seed");
    synth_gen->add_option("--out", sg_out, "output directory")->required();
    synth_gen->callback([&]() {
        const std::string m =
            tleap::synth::generate_dataset(sg_cows, sg_frames, sg_seed, sg_out);
        std::cout << "wrote " << m << "\n";
    });

    // ---- data prepare / split ----
    auto* data_cmd = app.add_subcommand("data", "dataset preparation and splits");
    data_cmd->require_subcommand(1);
    auto* prep = data_cmd->add_subcommand("prepare", "crop and resize a dataset");
    std::string dp_manifest, dp_out;
    int dp_margin = 100, dp_size = 200;
    prep->add_option("--manifest", dp_manifest, "input manifest")->required();
    prep->add_option("--crop-margin", dp_margin, "margin on front and hind side");
    prep->add_option("--size", dp_size, "output image side");
    prep->add_option("--out", dp_out, "output directory")->required();
    prep->callback([&]() {
        const std::string m =
            tleap::datapipe::prepare_dataset(dp_manifest, dp_margin, dp_size, dp_out);
        std::cout << "wrote " << m << "\n";
    });

    auto* split_cmd = data_cmd->add_subcommand("split", "partition a dataset");
    std::string ds_manifest, ds_scheme = "cowalk30", ds_out, ds_pool;
    uint64_t ds_seed = 1;
    split_cmd->add_option("--manifest", ds_manifest, "input manifest")->required();
    split_cmd->add_option("--scheme", ds_scheme, "cowalk30 | cowalk10");
    split_cmd->add_option("--seed", ds_seed, "split seed");
    split_cmd->add_option("--train-cow-pool", ds_pool,
                          "comma-separated cow ids eligible for training (cowalk10)");
    split_cmd->add_option("--out", ds_out, "output directory")->required();
    split_cmd->callback([&]() {
        tleap::DatasetManifest m = tleap::load_manifest(ds_manifest);
        tleap::datapipe::SplitSpec spec;
        spec.scheme = tleap::datapipe::split_scheme_from_string(ds_scheme);
        spec.seed = ds_seed;
        spec.train_cow_pool = split_csv(ds_pool);
        tleap::datapipe::SplitResult r = tleap::datapipe::split(m, spec);
        fs::create_directories(ds_out);
        tleap::save_manifest(r.train, ds_out + "/train.json");
        tleap::save_manifest(r.test_known, ds_out + "/test_known.json");
        if (r.test_unknown)
            tleap::save_manifest(*r.test_unknown, ds_out + "/test_unknown.json");
        std::ofstream(ds_out + "/split.json") << r.audit_json << "\n";
        std::cout << "wrote " << ds_out << "\n";
    });

    // ---- occlude ----
    auto* occl = app.add_subcommand("occlude", "create an occluded test variant");
    std::string oc_regions = "hind,fore,head", oc_manifest, oc_out;
    occl->add_option("--regions", oc_regions, "comma list from hind,fore,head");
    occl->add_option("--manifest", oc_manifest, "test manifest")->required();
    occl->add_option("--out", oc_out, "output directory")->required();
    occl->callback([&]() {
        tleap::DatasetManifest m = tleap::load_manifest(oc_manifest);
        std::vector<tleap::occlude::Region> regions;
        for (const std::string& r : split_csv(oc_regions))
            regions.push_back(tleap::occlude::region_from_string(r));
        const auto layout = tleap::occlude::compute_layout(m, regions);
        const std::string out = tleap::occlude::apply_to_dataset(m, layout, oc_out);
        std::cout << "wrote " << out << "\n";
    });

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string tr_config, tr_model, tr_data, tr_out;
    train_cmd->add_option("--config", tr_config, "train config JSON")->required();
    train_cmd->add_option("--model-config", tr_model, "model config JSON")->required();
    train_cmd->add_option("--data", tr_data, "training manifest")->required();
    train_cmd->add_option("--out", tr_out, "run directory")->required();
    train_cmd->callback([&]() {
        const auto tc = tleap::train::TrainConfig::from_json_text(read_file(tr_config));
        const auto mc = tleap::nn::ModelConfig::from_json_text(read_file(tr_model));
        tleap::nn::Network<float> net(mc, tleap::nn::build(mc));
        net.init_weights(tc.seed);
        const tleap::DatasetManifest manifest = tleap::load_manifest(tr_data);
        const auto result = tleap::train::fit(net, manifest, tc, tr_out);
        std::cout << "final loss " << result.history.back().mean_loss
                  << ", train pckh@0.2 " << result.history.back().train_pckh02
                  << ", checkpoints in " << tr_out << "\n";
    });

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_thetas = "0.2,0.5", ev_out = "report.json";
    eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", ev_data, "test manifest")->required();
    eval_cmd->add_option("--theta", ev_thetas, "comma list of thresholds");
    eval_cmd->add_option("--out", ev_out, "report JSON path");
    eval_cmd->callback([&]() {
        std::vector<double> thetas;
        for (const std::string& t : split_csv(ev_thetas)) thetas.push_back(std::stod(t));
        const tleap::DatasetManifest m = tleap::load_manifest(ev_data);
        const auto result = tleap::eval::evaluate_model(ev_ckpt, m, thetas);
        tleap::eval::write_report(result, ev_out);
        for (const auto& [theta, report] : result.reports)
            std::cout << "PCKh@" << theta << " = " << report.overall << " ("
                      << report.n_instances << " instances, "
                      << report.n_skipped_samples << " skipped)\n";
    });

    // ---- experiment ----
    auto* exp_cmd = app.add_subcommand("experiment", "run a full experiment recipe");
    std::string ex_name, ex_out, ex_config, ex_workspace, ex_seeds, ex_windows;
    int ex_epochs = -1, ex_jobs = 0, ex_base = 0, ex_cows = 0, ex_frames = 0;
    exp_cmd->add_option("name", ex_name, "occlusion | generalization | depth")
        ->required();
    exp_cmd->add_option("--out", ex_out, "output directory")->required();
    exp_cmd->add_option("--config", ex_config, "experiment config JSON (optional)");
    exp_cmd->add_option("--workspace", ex_workspace, "shared data/run cache dir");
    exp_cmd->add_option("--seeds", ex_seeds, "comma list of seeds");
    exp_cmd->add_option("--epochs", ex_epochs, "training epochs");
    exp_cmd->add_option("--jobs", ex_jobs, "concurrent training workers");
    exp_cmd->add_option("--base-channels", ex_base, "model base channels");
    exp_cmd->add_option("--cows", ex_cows, "herd size");
    exp_cmd->add_option("--frames-per-cow", ex_frames, "frames per video");
    exp_cmd->add_option("--temporal-windows", ex_windows,
                        "comma list of T values (occlusion experiment)");
    exp_cmd->callback([&]() {
        tleap::experiment::ExperimentConfig cfg;
        if (!ex_config.empty())
            cfg = tleap::experiment::ExperimentConfig::from_json_text(
                read_file(ex_config));
        cfg.experiment = ex_name;
        cfg.out_dir = ex_out;
        if (!ex_workspace.empty()) cfg.workspace = ex_workspace;
        if (!ex_seeds.empty()) {
            cfg.seeds.clear();
            for (const std::string& s : split_csv(ex_seeds))
                cfg.seeds.push_back(std::stoull(s));
        }
        if (!ex_windows.empty()) {
            cfg.temporal_windows.clear();
            for (const std::string& s : split_csv(ex_windows))
                cfg.temporal_windows.push_back(std::stoi(s));
        }
        if (ex_epochs > 0) cfg.epochs = ex_epochs;
        if (ex_jobs > 0) cfg.jobs = ex_jobs;
        if (ex_base > 0) cfg.base_channels = ex_base;
        if (ex_cows > 0) cfg.cows = ex_cows;
        if (ex_frames > 0) cfg.frames_per_cow = ex_frames;
        cfg.tleap_bin = fs::canonical("/proc/self/exe").string();
        tleap::experiment::run_experiment(cfg);
    });

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "render result bar charts");
    std::string rp_dir, rp_out;
    report_cmd->add_option("--experiment", rp_dir, "experiment output directory")
        ->required();
    report_cmd->add_option("--out", rp_out, "figure output directory")->required();
    report_cmd->callback([&]() { cmd_report(rp_dir, rp_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
