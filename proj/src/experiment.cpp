#include "tleap/experiment.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "tleap/datapipe.hpp"
#include "tleap/eval.hpp"
#include "tleap/occlude.hpp"
#include "tleap/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tleap::experiment {

std::string ExperimentConfig::to_json() const {
    json seeds_j = json::array();
    for (uint64_t s : seeds) seeds_j.push_back(s);
    json tw = json::array();
    for (int t : temporal_windows) tw.push_back(t);
    return json{{"experiment", experiment},
                {"cows", cows},
                {"frames_per_cow", frames_per_cow},
                {"epochs", epochs},
                {"seeds", seeds_j},
                {"base_channels", base_channels},
                {"temporal_windows", tw},
                {"data_seed", data_seed},
                {"jobs", jobs},
                {"out_dir", out_dir},
                {"workspace", workspace}}
        .dump(1);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c;
    c.experiment = j.value("experiment", "");
    c.cows = j.value("cows", c.cows);
    c.frames_per_cow = j.value("frames_per_cow", c.frames_per_cow);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("seeds")) {
        c.seeds.clear();
        for (const json& s : j["seeds"]) c.seeds.push_back(s.get<uint64_t>());
    }
    c.base_channels = j.value("base_channels", c.base_channels);
    if (j.contains("temporal_windows")) {
        c.temporal_windows.clear();
        for (const json& t : j["temporal_windows"])
            c.temporal_windows.push_back(t.get<int>());
    }
    c.data_seed = j.value("data_seed", c.data_seed);
    c.jobs = j.value("jobs", c.jobs);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.workspace = j.value("workspace", c.workspace);
    return c;
}

nn::ModelConfig make_model(int seq_len, bool deeper, int base_channels) {
    nn::ModelConfig m;
    m.mode = seq_len > 1 ? nn::Mode::Temporal : nn::Mode::Static;
    m.depth = deeper ? nn::Depth::Deeper : nn::Depth::Original;
    m.seq_len = seq_len;
    m.base_channels = base_channels;
    m.validate();
    return m;
}

namespace {

std::string model_tag(const nn::ModelConfig& m) {
    std::string tag = m.mode == nn::Mode::Static ? "leap_t1" : ("tleap_t" + std::to_string(m.seq_len));
    tag += m.depth == nn::Depth::Deeper ? "_deeper" : "_orig";
    tag += "_b" + std::to_string(m.base_channels);
    return tag;
}

bool file_exists(const std::string& p) { return fs::exists(p); }

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

/// A finished run is a final checkpoint that loads against the job's
/// model config with the same train config on disk.
bool run_is_complete(const Workspace::TrainJob& job) {
    const std::string ckpt = job.run_dir + "/final.ckpt";
    if (!file_exists(ckpt)) return false;
    try {
        nn::ModelConfig stored = nn::peek_checkpoint_config(ckpt);
        if (stored.hash() != job.model.hash()) return false;
        const std::string tc = read_file(job.run_dir + "/train_config.json");
        return json::parse(tc) == json::parse(job.config.to_json());
    } catch (const std::exception&) {
        return false;
    }
}

void run_job_in_process(const Workspace::TrainJob& job) {
    nn::Network<float> net(job.model, nn::build(job.model));
    net.init_weights(job.config.seed);
    DatasetManifest manifest = load_manifest(job.train_manifest);
    train::fit(net, manifest, job.config, job.run_dir);
}

/// Subprocess worker pool: spawns `tleap train` per job with
/// single-threaded BLAS so workers scale across cores.
void run_jobs_subprocess(const std::vector<Workspace::TrainJob>& jobs,
                         const std::string& bin, int max_workers) {
    struct Active {
        pid_t pid;
        std::string tag;
    };
    std::vector<Active> active;
    auto reap_one = [&]() {
        int status = 0;
        const pid_t pid = waitpid(-1, &status, 0);
        auto it = std::find_if(active.begin(), active.end(),
                               [&](const Active& a) { return a.pid == pid; });
        std::string tag = it != active.end() ? it->tag : "?";
        if (it != active.end()) active.erase(it);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            throw std::runtime_error("training worker failed: " + tag);
    };

    for (const auto& job : jobs) {
        while (int(active.size()) >= max_workers) reap_one();
        fs::create_directories(job.run_dir);
        const std::string model_path = job.run_dir + "/requested_model.json";
        const std::string train_path = job.run_dir + "/requested_train.json";
        std::ofstream(model_path) << job.model.canonical_json() << "\n";
        std::ofstream(train_path) << job.config.to_json() << "\n";

        const pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
            setenv("OPENBLAS_NUM_THREADS", "1", 1);
            std::vector<std::string> args = {bin,           "train",
                                             "--model-config", model_path,
                                             "--config",    train_path,
                                             "--data",      job.train_manifest,
                                             "--out",       job.run_dir};
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            argv.push_back(nullptr);
            execv(bin.c_str(), argv.data());
            std::perror("execv");
            _exit(127);
        }
        active.push_back({pid, job.tag});
        std::cout << "[experiment] started " << job.tag << " (pid " << pid << ")\n";
    }
    while (!active.empty()) reap_one();
}

}  // namespace

Workspace::Workspace(const ExperimentConfig& config) : cfg_(config) {
    root_ = cfg_.workspace.empty() ? cfg_.out_dir + "/workspace" : cfg_.workspace;
    fs::create_directories(root_);
}

std::string Workspace::prepared_manifest() {
    const std::string raw_dir = root_ + "/data/raw";
    const std::string prep_dir = root_ + "/data/prepared";
    const std::string stamp_path = root_ + "/data/stamp.json";
    const json stamp{{"cows", cfg_.cows},
                     {"frames_per_cow", cfg_.frames_per_cow},
                     {"data_seed", cfg_.data_seed}};

    if (file_exists(stamp_path) && file_exists(prep_dir + "/manifest.json")) {
        if (json::parse(read_file(stamp_path)) == stamp)
            return prep_dir + "/manifest.json";
    }
    std::cout << "[experiment] generating synthetic herd (" << cfg_.cows << " cows x "
              << cfg_.frames_per_cow << " frames)\n";
    fs::remove_all(raw_dir);
    fs::remove_all(prep_dir);
    const std::string raw_manifest =
        synth::generate_dataset(cfg_.cows, cfg_.frames_per_cow, cfg_.data_seed, raw_dir);
    std::cout << "[experiment] preparing (crop + resize)\n";
    const std::string prep = datapipe::prepare_dataset(raw_manifest, 100, 200, prep_dir);
    fs::create_directories(fs::path(stamp_path).parent_path());
    std::ofstream(stamp_path) << stamp.dump(1) << "\n";
    return prep;
}

SplitPaths Workspace::split(const std::string& scheme, uint64_t seed,
                            const std::vector<std::string>& train_pool) {
    std::string tag = "split_" + scheme + "_seed" + std::to_string(seed);
    if (!train_pool.empty()) tag += "_pool" + std::to_string(train_pool.size());
    const std::string dir = root_ + "/data/" + tag;
    SplitPaths paths;
    paths.train = dir + "/train.json";
    paths.test_known = dir + "/test_known.json";
    paths.test_unknown = dir + "/test_unknown.json";
    if (file_exists(paths.train)) return paths;

    const DatasetManifest prepared = load_manifest(prepared_manifest());
    datapipe::SplitSpec spec;
    spec.scheme = datapipe::split_scheme_from_string(scheme);
    spec.seed = seed;
    spec.train_cow_pool = train_pool;
    datapipe::SplitResult result = datapipe::split(prepared, spec);
    fs::create_directories(dir);
    save_manifest(result.train, paths.train);
    save_manifest(result.test_known, paths.test_known);
    if (result.test_unknown) save_manifest(*result.test_unknown, paths.test_unknown);
    std::ofstream(dir + "/split.json") << result.audit_json << "\n";
    return paths;
}

std::string Workspace::occluded_variant(const std::string& test_manifest,
                                        const std::string& variant_tag,
                                        const std::vector<std::string>& regions) {
    const std::string dir =
        fs::path(test_manifest).parent_path().string() + "/occl_" + variant_tag;
    const std::string manifest_path = dir + "/manifest.json";
    if (file_exists(manifest_path)) return manifest_path;
    const DatasetManifest m = load_manifest(test_manifest);
    std::vector<occlude::Region> rs;
    for (const std::string& r : regions) rs.push_back(occlude::region_from_string(r));
    const occlude::OcclusionLayout layout = occlude::compute_layout(m, rs);
    return occlude::apply_to_dataset(m, layout, dir);
}

std::vector<std::string> Workspace::dark_family_cows() const {
    std::vector<std::string> out;
    for (const synth::CowSpec& c : synth::generate_herd(cfg_.cows, cfg_.data_seed))
        if (c.family == synth::CoatFamily::DarkDominant) out.push_back(c.cow_id);
    return out;
}

Workspace::TrainJob Workspace::make_job(const nn::ModelConfig& model, uint64_t seed,
                                        const std::string& split_tag,
                                        const std::string& manifest) {
    TrainJob job;
    job.model = model;
    job.config.epochs = cfg_.epochs;
    job.config.seed = seed;
    job.train_manifest = manifest;
    job.tag = model_tag(model) + "_" + split_tag + "_seed" + std::to_string(seed);
    job.run_dir = root_ + "/runs/" + job.tag;
    return job;
}

void Workspace::run_jobs(std::vector<TrainJob> jobs) {
    std::vector<TrainJob> pending;
    for (auto& job : jobs) {
        if (run_is_complete(job)) {
            std::cout << "[experiment] reusing finished run " << job.tag << "\n";
        } else {
            pending.push_back(job);
        }
    }
    if (pending.empty()) return;
    if (cfg_.jobs > 1 && !cfg_.tleap_bin.empty()) {
        run_jobs_subprocess(pending, cfg_.tleap_bin, cfg_.jobs);
    } else {
        for (const auto& job : pending) {
            std::cout << "[experiment] training " << job.tag << "\n";
            run_job_in_process(job);
        }
    }
    for (const auto& job : pending)
        if (!run_is_complete(job))
            throw std::runtime_error("training run did not produce a checkpoint: " +
                                     job.tag);
}

namespace {

struct ConditionSpec {
    std::string name;
    std::vector<std::string> regions;  // empty = unaltered test set
};

const std::vector<ConditionSpec>& occlusion_conditions() {
    static const std::vector<ConditionSpec> conditions = {
        {"none", {}},
        {"hind", {"hind"}},
        {"fore", {"fore"}},
        {"fore_hind", {"fore", "hind"}},
        {"fore_hind_head", {"fore", "hind", "head"}},
    };
    return conditions;
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream(path) << text;
}

/// results.csv rows: model, condition, seed (or "mean"), pckh02.
void write_results_csv(const std::string& path, const json& table) {
    std::string csv = "model,condition,seed,pckh02\n";
    for (const auto& [model, conditions] : table.items())
        for (const auto& [cond, entry] : conditions.items()) {
            for (const auto& [seed, value] : entry.at("per_seed").items())
                csv += model + "," + cond + "," + seed + "," +
                       std::to_string(value.get<double>()) + "\n";
            csv += model + "," + cond + ",mean," +
                   std::to_string(entry.at("mean").get<double>()) + "\n";
        }
    write_text(path, csv);
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

}  // namespace

void experiment_occlusion(const ExperimentConfig& config) {
    Workspace ws(config);
    const std::string prep = ws.prepared_manifest();

    // one split + one model set per seed
    std::vector<Workspace::TrainJob> jobs;
    std::vector<nn::ModelConfig> models;
    for (int t : config.temporal_windows)
        models.push_back(make_model(t, true, config.base_channels));
    for (uint64_t seed : config.seeds) {
        SplitPaths split = ws.split("cowalk30", seed);
        for (const auto& model : models)
            jobs.push_back(ws.make_job(model, seed, "cowalk30", split.train));
    }
    ws.run_jobs(jobs);

    // evaluate every model on every occlusion condition of its seed's test set
    json table = json::object();
    json pvalues = json::object();
    for (const auto& model : models) table[model_tag(model)] = json::object();

    for (const ConditionSpec& cond : occlusion_conditions()) {
        // per-model per-seed scores and per-sample detail for pairing
        std::map<std::string, std::vector<double>> scores;
        std::map<std::string, std::map<uint64_t, std::vector<double>>> sample_scores;
        for (uint64_t seed : config.seeds) {
            SplitPaths split = ws.split("cowalk30", seed);
            const std::string manifest_path =
                cond.regions.empty()
                    ? split.test_known
                    : ws.occluded_variant(split.test_known, cond.name, cond.regions);
            const DatasetManifest manifest = load_manifest(manifest_path);
            for (const auto& model : models) {
                const std::string tag = model_tag(model);
                const std::string run_tag =
                    tag + "_cowalk30_seed" + std::to_string(seed);
                eval::EvalResult r = eval::evaluate_model(
                    ws.root() + "/runs/" + run_tag + "/final.ckpt", manifest);
                scores[tag].push_back(r.reports.at(0.2).overall);
                sample_scores[tag][seed] = r.details.at(0.2).per_sample_scores();
                eval::write_report(r, config.out_dir + "/reports/" + run_tag + "_" +
                                          cond.name + ".json");
            }
        }
        for (const auto& model : models) {
            const std::string tag = model_tag(model);
            json per_seed = json::object();
            for (size_t i = 0; i < config.seeds.size(); ++i)
                per_seed[std::to_string(config.seeds[i])] = scores[tag][i];
            table[tag][cond.name] = {{"per_seed", per_seed},
                                     {"mean", mean_of(scores[tag])}};
        }
        // pairwise Wilcoxon on per-sample mean correctness, pooled over seeds
        json cond_p = json::object();
        for (size_t a = 0; a < models.size(); ++a)
            for (size_t b = a + 1; b < models.size(); ++b) {
                const std::string ta = model_tag(models[a]);
                const std::string tb = model_tag(models[b]);
                std::vector<double> va, vb;
                for (uint64_t seed : config.seeds) {
                    const auto& sa = sample_scores[ta][seed];
                    const auto& sb = sample_scores[tb][seed];
                    va.insert(va.end(), sa.begin(), sa.end());
                    vb.insert(vb.end(), sb.begin(), sb.end());
                }
                json entry;
                try {
                    eval::WilcoxonResult w = eval::wilcoxon_signed_rank(va, vb);
                    entry = {{"p", w.p_value},
                             {"n", w.n_effective},
                             {"undefined", w.undefined},
                             {"significant_at_05", w.significant_at_05()}};
                } catch (const std::exception& e) {
                    entry = {{"error", e.what()}};
                }
                cond_p[ta + "_vs_" + tb] = entry;
            }
        pvalues[cond.name] = cond_p;
    }

    json doc{{"experiment", "occlusion"},
             {"config", json::parse(config.to_json())},
             {"pckh02", table},
             {"wilcoxon", pvalues}};
    write_text(config.out_dir + "/results.json", doc.dump(1) + "\n");
    write_results_csv(config.out_dir + "/results.csv", table);
    write_text(config.out_dir + "/resolved_config.json", config.to_json() + "\n");
    std::cout << "[experiment] occlusion done -> " << config.out_dir << "\n";
}

void experiment_generalization(const ExperimentConfig& config) {
    Workspace ws(config);
    ws.prepared_manifest();
    const nn::ModelConfig model = make_model(2, true, config.base_channels);
    // The training-cow draw is restricted to the dark-dominant family so
    // the unknown set holds out the light-dominant coat family entirely.
    const std::vector<std::string> pool = ws.dark_family_cows();

    std::vector<Workspace::TrainJob> jobs;
    for (uint64_t seed : config.seeds) {
        SplitPaths split = ws.split("cowalk10", seed, pool);
        jobs.push_back(ws.make_job(model, seed, "cowalk10", split.train));
    }
    ws.run_jobs(jobs);

    json table = json::object();
    const std::vector<std::string> sets = {"known", "unknown"};
    std::map<std::string, std::vector<double>> overall;
    std::map<std::string, std::map<std::string, std::vector<double>>> groups;
    for (uint64_t seed : config.seeds) {
        SplitPaths split = ws.split("cowalk10", seed, pool);
        const std::string run_tag =
            model_tag(model) + "_cowalk10_seed" + std::to_string(seed);
        const std::string ckpt = ws.root() + "/runs/" + run_tag + "/final.ckpt";
        for (const std::string& set : sets) {
            const std::string manifest_path =
                set == "known" ? split.test_known : split.test_unknown;
            eval::EvalResult r =
                eval::evaluate_model(ckpt, load_manifest(manifest_path));
            overall[set].push_back(r.reports.at(0.2).overall);
            for (const auto& [g, v] : r.reports.at(0.2).per_group)
                groups[set][g].push_back(v);
            eval::write_report(r, config.out_dir + "/reports/" + run_tag + "_" + set +
                                      ".json");
        }
    }
    for (const std::string& set : sets) {
        json per_seed = json::object();
        for (size_t i = 0; i < config.seeds.size(); ++i)
            per_seed[std::to_string(config.seeds[i])] = overall[set][i];
        json group_means = json::object();
        for (const auto& [g, v] : groups[set]) group_means[g] = mean_of(v);
        table[set] = {{"per_seed", per_seed},
                      {"mean", mean_of(overall[set])},
                      {"per_group_mean", group_means}};
    }
    const double gap = mean_of(overall["known"]) - mean_of(overall["unknown"]);
    json doc{{"experiment", "generalization"},
             {"config", json::parse(config.to_json())},
             {"pckh02", table},
             {"generalization_gap", gap}};
    write_text(config.out_dir + "/results.json", doc.dump(1) + "\n");
    write_text(config.out_dir + "/resolved_config.json", config.to_json() + "\n");
    std::cout << "[experiment] generalization done -> " << config.out_dir
              << " (gap " << gap << ")\n";
}

void experiment_depth(const ExperimentConfig& config) {
    Workspace ws(config);
    ws.prepared_manifest();
    const std::vector<std::string> pool = ws.dark_family_cows();
    const nn::ModelConfig deeper = make_model(2, true, config.base_channels);
    const nn::ModelConfig original = make_model(2, false, config.base_channels);
    const std::vector<nn::ModelConfig> models = {original, deeper};

    std::vector<Workspace::TrainJob> jobs;
    for (uint64_t seed : config.seeds) {
        SplitPaths s30 = ws.split("cowalk30", seed);
        SplitPaths s10 = ws.split("cowalk10", seed, pool);
        for (const auto& m : models) {
            jobs.push_back(ws.make_job(m, seed, "cowalk30", s30.train));
            jobs.push_back(ws.make_job(m, seed, "cowalk10", s10.train));
        }
    }
    ws.run_jobs(jobs);

    struct Condition {
        std::string name;
        std::string split_tag;
        std::string set;      // test_known / test_unknown
        bool occlude3 = false;
    };
    const std::vector<Condition> conditions = {
        {"cowalk30_none", "cowalk30", "test_known", false},
        {"cowalk30_occl3", "cowalk30", "test_known", true},
        {"cowalk10_known", "cowalk10", "test_known", false},
        {"cowalk10_unknown", "cowalk10", "test_unknown", false},
    };

    json table = json::object();
    json pvalues = json::object();
    for (const auto& m : models) table[model_tag(m)] = json::object();
    for (const Condition& cond : conditions) {
        std::map<std::string, std::vector<double>> scores;
        std::map<std::string, std::vector<double>> pooled_samples;
        for (uint64_t seed : config.seeds) {
            SplitPaths split = cond.split_tag == "cowalk30"
                                   ? ws.split("cowalk30", seed)
                                   : ws.split("cowalk10", seed, pool);
            std::string manifest_path =
                cond.set == "test_known" ? split.test_known : split.test_unknown;
            if (cond.occlude3)
                manifest_path = ws.occluded_variant(manifest_path, "fore_hind_head",
                                                    {"fore", "hind", "head"});
            const DatasetManifest manifest = load_manifest(manifest_path);
            for (const auto& m : models) {
                const std::string tag = model_tag(m);
                const std::string run_tag =
                    tag + "_" + cond.split_tag + "_seed" + std::to_string(seed);
                eval::EvalResult r = eval::evaluate_model(
                    ws.root() + "/runs/" + run_tag + "/final.ckpt", manifest);
                scores[tag].push_back(r.reports.at(0.2).overall);
                const auto ss = r.details.at(0.2).per_sample_scores();
                pooled_samples[tag].insert(pooled_samples[tag].end(), ss.begin(),
                                           ss.end());
                eval::write_report(r, config.out_dir + "/reports/" + run_tag + "_" +
                                          cond.name + ".json");
            }
        }
        for (const auto& m : models) {
            const std::string tag = model_tag(m);
            json per_seed = json::object();
            for (size_t i = 0; i < config.seeds.size(); ++i)
                per_seed[std::to_string(config.seeds[i])] = scores[tag][i];
            table[tag][cond.name] = {{"per_seed", per_seed},
                                     {"mean", mean_of(scores[tag])}};
        }
        json entry;
        try {
            eval::WilcoxonResult w = eval::wilcoxon_signed_rank(
                pooled_samples[model_tag(deeper)], pooled_samples[model_tag(original)]);
            entry = {{"p", w.p_value},
                     {"n", w.n_effective},
                     {"undefined", w.undefined},
                     {"significant_at_05", w.significant_at_05()}};
        } catch (const std::exception& e) {
            entry = {{"error", e.what()}};
        }
        pvalues[cond.name] = entry;
    }

    json doc{{"experiment", "depth"},
             {"config", json::parse(config.to_json())},
             {"pckh02", table},
             {"wilcoxon_deeper_vs_original", pvalues}};
    write_text(config.out_dir + "/results.json", doc.dump(1) + "\n");
    write_results_csv(config.out_dir + "/results.csv", table);
    write_text(config.out_dir + "/resolved_config.json", config.to_json() + "\n");
    std::cout << "[experiment] depth done -> " << config.out_dir << "\n";
}

void run_experiment(const ExperimentConfig& config) {
    if (config.out_dir.empty())
        throw std::invalid_argument("experiment: out_dir is required");
    if (config.experiment == "occlusion")
        experiment_occlusion(config);
    else if (config.experiment == "generalization")
        experiment_generalization(config);
    else if (config.experiment == "depth")
        experiment_depth(config);
    else
        throw std::invalid_argument("unknown experiment: " + config.experiment);
}

}  // namespace tleap::experiment
