#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pflow/checkpoint.hpp"
#include "pflow/frame_io.hpp"
#include "pflow/gradcheck.hpp"
#include "pflow/metrics.hpp"
#include "pflow/parallel.hpp"
#include "pflow/presets.hpp"
#include "pflow/refsim.hpp"
#include "pflow/simulator.hpp"
#include "pflow/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
    pflow::SimConfig sim;
    pflow::ModelConfig model;
    pflow::TrainConfig train;
    pflow::PbfConfig pbf;
};

pflow::Vec3 vec_from(const json& j) {
    return {j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()};
}

/// Training/simulation configuration file. Starts from the named preset
/// ("desk" or "paper"); any explicit field overrides it.
RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    rc.model.channels = 8;
    rc.train = pflow::TrainConfig::desk_scale();
    if (path.empty()) return rc;

    std::ifstream is(path);
    if (!is.good()) throw pflow::Error("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw pflow::Error("config: invalid JSON in " + path + ": " + e.what());
    }

    const std::string preset = j.value("preset", std::string("desk"));
    if (preset == "paper") {
        rc.train = pflow::TrainConfig::paper_scale();
        rc.model.channels = 32;
    } else if (preset != "desk") {
        throw pflow::Error("config: unknown preset '" + preset + "' (desk or paper)");
    }

    if (j.contains("h")) {
        rc.sim = pflow::SimConfig::with_radius(j.at("h").get<float>());
    }
    if (j.contains("dt")) rc.sim.dt = j.at("dt").get<float>();
    if (j.contains("gravity")) rc.sim.gravity = vec_from(j.at("gravity"));
    rc.model.support_radius = rc.sim.support_radius_R;
    if (j.contains("channels")) rc.model.channels = j.at("channels").get<int>();

    if (j.contains("iterations")) rc.train.total_iters = j.at("iterations").get<long>();
    if (j.contains("batch_size")) rc.train.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr0")) rc.train.lr0 = j.at("lr0").get<double>();
    if (j.contains("lr_gamma")) rc.train.lr_gamma = j.at("lr_gamma").get<double>();
    if (j.contains("halving_steps"))
        rc.train.halving_steps = j.at("halving_steps").get<std::vector<long>>();
    if (j.contains("gamma")) rc.train.gamma = j.at("gamma").get<double>();
    if (j.contains("neighbor_c")) rc.train.neighbor_c = j.at("neighbor_c").get<double>();
    if (j.contains("loss_epsilon")) rc.train.loss_epsilon = j.at("loss_epsilon").get<double>();
    if (j.contains("seed")) rc.train.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("log_every")) rc.train.log_every = j.at("log_every").get<int>();

    if (j.contains("pbf_iterations")) rc.pbf.iterations = j.at("pbf_iterations").get<int>();
    if (j.contains("pbf_cfm_epsilon")) rc.pbf.cfm_epsilon = j.at("pbf_cfm_epsilon").get<float>();
    if (j.contains("pbf_xsph")) rc.pbf.xsph = j.at("pbf_xsph").get<float>();
    return rc;
}

int cmd_gen_data(const std::string& preset_name, std::uint64_t seed, const std::string& out) {
    const pflow::SimConfig sim;
    const pflow::PbfConfig pbf;
    const auto preset = pflow::get_preset(preset_name);
    const auto scenes = pflow::dataset_scenes(preset, seed, sim);
    fs::create_directories(out);
    for (const auto& scene : scenes) {
        const auto seq = pflow::generate(scene, sim, pbf);
        const auto violations = pflow::validate(seq, sim);
        if (!violations.empty())
            throw pflow::Error("gen-data: generated scene " + scene.name +
                               " fails validation: " + violations[0].str());
        pflow::write_frames((fs::path(out) / (scene.name + ".flpf")).string(), seq);
        std::cerr << "wrote " << scene.name << ".flpf (" << seq.fluid_count() << " fluid, "
                  << seq.frames.size() << " frames)\n";
    }
    std::cout << "generated " << scenes.size() << " scene(s) in " << out << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out) {
    RunConfig rc = load_run_config(config_path);
    std::vector<pflow::FrameSequence> dataset;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.path().extension() == ".flpf") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) dataset.push_back(pflow::read_frames(f.string()));
    if (dataset.empty()) throw pflow::Error("train: no .flpf files in " + data_dir);

    const auto result = pflow::train(dataset, rc.sim, rc.model, rc.train);
    pflow::save_checkpoint(out, result.params, &result.opt, rc.train.total_iters);
    const std::string curve_path = out + ".loss.csv";
    std::ofstream cs(curve_path, std::ios::trunc);
    cs << pflow::loss_curve_csv(result.curve);
    std::cout << "trained " << rc.train.total_iters << " iterations on " << dataset.size()
              << " scene(s); checkpoint at " << out << ".json/.bin, curve at " << curve_path
              << "\n";
    return 0;
}

int cmd_simulate(const std::string& ckpt, const std::string& scene_path, int frames,
                 const std::string& out) {
    const auto loaded = pflow::load_checkpoint(ckpt);
    pflow::SimConfig sim =
        pflow::SimConfig::with_radius(loaded.params.config.support_radius / 4.5f);

    std::ifstream is(scene_path);
    if (!is.good()) throw pflow::Error("simulate: cannot open scene " + scene_path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto scene = pflow::scene_from_json(text, sim);
    sim.gravity = scene.gravity;

    pflow::SimState initial{pflow::build_initial_state(scene, sim), 0};
    const auto rolled = pflow::rollout(initial, loaded.params, sim, frames);

    // Frame 0 of the output is the initial state so predictions align with
    // generated ground truth.
    pflow::FrameSequence seq;
    seq.dt = sim.dt;
    seq.scene_id = scene.name;
    seq.solid_pos = initial.particles.solid_pos;
    seq.solid_normal = initial.particles.solid_normal;
    seq.frames.push_back({initial.particles.fluid_pos, initial.particles.fluid_vel});
    for (const auto& f : rolled.frames) seq.frames.push_back(f);
    pflow::write_frames(out, seq);
    std::cout << "simulated " << frames << " step(s) of " << seq.fluid_count()
              << " particles into " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& report_path, float h, std::uint64_t emd_seed) {
    const auto pred = pflow::read_frames(pred_path);
    const auto gt = pflow::read_frames(gt_path);
    const auto sim = pflow::SimConfig::with_radius(h);
    const auto report = pflow::eval_sequences(pred, gt, sim, emd_seed);

    fs::path rp(report_path);
    if (rp.extension() == ".csv" || rp.extension() == ".json") rp.replace_extension();
    {
        std::ofstream os(rp.string() + ".csv", std::ios::trunc);
        os << pflow::report_csv(report);
    }
    {
        std::ofstream os(rp.string() + ".json", std::ios::trunc);
        os << pflow::report_json(report) << "\n";
    }
    std::cout << "avg_pos_error_t1_mm " << report.avg_pos_error_t1_mm << "\n"
              << "avg_pos_error_t2_mm " << report.avg_pos_error_t2_mm << "\n"
              << "seq_distance_dn_mm " << report.seq_distance_dn_mm << "\n"
              << "wasserstein_mm " << report.wasserstein_mm << "\n"
              << "max_density_error " << report.max_density_error << "\n";
    return 0;
}

int cmd_grad_check(std::uint64_t seed, int instances, int particles, int channels) {
    const auto report = pflow::run_gradient_check(seed, instances, particles, channels);
    for (const auto& g : report.groups)
        std::printf("%-32s % .3e\n", g.name.c_str(), g.max_rel_err);
    std::printf("worst %.3e over %d instance(s), tolerance %.1e: %s\n", report.worst,
                report.instances, report.tolerance, report.passed() ? "PASS" : "FAIL");
    return report.passed() ? 0 : 1;
}

int cmd_export(const std::string& frames_path, const std::string& format,
               const std::string& out) {
    const auto seq = pflow::read_frames(frames_path);
    fs::create_directories(out);
    if (format == "ply") {
        for (std::size_t f = 0; f < seq.frame_count(); ++f) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%05zu.ply", f);
            std::ofstream os(fs::path(out) / name, std::ios::trunc);
            os << "ply\nformat ascii 1.0\nelement vertex " << seq.frames[f].pos.size()
               << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
            char row[96];
            for (const auto& p : seq.frames[f].pos) {
                std::snprintf(row, sizeof(row), "%.9g %.9g %.9g\n", p.x, p.y, p.z);
                os << row;
            }
        }
        std::cout << "wrote " << seq.frame_count() << " PLY frame(s) to " << out << "\n";
    } else {  // csv
        std::ofstream os(fs::path(out) / "frames.csv", std::ios::trunc);
        os << "frame,index,x,y,z,vx,vy,vz\n";
        char row[160];
        for (std::size_t f = 0; f < seq.frame_count(); ++f)
            for (std::size_t i = 0; i < seq.frames[f].pos.size(); ++i) {
                const auto& p = seq.frames[f].pos[i];
                const auto& v = seq.frames[f].vel[i];
                std::snprintf(row, sizeof(row), "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", f, i,
                              p.x, p.y, p.z, v.x, v.y, v.z);
                os << row;
            }
        std::cout << "wrote frames.csv to " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"particle-based neural fluid simulation toolkit"};
    app.require_subcommand(1);
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible)");

    std::string preset = "dambreak-small", out, data_dir, config_path, ckpt, scene_path;
    std::string pred_path, gt_path, report_path, frames_path, format = "ply";
    std::uint64_t seed = 1, emd_seed = 12345;
    int frames = 0, instances = 5, particles = 10, channels = 3;
    float eval_h = 0.025f;

    auto* gen = app.add_subcommand("gen-data", "generate reference-solver training data");
    gen->add_option("--preset", preset, "dataset preset name")->required();
    gen->add_option("--seed", seed, "master seed")->required();
    gen->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model on frame files");
    train->add_option("--data", data_dir, "directory of .flpf files")->required();
    train->add_option("--config", config_path, "JSON config (desk preset when omitted)");
    train->add_option("--out", out, "checkpoint output stem")->required();

    auto* sim = app.add_subcommand("simulate", "roll out a trained model on a scene");
    sim->add_option("--ckpt", ckpt, "checkpoint path")->required();
    sim->add_option("--scene", scene_path, "scene JSON")->required();
    sim->add_option("--frames", frames, "number of steps")
        ->required()
        ->check(CLI::Range(1, 1 << 30));
    sim->add_option("--out", out, "output .flpf path")->required();

    auto* ev = app.add_subcommand("eval", "compare a prediction against ground truth");
    ev->add_option("--pred", pred_path, "predicted .flpf")->required();
    ev->add_option("--gt", gt_path, "ground-truth .flpf")->required();
    ev->add_option("--report", report_path, "report output stem")->required();
    ev->add_option("--radius-h", eval_h, "particle radius for the density metric");
    ev->add_option("--emd-seed", emd_seed, "subsample seed for the transport metric");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient audit");
    gc->add_option("--seed", seed, "instance seed");
    gc->add_option("--instances", instances, "number of random instances");
    gc->add_option("--particles", particles, "max particles per instance");
    gc->add_option("--channels", channels, "hidden width of the checked model");

    auto* ex = app.add_subcommand("export", "convert frame files for external tools");
    ex->add_option("--frames", frames_path, "input .flpf")->required();
    ex->add_option("--format", format, "ply or csv")
        ->check(CLI::IsMember({"ply", "csv"}));
    ex->add_option("--out", out, "output directory")->required();

    // Let --threads appear after the subcommand too.
    for (auto* sc : app.get_subcommands({})) sc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    pflow::set_thread_count(threads);
    try {
        if (gen->parsed()) return cmd_gen_data(preset, seed, out);
        if (train->parsed()) return cmd_train(data_dir, config_path, out);
        if (sim->parsed()) return cmd_simulate(ckpt, scene_path, frames, out);
        if (ev->parsed()) return cmd_eval(pred_path, gt_path, report_path, eval_h, emd_seed);
        if (gc->parsed()) return cmd_grad_check(seed, instances, particles, channels);
        if (ex->parsed()) return cmd_export(frames_path, format, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
