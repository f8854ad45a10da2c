// haze-lab: batch CLI for dark-channel-prior dehazing, haze synthesis,
// unsupervised training and evaluation.
//
// Exit codes: 0 ok, 1 invalid arguments, 2 I/O failure, 3 numeric failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "hazelab/hazelab.hpp"

namespace fs = std::filesystem;
using namespace hazelab;

namespace {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Airlight parse_airlight(const std::string& s) {
    Airlight a{};
    std::istringstream is(s);
    char c1 = 0, c2 = 0;
    if (!(is >> a.rgb[0] >> c1 >> a.rgb[1] >> c2 >> a.rgb[2]) || c1 != ',' || c2 != ',')
        throw CLI::ValidationError("--airlight", "expected R,G,B");
    for (double v : a.rgb)
        if (!(v > 0.0) || v > 1.0)
            throw CLI::ValidationError("--airlight", "channels must be in (0,1]");
    return a;
}

std::string lower_stem(const fs::path& p) {
    std::string s = p.stem().string();
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<fs::path> list_images(const std::string& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".ppm" || ext == ".pgm") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int default_jobs() {
    if (const char* env = std::getenv("HAZE_LAB_THREADS")) {
        const int j = std::atoi(env);
        if (j >= 1) return j;
    }
    return 1;
}

// --- dehaze -----------------------------------------------------------------

struct DehazeOpts {
    std::string input, output, method = "matting", model_path, save_tmap;
    DcpParams dcp;
    double lambda = 1e-4;
    double eps = 1e-6;
    int gf_radius = 20;
    double gf_eps = 1e-3;
    int max_steps = 20000;
};

int run_dehaze(const DehazeOpts& o) {
    const auto t_start = std::chrono::steady_clock::now();
    const RgbImage img = load_image(o.input);

    ScalarMap tmap;
    Airlight air{};
    double time_airlight = 0, time_transmission = 0, time_refine = 0;

    if (o.method == "net") {
        if (o.model_path.empty())
            throw CLI::ValidationError("--model", "required for --method net");
        CanModel model = load_model(o.model_path);
        auto t0 = std::chrono::steady_clock::now();
        air = estimate_airlight(img, o.dcp.patch);
        time_airlight = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        tmap = can_forward(model, img, CanMode::inference);
        time_transmission = seconds_since(t0);
    } else {
        auto t0 = std::chrono::steady_clock::now();
        air = estimate_airlight(img, o.dcp.patch);
        time_airlight = seconds_since(t0);

        t0 = std::chrono::steady_clock::now();
        tmap = coarse_transmission(img, air, o.dcp);
        time_transmission = seconds_since(t0);

        t0 = std::chrono::steady_clock::now();
        if (o.method == "matting") {
            const MattingWeights mw = matting_weights(img, o.eps);
            const SparseLaplacian lap = assemble_laplacian(mw);
            const SolveResult res = refine_soft_matting(tmap, lap, o.lambda, 1e-6, 2000);
            if (!res.converged)
                throw NumericError("soft matting solve did not converge, residual " +
                                   std::to_string(res.residual));
            tmap = res.t;
        } else if (o.method == "guided") {
            tmap = refine_guided_filter(tmap, img, o.gf_radius, o.gf_eps);
        } else if (o.method == "optimize") {
            LossContext ctx;
            ctx.airlight = air;
            ctx.coarse = tmap;
            ctx.weights = matting_weights(img, o.eps);
            ctx.laplacian = assemble_laplacian(ctx.weights);
            ctx.lambda = o.lambda;
            OptimizeConfig cfg;
            cfg.max_steps = o.max_steps;
            cfg.stop_energy_rel = 0.0;
            const OptimizeResult res = optimize_transmission(ctx, cfg);
            if (res.diverged) throw NumericError("transmission optimization diverged");
            tmap = res.t;
        }  // "coarse": keep as is
        time_refine = seconds_since(t0);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const RgbImage out = recover_radiance(img, tmap, air, o.dcp.t0);
    const double time_recon = seconds_since(t0);

    save_image(out, o.output);
    if (!o.save_tmap.empty()) save_map(tmap, o.save_tmap);

    std::cout << "airlight       " << time_airlight << " s\n"
              << "transmission   " << time_transmission << " s\n"
              << "refinement     " << time_refine << " s\n"
              << "reconstruction " << time_recon << " s\n"
              << "total          " << seconds_since(t_start) << " s\n";
    return 0;
}

// --- synth ------------------------------------------------------------------

struct SynthOpts {
    std::string clear, output, depth_path, save_tmap, airlight_str = "0.8,0.8,0.8";
    std::optional<double> uniform_depth;
    double beta = 1.0;
};

int run_synth(const SynthOpts& o) {
    const RgbImage clear = load_image(o.clear);
    SynthSpec spec;
    spec.beta = o.beta;
    spec.airlight = parse_airlight(o.airlight_str);
    if (o.uniform_depth) {
        spec.depth = ScalarMap(clear.height(), clear.width(), *o.uniform_depth);
    } else if (!o.depth_path.empty()) {
        spec.depth = load_map(o.depth_path);
    } else {
        throw CLI::ValidationError("--depth", "either --depth or --uniform-depth is required");
    }
    const auto [hazy, tmap] = compose_haze(clear, spec);
    save_image(hazy, o.output);
    if (!o.save_tmap.empty()) save_map(tmap, o.save_tmap);
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainOpts {
    std::string corpus_dir, val_dir, output;
    TrainConfig train;
    CanConfig can;
    DcpParams dcp;
    bool no_augment = false;
};

std::vector<std::pair<RgbImage, RgbImage>> load_pairs(const std::string& dir) {
    // pairs live side by side as <stem>_hazy.* / <stem>_clear.*
    std::map<std::string, fs::path> hazy, clear;
    for (const fs::path& p : list_images(dir)) {
        const std::string stem = lower_stem(p);
        if (stem.ends_with("_hazy")) hazy[stem.substr(0, stem.size() - 5)] = p;
        else if (stem.ends_with("_clear")) clear[stem.substr(0, stem.size() - 6)] = p;
    }
    std::vector<std::pair<RgbImage, RgbImage>> pairs;
    for (const auto& [stem, hp] : hazy) {
        auto it = clear.find(stem);
        if (it != clear.end()) pairs.emplace_back(load_image(hp.string()), load_image(it->second.string()));
    }
    return pairs;
}

int run_train(const TrainOpts& o) {
    const std::vector<fs::path> files = list_images(o.corpus_dir);
    if (files.empty()) throw CLI::ValidationError("--corpus", "no images in " + o.corpus_dir);

    std::vector<RgbImage> corpus;
    std::mt19937_64 aug_rng(o.train.seed);
    for (const fs::path& p : files) {
        RgbImage img = load_image(p.string());
        if (o.no_augment) {
            corpus.push_back(std::move(img));
        } else {
            for (RgbImage& v : augment(img, aug_rng)) corpus.push_back(std::move(v));
        }
    }

    std::vector<std::pair<RgbImage, RgbImage>> val_pairs;
    if (!o.val_dir.empty()) val_pairs = load_pairs(o.val_dir);

    auto [model, history] =
        can_train(corpus, o.can, o.train, o.dcp, val_pairs.empty() ? nullptr : &val_pairs);
    save_model(model, o.output);

    std::ofstream log(o.output + ".log");
    log << std::setprecision(17);
    for (const EpochMetrics& em : history) {
        log << "epoch=" << em.epoch << " loss=" << em.avg_loss;
        if (!val_pairs.empty())
            log << " val_psnr=" << em.val_psnr << " val_ssim=" << em.val_ssim;
        log << "\n";
    }
    if (!val_pairs.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < history.size(); ++i)
            if (history[i].val_psnr > history[best].val_psnr ||
                (history[i].val_psnr == history[best].val_psnr &&
                 history[i].val_ssim > history[best].val_ssim))
                best = i;
        log << "best_epoch=" << best << "\n";
    }
    std::cout << "trained " << o.train.epochs << " epochs over " << corpus.size()
              << " images; model written to " << o.output << "\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalOpts {
    std::string model_path, hazy_dir, clear_dir, output;
    DcpParams dcp;
    int jobs = default_jobs();
};

int run_eval(const EvalOpts& o) {
    CanModel model = load_model(o.model_path);

    std::map<std::string, fs::path> clear_by_stem;
    for (const fs::path& p : list_images(o.clear_dir)) clear_by_stem[lower_stem(p)] = p;

    EvalReport report;
    struct Job {
        std::string name;
        fs::path hazy, clear;
    };
    std::vector<Job> jobs;
    for (const fs::path& p : list_images(o.hazy_dir)) {
        const auto it = clear_by_stem.find(lower_stem(p));
        if (it == clear_by_stem.end()) {
            report.skipped.push_back(p.filename().string());
            continue;
        }
        jobs.push_back({p.filename().string(), p, it->second});
    }
    if (jobs.empty()) {
        std::cerr << "haze-lab: no paired images between " << o.hazy_dir << " and " << o.clear_dir
                  << "\n";
        return 1;
    }

    std::vector<EvalEntry> entries(jobs.size());
    const int n_threads = std::max(1, std::min<int>(o.jobs, static_cast<int>(jobs.size())));
    auto worker = [&](int tid) {
        for (std::size_t i = tid; i < jobs.size(); i += n_threads) {
            const RgbImage hazy = load_image(jobs[i].hazy.string());
            const RgbImage clear = load_image(jobs[i].clear.string());
            if (!hazy.same_size(clear)) {
                entries[i].name = "";
                continue;
            }
            const auto t0 = std::chrono::steady_clock::now();
            const RgbImage dehazed = predict_and_dehaze(model, hazy, o.dcp);
            entries[i].time_s = seconds_since(t0);
            const auto [p, s] = detail_eval::best_metrics(dehazed, clear);
            entries[i].name = jobs[i].name;
            entries[i].psnr_db = p;
            entries[i].ssim = s;
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker, t);
    worker(0);
    for (std::thread& t : pool) t.join();

    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name.empty()) {
            std::cerr << "haze-lab: dimension mismatch, skipping " << jobs[i].name << "\n";
            report.skipped.push_back(jobs[i].name);
        } else {
            report.entries.push_back(entries[i]);
        }
    }
    report.finalize();

    std::ofstream(o.output + ".txt") << report.to_text();
    std::ofstream(o.output + ".kv") << report.to_kv();
    std::cout << "mean psnr " << report.mean_psnr << " dB, mean ssim " << report.mean_ssim << "\n";
    return 0;
}

// --- loss -------------------------------------------------------------------

struct LossOpts {
    std::string image, tmap_path;
    double lambda = 1e-4;
    double eps = 1e-6;
    DcpParams dcp;
};

int run_loss(const LossOpts& o) {
    const RgbImage img = load_image(o.image);
    const LossContext ctx = build_loss_context(img, o.dcp, o.eps, o.lambda);

    ScalarMap t = ctx.coarse;
    if (!o.tmap_path.empty()) {
        t = load_map(o.tmap_path);
        if (!t.same_size(ctx.coarse)) {
            std::cerr << "haze-lab: transmission map dimensions differ from image\n";
            return 1;
        }
    }
    const auto [smooth, fidelity] = energy_terms(ctx, t);
    const ScalarMap g = energy_gradient(ctx, t);
    double g_inf = 0.0;
    for (double v : g.data()) g_inf = std::max(g_inf, std::abs(v));

    std::cout << std::setprecision(12) << "energy          " << energy(ctx, t) << "\n"
              << "smoothness_term " << smooth << "\n"
              << "fidelity_term   " << fidelity << "\n"
              << "gradient_inf    " << g_inf << "\n";
    return 0;
}

void add_dcp_options(CLI::App* cmd, DcpParams& dcp) {
    cmd->add_option("--omega", dcp.omega, "haze retention factor")->check(CLI::Range(1e-9, 1.0));
    cmd->add_option("--t0", dcp.t0, "lower transmission clamp");
    cmd->add_option("--patch", dcp.patch, "dark-channel patch size (odd)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"haze-lab: dark channel prior dehazing toolbox"};
    app.require_subcommand(1);

    DehazeOpts dh;
    CLI::App* dehaze = app.add_subcommand("dehaze", "dehaze a single image");
    dehaze->add_option("input", dh.input, "hazy input image")->required();
    dehaze->add_option("-o,--output", dh.output, "dehazed output image")->required();
    dehaze->add_option("--method", dh.method, "coarse|matting|guided|optimize|net")
        ->check(CLI::IsMember({"coarse", "matting", "guided", "optimize", "net"}));
    dehaze->add_option("--model", dh.model_path, "model file for --method net");
    dehaze->add_option("--lambda", dh.lambda, "matting fidelity weight");
    dehaze->add_option("--eps", dh.eps, "matting regularizer");
    dehaze->add_option("--gf-radius", dh.gf_radius, "guided filter radius");
    dehaze->add_option("--gf-eps", dh.gf_eps, "guided filter regularizer");
    dehaze->add_option("--max-steps", dh.max_steps, "optimizer step budget");
    dehaze->add_option("--save-tmap", dh.save_tmap, "write the transmission map (grayscale)");
    add_dcp_options(dehaze, dh.dcp);

    SynthOpts sy;
    CLI::App* synth = app.add_subcommand("synth", "compose synthetic haze");
    synth->add_option("clear", sy.clear, "clear input image")->required();
    synth->add_option("-o,--output", sy.output, "hazy output image")->required();
    synth->add_option("--depth", sy.depth_path, "depth map image");
    synth->add_option("--uniform-depth", sy.uniform_depth, "constant depth value");
    synth->add_option("--beta", sy.beta, "scattering coefficient")->check(CLI::NonNegativeNumber);
    synth->add_option("--airlight", sy.airlight_str, "airlight as R,G,B");
    synth->add_option("--save-tmap", sy.save_tmap, "write the true transmission map");

    TrainOpts tr;
    CLI::App* train = app.add_subcommand("train", "unsupervised training on a hazy corpus");
    train->add_option("--corpus", tr.corpus_dir, "directory of hazy images")->required();
    train->add_option("--val", tr.val_dir, "directory of *_hazy/*_clear validation pairs");
    train->add_option("-o,--output", tr.output, "model file to write")->required();
    train->add_option("--epochs", tr.train.epochs, "training epochs");
    train->add_option("--batch", tr.train.batch_size, "batch size");
    train->add_option("--lr", tr.train.lr, "initial learning rate");
    train->add_option("--seed", tr.train.seed, "RNG seed");
    train->add_option("--blocks", tr.can.blocks, "dilated residual blocks");
    train->add_option("--width", tr.can.width, "channels per layer");
    train->add_flag("--no-augment", tr.no_augment, "train on corpus images as-is");
    add_dcp_options(train, tr.dcp);

    EvalOpts ev;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a model on paired directories");
    eval->add_option("--model", ev.model_path, "model file")->required();
    eval->add_option("--hazy", ev.hazy_dir, "directory of hazy images")->required();
    eval->add_option("--clear", ev.clear_dir, "directory of clear images")->required();
    eval->add_option("-o,--output", ev.output, "report basename (.txt and .kv)")->required();
    eval->add_option("--jobs", ev.jobs, "parallel workers (default HAZE_LAB_THREADS or 1)");
    add_dcp_options(eval, ev.dcp);

    LossOpts lo;
    CLI::App* loss = app.add_subcommand("loss", "inspect the DCP energy of an image");
    loss->add_option("--image", lo.image, "hazy image")->required();
    loss->add_option("--tmap", lo.tmap_path, "transmission map (defaults to the coarse estimate)");
    loss->add_option("--lambda", lo.lambda, "fidelity weight");
    add_dcp_options(loss, lo.dcp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*dehaze) {
            dh.dcp.validate();
            return run_dehaze(dh);
        }
        if (*synth) return run_synth(sy);
        if (*train) {
            tr.dcp.validate();
            // derive the dilation schedule for a non-default block count
            if (tr.can.blocks != static_cast<int>(tr.can.dilations.size())) {
                tr.can.dilations.resize(tr.can.blocks);
                for (int b = 0; b < tr.can.blocks; ++b) tr.can.dilations[b] = 1 << std::min(b, 20);
            }
            return run_train(tr);
        }
        if (*eval) {
            ev.dcp.validate();
            return run_eval(ev);
        }
        if (*loss) {
            lo.dcp.validate();
            return run_loss(lo);
        }
    } catch (const CLI::Error& e) {
        std::cerr << "haze-lab: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "haze-lab: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "haze-lab: " << e.what() << "\n";
        return 3;
    } catch (const TrainError& e) {
        std::cerr << "haze-lab: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "haze-lab: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "haze-lab: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
