#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "hazelab/hazelab.hpp"
#include "test_support.hpp"

using namespace hazelab;
namespace fs = std::filesystem;

namespace {

const std::string kBin = HAZE_LAB_BIN;

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "hazelab_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args, const std::string& stdout_file = "") {
    std::string cmd = kBin + " " + args;
    if (!stdout_file.empty()) cmd += " > " + stdout_file;
    cmd += " 2> /dev/null";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

// Parses "key <value>" lines as written by the loss subcommand.
double parse_value(const fs::path& file, const std::string& key) {
    std::ifstream in(file);
    std::string k;
    double v;
    while (in >> k >> v)
        if (k == key) return v;
    throw std::runtime_error("key not found: " + key);
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("synth with beta 0 reproduces the input exactly") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(111);
    const RgbImage img = oracle::random_image(16, 16, rng);
    save_image(img, (dir / "clear.ppm").string());

    REQUIRE(run("synth " + (dir / "clear.ppm").string() + " -o " + (dir / "hazy0.ppm").string() +
                " --beta 0 --uniform-depth 0.7") == 0);
    const RgbImage in = load_image((dir / "clear.ppm").string());
    const RgbImage out = load_image((dir / "hazy0.ppm").string());
    REQUIRE(out.same_size(in));
    CHECK(out.data() == in.data());
}

TEST_CASE("synth writes the analytic transmission map") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(112);
    save_image(oracle::random_image(16, 16, rng), (dir / "clear2.ppm").string());

    REQUIRE(run("synth " + (dir / "clear2.ppm").string() + " -o " + (dir / "hazy2.ppm").string() +
                " --beta 1 --uniform-depth 0.5 --save-tmap " + (dir / "t2.pgm").string()) == 0);
    const ScalarMap t = load_map((dir / "t2.pgm").string());
    const double expect = std::exp(-0.5);
    for (double v : t.data()) CHECK(std::abs(v - expect) <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("synth composition matches the library within quantization") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(113);
    save_image(oracle::random_image(12, 12, rng), (dir / "clear3.ppm").string());
    REQUIRE(run("synth " + (dir / "clear3.ppm").string() + " -o " + (dir / "hazy3.ppm").string() +
                " --beta 1.2 --uniform-depth 0.4 --airlight 0.9,0.85,0.8") == 0);

    const RgbImage clear = load_image((dir / "clear3.ppm").string());
    SynthSpec spec;
    spec.beta = 1.2;
    spec.airlight = {{0.9, 0.85, 0.8}};
    spec.depth = ScalarMap(12, 12, 0.4);
    const auto [hazy, t] = compose_haze(clear, spec);
    const RgbImage cli = load_image((dir / "hazy3.ppm").string());
    for (std::size_t i = 0; i < hazy.data().size(); ++i)
        CHECK(std::abs(cli.data()[i] - hazy.data()[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("argument errors exit with code 1") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(114);
    save_image(oracle::random_image(8, 8, rng), (dir / "a.ppm").string());
    CHECK(run("synth " + (dir / "a.ppm").string() + " -o " + (dir / "b.ppm").string() +
              " --uniform-depth 0.5 --airlight nonsense") == 1);
    CHECK(run("synth " + (dir / "a.ppm").string() + " -o " + (dir / "b.ppm").string()) == 1);
    CHECK(run("dehaze " + (dir / "a.ppm").string() + " -o " + (dir / "b.ppm").string() +
              " --method bogus") == 1);
    CHECK(run("dehaze") == 1);
    CHECK(run("nosuchcommand") == 1);
    CHECK(run("") == 1);
}

TEST_CASE("I/O errors exit with code 2") {
    const fs::path dir = work_dir();
    CHECK(run("synth " + (dir / "missing.ppm").string() + " -o " + (dir / "x.ppm").string() +
              " --uniform-depth 0.5") == 2);
    CHECK(run("dehaze " + (dir / "missing.ppm").string() + " -o " + (dir / "x.ppm").string()) == 2);
}

TEST_CASE("coarse dehazing improves PSNR on synthetic haze") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(115);
    RgbImage clear = oracle::dark_channel_zero_image(32, 32, rng);
    for (int y = 12; y < 21; ++y)
        for (int x = 12; x < 21; ++x)
            for (int c = 0; c < 3; ++c) clear.at(y, x, c) = 1.0;  // bright airlight anchor
    ScalarMap depth(32, 32, 0.1);
    for (int y = 12; y < 21; ++y)
        for (int x = 12; x < 21; ++x) depth.at(y, x) = 1.0;  // anchor sits far away
    save_image(clear, (dir / "sc_clear.ppm").string());
    save_map(depth, (dir / "sc_depth.pgm").string());

    REQUIRE(run("synth " + (dir / "sc_clear.ppm").string() + " -o " + (dir / "sc_hazy.ppm").string() +
                " --beta 5 --depth " + (dir / "sc_depth.pgm").string() +
                " --airlight 0.85,0.9,0.8") == 0);
    REQUIRE(run("dehaze " + (dir / "sc_hazy.ppm").string() + " -o " + (dir / "sc_out.ppm").string() +
                " --method coarse --patch 3") == 0);

    const RgbImage hazy = load_image((dir / "sc_hazy.ppm").string());
    const RgbImage out = load_image((dir / "sc_out.ppm").string());
    const RgbImage truth = load_image((dir / "sc_clear.ppm").string());
    CHECK(psnr(out, truth) >= psnr(hazy, truth) + 5.0);
}

TEST_CASE("matting and optimize refinements agree on the transmission map") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(116);
    const RgbImage clear = oracle::dark_channel_zero_image(16, 16, rng);
    SynthSpec spec;
    spec.beta = 1.0;
    spec.airlight = {{0.85, 0.9, 0.8}};
    spec.depth = ScalarMap(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) spec.depth.at(y, x) = 0.2 + 0.04 * y;  // sloped scene
    const auto [hazy, t] = compose_haze(clear, spec);
    save_image(hazy, (dir / "m_hazy.ppm").string());

    REQUIRE(run("dehaze " + (dir / "m_hazy.ppm").string() + " -o " + (dir / "m_out1.ppm").string() +
                " --method matting --patch 3 --save-tmap " + (dir / "m_t1.pgm").string()) == 0);
    REQUIRE(run("dehaze " + (dir / "m_hazy.ppm").string() + " -o " + (dir / "m_out2.ppm").string() +
                " --method optimize --patch 3 --max-steps 200000 --save-tmap " +
                (dir / "m_t2.pgm").string()) == 0);

    const ScalarMap t1 = load_map((dir / "m_t1.pgm").string());
    const ScalarMap t2 = load_map((dir / "m_t2.pgm").string());
    REQUIRE(t1.same_size(t2));
    double diff = 0.0;
    for (std::size_t n = 0; n < t1.size(); ++n) diff = std::max(diff, std::abs(t1[n] - t2[n]));
    CHECK(diff <= 2.0 / 255.0 + 1e-3);  // two 8-bit quantizations plus solver tolerance
}

TEST_CASE("guided refinement runs and keeps the output size") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(117);
    save_image(oracle::random_image(20, 20, rng), (dir / "g_hazy.ppm").string());
    REQUIRE(run("dehaze " + (dir / "g_hazy.ppm").string() + " -o " + (dir / "g_out.png").string() +
                " --method guided --gf-radius 3") == 0);
    const RgbImage out = load_image((dir / "g_out.png").string());
    CHECK(out.height() == 20);
    CHECK(out.width() == 20);
}

TEST_CASE("loss reports zero fidelity at the coarse map and zero energy on flat input") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(118);
    save_image(oracle::random_image(12, 12, rng), (dir / "l_img.ppm").string());
    REQUIRE(run("loss --image " + (dir / "l_img.ppm").string(), (dir / "l_out.txt").string()) == 0);
    CHECK(parse_value(dir / "l_out.txt", "fidelity_term") == 0.0);
    CHECK(parse_value(dir / "l_out.txt", "energy") ==
          doctest::Approx(parse_value(dir / "l_out.txt", "smoothness_term")).epsilon(1e-12));

    // cross-check against the library on the same decoded bytes
    const RgbImage img = load_image((dir / "l_img.ppm").string());
    const LossContext ctx = build_loss_context(img);
    const double expect = energy(ctx, ctx.coarse);
    CHECK(parse_value(dir / "l_out.txt", "energy") == doctest::Approx(expect).epsilon(1e-9));

    save_image(RgbImage(12, 12, 0.5), (dir / "l_flat.ppm").string());
    REQUIRE(run("loss --image " + (dir / "l_flat.ppm").string(), (dir / "l_flat.txt").string()) == 0);
    CHECK(parse_value(dir / "l_flat.txt", "energy") == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parse_value(dir / "l_flat.txt", "gradient_inf") == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("loss rejects a mismatched transmission map") {
    const fs::path dir = work_dir();
    std::mt19937_64 rng(119);
    save_image(oracle::random_image(12, 12, rng), (dir / "lm_img.ppm").string());
    save_map(ScalarMap(10, 10, 0.5), (dir / "lm_t.pgm").string());
    CHECK(run("loss --image " + (dir / "lm_img.ppm").string() + " --tmap " +
              (dir / "lm_t.pgm").string()) == 1);
}

TEST_CASE("train with lr 0 writes the freshly initialized model") {
    const fs::path dir = work_dir();
    fs::create_directories(dir / "corpus");
    std::mt19937_64 rng(120);
    save_image(oracle::random_image(16, 16, rng), (dir / "corpus/i0.ppm").string());
    save_image(oracle::random_image(16, 16, rng), (dir / "corpus/i1.ppm").string());

    REQUIRE(run("train --corpus " + (dir / "corpus").string() + " -o " + (dir / "m0.ddcp").string() +
                " --epochs 1 --lr 0 --seed 5 --blocks 1 --width 2 --no-augment") == 0);
    const CanModel trained = load_model((dir / "m0.ddcp").string());

    CanConfig cfg;
    cfg.blocks = 1;
    cfg.width = 2;
    cfg.dilations = {1};
    CanModel init = CanModel::build(cfg);
    init.init_random(5, std::sqrt(0.1));
    for (std::size_t p = 0; p < init.params.size(); ++p) {
        if (!init.is_trainable(p)) continue;
        REQUIRE(trained.params[p].size() == init.params[p].size());
        for (std::size_t i = 0; i < init.params[p].size(); ++i)
            CHECK(trained.params[p].v[i] == static_cast<double>(static_cast<float>(init.params[p].v[i])));
    }

    const std::string log = slurp(dir / "m0.ddcp.log");
    CHECK(log.find("epoch=0 loss=") != std::string::npos);
}

TEST_CASE("training is reproducible under a fixed seed") {
    const fs::path dir = work_dir();
    const std::string args = "train --corpus " + (dir / "corpus").string() +
                             " --epochs 2 --lr 1e-3 --seed 9 --blocks 1 --width 2 --no-augment -o ";
    REQUIRE(run(args + (dir / "mA.ddcp").string()) == 0);
    REQUIRE(run(args + (dir / "mB.ddcp").string()) == 0);
    CHECK(slurp(dir / "mA.ddcp") == slurp(dir / "mB.ddcp"));
    CHECK(slurp(dir / "mA.ddcp.log") == slurp(dir / "mB.ddcp.log"));
    CHECK_FALSE(slurp(dir / "mA.ddcp").empty());
}

TEST_CASE("eval pairs by stem, skips orphans, and writes both report formats") {
    const fs::path dir = work_dir();
    fs::create_directories(dir / "hazy");
    fs::create_directories(dir / "clear");
    std::mt19937_64 rng(121);
    const RgbImage a = oracle::random_image(16, 16, rng);
    const RgbImage b = oracle::random_image(16, 16, rng);
    save_image(a, (dir / "hazy/a.ppm").string());
    save_image(a, (dir / "clear/a.ppm").string());
    save_image(b, (dir / "hazy/b.ppm").string());
    save_image(b, (dir / "clear/b.ppm").string());
    save_image(b, (dir / "hazy/orphan.ppm").string());

    REQUIRE(run("eval --model " + (dir / "m0.ddcp").string() + " --hazy " + (dir / "hazy").string() +
                " --clear " + (dir / "clear").string() + " -o " + (dir / "report").string()) == 0);
    const std::string kv = slurp(dir / "report.kv");
    CHECK(kv.find("image filename=a.ppm") != std::string::npos);
    CHECK(kv.find("image filename=b.ppm") != std::string::npos);
    CHECK(kv.find("skipped filename=orphan.ppm") != std::string::npos);
    CHECK(kv.find("means psnr_db=") != std::string::npos);
    CHECK_FALSE(slurp(dir / "report.txt").empty());
}

TEST_CASE("eval with no paired images exits with code 1") {
    const fs::path dir = work_dir();
    fs::create_directories(dir / "clear_empty");
    CHECK(run("eval --model " + (dir / "m0.ddcp").string() + " --hazy " + (dir / "hazy").string() +
              " --clear " + (dir / "clear_empty").string() + " -o " + (dir / "r2").string()) == 1);
}

TEST_CASE("net dehazing uses a trained model end to end") {
    const fs::path dir = work_dir();
    REQUIRE(run("dehaze " + (dir / "hazy/a.ppm").string() + " -o " + (dir / "net_out.png").string() +
                " --method net --model " + (dir / "m0.ddcp").string() + " --save-tmap " +
                (dir / "net_t.png").string()) == 0);
    const RgbImage out = load_image((dir / "net_out.png").string());
    const ScalarMap t = load_map((dir / "net_t.png").string());
    CHECK(out.height() == 16);
    CHECK(t.height() == 16);
    for (double v : t.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // missing model path is an argument error
    CHECK(run("dehaze " + (dir / "hazy/a.ppm").string() + " -o " + (dir / "x.png").string() +
              " --method net") == 1);
}
