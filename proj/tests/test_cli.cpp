#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "deft/checkpoint.hpp"
#include "deft/cli.hpp"
#include "deft/dataset.hpp"
#include "deft/io.hpp"
#include "deft/model.hpp"

using namespace deft;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* name) {
    auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("kv config parsing") {
    auto cfg = KvConfig::from_lines({"# comment", "", "a = 1", "b=hello  # trailing", "list = 1, 2,3 "});
    CHECK(cfg.get_long("a", 0) == 1);
    CHECK(cfg.get_string("b", "") == "hello");
    CHECK(cfg.get_list("list", "") == std::vector<std::string>{"1", "2", "3"});
    CHECK(cfg.get_double("missing", 2.5) == 2.5);
    CHECK(cfg.get_bool("flag", true) == true);

    // everything consulted lands in the resolved map, defaults included
    CHECK(cfg.resolved().at("missing") == "2.5");
    CHECK(cfg.resolved().at("a") == "1");

    CHECK_THROWS_AS(KvConfig::from_lines({"no equals sign"}), std::runtime_error);
    CHECK_THROWS_AS(cfg.get_long("b", 0), std::runtime_error);
    CHECK_THROWS_AS(cfg.require_string("nope"), std::runtime_error);
}

TEST_CASE("pgm round trip and quantiles") {
    const std::string dir = temp_dir("deft_cli_io");
    std::vector<float> img = {0.0f, 0.5f, 1.0f, 0.25f, 0.75f, 0.1f};
    write_pgm(dir + "/t.pgm", img, 2, 3);
    int h = 0, w = 0;
    auto back = read_pgm(dir + "/t.pgm", h, w);
    CHECK(h == 2);
    CHECK(w == 3);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(std::fabs(back[i] - img[i]) <= 0.5f / 255.0f + 1e-6f);

    CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2.0);
    fs::remove_all(dir);
}

TEST_CASE("generate is deterministic and self-describing") {
    const std::string dir = temp_dir("deft_cli_gen");
    KvConfig cfg;
    cfg.set("out", dir + "/ds.deftdata");
    cfg.set("resolution", "16");
    cfg.set("posx", "4");
    cfg.set("posy", "4");
    CHECK(cli::cmd_generate(cfg) == 0);

    auto ds = load_dataset(dir + "/ds.deftdata");
    CHECK(ds.n() == 16);
    CHECK(ds.schema.num_factors() == 2);
    CHECK(fs::exists(dir + "/ds.deftdata.schema.txt"));
    CHECK(fs::exists(dir + "/ds.deftdata.resolved.cfg"));

    const std::string first = file_bytes(dir + "/ds.deftdata");
    KvConfig cfg2;
    cfg2.set("out", dir + "/ds.deftdata");
    cfg2.set("resolution", "16");
    cfg2.set("posx", "4");
    cfg2.set("posy", "4");
    CHECK(cli::cmd_generate(cfg2) == 0);
    CHECK(file_bytes(dir + "/ds.deftdata") == first);

    SUBCASE("triangle kind") {
        KvConfig tri;
        tri.set("out", dir + "/tri.deftdata");
        tri.set("kind", "triangle");
        tri.set("resolution", "16");
        tri.set("grid", "4");
        CHECK(cli::cmd_generate(tri) == 0);
        auto tds = load_dataset(dir + "/tri.deftdata");
        CHECK(tds.schema.factors[2].name == "orientation");
        CHECK(tds.n() == 16);
    }
    SUBCASE("unknown kind fails") {
        KvConfig bad;
        bad.set("out", dir + "/x.deftdata");
        bad.set("kind", "mnist");
        CHECK_THROWS_AS(cli::cmd_generate(bad), std::runtime_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("train / evaluate / report pipeline") {
    const std::string dir = temp_dir("deft_cli_pipe");
    const std::string ds_path = dir + "/ds.deftdata";
    {
        KvConfig g;
        g.set("out", ds_path);
        g.set("resolution", "16");
        g.set("posx", "4");
        g.set("posy", "4");
        REQUIRE(cli::cmd_generate(g) == 0);
    }

    KvConfig t;
    t.set("dataset", ds_path);
    t.set("out", dir + "/runs/deft");
    t.set("mode", "deft");
    t.set("seeds", "1,2");
    t.set("groups", "2");
    t.set("latents_per_group", "1");
    t.set("betas", "20,4");
    t.set("steps_per_stage", "12");
    t.set("batch_size", "16");
    t.set("trace_every", "4");
    REQUIRE(cli::cmd_train(t) == 0);

    for (const char* seed : {"1", "2"}) {
        const std::string run = dir + "/runs/deft/seed_" + seed;
        CHECK(fs::exists(run + "/trace.csv"));
        CHECK(fs::exists(run + "/config.resolved"));
        CHECK(fs::exists(run + "/checkpoint_stage_01.ckpt"));
        CHECK(fs::exists(run + "/checkpoint_stage_02.ckpt"));
    }

    SUBCASE("re-running with the same seed reproduces identical bytes") {
        const std::string trace_before = file_bytes(dir + "/runs/deft/seed_1/trace.csv");
        const std::string ckpt_before = file_bytes(dir + "/runs/deft/seed_1/checkpoint_stage_02.ckpt");
        KvConfig t2;
        t2.set("dataset", ds_path);
        t2.set("out", dir + "/runs/deft");
        t2.set("mode", "deft");
        t2.set("seeds", "1");
        t2.set("groups", "2");
        t2.set("latents_per_group", "1");
        t2.set("betas", "20,4");
        t2.set("steps_per_stage", "12");
        t2.set("batch_size", "16");
        t2.set("trace_every", "4");
        REQUIRE(cli::cmd_train(t2) == 0);
        CHECK(file_bytes(dir + "/runs/deft/seed_1/trace.csv") == trace_before);
        CHECK(file_bytes(dir + "/runs/deft/seed_1/checkpoint_stage_02.ckpt") == ckpt_before);
    }

    SUBCASE("evaluate emits one row per checkpoint plus MI matrices") {
        for (const char* seed : {"1", "2"}) {
            KvConfig e;
            e.set("run", dir + "/runs/deft/seed_" + std::string(seed));
            e.set("dataset", ds_path);
            e.set("bins", "8");  // the toy dataset has only 16 images
            REQUIRE(cli::cmd_evaluate(e) == 0);
        }
        const std::string metrics = dir + "/runs/deft/seed_1/metrics.csv";
        REQUIRE(fs::exists(metrics));
        std::ifstream in(metrics);
        std::string line;
        std::getline(in, line);
        CHECK(line.rfind("checkpoint,mig,nmi1,nmi2,recon", 0) == 0);
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 2);  // one per stage checkpoint
        CHECK(fs::exists(dir + "/runs/deft/seed_1/mimatrix_checkpoint_stage_01.csv"));

        KvConfig r;
        r.set("parent", dir + "/runs/deft");
        r.set("out", dir + "/report.csv");
        REQUIRE(cli::cmd_report(r) == 0);
        std::ifstream rep(dir + "/report.csv");
        std::getline(rep, line);
        CHECK(line.rfind("approach,n_runs", 0) == 0);
        std::getline(rep, line);
        CHECK(line.rfind("deft,2,", 0) == 0);
    }

    SUBCASE("baseline mode trains and reports under its objective name") {
        KvConfig b;
        b.set("dataset", ds_path);
        b.set("out", dir + "/runs/beta");
        b.set("mode", "baseline");
        b.set("objective", "beta_vae");
        b.set("beta", "4");
        b.set("latent_dim", "3");
        b.set("steps", "10");
        b.set("batch_size", "16");
        b.set("seeds", "7");
        REQUIRE(cli::cmd_train(b) == 0);
        CHECK(fs::exists(dir + "/runs/beta/seed_7/checkpoint_final.ckpt"));

        KvConfig e;
        e.set("run", dir + "/runs/beta/seed_7");
        e.set("dataset", ds_path);
        e.set("bins", "8");
        REQUIRE(cli::cmd_evaluate(e) == 0);
        KvConfig r;
        r.set("runs", dir + "/runs/beta/seed_7");
        r.set("out", dir + "/report_beta.csv");
        REQUIRE(cli::cmd_report(r) == 0);
        std::ifstream rep(dir + "/report_beta.csv");
        std::string line;
        std::getline(rep, line);
        std::getline(rep, line);
        CHECK(line.rfind("beta_vae,1,", 0) == 0);
    }
    fs::remove_all(dir);
}

TEST_CASE("anneal command writes curves, increments, and ifp tables") {
    const std::string dir = temp_dir("deft_cli_anneal");
    const std::string ds_path = dir + "/ds.deftdata";
    {
        KvConfig g;
        g.set("out", ds_path);
        g.set("resolution", "16");
        g.set("posx", "4");
        g.set("posy", "4");
        REQUIRE(cli::cmd_generate(g) == 0);
    }

    SUBCASE("unsupervised") {
        KvConfig a;
        a.set("dataset", ds_path);
        a.set("out", dir + "/anneal_u");
        a.set("mode", "unsupervised");
        a.set("iters", "120");
        a.set("probe_interval", "20");
        a.set("latent_dim", "2");
        REQUIRE(cli::cmd_anneal(a) == 0);
        CHECK(fs::exists(dir + "/anneal_u/curve.csv"));
        CHECK(fs::exists(dir + "/anneal_u/increments.csv"));
        std::ifstream in(dir + "/anneal_u/curve.csv");
        std::string line;
        int rows = -1;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 6);
    }
    SUBCASE("supervised") {
        KvConfig a;
        a.set("dataset", ds_path);
        a.set("out", dir + "/anneal_s");
        a.set("mode", "supervised");
        a.set("factor", "posX");
        a.set("repeats", "3");
        a.set("iters", "100");
        a.set("probe_interval", "25");
        a.set("latent_dim", "2");
        REQUIRE(cli::cmd_anneal(a) == 0);
        std::ifstream in(dir + "/anneal_s/ifp.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "repeat,factor,ifp_beta");
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);
        CHECK(fs::exists(dir + "/anneal_s/curve_r000.csv"));
        KvConfig bad = a;
        bad.set("factor", "orientation");
        CHECK_THROWS_AS(cli::cmd_anneal(bad), std::runtime_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("traverse renders a latent grid; collapsed latents give flat rows") {
    const std::string dir = temp_dir("deft_cli_traverse");
    const std::string ds_path = dir + "/ds.deftdata";
    {
        KvConfig g;
        g.set("out", ds_path);
        g.set("resolution", "16");
        g.set("posx", "4");
        g.set("posy", "4");
        REQUIRE(cli::cmd_generate(g) == 0);
    }
    // hand-built run dir: fresh model with the decoder cut off from latent 0
    const std::string run = dir + "/run";
    fs::create_directories(run);
    {
        std::ofstream side(run + "/config.resolved");
        side << "mode=deft\ngroups=2\nlatents_per_group=1\n";
        Rng rng(41);
        auto model = build_deft_model<float>(2, 1, 16, 1, rng);
        Parameter<float>* w0 = model.decoder.parameters()[0];  // dense [latent_dim, 256]
        for (int j = 0; j < 256; ++j) w0->value.data[static_cast<std::size_t>(j)] = 0.0f;
        auto params = model.parameters();
        save_checkpoint(run + "/checkpoint_stage_02.ckpt", params);
    }

    KvConfig t;
    t.set("run", run);
    t.set("dataset", ds_path);
    t.set("steps", "7");
    t.set("out", dir + "/grid.pgm");
    REQUIRE(cli::cmd_traverse(t) == 0);

    int h = 0, w = 0;
    auto grid = read_pgm(dir + "/grid.pgm", h, w);
    CHECK(h == 2 * 16);  // latent_dim rows of cells
    CHECK(w == 7 * 16);  // steps columns

    // latent 0 is collapsed: every cell in its row block is identical
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const float first = grid[static_cast<std::size_t>(y) * w + x];
            for (int s = 1; s < 7; ++s)
                CHECK(std::fabs(grid[static_cast<std::size_t>(y) * w + s * 16 + x] - first) <
                      1.0f / 255.0f);
        }

    // re-running produces identical bytes
    const std::string before = file_bytes(dir + "/grid.pgm");
    REQUIRE(cli::cmd_traverse(t) == 0);
    CHECK(file_bytes(dir + "/grid.pgm") == before);
    fs::remove_all(dir);
}
