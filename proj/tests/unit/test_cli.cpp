#include <doctest.h>

#include <sstream>

#include "droughtcast/cli.hpp"
#include "droughtcast/errors.hpp"
#include "droughtcast/metrics.hpp"
#include "droughtcast/pdsi_cube.hpp"
#include "oracles.hpp"

using namespace droughtcast;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string read_text(const std::filesystem::path& p) {
    const auto bytes = oracle::file_bytes(p);
    return {bytes.begin(), bytes.end()};
}

std::string hash_line(const std::string& out) {
    const auto b = out.find("config_hash=");
    return b == std::string::npos ? "" : out.substr(b, out.find('\n', b) - b);
}

const std::vector<std::string> kSmall{"--set", "synth.t_len=60", "--set", "synth.rows=4", "--set", "synth.cols=4"};

std::vector<std::string> with_small(std::vector<std::string> args) {
    args.insert(args.end(), kSmall.begin(), kSmall.end());
    return args;
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("config text parsing") {
    const auto e = parse_config_text("# comment\n\n seed = 4 \nmodels=logreg,gbdt\n");
    REQUIRE(e.size() == 2);
    CHECK(e[0] == std::pair<std::string, std::string>{"seed", "4"});
    CHECK(e[1].second == "logreg,gbdt");
    CHECK_THROWS_AS(parse_config_text("seed 4"), ArgumentError);
}

TEST_CASE("synth is deterministic and records its config") {
    oracle::TempDir dir("cli_synth");
    const Run a = run(with_small({"synth", "--out", (dir / "a.pdsc").string(), "--seed", "5"}));
    const Run b = run(with_small({"synth", "--out", (dir / "nested/b.pdsc").string(), "--seed", "5"}));
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(oracle::file_bytes(dir / "a.pdsc") == oracle::file_bytes(dir / "nested/b.pdsc"));
    CHECK(hash_line(a.out) == hash_line(b.out));
    CHECK_FALSE(hash_line(a.out).empty());
    CHECK(load_cube(dir / "a.pdsc").dims() == CubeDims{60, 4, 4});
    const Run replay = run({"synth", "--config", (dir / "a.pdsc.config").string(), "--out", (dir / "c.pdsc").string()});
    REQUIRE(replay.code == 0);
    CHECK(oracle::file_bytes(dir / "c.pdsc") == oracle::file_bytes(dir / "a.pdsc"));
    CHECK(hash_line(replay.out) == hash_line(a.out));
}

TEST_CASE("stats on a crafted cube") {
    oracle::TempDir dir("cli_stats");
    // One in four valid entries is at or below -2.
    save_cube(PdsiCube({2, 1, 2}, std::vector<float>{-3.0f, 0.5f, 1.0f, 2.0f}), dir / "c.pdsc");
    const Run r = run({"stats", (dir / "c.pdsc").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("pct_drought=25") != std::string::npos);
    CHECK(r.out.find("pct_normal=75") != std::string::npos);
}

TEST_CASE("train, predict, evaluate and render") {
    oracle::TempDir dir("cli_flow");
    REQUIRE(run(with_small({"synth", "--out", (dir / "cube.pdsc").string()})).code == 0);
    const std::string cube = (dir / "cube.pdsc").string();
    for (const char* model : {"baseline", "logreg"}) {
        const std::string m = (dir / model).string();
        const Run t = run({"train", cube, "--model", model, "--horizon", "1", "--out", m});
        REQUIRE(t.code == 0);
        CHECK(std::filesystem::exists(dir / model / "train.log"));
        CHECK(std::filesystem::exists(dir / model / "resolved.config"));
        const Run p = run({"predict", (dir / model / "model.txt").string(), cube, "--out", m});
        REQUIRE(p.code == 0);
        const Run e = run({"evaluate", (dir / model / "forecast.pdsf").string(), cube, "--out", m});
        REQUIRE(e.code == 0);
        CHECK(read_text(dir / model / "metrics.csv").find("roc_auc") != std::string::npos);
        if (std::string(model) == "baseline") {
            CHECK(e.out.find("roc_auc=0.5\n") != std::string::npos);
        }
    }
    const std::string map = (dir / "logreg" / "roc_auc_map.csv").string();
    REQUIRE(run({"render", map, "--out", (dir / "a.svg").string()}).code == 0);
    REQUIRE(run({"render", map, "--out", (dir / "b.svg").string()}).code == 0);
    CHECK(oracle::file_bytes(dir / "a.svg") == oracle::file_bytes(dir / "b.svg"));
    CHECK(run({"render", cube, "--month", "3", "--out", (dir / "c.svg").string()}).code == 0);
    CHECK(run({"render", (dir / "logreg" / "forecast.pdsf").string(), "--out", (dir / "d.svg").string()}).code == 0);
    CHECK(run({"render", cube, "--month", "999", "--out", (dir / "e.svg").string()}).code == 1);
}

TEST_CASE("precedence: defaults, file, --set, flags, --seed") {
    oracle::TempDir dir("cli_prec");
    {
        std::ofstream f(dir / "run.config");
        f << "seed=3\nsynth.t_len=60\nsynth.rows=4\nsynth.cols=4\nhorizons=3\nmodels=gbdt\n";
    }
    const std::string cfg = (dir / "run.config").string();
    REQUIRE(run({"train", "--config", cfg, "--set", "gbdt.n_rounds=5", "--horizon", "2", "--seed", "9", "--out",
                 (dir / "m").string(), "--model", "baseline"})
                .code == 0);
    const std::string resolved = read_text(dir / "m" / "resolved.config");
    CHECK(resolved.find("seed=9\n") != std::string::npos);
    CHECK(resolved.find("horizons=2\n") != std::string::npos);
    CHECK(resolved.find("models=baseline\n") != std::string::npos);
    CHECK(resolved.find("gbdt.n_rounds=5\n") != std::string::npos);
    CHECK(resolved.find("synth.t_len=60\n") != std::string::npos);
}

TEST_CASE("exit codes") {
    oracle::TempDir dir("cli_exit");
    CHECK(run({}).code == 1);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"stats", "--set", "bogus=1"}).code == 1);
    CHECK(run({"stats", (dir / "missing.pdsc").string()}).code == 2);
    CHECK(run({"synth"}).code == 1);  // needs --out
    CHECK(run({"stats", "--threads", "x"}).code == 1);
    {
        std::ofstream f(dir / "junk.pdsc", std::ios::binary);
        f << "JUNKJUNKJUNK";
    }
    const Run junk = run({"stats", (dir / "junk.pdsc").string()});
    CHECK(junk.code == 2);
    CHECK(junk.err.find("error") != std::string::npos);
    // A wildly large step makes the ConvLSTM blow up.
    const Run diverged = run(with_small({"train", "--model", "convlstm", "--set", "convlstm.step_size=1e300", "--set",
                                         "convlstm.max_epochs=3", "--set", "history_len=2", "--out",
                                         (dir / "div").string()}));
    CHECK(diverged.code == 3);
}

} // TEST_SUITE
