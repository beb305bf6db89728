#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cfp/config.hpp"
#include "cfp/pipeline.hpp"

using namespace cfp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / "cfp_cli_test" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A configuration small enough that the whole chain runs in seconds while
// still exercising every stage.
std::string tiny_config(const std::string& out_dir) {
    std::ostringstream os;
    os << "classes = 4\n"
       << "image_side = 8\n"
       << "sigma_x = 0.05\n"
       << "seed = 11\n"
       << "shots = 4\n"
       << "test_per_class = 5\n"
       << "pool_per_class = 10\n"
       << "seen_classes = 0,1\n"
       << "unseen_classes = 2,3\n"
       << "timesteps = 8\n"
       << "denoiser_hidden = 32\n"
       << "time_embed_dim = 4\n"
       << "diffusion_steps = 60\n"
       << "diffusion_batch = 16\n"
       << "classifier_hidden = 32\n"
       << "classifier_steps = 60\n"
       << "classifier_batch = 16\n"
       << "dump_triplets = 2\n"
       << "encoder_hidden = 32\n"
       << "embed_dim = 16\n"
       << "encoder_steps = 60\n"
       << "encoder_batch = 16\n"
       << "prompt_length = 2\n"
       << "prompt_epochs = 25\n"
       << "eval_seeds = 2\n"
       << "out_dir = " << out_dir << "\n";
    return os.str();
}

struct CsvFile {
    std::vector<std::string> comments;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    CsvFile csv;
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') {
            csv.comments.push_back(line);
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!saw_header) {
            csv.columns = cells;
            saw_header = true;
        } else {
            csv.rows.push_back(cells);
        }
    }
    return csv;
}

int col_index(const CsvFile& csv, const std::string& name) {
    for (std::size_t i = 0; i < csv.columns.size(); ++i) {
        if (csv.columns[i] == name) return static_cast<int>(i);
    }
    FAIL("column not found: ", name);
    return -1;
}

}  // namespace

TEST_CASE("gen-data writes identical datasets regardless of output directory") {
    const fs::path dir_a = fresh_dir("det_a");
    const fs::path dir_b = fresh_dir("det_b");
    const fs::path cfg_a = dir_a / "run.cfg";
    const fs::path cfg_b = dir_b / "run.cfg";
    write_file(cfg_a, tiny_config((dir_a / "out").string()));
    write_file(cfg_b, tiny_config((dir_b / "out").string()));

    REQUIRE(run_cli({"gen-data", "--config", cfg_a.string()}) == 0);
    REQUIRE(run_cli({"gen-data", "--config", cfg_b.string()}) == 0);

    const ArtifactPaths a((dir_a / "out").string());
    const ArtifactPaths b((dir_b / "out").string());
    for (auto pick : {&ArtifactPaths::pool, &ArtifactPaths::train, &ArtifactPaths::test}) {
        CHECK(read_bytes((a.*pick)()) == read_bytes((b.*pick)()));
    }
    CHECK(fs::exists(a.pool_manifest()));
    CHECK(fs::exists(a.config_used()));

    // Re-running in place reproduces the same bytes.
    const std::string before = read_bytes(a.train());
    REQUIRE(run_cli({"gen-data", "--config", cfg_a.string()}) == 0);
    CHECK(read_bytes(a.train()) == before);
}

TEST_CASE("flag overrides beat the config file and are recorded") {
    const fs::path dir = fresh_dir("flags");
    const fs::path cfg_path = dir / "run.cfg";
    const fs::path out_flag = dir / "flag_out";
    write_file(cfg_path, tiny_config((dir / "cfg_out").string()));

    REQUIRE(run_cli({"gen-data", "--config", cfg_path.string(), "--seed", "123", "--out", out_flag.string()}) == 0);
    CHECK(fs::exists(out_flag / "pool.bin"));
    CHECK(!fs::exists(dir / "cfg_out"));

    const std::string used = read_bytes(out_flag / "config_used.txt");
    CHECK(used.find("seed = 123") != std::string::npos);
    CHECK(used.find("out_dir = " + out_flag.string()) != std::string::npos);
}

TEST_CASE("missing upstream artifacts name the subcommand that makes them") {
    const fs::path dir = fresh_dir("missing");
    const fs::path cfg_path = dir / "run.cfg";
    write_file(cfg_path, tiny_config((dir / "out").string()));
    ExperimentConfig cfg = load_config(cfg_path.string());

    CHECK_THROWS_WITH_AS(run_pretrain_diffusion(cfg), doctest::Contains("run `gen-data` first"), std::runtime_error);
    CHECK(run_cli({"pretrain-diffusion", "--config", cfg_path.string()}) == 1);

    REQUIRE(run_cli({"gen-data", "--config", cfg_path.string()}) == 0);
    CHECK_THROWS_WITH_AS(run_gen_cf(cfg), doctest::Contains("run `pretrain-diffusion` first"), std::runtime_error);
    CHECK_THROWS_WITH_AS(run_train_prompts(cfg), doctest::Contains("run `gen-cf` first"), std::runtime_error);
}

TEST_CASE("config parse failures carry the file and line through the CLI") {
    const fs::path dir = fresh_dir("badcfg");
    const fs::path cfg_path = dir / "bad.cfg";
    write_file(cfg_path, "classes = 6\nbogus_key = 3\n");
    CHECK(run_cli({"gen-data", "--config", cfg_path.string()}) == 1);
    try {
        load_config(cfg_path.string());
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find(cfg_path.string() + ":2:") != std::string::npos);
        CHECK(msg.find("unknown key `bogus_key`") != std::string::npos);
    }
    CHECK(run_cli({"gen-data", "--config", (dir / "nope.cfg").string()}) == 1);
    CHECK(run_cli({std::string("definitely-not-a-subcommand")}) != 0);
}

TEST_CASE("the subcommand chain produces a coherent artifact tree") {
    const fs::path dir = fresh_dir("chain");
    const fs::path cfg_path = dir / "run.cfg";
    const fs::path out = dir / "out";
    write_file(cfg_path, tiny_config(out.string()));
    ExperimentConfig cfg = load_config(cfg_path.string());
    const ArtifactPaths paths(out.string());

    for (const char* sub : {"gen-data", "pretrain-diffusion", "train-classifier", "gen-cf", "train-prompts", "eval"}) {
        CAPTURE(sub);
        REQUIRE(run_cli({sub, "--config", cfg_path.string()}) == 0);
    }
    for (const fs::path& p : {paths.denoiser(), paths.diffusion_log(), paths.classifier(), paths.classifier_log(),
                             paths.cf_pairs(), paths.cf_metrics(), paths.encoder(), paths.prompts(),
                             paths.prompt_metrics(), paths.eval_metrics(), paths.eval_cf_metrics()}) {
        CAPTURE(p.string());
        CHECK(fs::exists(p));
    }

    // Counterfactual pairs: one per train image, seen labels, real flips requested.
    std::uint64_t lineage = 0;
    double scale = 0.0;
    std::string strategy;
    const std::vector<CfRecord> records = load_cf_pairs(paths.cf_pairs(), &lineage, &scale, &strategy);
    CHECK(records.size() == 8);  // shots * |seen|
    CHECK(lineage == lineage_hash(cfg));
    CHECK(scale == cfg.guidance_scale);
    CHECK(strategy == cfg.cf_strategy);
    for (const auto& r : records) {
        CHECK((r.y == 0 || r.y == 1));
        CHECK(r.y_cf != r.y);
        CHECK(r.x.numel() == 64);
        CHECK(r.x_cf.numel() == 64);
    }

    // Metrics files carry schema and lineage comments plus the pinned columns.
    const CsvFile cfm = read_csv(paths.cf_metrics());
    REQUIRE(cfm.comments.size() == 2);
    CHECK(cfm.comments[0] == "# schema_version=1");
    char expected_hash[64];
    std::snprintf(expected_hash, sizeof(expected_hash), "# config_hash=%016llx",
                  static_cast<unsigned long long>(config_hash(cfg)));
    CHECK(cfm.comments[1] == expected_hash);
    CHECK(cfm.columns == std::vector<std::string>{"pair", "y", "y_cf", "d_l2", "d_linf", "flipped", "flip_confidence",
                                                  "leak_outside", "causal_inside", "quality_score"});
    CHECK(cfm.rows.size() == 8);

    const CsvFile em = read_csv(paths.eval_metrics());
    CHECK(em.columns == std::vector<std::string>{"seed", "arm", "lambda", "seen_acc", "unseen_acc", "margin"});
    REQUIRE(em.rows.size() == 6);  // 2 seeds x {untrained, baseline, counterfactual}
    const int arm_col = col_index(em, "arm");
    int untrained = 0, baseline = 0, counterfactual = 0;
    for (const auto& row : em.rows) {
        untrained += row[static_cast<std::size_t>(arm_col)] == "untrained";
        baseline += row[static_cast<std::size_t>(arm_col)] == "baseline";
        counterfactual += row[static_cast<std::size_t>(arm_col)] == "counterfactual";
    }
    CHECK(untrained == 2);
    CHECK(baseline == 2);
    CHECK(counterfactual == 2);

    // Image dumps: "P5\n<side> <side>\n255\n" + side*side bytes.
    for (const char* name : {"pair_000_factual.pgm", "pair_000_counterfactual.pgm", "pair_000_diff.pgm",
                             "pair_001_factual.pgm"}) {
        const fs::path p = paths.dumps_dir() / name;
        CAPTURE(p.string());
        REQUIRE(fs::exists(p));
        const std::string bytes = read_bytes(p);
        CHECK(bytes.rfind("P5\n8 8\n255\n", 0) == 0);
        CHECK(bytes.size() == 11 + 64);
    }

    SUBCASE("sweep writes one row per value with the pinned columns") {
        REQUIRE(run_cli({"sweep", "--config", cfg_path.string(), "lambda", "0", "0.5", "1", "2"}) == 0);
        const CsvFile sw = read_csv(paths.sweep_csv("lambda"));
        CHECK(sw.columns == std::vector<std::string>{"lambda", "seen_acc", "unseen_acc", "L_basic", "L_cf"});
        REQUIRE(sw.rows.size() == 4);
        const std::vector<std::string> want = {"0", "0.5", "1", "2"};
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(sw.rows[i][0] == want[i]);
            for (int col : {1, 2}) {
                const double acc = std::stod(sw.rows[i][static_cast<std::size_t>(col)]);
                CHECK(acc >= 0.0);
                CHECK(acc <= 1.0);
            }
        }

        REQUIRE(run_cli({"sweep", "--config", cfg_path.string(), "s", "0", "0.5"}) == 0);
        const CsvFile ss = read_csv(paths.sweep_csv("s"));
        CHECK(ss.columns == std::vector<std::string>{"s", "flip_rate", "mean_quality", "mean_d_l2", "mean_outside",
                                                     "mean_inside", "mean_outside_px", "mean_inside_px"});
        CHECK(ss.rows.size() == 2);
    }

    SUBCASE("sweep rejects unknown axes and malformed values") {
        CHECK_THROWS_WITH_AS(run_sweep(cfg, "nope", {"1"}), doctest::Contains("unknown axis"), std::runtime_error);
        CHECK_THROWS_WITH_AS(run_sweep(cfg, "lambda", {"abc"}), doctest::Contains("invalid lambda value"),
                             std::runtime_error);
        CHECK_THROWS_WITH_AS(run_sweep(cfg, "lambda", {"-1"}), doctest::Contains("must be >= 0"), std::runtime_error);
        CHECK_THROWS_WITH_AS(run_sweep(cfg, "shots", {"99"}), doctest::Contains("must lie in [1,4]"),
                             std::runtime_error);
        CHECK_THROWS_WITH_AS(run_sweep(cfg, "strategy", {"nearest"}), doctest::Contains("unknown strategy"),
                             std::runtime_error);
        CHECK(run_cli({"sweep", "--config", cfg_path.string(), "nope", "1"}) == 1);
        CHECK(run_cli({"sweep", "--config", cfg_path.string(), "lambda"}) != 0);  // values are required
    }

    SUBCASE("eval refuses artifacts from a different lineage unless told otherwise") {
        CHECK(run_cli({"eval", "--config", cfg_path.string(), "--seed", "999"}) == 1);
        CHECK(run_cli({"eval", "--config", cfg_path.string(), "--seed", "999", "--allow-lineage-mismatch"}) == 0);
        // Downstream overrides do not disturb lineage.
        CHECK(run_cli({"eval", "--config", cfg_path.string(), "--lambda", "2"}) == 0);
    }
}

TEST_CASE("verify-theory writes an all-pass report") {
    const fs::path dir = fresh_dir("theory");
    const fs::path cfg_path = dir / "run.cfg";
    write_file(cfg_path, tiny_config((dir / "out").string()));
    REQUIRE(run_cli({"verify-theory", "--config", cfg_path.string()}) == 0);

    const ArtifactPaths paths((dir / "out").string());
    const CsvFile report = read_csv(paths.theory_report());
    CHECK(report.columns == std::vector<std::string>{"check", "value", "bound", "direction", "pass"});
    REQUIRE(report.rows.size() == 11);
    for (const auto& row : report.rows) {
        CAPTURE(row[0]);
        CHECK(row[4] == "1");
    }
}
