#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "mmflow/config.hpp"
#include "mmflow/error.hpp"

using namespace mmflow;

namespace {

// Reference hash computed independently of the library: FNV-1a 64 over the
// canonical "key=value\n" lines in sorted order.
uint64_t ref_digest(std::vector<std::pair<std::string, std::string>> kv) {
    std::vector<std::string> lines;
    for (auto& [k, v] : kv) lines.push_back(k + "=" + v + "\n");
    std::sort(lines.begin(), lines.end());
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& l : lines)
        for (unsigned char c : l) h = (h ^ c) * 0x100000001b3ull;
    return h;
}

template <typename Fn>
std::string error_text(Fn&& fn) {
    try {
        fn();
    } catch (const UsageError& e) {
        return e.what();
    }
    return "";
}

std::filesystem::path scratch_dir() {
    auto p = std::filesystem::temp_directory_path() / "mmflow_config_test";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE_BEGIN("config");

TEST_CASE("parse keeps order and value spelling") {
    const std::string text =
        "# experiment\n"
        "\n"
        "seed = 7\n"
        "  train.lr =  1e-3 \n"
        "model.modalities = img:4:2, txt:8\n";
    auto cfg = ExperimentConfig::parse_text(text);
    CHECK(cfg.has("seed"));
    CHECK(!cfg.has("out.dir"));
    CHECK(cfg.str("train.lr", "") == "1e-3");
    CHECK(cfg.to_text() == "seed = 7\ntrain.lr = 1e-3\nmodel.modalities = img:4:2, txt:8\n");

    auto again = ExperimentConfig::parse_text(cfg.to_text());
    CHECK(again.to_text() == cfg.to_text());
    CHECK(again.digest() == cfg.digest());
}

TEST_CASE("parse rejects malformed input, naming the line") {
    auto msg = error_text([] { ExperimentConfig::parse_text("seed = 1\nbogus.key = 2\n"); });
    CHECK(msg.find("bogus.key") != std::string::npos);
    CHECK(msg.find("line 2") != std::string::npos);

    msg = error_text([] { ExperimentConfig::parse_text("seed\n"); });
    CHECK(msg.find("line 1") != std::string::npos);

    msg = error_text([] { ExperimentConfig::parse_text("= 3\n"); });
    CHECK(msg.find("empty key") != std::string::npos);

    msg = error_text([] { ExperimentConfig::parse_text("seed = 1\nseed = 2\n"); });
    CHECK(msg.find("duplicate") != std::string::npos);

    CHECK_THROWS_AS(ExperimentConfig::parse_file("/nonexistent/config"), UsageError);
}

TEST_CASE("typed getters and their failures") {
    auto cfg = ExperimentConfig::parse_text(
        "seed = 18446744073709551615\n"
        "train.warmup_steps = 250\n"
        "train.lr = 2.5e-4\n"
        "sample.use_ema = true\n"
        "data.kind = checkerboard\n");
    CHECK(cfg.u64("seed", 0) == 18446744073709551615ull);
    CHECK(cfg.integer("train.warmup_steps", -1) == 250);
    CHECK(cfg.real("train.lr", 0.0) == doctest::Approx(2.5e-4));
    CHECK(cfg.flag("sample.use_ema", false));
    CHECK(cfg.str_req("data.kind") == "checkerboard");

    CHECK(cfg.integer("train.total_steps", 42) == 42);
    CHECK(cfg.real("sample.gamma", 3.5) == 3.5);
    CHECK_FALSE(cfg.flag("model.kind", false));
    CHECK(cfg.str("out.dir", "fallback") == "fallback");
    auto msg = error_text([&] { cfg.str_req("out.dir"); });
    CHECK(msg.find("out.dir") != std::string::npos);

    auto bad = ExperimentConfig::parse_text(
        "train.warmup_steps = ten\n"
        "sample.use_ema = maybe\n"
        "train.lr = 1..0\n");
    msg = error_text([&] { bad.integer("train.warmup_steps", 0); });
    CHECK(msg.find("train.warmup_steps") != std::string::npos);
    CHECK(msg.find("ten") != std::string::npos);
    CHECK_THROWS_AS(bad.flag("sample.use_ema", true), UsageError);
    CHECK_THROWS_AS(bad.real("train.lr", 0.0), UsageError);
    CHECK_THROWS_AS(bad.u64("train.warmup_steps", 0), UsageError);
}

TEST_CASE("set validates the key and replaces in place") {
    auto cfg = ExperimentConfig::parse_text("seed = 1\ntrain.lr = 0.1\n");
    cfg.set("seed", "2");
    CHECK(cfg.to_text() == "seed = 2\ntrain.lr = 0.1\n");
    cfg.set("sample.steps", "10");
    CHECK(cfg.to_text() == "seed = 2\ntrain.lr = 0.1\nsample.steps = 10\n");
    CHECK_THROWS_AS(cfg.set("nope", "1"), UsageError);
}

TEST_CASE("digest matches the reference hash and ignores entry order") {
    auto a = ExperimentConfig::parse_text("seed = 3\ntrain.lr = 1e-3\ndata.kind = checkerboard\n");
    auto b = ExperimentConfig::parse_text("data.kind = checkerboard\nseed = 3\ntrain.lr = 1e-3\n");
    CHECK(a.digest() == b.digest());
    CHECK(a.digest() ==
          ref_digest({{"seed", "3"}, {"train.lr", "1e-3"}, {"data.kind", "checkerboard"}}));

    CHECK(ExperimentConfig::parse_text("").digest() == ref_digest({}));

    auto c = ExperimentConfig::parse_text("seed = 4\ntrain.lr = 1e-3\ndata.kind = checkerboard\n");
    CHECK(c.digest() != a.digest());

    a.set("seed", "4");
    CHECK(a.digest() == c.digest());
}

TEST_CASE("file round-trip preserves bytes") {
    auto dir = scratch_dir();
    auto path = (dir / "cfg.txt").string();
    auto cfg = ExperimentConfig::parse_text("seed = 9\nmodel.modalities = xy:2\ndata.kind = checkerboard\n");
    cfg.write_file(path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(bytes == cfg.to_text());

    auto back = ExperimentConfig::parse_file(path);
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.digest() == cfg.digest());
}

TEST_CASE("known keys cover the command surface") {
    const auto& keys = ExperimentConfig::known_keys();
    for (const char* k : {"seed", "out.dir", "model.kind", "train.tasks", "sample.guidance",
                          "data.kind", "bench.variants"})
        CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
}

TEST_CASE("modalities from the config") {
    auto cfg = ExperimentConfig::parse_text("model.modalities = img:4:2, txt:8 ,scalar\n");
    auto specs = config_modalities(cfg);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].name == "img");
    CHECK(specs[0].dim == 4);
    CHECK(specs[0].tokens == 2);
    CHECK(specs[0].sample_size() == 8);
    CHECK(specs[1].name == "txt");
    CHECK(specs[1].dim == 8);
    CHECK(specs[1].tokens == 1);
    CHECK(specs[2].name == "scalar");
    CHECK(specs[2].sample_size() == 1);

    CHECK_THROWS_AS(config_modalities(ExperimentConfig::parse_text("model.modalities = a:1:1:1\n")),
                    UsageError);
    CHECK_THROWS_AS(config_modalities(ExperimentConfig::parse_text("model.modalities = a:x\n")),
                    UsageError);
    CHECK_THROWS_AS(config_modalities(ExperimentConfig::parse_text("model.modalities = a, a\n")),
                    UsageError);
    CHECK_THROWS_AS(config_modalities(ExperimentConfig::parse_text("seed = 1\n")), UsageError);
}

TEST_CASE("tasks with weights") {
    auto cfg = ExperimentConfig::parse_text(
        "train.tasks = joint; t2i * 2.5 ;path(start=1:0:1,end=0:0:1)*0.25\n");
    auto tasks = config_tasks(cfg, 3);
    REQUIRE(tasks.size() == 3);
    CHECK(tasks[0].path.name == "joint");
    CHECK(tasks[0].weight == 1.0);
    CHECK(tasks[1].path.name == "t2i");
    CHECK(tasks[1].weight == 2.5);
    CHECK(tasks[1].path.start == std::vector<double>{1, 0, 1});
    CHECK(tasks[2].weight == 0.25);
    CHECK(tasks[2].path.start == std::vector<double>{1, 0, 1});
    CHECK(tasks[2].path.end == std::vector<double>{0, 0, 1});

    auto plain =
        config_tasks(ExperimentConfig::parse_text("train.tasks = path(start=1:1,end=0:0)\n"), 2);
    CHECK(plain[0].weight == 1.0);
    CHECK(plain[0].path.start == std::vector<double>{1, 1});

    CHECK_THROWS_AS(config_tasks(ExperimentConfig::parse_text("train.tasks = joint;;\n"), 3),
                    UsageError);
    CHECK_THROWS_AS(config_tasks(ExperimentConfig::parse_text("train.tasks = joint*fast\n"), 3),
                    UsageError);
    CHECK_THROWS_AS(config_tasks(ExperimentConfig::parse_text("seed = 1\n"), 3), UsageError);
}

TEST_CASE("guidance matrix parsing uses 1-based positions") {
    CHECK(parse_guidance("", 3).size() == 0);
    CHECK(parse_guidance("  ", 3).size() == 0);

    auto g = parse_guidance("1,2=2.0; 3,1=4", 3);
    CHECK(g.size() == 3);
    CHECK(g.at(0, 1) == 2.0);
    CHECK(g.at(2, 0) == 4.0);
    CHECK(g.at(1, 2) == 1.0);

    CHECK(parse_guidance("1,2=2.0", 2).at(0, 1) == 2.0);

    CHECK_THROWS_AS(parse_guidance("1=2", 3), UsageError);
    CHECK_THROWS_AS(parse_guidance("1,2", 3), UsageError);
    CHECK_THROWS_AS(parse_guidance("1,2=x", 3), UsageError);
    CHECK_THROWS_AS(parse_guidance("0,1=2", 3), UsageError);
    CHECK_THROWS_AS(parse_guidance("1,9=2", 3), UsageError);
    CHECK_THROWS_AS(parse_guidance("2,2=2", 3), UsageError);
}

TEST_CASE("trainer and sampler builders map the keys") {
    auto cfg = ExperimentConfig::parse_text(
        "seed = 11\n"
        "schedule.kind = cosine\n"
        "schedule.parameterization = eps\n"
        "schedule.tsampler = lognorm(0.5,2)\n"
        "train.lr = 0.01\n"
        "train.warmup_steps = 5\n"
        "train.total_steps = 77\n"
        "train.batch_size = 9\n"
        "train.ema_decay = 0.5\n"
        "train.ema_interval = 4\n"
        "sample.steps = 13\n"
        "sample.gamma = 1.5\n"
        "sample.guidance = 1,2=2\n");

    TrainerConfig tc = config_trainer(cfg);
    CHECK(tc.schedule == ScheduleKind::Cosine);
    CHECK(tc.parameterization == Parameterization::Eps);
    CHECK(tc.tsampler.kind == TimestepSampler::Kind::LogitNormal);
    CHECK(tc.tsampler.m == 0.5);
    CHECK(tc.tsampler.s == 2.0);
    CHECK(tc.lr == 0.01);
    CHECK(tc.warmup_steps == 5);
    CHECK(tc.total_steps == 77);
    CHECK(tc.batch_size == 9);
    CHECK(tc.ema_decay == 0.5);
    CHECK(tc.ema_interval == 4);
    CHECK(tc.seed == 11);

    SamplerConfig sc = config_sampler(cfg, 2);
    CHECK(sc.steps == 13);
    CHECK(sc.gamma == 1.5);
    CHECK(sc.guidance.size() == 2);
    CHECK(sc.guidance.at(0, 1) == 2.0);
    CHECK(sc.schedule == ScheduleKind::Cosine);
    CHECK(sc.parameterization == Parameterization::Eps);
    CHECK(sc.seed == 11);

    auto d = ExperimentConfig::parse_text("");
    TrainerConfig td = config_trainer(d);
    CHECK(td.schedule == ScheduleKind::Rf);
    CHECK(td.parameterization == Parameterization::Velocity);
    CHECK(td.tsampler.kind == TimestepSampler::Kind::Uniform);
    SamplerConfig sd = config_sampler(d, 2);
    CHECK(sd.steps == 50);
    CHECK(sd.gamma == 3.0);
    CHECK(sd.guidance.size() == 0);
}

TEST_CASE("model from the config") {
    auto count_floats = [](const VelocityModel& m) {
        size_t n = 0;
        for (const auto& [name, p] : m.named_parameters()) {
            size_t k = 1;
            for (int d : p.shape()) k *= static_cast<size_t>(d);
            n += k;
        }
        return n;
    };

    auto cfg = ExperimentConfig::parse_text(
        "model.modalities = a:2,b:3\nmodel.width = 8\nmodel.depth = 2\nmodel.time_dim = 4\n");
    auto specs = config_modalities(cfg);
    auto mlp = config_model(cfg, specs, 1);
    CHECK(!mlp->named_parameters().empty());

    auto wide = ExperimentConfig::parse_text(
        "model.modalities = a:2,b:3\nmodel.width = 16\nmodel.depth = 2\nmodel.time_dim = 4\n");
    CHECK(count_floats(*config_model(wide, specs, 1)) > count_floats(*mlp));

    auto omni = ExperimentConfig::parse_text(
        "model.kind = omni\nmodel.modalities = a:2,b:3\nmodel.blocks = 1\nmodel.width = 8\n"
        "model.time_dim = 4\nmodel.ffn_mult = 2\n");
    CHECK(!config_model(omni, specs, 1)->named_parameters().empty());

    auto bad = ExperimentConfig::parse_text("model.kind = cnn\nmodel.modalities = a:2\n");
    auto msg = error_text([&] { config_model(bad, config_modalities(bad), 1); });
    CHECK(msg.find("model.kind") != std::string::npos);
}

TEST_SUITE_END();
