#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xnas/config.hpp"
#include "xnas/dataset.hpp"

using namespace xnas;

namespace {

// nearest-centroid probe: fit class means on train, classify by distance
double linear_probe_accuracy(const Dataset& data) {
    const int isz = data.image_size();
    std::vector<std::vector<double>> centroids(data.classes, std::vector<double>(isz, 0.0));
    std::vector<int> counts(data.classes, 0);
    for (int i = 0; i < data.train.count; ++i) {
        const int c = data.train.labels[i];
        ++counts[c];
        for (int j = 0; j < isz; ++j)
            centroids[c][j] += data.train.images[static_cast<std::size_t>(i) * isz + j];
    }
    for (int c = 0; c < data.classes; ++c)
        for (double& v : centroids[c]) v /= counts[c];

    int correct = 0;
    for (int i = 0; i < data.test.count; ++i) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < data.classes; ++c) {
            double d = 0.0;
            for (int j = 0; j < isz; ++j) {
                const double diff =
                    data.test.images[static_cast<std::size_t>(i) * isz + j] - centroids[c][j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == data.test.labels[i]) ++correct;
    }
    return 100.0 * correct / data.test.count;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(dir);
    return dir;
}

void write_cifar_file(const std::filesystem::path& path, int records, int label_base) {
    std::ofstream os(path, std::ios::binary);
    for (int r = 0; r < records; ++r) {
        unsigned char label = static_cast<unsigned char>((label_base + r) % 10);
        os.put(static_cast<char>(label));
        for (int i = 0; i < 3072; ++i)
            os.put(static_cast<char>((r * 131 + i) % 256));
    }
}

}  // namespace

TEST_CASE("synthetic data is reproducible and well-formed") {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.train_per_class = 30;
    spec.test_per_class = 10;
    spec.image_size = 16;
    Dataset a = gen_synthetic(spec, 8, 42);
    Dataset b = gen_synthetic(spec, 8, 42);
    CHECK(a.train.images == b.train.images);
    CHECK(a.validation.images == b.validation.images);
    CHECK(a.test.images == b.test.images);
    CHECK(a.train.count == 52);
    CHECK(a.validation.count == 8);
    CHECK(a.test.count == 20);
    for (double v : a.train.images) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    Dataset c = gen_synthetic(spec, 8, 43);
    CHECK(a.train.images != c.train.images);
}

TEST_CASE("large margin is linearly separable, zero margin is chance") {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.train_per_class = 120;
    spec.test_per_class = 120;
    spec.image_size = 16;
    spec.margin = 0.8;
    Dataset wide = gen_synthetic(spec, 16, 7);
    CHECK(linear_probe_accuracy(wide) >= 99.0);

    spec.margin = 0.0;
    Dataset flat = gen_synthetic(spec, 16, 7);
    const double acc = linear_probe_accuracy(flat);
    CHECK(acc > 40.0);
    CHECK(acc < 60.0);
}

TEST_CASE("validation carve is disjoint and seeded") {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.train_per_class = 50;
    spec.test_per_class = 4;
    Dataset data = gen_synthetic(spec, 20, 9);
    CHECK(data.train.count == 80);
    CHECK(data.validation.count == 20);
    // same generator settings, same carve
    Dataset again = gen_synthetic(spec, 20, 9);
    CHECK(data.validation.images == again.validation.images);
}

TEST_CASE("cifar10 ingestion parses records and scales pixels") {
    auto dir = temp_dir("xnas_cifar_ok");
    write_cifar_file(dir / "data_batch_1.bin", 40, 0);
    write_cifar_file(dir / "test_batch.bin", 20, 3);

    Dataset data = ingest_cifar10(dir.string(), 0, 0, 10, 5);
    CHECK(data.train.count == 30);  // 40 minus validation 10
    CHECK(data.validation.count == 10);
    CHECK(data.test.count == 20);
    CHECK(data.channels == 3);
    CHECK(data.height == 32);

    // label byte becomes the label; first test record has label 3
    CHECK(data.test.labels[0] == 3);
    // pixel bytes scale by 1/255
    for (double v : data.test.images) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // record 0 pixel 1 was byte value 1 -> exactly 1/255
    CHECK(data.test.images[1] == doctest::Approx(1.0 / 255.0).epsilon(1e-12));
    std::filesystem::remove_all(dir);
}

TEST_CASE("cifar10 subset selection is balanced and seeded") {
    auto dir = temp_dir("xnas_cifar_subset");
    write_cifar_file(dir / "data_batch_1.bin", 100, 0);  // 10 per class
    write_cifar_file(dir / "test_batch.bin", 50, 0);

    Dataset data = ingest_cifar10(dir.string(), 4, 2, 8, 11);
    CHECK(data.train.count + data.validation.count == 40);
    CHECK(data.test.count == 20);
    std::vector<int> counts(10, 0);
    for (int l : data.train.labels) ++counts[l];
    for (int l : data.validation.labels) ++counts[l];
    for (int c = 0; c < 10; ++c) CHECK(counts[c] == 4);

    Dataset again = ingest_cifar10(dir.string(), 4, 2, 8, 11);
    CHECK(data.train.images == again.train.images);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cifar10 rejects malformed files with file and offset") {
    auto dir = temp_dir("xnas_cifar_bad");
    write_cifar_file(dir / "data_batch_1.bin", 3, 0);
    write_cifar_file(dir / "test_batch.bin", 2, 0);
    {
        std::ofstream os(dir / "data_batch_1.bin", std::ios::binary | std::ios::app);
        os.put(0x7);  // dangling byte
    }
    try {
        ingest_cifar10(dir.string(), 0, 0, 1, 0);
        FAIL("expected format error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("data_batch_1.bin") != std::string::npos);
        CHECK(msg.find("offset") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("run config parses and validates") {
    const std::string text = R"({
        "seed": 5,
        "output_dir": "runs/demo",
        "dataset": {"type": "synthetic", "classes": 2, "train_per_class": 24,
                    "test_per_class": 8, "image_size": 16, "margin": 0.7},
        "supernet": {"width": 4},
        "train": {"epochs": 3, "batch_size": 8, "finetune_epochs": 2,
                  "validation_size": 8, "variant": "xbar_ar", "lambda": 0.5},
        "crossbar": {"sizes": [32], "sigma_over_mu": 0.2},
        "attack": {"epsilon": 0.05, "eval_steps": [1, 5]},
        "sweep": {"sigma_grid": [0.0, 0.1], "attack_steps": 0}
    })";
    RunConfig cfg = parse_run_config(text);
    CHECK(cfg.seed == 5);
    CHECK(cfg.train.seed == 5);
    CHECK(cfg.supernet_width == 4);
    CHECK(cfg.train.variant == Variant::xbar_ar);
    CHECK(cfg.train.lambda == 0.5);
    CHECK(cfg.train.specs.size() == 1);
    CHECK(cfg.train.specs[0].size == 32);
    CHECK(cfg.train.specs[0].sigma_over_mu == 0.2);
    CHECK(cfg.attack.epsilon == 0.05);
    CHECK(cfg.eval_attack_steps == std::vector<int>{1, 5});
    CHECK(cfg.sweep_attack_steps == 0);
    CHECK(cfg.validation_size == 8);
}

TEST_CASE("run config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(parse_run_config(R"({"sede": 1})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"epoch": 3}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"dataset": {"type": "imagenet"}})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"variant": "quantum"}})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("not json"), std::invalid_argument);
    // multi-size list under a single-crossbar variant
    CHECK_THROWS_AS(parse_run_config(R"({"crossbar": {"sizes": [32, 64]}})"),
                    std::invalid_argument);
}

TEST_CASE("config hash tracks meaningful fields") {
    RunConfig a = parse_run_config(R"({"seed": 1})");
    RunConfig b = parse_run_config(R"({"seed": 2})");
    RunConfig c = parse_run_config(R"({"seed": 1, "supernet": {"width": 32}})");
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a) != config_hash(c));
    CHECK(config_hash(a) == config_hash(parse_run_config(R"({"seed": 1})")));
}
