#include "xnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "xnas/rng.hpp"

namespace xnas {

Tensor make_batch(const Dataset& meta, const DataSplit& split, const std::vector<int>& indices,
                  std::vector<int>& labels_out) {
    const int isz = meta.image_size();
    Tensor x = Tensor::zeros({static_cast<int>(indices.size()), meta.channels, meta.height,
                              meta.width});
    labels_out.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= split.count) throw std::invalid_argument("make_batch: index range");
        std::copy_n(split.images.begin() + static_cast<std::size_t>(idx) * isz, isz,
                    x.values().begin() + static_cast<std::size_t>(i) * isz);
        labels_out[i] = split.labels[static_cast<std::size_t>(idx)];
    }
    return x;
}

namespace {

// moves `validation_size` seeded samples from pool into validation
void carve_validation(Dataset& data, int validation_size, std::uint64_t seed) {
    const int isz = data.image_size();
    const int total = data.train.count;
    if (validation_size < 0 || validation_size >= total)
        throw std::invalid_argument("dataset: validation size must be in [0, train size)");
    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x76616c63ULL));  // validation carve stream
    for (int i = total - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

    DataSplit train, val;
    for (int pos = 0; pos < total; ++pos) {
        const int idx = order[pos];
        DataSplit& dst = pos < validation_size ? val : train;
        dst.images.insert(dst.images.end(),
                          data.train.images.begin() + static_cast<std::size_t>(idx) * isz,
                          data.train.images.begin() + static_cast<std::size_t>(idx + 1) * isz);
        dst.labels.push_back(data.train.labels[static_cast<std::size_t>(idx)]);
        ++dst.count;
    }
    data.train = std::move(train);
    data.validation = std::move(val);
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec, int validation_size, std::uint64_t seed) {
    if (spec.classes < 2 || spec.train_per_class < 1 || spec.test_per_class < 1)
        throw std::invalid_argument("gen_synthetic: need >= 2 classes and >= 1 image per class");
    if (spec.image_size < 16)
        throw std::invalid_argument("gen_synthetic: image size must be >= 16");

    Dataset data;
    data.channels = spec.channels;
    data.height = spec.image_size;
    data.width = spec.image_size;
    data.classes = spec.classes;
    const int isz = data.image_size();

    // fixed unit-norm pattern per class
    Rng pattern_rng(mix_seed(seed, 0x70617474ULL));
    std::vector<std::vector<double>> patterns(spec.classes, std::vector<double>(isz));
    for (auto& p : patterns) {
        double norm = 0.0;
        for (double& v : p) {
            v = pattern_rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : p) v /= norm;
    }

    auto fill_split = [&](DataSplit& split, int per_class, Rng& rng) {
        for (int c = 0; c < spec.classes; ++c) {
            for (int i = 0; i < per_class; ++i) {
                for (int j = 0; j < isz; ++j) {
                    const double v =
                        0.5 + spec.margin * patterns[c][j] + spec.pixel_noise * rng.normal();
                    split.images.push_back(std::clamp(v, 0.0, 1.0));
                }
                split.labels.push_back(c);
                ++split.count;
            }
        }
    };

    Rng train_rng(mix_seed(seed, 0x7472696eULL));
    Rng test_rng(mix_seed(seed, 0x74657374ULL));
    fill_split(data.train, spec.train_per_class, train_rng);
    fill_split(data.test, spec.test_per_class, test_rng);
    carve_validation(data, validation_size, seed);
    return data;
}

namespace {

constexpr int kCifarImageBytes = 3072;
constexpr int kCifarRecordBytes = kCifarImageBytes + 1;
constexpr int kCifarClasses = 10;

void read_cifar_file(const std::string& path, std::vector<double>& images,
                     std::vector<int>& labels) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cifar10: cannot open " + path);
    const std::int64_t size = is.tellg();
    if (size % kCifarRecordBytes != 0)
        throw std::runtime_error("cifar10: malformed record length in " + path + " at offset " +
                                 std::to_string(size - size % kCifarRecordBytes) + " (file size " +
                                 std::to_string(size) + " is not a multiple of 3073)");
    is.seekg(0);
    const std::int64_t records = size / kCifarRecordBytes;
    std::vector<unsigned char> record(kCifarRecordBytes);
    for (std::int64_t r = 0; r < records; ++r) {
        is.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes);
        if (!is)
            throw std::runtime_error("cifar10: truncated read in " + path + " at offset " +
                                     std::to_string(r * kCifarRecordBytes));
        const int label = record[0];
        if (label >= kCifarClasses)
            throw std::runtime_error("cifar10: label byte out of range in " + path);
        labels.push_back(label);
        for (int i = 0; i < kCifarImageBytes; ++i)
            images.push_back(record[static_cast<std::size_t>(i) + 1] / 255.0);
    }
}

// seeded class-balanced subset; keeps everything when per_class == 0
void subsample(std::vector<double>& images, std::vector<int>& labels, int per_class,
               std::uint64_t seed) {
    if (per_class <= 0) return;
    std::vector<std::vector<int>> by_class(kCifarClasses);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
    Rng rng(mix_seed(seed, 0x73756273ULL));
    std::vector<int> chosen;
    for (int c = 0; c < kCifarClasses; ++c) {
        auto& pool = by_class[c];
        if (static_cast<int>(pool.size()) < per_class)
            throw std::runtime_error("cifar10: class " + std::to_string(c) + " has only " +
                                     std::to_string(pool.size()) + " images, need " +
                                     std::to_string(per_class));
        for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i)
            std::swap(pool[i], pool[rng.uniform_int(i + 1)]);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + per_class);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<double> new_images;
    std::vector<int> new_labels;
    new_images.reserve(chosen.size() * kCifarImageBytes);
    for (int idx : chosen) {
        new_images.insert(new_images.end(),
                          images.begin() + static_cast<std::size_t>(idx) * kCifarImageBytes,
                          images.begin() + static_cast<std::size_t>(idx + 1) * kCifarImageBytes);
        new_labels.push_back(labels[static_cast<std::size_t>(idx)]);
    }
    images = std::move(new_images);
    labels = std::move(new_labels);
}

}  // namespace

Dataset ingest_cifar10(const std::string& dir, int train_per_class, int test_per_class,
                       int validation_size, std::uint64_t seed) {
    Dataset data;
    data.channels = 3;
    data.height = 32;
    data.width = 32;
    data.classes = kCifarClasses;

    for (int b = 1; b <= 5; ++b) {
        const std::string path = dir + "/data_batch_" + std::to_string(b) + ".bin";
        if (std::filesystem::exists(path))
            read_cifar_file(path, data.train.images, data.train.labels);
        else if (b == 1)
            throw std::runtime_error("cifar10: missing " + path);
    }
    read_cifar_file(dir + "/test_batch.bin", data.test.images, data.test.labels);

    subsample(data.train.images, data.train.labels, train_per_class, mix_seed(seed, 1));
    subsample(data.test.images, data.test.labels, test_per_class, mix_seed(seed, 2));
    data.train.count = static_cast<int>(data.train.labels.size());
    data.test.count = static_cast<int>(data.test.labels.size());
    carve_validation(data, validation_size, seed);
    return data;
}

}  // namespace xnas
