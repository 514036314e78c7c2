#ifndef XNAS_DATASET_HPP
#define XNAS_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "xnas/tensor.hpp"

namespace xnas {

struct DataSplit {
    std::vector<double> images;  // count * channels*height*width, row-major
    std::vector<int> labels;
    int count = 0;
};

// Images scaled to [0,1]; validation carved from the training pool by seeded
// sampling; test never intersects train/validation.
struct Dataset {
    int channels = 0;
    int height = 0;
    int width = 0;
    int classes = 0;
    DataSplit train;
    DataSplit validation;
    DataSplit test;

    int image_size() const { return channels * height * width; }
};

// Batch assembly from a split. Indices select images; labels come out in the
// same order.
Tensor make_batch(const Dataset& meta, const DataSplit& split, const std::vector<int>& indices,
                  std::vector<int>& labels_out);

struct SyntheticSpec {
    int classes = 2;
    int train_per_class = 256;
    int test_per_class = 64;
    int image_size = 16;  // square
    int channels = 3;
    double margin = 0.8;     // distance between class means, in pixel units
    double pixel_noise = 0.15;
};

// Gaussian-blob classes around per-class mean patterns; margin controls
// separability (0 = identical class distributions). Fully seeded.
Dataset gen_synthetic(const SyntheticSpec& spec, int validation_size, std::uint64_t seed);

// Standard CIFAR-10 binary batches (3073-byte records: label + 3072 pixels in
// R,G,B planes). subset_per_class picks a seeded, class-balanced subset;
// 0 keeps everything.
Dataset ingest_cifar10(const std::string& dir, int train_per_class, int test_per_class,
                       int validation_size, std::uint64_t seed);

}  // namespace xnas

#endif
