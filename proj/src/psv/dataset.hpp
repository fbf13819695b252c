#pragma once

#include <string>
#include <vector>

#include "psv/image.hpp"
#include "psv/tensor.hpp"

namespace psv {

struct Sample {
    ImageRgb image;
    LabelMask label;
};

// Disjoint train/val/test file lists (basenames without extension).
struct DatasetIndex {
    std::string root;
    std::vector<std::string> train, val, test;

    size_t size() const { return train.size() + val.size() + test.size(); }
    const std::vector<std::string>& split_names(const std::string& split) const;
};

// Split sizes for n items: val = round(n/10), test = floor(3n/10), train
// takes the remainder. Reproduces the published 2550/425/1274 for n = 4249.
void split_counts(size_t n, size_t& train_n, size_t& val_n, size_t& test_n);

// Seeded shuffle + contiguous cut per split_counts.
DatasetIndex split(std::vector<std::string> names, uint64_t seed);

// Directory layout: root/{images,labels}/{name}.png plus optional
// root/split.txt ("name<TAB>split" per line). Every pair is validated:
// matching basenames, equal dims, label values in 0..5; offenders are
// listed in the error. Without a split file everything lands in train.
DatasetIndex load_dataset(const std::string& root);

void save_split_file(const std::string& path, const DatasetIndex& index);

Sample load_sample(const DatasetIndex& index, const std::string& name);
void save_sample(const std::string& root, const std::string& name, const Sample& s);

// Fraction of non-background label pixels.
double marking_ratio(const LabelMask& label);

// Batch assembly: RGB scaled to [0,1], labels copied through.
Tensor images_to_tensor(const std::vector<const ImageRgb*>& images);
LabelBatch labels_to_batch(const std::vector<const LabelMask*>& labels);

}  // namespace psv
