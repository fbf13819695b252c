#include "psv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "psv/error.hpp"
#include "psv/rng.hpp"

namespace fs = std::filesystem;

namespace psv {

const std::vector<std::string>& DatasetIndex::split_names(const std::string& split) const {
    if (split == "train") return train;
    if (split == "val") return val;
    if (split == "test") return test;
    throw ValidationError("unknown split '" + split + "' (want train|val|test)");
}

void split_counts(size_t n, size_t& train_n, size_t& val_n, size_t& test_n) {
    val_n = static_cast<size_t>(std::llround(static_cast<double>(n) / 10.0));
    test_n = static_cast<size_t>(std::floor(3.0 * static_cast<double>(n) / 10.0));
    if (val_n + test_n > n) val_n = n - test_n;
    train_n = n - val_n - test_n;
}

DatasetIndex split(std::vector<std::string> names, uint64_t seed) {
    if (names.empty()) throw ValidationError("split: empty item list");
    Rng rng(seed);
    rng.shuffle(names);

    size_t train_n, val_n, test_n;
    split_counts(names.size(), train_n, val_n, test_n);

    DatasetIndex idx;
    idx.train.assign(names.begin(), names.begin() + train_n);
    idx.val.assign(names.begin() + train_n, names.begin() + train_n + val_n);
    idx.test.assign(names.begin() + train_n + val_n, names.end());
    return idx;
}

namespace {

void validate_pair(const std::string& root, const std::string& name,
                   std::vector<std::string>& offenders) {
    const fs::path img_path = fs::path(root) / "images" / (name + ".png");
    const fs::path lbl_path = fs::path(root) / "labels" / (name + ".png");
    if (!fs::exists(lbl_path)) {
        offenders.push_back(name + ": missing label");
        return;
    }
    try {
        const ImageRgb img = read_png_rgb(img_path.string());
        const LabelMask lbl = read_png_gray(lbl_path.string());
        if (img.width != lbl.width || img.height != lbl.height) {
            offenders.push_back(name + ": image/label size mismatch");
            return;
        }
        for (uint8_t v : lbl.pixels) {
            if (v > 5) {
                offenders.push_back(name + ": label value " + std::to_string(v) +
                                    " out of range 0..5");
                return;
            }
        }
    } catch (const ValidationError& e) {
        offenders.push_back(name + ": " + e.what());
    }
}

}  // namespace

DatasetIndex load_dataset(const std::string& root) {
    const fs::path images_dir = fs::path(root) / "images";
    const fs::path labels_dir = fs::path(root) / "labels";
    if (!fs::is_directory(images_dir) || !fs::is_directory(labels_dir))
        throw ValidationError("dataset root '" + root + "' must contain images/ and labels/");

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ValidationError("dataset root '" + root + "' holds no images");

    std::vector<std::string> offenders;
    for (const auto& name : names) validate_pair(root, name, offenders);
    if (!offenders.empty()) {
        std::string msg = "dataset '" + root + "' has invalid pairs:";
        for (const auto& o : offenders) msg += "\n  " + o;
        throw ValidationError(msg);
    }

    DatasetIndex idx;
    idx.root = root;
    const fs::path split_path = fs::path(root) / "split.txt";
    if (fs::exists(split_path)) {
        std::ifstream in(split_path);
        std::string line;
        size_t assigned = 0;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw ValidationError("split.txt:" + std::to_string(lineno) +
                                      ": expected name<TAB>split");
            const std::string name = line.substr(0, tab);
            const std::string which = line.substr(tab + 1);
            if (!std::binary_search(names.begin(), names.end(), name))
                throw ValidationError("split.txt names unknown sample '" + name + "'");
            if (which == "train") idx.train.push_back(name);
            else if (which == "val") idx.val.push_back(name);
            else if (which == "test") idx.test.push_back(name);
            else throw ValidationError("split.txt:" + std::to_string(lineno) +
                                       ": unknown split '" + which + "'");
            ++assigned;
        }
        if (assigned != names.size())
            throw ValidationError("split.txt covers " + std::to_string(assigned) + " of " +
                                  std::to_string(names.size()) + " samples");
    } else {
        idx.train = names;
    }
    return idx;
}

void save_split_file(const std::string& path, const DatasetIndex& index) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write split file: " + path);
    for (const auto& n : index.train) out << n << "\ttrain\n";
    for (const auto& n : index.val) out << n << "\tval\n";
    for (const auto& n : index.test) out << n << "\ttest\n";
}

Sample load_sample(const DatasetIndex& index, const std::string& name) {
    Sample s;
    s.image = read_png_rgb((fs::path(index.root) / "images" / (name + ".png")).string());
    s.label = read_png_gray((fs::path(index.root) / "labels" / (name + ".png")).string());
    return s;
}

void save_sample(const std::string& root, const std::string& name, const Sample& s) {
    fs::create_directories(fs::path(root) / "images");
    fs::create_directories(fs::path(root) / "labels");
    write_png((fs::path(root) / "images" / (name + ".png")).string(), s.image);
    write_png((fs::path(root) / "labels" / (name + ".png")).string(), s.label);
}

double marking_ratio(const LabelMask& label) {
    if (label.pixels.empty()) throw ValidationError("marking_ratio: empty label");
    size_t marked = 0;
    for (uint8_t v : label.pixels)
        if (v != 0) ++marked;
    return static_cast<double>(marked) / static_cast<double>(label.pixels.size());
}

Tensor images_to_tensor(const std::vector<const ImageRgb*>& images) {
    if (images.empty()) throw ValidationError("images_to_tensor: no images");
    const int h = images[0]->height, w = images[0]->width;
    Tensor t(static_cast<int>(images.size()), 3, h, w);
    for (size_t i = 0; i < images.size(); ++i) {
        const ImageRgb& img = *images[i];
        if (img.width != w || img.height != h)
            throw ValidationError("images_to_tensor: mixed image sizes");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const uint8_t* px = img.at(x, y);
                for (int c = 0; c < 3; ++c)
                    t.at(static_cast<int>(i), c, y, x) = static_cast<float>(px[c]) / 255.0f;
            }
    }
    return t;
}

LabelBatch labels_to_batch(const std::vector<const LabelMask*>& labels) {
    if (labels.empty()) throw ValidationError("labels_to_batch: no labels");
    const int h = labels[0]->height, w = labels[0]->width;
    LabelBatch b(static_cast<int>(labels.size()), h, w);
    for (size_t i = 0; i < labels.size(); ++i) {
        const LabelMask& m = *labels[i];
        if (m.width != w || m.height != h)
            throw ValidationError("labels_to_batch: mixed label sizes");
        std::copy(m.pixels.begin(), m.pixels.end(),
                  b.data.begin() + static_cast<size_t>(i) * h * w);
    }
    return b;
}

}  // namespace psv
