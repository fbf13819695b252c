#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "psv/dataset.hpp"
#include "psv/error.hpp"
#include "psv/generator.hpp"
#include "psv/rng.hpp"

using namespace psv;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// 4-connected component count over nonzero pixels (flood fill oracle).
int component_count(const LabelMask& mask, uint8_t category) {
    std::vector<char> seen(mask.pixels.size(), 0);
    int components = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y) != category || seen[mask.index(x, y)]) continue;
            ++components;
            stack.push_back({x, y});
            seen[mask.index(x, y)] = 1;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = cx + dx[k], ny = cy + dy[k];
                    if (!mask.inside(nx, ny) || seen[mask.index(nx, ny)]) continue;
                    if (mask.at(nx, ny) != category) continue;
                    seen[mask.index(nx, ny)] = 1;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    return components;
}

}  // namespace

TEST_CASE("the split rule reproduces the published counts") {
    size_t train_n, val_n, test_n;
    split_counts(4249, train_n, val_n, test_n);
    CHECK(train_n == 2550);
    CHECK(val_n == 425);
    CHECK(test_n == 1274);

    split_counts(10, train_n, val_n, test_n);
    CHECK(train_n == 6);
    CHECK(val_n == 1);
    CHECK(test_n == 3);
}

TEST_CASE("split shuffles deterministically and keeps parts disjoint") {
    std::vector<std::string> names;
    for (int i = 0; i < 100; ++i) names.push_back("s" + std::to_string(i));

    const DatasetIndex a = split(names, 9);
    const DatasetIndex b = split(names, 9);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    CHECK(a.train.size() == 60);
    CHECK(a.val.size() == 10);
    CHECK(a.test.size() == 30);

    std::set<std::string> all(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    all.insert(a.test.begin(), a.test.end());
    CHECK(all.size() == 100);

    const DatasetIndex c = split(names, 10);
    CHECK(a.train != c.train);

    CHECK_THROWS_AS(split({}, 1), ValidationError);
}

TEST_CASE("load_dataset validates pairs and honors the split file") {
    const fs::path dir = fresh_dir("psv_ds_valid");
    Rng rng(1);
    std::vector<std::string> names;
    for (int i = 0; i < 10; ++i) {
        Sample s;
        s.image = ImageRgb(32, 32, static_cast<uint8_t>(10 * i));
        s.label = LabelMask(32, 32, static_cast<uint8_t>(i % 6));
        const std::string name = "img" + std::to_string(i);
        save_sample(dir.string(), name, s);
        names.push_back(name);
    }

    DatasetIndex idx = load_dataset(dir.string());
    CHECK(idx.size() == 10);
    CHECK(idx.train.size() == 10);  // no split file: everything trains

    DatasetIndex chosen = split(names, 4);
    chosen.root = dir.string();
    save_split_file((dir / "split.txt").string(), chosen);
    idx = load_dataset(dir.string());
    CHECK(idx.train.size() == 6);
    CHECK(idx.val.size() == 1);
    CHECK(idx.test.size() == 3);

    const Sample back = load_sample(idx, names[3]);
    CHECK(back.image.width == 32);
    CHECK(back.label.at(0, 0) == 3);
}

TEST_CASE("load_dataset rejects out-of-range labels naming the offender") {
    const fs::path dir = fresh_dir("psv_ds_badlabel");
    Sample ok;
    ok.image = ImageRgb(16, 16, 100);
    ok.label = LabelMask(16, 16, 2);
    save_sample(dir.string(), "good", ok);

    Sample bad = ok;
    bad.label.pixels[5] = 7;
    save_sample(dir.string(), "evil", bad);

    try {
        load_dataset(dir.string());
        FAIL("expected rejection");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("evil") != std::string::npos);
        CHECK(msg.find("7") != std::string::npos);
    }
}

TEST_CASE("load_dataset rejects a missing label file") {
    const fs::path dir = fresh_dir("psv_ds_missing");
    Sample s;
    s.image = ImageRgb(16, 16, 1);
    s.label = LabelMask(16, 16, 0);
    save_sample(dir.string(), "one", s);
    fs::remove(dir / "labels" / "one.png");
    CHECK_THROWS_AS(load_dataset(dir.string()), ValidationError);
}

TEST_CASE("a lone solid white lane labels exactly {0, 2}") {
    SceneSpec spec;
    spec.canvas_px = 128;
    spec.cm_per_px = 8.0;
    spec.has_slot = false;
    LaneSpec lane;
    lane.category = kWhiteSolid;
    lane.angle_deg = 80.0;
    lane.anchor_x = 64;
    lane.anchor_y = 64;
    lane.width_m = 0.2;
    spec.lanes.push_back(lane);

    Rng rng(2);
    const Sample s = generate_scene(spec, rng);
    std::set<uint8_t> values(s.label.pixels.begin(), s.label.pixels.end());
    CHECK(values == std::set<uint8_t>{0, 2});
}

TEST_CASE("dashed lanes paint gaps but label one integral region") {
    SceneSpec spec;
    spec.canvas_px = 128;
    spec.cm_per_px = 8.0;
    spec.has_slot = false;
    spec.noise_sigma = 0.0;
    LaneSpec lane;
    lane.category = kYellowDashed;
    lane.angle_deg = 90.0;
    lane.anchor_x = 64;
    lane.anchor_y = 64;
    lane.width_m = 0.25;
    lane.dash_len_m = 1.0;
    lane.dash_gap_m = 1.0;
    spec.lanes.push_back(lane);

    Rng rng(3);
    const Scene scene = render_scene(spec, rng);
    CHECK(component_count(scene.sample.label, kYellowDashed) == 1);

    // The paint must actually be dashed: bright and dark stretches alternate
    // along the centerline.
    int bright = 0, dark = 0;
    for (int y = 4; y < 124; ++y) {
        const uint8_t v = scene.sample.image.at(64, y)[0];
        if (v > 150) ++bright;
        else ++dark;
    }
    CHECK(bright > 10);
    CHECK(dark > 10);
}

TEST_CASE("generated scenes keep the marking ratio in the expected band") {
    Rng rng(11);
    double total_ratio = 0;
    const int scenes = 100;
    for (int i = 0; i < scenes; ++i) {
        Rng srng = rng.fork(i);
        const SceneSpec spec = random_scene_spec(256, 4.0, srng);
        const Sample s = generate_scene(spec, srng);
        total_ratio += marking_ratio(s.label);
    }
    const double mean_ratio = total_ratio / scenes;
    CHECK(mean_ratio > 0.01);
    CHECK(mean_ratio < 0.06);
}

TEST_CASE("marking ratio counts non-background pixels") {
    CHECK(marking_ratio(LabelMask(10, 10, 0)) == 0.0);

    LabelMask half(10, 10, 0);
    for (int i = 0; i < 50; ++i) half.pixels[i] = 1;
    CHECK(marking_ratio(half) == 0.5);

    Rng rng(12);
    LabelMask random(20, 20);
    int marked = 0;
    for (auto& v : random.pixels) {
        v = static_cast<uint8_t>(rng.uniform_int(0, 5));
        if (v != 0) ++marked;
    }
    CHECK(marking_ratio(random) == doctest::Approx(marked / 400.0));
}

TEST_CASE("dataset generation is byte-deterministic under a fixed seed") {
    const fs::path dir_a = fresh_dir("psv_gen_a");
    const fs::path dir_b = fresh_dir("psv_gen_b");
    generate_dataset(dir_a.string(), 6, 64, 16.0, 99);
    generate_dataset(dir_b.string(), 6, 64, 16.0, 99);

    for (const char* rel : {"images/scene_00000.png", "labels/scene_00003.png", "split.txt"}) {
        std::ifstream fa(dir_a / rel, std::ios::binary), fb(dir_b / rel, std::ios::binary);
        REQUIRE(fa.good());
        REQUIRE(fb.good());
        const std::string ba((std::istreambuf_iterator<char>(fa)),
                             std::istreambuf_iterator<char>());
        const std::string bb((std::istreambuf_iterator<char>(fb)),
                             std::istreambuf_iterator<char>());
        CHECK(ba == bb);
    }

    const DatasetIndex idx = load_dataset(dir_a.string());
    CHECK(idx.train.size() == 4);  // 6 items: 6/10 -> val 1, test 1, train 4
    CHECK(idx.val.size() == 1);
    CHECK(idx.test.size() == 1);
}

TEST_CASE("slot scenes stay inside the canvas for many seeds") {
    Rng rng(21);
    int with_slot = 0;
    for (int i = 0; i < 40; ++i) {
        Rng srng = rng.fork(1000 + i);
        const SceneSpec spec = random_scene_spec(128, 8.0, srng);
        const Scene scene = render_scene(spec, srng);  // validate() runs inside
        if (spec.has_slot) {
            ++with_slot;
            CHECK(!scene.slots.empty());
        }
    }
    CHECK(with_slot > 30);
}
