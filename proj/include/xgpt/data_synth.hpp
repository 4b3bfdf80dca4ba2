#pragma once

// Synthetic caption corpus: scenes of one or two attributed objects whose
// region features are exact one-hot encodings, with bounding boxes snapped to
// a 1/256 grid so every normalized coordinate and area fraction is an exact
// binary32 value.  Captions follow "a {size} {color} {shape}", optionally
// joined to a second object by "left of" or "above"; because the features are
// noiseless the caption is a pure function of the regions, which gives
// training runs a ground-truth caption oracle.

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "xgpt/checkpoint.hpp"
#include "xgpt/representation.hpp"
#include "xgpt/rng.hpp"
#include "xgpt/training.hpp"
#include "xgpt/vocab.hpp"

namespace xgpt {

inline constexpr std::size_t kSceneGrid = 256;
inline constexpr std::size_t kSceneFeatureDim = 10;  // 4 colors + 4 shapes + 2 sizes

inline const std::vector<std::string>& scene_colors() {
    static const std::vector<std::string> v = {"red", "blue", "green", "yellow"};
    return v;
}
inline const std::vector<std::string>& scene_shapes() {
    static const std::vector<std::string> v = {"circle", "square", "triangle", "star"};
    return v;
}
inline const std::vector<std::string>& scene_sizes() {
    static const std::vector<std::string> v = {"small", "large"};
    return v;
}

inline Vocabulary build_scene_vocabulary() {
    std::vector<std::string> words = {"a"};
    for (const auto& w : scene_sizes()) words.push_back(w);
    for (const auto& w : scene_colors()) words.push_back(w);
    for (const auto& w : scene_shapes()) words.push_back(w);
    words.push_back("left");
    words.push_back("of");
    words.push_back("above");
    return Vocabulary::from_words(words);
}

struct SceneObject {
    std::size_t color = 0;  // index into scene_colors()
    std::size_t shape = 0;
    std::size_t size = 0;
    std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // grid units in [0, 256]
};

enum class SceneRelation { none, left_of, above };

struct Scene {
    std::vector<SceneObject> objects;  // 1 or 2; with 2, objects[0] is the left/top one
    SceneRelation relation = SceneRelation::none;
};

inline std::string scene_caption(const Scene& scene) {
    auto phrase = [](const SceneObject& o) {
        return "a " + scene_sizes()[o.size] + " " + scene_colors()[o.color] + " " +
               scene_shapes()[o.shape];
    };
    if (scene.objects.size() == 1) return phrase(scene.objects[0]);
    const std::string rel = scene.relation == SceneRelation::left_of ? "left of" : "above";
    return phrase(scene.objects[0]) + " " + rel + " " + phrase(scene.objects[1]);
}

inline RegionSet scene_regions(const Scene& scene) {
    RegionSet rs;
    rs.d_feat = kSceneFeatureDim;
    for (const SceneObject& o : scene.objects) {
        std::vector<float> onehot(kSceneFeatureDim, 0.0f);
        onehot[o.color] = 1.0f;
        onehot[4 + o.shape] = 1.0f;
        onehot[8 + o.size] = 1.0f;
        rs.features.insert(rs.features.end(), onehot.begin(), onehot.end());
        const auto pos = position_vector(static_cast<double>(o.x1), static_cast<double>(o.y1),
                                         static_cast<double>(o.x2), static_cast<double>(o.y2),
                                         static_cast<double>(kSceneGrid),
                                         static_cast<double>(kSceneGrid));
        for (double p : pos) rs.positions.push_back(static_cast<float>(p));
    }
    rs.validate();
    return rs;
}

namespace detail {

// Side lengths per size class, in grid units.  The ranges are disjoint so the
// class is recoverable from either dimension.
inline std::size_t sample_extent(std::size_t size_class, RngStream& rng) {
    if (size_class == 0) return 16 + rng.next_below(33);  // small: 16..48
    return 80 + rng.next_below(33);                       // large: 80..112
}

} // namespace detail

// Deterministic scene for (seed, uid); the same pair always rebuilds the same
// scene, caption, and boxes.
inline Scene synth_scene(std::uint64_t seed, std::uint64_t uid) {
    RngStream rng(seed, uid, "scene");
    Scene scene;
    const std::size_t object_count = 1 + rng.next_below(2);
    for (std::size_t i = 0; i < object_count; ++i) {
        SceneObject o;
        o.color = rng.next_below(scene_colors().size());
        o.shape = rng.next_below(scene_shapes().size());
        o.size = rng.next_below(scene_sizes().size());
        scene.objects.push_back(o);
    }
    auto extents = [&](SceneObject& o) {
        const std::size_t w = detail::sample_extent(o.size, rng);
        const std::size_t h = detail::sample_extent(o.size, rng);
        return std::pair<std::size_t, std::size_t>{w, h};
    };
    if (object_count == 1) {
        SceneObject& o = scene.objects[0];
        auto [w, h] = extents(o);
        o.x1 = rng.next_below(kSceneGrid - w + 1);
        o.y1 = rng.next_below(kSceneGrid - h + 1);
        o.x2 = o.x1 + w;
        o.y2 = o.y1 + h;
        return scene;
    }
    SceneObject& a = scene.objects[0];
    SceneObject& b = scene.objects[1];
    auto [wa, ha] = extents(a);
    auto [wb, hb] = extents(b);
    scene.relation = rng.next_below(2) == 0 ? SceneRelation::left_of : SceneRelation::above;

    // Separated along one axis (>= 1 unit of daylight) and strictly
    // overlapping along the other, so exactly one relation holds.
    auto place = [&](std::size_t ea, std::size_t eb, std::size_t& lo_a, std::size_t& lo_b) {
        lo_a = rng.next_below(kSceneGrid - ea - eb);  // leaves >= 1 for the gap
        const std::size_t min_b = lo_a + ea + 1;
        lo_b = min_b + rng.next_below(kSceneGrid - eb - min_b + 1);
    };
    auto overlap = [&](std::size_t ea, std::size_t eb, std::size_t& lo_a, std::size_t& lo_b) {
        lo_a = rng.next_below(kSceneGrid - ea + 1);
        const std::size_t lo = lo_a + 1 > eb ? lo_a + 1 - eb : 0;
        const std::size_t hi = std::min(kSceneGrid - eb, lo_a + ea - 1);
        lo_b = lo + rng.next_below(hi - lo + 1);
    };
    if (scene.relation == SceneRelation::left_of) {
        place(wa, wb, a.x1, b.x1);
        overlap(ha, hb, a.y1, b.y1);
    } else {
        place(ha, hb, a.y1, b.y1);
        overlap(wa, wb, a.x1, b.x1);
    }
    a.x2 = a.x1 + wa;
    a.y2 = a.y1 + ha;
    b.x2 = b.x1 + wb;
    b.y2 = b.y1 + hb;
    return scene;
}

// --------------------------------------------------------------- the oracle

// Recovers the caption from region data alone.  Features must be exact
// one-hots; the relation is recomputed from the boxes.
inline std::string caption_from_regions(const RegionSet& regions) {
    regions.validate();
    if (regions.d_feat != kSceneFeatureDim) {
        throw std::invalid_argument("caption_from_regions: expected " +
                                    std::to_string(kSceneFeatureDim) + " features, got " +
                                    std::to_string(regions.d_feat));
    }
    const std::size_t n = regions.count();
    if (n > 2) {
        throw std::invalid_argument("caption_from_regions: scenes hold at most two regions");
    }
    auto decode_block = [&](std::size_t row, std::size_t offset, std::size_t len,
                            const char* what) {
        std::size_t hot = len;
        for (std::size_t i = 0; i < len; ++i) {
            const float v = regions.features[row * kSceneFeatureDim + offset + i];
            if (v == 1.0f) {
                if (hot != len) {
                    throw std::invalid_argument(std::string("caption_from_regions: multiple ") +
                                                what + " bits set in region " + std::to_string(row));
                }
                hot = i;
            } else if (v != 0.0f) {
                throw std::invalid_argument(std::string("caption_from_regions: non-binary ") + what +
                                            " entry in region " + std::to_string(row));
            }
        }
        if (hot == len) {
            throw std::invalid_argument(std::string("caption_from_regions: no ") + what +
                                        " bit set in region " + std::to_string(row));
        }
        return hot;
    };
    auto phrase = [&](std::size_t row) {
        const std::size_t color = decode_block(row, 0, 4, "color");
        const std::size_t shape = decode_block(row, 4, 4, "shape");
        const std::size_t size = decode_block(row, 8, 2, "size");
        return "a " + scene_sizes()[size] + " " + scene_colors()[color] + " " +
               scene_shapes()[shape];
    };
    if (n == 1) return phrase(0);

    const float* pa = regions.positions.data();
    const float* pb = regions.positions.data() + kPositionDim;
    const bool x_disjoint = pa[2] <= pb[0] || pb[2] <= pa[0];
    const bool y_disjoint = pa[3] <= pb[1] || pb[3] <= pa[1];
    if (x_disjoint && !y_disjoint && pa[2] <= pb[0]) {
        return phrase(0) + " left of " + phrase(1);
    }
    if (y_disjoint && !x_disjoint && pa[3] <= pb[1]) {
        return phrase(0) + " above " + phrase(1);
    }
    throw std::invalid_argument("caption_from_regions: boxes admit no expressible relation");
}

// ------------------------------------------------------------ dataset build

inline std::string image_id_for(std::uint64_t uid) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img%06llu", static_cast<unsigned long long>(uid));
    return buf;
}

inline Dataset synth_dataset(std::uint64_t seed, std::uint64_t first_uid, std::size_t count,
                             const Vocabulary& vocab) {
    Dataset data;
    data.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t uid = first_uid + i;
        const Scene scene = synth_scene(seed, uid);
        TrainExample ex;
        ex.uid = uid;
        ex.regions = scene_regions(scene);
        ex.caption = vocab.encode(scene_caption(scene));
        data.push_back(std::move(ex));
    }
    return data;
}

// ------------------------------------------------------------- file formats

inline constexpr char kFeaturesMagic[8] = {'X', 'G', 'P', 'T', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeaturesVersion = 1;

// Record layout: u32 id length, id bytes, u32 region count, u32 feature dim,
// then count*dim feature floats and count*5 position floats, little-endian.
inline void write_features(const std::string& path,
                           const std::vector<std::pair<std::string, RegionSet>>& records) {
    std::string buf;
    buf.append(kFeaturesMagic, sizeof(kFeaturesMagic));
    io::put_u32(buf, kFeaturesVersion);
    io::put_u32(buf, static_cast<std::uint32_t>(records.size()));
    for (const auto& [id, rs] : records) {
        rs.validate();
        io::put_u32(buf, static_cast<std::uint32_t>(id.size()));
        buf.append(id);
        io::put_u32(buf, static_cast<std::uint32_t>(rs.count()));
        io::put_u32(buf, static_cast<std::uint32_t>(rs.d_feat));
        for (float v : rs.features) io::put_f32(buf, v);
        for (float v : rs.positions) io::put_f32(buf, v);
    }
    io::spill(path, buf);
}

inline std::vector<std::pair<std::string, RegionSet>> read_features(const std::string& path) {
    io::Reader r(io::slurp(path), path);
    r.expect_magic(kFeaturesMagic, sizeof(kFeaturesMagic));
    const std::uint32_t version = r.u32();
    if (version != kFeaturesVersion) {
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version) +
                                 " at byte offset 8");
    }
    const std::uint32_t count = r.u32();
    std::vector<std::pair<std::string, RegionSet>> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t id_len = r.u32();
        std::string id = r.str(id_len);
        RegionSet rs;
        const std::uint32_t n = r.u32();
        rs.d_feat = r.u32();
        if (n == 0 || rs.d_feat == 0) r.fail("empty region record '" + id + "'");
        rs.features.resize(static_cast<std::size_t>(n) * rs.d_feat);
        for (float& v : rs.features) v = r.f32();
        rs.positions.resize(static_cast<std::size_t>(n) * kPositionDim);
        for (float& v : rs.positions) v = r.f32();
        records.emplace_back(std::move(id), std::move(rs));
    }
    r.expect_end();
    return records;
}

// Caption files are TSV: image_id<TAB>caption, one record per line.
inline void write_captions_tsv(const std::string& path,
                               const std::vector<std::pair<std::string, std::string>>& rows) {
    std::string buf;
    for (const auto& [id, caption] : rows) {
        buf += id;
        buf += '\t';
        buf += caption;
        buf += '\n';
    }
    io::spill(path, buf);
}

inline std::vector<std::pair<std::string, std::string>> read_captions_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected a tab");
        }
        rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return rows;
}

// Joins a features file and a caption file into training examples; every
// caption id must have features.
inline Dataset load_dataset(const std::string& features_path, const std::string& captions_path,
                            const Vocabulary& vocab) {
    std::map<std::string, RegionSet> by_id;
    for (auto& [id, rs] : read_features(features_path)) by_id.emplace(std::move(id), std::move(rs));
    Dataset data;
    for (const auto& [id, caption] : read_captions_tsv(captions_path)) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::runtime_error(captions_path + ": no features for image '" + id + "'");
        }
        TrainExample ex;
        ex.uid = detail::fnv1a64(id);
        ex.regions = it->second;
        ex.caption = vocab.encode(caption);
        data.push_back(std::move(ex));
    }
    if (data.empty()) throw std::runtime_error(captions_path + ": no caption records");
    return data;
}

} // namespace xgpt
