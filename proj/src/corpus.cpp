#include "fogdet/dataset.hpp"

#include "fogdet/error.hpp"
#include "fogdet/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace fogdet {

namespace {

// block = axis-aligned rectangle, disk = filled circle, wedge = upward
// isoceles triangle; class ids in this order.
const char* kClassNames[3] = {"block", "disk", "wedge"};

struct ShapeBox {
    int class_id = 0;
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double cx() const { return 0.5 * (x_min + x_max); }
    double cy() const { return 0.5 * (y_min + y_max); }
};

void fill_block(Image& img, const ShapeBox& s, double r, double g, double b) {
    for (int y = s.y_min; y < s.y_max; y++)
        for (int x = s.x_min; x < s.x_max; x++) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
}

void fill_disk(Image& img, const ShapeBox& s, int cx, int cy, int rad, double r, double g, double b) {
    for (int y = s.y_min; y < s.y_max; y++)
        for (int x = s.x_min; x < s.x_max; x++) {
            int dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy > rad * rad) continue;
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
}

// Row y of the triangle spans round(w * (y+1)/h) pixels centered in the box;
// the last row spans the full base, so the tight pixel bbox is the box
// itself.
void fill_wedge(Image& img, const ShapeBox& s, double r, double g, double b) {
    int w = s.x_max - s.x_min;
    int h = s.y_max - s.y_min;
    for (int yr = 0; yr < h; yr++) {
        int span = std::max(1, (int)std::lround((double)w * (yr + 1) / h));
        int x0 = s.x_min + (w - span) / 2;
        for (int x = x0; x < x0 + span; x++) {
            img.at(s.y_min + yr, x, 0) = r;
            img.at(s.y_min + yr, x, 1) = g;
            img.at(s.y_min + yr, x, 2) = b;
        }
    }
}

Image render_scene(int W, int H, SplitMix64& rng, std::vector<ShapeBox>* boxes_out) {
    Image img;
    img.width = W;
    img.height = H;
    img.data.assign((size_t)W * H * 3, 0.0);
    double base = rng.next_in(0.68, 0.78);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            double v = std::clamp(base + 0.08 * (rng.next_double() - 0.5), 0.0, 1.0);
            img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = v;
        }

    // large shapes keep the detection task learnable from scratch: boxes
    // cover 35-60% of the image side, so random box predictions overlap them
    // often enough to seed the iou-gated matching
    std::vector<ShapeBox> placed;
    int want = 1 + (int)rng.next_below(2);
    double min_dist = 0.5 * W;
    for (int k = 0; k < want; k++) {
        for (int attempt = 0; attempt < 30; attempt++) {
            int cls = (int)rng.next_below(3);
            ShapeBox s;
            s.class_id = cls;
            int cx = 0, cy = 0, rad = 0;
            if (cls == 1) {
                rad = (int)(W * 0.18) + (int)rng.next_below((unsigned long long)(W * 0.11));
                cx = 2 + rad + (int)rng.next_below((unsigned long long)(W - 5 - 2 * rad));
                cy = 2 + rad + (int)rng.next_below((unsigned long long)(H - 5 - 2 * rad));
                s.x_min = cx - rad;
                s.y_min = cy - rad;
                s.x_max = cx + rad + 1;
                s.y_max = cy + rad + 1;
            } else {
                int w = (int)(W * 0.35) + (int)rng.next_below((unsigned long long)(W * 0.25));
                int h = (int)(H * 0.35) + (int)rng.next_below((unsigned long long)(H * 0.25));
                s.x_min = 2 + (int)rng.next_below((unsigned long long)(W - 3 - w));
                s.y_min = 2 + (int)rng.next_below((unsigned long long)(H - 3 - h));
                s.x_max = s.x_min + w;
                s.y_max = s.y_min + h;
            }
            bool clash = false;
            for (const ShapeBox& other : placed)
                if (std::hypot(s.cx() - other.cx(), s.cy() - other.cy()) < min_dist) clash = true;
            if (clash) continue;

            double hi = rng.next_in(0.78, 0.95);
            double lo1 = rng.next_in(0.05, 0.18);
            double lo2 = rng.next_in(0.05, 0.18);
            if (cls == 0) fill_block(img, s, hi, lo1, lo2);
            if (cls == 1) fill_disk(img, s, cx, cy, rad, lo1, hi, lo2);
            if (cls == 2) fill_wedge(img, s, lo1, lo2, hi);
            placed.push_back(s);
            break;
        }
    }
    *boxes_out = placed;
    return img;
}

DepthMap ramp_depth(int W, int H) {
    DepthMap d;
    d.width = W;
    d.height = H;
    d.data.resize((size_t)W * H);
    for (int y = 0; y < H; y++) {
        double v = 1.0 + 9.0 * (H > 1 ? (double)y / (H - 1) : 0.0);
        for (int x = 0; x < W; x++) d.at(y, x) = v;
    }
    return d;
}

std::string annotation_xml(const std::string& filename, int W, int H,
                           const std::vector<ShapeBox>& boxes) {
    std::string xml;
    xml += "<annotation>\n";
    xml += "  <filename>" + filename + "</filename>\n";
    xml += "  <size>\n";
    xml += "    <width>" + std::to_string(W) + "</width>\n";
    xml += "    <height>" + std::to_string(H) + "</height>\n";
    xml += "    <depth>3</depth>\n";
    xml += "  </size>\n";
    for (const ShapeBox& s : boxes) {
        xml += "  <object>\n";
        xml += "    <name>" + std::string(kClassNames[s.class_id]) + "</name>\n";
        xml += "    <difficult>0</difficult>\n";
        xml += "    <bndbox>\n";
        xml += "      <xmin>" + std::to_string(s.x_min) + "</xmin>\n";
        xml += "      <ymin>" + std::to_string(s.y_min) + "</ymin>\n";
        xml += "      <xmax>" + std::to_string(s.x_max) + "</xmax>\n";
        xml += "      <ymax>" + std::to_string(s.y_max) + "</ymax>\n";
        xml += "    </bndbox>\n";
        xml += "  </object>\n";
    }
    xml += "</annotation>\n";
    return xml;
}

void write_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

} // namespace

std::pair<DatasetSpec, DatasetSpec> make_corpus(const std::string& out_dir, const CorpusOptions& opt) {
    if (opt.clear_count < 1 || opt.real_fog_count < 0)
        throw error(errc::invalid_param, "corpus needs at least one clear sample");
    if (opt.width < 48 || opt.height < 48)
        throw error(errc::invalid_param, "corpus images must be at least 48x48");

    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "depth");
    fs::create_directories(fs::path(out_dir) / "annotations");

    SplitMix64 rng(opt.seed);
    DepthMap depth = ramp_depth(opt.width, opt.height);
    const std::string depth_path = (fs::path(out_dir) / "depth" / "ramp.pfm").string();
    save_pfm(depth_path, depth);

    auto emit = [&](const std::string& stem, bool fogged, std::string* image_rel) {
        std::vector<ShapeBox> boxes;
        Image img = render_scene(opt.width, opt.height, rng, &boxes);
        if (fogged) {
            double beta = rng.next_in(0.06, 0.15);
            img = render_fog(img, depth, FogParams{beta, kDefaultAirlight});
        }
        *image_rel = "images/" + stem + ".ppm";
        save_ppm((fs::path(out_dir) / *image_rel).string(), img);
        write_text((fs::path(out_dir) / "annotations" / (stem + ".xml")).string(),
                   annotation_xml(stem + ".ppm", opt.width, opt.height, boxes));
    };

    auto manifest_entry = [&](const std::string& stem, const std::string& image_rel, bool with_depth,
                              const char* domain) {
        std::string entry = "    {\n";
        entry += "      \"image\": \"" + image_rel + "\",\n";
        if (with_depth) entry += "      \"depth\": \"depth/ramp.pfm\",\n";
        entry += "      \"annotation\": \"annotations/" + stem + ".xml\",\n";
        entry += "      \"domain\": \"" + std::string(domain) + "\"\n";
        entry += "    }";
        return entry;
    };

    auto write_manifest = [&](const std::string& name, const std::vector<std::string>& entries) {
        std::string text = "{\n  \"class_names\": [\"block\", \"disk\", \"wedge\"],\n  \"samples\": [\n";
        for (size_t i = 0; i < entries.size(); i++) {
            text += entries[i];
            text += i + 1 < entries.size() ? ",\n" : "\n";
        }
        text += "  ]\n}\n";
        write_text((fs::path(out_dir) / name).string(), text);
    };

    char stem[32];
    std::vector<std::string> clear_entries, fog_entries;
    for (int i = 0; i < opt.clear_count; i++) {
        std::snprintf(stem, sizeof stem, "clear_%03d", i);
        std::string rel;
        emit(stem, false, &rel);
        clear_entries.push_back(manifest_entry(stem, rel, true, "clear"));
    }
    for (int i = 0; i < opt.real_fog_count; i++) {
        std::snprintf(stem, sizeof stem, "fog_%03d", i);
        std::string rel;
        emit(stem, true, &rel);
        fog_entries.push_back(manifest_entry(stem, rel, false, "real_fog"));
    }
    write_manifest("clear.json", clear_entries);
    write_manifest("real_fog.json", fog_entries);

    // reloading exercises the same path users take and validates the files
    return {load_manifest((fs::path(out_dir) / "clear.json").string()),
            load_manifest((fs::path(out_dir) / "real_fog.json").string())};
}

} // namespace fogdet
