#include "fogdet/dataset.hpp"

#include "fogdet/error.hpp"
#include "fogdet/image.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace fogdet {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Content of the first <tag>...</tag> at or after *pos. Tags carry no
// attributes in the accepted subset. Returns false when the element is
// absent; an unterminated element is malformed.
bool find_element(const std::string& xml, const std::string& tag, size_t* pos, std::string* content) {
    std::string open = "<" + tag + ">";
    std::string close = "</" + tag + ">";
    size_t start = xml.find(open, *pos);
    if (start == std::string::npos) return false;
    size_t body = start + open.size();
    size_t end = xml.find(close, body);
    if (end == std::string::npos)
        throw error(errc::malformed_xml, "unterminated <" + tag + "> element");
    *content = xml.substr(body, end - body);
    *pos = end + close.size();
    return true;
}

std::string require_element(const std::string& xml, const std::string& tag) {
    size_t pos = 0;
    std::string content;
    if (!find_element(xml, tag, &pos, &content))
        throw error(errc::malformed_xml, "missing <" + tag + "> element");
    return content;
}

double parse_coord(const std::string& xml, const std::string& tag) {
    std::string text = trim(require_element(xml, tag));
    if (text.empty()) throw error(errc::malformed_xml, "<" + tag + "> is empty");
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size())
        throw error(errc::malformed_xml, "<" + tag + "> is not a number: " + text);
    return v;
}

std::string resolve_path(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    if (path.is_relative()) path = base_dir / path;
    return path.lexically_normal().string();
}

// Written relative when the target sits under the manifest's directory.
std::string portable_path(const fs::path& base_dir, const std::string& p) {
    fs::path rel = fs::path(p).lexically_normal().lexically_proximate(base_dir);
    if (rel.empty() || rel.native().rfind("..", 0) == 0 || rel.is_absolute())
        return fs::absolute(p).lexically_normal().string();
    return rel.generic_string();
}

const char* domain_name(DomainTag tag) {
    return tag == DomainTag::clear ? "clear" : "real_fog";
}

DomainTag domain_from_name(const std::string& name) {
    if (name == "clear") return DomainTag::clear;
    if (name == "real_fog") return DomainTag::real_fog;
    throw error(errc::bad_config, "unknown domain tag: " + name);
}

std::string read_text(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

} // namespace

std::vector<GroundTruthBox> parse_voc_annotation(const std::string& xml_text,
                                                 const std::vector<std::string>& class_names) {
    std::vector<GroundTruthBox> out;
    size_t pos = 0;
    std::string obj;
    while (find_element(xml_text, "object", &pos, &obj)) {
        std::string name = trim(require_element(obj, "name"));
        auto it = std::find(class_names.begin(), class_names.end(), name);
        if (it == class_names.end())
            throw error(errc::unknown_class, "class not in the configured list: " + name);
        std::string bnd = require_element(obj, "bndbox");
        GroundTruthBox gt;
        gt.class_id = (int)(it - class_names.begin());
        gt.box.x_min = parse_coord(bnd, "xmin");
        gt.box.y_min = parse_coord(bnd, "ymin");
        gt.box.x_max = parse_coord(bnd, "xmax");
        gt.box.y_max = parse_coord(bnd, "ymax");
        if (gt.box.x_min >= gt.box.x_max || gt.box.y_min >= gt.box.y_max)
            throw error(errc::degenerate_box, "bndbox with min >= max for object " + name);
        out.push_back(gt);
    }
    return out;
}

DatasetSpec load_manifest(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw error(errc::bad_config, "manifest " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw error(errc::bad_config, "manifest root must be an object");
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (key != "class_names" && key != "samples")
            throw error(errc::bad_config, "manifest has unknown key: " + key);
    }
    if (!doc.contains("class_names") || !doc.contains("samples"))
        throw error(errc::bad_config, "manifest needs class_names and samples");

    DatasetSpec ds;
    if (!doc["class_names"].is_array() || doc["class_names"].empty())
        throw error(errc::bad_config, "class_names must be a nonempty array");
    for (const json& name : doc["class_names"]) {
        if (!name.is_string()) throw error(errc::bad_config, "class_names entries must be strings");
        ds.class_names.push_back(name.get<std::string>());
    }
    std::set<std::string> name_set(ds.class_names.begin(), ds.class_names.end());
    if (name_set.size() != ds.class_names.size())
        throw error(errc::bad_config, "class_names contains duplicates");

    fs::path base = fs::absolute(path).parent_path();
    std::set<std::string> seen_ids;
    if (!doc["samples"].is_array())
        throw error(errc::bad_config, "samples must be an array");
    for (const json& entry : doc["samples"]) {
        if (!entry.is_object()) throw error(errc::bad_config, "sample entries must be objects");
        for (const auto& [key, value] : entry.items()) {
            (void)value;
            if (key != "image" && key != "depth" && key != "annotation" && key != "domain")
                throw error(errc::bad_config, "sample has unknown key: " + key);
        }
        if (!entry.contains("image") || !entry.contains("annotation") || !entry.contains("domain"))
            throw error(errc::bad_config, "sample needs image, annotation and domain");

        Sample s;
        s.image_path = resolve_path(base, entry["image"].get<std::string>());
        s.annotation_path = resolve_path(base, entry["annotation"].get<std::string>());
        if (entry.contains("depth")) s.depth_path = resolve_path(base, entry["depth"].get<std::string>());
        s.domain = domain_from_name(entry["domain"].get<std::string>());
        s.image_id = fs::path(s.image_path).stem().string();
        if (!seen_ids.insert(s.image_id).second)
            throw error(errc::bad_config, "duplicate image id in manifest: " + s.image_id);
        s.boxes = parse_voc_annotation(read_text(s.annotation_path), ds.class_names);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_manifest(const std::string& path, const DatasetSpec& ds) {
    fs::path base = fs::absolute(path).parent_path();
    json doc;
    doc["class_names"] = ds.class_names;
    doc["samples"] = json::array();
    for (const Sample& s : ds.samples) {
        json entry;
        entry["image"] = portable_path(base, s.image_path);
        entry["annotation"] = portable_path(base, s.annotation_path);
        if (!s.depth_path.empty()) entry["depth"] = portable_path(base, s.depth_path);
        entry["domain"] = domain_name(s.domain);
        doc["samples"].push_back(entry);
    }
    std::string text = doc.dump(2);
    text += "\n";
    write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

DatasetSpec make_hybrid(const DatasetSpec& clear, const DatasetSpec& foggy) {
    if (clear.class_names != foggy.class_names)
        throw error(errc::class_list_mismatch, "class lists differ between the merged datasets");
    DatasetSpec out;
    out.class_names = clear.class_names;
    out.samples = clear.samples;
    out.samples.insert(out.samples.end(), foggy.samples.begin(), foggy.samples.end());
    return out;
}

std::pair<DatasetSpec, DatasetSpec> split_80_20(const DatasetSpec& ds, SplitMix64& rng,
                                                SplitMode mode) {
    const int n = (int)ds.samples.size();
    if (n < 1) throw error(errc::invalid_param, "cannot split an empty dataset");
    const int val_n = n / 5;       // floor(0.2 n)
    const int train_n = n - val_n; // ceil(0.8 n)

    DatasetSpec train, val;
    train.class_names = ds.class_names;
    val.class_names = ds.class_names;

    if (mode == SplitMode::without_replacement) {
        std::vector<int> perm(n);
        for (int i = 0; i < n; i++) perm[i] = i;
        for (int i = n - 1; i > 0; i--) {
            int j = (int)rng.next_below((unsigned long long)i + 1);
            std::swap(perm[i], perm[j]);
        }
        for (int i = 0; i < train_n; i++) train.samples.push_back(ds.samples[perm[i]]);
        for (int i = train_n; i < n; i++) val.samples.push_back(ds.samples[perm[i]]);
        return {train, val};
    }

    std::vector<bool> drawn(n, false);
    for (int i = 0; i < train_n; i++) {
        int idx = (int)rng.next_below((unsigned long long)n);
        drawn[idx] = true;
        train.samples.push_back(ds.samples[idx]);
    }
    std::vector<int> rest;
    for (int i = 0; i < n; i++)
        if (!drawn[i]) rest.push_back(i);
    for (int i = 0; i < val_n; i++) {
        // the unlikely all-drawn case falls back to the full set
        int idx = rest.empty() ? (int)rng.next_below((unsigned long long)n)
                               : rest[rng.next_below(rest.size())];
        val.samples.push_back(ds.samples[idx]);
    }
    return {train, val};
}

DatasetSpec make_fog_variant(const DatasetSpec& clear, const std::string& out_dir,
                             const FogVariantOptions& opt, std::vector<double>* betas_out) {
    if (opt.jobs < 1) throw error(errc::invalid_param, "jobs must be >= 1");
    const int n = (int)clear.samples.size();
    std::set<std::string> ids;
    for (const Sample& s : clear.samples) {
        if (!ids.insert(s.image_id).second)
            throw error(errc::invalid_param, "duplicate image id in fog variant input: " + s.image_id);
        if (!opt.use_pseudo_depth && s.depth_path.empty())
            throw error(errc::missing_depth, "sample has no depth file: " + s.image_id);
    }
    fs::create_directories(out_dir);

    std::vector<double> betas(n);
    for (int i = 0; i < n; i++) {
        SplitMix64 r(opt.seed + (unsigned long long)i);
        betas[i] = opt.sample_beta ? sample_beta(opt.dist, r) : opt.beta;
    }

    DatasetSpec out;
    out.class_names = clear.class_names;
    out.samples = clear.samples;
    for (int i = 0; i < n; i++)
        out.samples[i].image_path =
            fs::absolute(fs::path(out_dir) / (clear.samples[i].image_id + ".ppm")).lexically_normal().string();

    int jobs = std::min(opt.jobs, std::max(1, n));
    std::vector<std::exception_ptr> errors(jobs);
    auto worker = [&](int w) {
        try {
            for (int i = w; i < n; i += jobs) {
                const Sample& s = clear.samples[i];
                Image img = load_ppm(s.image_path);
                DepthMap depth = opt.use_pseudo_depth ? pseudo_depth(img.width, img.height)
                                                      : load_pfm(s.depth_path);
                Image foggy = render_fog(img, depth, FogParams{betas[i], kDefaultAirlight});
                save_ppm(out.samples[i].image_path, foggy);
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (jobs == 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < jobs; w++) threads.emplace_back(worker, w);
        for (std::thread& t : threads) t.join();
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

    if (betas_out) *betas_out = betas;
    return out;
}

TruthIndex truth_index(const DatasetSpec& ds) {
    TruthIndex index;
    for (const Sample& s : ds.samples) index.emplace(s.image_id, s.boxes);
    return index;
}

} // namespace fogdet
