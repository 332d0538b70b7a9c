#pragma once

#include "fogdet/detect.hpp"
#include "fogdet/eval.hpp"
#include "fogdet/fog.hpp"
#include "fogdet/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fogdet {

enum class DomainTag {
    clear,
    real_fog, // participates only in the plain detection branch of training
};

struct Sample {
    std::string image_id; // stem of the image filename, unique per manifest
    std::string image_path;
    std::string depth_path;      // empty when the sample has no depth file
    std::string annotation_path; // source of boxes
    std::vector<GroundTruthBox> boxes;
    DomainTag domain = DomainTag::clear;
};

struct DatasetSpec {
    std::vector<std::string> class_names;
    std::vector<Sample> samples;
};

// VOC-style subset: <object><name> plus <bndbox> with xmin/ymin/xmax/ymax.
// Coordinates are kept as written (min inclusive, max exclusive); a
// <difficult> flag is accepted and ignored. Unknown class names and boxes
// with min >= max reject the document.
std::vector<GroundTruthBox> parse_voc_annotation(const std::string& xml_text,
                                                 const std::vector<std::string>& class_names);

// Manifest JSON: {"class_names": [...], "samples": [{"image", "depth"?,
// "annotation", "domain"}]}. Relative paths resolve against the manifest's
// directory; annotations are parsed eagerly. Unknown keys are rejected.
DatasetSpec load_manifest(const std::string& path);

// Paths under the manifest's directory are written relative, others
// absolute.
void save_manifest(const std::string& path, const DatasetSpec& ds);

// Union of the two sample lists; class lists must match exactly.
DatasetSpec make_hybrid(const DatasetSpec& clear, const DatasetSpec& foggy);

enum class SplitMode {
    with_replacement,    // train: ceil(0.8n) i.i.d. draws; val: floor(0.2n)
                         // i.i.d. draws from the never-drawn remainder
    without_replacement, // shuffle, then cut at ceil(0.8n)
};

std::pair<DatasetSpec, DatasetSpec> split_80_20(const DatasetSpec& ds, SplitMix64& rng,
                                                SplitMode mode = SplitMode::with_replacement);

struct FogVariantOptions {
    double beta = 0.15;         // fixed density when sample_beta is false
    bool sample_beta = false;   // per-image beta from dist when true
    FogDistribution dist;
    bool use_pseudo_depth = false; // ignore depth files, use the analytic surrogate
    unsigned long long seed = 0;   // image i draws from a generator seeded seed+i
    int jobs = 1;
};

// Renders every image through the fog model and writes one PPM per sample
// into out_dir. Annotations and boxes are untouched; the returned spec
// points at the rendered files. betas_out, when given, receives the per-image
// densities in sample order.
DatasetSpec make_fog_variant(const DatasetSpec& clear, const std::string& out_dir,
                             const FogVariantOptions& opt, std::vector<double>* betas_out = nullptr);

// image_id -> boxes, for scoring detections against this dataset.
TruthIndex truth_index(const DatasetSpec& ds);

struct CorpusOptions {
    int clear_count = 48;
    int real_fog_count = 12;
    int width = 64;
    int height = 64;
    unsigned long long seed = 1;
};

// Writes a synthetic shapes corpus: colored geometric objects on noisy gray
// backgrounds, one PPM + VOC XML per sample, a linear depth ramp PFM per
// clear sample, and two manifests (clear.json, real_fog.json). Fully
// deterministic per seed. Returns (clear, real_fog).
std::pair<DatasetSpec, DatasetSpec> make_corpus(const std::string& out_dir, const CorpusOptions& opt);

} // namespace fogdet
