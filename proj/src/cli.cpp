#include "fogdet/cli.hpp"

#include "fogdet/dataset.hpp"
#include "fogdet/error.hpp"
#include "fogdet/eval.hpp"
#include "fogdet/gradcheck.hpp"
#include "fogdet/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace fogdet {

namespace {

constexpr double kGradTolerance = 1e-4;

std::string resolve_against(const fs::path& base, const std::string& p) {
    fs::path path(p);
    if (path.is_relative()) path = base / path;
    return path.lexically_normal().string();
}

void write_text_file(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

struct FoggifyArgs {
    std::string manifest;
    std::string out_dir;
    std::string beta = "sample";
    std::string depth = "pfm";
    double beta_min = 0.0;
    double beta_max = 0.15;
    unsigned long long seed = 1;
    int jobs = 1;
};

int cmd_foggify(const FoggifyArgs& a) {
    FogVariantOptions opt;
    if (a.beta == "sample") {
        opt.sample_beta = true;
        opt.dist = FogDistribution{a.beta_min, a.beta_max};
    } else {
        char* end = nullptr;
        double v = std::strtod(a.beta.c_str(), &end);
        if (end != a.beta.c_str() + a.beta.size() || !(v >= 0.0) || !std::isfinite(v)) {
            std::cerr << "--beta must be 'sample' or a nonnegative number\n";
            return 1;
        }
        opt.beta = v;
    }
    opt.use_pseudo_depth = a.depth == "pseudo";
    opt.seed = a.seed;
    opt.jobs = a.jobs;

    DatasetSpec clear = load_manifest(a.manifest);
    std::vector<double> betas;
    DatasetSpec variant = make_fog_variant(clear, a.out_dir, opt, &betas);
    save_manifest((fs::path(a.out_dir) / "manifest.json").string(), variant);
    for (size_t i = 0; i < variant.samples.size(); i++) {
        json line;
        line["image_id"] = variant.samples[i].image_id;
        line["beta"] = betas[i];
        std::cout << line.dump() << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string dets_file;
    std::string manifest;
    double iou = 0.5;
    std::string ap_mode = "all";
};

int cmd_eval_map(const EvalArgs& a) {
    DatasetSpec ds = load_manifest(a.manifest);
    std::vector<DetectionRecord> dets = load_detections(a.dets_file);
    APMethod method = a.ap_mode == "voc11" ? APMethod::voc11 : APMethod::all_points;
    MapReport report = mean_ap(dets, truth_index(ds), a.iou, method);
    json out;
    out["map"] = report.mean_ap;
    out["per_class"] = json::object();
    for (const PerClassAP& entry : report.per_class) {
        std::string name = entry.class_id < (int)ds.class_names.size()
                               ? ds.class_names[entry.class_id]
                               : std::to_string(entry.class_id);
        out["per_class"][name] = entry.ap;
    }
    std::cout << out.dump() << "\n";
    return 0;
}

struct RunConfig {
    std::string clear_manifest;
    std::string fog_manifest;
    std::string out_dir;
    TrainConfig train;
    SplitMode split_mode = SplitMode::with_replacement;
    int grid_s = 4;
    int boxes_per_cell = 1;
    int in_w = 64;
    int in_h = 64;
};

template <typename T>
void take(json& doc, const char* key, T* dst) {
    if (!doc.contains(key)) return;
    try {
        *dst = doc.at(key).get<T>();
    } catch (const json::exception&) {
        throw error(errc::bad_config, std::string("config key has wrong type: ") + key);
    }
    doc.erase(key);
}

RunConfig load_run_config(const std::string& path) {
    json doc;
    try {
        std::vector<unsigned char> bytes = read_file_bytes(path);
        doc = json::parse(std::string(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
        throw error(errc::bad_config, "config " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw error(errc::bad_config, "config root must be an object");

    RunConfig rc;
    take(doc, "clear_manifest", &rc.clear_manifest);
    take(doc, "fog_manifest", &rc.fog_manifest);
    take(doc, "out_dir", &rc.out_dir);
    take(doc, "epochs", &rc.train.epochs);
    take(doc, "teacher_epochs", &rc.train.teacher_epochs);
    take(doc, "learning_rate", &rc.train.learning_rate);
    take(doc, "batch_size", &rc.train.batch_size);
    take(doc, "lambda1", &rc.train.lambda1);
    take(doc, "lambda2", &rc.train.lambda2);
    take(doc, "perc_start", &rc.train.perc.start);
    take(doc, "perc_end", &rc.train.perc.end);
    take(doc, "beta_min", &rc.train.fog_dist.beta_min);
    take(doc, "beta_max", &rc.train.fog_dist.beta_max);
    take(doc, "seed", &rc.train.seed);
    take(doc, "grid_s", &rc.grid_s);
    take(doc, "boxes_per_cell", &rc.boxes_per_cell);
    take(doc, "in_w", &rc.in_w);
    take(doc, "in_h", &rc.in_h);

    std::string depth_mode = "pfm", objdet_input = "foggy", split = "with_replacement",
                conf = "bce";
    take(doc, "depth_mode", &depth_mode);
    take(doc, "objdet_input", &objdet_input);
    take(doc, "split_mode", &split);
    take(doc, "conf_mode", &conf);

    if (!doc.empty())
        throw error(errc::bad_config, "config has unknown key: " + doc.items().begin().key());
    if (rc.clear_manifest.empty() || rc.out_dir.empty())
        throw error(errc::bad_config, "config needs clear_manifest and out_dir");
    if (depth_mode != "pfm" && depth_mode != "pseudo")
        throw error(errc::bad_config, "depth_mode must be pfm or pseudo");
    if (objdet_input != "foggy" && objdet_input != "clear")
        throw error(errc::bad_config, "objdet_input must be foggy or clear");
    if (split != "with_replacement" && split != "without_replacement")
        throw error(errc::bad_config, "split_mode must be with_replacement or without_replacement");
    if (conf != "bce" && conf != "paper_exact")
        throw error(errc::bad_config, "conf_mode must be bce or paper_exact");

    rc.train.use_pseudo_depth = depth_mode == "pseudo";
    rc.train.objdet_on_clear = objdet_input == "clear";
    rc.split_mode = split == "with_replacement" ? SplitMode::with_replacement
                                                : SplitMode::without_replacement;
    rc.train.conf_mode = conf == "bce" ? ConfMode::bce : ConfMode::paper_exact;

    fs::path base = fs::absolute(path).parent_path();
    rc.clear_manifest = resolve_against(base, rc.clear_manifest);
    if (!rc.fog_manifest.empty()) rc.fog_manifest = resolve_against(base, rc.fog_manifest);
    rc.out_dir = resolve_against(base, rc.out_dir);
    return rc;
}

std::string report_jsonl(const TrainReport& report) {
    std::string text;
    for (const EpochStats& e : report.epochs) {
        json line;
        line["epoch"] = e.epoch;
        line["objdet"] = e.mean_objdet;
        line["ts_perc"] = e.mean_ts_perc;
        line["clear"] = e.clear_seen;
        line["real_fog"] = e.real_fog_seen;
        text += line.dump() + "\n";
    }
    return text;
}

DatasetSpec dedupe_by_id(const DatasetSpec& ds, bool clear_only) {
    DatasetSpec out;
    out.class_names = ds.class_names;
    std::set<std::string> seen;
    for (const Sample& s : ds.samples) {
        if (clear_only && s.domain != DomainTag::clear) continue;
        if (seen.insert(s.image_id).second) out.samples.push_back(s);
    }
    return out;
}

int cmd_train_toy(const std::string& config_path) {
    RunConfig rc = load_run_config(config_path);
    DatasetSpec clear = load_manifest(rc.clear_manifest);
    DatasetSpec fog;
    fog.class_names = clear.class_names;
    if (!rc.fog_manifest.empty()) fog = load_manifest(rc.fog_manifest);

    DatasetSpec hybrid = make_hybrid(clear, fog);
    SplitMix64 split_rng(rc.train.seed);
    auto [train_set, val_set] = split_80_20(hybrid, split_rng, rc.split_mode);

    ToyNet arch = make_toy_net(rc.in_w, rc.in_h, rc.grid_s, rc.boxes_per_cell,
                               (int)clear.class_names.size());

    TrainReport teacher_report, student_report;
    std::vector<double> teacher = train_teacher(arch, train_set, rc.train, &teacher_report);

    DatasetSpec ds_c, ds_f;
    ds_c.class_names = ds_f.class_names = hybrid.class_names;
    for (const Sample& s : train_set.samples)
        (s.domain == DomainTag::clear ? ds_c : ds_f).samples.push_back(s);
    std::vector<double> student =
        train_student(arch, teacher, ds_c, ds_f, rc.train, &student_report);

    fs::create_directories(rc.out_dir);
    ToyNet out_net = arch;
    out_net.params = teacher;
    save_checkpoint((fs::path(rc.out_dir) / "teacher.ckpt").string(), out_net);
    out_net.params = student;
    save_checkpoint((fs::path(rc.out_dir) / "student.ckpt").string(), out_net);
    write_text_file((fs::path(rc.out_dir) / "teacher_report.jsonl").string(),
                    report_jsonl(teacher_report));
    write_text_file((fs::path(rc.out_dir) / "student_report.jsonl").string(),
                    report_jsonl(student_report));
    // held-out samples, deduplicated (the replacement split can repeat draws)
    save_manifest((fs::path(rc.out_dir) / "val.json").string(), dedupe_by_id(val_set, false));
    save_manifest((fs::path(rc.out_dir) / "val_clear.json").string(), dedupe_by_id(val_set, true));

    std::cerr << "teacher " << teacher_report.wall_seconds << "s, student "
              << student_report.wall_seconds << "s\n";
    json out;
    out["out_dir"] = rc.out_dir;
    out["train_samples"] = train_set.samples.size();
    out["val_samples"] = dedupe_by_id(val_set, false).samples.size();
    out["teacher_final_objdet"] = teacher_report.epochs.back().mean_objdet;
    out["student_final_objdet"] = student_report.epochs.back().mean_objdet;
    out["student_final_ts_perc"] = student_report.epochs.back().mean_ts_perc;
    std::cout << out.dump() << "\n";
    return 0;
}

struct GradcheckArgs {
    std::vector<int> layers{5, 9};
    unsigned long long seed = 1;
    int samples = 25;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    GradCheckReport report = gradcheck_toy(a.layers[0], a.layers[1], a.seed, a.samples);
    json out;
    out["objdet"] = report.objdet_err;
    out["perceptual"] = report.perceptual_err;
    out["ts_perceptual"] = report.ts_perceptual_err;
    out["max_rel_err"] = report.max_err;
    out["coords_checked"] = report.coords_checked;
    out["tolerance"] = kGradTolerance;
    out["pass"] = report.max_err < kGradTolerance;
    std::cout << out.dump() << "\n";
    return report.max_err < kGradTolerance ? 0 : 3;
}

struct CorpusArgs {
    std::string out_dir;
    unsigned long long seed = 1;
    int clear = 48;
    int fog = 12;
    int size = 64;
};

int cmd_make_corpus(const CorpusArgs& a) {
    CorpusOptions opt;
    opt.clear_count = a.clear;
    opt.real_fog_count = a.fog;
    opt.width = opt.height = a.size;
    opt.seed = a.seed;
    auto [clear_ds, fog_ds] = make_corpus(a.out_dir, opt);
    json out;
    out["out_dir"] = a.out_dir;
    out["clear"] = clear_ds.samples.size();
    out["real_fog"] = fog_ds.samples.size();
    std::cout << out.dump() << "\n";
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"depth-aware fog rendering, toy fog-robust detector training, and mAP scoring"};
    app.require_subcommand(1);

    FoggifyArgs fog_args;
    CLI::App* foggify = app.add_subcommand("foggify", "render a synthetic fog variant of a dataset");
    foggify->add_option("manifest", fog_args.manifest, "input dataset manifest")->required();
    foggify->add_option("out_dir", fog_args.out_dir, "output directory")->required();
    foggify->add_option("--beta", fog_args.beta, "'sample' or a fixed fog density");
    foggify->add_option("--depth", fog_args.depth, "depth source")
        ->check(CLI::IsMember({"pfm", "pseudo"}));
    foggify->add_option("--beta-min", fog_args.beta_min, "sampled density lower bound");
    foggify->add_option("--beta-max", fog_args.beta_max, "sampled density upper bound");
    foggify->add_option("--seed", fog_args.seed, "density sampling seed");
    foggify->add_option("--jobs", fog_args.jobs, "parallel rendering jobs")->check(CLI::PositiveNumber);

    EvalArgs eval_args;
    CLI::App* evalmap = app.add_subcommand("eval-map", "score a detections file against a manifest");
    evalmap->add_option("detections", eval_args.dets_file, "detections file")->required();
    evalmap->add_option("manifest", eval_args.manifest, "ground-truth dataset manifest")->required();
    evalmap->add_option("--iou", eval_args.iou, "matching threshold, strict");
    evalmap->add_option("--ap-mode", eval_args.ap_mode, "average-precision integration")
        ->check(CLI::IsMember({"all", "voc11"}));

    std::string train_config;
    CLI::App* train = app.add_subcommand("train-toy", "train the teacher and distilled student");
    train->add_option("config", train_config, "JSON run configuration")->required();

    GradcheckArgs grad_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck->add_option("--layers", grad_args.layers, "activation-loss layer range (start end)")
        ->expected(2);
    gradcheck->add_option("--seed", grad_args.seed, "instance seed");
    gradcheck->add_option("--samples", grad_args.samples, "coordinates probed per layer")
        ->check(CLI::PositiveNumber);

    CorpusArgs corpus_args;
    CLI::App* corpus = app.add_subcommand("make-corpus", "emit the synthetic shapes corpus");
    corpus->add_option("--out", corpus_args.out_dir, "output directory")->required();
    corpus->add_option("--seed", corpus_args.seed, "generation seed");
    corpus->add_option("--clear", corpus_args.clear, "clear sample count")->check(CLI::PositiveNumber);
    corpus->add_option("--fog", corpus_args.fog, "real-fog sample count")
        ->check(CLI::NonNegativeNumber);
    corpus->add_option("--size", corpus_args.size, "image width and height");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*foggify) return cmd_foggify(fog_args);
        if (*evalmap) {
            if (eval_args.iou <= 0.0 || eval_args.iou >= 1.0) {
                std::cerr << "--iou must lie strictly between 0 and 1\n";
                return 1;
            }
            return cmd_eval_map(eval_args);
        }
        if (*train) return cmd_train_toy(train_config);
        if (*gradcheck) {
            if (grad_args.layers[0] < 1 || grad_args.layers[0] > grad_args.layers[1] ||
                grad_args.layers[1] > 9) {
                std::cerr << "--layers needs 1 <= start <= end <= 9\n";
                return 1;
            }
            return cmd_gradcheck(grad_args);
        }
        if (*corpus) return cmd_make_corpus(corpus_args);
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == errc::divergence ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> owned;
    owned.push_back("fogdet");
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const std::string& s : owned) argv.push_back(s.c_str());
    return run_cli((int)argv.size(), argv.data());
}

} // namespace fogdet
