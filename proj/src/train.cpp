#include "fogdet/train.hpp"

#include "fogdet/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace fogdet {

namespace {

void check_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1 || cfg.teacher_epochs < 0)
        throw error(errc::invalid_param, "epochs must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw error(errc::invalid_param, "learning rate must be > 0");
    if (cfg.batch_size < 1) throw error(errc::invalid_param, "batch size must be >= 1");
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0)
        throw error(errc::invalid_param, "loss weights must be >= 0");
}

struct LoadedSample {
    Image img;
    GridLabel label;
    DomainTag domain = DomainTag::clear;
    int depth_id = -1; // clear samples only
};

// Images, labels and depth maps are read once; the loop never touches disk.
struct LoadedSet {
    std::vector<LoadedSample> samples;
    std::vector<DepthMap> depths;
};

LoadedSet load_set(const ToyNet& arch, const std::vector<const Sample*>& samples,
                   bool use_pseudo_depth) {
    LoadedSet set;
    std::map<std::string, int> depth_ids;
    int pseudo_id = -1;
    for (const Sample* s : samples) {
        LoadedSample ls;
        ls.img = load_ppm(s->image_path);
        ls.label = encode_grid(s->boxes, ls.img.width, ls.img.height, arch.S, arch.B, arch.C);
        ls.domain = s->domain;
        if (s->domain == DomainTag::clear) {
            if (use_pseudo_depth || s->depth_path.empty()) {
                if (s->depth_path.empty() && !use_pseudo_depth)
                    throw error(errc::missing_depth, "sample has no depth file: " + s->image_id);
                if (pseudo_id < 0) {
                    pseudo_id = (int)set.depths.size();
                    set.depths.push_back(pseudo_depth(ls.img.width, ls.img.height));
                }
                ls.depth_id = pseudo_id;
            } else {
                auto it = depth_ids.find(s->depth_path);
                if (it == depth_ids.end()) {
                    it = depth_ids.emplace(s->depth_path, (int)set.depths.size()).first;
                    set.depths.push_back(load_pfm(s->depth_path));
                }
                ls.depth_id = it->second;
            }
        }
        set.samples.push_back(std::move(ls));
    }
    return set;
}

void shuffle_indices(std::vector<int>& idx, SplitMix64& rng) {
    for (int i = (int)idx.size() - 1; i > 0; i--) {
        int j = (int)rng.next_below((unsigned long long)i + 1);
        std::swap(idx[i], idx[j]);
    }
}

void check_finite(double loss, int epoch) {
    if (!std::isfinite(loss))
        throw error(errc::divergence, "nonfinite loss in epoch " + std::to_string(epoch));
}

// objdet loss on one sample plus its parameter gradient
double objdet_backward(const ToyNet& net, const Image& img, const GridLabel& label,
                       const TrainConfig& cfg, std::vector<double>* grad,
                       ActivationTrace* trace_out = nullptr, ActGrads* extra_seeds = nullptr) {
    ActivationTrace trace;
    Prediction pred = forward(net, img, &trace);
    Matching m = greedy_match(pred, label);
    double loss = loc_loss(pred, label, m) + cfg.lambda1 * conf_loss(pred, label, m, cfg.conf_mode);
    PredictionGrad pg = objdet_grad(pred, label, m, cfg.lambda1, cfg.conf_mode);
    ActGrads seeds = zero_seeds(net);
    seeds.back() = head_seed(net, pg);
    if (extra_seeds) {
        for (size_t l = 0; l < seeds.size(); l++) {
            if ((*extra_seeds)[l].empty()) continue;
            if (seeds[l].empty()) {
                seeds[l] = std::move((*extra_seeds)[l]);
            } else {
                for (size_t i = 0; i < seeds[l].size(); i++) seeds[l][i] += (*extra_seeds)[l][i];
            }
        }
    }
    *grad = backward(net, trace, seeds);
    if (trace_out) *trace_out = std::move(trace);
    return loss;
}

void accumulate(std::vector<double>& acc, const std::vector<double>& g) {
    for (size_t i = 0; i < acc.size(); i++) acc[i] += g[i];
}

} // namespace

std::vector<double> sgd_step(std::vector<double> params, const std::vector<double>& grad, double lr) {
    if (params.size() != grad.size())
        throw error(errc::shape_mismatch, "gradient length does not match parameters");
    for (size_t i = 0; i < params.size(); i++) params[i] -= lr * grad[i];
    return params;
}

std::vector<double> train_teacher(const ToyNet& arch, const DatasetSpec& ds_cf,
                                  const TrainConfig& cfg, TrainReport* report) {
    check_config(cfg);
    if (ds_cf.samples.empty()) throw error(errc::invalid_param, "teacher needs a nonempty dataset");
    auto t0 = std::chrono::steady_clock::now();

    std::vector<const Sample*> refs;
    for (const Sample& s : ds_cf.samples) refs.push_back(&s);
    // the teacher never renders fog, so depth files are not required
    LoadedSet set = load_set(arch, refs, true);

    ToyNet net = arch;
    SplitMix64 rng(cfg.seed);
    init_params(net, rng);

    const int n = (int)set.samples.size();
    std::vector<int> order(n);
    for (int i = 0; i < n; i++) order[i] = i;
    const int epochs = cfg.teacher_epochs > 0 ? cfg.teacher_epochs : cfg.epochs;

    if (report) report->epochs.clear();
    for (int epoch = 1; epoch <= epochs; epoch++) {
        shuffle_indices(order, rng);
        EpochStats stats;
        stats.epoch = epoch;
        double loss_sum = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int count = std::min(cfg.batch_size, n - start);
            std::vector<double> acc(net.params.size(), 0.0);
            for (int k = 0; k < count; k++) {
                const LoadedSample& s = set.samples[order[start + k]];
                std::vector<double> grad;
                double loss = objdet_backward(net, s.img, s.label, cfg, &grad);
                check_finite(loss, epoch);
                loss_sum += loss;
                accumulate(acc, grad);
                if (s.domain == DomainTag::clear) stats.clear_seen++;
                else stats.real_fog_seen++;
            }
            for (double& v : acc) v /= count;
            net.params = sgd_step(std::move(net.params), acc, cfg.learning_rate);
        }
        stats.mean_objdet = loss_sum / n;
        if (report) report->epochs.push_back(stats);
    }
    if (report)
        report->wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return net.params;
}

std::vector<double> train_student(const ToyNet& arch, const std::vector<double>& teacher_params,
                                  const DatasetSpec& ds_c, const DatasetSpec& ds_f,
                                  const TrainConfig& cfg, TrainReport* report) {
    check_config(cfg);
    if ((int)teacher_params.size() != param_count(arch))
        throw error(errc::architecture_mismatch, "teacher parameters do not fit the architecture");
    if (ds_c.samples.empty() && ds_f.samples.empty())
        throw error(errc::invalid_param, "student needs a nonempty dataset");
    if (!ds_c.samples.empty() && !ds_f.samples.empty() && ds_c.class_names != ds_f.class_names)
        throw error(errc::class_list_mismatch, "clear and fog datasets disagree on classes");
    auto t0 = std::chrono::steady_clock::now();

    std::vector<const Sample*> refs;
    for (const Sample& s : ds_c.samples) refs.push_back(&s);
    for (const Sample& s : ds_f.samples) refs.push_back(&s);
    LoadedSet set = load_set(arch, refs, cfg.use_pseudo_depth);

    ToyNet teacher = arch;
    teacher.params = teacher_params;
    ToyNet net = arch;
    net.params = teacher_params; // the student starts where the teacher ended

    // frozen teacher: its activations on each clear image never change, so
    // record the compared layer range once
    const int L = (int)arch.layers.size();
    std::vector<ActivationTrace> teacher_traces(set.samples.size());
    for (size_t i = 0; i < set.samples.size(); i++) {
        if (set.samples[i].domain != DomainTag::clear) continue;
        ActivationTrace full;
        forward(teacher, set.samples[i].img, &full);
        for (int l = 0; l < L; l++)
            if (l + 1 < cfg.perc.start || l + 1 > cfg.perc.end) full.acts[l].v.clear();
        full.input.v.clear();
        teacher_traces[i] = std::move(full);
    }

    SplitMix64 rng(cfg.seed);
    const int n = (int)set.samples.size();
    std::vector<int> order(n);
    for (int i = 0; i < n; i++) order[i] = i;

    if (report) report->epochs.clear();
    for (int epoch = 1; epoch <= cfg.epochs; epoch++) {
        shuffle_indices(order, rng);
        EpochStats stats;
        stats.epoch = epoch;
        double objdet_sum = 0.0, perc_sum = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int count = std::min(cfg.batch_size, n - start);
            std::vector<double> acc(net.params.size(), 0.0);
            for (int k = 0; k < count; k++) {
                int idx = order[start + k];
                const LoadedSample& s = set.samples[idx];
                std::vector<double> grad;
                if (s.domain == DomainTag::real_fog) {
                    double loss = objdet_backward(net, s.img, s.label, cfg, &grad);
                    check_finite(loss, epoch);
                    objdet_sum += loss;
                    stats.real_fog_seen++;
                } else {
                    double beta = rng.next_in(cfg.fog_dist.beta_min, cfg.fog_dist.beta_max);
                    Image foggy =
                        render_fog(s.img, set.depths[s.depth_id], FogParams{beta, kDefaultAirlight});

                    double objdet = 0.0, perc = 0.0;
                    if (cfg.objdet_on_clear) {
                        // algorithm-as-written variant: detection on the
                        // clear image, fog only in the distillation term
                        objdet = objdet_backward(net, s.img, s.label, cfg, &grad);
                        ActivationTrace trace_f;
                        forward(net, foggy, &trace_f);
                        ActGrads gap_grads;
                        perc = activation_gap(trace_f, teacher_traces[idx], cfg.perc, &gap_grads);
                        ActGrads seeds = zero_seeds(net);
                        for (int l = 0; l < L; l++) {
                            if (gap_grads[l].empty()) continue;
                            seeds[l] = std::move(gap_grads[l]);
                            for (double& v : seeds[l]) v *= cfg.lambda2;
                        }
                        accumulate(grad, backward(net, trace_f, seeds));
                    } else {
                        ActivationTrace trace_f;
                        Prediction pred = forward(net, foggy, &trace_f);
                        Matching m = greedy_match(pred, s.label);
                        objdet = loc_loss(pred, s.label, m) +
                                 cfg.lambda1 * conf_loss(pred, s.label, m, cfg.conf_mode);
                        ActGrads gap_grads;
                        perc = activation_gap(trace_f, teacher_traces[idx], cfg.perc, &gap_grads);
                        ActGrads seeds = zero_seeds(net);
                        seeds.back() =
                            head_seed(net, objdet_grad(pred, s.label, m, cfg.lambda1, cfg.conf_mode));
                        for (int l = 0; l < L; l++) {
                            if (gap_grads[l].empty()) continue;
                            if (seeds[l].empty()) seeds[l].assign(gap_grads[l].size(), 0.0);
                            for (size_t i = 0; i < seeds[l].size(); i++)
                                seeds[l][i] += cfg.lambda2 * gap_grads[l][i];
                        }
                        grad = backward(net, trace_f, seeds);
                    }
                    double loss = objdet + cfg.lambda2 * perc;
                    check_finite(loss, epoch);
                    objdet_sum += objdet;
                    perc_sum += perc;
                    stats.clear_seen++;
                }
                accumulate(acc, grad);
            }
            for (double& v : acc) v /= count;
            net.params = sgd_step(std::move(net.params), acc, cfg.learning_rate);
        }
        stats.mean_objdet = objdet_sum / n;
        stats.mean_ts_perc = stats.clear_seen > 0 ? perc_sum / stats.clear_seen : 0.0;
        if (report) report->epochs.push_back(stats);
    }
    if (report)
        report->wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return net.params;
}

} // namespace fogdet
