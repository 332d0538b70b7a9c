#include "fogdet/gradcheck.hpp"

#include "fogdet/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

namespace fogdet {

namespace {

constexpr double kStep = 1e-4;

Image random_image(int w, int h, SplitMix64& rng) {
    Image img;
    img.width = w;
    img.height = h;
    img.data.resize((size_t)w * h * 3);
    for (double& v : img.data) v = rng.next_double();
    return img;
}

GridLabel random_label(const ToyNet& net, SplitMix64& rng) {
    std::vector<GroundTruthBox> boxes;
    int count = 1 + (int)rng.next_below(2);
    for (int i = 0; i < count; i++) {
        GroundTruthBox gt;
        gt.class_id = (int)rng.next_below((unsigned long long)net.C);
        double w = net.in_width * rng.next_in(0.2, 0.4);
        double h = net.in_height * rng.next_in(0.2, 0.4);
        double cx = rng.next_in(0.55 * w, net.in_width - 0.55 * w);
        double cy = rng.next_in(0.55 * h, net.in_height - 0.55 * h);
        gt.box = Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
        boxes.push_back(gt);
    }
    return encode_grid(boxes, net.in_width, net.in_height, net.S, net.B, net.C);
}

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max(std::fabs(a) + std::fabs(b), 1e-6);
}

// relu sign pattern and maxpool argmax pattern; a finite-difference probe is
// only trusted when both displaced evaluations share the base pattern, since
// the loss is merely piecewise-smooth across these decisions
void append_decisions(const ToyNet& net, const ActivationTrace& trace,
                      std::vector<unsigned char>& sig) {
    for (int l = 0; l < (int)net.layers.size(); l++) {
        switch (net.layers[l].kind) {
        case LayerKind::relu:
            for (double v : trace.acts[l].v) sig.push_back(v > 0.0 ? 1 : 0);
            break;
        case LayerKind::maxpool2: {
            const Tensor& in = trace.acts[l - 1];
            const Tensor& out = trace.acts[l];
            for (int ch = 0; ch < out.c; ch++)
                for (int y = 0; y < out.h; y++)
                    for (int x = 0; x < out.w; x++) {
                        int arg = 0;
                        double best = in.at(ch, 2 * y, 2 * x);
                        for (int d = 1; d < 4; d++) {
                            double v = in.at(ch, 2 * y + d / 2, 2 * x + d % 2);
                            if (v > best) {
                                best = v;
                                arg = d;
                            }
                        }
                        sig.push_back((unsigned char)arg);
                    }
            break;
        }
        default:
            break;
        }
    }
}

struct Probe {
    double loss;
    std::vector<unsigned char> decisions;
};

// max error over sampled coordinates of each parameterized layer; candidates
// whose +-step evaluations flip a relu or pooling decision are redrawn
double check_loss(ToyNet& net, const std::function<Probe()>& probe,
                  const std::vector<double>& analytic, SplitMix64& rng, int per_layer_samples,
                  int* coords) {
    const std::vector<unsigned char> base = probe().decisions;
    double worst = 0.0;
    for (int l = 0; l < (int)net.layers.size(); l++) {
        int count = layer_param_count(net, l);
        if (count == 0) continue;
        int off = layer_param_offset(net, l);
        int accepted = 0;
        for (int attempt = 0; attempt < 50 * per_layer_samples && accepted < per_layer_samples;
             attempt++) {
            int i = off + (int)rng.next_below((unsigned long long)count);
            double saved = net.params[i];
            net.params[i] = saved + kStep;
            Probe up = probe();
            net.params[i] = saved - kStep;
            Probe down = probe();
            net.params[i] = saved;
            if (up.decisions != base || down.decisions != base) continue;
            double fd = (up.loss - down.loss) / (2.0 * kStep);
            worst = std::max(worst, rel_err(analytic[i], fd));
            accepted++;
            (*coords)++;
        }
    }
    return worst;
}

} // namespace

GradCheckReport gradcheck_net(const ToyNet& arch, int perc_start, int perc_end,
                              unsigned long long seed, int per_layer_samples) {
    const int L = (int)arch.layers.size();
    if (perc_start < 1 || perc_start > perc_end || perc_end > L)
        throw error(errc::invalid_param, "layer range must satisfy 1 <= start <= end <= depth");
    if (per_layer_samples < 1) throw error(errc::invalid_param, "need at least one sample per layer");

    SplitMix64 rng(seed);
    ToyNet net = arch;
    init_params(net, rng);
    ToyNet teacher = arch;
    init_params(teacher, rng);

    Image xa = random_image(arch.in_width, arch.in_height, rng);
    Image xb = random_image(arch.in_width, arch.in_height, rng);
    GridLabel label = random_label(net, rng);
    DepthMap depth = pseudo_depth(arch.in_width, arch.in_height);
    FogParams fog{0.1, kDefaultAirlight};
    PercConfig perc{perc_start, perc_end};
    const double lambda1 = 1.0;

    GradCheckReport report;
    int coords = 0;

    // detection loss with the matching pinned at the unperturbed point
    {
        ActivationTrace trace;
        Prediction pred = forward(net, xa, &trace);
        Matching m0 = greedy_match(pred, label);
        ActGrads seeds = zero_seeds(net);
        seeds.back() = head_seed(net, objdet_grad(pred, label, m0, lambda1));
        std::vector<double> analytic = backward(net, trace, seeds);
        auto probe = [&]() {
            Probe r;
            ActivationTrace t;
            Prediction p = forward(net, xa, &t);
            r.loss = loc_loss(p, label, m0) + lambda1 * conf_loss(p, label, m0);
            append_decisions(net, t, r.decisions);
            return r;
        };
        report.objdet_err = check_loss(net, probe, analytic, rng, per_layer_samples, &coords);
    }

    // activation distance between two inputs through shared parameters
    {
        ActivationTrace ta, tb;
        forward(net, xa, &ta);
        forward(net, xb, &tb);
        ActGrads ga, gb;
        activation_gap(ta, tb, perc, &ga);
        activation_gap(tb, ta, perc, &gb); // d/d(b side) by symmetry
        std::vector<double> analytic = backward(net, ta, ga);
        std::vector<double> other = backward(net, tb, gb);
        for (size_t i = 0; i < analytic.size(); i++) analytic[i] += other[i];
        auto probe = [&]() {
            Probe r;
            ActivationTrace t1, t2;
            forward(net, xa, &t1);
            forward(net, xb, &t2);
            r.loss = activation_gap(t1, t2, perc);
            append_decisions(net, t1, r.decisions);
            append_decisions(net, t2, r.decisions);
            return r;
        };
        report.perceptual_err = check_loss(net, probe, analytic, rng, per_layer_samples, &coords);
    }

    // student-vs-frozen-teacher variant on a fixed fog rendering
    {
        Image foggy = render_fog(xa, depth, fog);
        ActivationTrace ts, tt;
        forward(net, foggy, &ts);
        forward(teacher, xa, &tt);
        ActGrads gs;
        activation_gap(ts, tt, perc, &gs);
        std::vector<double> analytic = backward(net, ts, gs);
        auto probe = [&]() {
            Probe r;
            ActivationTrace t;
            forward(net, foggy, &t);
            r.loss = activation_gap(t, tt, perc);
            append_decisions(net, t, r.decisions);
            return r;
        };
        report.ts_perceptual_err = check_loss(net, probe, analytic, rng, per_layer_samples, &coords);
    }

    report.coords_checked = coords;
    report.max_err =
        std::max({report.objdet_err, report.perceptual_err, report.ts_perceptual_err});
    return report;
}

GradCheckReport gradcheck_toy(int perc_start, int perc_end, unsigned long long seed,
                              int per_layer_samples) {
    return gradcheck_net(make_toy_net(), perc_start, perc_end, seed, per_layer_samples);
}

} // namespace fogdet
