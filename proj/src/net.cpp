#include "fogdet/net.hpp"

#include "fogdet/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>

using json = nlohmann::json;

namespace fogdet {

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::detection_head: return "detection_head";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& name) {
    if (name == "conv3x3") return LayerKind::conv3x3;
    if (name == "relu") return LayerKind::relu;
    if (name == "maxpool2") return LayerKind::maxpool2;
    if (name == "detection_head") return LayerKind::detection_head;
    throw error(errc::malformed_header, "unknown layer kind: " + name);
}

int spec_param_count(const LayerSpec& l) {
    switch (l.kind) {
    case LayerKind::conv3x3: return l.out_channels * l.in_channels * 9 + l.out_channels;
    case LayerKind::detection_head: return l.out_channels * l.in_channels + l.out_channels;
    default: return 0;
    }
}

void check_net(const ToyNet& net) {
    if (net.layers.empty() || net.layers.back().kind != LayerKind::detection_head)
        throw error(errc::invalid_param, "network must end in a detection head");
    if ((int)net.params.size() != param_count(net))
        throw error(errc::invalid_param, "parameter vector length does not match the architecture");
}

Prediction unpack_head(const ToyNet& net, const Tensor& head) {
    Prediction p;
    p.S = net.S;
    p.B = net.B;
    p.C = net.C;
    const int slots = net.S * net.S * net.B;
    const int stride = 5 + net.C;
    p.boxes.resize((size_t)slots * 4);
    p.objectness.resize(slots);
    p.classes.resize((size_t)slots * net.C);
    for (int i = 0; i < slots; i++) {
        for (int k = 0; k < 4; k++) p.boxes[i * 4 + k] = head.v[(size_t)i * stride + k];
        p.objectness[i] = head.v[(size_t)i * stride + 4];
        for (int j = 0; j < net.C; j++) p.classes[i * net.C + j] = head.v[(size_t)i * stride + 5 + j];
    }
    return p;
}

} // namespace

Tensor to_tensor(const Image& img) {
    Tensor t;
    t.c = 3;
    t.h = img.height;
    t.w = img.width;
    t.v.resize((size_t)3 * img.height * img.width);
    for (int ch = 0; ch < 3; ch++)
        for (int y = 0; y < img.height; y++)
            for (int x = 0; x < img.width; x++) t.at(ch, y, x) = img.at(y, x, ch);
    return t;
}

ToyNet make_toy_net(int in_w, int in_h, int S, int B, int C) {
    if (in_w < 4 || in_h < 4 || in_w % 4 != 0 || in_h % 4 != 0)
        throw error(errc::invalid_param, "input dims must be positive multiples of 4");
    if (S < 1 || B < 1 || C < 1) throw error(errc::invalid_param, "S, B, C must be positive");
    ToyNet net;
    net.S = S;
    net.B = B;
    net.C = C;
    net.in_width = in_w;
    net.in_height = in_h;
    int head_in = 16 * (in_w / 4) * (in_h / 4);
    int head_out = S * S * B * (5 + C);
    net.layers = {
        {LayerKind::conv3x3, 3, 8, 1},      {LayerKind::relu, 8, 8, 1},
        {LayerKind::maxpool2, 8, 8, 2},     {LayerKind::conv3x3, 8, 16, 1},
        {LayerKind::relu, 16, 16, 1},       {LayerKind::maxpool2, 16, 16, 2},
        {LayerKind::conv3x3, 16, 16, 1},    {LayerKind::relu, 16, 16, 1},
        {LayerKind::detection_head, head_in, head_out, 1},
    };
    net.params.assign(param_count(net), 0.0);
    return net;
}

int param_count(const ToyNet& net) {
    int total = 0;
    for (const LayerSpec& l : net.layers) total += spec_param_count(l);
    return total;
}

int layer_param_offset(const ToyNet& net, int layer) {
    int off = 0;
    for (int i = 0; i < layer; i++) off += spec_param_count(net.layers[i]);
    return off;
}

int layer_param_count(const ToyNet& net, int layer) { return spec_param_count(net.layers[layer]); }

void init_params(ToyNet& net, SplitMix64& rng) {
    net.params.assign(param_count(net), 0.0);
    for (int l = 0; l < (int)net.layers.size(); l++) {
        const LayerSpec& spec = net.layers[l];
        int off = layer_param_offset(net, l);
        if (spec.kind == LayerKind::conv3x3) {
            int fan_in = spec.in_channels * 9;
            double bound = std::sqrt(6.0 / fan_in);
            int weights = spec.out_channels * spec.in_channels * 9;
            for (int i = 0; i < weights; i++) net.params[off + i] = rng.next_in(-bound, bound);
        } else if (spec.kind == LayerKind::detection_head) {
            double bound = std::sqrt(6.0 / spec.in_channels);
            int weights = spec.out_channels * spec.in_channels;
            for (int i = 0; i < weights; i++) net.params[off + i] = rng.next_in(-bound, bound);
        }
    }
}

ActGrads zero_seeds(const ToyNet& net) { return ActGrads(net.layers.size()); }

Prediction forward(const ToyNet& net, const Image& img, ActivationTrace* trace) {
    check_net(net);
    if (img.width != net.in_width || img.height != net.in_height)
        throw error(errc::shape_mismatch, "image dims do not match the network input");

    Tensor cur = to_tensor(img);
    if (trace) {
        trace->input = cur;
        trace->acts.clear();
    }

    int off = 0;
    for (const LayerSpec& spec : net.layers) {
        Tensor out;
        switch (spec.kind) {
        case LayerKind::conv3x3: {
            if (cur.c != spec.in_channels)
                throw error(errc::shape_mismatch, "conv input channel mismatch");
            out.c = spec.out_channels;
            out.h = cur.h;
            out.w = cur.w;
            out.v.assign((size_t)out.c * out.h * out.w, 0.0);
            const double* weights = net.params.data() + off;
            const double* biases = weights + (size_t)spec.out_channels * spec.in_channels * 9;
            for (int oc = 0; oc < out.c; oc++) {
                for (int y = 0; y < out.h; y++) {
                    for (int x = 0; x < out.w; x++) {
                        double acc = biases[oc];
                        for (int ic = 0; ic < cur.c; ic++) {
                            const double* wk = weights + ((size_t)oc * cur.c + ic) * 9;
                            for (int ky = 0; ky < 3; ky++) {
                                int iy = y + ky - 1;
                                if (iy < 0 || iy >= cur.h) continue;
                                for (int kx = 0; kx < 3; kx++) {
                                    int ix = x + kx - 1;
                                    if (ix < 0 || ix >= cur.w) continue;
                                    acc += wk[ky * 3 + kx] * cur.at(ic, iy, ix);
                                }
                            }
                        }
                        out.at(oc, y, x) = acc;
                    }
                }
            }
            break;
        }
        case LayerKind::relu: {
            out = cur;
            for (double& v : out.v) v = std::max(0.0, v);
            break;
        }
        case LayerKind::maxpool2: {
            if (cur.h % 2 != 0 || cur.w % 2 != 0)
                throw error(errc::shape_mismatch, "pooled dims must be even");
            out.c = cur.c;
            out.h = cur.h / 2;
            out.w = cur.w / 2;
            out.v.resize((size_t)out.c * out.h * out.w);
            for (int ch = 0; ch < out.c; ch++)
                for (int y = 0; y < out.h; y++)
                    for (int x = 0; x < out.w; x++) {
                        double m = cur.at(ch, 2 * y, 2 * x);
                        m = std::max(m, cur.at(ch, 2 * y, 2 * x + 1));
                        m = std::max(m, cur.at(ch, 2 * y + 1, 2 * x));
                        m = std::max(m, cur.at(ch, 2 * y + 1, 2 * x + 1));
                        out.at(ch, y, x) = m;
                    }
            break;
        }
        case LayerKind::detection_head: {
            if (cur.size() != spec.in_channels)
                throw error(errc::shape_mismatch, "head input size mismatch");
            const int out_dim = spec.out_channels;
            const double* weights = net.params.data() + off;
            const double* biases = weights + (size_t)out_dim * spec.in_channels;
            std::vector<double> raw(out_dim);
            for (int o = 0; o < out_dim; o++) {
                double acc = biases[o];
                const double* row = weights + (size_t)o * spec.in_channels;
                for (int i = 0; i < spec.in_channels; i++) acc += row[i] * cur.v[i];
                raw[o] = acc;
            }
            const int slots = net.S * net.S * net.B;
            const int stride = 5 + net.C;
            if (out_dim != slots * stride)
                throw error(errc::shape_mismatch, "head output size mismatch");
            out.c = out_dim;
            out.h = 1;
            out.w = 1;
            out.v.resize(out_dim);
            for (int s = 0; s < slots; s++) {
                double* dst = out.v.data() + (size_t)s * stride;
                const double* src = raw.data() + (size_t)s * stride;
                for (int k = 0; k < 4; k++) dst[k] = src[k];
                dst[4] = 1.0 / (1.0 + std::exp(-src[4]));
                double mx = src[5];
                for (int j = 1; j < net.C; j++) mx = std::max(mx, src[5 + j]);
                double denom = 0.0;
                for (int j = 0; j < net.C; j++) denom += std::exp(src[5 + j] - mx);
                for (int j = 0; j < net.C; j++) dst[5 + j] = std::exp(src[5 + j] - mx) / denom;
            }
            break;
        }
        }
        off += spec_param_count(spec);
        if (trace) trace->acts.push_back(out);
        cur = std::move(out);
    }
    return unpack_head(net, cur);
}

std::vector<double> backward(const ToyNet& net, const ActivationTrace& trace, const ActGrads& seeds) {
    check_net(net);
    const int L = (int)net.layers.size();
    if ((int)trace.acts.size() != L)
        throw error(errc::missing_trace, "trace does not cover the network");
    if ((int)seeds.size() != L)
        throw error(errc::invalid_param, "seed list must have one entry per layer");

    std::vector<double> param_grad(param_count(net), 0.0);
    std::vector<double> g = seeds[L - 1];
    if (g.empty()) g.assign(trace.acts[L - 1].v.size(), 0.0);
    if (g.size() != trace.acts[L - 1].v.size())
        throw error(errc::shape_mismatch, "seed size mismatch on the last layer");

    for (int l = L - 1; l >= 0; l--) {
        const LayerSpec& spec = net.layers[l];
        const Tensor& in = l == 0 ? trace.input : trace.acts[l - 1];
        const Tensor& out = trace.acts[l];
        if (g.size() != out.v.size()) throw error(errc::shape_mismatch, "activation grad size mismatch");
        const int off = layer_param_offset(net, l);
        std::vector<double> gin(in.v.size(), 0.0);

        switch (spec.kind) {
        case LayerKind::conv3x3: {
            const double* weights = net.params.data() + off;
            double* dw = param_grad.data() + off;
            double* db = dw + (size_t)spec.out_channels * spec.in_channels * 9;
            for (int oc = 0; oc < out.c; oc++) {
                for (int y = 0; y < out.h; y++) {
                    for (int x = 0; x < out.w; x++) {
                        double go = g[((size_t)oc * out.h + y) * out.w + x];
                        if (go == 0.0) continue;
                        db[oc] += go;
                        for (int ic = 0; ic < in.c; ic++) {
                            const double* wk = weights + ((size_t)oc * in.c + ic) * 9;
                            double* dwk = dw + ((size_t)oc * in.c + ic) * 9;
                            for (int ky = 0; ky < 3; ky++) {
                                int iy = y + ky - 1;
                                if (iy < 0 || iy >= in.h) continue;
                                for (int kx = 0; kx < 3; kx++) {
                                    int ix = x + kx - 1;
                                    if (ix < 0 || ix >= in.w) continue;
                                    dwk[ky * 3 + kx] += go * in.at(ic, iy, ix);
                                    gin[((size_t)ic * in.h + iy) * in.w + ix] += go * wk[ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case LayerKind::relu: {
            for (size_t i = 0; i < g.size(); i++) gin[i] = out.v[i] > 0.0 ? g[i] : 0.0;
            break;
        }
        case LayerKind::maxpool2: {
            for (int ch = 0; ch < out.c; ch++)
                for (int y = 0; y < out.h; y++)
                    for (int x = 0; x < out.w; x++) {
                        double go = g[((size_t)ch * out.h + y) * out.w + x];
                        if (go == 0.0) continue;
                        // first maximum in scan order takes the gradient
                        int by = 2 * y, bx = 2 * x;
                        double best = in.at(ch, by, bx);
                        for (int dy = 0; dy < 2; dy++)
                            for (int dx = 0; dx < 2; dx++) {
                                double v = in.at(ch, 2 * y + dy, 2 * x + dx);
                                if (v > best) {
                                    best = v;
                                    by = 2 * y + dy;
                                    bx = 2 * x + dx;
                                }
                            }
                        gin[((size_t)ch * in.h + by) * in.w + bx] += go;
                    }
            break;
        }
        case LayerKind::detection_head: {
            const int out_dim = spec.out_channels;
            const int slots = net.S * net.S * net.B;
            const int stride = 5 + net.C;
            // undo sigmoid/softmax: g is wrt post-nonlinearity outputs
            std::vector<double> draw((size_t)out_dim);
            for (int s = 0; s < slots; s++) {
                const double* o = out.v.data() + (size_t)s * stride;
                const double* gs = g.data() + (size_t)s * stride;
                double* dr = draw.data() + (size_t)s * stride;
                for (int k = 0; k < 4; k++) dr[k] = gs[k];
                dr[4] = gs[4] * o[4] * (1.0 - o[4]);
                double dot = 0.0;
                for (int j = 0; j < net.C; j++) dot += gs[5 + j] * o[5 + j];
                for (int j = 0; j < net.C; j++) dr[5 + j] = o[5 + j] * (gs[5 + j] - dot);
            }
            const double* weights = net.params.data() + off;
            double* dw = param_grad.data() + off;
            double* db = dw + (size_t)out_dim * spec.in_channels;
            for (int o = 0; o < out_dim; o++) {
                double go = draw[o];
                if (go == 0.0) continue;
                db[o] += go;
                const double* row = weights + (size_t)o * spec.in_channels;
                double* drow = dw + (size_t)o * spec.in_channels;
                for (int i = 0; i < spec.in_channels; i++) {
                    drow[i] += go * in.v[i];
                    gin[i] += go * row[i];
                }
            }
            break;
        }
        }

        if (l == 0) break;
        if (!seeds[l - 1].empty()) {
            if (seeds[l - 1].size() != gin.size())
                throw error(errc::shape_mismatch, "seed size mismatch at layer " + std::to_string(l));
            for (size_t i = 0; i < gin.size(); i++) gin[i] += seeds[l - 1][i];
        }
        g = std::move(gin);
    }
    return param_grad;
}

std::vector<double> head_seed(const ToyNet& net, const PredictionGrad& g) {
    const int slots = net.S * net.S * net.B;
    const int stride = 5 + net.C;
    std::vector<double> seed((size_t)slots * stride, 0.0);
    for (int s = 0; s < slots; s++) {
        for (int k = 0; k < 4; k++) seed[(size_t)s * stride + k] = g.boxes[s * 4 + k];
        seed[(size_t)s * stride + 4] = g.objectness[s];
        for (int j = 0; j < net.C; j++) seed[(size_t)s * stride + 5 + j] = g.classes[s * net.C + j];
    }
    return seed;
}

double activation_gap(const ActivationTrace& a, const ActivationTrace& b, const PercConfig& cfg,
                      ActGrads* grad_a) {
    const int L = (int)a.acts.size();
    if ((int)b.acts.size() != L) throw error(errc::shape_mismatch, "traces cover different depths");
    if (cfg.start < 1 || cfg.start > cfg.end || cfg.end > L)
        throw error(errc::invalid_param, "layer range must satisfy 1 <= start <= end <= depth");

    if (grad_a) grad_a->assign(L, {});
    const double denom_layers = std::max(1, cfg.end - cfg.start);
    double total = 0.0;
    for (int l = cfg.start - 1; l <= cfg.end - 1; l++) {
        const Tensor& ta = a.acts[l];
        const Tensor& tb = b.acts[l];
        if (ta.v.size() != tb.v.size())
            throw error(errc::shape_mismatch, "activation shapes differ at layer " + std::to_string(l + 1));
        const double scale = 1.0 / (denom_layers * (double)ta.v.size());
        double acc = 0.0;
        if (grad_a) (*grad_a)[l].resize(ta.v.size());
        for (size_t i = 0; i < ta.v.size(); i++) {
            double d = ta.v[i] - tb.v[i];
            acc += d * d;
            if (grad_a) (*grad_a)[l][i] = 2.0 * d * scale;
        }
        total += acc * scale;
    }
    return total;
}

double perceptual_loss(const ToyNet& net, const Image& xa, const Image& xb, const PercConfig& cfg) {
    ActivationTrace ta, tb;
    forward(net, xa, &ta);
    forward(net, xb, &tb);
    return activation_gap(ta, tb, cfg);
}

double ts_perceptual_loss(const ToyNet& student, const ToyNet& teacher, const Image& x_clear,
                          const DepthMap& depth, const FogParams& fog, const PercConfig& cfg) {
    if (!same_architecture(student, teacher))
        throw error(errc::architecture_mismatch, "student and teacher nets differ");
    Image foggy = render_fog(x_clear, depth, fog);
    ActivationTrace ts, tt;
    forward(student, foggy, &ts);
    forward(teacher, x_clear, &tt);
    return activation_gap(ts, tt, cfg);
}

bool same_architecture(const ToyNet& a, const ToyNet& b) {
    if (a.S != b.S || a.B != b.B || a.C != b.C) return false;
    if (a.in_width != b.in_width || a.in_height != b.in_height) return false;
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t i = 0; i < a.layers.size(); i++) {
        const LayerSpec &la = a.layers[i], &lb = b.layers[i];
        if (la.kind != lb.kind || la.in_channels != lb.in_channels ||
            la.out_channels != lb.out_channels || la.stride != lb.stride)
            return false;
    }
    return true;
}

void save_checkpoint(const std::string& path, const ToyNet& net) {
    json header;
    header["S"] = net.S;
    header["B"] = net.B;
    header["C"] = net.C;
    header["in_w"] = net.in_width;
    header["in_h"] = net.in_height;
    header["param_count"] = (long long)net.params.size();
    header["layers"] = json::array();
    for (const LayerSpec& l : net.layers)
        header["layers"].push_back({{"kind", kind_name(l.kind)}, {"in", l.in_channels}, {"out", l.out_channels}});

    std::vector<unsigned char> bytes;
    const std::string magic = "FGCKPT1\n";
    const std::string head = header.dump() + "\n";
    bytes.insert(bytes.end(), magic.begin(), magic.end());
    bytes.insert(bytes.end(), head.begin(), head.end());
    bytes.reserve(bytes.size() + net.params.size() * 8);
    for (double d : net.params) {
        unsigned long long u = std::bit_cast<unsigned long long>(d);
        for (int i = 0; i < 8; i++) bytes.push_back((unsigned char)(u >> (8 * i)));
    }
    write_file_bytes(path, bytes);
}

ToyNet load_checkpoint(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    const std::string magic = "FGCKPT1\n";
    if (bytes.size() < magic.size() || !std::equal(magic.begin(), magic.end(), bytes.begin()))
        throw error(errc::malformed_header, "not a checkpoint file: " + path);
    size_t header_end = magic.size();
    while (header_end < bytes.size() && bytes[header_end] != '\n') header_end++;
    if (header_end >= bytes.size())
        throw error(errc::malformed_header, "checkpoint header line is unterminated");

    json header;
    try {
        header = json::parse(std::string(bytes.begin() + magic.size(), bytes.begin() + header_end));
    } catch (const json::exception& e) {
        throw error(errc::malformed_header, std::string("checkpoint header: ") + e.what());
    }
    for (const auto& [key, value] : header.items()) {
        (void)value;
        if (key != "S" && key != "B" && key != "C" && key != "in_w" && key != "in_h" &&
            key != "param_count" && key != "layers")
            throw error(errc::malformed_header, "checkpoint header has unknown key: " + key);
    }

    ToyNet net;
    try {
        net.S = header.at("S").get<int>();
        net.B = header.at("B").get<int>();
        net.C = header.at("C").get<int>();
        net.in_width = header.at("in_w").get<int>();
        net.in_height = header.at("in_h").get<int>();
        for (const json& l : header.at("layers")) {
            LayerSpec spec;
            spec.kind = kind_from_name(l.at("kind").get<std::string>());
            spec.in_channels = l.at("in").get<int>();
            spec.out_channels = l.at("out").get<int>();
            spec.stride = spec.kind == LayerKind::maxpool2 ? 2 : 1;
            net.layers.push_back(spec);
        }
    } catch (const json::exception& e) {
        throw error(errc::malformed_header, std::string("checkpoint header: ") + e.what());
    }

    long long declared = header.at("param_count").get<long long>();
    if (declared != (long long)param_count(net))
        throw error(errc::architecture_mismatch, "param_count disagrees with the layer list");
    size_t payload = bytes.size() - header_end - 1;
    if (payload != (size_t)declared * 8)
        throw error(errc::truncated_data, "checkpoint payload has wrong length");

    net.params.resize((size_t)declared);
    const unsigned char* p = bytes.data() + header_end + 1;
    for (long long i = 0; i < declared; i++) {
        unsigned long long u = 0;
        for (int b = 0; b < 8; b++) u |= (unsigned long long)p[i * 8 + b] << (8 * b);
        net.params[i] = std::bit_cast<double>(u);
        if (!std::isfinite(net.params[i]))
            throw error(errc::invalid_param, "checkpoint contains nonfinite parameters");
    }
    return net;
}

} // namespace fogdet
