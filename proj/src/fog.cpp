#include "fogdet/fog.hpp"

#include <algorithm>
#include <cmath>

#include "fogdet/error.hpp"

namespace fogdet {

namespace {

void check_params(const FogParams& p) {
    if (!(p.beta >= 0.0) || !std::isfinite(p.beta))
        throw error(errc::invalid_param, "beta must be finite and >= 0");
    if (!(p.airlight >= 0.0 && p.airlight <= 1.0))
        throw error(errc::invalid_param, "airlight must be in [0,1]");
}

} // namespace

std::vector<double> transmission(const DepthMap& d, double beta) {
    if (!(beta >= 0.0) || !std::isfinite(beta))
        throw error(errc::invalid_param, "beta must be finite and >= 0");
    std::vector<double> t(d.data.size());
    for (size_t i = 0; i < d.data.size(); ++i) t[i] = std::exp(-beta * d.data[i]);
    return t;
}

Image render_fog(const Image& img, const DepthMap& d, const FogParams& p) {
    check_params(p);
    if (img.width != d.width || img.height != d.height)
        throw error(errc::dimension_mismatch, "image and depth dimensions differ");

    std::vector<double> t = transmission(d, p.beta);
    Image out;
    out.width = img.width;
    out.height = img.height;
    out.data.resize(img.data.size());
    for (size_t px = 0; px < t.size(); ++px) {
        double ti = t[px];
        double air = (1.0 - ti) * p.airlight;
        for (int ch = 0; ch < 3; ++ch) out.data[px * 3 + ch] = ti * img.data[px * 3 + ch] + air;
    }
    return out;
}

Image defog_exact(const Image& foggy, const DepthMap& d, const FogParams& p) {
    check_params(p);
    if (foggy.width != d.width || foggy.height != d.height)
        throw error(errc::dimension_mismatch, "image and depth dimensions differ");

    std::vector<double> t = transmission(d, p.beta);
    for (double ti : t)
        if (ti < kTransmissionEps)
            throw error(errc::transmission_underflow, "transmission below 1e-6");

    Image out;
    out.width = foggy.width;
    out.height = foggy.height;
    out.data.resize(foggy.data.size());
    for (size_t px = 0; px < t.size(); ++px) {
        double ti = t[px];
        double air = (1.0 - ti) * p.airlight;
        for (int ch = 0; ch < 3; ++ch) out.data[px * 3 + ch] = (foggy.data[px * 3 + ch] - air) / ti;
    }
    return out;
}

DepthMap pseudo_depth(int width, int height) {
    if (width < 1 || height < 1) throw error(errc::invalid_param, "dimensions must be >= 1");
    double peak = std::sqrt(static_cast<double>(std::max(width, height)));
    double cx = width / 2.0;
    double cy = height / 2.0;
    DepthMap d;
    d.width = width;
    d.height = height;
    d.data.resize(static_cast<size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double dist = std::hypot(x - cx, y - cy);
            d.at(y, x) = std::max(peak - 0.04 * dist, 0.0);
        }
    }
    return d;
}

DepthMap rescale_depth(const DepthMap& d, double d_max) {
    if (!(d_max > 0.0)) throw error(errc::invalid_param, "d_max must be > 0");
    double cur_max = 0.0;
    for (double v : d.data) cur_max = std::max(cur_max, v);
    DepthMap out = d;
    if (cur_max == 0.0) return out;
    double k = d_max / cur_max;
    for (double& v : out.data) v *= k;
    return out;
}

double sample_beta(const FogDistribution& dist, SplitMix64& rng) {
    if (!(dist.beta_min >= 0.0 && dist.beta_min <= dist.beta_max))
        throw error(errc::invalid_param, "require 0 <= beta_min <= beta_max");
    return rng.next_in(dist.beta_min, dist.beta_max);
}

} // namespace fogdet
