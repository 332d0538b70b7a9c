#pragma once

#include <vector>

#include "fogdet/image.hpp"
#include "fogdet/rng.hpp"

namespace fogdet {

// Homogeneous fog: density beta (attenuation per unit relative depth) and a
// spatially constant airlight intensity.
struct FogParams {
    double beta = 0.0;
    double airlight = 0.5;
};

// Sampling interval for per-image fog draws.
struct FogDistribution {
    double beta_min = 0.0;
    double beta_max = 0.15;
};

constexpr double kDefaultAirlight = 0.5;
constexpr double kDepthMax = 10.0;            // rescale target for loaded depth rasters
constexpr double kTransmissionEps = 1e-6;     // defog_exact underflow cutoff

// Per-pixel t = exp(-beta * d), row-major, same dims as d. t in (0,1],
// t == 1 wherever d == 0.
std::vector<double> transmission(const DepthMap& d, double beta);

// g = t*x + (1-t)*A per pixel and channel.
Image render_fog(const Image& img, const DepthMap& d, const FogParams& p);

// Algebraic inverse of render_fog: x = (g - (1-t)A) / t. Requires t >= eps
// everywhere; used as the recovery oracle for the fog model.
Image defog_exact(const Image& foggy, const DepthMap& d, const FogParams& p);

// Analytic depth surrogate: sqrt(max(W,H)) - 0.04*||u - c||, clamped at 0,
// with c the image center in pixel coordinates. Maximal at the center.
DepthMap pseudo_depth(int width, int height);

// Linear rescale so max(output) == d_max; all-zero input passes through.
DepthMap rescale_depth(const DepthMap& d, double d_max);

// Uniform draw from [beta_min, beta_max].
double sample_beta(const FogDistribution& dist, SplitMix64& rng);

} // namespace fogdet
