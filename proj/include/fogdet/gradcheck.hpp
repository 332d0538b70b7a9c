#pragma once

#include "fogdet/net.hpp"

namespace fogdet {

struct GradCheckReport {
    double objdet_err = 0.0;
    double perceptual_err = 0.0;
    double ts_perceptual_err = 0.0;
    double max_err = 0.0;
    int coords_checked = 0;
};

// Central finite differences (step 1e-4) against the analytic gradients of
// the detection loss (matching held fixed), the activation-distance loss and
// its teacher-student variant, on randomly built inputs over the given net.
// per_layer_samples coordinates are probed in each parameterized layer.
// Errors are |analytic - fd| / max(|analytic| + |fd|, 1e-6).
GradCheckReport gradcheck_net(const ToyNet& arch, int perc_start, int perc_end,
                              unsigned long long seed, int per_layer_samples);

// The pinned 64x64 stack.
GradCheckReport gradcheck_toy(int perc_start, int perc_end, unsigned long long seed,
                              int per_layer_samples);

} // namespace fogdet
