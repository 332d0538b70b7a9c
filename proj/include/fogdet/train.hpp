#pragma once

#include "fogdet/dataset.hpp"
#include "fogdet/detect.hpp"
#include "fogdet/net.hpp"

#include <vector>

namespace fogdet {

struct TrainConfig {
    int epochs = 30;
    int teacher_epochs = 0; // 0 means: same as epochs
    double learning_rate = 0.05;
    int batch_size = 4;
    double lambda1 = 1.0; // confidence-term weight
    double lambda2 = 1.0; // activation-distillation weight
    PercConfig perc{5, 9};
    FogDistribution fog_dist;
    unsigned long long seed = 1;
    bool use_pseudo_depth = false; // ignore depth files during training
    bool objdet_on_clear = false;  // detection loss on the clear image, fog only for distillation
    ConfMode conf_mode = ConfMode::bce;
};

struct EpochStats {
    int epoch = 0; // 1-based
    double mean_objdet = 0.0;
    double mean_ts_perc = 0.0; // mean over clear samples; 0 when none
    int clear_seen = 0;
    int real_fog_seen = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double wall_seconds = 0.0; // measured, not part of any determinism contract
};

std::vector<double> sgd_step(std::vector<double> params, const std::vector<double>& grad, double lr);

// Plain detection training over the hybrid set: fresh init from cfg.seed,
// uniform shuffles, batch-mean gradients. Aborts on nonfinite loss.
std::vector<double> train_teacher(const ToyNet& arch, const DatasetSpec& ds_cf,
                                  const TrainConfig& cfg, TrainReport* report = nullptr);

// Distillation loop: the student starts from the teacher's parameters.
// real_fog samples update with the detection loss only; clear samples draw a
// fog density, render fog, and add lambda2 times the activation gap to the
// frozen teacher on the clear image.
std::vector<double> train_student(const ToyNet& arch, const std::vector<double>& teacher_params,
                                  const DatasetSpec& ds_c, const DatasetSpec& ds_f,
                                  const TrainConfig& cfg, TrainReport* report = nullptr);

} // namespace fogdet
