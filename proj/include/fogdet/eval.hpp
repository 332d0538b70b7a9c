#pragma once

#include "fogdet/detect.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fogdet {

enum class APMethod {
    all_points, // precision-envelope area under the PR curve
    voc11,      // mean of interpolated precision at 11 recall points
};

struct PerClassAP {
    int class_id = 0;
    int truth_count = 0;
    int detection_count = 0;
    double ap = 0.0;
};

struct MapReport {
    double mean_ap = 0.0;
    std::vector<PerClassAP> per_class; // ascending class id, classes with truth only
};

// Ground truth boxes keyed by image id.
using TruthIndex = std::map<std::string, std::vector<GroundTruthBox>>;

// True-positive flags for one class on one image, in input order. Detections
// are visited confidence-descending (ties: input order); each claims the
// unmatched truth with the highest IoU, counting as TP only when that IoU is
// strictly above the threshold.
std::vector<bool> greedy_tp_flags(const std::vector<DetectionRecord>& dets,
                                  const std::vector<Box>& truths, double iou_threshold);

// AP for one class from pooled (confidence, is_tp) pairs against truth_count
// ground truth boxes. 0 when there are no detections or no truth.
double average_precision(std::vector<std::pair<double, bool>> scored, int truth_count,
                         APMethod method = APMethod::all_points);

// Mean AP over every class that has at least one ground truth box.
// Detections naming an image id absent from the truth index are an error.
MapReport mean_ap(const std::vector<DetectionRecord>& dets, const TruthIndex& truth,
                  double iou_threshold = 0.5, APMethod method = APMethod::all_points);

// One detection per line: image_id class_id confidence x_min y_min x_max
// y_max, reals with six fractional digits.
void save_detections(const std::string& path, const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> load_detections(const std::string& path);

} // namespace fogdet
