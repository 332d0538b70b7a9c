#pragma once

#include <string>
#include <vector>

namespace fogdet {

// Axis-aligned corner box, min-inclusive / max-exclusive.
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
};

struct GroundTruthBox {
    int class_id = 0;
    Box box;
};

// Detection target on an SxS grid with B slots per cell. boxes holds
// (cx, cy, w, h) per slot, image-normalized; objectness is a {0,1} indicator
// per slot; classes holds a one-hot row per slot (all-zero for empty slots).
struct GridLabel {
    int S = 0;
    int B = 0;
    int C = 0;
    std::vector<double> boxes;      // S*S*B*4
    std::vector<double> objectness; // S*S*B
    std::vector<double> classes;    // S*S*B*C

    int slot_count() const { return S * S * B; }
};

// Network output in the same layout. objectness values are post-sigmoid,
// strictly inside (0,1); each classes row is a softmax distribution; boxes
// are unconstrained reals read as normalized box parameters.
struct Prediction {
    int S = 0;
    int B = 0;
    int C = 0;
    std::vector<double> boxes;
    std::vector<double> objectness;
    std::vector<double> classes;

    int slot_count() const { return S * S * B; }
};

// Injective partial assignment from predicted slots to true-object slots.
struct Matching {
    std::vector<int> truth_of; // per pred slot, matched truth slot or -1

    std::vector<std::pair<int, int>> pairs() const;
};

// Rolling counters for degenerate inputs; callers pass one when they need to
// assert the paths taken.
struct LossStats {
    int log_clamps = 0;
    int no_true_boxes = 0;
};

enum class ConfMode {
    bce,         // binary cross-entropy over objectness
    paper_exact, // -2 y_o^T log(P y_o) + 1^T log(P y_o) reading
};

// boxes -> grid target. Each box lands in the cell containing its center,
// first free slot; at most B per cell, keeping the largest areas (ties:
// lowest input index). Drops are counted into *dropped when given.
GridLabel encode_grid(const std::vector<GroundTruthBox>& boxes, int img_w, int img_h,
                      int S, int B, int C, int* dropped = nullptr);

double iou(const Box& a, const Box& b);

double huber(double z); // delta = 1

// Confidence-descending greedy assignment (ties: lowest slot index); each
// pred takes the unmatched true slot maximizing decoded-box IoU, requiring
// IoU > 0.
Matching greedy_match(const Prediction& pred, const GridLabel& truth);

// Mean (over true boxes) element-wise Huber on matched box parameters;
// unmatched true boxes are scored against the zero vector. 0 when there are
// no true boxes.
double loc_loss(const Prediction& pred, const GridLabel& truth, const Matching& m,
                LossStats* stats = nullptr);

// Class cross-entropy on matched object slots plus objectness terms (form
// set by mode). Probabilities are clamped to [1e-12, 1-1e-12] before any
// log; clamps are counted, never silent.
double conf_loss(const Prediction& pred, const GridLabel& truth, const Matching& m,
                 ConfMode mode = ConfMode::bce, LossStats* stats = nullptr);

// loc_loss + lambda1 * conf_loss with one shared greedy matching.
double objdet_loss(const Prediction& pred, const GridLabel& truth, double lambda1 = 1.0,
                   ConfMode mode = ConfMode::bce, LossStats* stats = nullptr);

// Gradient of objdet_loss wrt the prediction arrays, holding the matching
// fixed. Same layout as Prediction; objectness/classes grads are wrt the
// post-nonlinearity values.
struct PredictionGrad {
    std::vector<double> boxes;
    std::vector<double> objectness;
    std::vector<double> classes;
};
PredictionGrad objdet_grad(const Prediction& pred, const GridLabel& truth, const Matching& m,
                           double lambda1 = 1.0, ConfMode mode = ConfMode::bce);

// One scored box for detection-file output and mAP scoring.
struct DetectionRecord {
    std::string image_id;
    int class_id = 0;
    double confidence = 0.0;
    Box box;
};

// Slots at or above the objectness threshold, emitted in slot order as pixel
// boxes with class = argmax of the class row and confidence = objectness *
// max class probability.
std::vector<DetectionRecord> decode_boxes(const Prediction& pred, double conf_threshold,
                                          int img_w, int img_h, const std::string& image_id = "");

// Standard greedy per-class suppression at the given IoU threshold.
std::vector<DetectionRecord> nms(const std::vector<DetectionRecord>& records, double iou_threshold = 0.5);

Box decode_slot(const std::vector<double>& slot_boxes, int slot);
int argmax_class(const std::vector<double>& classes, int slot, int C);

} // namespace fogdet
