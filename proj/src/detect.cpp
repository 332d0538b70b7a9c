#include "fogdet/detect.hpp"

#include "fogdet/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fogdet {

namespace {

constexpr double kProbEps = 1e-12;

double clamp_prob(double p, LossStats* stats) {
    if (p >= kProbEps && p <= 1.0 - kProbEps) return p;
    if (stats) stats->log_clamps++;
    return std::min(std::max(p, kProbEps), 1.0 - kProbEps);
}

bool is_object(const GridLabel& truth, int slot) {
    return truth.objectness[slot] > 0.5;
}

int truth_class(const GridLabel& truth, int slot) {
    int best = 0;
    for (int c = 1; c < truth.C; c++)
        if (truth.classes[slot * truth.C + c] > truth.classes[slot * truth.C + best]) best = c;
    return best;
}

void check_layout(const Prediction& pred, const GridLabel& truth) {
    if (pred.S != truth.S || pred.B != truth.B || pred.C != truth.C)
        throw error(errc::shape_mismatch, "prediction and target grids disagree");
    const int n = pred.slot_count();
    if ((int)pred.boxes.size() != n * 4 || (int)pred.objectness.size() != n ||
        (int)pred.classes.size() != n * pred.C || (int)truth.boxes.size() != n * 4 ||
        (int)truth.objectness.size() != n || (int)truth.classes.size() != n * truth.C)
        throw error(errc::shape_mismatch, "grid arrays have wrong length");
}

// Completes a matching to a full slot permutation: matched pairs keep their
// assignment, leftover truth slots take leftover pred slots in ascending
// index order on both sides.
std::vector<int> full_assignment(const Matching& m, int n) {
    std::vector<int> pred_of(n, -1);
    std::vector<bool> pred_used(n, false);
    for (int p = 0; p < n; p++) {
        if (m.truth_of[p] >= 0) {
            pred_of[m.truth_of[p]] = p;
            pred_used[p] = true;
        }
    }
    int next = 0;
    for (int t = 0; t < n; t++) {
        if (pred_of[t] >= 0) continue;
        while (pred_used[next]) next++;
        pred_of[t] = next;
        pred_used[next] = true;
    }
    return pred_of;
}

} // namespace

std::vector<std::pair<int, int>> Matching::pairs() const {
    std::vector<std::pair<int, int>> out;
    for (int p = 0; p < (int)truth_of.size(); p++)
        if (truth_of[p] >= 0) out.emplace_back(p, truth_of[p]);
    return out;
}

GridLabel encode_grid(const std::vector<GroundTruthBox>& boxes, int img_w, int img_h,
                      int S, int B, int C, int* dropped) {
    if (S < 1 || B < 1 || C < 1 || img_w < 1 || img_h < 1)
        throw error(errc::invalid_param, "encode_grid needs positive grid and image dims");
    GridLabel g;
    g.S = S;
    g.B = B;
    g.C = C;
    g.boxes.assign((size_t)S * S * B * 4, 0.0);
    g.objectness.assign((size_t)S * S * B, 0.0);
    g.classes.assign((size_t)S * S * B * C, 0.0);
    if (dropped) *dropped = 0;

    // candidate box indices per cell, input order
    std::vector<std::vector<int>> cells((size_t)S * S);
    for (int i = 0; i < (int)boxes.size(); i++) {
        const GroundTruthBox& gt = boxes[i];
        if (gt.class_id < 0 || gt.class_id >= C)
            throw error(errc::unknown_class, "class id out of range in grid target");
        if (!(gt.box.x_max > gt.box.x_min) || !(gt.box.y_max > gt.box.y_min))
            throw error(errc::degenerate_box, "box has no area");
        double cx = 0.5 * (gt.box.x_min + gt.box.x_max) / img_w;
        double cy = 0.5 * (gt.box.y_min + gt.box.y_max) / img_h;
        int cell_x = std::min(S - 1, (int)std::floor(cx * S));
        int cell_y = std::min(S - 1, (int)std::floor(cy * S));
        cells[(size_t)cell_y * S + cell_x].push_back(i);
    }

    for (int cell = 0; cell < S * S; cell++) {
        std::vector<int>& cand = cells[cell];
        std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
            double aa = (boxes[a].box.x_max - boxes[a].box.x_min) * (boxes[a].box.y_max - boxes[a].box.y_min);
            double ab = (boxes[b].box.x_max - boxes[b].box.x_min) * (boxes[b].box.y_max - boxes[b].box.y_min);
            return aa > ab;
        });
        if ((int)cand.size() > B) {
            if (dropped) *dropped += (int)cand.size() - B;
            cand.resize(B);
        }
        for (int k = 0; k < (int)cand.size(); k++) {
            const GroundTruthBox& gt = boxes[cand[k]];
            int slot = cell * B + k;
            g.boxes[slot * 4 + 0] = 0.5 * (gt.box.x_min + gt.box.x_max) / img_w;
            g.boxes[slot * 4 + 1] = 0.5 * (gt.box.y_min + gt.box.y_max) / img_h;
            g.boxes[slot * 4 + 2] = (gt.box.x_max - gt.box.x_min) / img_w;
            g.boxes[slot * 4 + 3] = (gt.box.y_max - gt.box.y_min) / img_h;
            g.objectness[slot] = 1.0;
            g.classes[slot * C + gt.class_id] = 1.0;
        }
    }
    return g;
}

double iou(const Box& a, const Box& b) {
    double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    double inter = iw * ih;
    double area_a = std::max(0.0, a.x_max - a.x_min) * std::max(0.0, a.y_max - a.y_min);
    double area_b = std::max(0.0, b.x_max - b.x_min) * std::max(0.0, b.y_max - b.y_min);
    double uni = area_a + area_b - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

double huber(double z) {
    double a = std::fabs(z);
    return a <= 1.0 ? 0.5 * z * z : a - 0.5;
}

Box decode_slot(const std::vector<double>& slot_boxes, int slot) {
    double cx = slot_boxes[slot * 4 + 0];
    double cy = slot_boxes[slot * 4 + 1];
    double w = slot_boxes[slot * 4 + 2];
    double h = slot_boxes[slot * 4 + 3];
    return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

int argmax_class(const std::vector<double>& classes, int slot, int C) {
    int best = 0;
    for (int c = 1; c < C; c++)
        if (classes[slot * C + c] > classes[slot * C + best]) best = c;
    return best;
}

Matching greedy_match(const Prediction& pred, const GridLabel& truth) {
    check_layout(pred, truth);
    const int n = pred.slot_count();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return pred.objectness[a] > pred.objectness[b];
    });

    Matching m;
    m.truth_of.assign(n, -1);
    std::vector<bool> taken(n, false);
    for (int p : order) {
        Box pb = decode_slot(pred.boxes, p);
        int best = -1;
        double best_iou = 0.0;
        for (int t = 0; t < n; t++) {
            if (!is_object(truth, t) || taken[t]) continue;
            double v = iou(pb, decode_slot(truth.boxes, t));
            if (v > best_iou) {
                best_iou = v;
                best = t;
            }
        }
        if (best >= 0) {
            m.truth_of[p] = best;
            taken[best] = true;
        }
    }
    return m;
}

double loc_loss(const Prediction& pred, const GridLabel& truth, const Matching& m,
                LossStats* stats) {
    check_layout(pred, truth);
    const int n = pred.slot_count();
    std::vector<int> pred_of(n, -1);
    for (int p = 0; p < n; p++)
        if (m.truth_of[p] >= 0) pred_of[m.truth_of[p]] = p;

    int b = 0;
    double sum = 0.0;
    for (int t = 0; t < n; t++) {
        if (!is_object(truth, t)) continue;
        b++;
        int p = pred_of[t];
        for (int k = 0; k < 4; k++) {
            double target = truth.boxes[t * 4 + k];
            double got = p >= 0 ? pred.boxes[p * 4 + k] : 0.0;
            sum += huber(target - got);
        }
    }
    if (b == 0) {
        if (stats) stats->no_true_boxes++;
        return 0.0;
    }
    return sum / b;
}

double conf_loss(const Prediction& pred, const GridLabel& truth, const Matching& m,
                 ConfMode mode, LossStats* stats) {
    check_layout(pred, truth);
    const int n = pred.slot_count();
    double loss = 0.0;

    if (mode == ConfMode::bce) {
        std::vector<int> pred_of(n, -1);
        for (int p = 0; p < n; p++)
            if (m.truth_of[p] >= 0) pred_of[m.truth_of[p]] = p;
        for (int t = 0; t < n; t++) {
            if (!is_object(truth, t)) continue;
            int p = pred_of[t];
            // an unclaimed true box scores as objectness zero
            double po = clamp_prob(p >= 0 ? pred.objectness[p] : 0.0, stats);
            loss -= std::log(po);
            if (p >= 0) {
                double pc = clamp_prob(pred.classes[p * pred.C + truth_class(truth, t)], stats);
                loss -= std::log(pc);
            }
        }
        for (int p = 0; p < n; p++) {
            if (m.truth_of[p] >= 0) continue;
            double po = clamp_prob(pred.objectness[p], stats);
            loss -= std::log(1.0 - po);
        }
        return loss;
    }

    // assignment form: the matching is completed to a slot permutation and
    // the objectness vector is scored as -2 y^T log(p) + 1^T log(p)
    std::vector<int> pred_of = full_assignment(m, n);
    for (int t = 0; t < n; t++) {
        int p = pred_of[t];
        double po = clamp_prob(pred.objectness[p], stats);
        if (is_object(truth, t)) {
            loss -= 2.0 * std::log(po);
            double pc = clamp_prob(pred.classes[p * pred.C + truth_class(truth, t)], stats);
            loss -= std::log(pc);
        }
        loss += std::log(po);
    }
    return loss;
}

double objdet_loss(const Prediction& pred, const GridLabel& truth, double lambda1,
                   ConfMode mode, LossStats* stats) {
    Matching m = greedy_match(pred, truth);
    return loc_loss(pred, truth, m, stats) + lambda1 * conf_loss(pred, truth, m, mode, stats);
}

PredictionGrad objdet_grad(const Prediction& pred, const GridLabel& truth, const Matching& m,
                           double lambda1, ConfMode mode) {
    check_layout(pred, truth);
    const int n = pred.slot_count();
    PredictionGrad g;
    g.boxes.assign((size_t)n * 4, 0.0);
    g.objectness.assign((size_t)n, 0.0);
    g.classes.assign((size_t)n * pred.C, 0.0);

    std::vector<int> pred_of(n, -1);
    for (int p = 0; p < n; p++)
        if (m.truth_of[p] >= 0) pred_of[m.truth_of[p]] = p;

    int b = 0;
    for (int t = 0; t < n; t++)
        if (is_object(truth, t)) b++;
    if (b > 0) {
        for (int t = 0; t < n; t++) {
            if (!is_object(truth, t)) continue;
            int p = pred_of[t];
            if (p < 0) continue; // unmatched truth terms are constant in pred
            for (int k = 0; k < 4; k++) {
                double z = pred.boxes[p * 4 + k] - truth.boxes[t * 4 + k];
                double dz = std::fabs(z) <= 1.0 ? z : (z > 0.0 ? 1.0 : -1.0);
                g.boxes[p * 4 + k] += dz / b;
            }
        }
    }

    auto in_domain = [](double p) { return p >= kProbEps && p <= 1.0 - kProbEps; };

    if (mode == ConfMode::bce) {
        for (int t = 0; t < n; t++) {
            if (!is_object(truth, t)) continue;
            int p = pred_of[t];
            if (p < 0) continue;
            double po = pred.objectness[p];
            if (in_domain(po)) g.objectness[p] -= lambda1 / po;
            int c = truth_class(truth, t);
            double pc = pred.classes[p * pred.C + c];
            if (in_domain(pc)) g.classes[p * pred.C + c] -= lambda1 / pc;
        }
        for (int p = 0; p < n; p++) {
            if (m.truth_of[p] >= 0) continue;
            double po = pred.objectness[p];
            if (in_domain(po)) g.objectness[p] += lambda1 / (1.0 - po);
        }
        return g;
    }

    std::vector<int> full = full_assignment(m, n);
    for (int t = 0; t < n; t++) {
        int p = full[t];
        double po = pred.objectness[p];
        double coeff = is_object(truth, t) ? -1.0 : 1.0; // -2 + 1 on object slots
        if (in_domain(po)) g.objectness[p] += lambda1 * coeff / po;
        if (is_object(truth, t)) {
            int c = truth_class(truth, t);
            double pc = pred.classes[p * pred.C + c];
            if (in_domain(pc)) g.classes[p * pred.C + c] -= lambda1 / pc;
        }
    }
    return g;
}

std::vector<DetectionRecord> decode_boxes(const Prediction& pred, double conf_threshold,
                                          int img_w, int img_h, const std::string& image_id) {
    if (img_w < 1 || img_h < 1) throw error(errc::invalid_param, "decode_boxes needs positive image dims");
    std::vector<DetectionRecord> out;
    const int n = pred.slot_count();
    for (int slot = 0; slot < n; slot++) {
        double obj = pred.objectness[slot];
        if (obj < conf_threshold) continue;
        int cls = argmax_class(pred.classes, slot, pred.C);
        Box nb = decode_slot(pred.boxes, slot);
        DetectionRecord r;
        r.image_id = image_id;
        r.class_id = cls;
        r.confidence = obj * pred.classes[slot * pred.C + cls];
        r.box = Box{nb.x_min * img_w, nb.y_min * img_h, nb.x_max * img_w, nb.y_max * img_h};
        out.push_back(r);
    }
    return out;
}

std::vector<DetectionRecord> nms(const std::vector<DetectionRecord>& records, double iou_threshold) {
    std::vector<int> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return records[a].confidence > records[b].confidence;
    });
    std::vector<int> kept;
    for (int i : order) {
        bool keep = true;
        for (int j : kept) {
            if (records[j].class_id != records[i].class_id) continue;
            if (records[j].image_id != records[i].image_id) continue;
            if (iou(records[j].box, records[i].box) > iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
    std::vector<DetectionRecord> out;
    out.reserve(kept.size());
    for (int i : kept) out.push_back(records[i]);
    return out;
}

} // namespace fogdet
