#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "fogdet/detect.hpp"
#include "fogdet/error.hpp"

using namespace fogdet;

namespace {

errc thrown_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.code();
    }
    FAIL("expected a fogdet::error");
    return errc::io_failure;
}

// Prediction that reproduces a grid label almost exactly: boxes copied,
// objectness pushed toward the indicator, class rows near one-hot.
Prediction pred_from_label(const GridLabel& lab, double margin = 1e-9) {
    Prediction p;
    p.S = lab.S;
    p.B = lab.B;
    p.C = lab.C;
    p.boxes = lab.boxes;
    p.objectness.resize(lab.objectness.size());
    p.classes.assign(lab.classes.size(), 0.0);
    for (int s = 0; s < lab.slot_count(); s++) {
        bool filled = lab.objectness[s] > 0.5;
        p.objectness[s] = filled ? 1.0 - margin : margin;
        for (int c = 0; c < lab.C; c++) {
            double hot = lab.classes[(size_t)s * lab.C + c];
            p.classes[(size_t)s * lab.C + c] =
                filled ? (hot > 0.5 ? 1.0 - margin * (lab.C - 1) : margin) : 1.0 / lab.C;
        }
    }
    return p;
}

} // namespace

TEST_CASE("iou covers identity, disjoint, and a pinned overlap") {
    Box a{0, 0, 2, 2};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box{5, 5, 7, 7}) == 0.0);
    CHECK(iou(a, Box{2, 0, 4, 2}) == 0.0); // shared edge only
    CHECK(std::fabs((iou(a, Box{1, 0, 3, 2})) - (1.0 / 3.0)) <= 1e-12);
    CHECK(iou(a, Box{0, 0, 2, 1}) == 0.5); // contained half
}

TEST_CASE("huber is quadratic inside the unit band and linear outside") {
    CHECK(huber(0.0) == 0.0);
    CHECK(huber(0.5) == 0.125);
    CHECK(huber(-0.5) == 0.125);
    CHECK(huber(1.0) == 0.5);
    CHECK(huber(2.0) == 1.5);
    CHECK(huber(-2.0) == 1.5);
}

TEST_CASE("encode_grid places a box in its center cell with normalized params") {
    GridLabel empty = encode_grid({}, 100, 100, 2, 1, 3);
    CHECK(empty.slot_count() == 4);
    CHECK(std::count(empty.objectness.begin(), empty.objectness.end(), 0.0) == 4);
    CHECK(std::count(empty.classes.begin(), empty.classes.end(), 0.0) == 12);

    // center (75, 75) of a 100x100 image lands in cell row 1, col 1 -> slot 3
    std::vector<GroundTruthBox> one = {{2, Box{60, 60, 90, 90}}};
    GridLabel lab = encode_grid(one, 100, 100, 2, 1, 3);
    CHECK(lab.objectness == std::vector<double>{0, 0, 0, 1});
    CHECK(lab.boxes[3 * 4 + 0] == 0.75);
    CHECK(lab.boxes[3 * 4 + 1] == 0.75);
    CHECK(std::fabs((lab.boxes[3 * 4 + 2]) - (0.3)) <= 1e-12);
    CHECK(std::fabs((lab.boxes[3 * 4 + 3]) - (0.3)) <= 1e-12);
    CHECK(lab.classes[(size_t)3 * 3 + 2] == 1.0);
    CHECK(lab.classes[(size_t)3 * 3 + 0] == 0.0);
}

TEST_CASE("encode_grid keeps the largest boxes when a cell overflows") {
    // both centers fall in cell (0,0); the second box is bigger
    std::vector<GroundTruthBox> two = {{0, Box{10, 10, 20, 20}}, {1, Box{5, 5, 45, 45}}};
    int dropped = -1;
    GridLabel lab = encode_grid(two, 100, 100, 2, 1, 3, &dropped);
    CHECK(dropped == 1);
    CHECK(lab.objectness[0] == 1.0);
    CHECK(lab.classes[1] == 1.0); // survivor is the class-1 box
    CHECK(std::fabs((lab.boxes[2]) - (0.4)) <= 1e-12);

    int none = -1;
    encode_grid(two, 100, 100, 2, 2, 3, &none);
    CHECK(none == 0);
}

TEST_CASE("encode_grid rejects bad classes and degenerate boxes") {
    CHECK(thrown_code([] { encode_grid({{3, Box{1, 1, 2, 2}}}, 10, 10, 2, 1, 3); })
          == errc::unknown_class);
    CHECK(thrown_code([] { encode_grid({{-1, Box{1, 1, 2, 2}}}, 10, 10, 2, 1, 3); })
          == errc::unknown_class);
    CHECK(thrown_code([] { encode_grid({{0, Box{2, 1, 2, 3}}}, 10, 10, 2, 1, 3); })
          == errc::degenerate_box);
}

TEST_CASE("greedy_match pairs confident predictions with overlapping truths") {
    std::vector<GroundTruthBox> boxes = {{0, Box{10, 10, 40, 40}}, {1, Box{60, 60, 90, 90}}};
    GridLabel lab = encode_grid(boxes, 100, 100, 2, 1, 3);
    Prediction p = pred_from_label(lab);

    Matching m = greedy_match(p, lab);
    REQUIRE((int)m.truth_of.size() == lab.slot_count());
    CHECK(m.truth_of[0] == 0);
    CHECK(m.truth_of[3] == 3);
    CHECK(m.truth_of[1] == -1);
    CHECK(m.truth_of[2] == -1);
    CHECK(m.pairs() == std::vector<std::pair<int, int>>{{0, 0}, {3, 3}});

    GridLabel none = encode_grid({}, 100, 100, 2, 1, 3);
    Matching mz = greedy_match(pred_from_label(none), none);
    CHECK(std::count(mz.truth_of.begin(), mz.truth_of.end(), -1) == 4);
}

TEST_CASE("greedy_match gives a contested truth to the higher objectness") {
    std::vector<GroundTruthBox> one = {{0, Box{2, 2, 8, 8}}};
    GridLabel lab = encode_grid(one, 10, 10, 1, 2, 2);
    Prediction p = pred_from_label(lab);
    // both slots carry the truth's box; only objectness differs
    p.boxes[4] = p.boxes[0];
    p.boxes[5] = p.boxes[1];
    p.boxes[6] = p.boxes[2];
    p.boxes[7] = p.boxes[3];
    p.objectness = {0.3, 0.8};

    Matching m = greedy_match(p, lab);
    CHECK(m.truth_of[1] == 0);
    CHECK(m.truth_of[0] == -1);
}

TEST_CASE("greedy_match requires positive overlap") {
    std::vector<GroundTruthBox> one = {{0, Box{70, 70, 90, 90}}};
    GridLabel lab = encode_grid(one, 100, 100, 1, 1, 2);
    Prediction p = pred_from_label(lab);
    p.boxes = {0.1, 0.1, 0.05, 0.05}; // nowhere near the truth
    Matching m = greedy_match(p, lab);
    CHECK(m.truth_of[0] == -1);
}

TEST_CASE("loc_loss scores matched offsets and unmatched truths against zero") {
    std::vector<GroundTruthBox> one = {{0, Box{25, 25, 75, 75}}};
    GridLabel lab = encode_grid(one, 100, 100, 1, 1, 2);
    Prediction p = pred_from_label(lab);
    Matching m = greedy_match(p, lab);
    CHECK(loc_loss(p, lab, m) == 0.0);

    Prediction off = p;
    off.boxes[0] += 0.1; // small enough that the slot still wins its truth
    Matching mo = greedy_match(off, lab);
    REQUIRE(mo.truth_of[0] == 0);
    CHECK(std::fabs(loc_loss(off, lab, mo) - huber(0.1)) <= 1e-12);

    // unmatched truth: scored against the zero vector, (0.5,0.5,0.5,0.5) -> 4*huber(0.5)
    Prediction away = p;
    away.boxes = {0.05, 0.05, 0.02, 0.02};
    Matching none = greedy_match(away, lab);
    CHECK(none.truth_of[0] == -1);
    CHECK(std::fabs((loc_loss(away, lab, none)) - (0.5)) <= 1e-12);

    GridLabel empty = encode_grid({}, 100, 100, 1, 1, 2);
    LossStats stats;
    CHECK(loc_loss(pred_from_label(empty), empty, greedy_match(pred_from_label(empty), empty), &stats) == 0.0);
    CHECK(stats.no_true_boxes == 1);
}

TEST_CASE("loc_loss averages over true boxes") {
    std::vector<GroundTruthBox> boxes = {{0, Box{10, 10, 40, 40}}, {1, Box{60, 60, 90, 90}}};
    GridLabel lab = encode_grid(boxes, 100, 100, 2, 1, 3);
    Prediction p = pred_from_label(lab);
    p.boxes[0 * 4 + 0] += 0.1; // perturb only the first object's cx
    Matching m = greedy_match(p, lab);
    REQUIRE(m.truth_of[0] == 0);
    CHECK(std::fabs(loc_loss(p, lab, m) - huber(0.1) / 2.0) <= 1e-12);
}

TEST_CASE("conf_loss worked values in bce mode") {
    std::vector<GroundTruthBox> one = {{0, Box{25, 25, 75, 75}}};
    GridLabel lab = encode_grid(one, 100, 100, 1, 1, 2);

    Prediction good = pred_from_label(lab);
    Matching m = greedy_match(good, lab);
    CHECK(conf_loss(good, lab, m) < 1e-6);

    // matched slot with objectness 0.5 and a 50/50 class row:
    // -log(0.5) objectness + -log(0.5) class
    Prediction half = good;
    half.objectness[0] = 0.5;
    half.classes = {0.5, 0.5};
    CHECK(std::fabs((conf_loss(half, lab, greedy_match(half, lab))) - (2 * 0.6931471805599453)) <= 1e-12);

    // empty grid, one background slot at 0.5: -log(1 - 0.5)
    GridLabel empty = encode_grid({}, 100, 100, 1, 1, 2);
    Prediction bg = pred_from_label(empty);
    bg.objectness[0] = 0.5;
    CHECK(std::fabs((conf_loss(bg, empty, greedy_match(bg, empty))) - (0.6931471805599453)) <= 1e-12);
}

TEST_CASE("conf_loss clamps unmatched truths instead of taking log of zero") {
    std::vector<GroundTruthBox> one = {{0, Box{70, 70, 90, 90}}};
    GridLabel lab = encode_grid(one, 100, 100, 1, 1, 2);
    Prediction p = pred_from_label(lab);
    p.boxes = {0.1, 0.1, 0.05, 0.05};
    Matching m = greedy_match(p, lab);
    REQUIRE(m.truth_of[0] == -1);

    LossStats stats;
    double v = conf_loss(p, lab, m, ConfMode::bce, &stats);
    CHECK(stats.log_clamps > 0);
    CHECK(std::isfinite(v));
    // the unmatched truth contributes -log(1e-12)
    CHECK(v >= -std::log(1e-12) - 1e-6);
}

TEST_CASE("objdet_loss composes the pinned combined example") {
    std::vector<GroundTruthBox> one = {{0, Box{25, 25, 75, 75}}};
    GridLabel lab = encode_grid(one, 100, 100, 1, 1, 2);

    Prediction p = pred_from_label(lab);
    p.boxes[3] += 0.5; // h off by half: loc 0.125
    p.objectness[0] = 0.5;
    p.classes = {0.5, 0.5};
    CHECK(std::fabs((objdet_loss(p, lab, 1.0)) - (1.5112943611198906)) <= 1e-12);

    // lambda1 = 0 leaves only the localization term
    CHECK(std::fabs((objdet_loss(p, lab, 0.0)) - (0.125)) <= 1e-12);

    Prediction good = pred_from_label(lab);
    CHECK(objdet_loss(good, lab) < 1e-6);
}

TEST_CASE("paper_exact objectness form has signed background terms") {
    std::vector<GroundTruthBox> one = {{0, Box{25, 25, 75, 75}}};
    GridLabel lab = encode_grid(one, 100, 100, 1, 1, 2);
    Prediction p = pred_from_label(lab);
    p.objectness[0] = 0.5;
    p.classes = {0.5, 0.5};
    // object slot: -2 log(po) + log(po) = -log(po); class adds -log(0.5)
    double v = conf_loss(p, lab, greedy_match(p, lab), ConfMode::paper_exact);
    CHECK(std::fabs(v - 2 * 0.6931471805599453) <= 1e-12);

    // no truths at all: the lone slot is background and contributes +log(po)
    GridLabel empty = encode_grid({}, 100, 100, 1, 1, 2);
    Prediction bg = pred_from_label(empty);
    bg.objectness[0] = 0.5;
    double bgv = conf_loss(bg, empty, greedy_match(bg, empty), ConfMode::paper_exact);
    CHECK(std::fabs(bgv - (-0.6931471805599453)) <= 1e-12);
}

TEST_CASE("losses are invariant to slot permutation with rematching") {
    std::vector<GroundTruthBox> boxes = {{0, Box{10, 10, 40, 40}}, {2, Box{60, 60, 90, 90}}};
    GridLabel lab = encode_grid(boxes, 100, 100, 2, 1, 3);
    Prediction p = pred_from_label(lab);
    p.objectness = {0.9, 0.2, 0.3, 0.7};
    p.boxes[0] += 0.1;
    p.boxes[13] -= 0.05;

    // swap prediction slots 0 and 3 wholesale
    Prediction q = p;
    for (int k = 0; k < 4; k++) std::swap(q.boxes[0 * 4 + k], q.boxes[3 * 4 + k]);
    std::swap(q.objectness[0], q.objectness[3]);
    for (int c = 0; c < 3; c++) std::swap(q.classes[(size_t)0 * 3 + c], q.classes[(size_t)3 * 3 + c]);

    Matching mp = greedy_match(p, lab);
    Matching mq = greedy_match(q, lab);
    CHECK(std::fabs((loc_loss(q, lab, mq)) - (loc_loss(p, lab, mp))) <= 1e-12);
    CHECK(std::fabs((conf_loss(q, lab, mq)) - (conf_loss(p, lab, mp))) <= 1e-12);
}

TEST_CASE("decode_boxes thresholds on objectness and restores pixel coords") {
    std::vector<GroundTruthBox> boxes = {{0, Box{10, 10, 40, 40}}, {2, Box{60, 60, 90, 90}}};
    GridLabel lab = encode_grid(boxes, 100, 100, 2, 1, 3);
    Prediction p = pred_from_label(lab, 1e-3);

    CHECK(decode_boxes(p, 1.0, 100, 100).empty());

    std::vector<DetectionRecord> dets = decode_boxes(p, 0.5, 100, 100, "img7");
    REQUIRE(dets.size() == 2);
    // emitted in slot order: slot 0 then slot 3
    CHECK(dets[0].class_id == 0);
    CHECK(dets[1].class_id == 2);
    CHECK(dets[0].image_id == "img7");
    CHECK(std::fabs((dets[0].box.x_min) - (10.0)) <= 1e-9);
    CHECK(std::fabs((dets[0].box.y_max) - (40.0)) <= 1e-9);
    CHECK(std::fabs((dets[1].box.x_min) - (60.0)) <= 1e-9);
    // confidence = objectness * max class probability
    CHECK(std::fabs((dets[0].confidence) - (p.objectness[0] * p.classes[0])) <= 1e-12);

    // threshold is inclusive
    Prediction exact = p;
    exact.objectness[0] = 0.5;
    CHECK(decode_boxes(exact, 0.5, 100, 100).size() == 2);
}

TEST_CASE("nms suppresses same-class overlaps only") {
    DetectionRecord strong{"a", 0, 0.9, Box{0, 0, 10, 10}};
    DetectionRecord weak{"a", 0, 0.4, Box{1, 1, 11, 11}};
    DetectionRecord other_class{"a", 1, 0.3, Box{0, 0, 10, 10}};
    DetectionRecord far{"a", 0, 0.5, Box{50, 50, 60, 60}};

    std::vector<DetectionRecord> kept = nms({weak, strong, other_class, far}, 0.5);
    REQUIRE(kept.size() == 3);
    // survivors come back in original input order
    CHECK(kept[0].confidence == 0.9);
    CHECK(kept[1].class_id == 1);
    CHECK(kept[2].box.x_min == 50);

    // below-threshold overlap keeps both
    CHECK(nms({weak, strong}, 0.95).size() == 2);
}
