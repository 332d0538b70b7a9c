#include "fogdet/eval.hpp"

#include "fogdet/error.hpp"
#include "fogdet/image.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace fogdet {

std::vector<bool> greedy_tp_flags(const std::vector<DetectionRecord>& dets,
                                  const std::vector<Box>& truths, double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[a].confidence > dets[b].confidence;
    });

    std::vector<bool> flags(dets.size(), false);
    std::vector<bool> taken(truths.size(), false);
    for (int i : order) {
        int best = -1;
        double best_iou = iou_threshold; // strict: must exceed
        for (int t = 0; t < (int)truths.size(); t++) {
            if (taken[t]) continue;
            double v = iou(dets[i].box, truths[t]);
            if (v > best_iou) {
                best_iou = v;
                best = t;
            }
        }
        if (best >= 0) {
            taken[best] = true;
            flags[i] = true;
        }
    }
    return flags;
}

double average_precision(std::vector<std::pair<double, bool>> scored, int truth_count,
                         APMethod method) {
    if (truth_count <= 0 || scored.empty()) return 0.0;
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const int n = (int)scored.size();
    std::vector<double> rec(n), prec(n);
    int tp = 0;
    for (int i = 0; i < n; i++) {
        if (scored[i].second) tp++;
        rec[i] = (double)tp / truth_count;
        prec[i] = (double)tp / (i + 1);
    }

    if (method == APMethod::voc11) {
        double sum = 0.0;
        for (int k = 0; k <= 10; k++) {
            double r = k / 10.0;
            double best = 0.0;
            for (int i = 0; i < n; i++)
                if (rec[i] >= r) best = std::max(best, prec[i]);
            sum += best;
        }
        return sum / 11.0;
    }

    for (int i = n - 2; i >= 0; i--) prec[i] = std::max(prec[i], prec[i + 1]);
    double ap = rec[0] * prec[0];
    for (int i = 1; i < n; i++) ap += (rec[i] - rec[i - 1]) * prec[i];
    return ap;
}

MapReport mean_ap(const std::vector<DetectionRecord>& dets, const TruthIndex& truth,
                  double iou_threshold, APMethod method) {
    std::set<int> class_ids;
    // (class, image) -> truth boxes
    std::map<std::pair<int, std::string>, std::vector<Box>> truth_groups;
    std::map<int, int> truth_counts;
    for (const auto& [image_id, boxes] : truth) {
        for (const GroundTruthBox& gt : boxes) {
            class_ids.insert(gt.class_id);
            truth_groups[{gt.class_id, image_id}].push_back(gt.box);
            truth_counts[gt.class_id]++;
        }
    }

    std::map<std::pair<int, std::string>, std::vector<DetectionRecord>> det_groups;
    for (const DetectionRecord& r : dets) {
        if (truth.find(r.image_id) == truth.end())
            throw error(errc::unknown_image_id, "detection for unknown image id: " + r.image_id);
        det_groups[{r.class_id, r.image_id}].push_back(r);
    }

    MapReport report;
    double sum = 0.0;
    for (int cls : class_ids) {
        std::vector<std::pair<double, bool>> scored;
        int det_count = 0;
        for (const auto& [key, group] : det_groups) {
            if (key.first != cls) continue;
            det_count += (int)group.size();
            static const std::vector<Box> kNoTruth;
            auto it = truth_groups.find(key);
            const std::vector<Box>& truths = it == truth_groups.end() ? kNoTruth : it->second;
            std::vector<bool> flags = greedy_tp_flags(group, truths, iou_threshold);
            for (int i = 0; i < (int)group.size(); i++)
                scored.emplace_back(group[i].confidence, (bool)flags[i]);
        }
        PerClassAP entry;
        entry.class_id = cls;
        entry.truth_count = truth_counts[cls];
        entry.detection_count = det_count;
        entry.ap = average_precision(std::move(scored), entry.truth_count, method);
        sum += entry.ap;
        report.per_class.push_back(entry);
    }
    if (!report.per_class.empty()) report.mean_ap = sum / report.per_class.size();
    return report;
}

void save_detections(const std::string& path, const std::vector<DetectionRecord>& records) {
    std::string out;
    char line[512];
    for (const DetectionRecord& r : records) {
        std::snprintf(line, sizeof line, "%s %d %.6f %.6f %.6f %.6f %.6f\n", r.image_id.c_str(),
                      r.class_id, r.confidence, r.box.x_min, r.box.y_min, r.box.x_max, r.box.y_max);
        out += line;
    }
    write_file_bytes(path, std::vector<unsigned char>(out.begin(), out.end()));
}

std::vector<DetectionRecord> load_detections(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::vector<DetectionRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty()) continue;
        std::istringstream ls(line);
        DetectionRecord r;
        if (!(ls >> r.image_id >> r.class_id >> r.confidence >> r.box.x_min >> r.box.y_min >>
              r.box.x_max >> r.box.y_max))
            throw error(errc::truncated_data,
                        "bad detection line " + std::to_string(line_no) + " in " + path);
        std::string extra;
        if (ls >> extra)
            throw error(errc::truncated_data,
                        "trailing fields on detection line " + std::to_string(line_no) + " in " + path);
        out.push_back(r);
    }
    return out;
}

} // namespace fogdet
