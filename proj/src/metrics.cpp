#include "imo/metrics.hpp"

#include <cstdio>

namespace imo {

double dice_score(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
    if (pred.size() != truth.size())
        throw ShapeError("dice_score: prediction has " + std::to_string(pred.size()) +
                         " pixels, truth has " + std::to_string(truth.size()));
    long np = 0, nt = 0, overlap = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == k, t = truth[i] == k;
        np += p;
        nt += t;
        overlap += p && t;
    }
    if (np + nt == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(np + nt);
}

MetricsReport classification_metrics(const std::vector<int>& preds,
                                     const std::vector<int>& labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw ValidationError("classification_metrics: need equal-sized nonempty inputs");
    MetricsReport r;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 2 || preds[i] < 0 || preds[i] > 2)
            throw ValidationError("classification_metrics: class outside {0,1,2}");
        r.confusion[labels[i]][preds[i]] += 1;
    }
    long correct = 0;
    double psum = 0, rsum = 0, fsum = 0;
    for (int k = 0; k < 3; ++k) {
        const long tp = r.confusion[k][k];
        long pred_k = 0, true_k = 0;
        for (int j = 0; j < 3; ++j) {
            pred_k += r.confusion[j][k];
            true_k += r.confusion[k][j];
        }
        correct += tp;
        const double prec = pred_k > 0 ? static_cast<double>(tp) / pred_k : 0.0;
        const double rec = true_k > 0 ? static_cast<double>(tp) / true_k : 0.0;
        const double f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        psum += prec;
        rsum += rec;
        fsum += f1;
    }
    r.precision = psum / 3.0;
    r.recall = rsum / 3.0;
    r.f1 = fsum / 3.0;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
    return r;
}

std::string MetricsReport::to_kv() const {
    char buf[64];
    std::string out;
    auto put = [&](const char* key, double v, bool present) {
        if (present) {
            std::snprintf(buf, sizeof buf, "%s=%.6f\n", key, v);
            out += buf;
        } else {
            out += std::string(key) + "=-\n";
        }
    };
    put("dice_unlabel", dice_unlabel, has_dice);
    put("dice_disc", dice_disc, has_dice);
    put("dice_cup", dice_cup, has_dice);
    put("mdice", mdice, has_dice);
    put("precision", precision, has_cls);
    put("accuracy", accuracy, has_cls);
    put("recall", recall, has_cls);
    put("f1", f1, has_cls);
    return out;
}

}  // namespace imo
