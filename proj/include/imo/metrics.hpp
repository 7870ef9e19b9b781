#pragma once

#include <array>
#include <string>
#include <vector>

#include "imo/tensor.hpp"

namespace imo {

struct MetricsReport {
    double dice_unlabel = 0, dice_disc = 0, dice_cup = 0, mdice = 0;
    double precision = 0, accuracy = 0, recall = 0, f1 = 0;
    std::array<std::array<long, 3>, 3> confusion{};  // [true][pred]
    bool has_dice = true;  // false when the segmentation branch is ablated
    bool has_cls = true;   // false when the grading branch is ablated

    std::string to_kv() const;
};

// 2|P∩T| / (|P|+|T|) for class k; 1.0 when both sets are empty.
double dice_score(const std::vector<int>& pred, const std::vector<int>& truth, int k);

// Macro-averaged precision/recall/F1 with the 0/0 -> 0 convention, plus
// accuracy and the raw confusion matrix. Dice fields are left untouched.
MetricsReport classification_metrics(const std::vector<int>& preds, const std::vector<int>& labels);

template <typename T>
std::vector<int> labels_of(const Tensor<T>& mask) {
    std::vector<int> out(mask.size());
    auto mv = mask.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(mv[i]);
    return out;
}

}  // namespace imo
