#include "imo/trainer.hpp"

namespace imo {

namespace {
std::string cell(double v, bool present) {
    if (!present) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}
}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "method,disc_dice,cup_dice,mdice,precision\n";
    for (const auto& r : rows) {
        out += r.name + "," + cell(r.report.dice_disc, r.report.has_dice) + "," +
               cell(r.report.dice_cup, r.report.has_dice) + "," +
               cell(r.report.mdice, r.report.has_dice) + "," +
               cell(r.report.precision, r.report.has_cls) + "\n";
    }
    return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-10s %10s %10s %10s %10s\n", "method", "disc_dice",
                  "cup_dice", "mdice", "precision");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-10s %10s %10s %10s %10s\n", r.name.c_str(),
                      cell(r.report.dice_disc, r.report.has_dice).c_str(),
                      cell(r.report.dice_cup, r.report.has_dice).c_str(),
                      cell(r.report.mdice, r.report.has_dice).c_str(),
                      cell(r.report.precision, r.report.has_cls).c_str());
        out += buf;
    }
    return out;
}

}  // namespace imo
