#pragma once

// Metric records shared by training, evaluation, and reporting, plus the
// grounding-overlap arithmetic and the closed-form expected IoU of a random
// mask (the baseline that learned grounding has to beat).

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundqa/core/errors.hpp"
#include "groundqa/harness/config.hpp"

namespace groundqa {

struct GroundingMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double iou = 0.0;
};

struct MetricsRecord {
    std::string split;
    double accuracy = 0.0;
    std::optional<GroundingMetrics> grounding;
    std::map<std::string, double> losses;
};

struct EpochRecord {
    int epoch = 0;
    MetricsRecord train;
    MetricsRecord val;
};

struct RunRecord {
    RunConfig config;
    std::vector<EpochRecord> epochs;
    std::string checkpoint_path;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
    double wall_seconds = 0.0;
    bool diverged = false;
    nlohmann::json diagnostic;
};

inline void validate_metrics(const MetricsRecord& rec) {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(rec.accuracy))
        throw NumericError("MetricsRecord: accuracy outside [0,1]");
    if (rec.grounding) {
        if (!in_unit(rec.grounding->precision) || !in_unit(rec.grounding->recall) ||
            !in_unit(rec.grounding->iou))
            throw NumericError("MetricsRecord: grounding metrics outside [0,1]");
    }
}

inline nlohmann::json metrics_to_json(const MetricsRecord& rec) {
    nlohmann::json j;
    j["split"] = rec.split;
    j["accuracy"] = rec.accuracy;
    if (rec.grounding) {
        j["grounding"] = {{"precision", rec.grounding->precision},
                          {"recall", rec.grounding->recall},
                          {"iou", rec.grounding->iou}};
    } else {
        j["grounding"] = nullptr;
    }
    j["losses"] = rec.losses;
    return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
    MetricsRecord rec;
    rec.split = j.at("split").get<std::string>();
    rec.accuracy = j.at("accuracy").get<double>();
    if (!j.at("grounding").is_null()) {
        GroundingMetrics g;
        g.precision = j["grounding"].at("precision").get<double>();
        g.recall = j["grounding"].at("recall").get<double>();
        g.iou = j["grounding"].at("iou").get<double>();
        rec.grounding = g;
    }
    rec.losses = j.at("losses").get<std::map<std::string, double>>();
    return rec;
}

inline nlohmann::json epoch_to_json(const EpochRecord& e) {
    return {{"epoch", e.epoch},
            {"train", metrics_to_json(e.train)},
            {"val", metrics_to_json(e.val)}};
}

inline nlohmann::json run_record_to_json(const RunRecord& rec) {
    nlohmann::json j;
    j["config"] = run_config_to_json(rec.config);
    j["checkpoint"] = rec.checkpoint_path;
    j["best_epoch"] = rec.best_epoch;
    j["best_val_accuracy"] = rec.best_val_accuracy;
    j["epochs_run"] = rec.epochs.size();
    j["wall_seconds"] = rec.wall_seconds;
    j["diverged"] = rec.diverged;
    j["diagnostic"] = rec.diverged ? rec.diagnostic : nlohmann::json(nullptr);
    return j;
}

// Set overlap between a predicted clip mask and the ground-truth causal
// mask. An empty prediction scores zero on all three metrics; the truth is
// never empty for generated instances.
inline GroundingMetrics grounding_overlap(const std::vector<int>& predicted,
                                          const std::vector<std::uint8_t>& truth) {
    if (predicted.size() != truth.size())
        throw ShapeError("grounding_overlap: mask lengths differ");
    int inter = 0, pred = 0, tru = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        bool p = predicted[k] != 0;
        bool g = truth[k] != 0;
        inter += int(p && g);
        pred += int(p);
        tru += int(g);
    }
    if (tru == 0) throw DegenerateInputError("grounding_overlap: empty ground-truth mask");
    GroundingMetrics m;
    m.precision = pred == 0 ? 0.0 : double(inter) / double(pred);
    m.recall = double(inter) / double(tru);
    int uni = pred + tru - inter;
    m.iou = double(inter) / double(uni);
    return m;
}

// Expected IoU between a fixed truth mask of the given size and a random
// mask whose K entries are independently included with probability f.
// Conditioning on j hits inside the truth and u picks outside it, IoU is
// j / (truth + u); the expectation sums over both binomials exactly.
inline double expected_random_iou(int K, int truth_size, double f) {
    if (K < 1 || truth_size < 1 || truth_size > K)
        throw ConfigError("expected_random_iou: need 1 <= truth_size <= K");
    if (f < 0.0 || f > 1.0) throw ConfigError("expected_random_iou: f must lie in [0,1]");
    auto binom_pmf = [](int n, int k, double p) {
        double log_c = 0.0;
        for (int i = 1; i <= k; ++i)
            log_c += std::log(double(n - k + i)) - std::log(double(i));
        double log_p = 0.0;
        if (k > 0) log_p += double(k) * std::log(p);
        if (n - k > 0) log_p += double(n - k) * std::log1p(-p);
        if (k > 0 && p == 0.0) return 0.0;
        if (n - k > 0 && p == 1.0) return 0.0;
        return std::exp(log_c + log_p);
    };
    const int s = truth_size;
    double expect = 0.0;
    for (int j = 0; j <= s; ++j) {
        double pj = binom_pmf(s, j, f);
        for (int u = 0; u <= K - s; ++u) {
            double pu = binom_pmf(K - s, u, f);
            expect += pj * pu * double(j) / double(s + u);
        }
    }
    return expect;
}

} // namespace groundqa
