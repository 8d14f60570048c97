#pragma once

// Report bundle over a set of run directories: merged epoch metrics, a CSV
// summary aggregated per method and split, and self-contained SVG plots.
// All outputs are deterministic functions of the persisted run files.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundqa/core/errors.hpp"
#include "groundqa/harness/metrics.hpp"

namespace groundqa {

struct LoadedRun {
    std::string name;
    nlohmann::json record;                      // runrecord.json
    std::vector<nlohmann::json> epochs;         // metrics.jsonl lines in order
    std::map<std::string, nlohmann::json> evals; // split -> eval_<split>.json
};

inline LoadedRun load_run_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    LoadedRun run;
    run.name = fs::path(dir).filename().string();
    if (run.name.empty()) run.name = fs::path(dir).parent_path().filename().string();

    std::ifstream record_in(dir + "/runrecord.json");
    if (!record_in) throw StateError("load_run_dir: missing runrecord.json in " + dir);
    record_in >> run.record;

    std::ifstream metrics_in(dir + "/metrics.jsonl");
    if (!metrics_in) throw StateError("load_run_dir: missing metrics.jsonl in " + dir);
    std::string line;
    while (std::getline(metrics_in, line)) {
        if (line.empty()) continue;
        run.epochs.push_back(nlohmann::json::parse(line));
    }

    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("eval_", 0) != 0 || entry.path().extension() != ".json") continue;
        std::string split = name.substr(5, name.size() - 5 - 5);
        std::ifstream eval_in(entry.path());
        nlohmann::json j;
        eval_in >> j;
        run.evals[split] = j;
    }
    return run;
}

namespace report_detail {

inline std::string fmt(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Sample {
    double accuracy = 0.0;
    bool has_iou = false;
    double iou = 0.0;
};

// One summary sample per run and split: evaluation files verbatim, plus the
// best validation epoch recorded during training when no explicit validation
// evaluation was written (the two coincide, so only one is counted).
inline std::map<std::pair<std::string, std::string>, std::vector<Sample>> collect_samples(
    const std::vector<LoadedRun>& runs) {
    std::map<std::pair<std::string, std::string>, std::vector<Sample>> grouped;
    for (const LoadedRun& run : runs) {
        std::string method = run.record.at("config").at("method").get<std::string>();
        for (const auto& [split, eval] : run.evals) {
            Sample s;
            s.accuracy = eval.at("accuracy").get<double>();
            if (!eval.at("grounding").is_null()) {
                s.has_iou = true;
                s.iou = eval["grounding"].at("iou").get<double>();
            }
            grouped[{method, split}].push_back(s);
        }
        if (run.evals.count("val")) continue;
        int best_epoch = run.record.at("best_epoch").get<int>();
        for (const nlohmann::json& epoch : run.epochs) {
            if (epoch.at("epoch").get<int>() != best_epoch) continue;
            Sample s;
            s.accuracy = epoch.at("val").at("accuracy").get<double>();
            if (!epoch.at("val").at("grounding").is_null()) {
                s.has_iou = true;
                s.iou = epoch["val"]["grounding"].at("iou").get<double>();
            }
            grouped[{method, "val"}].push_back(s);
            break;
        }
    }
    return grouped;
}

inline std::string svg_open(int width, int height) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    return out.str();
}

inline std::string svg_text(double x, double y, const std::string& s, int size = 11,
                            const std::string& fill = "#333333") {
    std::ostringstream out;
    out << "<text x=\"" << fmt(x, 1) << "\" y=\"" << fmt(y, 1)
        << "\" font-family=\"monospace\" font-size=\"" << size << "\" fill=\"" << fill << "\">"
        << s << "</text>\n";
    return out.str();
}

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return colors;
}

// Shared plot frame: margins, axes, and y tick labels for [lo, hi].
inline std::string axes(int w, int h, double lo, double hi, const std::string& title) {
    std::ostringstream out;
    out << "<line x1=\"50\" y1=\"20\" x2=\"50\" y2=\"" << h - 40
        << "\" stroke=\"#999999\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"50\" y1=\"" << h - 40 << "\" x2=\"" << w - 20 << "\" y2=\"" << h - 40
        << "\" stroke=\"#999999\" stroke-width=\"1\"/>\n";
    out << svg_text(50, 14, title, 12, "#111111");
    out << svg_text(8, h - 38, fmt(lo, 2));
    out << svg_text(8, 26, fmt(hi, 2));
    return out.str();
}

} // namespace report_detail

// Writes merged_metrics.jsonl, summary.csv, loss_curves.svg,
// accuracy_bars.svg, and iou_hist.svg into out_dir. An empty run list still
// produces the complete bundle with headers and bare axes.
inline void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    namespace fs = std::filesystem;
    using report_detail::fmt;
    fs::create_directories(out_dir);

    std::vector<LoadedRun> runs;
    runs.reserve(run_dirs.size());
    for (const std::string& dir : run_dirs) runs.push_back(load_run_dir(dir));
    std::sort(runs.begin(), runs.end(),
              [](const LoadedRun& a, const LoadedRun& b) { return a.name < b.name; });

    {
        std::ofstream merged(out_dir + "/merged_metrics.jsonl");
        for (const LoadedRun& run : runs)
            for (const nlohmann::json& epoch : run.epochs) {
                nlohmann::json line = epoch;
                line["run"] = run.name;
                merged << line.dump() << "\n";
            }
    }

    auto grouped = report_detail::collect_samples(runs);
    {
        std::ofstream csv(out_dir + "/summary.csv");
        csv << "method,split,runs,accuracy_mean,accuracy_std,iou_mean\n";
        for (const auto& [key, samples] : grouped) {
            double mean = 0.0;
            for (const auto& s : samples) mean += s.accuracy;
            mean /= double(samples.size());
            double var = 0.0;
            for (const auto& s : samples) var += (s.accuracy - mean) * (s.accuracy - mean);
            var /= double(samples.size());
            double iou_sum = 0.0;
            int iou_n = 0;
            for (const auto& s : samples)
                if (s.has_iou) {
                    iou_sum += s.iou;
                    ++iou_n;
                }
            csv << key.first << "," << key.second << "," << samples.size() << "," << fmt(mean)
                << "," << fmt(std::sqrt(var));
            csv << "," << (iou_n > 0 ? fmt(iou_sum / double(iou_n)) : std::string()) << "\n";
        }
    }

    const int W = 640, H = 400;

    {
        // Training loss trajectories, one polyline per run.
        double lo = 0.0, hi = 1e-9;
        int max_epoch = 1;
        for (const LoadedRun& run : runs)
            for (const nlohmann::json& e : run.epochs) {
                hi = std::max(hi, e.at("train").at("losses").at("loss").get<double>());
                max_epoch = std::max(max_epoch, e.at("epoch").get<int>() + 1);
            }
        std::ofstream svg(out_dir + "/loss_curves.svg");
        svg << report_detail::svg_open(W, H);
        svg << report_detail::axes(W, H, lo, hi, "training loss by epoch");
        int color_at = 0;
        double legend_y = 30.0;
        for (const LoadedRun& run : runs) {
            const std::string& color =
                report_detail::palette()[color_at++ % report_detail::palette().size()];
            std::ostringstream points;
            for (const nlohmann::json& e : run.epochs) {
                double x = 50.0 + (W - 70.0) * (double(e.at("epoch").get<int>()) /
                                                double(std::max(1, max_epoch - 1)));
                double loss = e.at("train").at("losses").at("loss").get<double>();
                double y = (H - 40.0) - (H - 60.0) * ((loss - lo) / (hi - lo));
                points << fmt(x, 1) << "," << fmt(y, 1) << " ";
            }
            if (!run.epochs.empty())
                svg << "<polyline fill=\"none\" stroke=\"" << color
                    << "\" stroke-width=\"1.5\" points=\"" << points.str() << "\"/>\n";
            svg << report_detail::svg_text(W - 180, legend_y, run.name, 10, color);
            legend_y += 14.0;
        }
        svg << "</svg>\n";
    }

    {
        // Mean accuracy per method and split.
        std::ofstream svg(out_dir + "/accuracy_bars.svg");
        svg << report_detail::svg_open(W, H);
        svg << report_detail::axes(W, H, 0.0, 1.0, "accuracy by method and split");
        if (!grouped.empty()) {
            double slot = (W - 90.0) / double(grouped.size());
            double bar = std::min(60.0, slot * 0.6);
            int i = 0, color_at = 0;
            for (const auto& [key, samples] : grouped) {
                double mean = 0.0;
                for (const auto& s : samples) mean += s.accuracy;
                mean /= double(samples.size());
                double x = 60.0 + slot * i + (slot - bar) / 2.0;
                double height = (H - 60.0) * mean;
                const std::string& color =
                    report_detail::palette()[color_at++ % report_detail::palette().size()];
                svg << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << fmt(H - 40.0 - height, 1)
                    << "\" width=\"" << fmt(bar, 1) << "\" height=\"" << fmt(height, 1)
                    << "\" fill=\"" << color << "\"/>\n";
                svg << report_detail::svg_text(x, H - 40.0 - height - 4.0, fmt(mean, 3), 10);
                svg << report_detail::svg_text(x, H - 26.0, key.first, 10);
                svg << report_detail::svg_text(x, H - 14.0, key.second, 10);
                ++i;
            }
        }
        svg << "</svg>\n";
    }

    {
        // Distribution of grounding IoU over all summary samples.
        std::vector<double> ious;
        for (const auto& [key, samples] : grouped)
            for (const auto& s : samples)
                if (s.has_iou) ious.push_back(s.iou);
        std::vector<int> bins(10, 0);
        for (double v : ious) {
            int b = std::min(9, int(v * 10.0));
            ++bins[std::size_t(std::max(0, b))];
        }
        int peak = 1;
        for (int b : bins) peak = std::max(peak, b);
        std::ofstream svg(out_dir + "/iou_hist.svg");
        svg << report_detail::svg_open(W, H);
        svg << report_detail::axes(W, H, 0.0, double(peak), "grounding IoU distribution");
        double slot = (W - 90.0) / 10.0;
        for (int b = 0; b < 10; ++b) {
            double height = (H - 60.0) * (double(bins[std::size_t(b)]) / double(peak));
            double x = 60.0 + slot * b + slot * 0.1;
            svg << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << fmt(H - 40.0 - height, 1)
                << "\" width=\"" << fmt(slot * 0.8, 1) << "\" height=\"" << fmt(height, 1)
                << "\" fill=\"#1f77b4\"/>\n";
            svg << report_detail::svg_text(x, H - 26.0, fmt(b * 0.1, 1), 9);
        }
        svg << "</svg>\n";
    }
}

} // namespace groundqa
