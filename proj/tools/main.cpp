// Command-line front end: dataset generation, training, evaluation, sweeps,
// and report bundles. Every subcommand works through files on disk, so runs
// can be inspected, resumed into reports, and parallelized across processes.

#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>

#include "groundqa/harness.hpp"
#include "groundqa/synthgen_io.hpp"

namespace {

using namespace groundqa;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw StateError("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string output_root(const RunConfig& cfg) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* env = std::getenv("GROUNDQA_OUT_ROOT"); env && *env) return env;
    return "runs";
}

RunConfig config_from_sources(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    std::string text = config_path.empty() ? std::string() : read_file(config_path);
    for (const std::string& kv : overrides) text += "\n" + kv;
    return parse_run_config(text);
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string sh_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s)
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    return out + "'";
}

std::string format_metrics(const MetricsRecord& m) {
    std::ostringstream out;
    out << m.split << ": accuracy " << m.accuracy;
    if (m.grounding)
        out << ", grounding iou " << m.grounding->iou << " (precision " << m.grounding->precision
            << ", recall " << m.grounding->recall << ")";
    for (const auto& [name, value] : m.losses) out << ", " << name << " " << value;
    return out.str();
}

void write_eval_outputs(const std::string& run_dir, const std::string& split,
                        const std::string& method, const MetricsRecord& metrics,
                        const std::vector<nlohmann::json>* dumps) {
    std::ofstream out(run_dir + "/eval_" + split + ".json");
    out << metrics_to_json(metrics).dump(2) << "\n";
    if (!dumps) return;
    std::string dump_name = method == "transtr" ? "selections.jsonl" : "masks.jsonl";
    std::ofstream dump_out(run_dir + "/" + dump_name);
    for (const nlohmann::json& entry : *dumps) dump_out << entry.dump() << "\n";
}

int cmd_generate(const GenConfig& cfg, const std::string& out_path) {
    DatasetBundle bundle = generate_dataset(cfg);
    save_dataset(bundle, out_path);
    std::cout << "wrote " << out_path << ": train " << bundle.train.size() << ", val "
              << bundle.val.size() << ", test_iid " << bundle.test_iid.size() << ", test_ood "
              << bundle.test_ood.size() << " (K=" << cfg.K << ", d=" << cfg.d << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& run_dir_flag, const std::string& name_flag,
              const std::string& eval_splits_csv) {
    RunConfig cfg = config_from_sources(config_path, overrides);
    if (cfg.dataset.empty()) throw ConfigError("train: no dataset configured (set dataset = ...)");
    cfg.validate();

    std::string run_dir = run_dir_flag;
    if (run_dir.empty()) {
        std::string name = name_flag.empty() ? std::string(method_name(cfg.method)) + "-seed" +
                                                   std::to_string(cfg.seed)
                                             : name_flag;
        run_dir = output_root(cfg) + "/" + name;
    }

    DatasetBundle data = load_dataset(cfg.dataset);
    RunRecord record = train(cfg, data, run_dir);
    if (record.diverged) {
        std::cerr << "training diverged: " << record.diagnostic.dump() << "\n";
        return 2;
    }
    std::cout << run_dir << ": best val accuracy " << record.best_val_accuracy << " at epoch "
              << record.best_epoch << " (" << record.epochs.size() << " epochs, "
              << record.wall_seconds << "s)\n";

    for (const std::string& split : split_csv(eval_splits_csv)) {
        MetricsRecord metrics = evaluate_checkpoint(record.checkpoint_path, data, split);
        write_eval_outputs(run_dir, split, method_name(cfg.method), metrics, nullptr);
        std::cout << "  " << format_metrics(metrics) << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& run_dir, std::string checkpoint_path, const std::string& dataset,
             const std::string& split, bool dump) {
    if (checkpoint_path.empty()) checkpoint_path = run_dir + "/checkpoint.gqcp";
    Checkpoint ck = load_checkpoint(checkpoint_path);
    std::string method = ck.config.at("method").get<std::string>();
    std::string data_path = dataset.empty() ? ck.config.at("dataset").get<std::string>() : dataset;
    DatasetBundle data = load_dataset(data_path);

    std::vector<nlohmann::json> dumps;
    EvalOptions opts;
    bool can_dump = dump && method != "erm";
    if (dump && !can_dump) std::cerr << "note: erm has no grounding or selections to dump\n";
    if (can_dump) opts.dumps = &dumps;

    MetricsRecord metrics = evaluate_checkpoint(checkpoint_path, data, split, opts);
    std::cout << format_metrics(metrics) << "\n";
    if (!run_dir.empty())
        write_eval_outputs(run_dir, split, method, metrics, can_dump ? &dumps : nullptr);
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    write_report(run_dirs, out_dir);
    std::cout << "wrote report bundle to " << out_dir << " (" << run_dirs.size() << " runs)\n";
    return 0;
}

struct SweepJob {
    std::string name;
    std::string dir;
    std::string method;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    std::uint64_t seed = 0;
};

int cmd_sweep(const std::string& self, const std::string& config_path,
              const std::vector<std::string>& overrides, const std::string& methods_csv,
              const std::string& lambda1_csv, const std::string& lambda2_csv,
              const std::string& seeds_csv, int jobs, const std::string& out_root_flag) {
    RunConfig base = config_from_sources(config_path, overrides);
    if (base.dataset.empty()) throw ConfigError("sweep: no dataset configured (set dataset = ...)");
    base.validate();
    std::string root = out_root_flag.empty() ? output_root(base) + "/sweep" : out_root_flag;
    std::filesystem::create_directories(root);

    std::vector<SweepJob> grid;
    for (const std::string& method : split_csv(methods_csv))
        for (const std::string& l1 : split_csv(lambda1_csv))
            for (const std::string& l2 : split_csv(lambda2_csv))
                for (const std::string& seed : split_csv(seeds_csv)) {
                    SweepJob job;
                    job.method = method;
                    job.lambda1 = std::stod(l1);
                    job.lambda2 = std::stod(l2);
                    job.seed = std::stoull(seed);
                    job.name = method + "-l1_" + l1 + "-l2_" + l2 + "-seed" + seed;
                    job.dir = root + "/" + job.name;
                    grid.push_back(job);
                }
    if (grid.empty()) throw ConfigError("sweep: empty grid");

    std::deque<std::pair<std::string, FILE*>> running;
    int failures = 0;
    auto reap = [&] {
        auto [name, pipe] = running.front();
        running.pop_front();
        char buf[4096];
        while (std::fgets(buf, sizeof buf, pipe)) std::fputs(buf, stdout);
        int status = pclose(pipe);
        bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
        if (!ok) ++failures;
        std::cout << name << (ok ? " done" : " FAILED") << "\n";
    };
    for (const SweepJob& job : grid) {
        std::ostringstream cmd;
        cmd << sh_quote(self) << " train";
        if (!config_path.empty()) cmd << " --config " << sh_quote(config_path);
        for (const std::string& kv : overrides) cmd << " --set " << sh_quote(kv);
        cmd << " --set " << sh_quote("method = " + job.method);
        cmd << " --set " << sh_quote("igv_lambda1 = " + std::to_string(job.lambda1));
        cmd << " --set " << sh_quote("igv_lambda2 = " + std::to_string(job.lambda2));
        cmd << " --set " << sh_quote("seed = " + std::to_string(job.seed));
        cmd << " --out " << sh_quote(job.dir);
        cmd << " --eval-splits test_iid,test_ood 2>&1";
        FILE* pipe = popen(cmd.str().c_str(), "r");
        if (!pipe) throw StateError("sweep: failed to launch " + job.name);
        running.emplace_back(job.name, pipe);
        while (running.size() >= std::size_t(jobs)) reap();
    }
    while (!running.empty()) reap();

    std::ofstream csv(root + "/sweep_summary.csv");
    csv << "name,method,igv_lambda1,igv_lambda2,seed,best_val_accuracy,test_iid_accuracy,"
           "test_ood_accuracy,test_ood_iou\n";
    std::vector<std::string> run_dirs;
    for (const SweepJob& job : grid) {
        std::string record_path = job.dir + "/runrecord.json";
        if (!std::filesystem::exists(record_path)) continue;
        nlohmann::json record = nlohmann::json::parse(read_file(record_path));
        nlohmann::json iid = nlohmann::json::parse(read_file(job.dir + "/eval_test_iid.json"));
        nlohmann::json ood = nlohmann::json::parse(read_file(job.dir + "/eval_test_ood.json"));
        csv << job.name << "," << job.method << "," << job.lambda1 << "," << job.lambda2 << ","
            << job.seed << "," << record.at("best_val_accuracy").get<double>() << ","
            << iid.at("accuracy").get<double>() << "," << ood.at("accuracy").get<double>() << ",";
        if (!ood.at("grounding").is_null()) csv << ood.at("grounding").at("iou").get<double>();
        csv << "\n";
        run_dirs.push_back(job.dir);
    }
    write_report(run_dirs, root + "/report");
    std::cout << "sweep summary: " << root << "/sweep_summary.csv (" << run_dirs.size() << "/"
              << grid.size() << " runs)\n";
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic video question answering benchmark and trainer"};
    app.require_subcommand(1);

    GenConfig gen_cfg;
    std::string gen_out;
    CLI::App* generate = app.add_subcommand("generate", "generate a synthetic dataset");
    generate->add_option("--out", gen_out, "output .gqds path")->required();
    generate->add_option("--videos", gen_cfg.num_videos, "number of videos");
    generate->add_option("--clips", gen_cfg.K, "clips per video");
    generate->add_option("--dim", gen_cfg.d, "clip feature width");
    generate->add_option("--question-length", gen_cfg.L, "question token count");
    generate->add_option("--answers", gen_cfg.num_answers, "answer vocabulary size");
    generate->add_option("--span-min", gen_cfg.causal_span.min_clips, "minimum causal clips");
    generate->add_option("--span-max", gen_cfg.causal_span.max_clips, "maximum causal clips");
    generate->add_option("--bias-rho", gen_cfg.bias_rho, "train-split answer/environment coupling");
    generate->add_option("--noise-sigma", gen_cfg.noise_sigma, "additive feature noise");
    generate->add_option("--objects", gen_cfg.num_objects, "objects per clip");
    generate->add_option("--qtypes", gen_cfg.num_qtypes, "question type count");
    generate->add_option("--seed", gen_cfg.seed, "generator seed");

    std::string train_config, train_out, train_name, train_eval_splits;
    std::vector<std::string> train_sets;
    CLI::App* train_cmd = app.add_subcommand("train", "train one model");
    train_cmd->add_option("--config", train_config, "key-value config file");
    train_cmd->add_option("--set", train_sets, "override, e.g. --set 'seed = 3'");
    train_cmd->add_option("--out", train_out, "run directory (overrides root/name)");
    train_cmd->add_option("--name", train_name, "run name under the output root");
    train_cmd->add_option("--eval-splits", train_eval_splits,
                          "comma-separated splits to evaluate after training");

    std::string eval_run, eval_ckpt, eval_dataset, eval_split = "test_iid";
    bool eval_dump = false;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    eval_cmd->add_option("--run", eval_run, "run directory (uses its checkpoint.gqcp)");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "explicit checkpoint path");
    eval_cmd->add_option("--dataset", eval_dataset, "dataset path (default from checkpoint)");
    eval_cmd->add_option("--split", eval_split, "train | val | test_iid | test_ood");
    eval_cmd->add_flag("--dump", eval_dump, "write per-instance masks/selections JSONL");

    std::vector<std::string> report_runs;
    std::string report_out;
    CLI::App* report_cmd = app.add_subcommand("report", "aggregate runs into a report bundle");
    report_cmd->add_option("--out", report_out, "report output directory")->required();
    report_cmd->add_option("runs", report_runs, "run directories");

    std::string sweep_config, sweep_methods = "igv", sweep_l1 = "1", sweep_l2 = "1",
                             sweep_seeds = "1", sweep_root;
    std::vector<std::string> sweep_sets;
    int sweep_jobs = 1;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid of training runs across processes");
    sweep_cmd->add_option("--config", sweep_config, "base key-value config file");
    sweep_cmd->add_option("--set", sweep_sets, "base override applied to every run");
    sweep_cmd->add_option("--methods", sweep_methods, "comma-separated methods");
    sweep_cmd->add_option("--lambda1", sweep_l1, "comma-separated igv_lambda1 values");
    sweep_cmd->add_option("--lambda2", sweep_l2, "comma-separated igv_lambda2 values");
    sweep_cmd->add_option("--seeds", sweep_seeds, "comma-separated seeds");
    sweep_cmd->add_option("--jobs", sweep_jobs, "concurrent child processes")
        ->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--out-root", sweep_root, "sweep output root");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate(gen_cfg, gen_out);
        if (train_cmd->parsed())
            return cmd_train(train_config, train_sets, train_out, train_name, train_eval_splits);
        if (eval_cmd->parsed()) {
            if (eval_run.empty() && eval_ckpt.empty())
                throw ConfigError("eval: pass --run or --checkpoint");
            return cmd_eval(eval_run, eval_ckpt, eval_dataset, eval_split, eval_dump);
        }
        if (report_cmd->parsed()) return cmd_report(report_runs, report_out);
        if (sweep_cmd->parsed())
            return cmd_sweep(argv[0], sweep_config, sweep_sets, sweep_methods, sweep_l1, sweep_l2,
                             sweep_seeds, sweep_jobs, sweep_root);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
