#pragma once

// Run configuration: a documented key-value text file on disk, a struct in
// memory, and a JSON echo embedded in checkpoints and run records.

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>

#include <json.hpp>

#include "groundqa/core/errors.hpp"

namespace groundqa {

enum class Method { erm, igv, eigv, transtr };
enum class OptimizerKind { sgd, adam };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::erm: return "erm";
        case Method::igv: return "igv";
        case Method::eigv: return "eigv";
        case Method::transtr: return "transtr";
    }
    throw ConfigError("method_name: unknown method");
}

inline Method parse_method(const std::string& s) {
    if (s == "erm") return Method::erm;
    if (s == "igv") return Method::igv;
    if (s == "eigv") return Method::eigv;
    if (s == "transtr") return Method::transtr;
    throw ConfigError("unknown method '" + s + "' (erm | igv | eigv | transtr)");
}

inline const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (sgd | adam)");
}

struct RunConfig {
    Method method = Method::erm;
    std::string dataset; // .gqds path; may stay empty when a bundle is passed directly
    std::string out_dir; // output root; empty falls back to $GROUNDQA_OUT_ROOT, then ./runs
    std::uint64_t seed = 1;

    // model sizes
    int d_h = 64;
    int gcn_layers = 2;
    int fusion_rank = 4;

    // optimization
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 0.05;
    double momentum = 0.9;
    OptimizerKind optimizer = OptimizerKind::sgd;
    int plateau_patience = 5; // adam only: halve the step size after this many stale epochs

    // loss weights
    double igv_lambda1 = 1.0;
    double igv_lambda2 = 1.0;
    double beta = 0.75;

    // intervention and contrastive construction
    double alpha = 1.0;
    int num_negatives = 3;
    bool detach_regrounding = true;
    double gumbel_temperature = 1.0;
    std::size_t bank_capacity = 4096;
    std::size_t pool_capacity = 4096;

    // rationalization
    int k_f = 5;
    int k_o = 12;
    double topk_sigma = 0.5;
    int topk_samples = 100;

    void validate() const {
        if (d_h < 2) throw ConfigError("RunConfig: d_h must be at least 2");
        if (gcn_layers < 0) throw ConfigError("RunConfig: gcn_layers must be nonnegative");
        if (fusion_rank < 1) throw ConfigError("RunConfig: fusion_rank must be positive");
        if (epochs < 1) throw ConfigError("RunConfig: epochs must be positive");
        if (batch_size < 1) throw ConfigError("RunConfig: batch_size must be positive");
        if (learning_rate <= 0.0) throw ConfigError("RunConfig: learning_rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("RunConfig: momentum must lie in [0,1)");
        if (plateau_patience < 1) throw ConfigError("RunConfig: plateau_patience must be positive");
        if (igv_lambda1 < 0.0 || igv_lambda2 < 0.0 || beta < 0.0)
            throw ConfigError("RunConfig: loss weights must be nonnegative");
        if (alpha <= 0.0) throw ConfigError("RunConfig: alpha must be positive");
        if (num_negatives < 1) throw ConfigError("RunConfig: num_negatives must be positive");
        if (gumbel_temperature <= 0.0)
            throw ConfigError("RunConfig: gumbel_temperature must be positive");
        if (bank_capacity < 1 || pool_capacity < 1)
            throw ConfigError("RunConfig: bank and pool capacities must be positive");
        if (k_f < 1 || k_o < 1) throw ConfigError("RunConfig: k_f and k_o must be positive");
        if (topk_sigma <= 0.0) throw ConfigError("RunConfig: topk_sigma must be positive");
        if (topk_samples < 1) throw ConfigError("RunConfig: topk_samples must be positive");
        if (!dataset.empty() && !std::filesystem::exists(dataset))
            throw ConfigError("RunConfig: dataset path does not exist: " + dataset);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

} // namespace detail

// Accepts `key = value` lines; blank lines and `#` comments are ignored.
// Unknown keys are rejected so typos cannot silently fall back to defaults.
inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line is not 'key = value': " + line);
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        try {
            if (key == "method") cfg.method = parse_method(val);
            else if (key == "dataset") cfg.dataset = val;
            else if (key == "out_dir") cfg.out_dir = val;
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "d_h") cfg.d_h = std::stoi(val);
            else if (key == "gcn_layers") cfg.gcn_layers = std::stoi(val);
            else if (key == "fusion_rank") cfg.fusion_rank = std::stoi(val);
            else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
            else if (key == "momentum") cfg.momentum = std::stod(val);
            else if (key == "optimizer") cfg.optimizer = parse_optimizer(val);
            else if (key == "plateau_patience") cfg.plateau_patience = std::stoi(val);
            else if (key == "igv_lambda1") cfg.igv_lambda1 = std::stod(val);
            else if (key == "igv_lambda2") cfg.igv_lambda2 = std::stod(val);
            else if (key == "beta") cfg.beta = std::stod(val);
            else if (key == "alpha") cfg.alpha = std::stod(val);
            else if (key == "num_negatives") cfg.num_negatives = std::stoi(val);
            else if (key == "detach_regrounding")
                cfg.detach_regrounding = detail::parse_bool(val, key);
            else if (key == "gumbel_temperature") cfg.gumbel_temperature = std::stod(val);
            else if (key == "bank_capacity") cfg.bank_capacity = std::stoull(val);
            else if (key == "pool_capacity") cfg.pool_capacity = std::stoull(val);
            else if (key == "k_f") cfg.k_f = std::stoi(val);
            else if (key == "k_o") cfg.k_o = std::stoi(val);
            else if (key == "topk_sigma") cfg.topk_sigma = std::stod(val);
            else if (key == "topk_samples") cfg.topk_samples = std::stoi(val);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("config key '" + key + "' has a malformed value '" + val + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError("config key '" + key + "' has an out-of-range value '" + val + "'");
        }
    }
    return cfg;
}

inline std::string run_config_text(const RunConfig& cfg) {
    std::ostringstream out;
    out << "# training run configuration\n";
    out << "method = " << method_name(cfg.method) << "  # erm | igv | eigv | transtr\n";
    out << "dataset = " << cfg.dataset << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "\n# model sizes\n";
    out << "d_h = " << cfg.d_h << "\n";
    out << "gcn_layers = " << cfg.gcn_layers << "\n";
    out << "fusion_rank = " << cfg.fusion_rank << "\n";
    out << "\n# optimization\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "learning_rate = " << cfg.learning_rate << "\n";
    out << "momentum = " << cfg.momentum << "\n";
    out << "optimizer = " << optimizer_name(cfg.optimizer) << "  # sgd | adam\n";
    out << "plateau_patience = " << cfg.plateau_patience
        << "  # adam: halve the step size after this many stale epochs\n";
    out << "\n# loss weights\n";
    out << "igv_lambda1 = " << cfg.igv_lambda1 << "\n";
    out << "igv_lambda2 = " << cfg.igv_lambda2 << "\n";
    out << "beta = " << cfg.beta << "\n";
    out << "\n# intervention and contrastive construction\n";
    out << "alpha = " << cfg.alpha << "\n";
    out << "num_negatives = " << cfg.num_negatives << "\n";
    out << "detach_regrounding = " << (cfg.detach_regrounding ? "true" : "false") << "\n";
    out << "gumbel_temperature = " << cfg.gumbel_temperature << "\n";
    out << "bank_capacity = " << cfg.bank_capacity << "\n";
    out << "pool_capacity = " << cfg.pool_capacity << "\n";
    out << "\n# rationalization\n";
    out << "k_f = " << cfg.k_f << "\n";
    out << "k_o = " << cfg.k_o << "\n";
    out << "topk_sigma = " << cfg.topk_sigma << "\n";
    out << "topk_samples = " << cfg.topk_samples << "\n";
    return out.str();
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["method"] = method_name(cfg.method);
    j["dataset"] = cfg.dataset;
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["d_h"] = cfg.d_h;
    j["gcn_layers"] = cfg.gcn_layers;
    j["fusion_rank"] = cfg.fusion_rank;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["momentum"] = cfg.momentum;
    j["optimizer"] = optimizer_name(cfg.optimizer);
    j["plateau_patience"] = cfg.plateau_patience;
    j["igv_lambda1"] = cfg.igv_lambda1;
    j["igv_lambda2"] = cfg.igv_lambda2;
    j["beta"] = cfg.beta;
    j["alpha"] = cfg.alpha;
    j["num_negatives"] = cfg.num_negatives;
    j["detach_regrounding"] = cfg.detach_regrounding;
    j["gumbel_temperature"] = cfg.gumbel_temperature;
    j["bank_capacity"] = cfg.bank_capacity;
    j["pool_capacity"] = cfg.pool_capacity;
    j["k_f"] = cfg.k_f;
    j["k_o"] = cfg.k_o;
    j["topk_sigma"] = cfg.topk_sigma;
    j["topk_samples"] = cfg.topk_samples;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.method = parse_method(j.at("method").get<std::string>());
    cfg.dataset = j.at("dataset").get<std::string>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.d_h = j.at("d_h").get<int>();
    cfg.gcn_layers = j.at("gcn_layers").get<int>();
    cfg.fusion_rank = j.at("fusion_rank").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.momentum = j.at("momentum").get<double>();
    cfg.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    cfg.plateau_patience = j.at("plateau_patience").get<int>();
    cfg.igv_lambda1 = j.at("igv_lambda1").get<double>();
    cfg.igv_lambda2 = j.at("igv_lambda2").get<double>();
    cfg.beta = j.at("beta").get<double>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.num_negatives = j.at("num_negatives").get<int>();
    cfg.detach_regrounding = j.at("detach_regrounding").get<bool>();
    cfg.gumbel_temperature = j.at("gumbel_temperature").get<double>();
    cfg.bank_capacity = j.at("bank_capacity").get<std::size_t>();
    cfg.pool_capacity = j.at("pool_capacity").get<std::size_t>();
    cfg.k_f = j.at("k_f").get<int>();
    cfg.k_o = j.at("k_o").get<int>();
    cfg.topk_sigma = j.at("topk_sigma").get<double>();
    cfg.topk_samples = j.at("topk_samples").get<int>();
    return cfg;
}

} // namespace groundqa
