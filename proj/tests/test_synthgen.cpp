#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "groundqa/synthgen.hpp"
#include "groundqa/synthgen_io.hpp"
#include "support/stats.hpp"

using namespace groundqa;

namespace {

GenConfig small_config() {
    GenConfig cfg;
    cfg.num_videos = 60;
    cfg.K = 8;
    cfg.d = 12;
    cfg.L = 4;
    cfg.num_answers = 4;
    cfg.causal_span = {2, 3};
    cfg.bias_rho = 0.9;
    cfg.num_objects = 3;
    cfg.seed = 42;
    return cfg;
}

bool same_instance(const Instance& a, const Instance& b) {
    if (a.video.id != b.video.id) return false;
    if (a.video.clips != b.video.clips) return false;
    if (a.video.causal_mask != b.video.causal_mask) return false;
    if (a.video.objects.size() != b.video.objects.size()) return false;
    for (std::size_t k = 0; k < a.video.objects.size(); ++k)
        if (a.video.objects[k] != b.video.objects[k]) return false;
    if (a.question.tokens != b.question.tokens) return false;
    return a.question.answer == b.question.answer && a.question.qtype == b.question.qtype &&
           a.env_cluster == b.env_cluster;
}

bool same_bundle(const DatasetBundle& a, const DatasetBundle& b) {
    for (const std::string& name : split_names()) {
        const auto& sa = a.split(name);
        const auto& sb = b.split(name);
        if (sa.size() != sb.size()) return false;
        for (std::size_t i = 0; i < sa.size(); ++i)
            if (!same_instance(sa[i], sb[i])) return false;
    }
    return a.mechanism.centroids == b.mechanism.centroids &&
           a.mechanism.env_centroids == b.mechanism.env_centroids &&
           a.mechanism.pos_codes == b.mechanism.pos_codes &&
           a.mechanism.qtype_embed == b.mechanism.qtype_embed;
}

double env_answer_match_rate(const std::vector<Instance>& split) {
    double hits = 0.0;
    for (const Instance& inst : split)
        if (inst.env_cluster == inst.question.answer) hits += 1.0;
    return hits / double(split.size());
}

double independence_pvalue(const std::vector<Instance>& split, int num_answers) {
    std::vector<std::vector<double>> table(std::size_t(num_answers),
                                           std::vector<double>(std::size_t(num_answers), 0.0));
    for (const Instance& inst : split)
        table[std::size_t(inst.env_cluster)][std::size_t(inst.question.answer)] += 1.0;
    double dof = 0.0;
    double stat = gqtest::chi2_contingency(table, dof);
    return gqtest::chi2_pvalue(stat, dof);
}

} // namespace

TEST_CASE("config validation rejects bad settings") {
    GenConfig cfg = small_config();
    SECTION("span outside K") {
        cfg.causal_span = {2, 8};
        REQUIRE_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
    SECTION("span inverted") {
        cfg.causal_span = {3, 2};
        REQUIRE_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
    SECTION("rho out of range") {
        cfg.bias_rho = 1.5;
        REQUIRE_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
    SECTION("too few answers") {
        cfg.num_answers = 1;
        REQUIRE_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
    SECTION("feature dim too small") {
        cfg.d = 4;
        REQUIRE_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
}

TEST_CASE("same config and seed produce identical bundles") {
    GenConfig cfg = small_config();
    DatasetBundle a = generate_dataset(cfg);
    DatasetBundle b = generate_dataset(cfg);
    REQUIRE(same_bundle(a, b));
}

TEST_CASE("splits are disjoint and sized by largest remainder") {
    GenConfig cfg = small_config();
    cfg.num_videos = 2857;
    cfg.num_objects = 0;
    DatasetBundle bundle = generate_dataset(cfg);
    REQUIRE(bundle.train.size() == 2000);
    REQUIRE(bundle.val.size() == 286);
    REQUIRE(bundle.test_iid.size() == 286);
    REQUIRE(bundle.test_ood.size() == 285);

    std::set<std::string> ids;
    for (const std::string& name : split_names())
        for (const Instance& inst : bundle.split(name)) ids.insert(inst.video.id);
    REQUIRE(ids.size() == 2857);
}

TEST_CASE("stored answers match the oracle on the causal rows") {
    DatasetBundle bundle = generate_dataset(small_config());
    for (const std::string& name : split_names()) {
        for (const Instance& inst : bundle.split(name)) {
            Mat rows = causal_rows(inst.video);
            REQUIRE(oracle_answer(bundle.mechanism, rows, inst.question) ==
                    inst.question.answer);
        }
    }
}

TEST_CASE("masks are contiguous windows within the configured span") {
    GenConfig cfg = small_config();
    DatasetBundle bundle = generate_dataset(cfg);
    for (const Instance& inst : bundle.train) {
        int count = 0, first = -1, last = -1;
        for (int k = 0; k < cfg.K; ++k)
            if (inst.video.causal_mask[std::size_t(k)]) {
                ++count;
                if (first < 0) first = k;
                last = k;
            }
        REQUIRE(count >= cfg.causal_span.min_clips);
        REQUIRE(count <= cfg.causal_span.max_clips);
        REQUIRE(last - first + 1 == count);
        REQUIRE(count < cfg.K);
    }
}

TEST_CASE("oracle behaves as a nearest-centroid mechanism") {
    GenConfig cfg = small_config();
    cfg.noise_sigma = 0.0;
    Mechanism mech = build_mechanism(cfg);
    QuestionInstance q;
    q.tokens = Mat::Zero(1, cfg.d);

    SECTION("single clip at a centroid maps to its class") {
        for (int k = 0; k < cfg.num_answers; ++k) {
            Mat clip = mech.centroids.row(k);
            REQUIRE(oracle_answer(mech, clip, q) == k);
        }
    }
    SECTION("mean of two clips from one centroid maps to it") {
        Mat two(2, cfg.d);
        two.row(0) = mech.centroids.row(2);
        two.row(1) = mech.centroids.row(2);
        REQUIRE(oracle_answer(mech, two, q) == 2);
    }
    SECTION("permutation invariance") {
        DatasetBundle bundle = generate_dataset(small_config());
        const Instance& inst = bundle.train.front();
        Mat rows = causal_rows(inst.video);
        Mat flipped = rows.colwise().reverse();
        REQUIRE(oracle_answer(bundle.mechanism, flipped, inst.question) ==
                inst.question.answer);
    }
    SECTION("empty input is a degenerate-input error") {
        Mat none(0, cfg.d);
        REQUIRE_THROWS_AS(oracle_answer(mech, none, q), DegenerateInputError);
    }
}

TEST_CASE("environment replacement never changes the oracle answer") {
    DatasetBundle bundle = generate_dataset(small_config());
    const auto& train = bundle.train;
    for (std::size_t i = 0; i + 1 < std::min<std::size_t>(train.size(), 20); ++i) {
        const Instance& a = train[i];
        const Instance& donor = train[i + 1];
        Mat swapped = a.video.clips;
        std::vector<int> donor_env;
        for (int k = 0; k < int(donor.video.causal_mask.size()); ++k)
            if (!donor.video.causal_mask[std::size_t(k)]) donor_env.push_back(k);
        int at = 0;
        for (int k = 0; k < int(a.video.causal_mask.size()); ++k)
            if (!a.video.causal_mask[std::size_t(k)]) {
                swapped.row(k) = donor.video.clips.row(donor_env[std::size_t(at % int(donor_env.size()))]);
                ++at;
            }
        VideoInstance patched = a.video;
        patched.clips = swapped;
        Mat rows = causal_rows(patched);
        REQUIRE(oracle_answer(bundle.mechanism, rows, a.question) == a.question.answer);
    }
}

TEST_CASE("environment-answer coupling matches the closed form") {
    GenConfig cfg = small_config();
    cfg.num_videos = 14286;
    cfg.num_objects = 0;
    cfg.bias_rho = 0.9;
    cfg.num_answers = 4;
    DatasetBundle bundle = generate_dataset(cfg);
    REQUIRE(bundle.train.size() >= 10000);

    double match = env_answer_match_rate(bundle.train);
    REQUIRE(match == Catch::Approx(0.925).margin(0.01));

    double ood_match = env_answer_match_rate(bundle.test_ood);
    REQUIRE(ood_match == Catch::Approx(0.25).margin(0.04));

    REQUIRE(independence_pvalue(bundle.train, cfg.num_answers) < 1e-6);
    REQUIRE(independence_pvalue(bundle.test_ood, cfg.num_answers) > 0.01);
}

TEST_CASE("zero bias yields statistical independence") {
    GenConfig cfg = small_config();
    cfg.num_videos = 4000;
    cfg.num_objects = 0;
    cfg.bias_rho = 0.0;
    DatasetBundle bundle = generate_dataset(cfg);
    REQUIRE(independence_pvalue(bundle.train, cfg.num_answers) > 0.01);
}

TEST_CASE("mechanism parameters do not depend on the coupling strength") {
    GenConfig a = small_config();
    GenConfig b = small_config();
    b.bias_rho = 0.0;
    DatasetBundle ba = generate_dataset(a);
    DatasetBundle bb = generate_dataset(b);
    REQUIRE(ba.mechanism.centroids == bb.mechanism.centroids);
    REQUIRE(ba.mechanism.env_centroids == bb.mechanism.env_centroids);
    REQUIRE(ba.mechanism.pos_codes == bb.mechanism.pos_codes);
}

TEST_CASE("dataset container round-trips exactly") {
    namespace fs = std::filesystem;
    GenConfig cfg = small_config();
    DatasetBundle bundle = generate_dataset(cfg);
    fs::path dir = fs::temp_directory_path() / "gq_synthgen_test";
    fs::create_directories(dir);
    std::string path = (dir / "bundle.gqds").string();

    save_dataset(bundle, path);
    DatasetBundle loaded = load_dataset(path);
    REQUIRE(same_bundle(bundle, loaded));

    const GenConfig& lc = loaded.config;
    REQUIRE(lc.num_videos == cfg.num_videos);
    REQUIRE(lc.K == cfg.K);
    REQUIRE(lc.d == cfg.d);
    REQUIRE(lc.bias_rho == cfg.bias_rho);
    REQUIRE(lc.seed == cfg.seed);

    for (const Instance& inst : loaded.train) {
        Mat rows = causal_rows(inst.video);
        REQUIRE(oracle_answer(loaded.mechanism, rows, inst.question) == inst.question.answer);
    }

    SECTION("two saves are byte-identical") {
        std::string path2 = (dir / "bundle2.gqds").string();
        save_dataset(bundle, path2);
        std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        REQUIRE(b1 == b2);
    }

    SECTION("corrupt files are rejected") {
        std::string trunc = (dir / "trunc.gqds").string();
        {
            std::ifstream in(path, std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
            std::ofstream out(trunc, std::ios::binary);
            out.write(bytes.data(), std::streamsize(bytes.size() / 2));
        }
        REQUIRE_THROWS_AS(load_dataset(trunc), StateError);

        std::string bad = (dir / "bad.gqds").string();
        {
            std::ofstream out(bad, std::ios::binary);
            out << "NOPEnope";
        }
        REQUIRE_THROWS_AS(load_dataset(bad), StateError);
        REQUIRE_THROWS_AS(load_dataset((dir / "missing.gqds").string()), ConfigError);
    }
}
