#pragma once

#include <fstream>
#include <sstream>

#include "metor/synth.hpp"

// Layered key-value run configuration with explicit [model]/[train]/[data]/
// [eval] sections. Unknown sections or keys are hard errors. Parsing then
// re-serializing is idempotent, and the config hash is taken over the
// canonical serialization.

namespace metor {

struct ModelConfig {
    long dim = 64;
    long heads = 4;
    long encoder_layers = 2;
    long decoder_layers = 2;
    long text_layers = 2;
    long patch_size = 8;
    long context_tokens = 4;  // context tokens per kind appended to the encoder input
    long prompt_tokens = 4;   // learnable prompt vectors ahead of each category token
    long num_queries = 12;
    long iter_layers = 2;
    double alpha = 0.9;
    double gamma_init = 10.0;
    long pair_top_k = 6;
    bool context_refinement = true;  // context tokens + everything downstream of them
    bool query_refinement = true;    // attention-refined object queries
    bool text_refinement = true;     // context-conditioned prompt tokens
    bool freeze_encoders = false;    // emulate a frozen backbone: no gradient into encoders
};

struct TrainConfig {
    double lr = 1e-4;
    std::vector<long> milestones{15, 20, 25};
    double lr_factor = 0.1;
    long epochs = 30;
    std::uint64_t seed = 0;
    double theta_traj = 1.0;
    double theta_ctx = 0.2;
    double theta_cst = 0.1;
    double aux_weight = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct DataConfig {
    synth::GenConfig gen;
    double novel_fraction_obj = 0.0;
    double novel_fraction_rel = 0.25;
    double train_fraction = 1.0;
    long segment_length = 30;
    long segment_stride = 30;
};

struct EvalConfig {
    double score_threshold = 0.2;      // keep candidates whose best class score passes
    double presence_threshold = 0.35;  // per-frame box filter
    double merge_viou = 0.5;
    double viou_threshold = 0.5;
    long examine_top_k = 100;
    long max_per_segment = 200;
    long max_per_video = 200;
    std::string video_set = "all";     // train | test | all
    std::string merge_score = "mean";  // mean | max
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline long parse_long(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const long out = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw UsageError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<long> parse_long_list(const std::string& v, const std::string& key) {
    std::vector<long> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_long(trim(item), key));
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string format_long_list(const std::vector<long>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
    using namespace detail;
    auto unknown = [&]() -> void {
        throw UsageError("config: unknown key '" + key + "' in section [" + section + "]");
    };
    if (section == "model") {
        auto& m = cfg.model;
        if (key == "dim") m.dim = parse_long(value, key);
        else if (key == "heads") m.heads = parse_long(value, key);
        else if (key == "encoder_layers") m.encoder_layers = parse_long(value, key);
        else if (key == "decoder_layers") m.decoder_layers = parse_long(value, key);
        else if (key == "text_layers") m.text_layers = parse_long(value, key);
        else if (key == "patch_size") m.patch_size = parse_long(value, key);
        else if (key == "context_tokens") m.context_tokens = parse_long(value, key);
        else if (key == "prompt_tokens") m.prompt_tokens = parse_long(value, key);
        else if (key == "num_queries") m.num_queries = parse_long(value, key);
        else if (key == "iter_layers") m.iter_layers = parse_long(value, key);
        else if (key == "alpha") m.alpha = parse_double(value, key);
        else if (key == "gamma_init") m.gamma_init = parse_double(value, key);
        else if (key == "pair_top_k") m.pair_top_k = parse_long(value, key);
        else if (key == "context_refinement") m.context_refinement = parse_bool(value, key);
        else if (key == "query_refinement") m.query_refinement = parse_bool(value, key);
        else if (key == "text_refinement") m.text_refinement = parse_bool(value, key);
        else if (key == "freeze_encoders") m.freeze_encoders = parse_bool(value, key);
        else unknown();
    } else if (section == "train") {
        auto& t = cfg.train;
        if (key == "lr") t.lr = parse_double(value, key);
        else if (key == "milestones") t.milestones = parse_long_list(value, key);
        else if (key == "lr_factor") t.lr_factor = parse_double(value, key);
        else if (key == "epochs") t.epochs = parse_long(value, key);
        else if (key == "seed") t.seed = static_cast<std::uint64_t>(parse_long(value, key));
        else if (key == "theta_traj") t.theta_traj = parse_double(value, key);
        else if (key == "theta_ctx") t.theta_ctx = parse_double(value, key);
        else if (key == "theta_cst") t.theta_cst = parse_double(value, key);
        else if (key == "aux_weight") t.aux_weight = parse_double(value, key);
        else if (key == "weight_decay") t.weight_decay = parse_double(value, key);
        else if (key == "beta1") t.beta1 = parse_double(value, key);
        else if (key == "beta2") t.beta2 = parse_double(value, key);
        else if (key == "adam_eps") t.adam_eps = parse_double(value, key);
        else unknown();
    } else if (section == "data") {
        auto& d = cfg.data;
        if (key == "videos") d.gen.videos = parse_long(value, key);
        else if (key == "frames_per_video") d.gen.frames_per_video = parse_long(value, key);
        else if (key == "width") d.gen.width = parse_long(value, key);
        else if (key == "height") d.gen.height = parse_long(value, key);
        else if (key == "min_objects") d.gen.min_objects = parse_long(value, key);
        else if (key == "max_objects") d.gen.max_objects = parse_long(value, key);
        else if (key == "object_categories") d.gen.object_categories = parse_long(value, key);
        else if (key == "relation_categories") d.gen.relation_categories = parse_long(value, key);
        else if (key == "min_run_frames") d.gen.min_run_frames = parse_long(value, key);
        else if (key == "follow_prob") d.gen.follow_prob = parse_double(value, key);
        else if (key == "curve_prob") d.gen.curve_prob = parse_double(value, key);
        else if (key == "static_prob") d.gen.static_prob = parse_double(value, key);
        else if (key == "novel_fraction_obj") d.novel_fraction_obj = parse_double(value, key);
        else if (key == "novel_fraction_rel") d.novel_fraction_rel = parse_double(value, key);
        else if (key == "train_fraction") d.train_fraction = parse_double(value, key);
        else if (key == "segment_length") d.segment_length = parse_long(value, key);
        else if (key == "segment_stride") d.segment_stride = parse_long(value, key);
        else unknown();
    } else if (section == "eval") {
        auto& e = cfg.eval;
        if (key == "score_threshold") e.score_threshold = parse_double(value, key);
        else if (key == "presence_threshold") e.presence_threshold = parse_double(value, key);
        else if (key == "merge_viou") e.merge_viou = parse_double(value, key);
        else if (key == "viou_threshold") e.viou_threshold = parse_double(value, key);
        else if (key == "examine_top_k") e.examine_top_k = parse_long(value, key);
        else if (key == "max_per_segment") e.max_per_segment = parse_long(value, key);
        else if (key == "max_per_video") e.max_per_video = parse_long(value, key);
        else if (key == "video_set") e.video_set = value;
        else if (key == "merge_score") e.merge_score = value;
        else unknown();
    } else {
        throw UsageError("config: unknown section [" + section + "]");
    }
}

inline void validate_config(const RunConfig& cfg) {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw UsageError("config: " + msg);
    };
    const auto& m = cfg.model;
    require(m.dim > 0 && m.dim % 4 == 0, "model.dim must be a positive multiple of 4");
    require(m.heads > 0 && m.dim % m.heads == 0, "model.dim must be divisible by model.heads");
    require(m.patch_size > 0, "model.patch_size must be positive");
    require(m.context_tokens > 0, "model.context_tokens must be positive");
    require(m.prompt_tokens >= 0, "model.prompt_tokens must be non-negative");
    require(m.num_queries >= 2, "model.num_queries must be at least 2");
    require(m.iter_layers >= 0, "model.iter_layers must be non-negative");
    require(m.alpha >= 0.0 && m.alpha <= 1.0, "model.alpha must lie in [0,1]");
    require(m.pair_top_k >= 2, "model.pair_top_k must be at least 2");
    const auto& t = cfg.train;
    require(t.lr > 0, "train.lr must be positive");
    require(t.epochs >= 0, "train.epochs must be non-negative");
    require(std::is_sorted(t.milestones.begin(), t.milestones.end()) &&
                std::adjacent_find(t.milestones.begin(), t.milestones.end()) ==
                    t.milestones.end(),
            "train.milestones must be strictly ascending");
    const auto& d = cfg.data;
    require(d.gen.videos > 0, "data.videos must be positive");
    require(d.gen.min_objects >= 1 && d.gen.max_objects >= d.gen.min_objects,
            "data.min_objects/max_objects malformed");
    require(d.gen.width % cfg.model.patch_size == 0 &&
                d.gen.height % cfg.model.patch_size == 0,
            "frame size must be divisible by model.patch_size");
    require(d.novel_fraction_obj >= 0.0 && d.novel_fraction_obj < 1.0,
            "data.novel_fraction_obj must lie in [0,1)");
    require(d.novel_fraction_rel >= 0.0 && d.novel_fraction_rel < 1.0,
            "data.novel_fraction_rel must lie in [0,1)");
    require(d.train_fraction > 0.0 && d.train_fraction <= 1.0,
            "data.train_fraction must lie in (0,1]");
    require(d.segment_length >= 2, "data.segment_length must be at least 2");
    require(d.segment_stride >= 1, "data.segment_stride must be positive");
    const auto& e = cfg.eval;
    require(e.score_threshold > 0.0 && e.score_threshold < 1.0,
            "eval.score_threshold must lie in (0,1)");
    require(e.presence_threshold > 0.0 && e.presence_threshold < 1.0,
            "eval.presence_threshold must lie in (0,1)");
    require(e.merge_viou > 0.0 && e.merge_viou < 1.0, "eval.merge_viou must lie in (0,1)");
    require(e.viou_threshold > 0.0 && e.viou_threshold < 1.0,
            "eval.viou_threshold must lie in (0,1)");
    require(e.examine_top_k > 0, "eval.examine_top_k must be positive");
    require(e.video_set == "train" || e.video_set == "test" || e.video_set == "all",
            "eval.video_set must be train|test|all");
    require(e.merge_score == "mean" || e.merge_score == "max",
            "eval.merge_score must be mean|max");
}

inline std::string serialize_config(const RunConfig& cfg) {
    using namespace detail;
    std::ostringstream os;
    const auto& m = cfg.model;
    os << "[model]\n";
    os << "dim = " << m.dim << "\n";
    os << "heads = " << m.heads << "\n";
    os << "encoder_layers = " << m.encoder_layers << "\n";
    os << "decoder_layers = " << m.decoder_layers << "\n";
    os << "text_layers = " << m.text_layers << "\n";
    os << "patch_size = " << m.patch_size << "\n";
    os << "context_tokens = " << m.context_tokens << "\n";
    os << "prompt_tokens = " << m.prompt_tokens << "\n";
    os << "num_queries = " << m.num_queries << "\n";
    os << "iter_layers = " << m.iter_layers << "\n";
    os << "alpha = " << format_double(m.alpha) << "\n";
    os << "gamma_init = " << format_double(m.gamma_init) << "\n";
    os << "pair_top_k = " << m.pair_top_k << "\n";
    os << "context_refinement = " << (m.context_refinement ? "true" : "false") << "\n";
    os << "query_refinement = " << (m.query_refinement ? "true" : "false") << "\n";
    os << "text_refinement = " << (m.text_refinement ? "true" : "false") << "\n";
    os << "freeze_encoders = " << (m.freeze_encoders ? "true" : "false") << "\n";
    const auto& t = cfg.train;
    os << "\n[train]\n";
    os << "lr = " << format_double(t.lr) << "\n";
    os << "milestones = " << format_long_list(t.milestones) << "\n";
    os << "lr_factor = " << format_double(t.lr_factor) << "\n";
    os << "epochs = " << t.epochs << "\n";
    os << "seed = " << t.seed << "\n";
    os << "theta_traj = " << format_double(t.theta_traj) << "\n";
    os << "theta_ctx = " << format_double(t.theta_ctx) << "\n";
    os << "theta_cst = " << format_double(t.theta_cst) << "\n";
    os << "aux_weight = " << format_double(t.aux_weight) << "\n";
    os << "weight_decay = " << format_double(t.weight_decay) << "\n";
    os << "beta1 = " << format_double(t.beta1) << "\n";
    os << "beta2 = " << format_double(t.beta2) << "\n";
    os << "adam_eps = " << format_double(t.adam_eps) << "\n";
    const auto& d = cfg.data;
    os << "\n[data]\n";
    os << "videos = " << d.gen.videos << "\n";
    os << "frames_per_video = " << d.gen.frames_per_video << "\n";
    os << "width = " << d.gen.width << "\n";
    os << "height = " << d.gen.height << "\n";
    os << "min_objects = " << d.gen.min_objects << "\n";
    os << "max_objects = " << d.gen.max_objects << "\n";
    os << "object_categories = " << d.gen.object_categories << "\n";
    os << "relation_categories = " << d.gen.relation_categories << "\n";
    os << "min_run_frames = " << d.gen.min_run_frames << "\n";
    os << "follow_prob = " << format_double(d.gen.follow_prob) << "\n";
    os << "curve_prob = " << format_double(d.gen.curve_prob) << "\n";
    os << "static_prob = " << format_double(d.gen.static_prob) << "\n";
    os << "novel_fraction_obj = " << format_double(d.novel_fraction_obj) << "\n";
    os << "novel_fraction_rel = " << format_double(d.novel_fraction_rel) << "\n";
    os << "train_fraction = " << format_double(d.train_fraction) << "\n";
    os << "segment_length = " << d.segment_length << "\n";
    os << "segment_stride = " << d.segment_stride << "\n";
    const auto& e = cfg.eval;
    os << "\n[eval]\n";
    os << "score_threshold = " << format_double(e.score_threshold) << "\n";
    os << "presence_threshold = " << format_double(e.presence_threshold) << "\n";
    os << "merge_viou = " << format_double(e.merge_viou) << "\n";
    os << "viou_threshold = " << format_double(e.viou_threshold) << "\n";
    os << "examine_top_k = " << e.examine_top_k << "\n";
    os << "max_per_segment = " << e.max_per_segment << "\n";
    os << "max_per_video = " << e.max_per_video << "\n";
    os << "video_set = " << e.video_set << "\n";
    os << "merge_score = " << e.merge_score << "\n";
    return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw UsageError("config line " + std::to_string(line_no) +
                                 ": malformed section header");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (section.empty())
            throw UsageError("config line " + std::to_string(line_no) +
                             ": key outside any [section]");
        apply_config_entry(cfg, section, key, value);
    }
    validate_config(cfg);
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
    return hash_string(serialize_config(cfg));
}

}  // namespace metor
