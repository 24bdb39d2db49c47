// Copyright 2026 The DuCa Authors
// SPDX-License-Identifier: Apache-2.0

#include "duca/harness.h"

#include <charconv>
#include <concepts>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "duca/errors.h"
#include "duca/token_select.h"
#include "duca/weights_io.h"
#include "json.hpp"

namespace duca {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Reads typed fields out of a JSON object, collecting every problem instead
// of stopping at the first one.
class FieldReader {
public:
    FieldReader(const json& obj, std::string prefix, std::vector<std::string>& errors)
        : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {}

    void allow(std::initializer_list<const char*> keys) {
        std::set<std::string> allowed(keys.begin(), keys.end());
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!allowed.count(it.key())) errors_.push_back("unknown key '" + path(it.key()) + "'");
        }
    }

    template <std::unsigned_integral T>
    void read(const char* key, T& out) {
        if (!obj_.contains(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_number_unsigned()) {
            errors_.push_back("'" + path(key) + "' must be a non-negative integer");
            return;
        }
        out = v.get<T>();
    }

    void read(const char* key, double& out) {
        if (!obj_.contains(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_number()) {
            errors_.push_back("'" + path(key) + "' must be a number");
            return;
        }
        out = v.get<double>();
    }

    void read(const char* key, bool& out) {
        if (!obj_.contains(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_boolean()) {
            errors_.push_back("'" + path(key) + "' must be true or false");
            return;
        }
        out = v.get<bool>();
    }

    void read(const char* key, std::string& out) {
        if (!obj_.contains(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_string()) {
            errors_.push_back("'" + path(key) + "' must be a string");
            return;
        }
        out = v.get<std::string>();
    }

    template <typename T>
    void read_list(const char* key, std::vector<T>& out) {
        if (!obj_.contains(key)) return;
        const json& v = obj_.at(key);
        bool ok = v.is_array();
        if (ok) {
            for (const json& e : v) {
                if constexpr (std::is_floating_point_v<T>) {
                    ok = ok && e.is_number();
                } else {
                    ok = ok && e.is_number_unsigned();
                }
            }
        }
        if (!ok) {
            errors_.push_back("'" + path(key) + "' must be a list of " +
                              (std::is_floating_point_v<T> ? "numbers" : "non-negative integers"));
            return;
        }
        out = v.get<std::vector<T>>();
    }

    // Nested object, or nullptr when absent or of the wrong type.
    const json* object(const char* key) {
        if (!obj_.contains(key)) return nullptr;
        const json& v = obj_.at(key);
        if (!v.is_object()) {
            errors_.push_back("'" + path(key) + "' must be an object");
            return nullptr;
        }
        return &v;
    }

private:
    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    const json& obj_;
    std::string prefix_;
    std::vector<std::string>& errors_;
};

[[noreturn]] void throw_problems(const std::string& what, const std::vector<std::string>& problems) {
    std::ostringstream os;
    os << what << ':';
    for (const auto& p : problems) os << "\n  - " << p;
    throw ConfigError(os.str());
}

std::string ratio_problem(double ratio, const char* field) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        return std::string(field) + " must lie in [0, 1), got " + format_number(ratio);
    }
    return {};
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["model"] = {{"depth", cfg.model.depth},         {"hidden", cfg.model.hidden},
                  {"heads", cfg.model.heads},         {"tokens", cfg.model.tokens},
                  {"classes", cfg.model.classes},     {"mlp_ratio", cfg.model.mlp_ratio},
                  {"max_timesteps", cfg.model.max_timesteps}, {"seed", cfg.model_seed}};
    if (cfg.weights) j["model"]["weights"] = cfg.weights->generic_string();
    j["sampler"] = {{"steps", cfg.sampler.steps},
                    {"beta_start", cfg.sampler.beta_start},
                    {"beta_end", cfg.sampler.beta_end}};
    j["policy"] = std::string(to_string(cfg.policy));
    j["cycle"] = cfg.cycle;
    j["ratio"] = cfg.ratio;
    j["skip_depth"] = cfg.skip_depth.value_or(cfg.model.depth - 1);
    j["strategy"] = cfg.strategy;
    j["efficient_attention"] = cfg.efficient_attention;
    j["class_label"] = cfg.class_label;
    j["seeds"] = cfg.seeds;
    return j;
}

ordered_json policy_to_json(const PolicyReport& p, const ExperimentConfig& cfg) {
    ordered_json j;
    j["policy"] = std::string(to_string(p.policy));
    j["cycle"] = p.cycle;
    j["ratio"] = p.ratio;
    j["skip_depth"] = cfg.skip_depth.value_or(cfg.model.depth - 1);
    j["strategy"] = cfg.strategy;
    j["reference_flops"] = p.mean_reference_flops();
    j["total_flops"] = p.mean_flops();
    j["flops_speedup"] = p.flops_speedup();
    j["terminal_error_mean"] = p.mean_terminal_error();
    j["terminal_error_std"] = p.std_terminal_error();
    ordered_json runs = ordered_json::array();
    for (const SeedRun& r : p.runs) {
        runs.push_back({{"seed", r.seed},
                        {"total_flops", r.total_flops},
                        {"reference_flops", r.reference_flops},
                        {"terminal_error", r.terminal_error()}});
    }
    j["seeds"] = std::move(runs);
    return j;
}

// Writes to name.tmp, then renames into place.
std::filesystem::path write_file(const std::filesystem::path& dir, const std::string& name,
                                 const std::string& content) {
    const auto final_path = dir / name;
    const auto tmp_path = dir / (name + ".tmp");
    {
        std::ofstream f(tmp_path, std::ios::binary | std::ios::trunc);
        if (!f) throw FilesystemError("cannot open " + tmp_path.string() + " for writing");
        f << content;
        if (!f.flush()) throw FilesystemError("write failed for " + tmp_path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp_path, final_path, ec);
    if (ec) throw FilesystemError("cannot move " + tmp_path.string() + " into place: " + ec.message());
    return final_path;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw FilesystemError("cannot create output directory " + dir.string());
    }
}

class ReferenceCache {
public:
    ReferenceCache(const DiTModel& model, const NoiseSchedule& sched, std::size_t class_label)
        : model_(model), sched_(sched), class_label_(class_label) {}

    const Trajectory& get(std::uint64_t seed) {
        auto it = refs_.find(seed);
        if (it == refs_.end()) {
            it = refs_.emplace(seed, run_uncached(model_, sched_, seed, class_label_)).first;
        }
        return it->second;
    }

private:
    const DiTModel& model_;
    const NoiseSchedule& sched_;
    std::size_t class_label_;
    std::map<std::uint64_t, Trajectory> refs_;
};

PolicyReport run_policy(const DiTModel& model, const NoiseSchedule& sched, const ExperimentConfig& cfg,
                        Policy policy, std::size_t cycle, double ratio, ReferenceCache& refs) {
    SchedulePlan plan = build_policy_plan(policy, sched.steps(), cycle);
    plan.ratio = ratio;
    plan.skip_depth = cfg.skip_depth;
    TrajectoryOptions options;
    options.class_label = cfg.class_label;
    options.strategy = SelectionStrategy::parse(cfg.strategy);
    options.efficient_attention = cfg.efficient_attention;

    PolicyReport report;
    report.policy = policy;
    report.cycle = cycle;
    report.ratio = ratio;
    for (std::uint64_t seed : cfg.seeds) {
        const Trajectory& ref = refs.get(seed);
        Trajectory traj = run_trajectory(model, plan, sched, seed, options);
        for (const Tensor& s : traj.states) {
            if (!s.all_finite()) {
                throw std::runtime_error("non-finite state in " + std::string(to_string(policy)) +
                                         " trajectory, seed " + std::to_string(seed));
            }
        }
        SeedRun run;
        run.seed = seed;
        run.error = caching_error(traj, ref);
        run.kinds = std::move(traj.step_kinds);
        run.log = std::move(traj.log);
        run.total_flops = traj.total_flops;
        run.reference_flops = ref.total_flops;
        report.runs.push_back(std::move(run));
    }
    return report;
}

NoiseSchedule schedule_for(const ExperimentConfig& cfg) {
    return make_noise_schedule(cfg.sampler.steps, cfg.sampler.beta_start, cfg.sampler.beta_end);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::vector<std::string> ExperimentConfig::problems() const {
    std::vector<std::string> out;
    if (!weights) {
        for (const auto& p : model.problems()) out.push_back("model: " + p);
    }
    if (sampler.steps < 1) out.push_back("sampler.steps must be at least 1");
    if (!(sampler.beta_start > 0.0 && sampler.beta_start <= sampler.beta_end && sampler.beta_end < 1.0)) {
        out.push_back("sampler betas need 0 < beta_start <= beta_end < 1");
    }
    if (cycle < 1) out.push_back("cycle must be at least 1");
    if (auto p = ratio_problem(ratio, "ratio"); !p.empty()) out.push_back(p);
    if (skip_depth && !weights && (*skip_depth < 1 || *skip_depth + 1 > model.depth)) {
        out.push_back("skip_depth must lie in [1, depth - 1]");
    }
    std::optional<SelectionStrategy> strat;
    try {
        strat = SelectionStrategy::parse(strategy);
    } catch (const ConfigError&) {
        out.push_back("unknown strategy '" + strategy + "'");
    }
    if (strat && strat->needs_attention_scores() && efficient_attention) {
        out.push_back("strategy " + strategy +
                      " needs attention scores, which efficient attention does not provide; "
                      "set efficient_attention to false");
    }
    auto similarity_ok = [&](double r) {
        return !strat || strat->kind != ScoreKind::kSimilarity || strat->base_fraction < 1.0 - r;
    };
    if (!similarity_ok(ratio)) out.push_back("ratio leaves no room beyond the similarity base tokens");
    if (!weights && class_label >= model.classes) out.push_back("class_label must be below model.classes");
    if (seeds.empty()) out.push_back("seeds must not be empty");
    if (grid_cycles.empty()) out.push_back("grid.cycles must not be empty");
    for (std::size_t n : grid_cycles) {
        if (n < 1) out.push_back("grid.cycles entries must be at least 1");
    }
    if (grid_ratios.empty()) out.push_back("grid.ratios must not be empty");
    for (double r : grid_ratios) {
        if (auto p = ratio_problem(r, "grid.ratios entries"); !p.empty()) out.push_back(p);
        else if (!similarity_ok(r)) out.push_back("grid ratio " + format_number(r) + " too high for sim strategies");
    }
    return out;
}

void ExperimentConfig::validate() const {
    const auto issues = problems();
    if (!issues.empty()) throw_problems("invalid experiment config", issues);
}

ExperimentConfig parse_config(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");

    ExperimentConfig cfg;
    std::vector<std::string> errors;
    FieldReader top(doc, "", errors);
    top.allow({"model", "sampler", "policy", "cycle", "ratio", "skip_depth", "strategy",
               "efficient_attention", "class_label", "seeds", "output", "grid"});

    if (const json* m = top.object("model")) {
        FieldReader r(*m, "model", errors);
        r.allow({"depth", "hidden", "heads", "tokens", "classes", "mlp_ratio", "max_timesteps", "seed",
                 "weights"});
        r.read("depth", cfg.model.depth);
        r.read("hidden", cfg.model.hidden);
        r.read("heads", cfg.model.heads);
        r.read("tokens", cfg.model.tokens);
        r.read("classes", cfg.model.classes);
        r.read("mlp_ratio", cfg.model.mlp_ratio);
        r.read("max_timesteps", cfg.model.max_timesteps);
        r.read("seed", cfg.model_seed);
        std::string weights;
        r.read("weights", weights);
        if (!weights.empty()) cfg.weights = weights;
    }
    if (const json* s = top.object("sampler")) {
        FieldReader r(*s, "sampler", errors);
        r.allow({"steps", "beta_start", "beta_end"});
        r.read("steps", cfg.sampler.steps);
        r.read("beta_start", cfg.sampler.beta_start);
        r.read("beta_end", cfg.sampler.beta_end);
    }
    std::string policy = std::string(to_string(cfg.policy));
    top.read("policy", policy);
    try {
        cfg.policy = parse_policy(policy);
    } catch (const ConfigError& e) {
        errors.push_back(e.what());
    }
    top.read("cycle", cfg.cycle);
    top.read("ratio", cfg.ratio);
    if (doc.contains("skip_depth")) {
        std::size_t skip = 0;
        top.read("skip_depth", skip);
        cfg.skip_depth = skip;
    }
    top.read("strategy", cfg.strategy);
    top.read("efficient_attention", cfg.efficient_attention);
    top.read("class_label", cfg.class_label);
    top.read_list("seeds", cfg.seeds);
    std::string output = cfg.output.string();
    top.read("output", output);
    cfg.output = output;
    if (const json* g = top.object("grid")) {
        FieldReader r(*g, "grid", errors);
        r.allow({"cycles", "ratios"});
        r.read_list("cycles", cfg.grid_cycles);
        r.read_list("ratios", cfg.grid_ratios);
    }

    for (const auto& p : cfg.problems()) errors.push_back(p);
    if (!errors.empty()) throw_problems("invalid experiment config", errors);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Reports

double PolicyReport::mean_flops() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(static_cast<double>(r.total_flops));
    return mean_of(v);
}

double PolicyReport::mean_reference_flops() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(static_cast<double>(r.reference_flops));
    return mean_of(v);
}

double PolicyReport::flops_speedup() const { return mean_reference_flops() / mean_flops(); }

double PolicyReport::mean_terminal_error() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.terminal_error());
    return mean_of(v);
}

double PolicyReport::std_terminal_error() const {
    if (runs.size() < 2) return 0.0;
    const double m = mean_terminal_error();
    double s = 0.0;
    for (const auto& r : runs) s += (r.terminal_error() - m) * (r.terminal_error() - m);
    return std::sqrt(s / static_cast<double>(runs.size() - 1));
}

DiTModel build_model(const ExperimentConfig& cfg) {
    if (!cfg.weights) return init_model(cfg.model_seed, cfg.model);
    DiTModel model = load_weights(*cfg.weights);
    const ModelConfig& mc = model.config();
    std::vector<std::string> issues;
    if (cfg.skip_depth && (*cfg.skip_depth < 1 || *cfg.skip_depth + 1 > mc.depth)) {
        issues.push_back("skip_depth must lie in [1, depth - 1] for the loaded weights");
    }
    if (cfg.class_label >= mc.classes) issues.push_back("class_label must be below the loaded model's classes");
    if (!issues.empty()) throw_problems("config does not fit " + cfg.weights->string(), issues);
    return model;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const DiTModel model = build_model(cfg);
    const NoiseSchedule sched = schedule_for(cfg);
    ReferenceCache refs(model, sched, cfg.class_label);
    RunReport report{cfg, {}};
    report.config.model = model.config();
    report.policies.push_back(run_policy(model, sched, cfg, cfg.policy, cfg.cycle, cfg.ratio, refs));
    return report;
}

RunReport run_comparison(const ExperimentConfig& cfg) {
    cfg.validate();
    const DiTModel model = build_model(cfg);
    const NoiseSchedule sched = schedule_for(cfg);
    ReferenceCache refs(model, sched, cfg.class_label);
    RunReport report{cfg, {}};
    report.config.model = model.config();
    for (Policy p : {Policy::kNone, Policy::kConservative, Policy::kAggressive, Policy::kDuca}) {
        report.policies.push_back(run_policy(model, sched, cfg, p, cfg.cycle, cfg.ratio, refs));
    }
    return report;
}

GridReport ablation_grid(const ExperimentConfig& base, const std::vector<std::size_t>& cycles,
                         const std::vector<double>& ratios) {
    ExperimentConfig cfg = base;
    cfg.grid_cycles = cycles;
    cfg.grid_ratios = ratios;
    cfg.policy = Policy::kDuca;
    cfg.validate();
    const DiTModel model = build_model(cfg);
    const NoiseSchedule sched = schedule_for(cfg);
    ReferenceCache refs(model, sched, cfg.class_label);
    GridReport report{cfg, {}};
    report.config.model = model.config();
    for (std::size_t n : cycles) {
        for (double r : ratios) {
            report.cells.push_back({n, r, run_policy(model, sched, cfg, Policy::kDuca, n, r, refs)});
        }
    }
    return report;
}

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string render_curves_csv(const RunReport& report) {
    std::ostringstream os;
    os << kCurvesHeader << '\n';
    for (const PolicyReport& p : report.policies) {
        const std::string name(to_string(p.policy));
        for (const SeedRun& r : p.runs) {
            os << name << ',' << r.seed << ",0,init," << format_number(r.error.errors[0]) << ",0,0,0\n";
            std::uint64_t cum = 0;
            for (std::size_t i = 0; i < r.log.size(); ++i) {
                const StepRecord& rec = r.log[i];
                cum += rec.flops;
                os << name << ',' << r.seed << ',' << i + 1 << ',' << to_string(rec.kind) << ','
                   << format_number(r.error.errors[i + 1]) << ',' << rec.flops << ',' << cum << ','
                   << rec.total_computed() << '\n';
            }
        }
    }
    return os.str();
}

std::string render_summary_json(const RunReport& report) {
    ordered_json j;
    j["config"] = config_to_json(report.config);
    ordered_json policies = ordered_json::array();
    for (const PolicyReport& p : report.policies) policies.push_back(policy_to_json(p, report.config));
    j["policies"] = std::move(policies);
    return j.dump(2) + "\n";
}

std::string render_grid_csv(const GridReport& report) {
    std::ostringstream os;
    os << kGridHeader << '\n';
    for (const GridCell& c : report.cells) {
        os << c.cycle << ',' << format_number(c.ratio) << ',' << format_number(c.report.flops_speedup())
           << ',' << format_number(c.report.mean_terminal_error()) << ','
           << format_number(c.report.std_terminal_error()) << ',' << format_number(c.report.mean_flops())
           << '\n';
    }
    return os.str();
}

std::string render_grid_json(const GridReport& report) {
    ordered_json j;
    j["config"] = config_to_json(report.config);
    ordered_json cells = ordered_json::array();
    for (const GridCell& c : report.cells) cells.push_back(policy_to_json(c.report, report.config));
    j["cells"] = std::move(cells);
    return j.dump(2) + "\n";
}

std::vector<std::filesystem::path> write_report(const RunReport& report, const std::filesystem::path& dir) {
    const std::string summary = render_summary_json(report);
    const std::string curves = render_curves_csv(report);
    ensure_dir(dir);
    return {write_file(dir, "summary.json", summary), write_file(dir, "curves.csv", curves)};
}

std::vector<std::filesystem::path> write_grid_report(const GridReport& report,
                                                     const std::filesystem::path& dir) {
    const std::string grid_csv = render_grid_csv(report);
    const std::string grid_json = render_grid_json(report);
    ensure_dir(dir);
    return {write_file(dir, "grid.csv", grid_csv), write_file(dir, "grid.json", grid_json)};
}

}  // namespace duca
