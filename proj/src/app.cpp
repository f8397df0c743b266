#include "cil/app.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "cil/error.hpp"
#include "cil/gradcheck_suite.hpp"
#include "cil/random.hpp"

namespace cil {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& dst) {
    if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<T>();
}

}  // namespace

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.synth.seed = Rng::derive(seed, 1);
    cfg.train.seed = seed;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    try {
        if (!j.is_object()) throw ConfigError("config: top level must be an object");
        std::uint64_t seed = 0;
        read(j, "seed", seed);
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            if (d.contains("path") && !d.at("path").is_null()) cfg.dataset_path = d.at("path").get<std::string>();
            if (d.contains("eval_path") && !d.at("eval_path").is_null()) {
                cfg.eval_path = d.at("eval_path").get<std::string>();
            }
            read(d, "eval_fraction", cfg.eval_fraction);
            if (d.contains("synthetic")) {
                const auto& s = d.at("synthetic");
                read(s, "n_classes", cfg.synth.n_classes);
                read(s, "feature_dim", cfg.synth.feature_dim);
                read(s, "clips_per_class", cfg.synth.clips_per_class);
                read(s, "zipf_exponent", cfg.synth.zipf_exponent);
                read(s, "max_labels", cfg.synth.max_labels);
                read(s, "noise_sigma", cfg.synth.noise_sigma);
                read(s, "cooccur_temperature", cfg.synth.cooccur_temperature);
            }
        }
        if (j.contains("plan")) {
            const auto& p = j.at("plan");
            read(p, "base", cfg.plan.base);
            read(p, "increment", cfg.plan.increment);
            read(p, "increments", cfg.plan.increments);
            if (p.contains("classes") && !p.at("classes").is_null()) {
                cfg.plan.classes = p.at("classes").get<std::vector<std::vector<int>>>();
            }
        }
        if (j.contains("strategy")) cfg.strategy = parse_strategy(j.at("strategy").get<std::string>());
        if (j.contains("strategies")) {
            cfg.strategies.clear();
            for (const auto& s : j.at("strategies")) cfg.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            read(t, "epochs", cfg.train.epochs);
            read(t, "batch_size", cfg.train.batch_size);
            read(t, "momentum", cfg.train.momentum);
            read(t, "lr_initial", cfg.train.lr_initial);
            read(t, "lr_incremental", cfg.train.lr_incremental);
            read(t, "omega", cfg.train.distill.omega);
            read(t, "delta", cfg.train.distill.delta);
            read(t, "eps", cfg.train.distill.eps);
            read(t, "threshold", cfg.train.threshold);
            read(t, "hidden", cfg.train.hidden);
            read(t, "embedding_dim", cfg.train.embedding_dim);
            read(t, "init_scale", cfg.train.init_scale);
        }
        read(j, "drop_overlap", cfg.drop_overlap);
        if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
        apply_seed(cfg, seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.train.validate();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["dataset"] = {
        {"path", cfg.dataset_path ? json(cfg.dataset_path->string()) : json(nullptr)},
        {"eval_path", cfg.eval_path ? json(cfg.eval_path->string()) : json(nullptr)},
        {"eval_fraction", cfg.eval_fraction},
        {"synthetic",
         {{"n_classes", cfg.synth.n_classes},
          {"feature_dim", cfg.synth.feature_dim},
          {"clips_per_class", cfg.synth.clips_per_class},
          {"zipf_exponent", cfg.synth.zipf_exponent},
          {"max_labels", cfg.synth.max_labels},
          {"noise_sigma", cfg.synth.noise_sigma},
          {"cooccur_temperature", cfg.synth.cooccur_temperature}}}};
    j["plan"] = {{"base", cfg.plan.base},
                 {"increment", cfg.plan.increment},
                 {"increments", cfg.plan.increments},
                 {"classes", cfg.plan.classes ? json(*cfg.plan.classes) : json(nullptr)}};
    j["strategy"] = std::string(to_string(cfg.strategy));
    json strategies = json::array();
    for (Strategy s : cfg.strategies) strategies.push_back(std::string(to_string(s)));
    j["strategies"] = strategies;
    const auto& t = cfg.train;
    j["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"momentum", t.momentum},
                  {"lr_initial", t.lr_initial},
                  {"lr_incremental", t.lr_incremental},
                  {"omega", t.distill.omega},
                  {"delta", t.distill.delta},
                  {"eps", t.distill.eps},
                  {"threshold", t.threshold},
                  {"hidden", t.hidden},
                  {"embedding_dim", t.embedding_dim},
                  {"init_scale", t.init_scale}};
    j["drop_overlap"] = cfg.drop_overlap;
    j["out"] = cfg.out.string();
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    try {
        return config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
}

namespace {

PhasePlan build_plan(const ExperimentConfig& cfg, std::size_t n_classes) {
    PhasePlan plan;
    if (cfg.plan.classes) {
        plan.phases = *cfg.plan.classes;
    } else {
        plan = make_phase_plan(n_classes, cfg.plan.base, cfg.plan.increment, cfg.plan.increments,
                               Rng::derive(cfg.seed, 2));
    }
    plan.validate(n_classes);
    return plan;
}

std::pair<Dataset, Dataset> make_synthetic_split(const ExperimentConfig& cfg) {
    return split_dataset(gen_synthetic(cfg.synth), cfg.eval_fraction, Rng::derive(cfg.seed, 3));
}

}  // namespace

ExperimentData prepare_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (cfg.dataset_path) {
        Dataset full = load_dataset(*cfg.dataset_path);
        if (cfg.eval_path) {
            d.train = std::move(full);
            d.eval = load_dataset(*cfg.eval_path);
        } else {
            std::tie(d.train, d.eval) = split_dataset(full, cfg.eval_fraction, Rng::derive(cfg.seed, 3));
        }
    } else {
        std::tie(d.train, d.eval) = make_synthetic_split(cfg);
    }
    if (d.train.dim != d.eval.dim || d.train.classes != d.eval.classes) {
        throw ConfigError("dataset: train and eval headers disagree");
    }
    d.plan = build_plan(cfg, d.train.classes);
    return d;
}

// --- result records -------------------------------------------------------------

json phase_record(const PhaseReport& r, Strategy strategy) {
    json hist = json::object();
    for (const auto& [k, v] : r.labels_histogram) hist[std::to_string(k)] = v;
    return json{{"record", "phase"},
                {"strategy", std::string(to_string(strategy))},
                {"phase", r.phase},
                {"incremental", r.incremental},
                {"classes", r.classes},
                {"macro_f1", r.macro_f1},
                {"map", r.map},
                {"fr", r.fr ? json(*r.fr) : json(nullptr)},
                {"per_class_f1", r.per_class_f1},
                {"weight_norms", r.weight_norms},
                {"lambda", r.lambda ? json(*r.lambda) : json(nullptr)},
                {"labels_histogram", hist}};
}

json summary_record(const RunReport& run) {
    return json{{"record", "summary"},
                {"strategy", std::string(to_string(run.strategy))},
                {"phases", run.phases.size()},
                {"avg_f1", run.summary.avg_f1},
                {"avg_map", run.summary.avg_map},
                {"avg_fr", run.summary.avg_fr ? json(*run.summary.avg_fr) : json(nullptr)}};
}

std::string results_jsonl(const RunReport& run) {
    std::string out;
    for (const auto& p : run.phases) out += phase_record(p, run.strategy).dump() + "\n";
    out += summary_record(run).dump() + "\n";
    return out;
}

std::string validate_result_record(const json& rec) {
    auto number_in = [&](const char* key, double lo, double hi) -> std::string {
        if (!rec.contains(key) || !rec.at(key).is_number()) return std::string("missing number '") + key + "'";
        const double v = rec.at(key).get<double>();
        if (v < lo || v > hi) return std::string("'") + key + "' out of range";
        return "";
    };
    if (!rec.is_object() || !rec.contains("record") || !rec.at("record").is_string()) {
        return "missing 'record'";
    }
    if (!rec.contains("strategy") || !rec.at("strategy").is_string()) return "missing 'strategy'";
    try {
        parse_strategy(rec.at("strategy").get<std::string>());
    } catch (const ConfigError&) {
        return "unknown strategy";
    }
    const std::string kind = rec.at("record").get<std::string>();
    if (kind == "phase") {
        for (const char* key : {"phase", "incremental", "classes", "macro_f1", "map", "fr",
                                "per_class_f1", "weight_norms", "lambda", "labels_histogram"}) {
            if (!rec.contains(key)) return std::string("missing '") + key + "'";
        }
        if (!rec.at("phase").is_number_integer() || rec.at("phase").get<int>() < 0) return "bad 'phase'";
        if (!rec.at("incremental").is_boolean()) return "bad 'incremental'";
        for (const char* key : {"macro_f1", "map"}) {
            if (auto e = number_in(key, 0.0, 1.0); !e.empty()) return e;
        }
        if (!rec.at("fr").is_null() && !rec.at("fr").is_number()) return "bad 'fr'";
        if (rec.at("phase").get<int>() == 0 && !rec.at("fr").is_null()) return "'fr' at phase 0";
        if (!rec.at("lambda").is_null() && !rec.at("lambda").is_number()) return "bad 'lambda'";
        const auto& classes = rec.at("classes");
        const auto& f1 = rec.at("per_class_f1");
        const auto& norms = rec.at("weight_norms");
        if (!classes.is_array() || !f1.is_array() || !norms.is_array()) return "bad arrays";
        if (f1.size() != classes.size() || norms.size() != classes.size()) return "array lengths disagree";
        for (const auto& v : f1) {
            if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) return "bad per_class_f1 entry";
        }
        if (!rec.at("labels_histogram").is_object()) return "bad 'labels_histogram'";
        return "";
    }
    if (kind == "summary") {
        if (!rec.contains("phases") || !rec.at("phases").is_number_integer()) return "missing 'phases'";
        for (const char* key : {"avg_f1", "avg_map"}) {
            if (auto e = number_in(key, 0.0, 1.0); !e.empty()) return e;
        }
        if (!rec.contains("avg_fr")) return "missing 'avg_fr'";
        if (!rec.at("avg_fr").is_null() && !rec.at("avg_fr").is_number()) return "bad 'avg_fr'";
        return "";
    }
    return "unknown record kind '" + kind + "'";
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << content;
        if (!out) throw ConfigError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// --- commands ---------------------------------------------------------------------

int log_level() {
    const char* v = std::getenv("CIL_LOG_LEVEL");
    if (v == nullptr || *v == '\0') return 1;
    return std::atoi(v);
}

namespace {

template <typename Fn>
int guarded(const char* command, std::ostream& log, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        log << "cil " << command << ": configuration error: " << e.what() << "\n";
        return exit_validation;
    } catch (const ParseError& e) {
        log << "cil " << command << ": parse error: " << e.what() << "\n";
        return exit_validation;
    } catch (const NumericError& e) {
        log << "cil " << command << ": numeric error: " << e.what() << "\n";
        return exit_runtime;
    } catch (const std::exception& e) {
        log << "cil " << command << ": error: " << e.what() << "\n";
        return exit_runtime;
    }
}

BatchObserver epoch_logger(std::ostream& log, Strategy s) {
    if (log_level() < 2) return {};
    return [&log, s](const BatchLog& b) {
        if (b.batch != 0) return;
        log << "  [" << to_string(s) << "] phase " << b.phase << " epoch " << b.epoch
            << " lr " << b.lr << " loss " << b.loss.total << " (bce " << b.loss.bce << ", od "
            << b.loss.od << ", fd " << b.loss.fd << ")\n";
    };
}

std::string fmt(double v, int prec = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

}  // namespace

int cmd_gen_data(const ExperimentConfig& cfg, bool force, std::ostream& log) {
    return guarded("gen-data", log, [&] {
        const auto train_path = cfg.out / "train.dataset";
        const auto eval_path = cfg.out / "eval.dataset";
        if (!force && (std::filesystem::exists(train_path) || std::filesystem::exists(eval_path))) {
            throw ConfigError("refusing to overwrite " + train_path.string() +
                              " / " + eval_path.string() + " (use --force)");
        }
        const PlanSpec& p = cfg.plan;
        if (!p.classes && p.base + p.increment * p.increments > cfg.synth.n_classes) {
            throw ConfigError("plan needs " + std::to_string(p.base + p.increment * p.increments) +
                              " classes but the dataset has " + std::to_string(cfg.synth.n_classes));
        }
        auto [train, eval] = make_synthetic_split(cfg);
        build_plan(cfg, train.classes);
        write_file_atomic(train_path, dataset_to_string(train));
        write_file_atomic(eval_path, dataset_to_string(eval));
        if (log_level() >= 1) {
            log << "wrote " << train.examples.size() << " train clips to " << train_path.string()
                << " and " << eval.examples.size() << " eval clips to " << eval_path.string() << "\n";
        }
        return int{exit_ok};
    });
}

int cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
    return guarded("run", log, [&] {
        const ExperimentData d = prepare_data(cfg);
        RunOptions opt;
        opt.observer = epoch_logger(log, cfg.strategy);
        opt.view.drop_overlap = cfg.drop_overlap;
        const RunReport run = run_cil(d.train, d.eval, d.plan, cfg.strategy, cfg.train, opt);
        const auto path = cfg.out / ("results_" + std::string(to_string(cfg.strategy)) + ".jsonl");
        write_file_atomic(path, results_jsonl(run));
        write_file_atomic(cfg.out / "config.json", config_to_json(cfg).dump(2) + "\n");
        if (log_level() >= 1) {
            for (const auto& p : run.phases) {
                log << to_string(cfg.strategy) << " phase " << p.phase << ": F1 " << fmt(p.macro_f1)
                    << " mAP " << fmt(p.map);
                if (p.fr) log << " Fr " << fmt(*p.fr, 2);
                log << "\n";
            }
            log << "wrote " << path.string() << "\n";
        }
        return int{exit_ok};
    });
}

int cmd_compare(const ExperimentConfig& cfg, std::ostream& log) {
    return guarded("compare", log, [&] {
        if (cfg.strategies.size() < 2) throw ConfigError("compare needs at least 2 strategies");
        const ExperimentData d = prepare_data(cfg);
        const LearnerState base = train_base(d.train, d.plan, cfg.train);

        std::vector<std::future<RunReport>> jobs;
        for (Strategy s : cfg.strategies) {
            jobs.push_back(std::async(std::launch::async, [&, s] {
                RunOptions opt;
                opt.base_learner = &base;
                opt.view.drop_overlap = cfg.drop_overlap;
                return run_cil(d.train, d.eval, d.plan, s, cfg.train, opt);
            }));
        }
        std::vector<RunReport> runs;
        for (auto& j : jobs) runs.push_back(j.get());

        std::string table = "strategy\tphase\tmacro_f1\tfr\tmap\n";
        std::string norms = "strategy\tclass_index\tclass_id\tphase_introduced\tweight_norm\n";
        const auto final_classes = d.plan.classes_so_far(d.plan.phase_count() - 1);
        std::vector<int> introduced(final_classes.size());
        for (std::size_t p = 0, k = 0; p < d.plan.phase_count(); ++p) {
            for (std::size_t c = 0; c < d.plan.phases[p].size(); ++c) introduced[k++] = static_cast<int>(p);
        }
        for (const auto& run : runs) {
            const std::string name(to_string(run.strategy));
            write_file_atomic(cfg.out / ("results_" + name + ".jsonl"), results_jsonl(run));
            for (const auto& p : run.phases) {
                std::ostringstream row;
                row << std::setprecision(17) << name << '\t' << p.phase << '\t' << p.macro_f1 << '\t';
                if (p.fr) row << *p.fr; else row << "NA";
                row << '\t' << p.map << '\n';
                table += row.str();
            }
            const auto& last = run.phases.back();
            for (std::size_t k = 0; k < last.weight_norms.size(); ++k) {
                std::ostringstream row;
                row << std::setprecision(17) << name << '\t' << k << '\t' << last.classes[k] << '\t'
                    << introduced[k] << '\t' << last.weight_norms[k] << '\n';
                norms += row.str();
            }
        }
        write_file_atomic(cfg.out / "comparison.tsv", table);
        write_file_atomic(cfg.out / "weight_norms.tsv", norms);
        write_file_atomic(cfg.out / "config.json", config_to_json(cfg).dump(2) + "\n");

        if (log_level() >= 1) {
            log << std::left << std::setw(10) << "strategy" << std::setw(10) << "avg F1"
                << std::setw(10) << "avg mAP" << "avg Fr\n";
            for (const auto& run : runs) {
                log << std::left << std::setw(10) << to_string(run.strategy) << std::setw(10)
                    << fmt(run.summary.avg_f1) << std::setw(10) << fmt(run.summary.avg_map)
                    << (run.summary.avg_fr ? fmt(*run.summary.avg_fr, 2) : std::string("-")) << "\n";
            }
            log << "wrote " << (cfg.out / "comparison.tsv").string() << "\n";
        }
        return int{exit_ok};
    });
}

int cmd_gradcheck(std::ostream& log, const std::string& corrupt_item) {
    return guarded("gradcheck", log, [&] {
        GradCheckSuiteOptions opt;
        opt.corrupt_item = corrupt_item;
        const auto items = run_gradcheck_suite(opt);
        bool ok = true;
        for (const auto& it : items) {
            char line[160];
            std::snprintf(line, sizeof line, "%-22s worst rel. error %.3e  %s\n", it.name.c_str(),
                          it.worst_relative_error,
                          it.passed ? "PASS" : (it.finite ? "FAIL" : "FAIL (non-finite)"));
            log << line;
            ok = ok && it.passed;
        }
        log << items.size() << " items checked, tolerance " << opt.tolerance << ": "
            << (ok ? "all passed" : "FAILURES") << "\n";
        return ok ? int{exit_ok} : int{exit_runtime};
    });
}

}  // namespace cil
