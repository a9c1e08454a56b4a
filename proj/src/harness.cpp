#include "drigm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace drigm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key))
            throw std::invalid_argument("unknown key '" + where + "." + key + "' in config");
    }
}

Perturbation perturbation_from_json(const json& j, const std::string& where) {
    require_keys(j, {"kind", "rho_test", "sigma", "seed", "direction"}, where);
    Perturbation p;
    p.kind = j.at("kind").get<std::string>();
    p.rho_test = j.value("rho_test", 0.0);
    p.sigma = j.value("sigma", 0.0);
    p.seed = j.value("seed", std::uint64_t{0});
    p.direction = j.value("direction", "random");
    return p;
}

json perturbation_to_json(const Perturbation& p) {
    return {{"kind", p.kind},
            {"rho_test", p.rho_test},
            {"sigma", p.sigma},
            {"seed", p.seed},
            {"direction", p.direction}};
}

EnvSpec envspec_from_json(const json& j, const std::string& where) {
    require_keys(j,
                 {"kind", "seed", "n_states", "n_agents", "actions", "gamma", "size",
                  "horizon", "p_slip", "p_fail", "perturbation"},
                 where);
    EnvSpec s;
    s.kind = j.at("kind").get<std::string>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.n_states = j.value("n_states", 5);
    s.n_agents = j.value("n_agents", 2);
    s.actions = j.value("actions", 2);
    s.gamma = j.value("gamma", 0.9);
    s.size = j.value("size", 5);
    s.horizon = j.value("horizon", 50);
    s.p_slip = j.value("p_slip", 0.1);
    s.p_fail = j.value("p_fail", 0.05);
    if (j.contains("perturbation") && !j.at("perturbation").is_null())
        s.perturbation = perturbation_from_json(j.at("perturbation"), where + ".perturbation");
    return s;
}

json envspec_to_json(const EnvSpec& s) {
    json j = {{"kind", s.kind},     {"seed", s.seed},       {"n_states", s.n_states},
              {"n_agents", s.n_agents}, {"actions", s.actions}, {"gamma", s.gamma},
              {"size", s.size},     {"horizon", s.horizon}, {"p_slip", s.p_slip},
              {"p_fail", s.p_fail}};
    if (s.perturbation) j["perturbation"] = perturbation_to_json(*s.perturbation);
    return j;
}

TrainConfig train_from_json(const json& j, const std::string& where) {
    require_keys(j,
                 {"algorithm", "uncertainty", "rho", "gamma", "episodes", "horizon",
                  "batch_size", "buffer_capacity", "target_sync", "update_period",
                  "min_buffer", "lr_agents", "lr_aux", "window", "hidden", "mix_embed",
                  "eps_start", "eps_end", "eps_anneal_steps", "eval_every", "eval_episodes",
                  "seed"},
                 where);
    TrainConfig c;
    c.algorithm = j.value("algorithm", c.algorithm);
    c.uncertainty = j.value("uncertainty", c.uncertainty);
    c.rho = j.value("rho", c.rho);
    c.gamma = j.value("gamma", c.gamma);
    c.episodes = j.value("episodes", c.episodes);
    c.horizon = j.value("horizon", c.horizon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    c.target_sync = j.value("target_sync", c.target_sync);
    c.update_period = j.value("update_period", c.update_period);
    c.min_buffer = j.value("min_buffer", c.min_buffer);
    c.lr_agents = j.value("lr_agents", c.lr_agents);
    c.lr_aux = j.value("lr_aux", c.lr_aux);
    c.window = j.value("window", c.window);
    c.hidden = j.value("hidden", c.hidden);
    c.mix_embed = j.value("mix_embed", c.mix_embed);
    c.eps_start = j.value("eps_start", c.eps_start);
    c.eps_end = j.value("eps_end", c.eps_end);
    c.eps_anneal_steps = j.value("eps_anneal_steps", c.eps_anneal_steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.seed = j.value("seed", c.seed);
    return c;
}

json train_to_json(const TrainConfig& c) {
    return {{"algorithm", c.algorithm},
            {"uncertainty", c.uncertainty},
            {"rho", c.rho},
            {"gamma", c.gamma},
            {"episodes", c.episodes},
            {"horizon", c.horizon},
            {"batch_size", c.batch_size},
            {"buffer_capacity", c.buffer_capacity},
            {"target_sync", c.target_sync},
            {"update_period", c.update_period},
            {"min_buffer", c.min_buffer},
            {"lr_agents", c.lr_agents},
            {"lr_aux", c.lr_aux},
            {"window", c.window},
            {"hidden", c.hidden},
            {"mix_embed", c.mix_embed},
            {"eps_start", c.eps_start},
            {"eps_end", c.eps_end},
            {"eps_anneal_steps", c.eps_anneal_steps},
            {"eval_every", c.eval_every},
            {"eval_episodes", c.eval_episodes},
            {"seed", c.seed}};
}

std::string format_rho(double rho) {
    std::ostringstream os;
    os << rho;
    std::string s = os.str();
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += "\"";
    return out;
}

double mean_of(const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    return xs.empty() ? 0.0 : m / xs.size();
}

double stderr_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / (xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
}

std::string group_of(const RunRecord& r) {
    std::ostringstream os;
    os << r.config.algorithm << "/" << r.config.uncertainty;
    if (r.config.uncertainty != "none") os << "/rho=" << r.config.rho;
    return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
    if (eval_envs.empty()) throw std::invalid_argument("experiment needs at least one eval env");
    train.validate();
    for (double r : rho_sweep)
        if (r < 0.0 || r > 1.0) throw std::invalid_argument("sweep rho must lie in [0,1]");
}

ExperimentConfig experiment_from_json(const std::string& text) {
    const json j = json::parse(text);
    require_keys(j,
                 {"schema_version", "name", "train_env", "eval_envs", "train", "seeds",
                  "rho_sweep", "output_dir"},
                 "experiment");
    ExperimentConfig cfg;
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1)
        throw std::invalid_argument("unsupported experiment schema_version");
    cfg.name = j.value("name", cfg.name);
    cfg.train_env = envspec_from_json(j.at("train_env"), "train_env");
    int i = 0;
    for (const auto& e : j.at("eval_envs"))
        cfg.eval_envs.push_back(envspec_from_json(e, "eval_envs[" + std::to_string(i++) + "]"));
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"), "train");
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("rho_sweep")) cfg.rho_sweep = j.at("rho_sweep").get<std::vector<double>>();
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.validate();
    return cfg;
}

std::string experiment_to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["name"] = cfg.name;
    j["train_env"] = envspec_to_json(cfg.train_env);
    json evs = json::array();
    for (const auto& e : cfg.eval_envs) evs.push_back(envspec_to_json(e));
    j["eval_envs"] = std::move(evs);
    j["train"] = train_to_json(cfg.train);
    j["seeds"] = cfg.seeds;
    j["rho_sweep"] = cfg.rho_sweep;
    j["output_dir"] = cfg.output_dir;
    return j.dump(2);
}

ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return experiment_from_json(ss.str());
}

std::string envspec_to_string(const EnvSpec& s) { return envspec_to_json(s).dump(); }

std::vector<std::pair<std::string, TrainConfig>> expand_runs(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, TrainConfig>> out;
    std::vector<double> rhos = cfg.rho_sweep;
    if (rhos.empty()) rhos.push_back(cfg.train.rho);
    for (double rho : rhos) {
        for (std::uint64_t seed : cfg.seeds) {
            TrainConfig c = cfg.train;
            c.seed = seed;
            c.rho = rho;
            // rho = 0 is exactly the non-robust run: same code path, same
            // rng stream, so a sweep's zero point reproduces the baseline.
            if (rho == 0.0) c.uncertainty = "none";
            std::ostringstream id;
            id << cfg.name << "_" << c.algorithm << "_" << c.uncertainty;
            if (c.uncertainty != "none") id << "_rho" << format_rho(rho);
            id << "_seed" << seed;
            out.emplace_back(id.str(), c);
        }
    }
    return out;
}

std::vector<RunOutput> run_experiment(const ExperimentConfig& cfg, int workers) {
    cfg.validate();
    const std::string out_dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(out_dir);

    const SimEnv train_env = make_env(cfg.train_env);
    std::vector<SimEnv> eval_envs;
    for (const auto& e : cfg.eval_envs) eval_envs.push_back(make_env(e));

    const auto runs = expand_runs(cfg);
    if (workers <= 0)
        workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    workers = std::min<int>(workers, static_cast<int>(runs.size()));

    std::vector<RunOutput> outputs(runs.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= runs.size()) return;
            RunOutput out;
            out.run_id = runs[i].first;
            out.record =
                train_run(runs[i].second, train_env, eval_envs, out_dir + "/" + out.run_id);
            write_run(out_dir, out);
            outputs[i] = std::move(out);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return outputs;
}

void write_run(const std::string& dir, const RunOutput& run) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/" + run.run_id + ".run.json");
    if (!out) throw std::runtime_error("cannot write run record for " + run.run_id);
    out << run.record.to_json() << "\n";
}

std::vector<RunOutput> load_runs(const std::string& dir) {
    std::vector<RunOutput> out;
    if (!fs::exists(dir)) throw std::invalid_argument("no such run directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 9 && name.substr(name.size() - 9) == ".run.json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        RunOutput r;
        r.run_id = p.filename().string();
        r.run_id.resize(r.run_id.size() - 9);
        r.record = RunRecord::from_json(ss.str());
        out.push_back(std::move(r));
    }
    if (out.empty()) throw std::invalid_argument("no run records found in " + dir);
    return out;
}

std::vector<AggregateRow> aggregate(const std::vector<RunOutput>& runs) {
    // (group, env, step) -> per-seed final returns
    std::map<std::tuple<std::string, std::string, long>, std::vector<double>> cells;
    std::map<std::string, const RunRecord*> group_sample;
    for (const RunOutput& r : runs) {
        const std::string g = group_of(r.record);
        group_sample[g] = &r.record;
        for (const CheckpointMetrics& c : r.record.checkpoints) {
            cells[{g, r.record.train_env, c.step}].push_back(c.train_return);
            for (const auto& [env, ret] : c.eval_returns) cells[{g, env, c.step}].push_back(ret);
        }
    }
    std::vector<AggregateRow> rows;
    for (const auto& [key, values] : cells) {
        AggregateRow row;
        row.group = std::get<0>(key);
        row.env = std::get<1>(key);
        row.step = std::get<2>(key);
        row.mean_return = mean_of(values);
        row.stderr_return = stderr_of(values);
        row.n_seeds = static_cast<int>(values.size());
        const RunRecord* sample = group_sample[row.group];
        row.rho = sample->config.uncertainty == "none" ? 0.0 : sample->config.rho;
        row.algorithm = sample->config.algorithm;
        row.uncertainty = sample->config.uncertainty;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<RunOutput>& runs,
                       const std::vector<AggregateRow>& aggregates) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "run_id,env,seed,checkpoint_step,mean_return,stderr_return,rho,algorithm,"
           "uncertainty\n";
    out.precision(12);
    for (const RunOutput& r : runs) {
        const TrainConfig& c = r.record.config;
        const double rho = c.uncertainty == "none" ? 0.0 : c.rho;
        for (const CheckpointMetrics& m : r.record.checkpoints) {
            auto emit = [&](const std::string& env, double ret) {
                out << csv_quote(r.run_id) << "," << csv_quote(env) << "," << c.seed << ","
                    << m.step << "," << ret << ",," << rho << "," << c.algorithm << ","
                    << c.uncertainty << "\n";
            };
            emit(r.record.train_env, m.train_return);
            for (const auto& [env, ret] : m.eval_returns) emit(env, ret);
        }
    }
    for (const AggregateRow& a : aggregates) {
        out << csv_quote(a.group) << "," << csv_quote(a.env) << ",," << a.step << ","
            << a.mean_return << "," << a.stderr_return << "," << a.rho << "," << a.algorithm
            << "," << a.uncertainty << "\n";
    }
}

std::vector<SweepPoint> sweep_curve(const std::vector<RunOutput>& runs,
                                    const std::string& eval_env) {
    std::map<double, std::vector<double>> by_rho;
    for (const RunOutput& r : runs) {
        const auto it = r.record.final_eval_returns.find(eval_env);
        if (it == r.record.final_eval_returns.end()) continue;
        const double rho =
            r.record.config.uncertainty == "none" ? 0.0 : r.record.config.rho;
        by_rho[rho].push_back(it->second);
    }
    if (by_rho.empty())
        throw std::invalid_argument("no run evaluates env '" + eval_env + "'");
    std::vector<SweepPoint> points;
    for (const auto& [rho, values] : by_rho) {
        SweepPoint p;
        p.rho = rho;
        p.mean_final = mean_of(values);
        p.stderr_final = stderr_of(values);
        p.n_seeds = static_cast<int>(values.size());
        points.push_back(p);
    }
    // improvement is measured against the smallest-rho point (rho = 0 when
    // the sweep includes the non-robust baseline)
    const double base = points.front().mean_final;
    for (SweepPoint& p : points) p.improvement = p.mean_final - base;
    return points;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& points,
                     const std::string& eval_env) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "rho,env,mean_final_return,stderr_final_return,n_seeds,improvement_vs_rho0\n";
    out.precision(12);
    for (const SweepPoint& p : points)
        out << p.rho << "," << csv_quote(eval_env) << "," << p.mean_final << ","
            << p.stderr_final << "," << p.n_seeds << "," << p.improvement << "\n";
}

void write_svg_lines(const std::string& path, const std::string& title,
                     const std::vector<Series>& series) {
    const int W = 720, H = 440, ML = 70, MR = 180, MT = 40, MB = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series) {
        for (double x : s.x) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
        for (double y : s.y) {
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
    }
    if (ymin > ymax) {
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                             "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(8);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
        << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
        << "</text>\n";
    // axes
    out << "<line x1='" << ML << "' y1='" << H - MB << "' x2='" << W - MR << "' y2='"
        << H - MB << "' stroke='black'/>\n";
    out << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='" << H - MB
        << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x='" << px(xv) << "' y='" << H - MB + 18
            << "' text-anchor='middle' font-size='11'>" << xv << "</text>\n";
        out << "<text x='" << ML - 8 << "' y='" << py(yv) + 4
            << "' text-anchor='end' font-size='11'>" << yv << "</text>\n";
    }
    int idx = 0;
    for (const Series& s : series) {
        const char* color = palette[idx % 8];
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.6' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << px(s.x[i]) << "," << py(s.y[i]) << " ";
        out << "'/>\n";
        out << "<text x='" << W - MR + 10 << "' y='" << MT + 16 * idx + 10
            << "' font-size='11' fill='" << color << "'>" << s.label << "</text>\n";
        ++idx;
    }
    out << "</svg>\n";
}

std::vector<std::string> write_plots(const std::string& dir,
                                     const std::vector<RunOutput>& runs) {
    fs::create_directories(dir);
    std::vector<std::string> written;
    const std::vector<AggregateRow> rows = aggregate(runs);

    std::set<std::string> envs;
    for (const AggregateRow& r : rows) envs.insert(r.env);

    int fig = 0;
    for (const std::string& env : envs) {
        std::map<std::string, Series> per_group;
        for (const AggregateRow& r : rows) {
            if (r.env != env) continue;
            Series& s = per_group[r.group];
            s.label = r.group;
            s.x.push_back(static_cast<double>(r.step));
            s.y.push_back(r.mean_return);
        }
        std::vector<Series> series;
        for (auto& [g, s] : per_group) series.push_back(std::move(s));
        std::ostringstream path;
        path << dir << "/plot_returns_" << fig++ << ".svg";
        write_svg_lines(path.str(), "mean return on " + env, series);
        written.push_back(path.str());
    }

    // robustness gain: robust minus non-robust final mean, per env and algorithm
    std::map<std::pair<std::string, std::string>, double> final_mean;  // (group, env)
    std::map<std::string, std::pair<std::string, std::string>> group_info;
    for (const AggregateRow& r : rows) {
        final_mean[{r.group, r.env}] = r.mean_return;  // rows sorted by step; last write wins
        group_info[r.group] = {r.algorithm, r.uncertainty};
    }
    std::vector<Series> gain_series;
    std::ofstream gain_csv(dir + "/robustness_gain.csv");
    gain_csv << "algorithm,uncertainty,env,robust_mean,nonrobust_mean,gain\n";
    gain_csv.precision(12);
    for (const auto& [group, info] : group_info) {
        const auto& [alg, unc] = info;
        if (unc == "none") continue;
        const std::string base_group = alg + "/none";
        Series s;
        s.label = group + " - " + base_group;
        int env_idx = 0;
        for (const std::string& env : envs) {
            auto rit = final_mean.find({group, env});
            auto bit = final_mean.find({base_group, env});
            if (rit == final_mean.end() || bit == final_mean.end()) continue;
            const double gain = rit->second - bit->second;
            gain_csv << alg << "," << unc << "," << csv_quote(env) << "," << rit->second
                     << "," << bit->second << "," << gain << "\n";
            s.x.push_back(env_idx++);
            s.y.push_back(gain);
        }
        if (!s.x.empty()) gain_series.push_back(std::move(s));
    }
    written.push_back(dir + "/robustness_gain.csv");
    if (!gain_series.empty()) {
        write_svg_lines(dir + "/plot_gain.svg", "robustness gain per shift (env index)",
                        gain_series);
        written.push_back(dir + "/plot_gain.svg");
    }
    return written;
}

std::string resolve_output_dir(const std::string& dir) {
    const char* root = std::getenv("DRIGM_OUT_ROOT");
    if (!root || dir.empty() || fs::path(dir).is_absolute()) return dir;
    return (fs::path(root) / dir).string();
}

}  // namespace drigm
