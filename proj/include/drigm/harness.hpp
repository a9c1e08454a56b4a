#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drigm/envs.hpp"
#include "drigm/training.hpp"

namespace drigm {

/// Declarative multi-seed experiment: train on one env, evaluate on shifts.
struct ExperimentConfig {
    int schema_version = 1;
    std::string name = "experiment";
    EnvSpec train_env;
    std::vector<EnvSpec> eval_envs;
    TrainConfig train;
    std::vector<std::uint64_t> seeds;
    /// When nonempty, expands into one run per rho value per seed; rho = 0
    /// degrades to the non-robust variant exactly.
    std::vector<double> rho_sweep;
    std::string output_dir = "runs";

    void validate() const;
};

/// Strict JSON parsing: unknown keys are rejected with their field path.
ExperimentConfig experiment_from_json(const std::string& text);
std::string experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment(const std::string& path);

std::string envspec_to_string(const EnvSpec&);

struct RunOutput {
    std::string run_id;
    RunRecord record;
};

/// Expansion rule: one (run_id, TrainConfig) per seed and per sweep point.
std::vector<std::pair<std::string, TrainConfig>> expand_runs(const ExperimentConfig& cfg);

/// Runs every expanded config, in parallel workers; each worker writes its
/// own record file under output_dir before returning.
std::vector<RunOutput> run_experiment(const ExperimentConfig& cfg, int workers = 0);

void write_run(const std::string& dir, const RunOutput& run);
std::vector<RunOutput> load_runs(const std::string& dir);

/// Aggregated metrics across seeds for one (group, env, checkpoint) cell.
/// The standard error is computed over seeds, never over episodes.
struct AggregateRow {
    std::string group;  // algorithm/uncertainty/rho triple
    std::string env;
    long step = 0;
    double mean_return = 0.0;
    double stderr_return = 0.0;
    int n_seeds = 0;
    double rho = 0.0;
    std::string algorithm;
    std::string uncertainty;
};

std::vector<AggregateRow> aggregate(const std::vector<RunOutput>& runs);

/// Canonical CSV with columns run_id, env, seed, checkpoint_step,
/// mean_return, stderr_return, rho, algorithm, uncertainty. Per-seed rows
/// leave stderr empty; aggregate rows leave seed empty.
void write_metrics_csv(const std::string& path, const std::vector<RunOutput>& runs,
                       const std::vector<AggregateRow>& aggregates);

struct SweepPoint {
    double rho = 0.0;
    double mean_final = 0.0;
    double stderr_final = 0.0;
    int n_seeds = 0;
    double improvement = 0.0;  // vs the rho = 0 / non-robust point
};

/// Final shifted-env return against rho, with improvement over the
/// non-robust baseline point.
std::vector<SweepPoint> sweep_curve(const std::vector<RunOutput>& runs,
                                    const std::string& eval_env);
void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& points,
                     const std::string& eval_env);

/// Minimal polyline chart.
struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
void write_svg_lines(const std::string& path, const std::string& title,
                     const std::vector<Series>& series);

/// Learning-curve SVG per eval env plus a robustness-gain summary
/// (robust mean minus non-robust mean per shift). Returns written paths.
std::vector<std::string> write_plots(const std::string& dir,
                                     const std::vector<RunOutput>& runs);

/// Resolves a possibly relative output dir against the DRIGM_OUT_ROOT
/// environment variable when it is set.
std::string resolve_output_dir(const std::string& dir);

}  // namespace drigm
