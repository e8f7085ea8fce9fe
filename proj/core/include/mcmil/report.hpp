#pragma once

#include <string>
#include <vector>

#include "mcmil/eval.hpp"
#include "mcmil/trainer.hpp"

namespace mcmil {

/// "mean ± std (min,max)" with metrics rendered as percentages.
std::string format_cell(const MetricAggregate& a);

/// Aligned-column text table: one row per (mode, target), six metric columns.
std::string format_experiment_table(
    const std::vector<std::pair<std::string, ExperimentResult>>& by_mode);

/// Long-form CSV: mode,target,metric,mean,std,min,max (fractions, not %).
void write_experiment_csv(const std::string& path,
                          const std::vector<std::pair<std::string, ExperimentResult>>& by_mode);

/// Per-target metrics CSV: target,auc,fpr,bacc,prec,rec,f1,threshold,degenerate.
void write_metrics_csv(const std::string& path, const std::vector<EvalTarget>& targets);
std::string format_metrics_table(const std::vector<EvalTarget>& targets);

/// Training trace CSV: iteration,total plus component columns at checkpoints.
void write_trace_csv(const std::string& path, const TrainTrace& trace);

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points);

/// Standalone 800x800 SVG polyline of the ROC curve, axes spanning [0, 1].
void write_roc_svg(const std::string& path, const std::vector<RocPoint>& points);

/// Minimal CSV reader for the formats written above (no quoting).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace mcmil
