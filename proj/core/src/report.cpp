#include "mcmil/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mcmil {

namespace {

std::string pct(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v * 100.0;
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string pad(const std::string& s, size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_cell(const MetricAggregate& a) {
  return pct(a.mean) + " ± " + pct(a.stddev) + " (" + pct(a.min) + "," + pct(a.max) + ")";
}

std::string format_experiment_table(
    const std::vector<std::pair<std::string, ExperimentResult>>& by_mode) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Training", "Test", "AUC (%)", "FPR (%)", "BACC (%)", "PREC (%)", "REC (%)",
                  "F1 (%)"});
  for (const auto& [mode, result] : by_mode) {
    for (const auto& target : result.targets) {
      std::vector<std::string> row = {mode, target.target};
      for (const auto& metric : metric_names()) {
        row.push_back(format_cell(target.by_metric.at(metric)));
      }
      rows.push_back(std::move(row));
    }
  }

  std::vector<size_t> widths(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      // The ± sign is a two-byte UTF-8 sequence; count display columns.
      size_t display = row[c].size();
      for (size_t i = 0; i + 1 < row[c].size(); ++i) {
        if (static_cast<unsigned char>(row[c][i]) == 0xc2 &&
            static_cast<unsigned char>(row[c][i + 1]) == 0xb1) {
          --display;
        }
      }
      widths[c] = std::max(widths[c], display);
    }
  }

  std::ostringstream os;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      size_t extra = 0;
      for (size_t i = 0; i + 1 < rows[r][c].size(); ++i) {
        if (static_cast<unsigned char>(rows[r][c][i]) == 0xc2 &&
            static_cast<unsigned char>(rows[r][c][i + 1]) == 0xb1) {
          ++extra;
        }
      }
      os << pad(rows[r][c], widths[c] + extra);
      if (c + 1 < rows[r].size()) os << "  ";
    }
    os << '\n';
    if (r == 0) {
      size_t total = 0;
      for (size_t w : widths) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

void write_experiment_csv(const std::string& path,
                          const std::vector<std::pair<std::string, ExperimentResult>>& by_mode) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "mode,target,metric,mean,std,min,max\n";
  for (const auto& [mode, result] : by_mode) {
    for (const auto& target : result.targets) {
      for (const auto& metric : metric_names()) {
        const auto& a = target.by_metric.at(metric);
        out << mode << ',' << target.target << ',' << metric << ',' << num(a.mean) << ','
            << num(a.stddev) << ',' << num(a.min) << ',' << num(a.max) << '\n';
      }
    }
  }
}

void write_metrics_csv(const std::string& path, const std::vector<EvalTarget>& targets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "target,auc,fpr,bacc,prec,rec,f1,threshold,degenerate\n";
  for (const auto& t : targets) {
    const auto& r = t.report;
    out << t.name << ',' << num(r.auc) << ',' << num(r.fpr) << ',' << num(r.bacc) << ','
        << num(r.prec) << ',' << num(r.rec) << ',' << num(r.f1) << ',' << num(r.threshold) << ','
        << (r.degenerate ? 1 : 0) << '\n';
  }
}

std::string format_metrics_table(const std::vector<EvalTarget>& targets) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Test", "AUC (%)", "FPR (%)", "BACC (%)", "PREC (%)", "REC (%)", "F1 (%)"});
  for (const auto& t : targets) {
    const auto& r = t.report;
    rows.push_back({t.name, pct(r.auc), pct(r.fpr), pct(r.bacc), pct(r.prec), pct(r.rec),
                    pct(r.f1)});
  }
  std::vector<size_t> widths(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream os;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      os << pad(rows[r][c], widths[c]);
      if (c + 1 < rows[r].size()) os << "  ";
    }
    os << '\n';
    if (r == 0) {
      size_t total = 0;
      for (size_t w : widths) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

void write_trace_csv(const std::string& path, const TrainTrace& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration,total,hinge,smoothness,sparsity,weight_decay,test_auc\n";
  size_t cp = 0;
  for (size_t i = 0; i < trace.total_loss.size(); ++i) {
    out << i << ',' << num(trace.total_loss[i]);
    if (cp < trace.checkpoints.size() &&
        trace.checkpoints[cp].iteration == static_cast<int>(i)) {
      const auto& b = trace.checkpoints[cp].breakdown;
      out << ',' << num(b.hinge) << ',' << num(b.smoothness) << ',' << num(b.sparsity) << ','
          << num(b.weight_decay) << ',';
      if (trace.checkpoints[cp].test_auc.has_value()) out << num(*trace.checkpoints[cp].test_auc);
      ++cp;
    } else {
      out << ",,,,,";
    }
    out << '\n';
  }
}

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : points) {
    if (std::isinf(p.threshold)) {
      out << "inf";
    } else {
      out << num(p.threshold);
    }
    out << ',' << num(p.fpr) << ',' << num(p.tpr) << '\n';
  }
}

void write_roc_svg(const std::string& path, const std::vector<RocPoint>& points) {
  constexpr int kSize = 800;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << " " << kSize << "\">\n";
  out << "  <rect width=\"" << kSize << "\" height=\"" << kSize << "\" fill=\"white\"/>\n";
  // axes and the chance diagonal
  out << "  <line x1=\"0\" y1=\"" << kSize << "\" x2=\"" << kSize << "\" y2=\"" << kSize
      << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"" << kSize << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"0\" y1=\"" << kSize << "\" x2=\"" << kSize
      << "\" y2=\"0\" stroke=\"#bbbbbb\" stroke-dasharray=\"8,8\"/>\n";
  out << "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"";
  std::ostringstream pts;
  pts << std::fixed << std::setprecision(2);
  for (const auto& p : points) {
    pts << p.fpr * kSize << ',' << (1.0 - p.tpr) * kSize << ' ';
  }
  std::string s = pts.str();
  if (!s.empty()) s.pop_back();
  out << s << "\"/>\n</svg>\n";
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> row;
    size_t pos = 0;
    while (true) {
      const size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        row.push_back(line.substr(pos));
        break;
      }
      row.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mcmil
