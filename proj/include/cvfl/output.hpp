#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cvfl/error.hpp"
#include "cvfl/model.hpp"
#include "cvfl/simulation.hpp"

namespace cvfl {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Columns: t, main_acc, subtask_rate, train_loss, attack_active,
// acc_0..acc_{C-1}, then r_i,c_i for each sub-model slot.
class MetricsCsvWriter {
 public:
  MetricsCsvWriter(std::ostream& out, int num_classes, int submodel_slots)
      : out_(out), classes_(num_classes), slots_(submodel_slots) {}

  void header() {
    out_ << "t,main_acc,subtask_rate,train_loss,attack_active";
    for (int c = 0; c < classes_; ++c) out_ << ",acc_" << c;
    for (int i = 0; i < slots_; ++i) out_ << ",r_" << i << ",c_" << i;
    out_ << '\n';
    out_.flush();
  }

  void row(const MetricsRecord& rec) {
    out_ << rec.t << ',' << format_double(rec.main_task_accuracy) << ','
         << (rec.subtask_success ? format_double(*rec.subtask_success) : std::string("nan")) << ','
         << format_double(rec.train_loss) << ',' << (rec.attack_active ? 1 : 0);
    for (int c = 0; c < classes_; ++c) {
      const auto& a = rec.class_accuracy.at(static_cast<std::size_t>(c));
      out_ << ',' << (a ? format_double(*a) : std::string("nan"));
    }
    for (int i = 0; i < slots_; ++i) {
      if (static_cast<std::size_t>(i) < rec.submodels.size()) {
        const auto& s = rec.submodels[static_cast<std::size_t>(i)];
        out_ << ',' << s.r << ',' << format_double(s.c);
      } else {
        out_ << ",,";
      }
    }
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ostream& out_;
  int classes_;
  int slots_;
};

class DetectionCsvWriter {
 public:
  explicit DetectionCsvWriter(std::ostream& out) : out_(out) {}

  void header() {
    out_ << "t,submodel,members,poisoned,r,c,flagged_classes,evaluators\n";
    out_.flush();
  }

  void rows(const MetricsRecord& rec) {
    for (const auto& s : rec.submodels) {
      out_ << rec.t << ',' << s.id << ',' << bracketed(s.members, [](ClientId c) { return std::to_string(c.value); })
           << ',' << (s.poisoned ? 1 : 0) << ',' << s.r << ',' << format_double(s.c) << ','
           << bracketed(s.flagged_classes, [](int c) { return std::to_string(c); }) << ','
           << bracketed(s.evaluators, [](ClientId c) { return std::to_string(c.value); }) << '\n';
    }
    out_.flush();
  }

 private:
  std::ostream& out_;
};

// Model file: text header lines terminated by "end\n", then dim() float64
// values, little-endian.
inline void write_model(std::ostream& out, const ModelSpec& spec, const ParameterVector& params) {
  if (params.dim() != spec.parameter_count()) throw InputError("parameter count does not match the model spec");
  out << "cvfl-model 1\n"
      << "kind " << to_string(spec.kind) << '\n'
      << "input_dim " << spec.input_dim << '\n'
      << "num_classes " << spec.num_classes << '\n'
      << "hidden_dim " << spec.hidden_dim << '\n'
      << "count " << params.dim() << '\n'
      << "end\n";
  for (double v : params) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
      bytes[i] = static_cast<char>(bits & 0xffu);
      bits >>= 8;
    }
    out.write(bytes, 8);
  }
  if (!out) throw std::runtime_error("failed writing model file");
}

struct LoadedModel {
  ModelSpec spec;
  ParameterVector params;
};

inline LoadedModel read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "cvfl-model 1") throw FormatError("not a cvfl model file", 0);
  LoadedModel m;
  std::size_t count = 0;
  while (std::getline(in, line) && line != "end") {
    std::istringstream kv(line);
    std::string key, value;
    kv >> key >> value;
    if (key == "kind") {
      if (value == "softmax-linear") m.spec.kind = ModelKind::softmax_linear;
      else if (value == "mlp-1hidden") m.spec.kind = ModelKind::mlp_1hidden;
      else throw FormatError("unknown model kind '" + value + "'", static_cast<std::size_t>(in.tellg()));
    } else if (key == "input_dim") {
      m.spec.input_dim = std::stoi(value);
    } else if (key == "num_classes") {
      m.spec.num_classes = std::stoi(value);
    } else if (key == "hidden_dim") {
      m.spec.hidden_dim = std::stoi(value);
    } else if (key == "count") {
      count = std::stoull(value);
    } else {
      throw FormatError("unknown model header key '" + key + "'", static_cast<std::size_t>(in.tellg()));
    }
  }
  if (line != "end") throw FormatError("model header is not terminated", static_cast<std::size_t>(in.gcount()));
  m.spec.validate();
  if (count != m.spec.parameter_count()) throw FormatError("count does not match the model spec", 0);
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto offset = static_cast<std::size_t>(in.tellg());
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw FormatError("model file truncated", offset);
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[b];
    values[i] = std::bit_cast<double>(bits);
  }
  m.params = ParameterVector(std::move(values));
  return m;
}

inline void write_model_file(const std::filesystem::path& path, const ModelSpec& spec, const ParameterVector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  write_model(out, spec, params);
}

inline LoadedModel read_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_model(in);
}

// Sub-model slots in the metrics CSV: d for IID delegation, the smallest
// class coverage over the population (clamped to K) for non-IID.
inline int submodel_slots(const Scenario& sc) {
  const auto& cfg = sc.config;
  if (!cfg.defense.enabled) return 0;
  if (cfg.defense.delegation == DelegationMode::iid) return cfg.per_round / cfg.iid_u();
  std::vector<ClassPresenceVector> presence;
  for (const auto& c : sc.clients) presence.push_back(presence_of(c.id, c.data, cfg.defense.presence_threshold));
  const auto coverage = class_coverage(presence);
  int low = cfg.per_round;
  for (int n : coverage) low = std::min(low, n);
  return std::max(low, 1);
}

struct ExperimentPaths {
  std::filesystem::path metrics, detections, model, timing;
};

inline ExperimentPaths experiment_paths(const std::filesystem::path& out_dir) {
  return {out_dir / "metrics.csv", out_dir / "detections.csv", out_dir / "model.bin", out_dir / "timing.csv"};
}

// Runs one configured experiment and writes its outputs to out_dir. Rows are
// flushed as rounds complete, so a failed run leaves a partial CSV behind.
inline TrainingResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const Scenario sc = build_scenario(cfg);
  const auto paths = experiment_paths(out_dir);
  const Mode mode = cfg.defense.enabled ? Mode::defended : Mode::fedavg_baseline;

  std::ofstream metrics(paths.metrics);
  std::ofstream timing(paths.timing);
  if (!metrics || !timing) throw std::runtime_error("cannot write to " + out_dir.string());
  MetricsCsvWriter mw(metrics, sc.spec.num_classes, submodel_slots(sc));
  mw.header();
  timing << "t,wall_ms\n";

  std::ofstream detections;
  std::optional<DetectionCsvWriter> dw;
  if (mode == Mode::defended) {
    detections.open(paths.detections);
    if (!detections) throw std::runtime_error("cannot write " + paths.detections.string());
    dw.emplace(detections);
    dw->header();
  }

  auto result = run_training(sc, mode, [&](const MetricsRecord& rec) {
    mw.row(rec);
    if (dw) dw->rows(rec);
    timing << rec.t << ',' << format_double(rec.wall_time_ms) << '\n';
  });
  write_model_file(paths.model, sc.spec, result.final_model);
  return result;
}

}  // namespace cvfl
