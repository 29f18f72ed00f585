#include "matvl/instruct_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace matvl::instruct {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

struct TaskShape {
  std::size_t reals;
  bool trailing_bool;
};

TaskShape shape(Task task) {
  return task == Task::crack ? TaskShape{1, true} : TaskShape{3, false};
}

bool matches_shape(const std::vector<AnswerValue>& values, Task task) {
  const TaskShape s = shape(task);
  if (values.size() != s.reals + (s.trailing_bool ? 1 : 0)) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const bool want_bool = i >= s.reals;
    if (std::holds_alternative<bool>(values[i]) != want_bool) return false;
  }
  return true;
}

std::vector<std::string> component_names(Task task) {
  switch (task) {
    case Task::stress: return {"stress_stdev", "stress_mean", "stress_median"};
    case Task::energy:
      return {"energy_peratom_std_dev", "energy_peratom_mean", "energy_peratom_median"};
    case Task::crack: return {"damage"};
  }
  return {};
}

}  // namespace

FieldStats field_statistics(const std::vector<double>& values, StdConvention convention) {
  if (values.empty()) throw Error("stats.empty", "field statistics need at least one value");
  const double n = static_cast<double>(values.size());
  double sum = 0;
  for (double v : values) sum += v;
  FieldStats out;
  out.mean = sum / n;
  double ss = 0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  if (convention == StdConvention::sample)
    out.std_dev = values.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  else
    out.std_dev = std::sqrt(ss / n);

  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  out.median = sorted.size() % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
  return out;
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::stress: return "stress";
    case Task::energy: return "energy";
    case Task::crack: return "crack";
  }
  return "unknown";
}

std::optional<Task> parse_task(std::string_view name) {
  for (Task t : {Task::stress, Task::energy, Task::crack})
    if (to_string(t) == name) return t;
  return std::nullopt;
}

std::string_view instruction_text(Task task) {
  switch (task) {
    case Task::stress:
      return "CalculateVonMisesStressStatistics <stress_stdev, stress_mean, stress_median>";
    case Task::energy:
      return "CalculatePotentialEnergyStatistics <energy_peratom_std_dev, energy_peratom_mean, "
             "energy_peratom_median>";
    case Task::crack: return "CalculateCrackDynamics <damage, initiate>";
  }
  return {};
}

std::string render_answer(const AnswerVector& answer) {
  std::string out = "[";
  for (std::size_t i = 0; i < answer.values.size(); ++i) {
    if (i) out += ", ";
    if (const bool* b = std::get_if<bool>(&answer.values[i])) {
      out += *b ? "True" : "False";
    } else {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f", std::get<double>(answer.values[i]));
      std::string_view s = buf;
      if (s == "-0.000") s = "0.000";
      out += s;
    }
  }
  return out + "]";
}

InstructionRecord build_instruction(Task task, const std::vector<AnswerValue>& payload,
                                    std::string image_ref) {
  if (!matches_shape(payload, task))
    throw Error("instruct.arity", std::string(to_string(task)) + " answers need " +
                                      (task == Task::crack ? "(real, boolean)" : "three reals"));
  for (const AnswerValue& v : payload)
    if (const double* d = std::get_if<double>(&v); d && !std::isfinite(*d))
      throw Error("instruct.value", "answer values must be finite");
  InstructionRecord rec;
  rec.image_ref = std::move(image_ref);
  rec.instruction = std::string(instruction_text(task));
  rec.answer.values = payload;
  rec.task = task;
  return rec;
}

AnswerVector parse_answer_vector(std::string_view text, Task task) {
  const auto open = text.find('[');
  const auto close = open == std::string_view::npos ? open : text.find(']', open);
  if (close == std::string_view::npos)
    throw AnswerParseError("answer.no_vector", "no bracketed vector in response");
  std::string_view body = text.substr(open + 1, close - open - 1);

  std::vector<std::string_view> items;
  while (true) {
    const auto comma = body.find(',');
    items.push_back(trim(body.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  if (items.size() == 1 && items[0].empty()) items.clear();

  const TaskShape s = shape(task);
  if (items.size() != s.reals + (s.trailing_bool ? 1 : 0))
    throw AnswerParseError("answer.arity", "expected " + std::to_string(s.reals + s.trailing_bool) +
                                               " entries, found " + std::to_string(items.size()));
  AnswerVector out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::string_view item = items[i];
    if (i >= s.reals) {
      if (item == "True" || item == "true") {
        out.values.emplace_back(true);
      } else if (item == "False" || item == "false") {
        out.values.emplace_back(false);
      } else {
        throw AnswerParseError("answer.element", "expected a boolean, found '" + std::string(item) + "'");
      }
      continue;
    }
    if (!item.empty() && item.front() == '+') item.remove_prefix(1);
    double v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() || !std::isfinite(v))
      throw AnswerParseError("answer.element", "expected a number, found '" + std::string(items[i]) + "'");
    out.values.emplace_back(v);
  }
  return out;
}

double diff_proportion(const Raster& a, const Raster& b, const DamageConfig& cfg) {
  if (a.width != b.width || a.height != b.height)
    throw Error("damage.shape", "images differ in size: " + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) +
                                    "x" + std::to_string(b.height));
  const double t = cfg.color_distance_threshold;
  if (!(t > 0) || t > std::sqrt(3.0))
    throw Error("damage.threshold", "threshold must lie in (0, sqrt(3)]");
  const std::size_t n = a.pixel_count();
  if (n == 0) throw Error("damage.shape", "images are empty");
  const Raster ra = a.model == ColorModel::rgb ? a : to_rgb(a);
  const Raster rb = b.model == ColorModel::rgb ? b : to_rgb(b);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = (ra.pixels[3 * i + c] - rb.pixels[3 * i + c]) / 255.0;
      d2 += d * d;
    }
    changed += std::sqrt(d2) > t;
  }
  return static_cast<double>(changed) / static_cast<double>(n);
}

std::vector<double> normalize_damage(const std::vector<double>& diff_props) {
  if (diff_props.empty()) throw Error("damage.normalize", "no values to normalise");
  const auto [lo_it, hi_it] = std::minmax_element(diff_props.begin(), diff_props.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(lo < hi)) throw Error("damage.normalize", "all values equal; normalisation undefined");
  std::vector<double> out;
  out.reserve(diff_props.size());
  for (double v : diff_props) {
    if (v == lo)
      out.push_back(0.0);
    else if (v == hi)
      out.push_back(1.0);
    else
      out.push_back((v - lo) / (hi - lo));
  }
  return out;
}

double r_squared(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw Error("metrics.length", "prediction and truth lengths differ");
  if (gt.size() < 2) throw Error("metrics.length", "r_squared needs at least two values");
  double mean = 0;
  for (double v : gt) mean += v;
  mean /= static_cast<double>(gt.size());
  double ss_tot = 0;
  double ss_res = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    ss_tot += (gt[i] - mean) * (gt[i] - mean);
    ss_res += (gt[i] - pred[i]) * (gt[i] - pred[i]);
  }
  if (ss_tot == 0) throw Error("metrics.constant", "ground truth is constant");
  return 1.0 - ss_res / ss_tot;
}

ClassificationReport classification_report(const std::vector<bool>& pred,
                                           const std::vector<bool>& gt) {
  if (pred.size() != gt.size()) throw Error("metrics.length", "prediction and truth lengths differ");
  if (pred.empty()) throw Error("metrics.length", "classification report needs at least one row");
  ClassificationReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gt[i]) ++r.tp;
    else if (pred[i]) ++r.fp;
    else if (gt[i]) ++r.fn;
    else ++r.tn;
  }
  const auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  bool unused = false;
  r.accuracy = ratio(r.tp + r.tn, pred.size(), unused);
  r.precision = ratio(r.tp, r.tp + r.fp, r.precision_undefined);
  r.recall = ratio(r.tp, r.tp + r.fn, r.recall_undefined);
  // 2PR/(P+R) written over counts, which keeps exact fractions exact
  r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn, r.f1_undefined);
  return r;
}

EvaluationReport evaluate_run(const std::vector<InstructionRecord>& records,
                              const std::map<std::string, std::string>& responses) {
  EvaluationReport report;
  report.total = records.size();
  struct Columns {
    std::vector<std::vector<double>> pred, gt;
  };
  std::map<Task, Columns> columns;
  std::vector<bool> init_pred, init_gt;

  for (const InstructionRecord& rec : records) {
    auto it = responses.find(rec.id);
    if (it == responses.end()) {
      ++report.missing;
      continue;
    }
    AnswerVector parsed;
    try {
      parsed = parse_answer_vector(it->second, rec.task);
    } catch (const AnswerParseError&) {
      ++report.unparsed;
      report.unparsed_ids.push_back(rec.id);
      continue;
    }
    const std::size_t reals = shape(rec.task).reals;
    Columns& col = columns[rec.task];
    col.pred.resize(reals);
    col.gt.resize(reals);
    for (std::size_t i = 0; i < reals; ++i) {
      col.pred[i].push_back(std::get<double>(parsed.values[i]));
      col.gt[i].push_back(std::get<double>(rec.answer.values[i]));
    }
    if (rec.task == Task::crack) {
      init_pred.push_back(std::get<bool>(parsed.values[1]));
      init_gt.push_back(std::get<bool>(rec.answer.values[1]));
    }
  }

  for (auto& [task, col] : columns) {
    TaskScores scores;
    scores.components = component_names(task);
    scores.scored = col.gt.empty() ? 0 : col.gt[0].size();
    for (std::size_t i = 0; i < col.gt.size(); ++i) {
      try {
        scores.r2.push_back(r_squared(col.pred[i], col.gt[i]));
      } catch (const Error&) {
        scores.r2.push_back(std::nullopt);
      }
    }
    report.per_task[task] = std::move(scores);
  }
  if (!init_gt.empty()) report.crack_initiation = classification_report(init_pred, init_gt);
  return report;
}

}  // namespace matvl::instruct
