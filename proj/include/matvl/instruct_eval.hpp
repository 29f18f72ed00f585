#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "matvl/error.hpp"
#include "matvl/image.hpp"

namespace matvl::instruct {

struct FieldStats {
  double std_dev = 0;
  double mean = 0;
  double median = 0;
};

enum class StdConvention { population, sample };

FieldStats field_statistics(const std::vector<double>& values,
                            StdConvention convention = StdConvention::population);

enum class Task { stress, energy, crack };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view name);

/// The fixed command string the model is trained to answer.
std::string_view instruction_text(Task task);

using AnswerValue = std::variant<double, bool>;

struct AnswerVector {
  std::vector<AnswerValue> values;
  bool operator==(const AnswerVector&) const = default;
};

/// "[0.678, 0.603, 0.624]" style: reals rounded to 3 decimals, booleans as
/// True/False.
std::string render_answer(const AnswerVector& answer);

struct InstructionRecord {
  std::string id;
  std::string image_ref;
  std::string instruction;
  AnswerVector answer;
  Task task = Task::stress;
};

/// Checks arity and element types for the task. stress and energy carry
/// (std_dev, mean, median); crack carries (damage, initiated).
InstructionRecord build_instruction(Task task, const std::vector<AnswerValue>& payload,
                                    std::string image_ref = {});

/// Error codes: "answer.no_vector", "answer.arity", "answer.element".
class AnswerParseError : public Error {
 public:
  using Error::Error;
};

AnswerVector parse_answer_vector(std::string_view text, Task task);

struct DamageConfig {
  double color_distance_threshold = 0.15;  // on unit-normalised RGB
};

/// Fraction of pixels whose RGB distance exceeds the threshold.
double diff_proportion(const Raster& a, const Raster& b, const DamageConfig& cfg = {});

std::vector<double> normalize_damage(const std::vector<double>& diff_props);

double r_squared(const std::vector<double>& pred, const std::vector<double>& gt);

struct ClassificationReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  // set when the metric's denominator was zero and the value defaulted to 0
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

ClassificationReport classification_report(const std::vector<bool>& pred,
                                           const std::vector<bool>& gt);

struct TaskScores {
  std::size_t scored = 0;
  std::vector<std::string> components;
  std::vector<std::optional<double>> r2;  // nullopt when ground truth is constant or too few rows
};

struct EvaluationReport {
  std::size_t total = 0;
  std::size_t unparsed = 0;
  std::size_t missing = 0;
  std::map<Task, TaskScores> per_task;
  std::optional<ClassificationReport> crack_initiation;
  std::vector<std::string> unparsed_ids;
};

/// Parses each response against its record's task and scores per component.
/// Unparseable and missing responses are excluded from the metrics.
EvaluationReport evaluate_run(const std::vector<InstructionRecord>& records,
                              const std::map<std::string, std::string>& responses);

}  // namespace matvl::instruct
