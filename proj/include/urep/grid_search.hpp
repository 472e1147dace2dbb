#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "urep/optim.hpp"

namespace urep {

/// Numeric axes hold integers or reals; categorical axes hold names.
using AxisValue = std::variant<std::int64_t, double, std::string>;

std::string format_axis_value(const AxisValue& v);
/// "3" -> integer, "0.5" -> real, anything else -> name.
AxisValue parse_axis_value(const std::string& text);

struct Axis {
  std::string name;
  std::vector<AxisValue> values;
};

/// One grid point: a value per axis, in axis order.
struct GridPoint {
  std::size_t index = 0;
  std::vector<std::pair<std::string, AxisValue>> values;

  bool has(const std::string& axis) const;
  const AxisValue& at(const std::string& axis) const;
  std::int64_t get_int(const std::string& axis) const;
  double get_real(const std::string& axis) const;
  std::string get_name(const std::string& axis) const;
  std::string describe() const;
};

/// Cartesian grid; the last axis varies fastest.
class HyperparameterSpace {
 public:
  HyperparameterSpace() = default;
  explicit HyperparameterSpace(std::vector<Axis> axes);

  /// Throws ContractError on an empty axis, a duplicate name, or mixed
  /// numeric / categorical values.
  void add_axis(std::string name, std::vector<AxisValue> values);

  const std::vector<Axis>& axes() const noexcept { return axes_; }
  bool has_axis(const std::string& name) const;
  std::size_t size() const noexcept;
  GridPoint point(std::size_t index) const;

  /// "name=v1,v2;name2=..." (';' or newlines separate axes; '#' comments).
  static HyperparameterSpace parse(const std::string& text);
  std::string to_text() const;

 private:
  std::vector<Axis> axes_;
};

/// Orders tied points: axis by axis in declaration order, smaller numeric
/// value first, categorical values in declaration order.
bool tie_break_less(const HyperparameterSpace& space, const GridPoint& a, const GridPoint& b);

struct GridRecord {
  GridPoint point;
  std::optional<TrainRecord> record;
  std::string failure;

  bool failed() const noexcept { return !record.has_value(); }
};

struct GridResult {
  std::size_t best = 0;
  std::vector<GridRecord> records;

  const GridRecord& best_record() const { return records.at(best); }
};

using GridTrainer = std::function<TrainRecord(const GridPoint&)>;

/// Exhaustive sequential search. A point fails when the trainer throws or
/// its best validation loss is not finite; failures are kept in the result.
/// Throws SearchError when every point fails.
GridResult grid_search(const HyperparameterSpace& space, const GridTrainer& trainer);

/// Tab-separated report: axis columns, best_val_loss, epochs, seconds,
/// status. With timing off, seconds is written as "-".
std::string format_grid_report(const HyperparameterSpace& space, const GridResult& result, bool timing = true);

}  // namespace urep
