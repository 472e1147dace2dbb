#include "urep/grid_search.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "urep/error.hpp"
#include "urep/text.hpp"

namespace urep {

std::string format_axis_value(const AxisValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  return std::get<std::string>(v);
}

AxisValue parse_axis_value(const std::string& text) {
  const std::string s = trim(text);
  if (s.empty()) throw ConfigError("empty axis value");
  std::int64_t i = 0;
  auto [pi, ei] = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ei == std::errc() && pi == s.data() + s.size()) return i;
  double d = 0;
  auto [pd, ed] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ed == std::errc() && pd == s.data() + s.size()) return d;
  return s;
}

bool GridPoint::has(const std::string& axis) const {
  for (const auto& [name, v] : values) {
    if (name == axis) return true;
  }
  return false;
}

const AxisValue& GridPoint::at(const std::string& axis) const {
  for (const auto& [name, v] : values) {
    if (name == axis) return v;
  }
  throw ContractError("grid point has no axis '" + axis + "'");
}

std::int64_t GridPoint::get_int(const std::string& axis) const {
  const auto& v = at(axis);
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v); d && std::floor(*d) == *d) return static_cast<std::int64_t>(*d);
  throw ContractError("axis '" + axis + "' is not an integer");
}

double GridPoint::get_real(const std::string& axis) const {
  const auto& v = at(axis);
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw ContractError("axis '" + axis + "' is not numeric");
}

std::string GridPoint::get_name(const std::string& axis) const {
  return format_axis_value(at(axis));
}

std::string GridPoint::describe() const {
  std::string s;
  for (const auto& [name, v] : values) {
    if (!s.empty()) s += ' ';
    s += name + "=" + format_axis_value(v);
  }
  return s;
}

namespace {

bool is_numeric(const AxisValue& v) { return !std::holds_alternative<std::string>(v); }

double numeric(const AxisValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::get<double>(v);
}

}  // namespace

HyperparameterSpace::HyperparameterSpace(std::vector<Axis> axes) {
  for (auto& a : axes) add_axis(std::move(a.name), std::move(a.values));
}

void HyperparameterSpace::add_axis(std::string name, std::vector<AxisValue> values) {
  if (name.empty()) throw ContractError("axis needs a name");
  if (values.empty()) throw ContractError("axis '" + name + "' has no values");
  if (has_axis(name)) throw ContractError("duplicate axis '" + name + "'");
  const bool num = is_numeric(values.front());
  for (const auto& v : values) {
    if (is_numeric(v) != num) throw ContractError("axis '" + name + "' mixes numeric and categorical values");
  }
  axes_.push_back({std::move(name), std::move(values)});
}

bool HyperparameterSpace::has_axis(const std::string& name) const {
  for (const auto& a : axes_) {
    if (a.name == name) return true;
  }
  return false;
}

std::size_t HyperparameterSpace::size() const noexcept {
  std::size_t n = 1;
  for (const auto& a : axes_) n *= a.values.size();
  return n;
}

GridPoint HyperparameterSpace::point(std::size_t index) const {
  if (index >= size()) throw ContractError("grid index out of range");
  GridPoint p;
  p.index = index;
  p.values.resize(axes_.size());
  std::size_t rem = index;
  for (std::size_t a = axes_.size(); a-- > 0;) {
    const auto n = axes_[a].values.size();
    p.values[a] = {axes_[a].name, axes_[a].values[rem % n]};
    rem /= n;
  }
  return p;
}

HyperparameterSpace HyperparameterSpace::parse(const std::string& text) {
  HyperparameterSpace space;
  std::string normalized = text;
  for (auto& c : normalized) {
    if (c == ';') c = '\n';
  }
  std::istringstream in(normalized);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected axis=v1,v2,...", lineno);
    std::vector<AxisValue> values;
    for (const auto& tok : split(line.substr(eq + 1), ',')) values.push_back(parse_axis_value(tok));
    try {
      space.add_axis(trim(line.substr(0, eq)), std::move(values));
    } catch (const ContractError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return space;
}

std::string HyperparameterSpace::to_text() const {
  std::string s;
  for (const auto& a : axes_) {
    if (!s.empty()) s += ';';
    s += a.name + '=';
    for (std::size_t i = 0; i < a.values.size(); ++i) s += (i ? "," : "") + format_axis_value(a.values[i]);
  }
  return s;
}

bool tie_break_less(const HyperparameterSpace& space, const GridPoint& a, const GridPoint& b) {
  for (std::size_t ax = 0; ax < space.axes().size(); ++ax) {
    const auto& va = a.values.at(ax).second;
    const auto& vb = b.values.at(ax).second;
    if (is_numeric(va)) {
      const double x = numeric(va), y = numeric(vb);
      if (x != y) return x < y;
    } else {
      const auto& decl = space.axes()[ax].values;
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < decl.size(); ++i) {
        if (decl[i] == va) { ia = i; break; }
      }
      for (std::size_t i = 0; i < decl.size(); ++i) {
        if (decl[i] == vb) { ib = i; break; }
      }
      if (ia != ib) return ia < ib;
    }
  }
  return a.index < b.index;
}

GridResult grid_search(const HyperparameterSpace& space, const GridTrainer& trainer) {
  GridResult result;
  const std::size_t n = space.size();
  result.records.reserve(n);
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < n; ++i) {
    GridRecord rec;
    rec.point = space.point(i);
    try {
      TrainRecord tr = trainer(rec.point);
      if (tr.epochs.empty() || !std::isfinite(tr.best_val_loss())) {
        rec.failure = "non-finite validation loss";
      } else {
        rec.record = std::move(tr);
      }
    } catch (const std::exception& e) {
      rec.failure = e.what();
    }
    if (!rec.failed()) {
      if (!best) {
        best = i;
      } else {
        const auto& cur = result.records[*best];
        const double lb = rec.record->best_val_loss(), cb = cur.record->best_val_loss();
        if (lb < cb || (lb == cb && tie_break_less(space, rec.point, cur.point))) best = i;
      }
    }
    result.records.push_back(std::move(rec));
  }
  if (!best) throw SearchError("all " + std::to_string(n) + " grid points failed");
  result.best = *best;
  return result;
}

std::string format_grid_report(const HyperparameterSpace& space, const GridResult& result, bool timing) {
  std::ostringstream os;
  for (const auto& a : space.axes()) os << a.name << '\t';
  os << "best_val_loss\tepochs\tseconds\tstatus\n";
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const auto& r = result.records[i];
    for (const auto& [name, v] : r.point.values) os << format_axis_value(v) << '\t';
    if (r.failed()) {
      os << "-\t-\t-\tfailed: " << one_line(r.failure);
    } else {
      os << format_double(r.record->best_val_loss()) << '\t' << r.record->epochs.size() << '\t'
         << (timing ? format_fixed(r.record->total_seconds(), 2) : std::string("-")) << '\t'
         << to_string(r.record->status) << (i == result.best ? "*" : "");
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace urep
