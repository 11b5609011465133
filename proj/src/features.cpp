#include "uwml/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>
#include <spdlog/spdlog.h>

#include "uwml/csv.hpp"

namespace uwml {

std::string_view to_string(Window w) {
  switch (w) {
    case Window::m3: return "m3";
    case Window::m6: return "m6";
    case Window::y1: return "y1";
    case Window::anytime: return "anytime";
  }
  return "";
}

DateRange window_range(Window w, Date slice_date) {
  const Date end_exclusive = slice_date.add_days(1);
  switch (w) {
    case Window::m3: return {end_exclusive.add_months(-3), slice_date};
    case Window::m6: return {end_exclusive.add_months(-6), slice_date};
    case Window::y1: return {end_exclusive.add_months(-12), slice_date};
    case Window::anytime: break;
  }
  return {Date{1900, 1, 1}, slice_date};
}

std::optional<std::string> GrouperConfig::group(CodeSystem system, std::string_view code) const {
  auto it = prefix_length.find(system);
  if (it == prefix_length.end() || it->second == 0) return std::nullopt;
  return std::string(to_string(system)) + ":" + std::string(code.substr(0, it->second));
}

std::string_view to_string(Trend t) {
  switch (t) {
    case Trend::increasing: return "increasing";
    case Trend::decreasing: return "decreasing";
    case Trend::flat: return "flat";
  }
  return "";
}

SlopeTest slope_t_test(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 3) return {};
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) return {};
  SlopeTest out;
  out.slope = sxy / sxx;
  if (out.slope == 0.0) return out;
  const double intercept = my - out.slope * mx;
  double ssr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - intercept - out.slope * x[i];
    ssr += r * r;
  }
  if (ssr <= 1e-20 * std::max(1.0, syy)) {
    out.p_value = 0.0;
    return out;
  }
  const double df = static_cast<double>(n - 2);
  const double se = std::sqrt(ssr / df / sxx);
  const double t = std::abs(out.slope / se);
  const boost::math::students_t dist(df);
  out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  return out;
}

Trend classify_trend(std::span<const double> x, std::span<const double> y, double alpha) {
  const auto test = slope_t_test(x, y);
  if (test.p_value >= alpha || test.slope == 0.0) return Trend::flat;
  return test.slope > 0 ? Trend::increasing : Trend::decreasing;
}

int interpretation_changes(std::span<const LabInterpretation> sequence) {
  int changes = 0;
  for (std::size_t i = 1; i < sequence.size(); ++i) {
    if (sequence[i] != sequence[i - 1]) ++changes;
  }
  return changes;
}

std::map<std::string, double, std::less<>> lab_features(std::span<const TermEvent> events,
                                                        const GroupSlice& slice) {
  std::map<std::string, double, std::less<>> out;
  for (Window w : kWindows) {
    const auto range = window_range(w, slice.slice_date);
    const std::string prefix = std::string(to_string(w)) + "|LOINC|";
    struct PerCode {
      std::map<LabInterpretation, int> interp_counts;
      std::vector<LabInterpretation> interp_seq;
      std::vector<double> x, y;
    };
    std::map<std::string_view, PerCode> codes;
    for (const auto& e : events) {
      if (e.system != CodeSystem::LOINC || !range.contains(e.date)) continue;
      auto& pc = codes[e.code];
      if (e.lab_interpretation) {
        ++pc.interp_counts[*e.lab_interpretation];
        pc.interp_seq.push_back(*e.lab_interpretation);
      }
      if (e.lab_value) {
        pc.x.push_back(static_cast<double>(days_between(range.first, e.date)));
        pc.y.push_back(*e.lab_value);
      }
    }
    for (const auto& [code, pc] : codes) {
      const std::string code_s(code);
      for (const auto& [interp, n] : pc.interp_counts) {
        out["labinterp|" + prefix + code_s + ":" + std::string(to_string(interp))] =
            std::log1p(static_cast<double>(n));
      }
      if (!pc.y.empty()) {
        out["labtrend|" + prefix + code_s + ":" + std::string(to_string(classify_trend(pc.x, pc.y)))] =
            1.0;
      }
      if (interpretation_changes(pc.interp_seq) >= 2) out["labfluct|" + prefix + code_s] = 1.0;
    }
  }
  return out;
}

namespace {

double coverage_days(const PatientRecord& rec, const DateRange& range) {
  std::vector<std::pair<int, int>> spans;
  for (const auto& c : rec.coverages) {
    const Date a = std::max(c.start_date, range.first);
    const Date b = std::min(c.end_date, range.last);
    if (a <= b) spans.emplace_back(a.serial(), b.serial());
  }
  std::sort(spans.begin(), spans.end());
  long days = 0;
  int cur_a = 0, cur_b = -1;
  bool open = false;
  for (auto [a, b] : spans) {
    if (open && a <= cur_b + 1) {
      cur_b = std::max(cur_b, b);
    } else {
      if (open) days += cur_b - cur_a + 1;
      cur_a = a;
      cur_b = b;
      open = true;
    }
  }
  if (open) days += cur_b - cur_a + 1;
  return static_cast<double>(days);
}

}  // namespace

FeatureVector extract_member_features(const PatientRecord& record, const GroupSlice& slice,
                                      const FeatureOptions& options) {
  const PatientRecord view = filter_claims_by_date(record, slice.censor_cutoff(), options.date_field);
  FeatureVector fv;
  fv.row_id = slice.group_id + "/" + record.member_id;
  auto& e = fv.entries;
  auto set_nonzero = [&](std::string name, double v) {
    if (v != 0.0) e[std::move(name)] = v;
  };

  set_nonzero("age", record.age_at(slice.slice_date));
  if (record.sex == Sex::F) e["sex_F"] = 1.0;

  for (Window w : kWindows) {
    const auto range = window_range(w, slice.slice_date);
    const std::string ws(to_string(w));

    std::map<std::pair<std::string, std::string>, int> counts;  // (system, code)
    for (const auto& t : view.terms) {
      if (!range.contains(t.date) || t.system == CodeSystem::REV) continue;
      ++counts[{std::string(to_string(t.system)), t.code}];
      if (auto g = options.grouper.group(t.system, t.code)) ++counts[{"GROUPED", *g}];
    }
    for (const auto& [key, n] : counts) {
      e["logcount|" + ws + "|" + key.first + "|" + key.second] = std::log1p(static_cast<double>(n));
    }

    if (w == Window::anytime) {
      std::map<std::string, std::vector<int>> per_system;
      for (const auto& [key, n] : counts) per_system[key.first].push_back(n);
      for (const auto& [system, ns] : per_system) {
        const std::string p = "summary|anytime|" + system + "|";
        double total = 0;
        for (int n : ns) total += n;
        e[p + "total_count"] = total;
        e[p + "unique_count"] = static_cast<double>(ns.size());
        e[p + "min_count"] = *std::min_element(ns.begin(), ns.end());
        e[p + "max_count"] = *std::max_element(ns.begin(), ns.end());
        e[p + "mean_count"] = total / static_cast<double>(ns.size());
      }
      for (const auto& c : view.claims) {
        for (const auto& rev : c.revenue_codes) e["revcode|anytime|REV|" + rev] = 1.0;
      }
      for (const auto& t : view.terms) {
        if (t.system == CodeSystem::REV) e["revcode|anytime|REV|" + t.code] = 1.0;
      }
    }

    Money total;
    std::array<Money, kCareSettings.size()> by_setting{};
    for (const auto& c : view.claims) {
      if (!range.contains(c.date(options.date_field))) continue;
      total += c.allowed_amount;
      by_setting[static_cast<std::size_t>(c.care_setting)] += c.allowed_amount;
    }
    set_nonzero("cost|" + ws + "|total", total.dollars());
    for (CareSetting s : kCareSettings) {
      set_nonzero("cost|" + ws + "|" + std::string(to_string(s)),
                  by_setting[static_cast<std::size_t>(s)].dollars());
    }
    set_nonzero("coverage|" + ws + "|days", coverage_days(record, range));
  }

  std::vector<TermEvent> labs;
  for (const auto& t : view.terms) {
    if (t.system == CodeSystem::LOINC) labs.push_back(t);
  }
  if (!labs.empty()) {
    std::stable_sort(labs.begin(), labs.end(),
                     [](const TermEvent& a, const TermEvent& b) { return a.date < b.date; });
    for (auto& [name, v] : lab_features(labs, slice)) e[name] = v;
  }
  return fv;
}

// FeatureTable ----------------------------------------------------------------

std::uint32_t FeatureTable::intern(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(name);
  index_.emplace(names_.back(), id);
  return id;
}

void FeatureTable::append(const FeatureVector& v) {
  std::vector<std::pair<std::uint32_t, double>> row;
  row.reserve(v.entries.size());
  for (const auto& [name, value] : v.entries) {
    if (value != 0.0) row.emplace_back(intern(name), value);
  }
  std::sort(row.begin(), row.end());
  for (const auto& [c, val] : row) {
    col_.push_back(c);
    val_.push_back(val);
  }
  row_ptr_.push_back(val_.size());
  row_ids_.push_back(v.row_id);
}

FeatureVector FeatureTable::row(std::size_t r) const {
  FeatureVector v;
  v.row_id = row_ids_[r];
  const auto c = cols(r);
  const auto x = vals(r);
  for (std::size_t i = 0; i < c.size(); ++i) v.entries[names_[c[i]]] = x[i];
  return v;
}

void FeatureTable::write_triplets(const std::filesystem::path& path) const {
  CsvWriter out(path, {"row_id", "feature_name", "value"});
  for (std::size_t r = 0; r < rows(); ++r) {
    const auto c = cols(r);
    const auto x = vals(r);
    std::vector<std::pair<std::string_view, double>> named;
    for (std::size_t i = 0; i < c.size(); ++i) named.emplace_back(names_[c[i]], x[i]);
    std::sort(named.begin(), named.end());
    for (const auto& [n, v] : named) out.row({row_ids_[r], std::string(n), format_double(v)});
  }
}

FeatureTable build_feature_table(const Book& book, const std::vector<GroupSlice>& slices,
                                 const FeatureOptions& options, std::vector<MemberKey>& keys) {
  std::vector<std::pair<const GroupSlice*, const PatientRecord*>> jobs;
  keys.clear();
  for (const auto& s : slices) {
    for (const auto& m : s.roster) {
      const PatientRecord* rec = book.find(m);
      if (!rec) continue;
      jobs.emplace_back(&s, rec);
      keys.push_back(MemberKey{s.group_id, m});
    }
  }
  FeatureTable table;
  constexpr std::size_t kChunk = 1024;
  std::vector<FeatureVector> buffer;
  for (std::size_t begin = 0; begin < jobs.size(); begin += kChunk) {
    const std::size_t end = std::min(jobs.size(), begin + kChunk);
    buffer.assign(end - begin, FeatureVector{});
    const auto n = static_cast<std::ptrdiff_t>(end - begin);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto& [slice, rec] = jobs[begin + static_cast<std::size_t>(i)];
      buffer[static_cast<std::size_t>(i)] = extract_member_features(*rec, *slice, options);
    }
    for (const auto& v : buffer) table.append(v);
  }
  return table;
}

// Catalog ---------------------------------------------------------------------

std::vector<std::string> FeatureCatalog::selected_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.selected) out.push_back(e.name);
  }
  return out;
}

std::size_t FeatureCatalog::selected_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const CatalogEntry& e) { return e.selected; }));
}

void FeatureCatalog::write(const std::filesystem::path& path) const {
  CsvWriter out(path, {"feature_name", "prevalence", "selected"});
  for (const auto& e : entries) out.row({e.name, format_double(e.prevalence), e.selected ? "1" : "0"});
}

FeatureCatalog FeatureCatalog::read(const std::filesystem::path& path) {
  CsvReader in(path, {"feature_name", "prevalence", "selected"});
  FeatureCatalog cat;
  while (in.next()) {
    const auto prevalence = parse_double(in["prevalence"]);
    if (!in.well_formed() || !prevalence) {
      throw std::runtime_error(path.string() + ": bad catalog row " + std::to_string(in.line_no()));
    }
    cat.entries.push_back(CatalogEntry{std::string(in["feature_name"]), *prevalence, in["selected"] == "1"});
  }
  std::sort(cat.entries.begin(), cat.entries.end(),
            [](const CatalogEntry& a, const CatalogEntry& b) { return a.name < b.name; });
  return cat;
}

namespace {

FeatureCatalog catalog_from_counts(std::map<std::string, std::size_t, std::less<>> nonzero,
                                   std::size_t n_rows, double threshold, std::size_t cap) {
  if (n_rows == 0) throw std::invalid_argument("fit_catalog needs at least one training row");
  FeatureCatalog cat;
  for (auto& [name, n] : nonzero) {
    const double prevalence = static_cast<double>(n) / static_cast<double>(n_rows);
    cat.entries.push_back(CatalogEntry{name, prevalence, prevalence >= threshold});
  }
  if (cat.selected_count() > cap) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cat.entries.size(); ++i) {
      if (cat.entries[i].selected) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return cat.entries[a].prevalence > cat.entries[b].prevalence;
    });
    for (std::size_t k = cap; k < idx.size(); ++k) cat.entries[idx[k]].selected = false;
  }
  return cat;
}

}  // namespace

FeatureCatalog fit_catalog(const std::vector<FeatureVector>& train, double threshold, std::size_t cap) {
  std::map<std::string, std::size_t, std::less<>> nonzero;
  for (const auto& v : train) {
    for (const auto& [name, value] : v.entries) {
      if (value != 0.0) ++nonzero[name];
    }
  }
  return catalog_from_counts(std::move(nonzero), train.size(), threshold, cap);
}

FeatureCatalog fit_catalog(const FeatureTable& table, std::span<const std::size_t> train_rows,
                           double threshold, std::size_t cap) {
  std::vector<std::size_t> counts(table.names().size(), 0);
  for (auto r : train_rows) {
    const auto c = table.cols(r);
    const auto v = table.vals(r);
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (v[i] != 0.0) ++counts[c[i]];
    }
  }
  std::map<std::string, std::size_t, std::less<>> nonzero;
  for (std::size_t f = 0; f < counts.size(); ++f) {
    if (counts[f] > 0) nonzero.emplace(table.names()[f], counts[f]);
  }
  return catalog_from_counts(std::move(nonzero), train_rows.size(), threshold, cap);
}

// Projection ------------------------------------------------------------------

FeatureProjector::FeatureProjector(const FeatureCatalog& catalog) : names_(catalog.selected_names()) {
  for (std::size_t i = 0; i < names_.size(); ++i) column_.emplace(names_[i], static_cast<std::uint32_t>(i));
  for (const auto& e : catalog.entries) known_.insert(e.name);
}

void FeatureProjector::note_unseen(std::string_view name) {
  if (known_.contains(name) || unseen_.contains(name)) return;
  unseen_.emplace(name);
  spdlog::debug("feature '{}' is not in the catalog; dropped", name);
}

std::vector<double> FeatureProjector::project(const FeatureVector& v) {
  std::vector<double> row(names_.size(), 0.0);
  for (const auto& [name, value] : v.entries) {
    auto it = column_.find(name);
    if (it != column_.end()) {
      row[it->second] = value;
    } else {
      note_unseen(name);
    }
  }
  return row;
}

SparseMatrix FeatureProjector::project(const FeatureTable& table, std::span<const std::size_t> rows) {
  std::vector<std::int64_t> remap(table.names().size(), -1);
  for (std::size_t f = 0; f < remap.size(); ++f) {
    auto it = column_.find(table.names()[f]);
    if (it != column_.end()) remap[f] = it->second;
  }
  std::vector<bool> used(table.names().size(), false);
  SparseMatrix m;
  m.n_cols = names_.size();
  std::vector<std::pair<std::uint32_t, double>> entries;
  for (auto r : rows) {
    entries.clear();
    const auto c = table.cols(r);
    const auto v = table.vals(r);
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (remap[c[i]] >= 0) {
        entries.emplace_back(static_cast<std::uint32_t>(remap[c[i]]), v[i]);
      } else {
        used[c[i]] = true;
      }
    }
    std::sort(entries.begin(), entries.end());
    m.add_row(entries);
  }
  for (std::size_t f = 0; f < used.size(); ++f) {
    if (used[f]) note_unseen(table.names()[f]);
  }
  return m;
}

}  // namespace uwml
