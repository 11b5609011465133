#include "uwml/actuarial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uwml/csv.hpp"

namespace uwml {

namespace {

double trend_factor(double annual, double months) { return std::pow(1.0 + annual, months / 12.0); }

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}

}  // namespace

void RatingFactors::validate() const {
  for (double x : {x_b, x_d, x_dm, x_dp, x_dph, x_gm, x_gp, x_gph, x_im, x_ip, x_iph, x_m, x_ph}) {
    require(x > 0.0 && std::isfinite(x), "rating factors must be positive");
  }
  require(x_p > 0.0, "pooling level must be positive");
  for (double t : {AT, AT_L, AT_med, AT_ph}) require(t > -1.0, "annual trend must exceed -100%");
}

void GroupExperience::validate() const {
  require(mm > 0.0, "member months must be positive");
  require(n_s >= 0.0, "shock count must be non-negative");
  require(S >= 0.0 && S <= 1.0, "cost share must lie in [0, 1]");
  if (TC >= 0.0) require(TSC >= 0.0 && TSC <= TC, "shock claims must lie in [0, TC]");
}

double CredibilityCurve::operator()(double mm) const {
  return std::min(1.0, std::sqrt(mm / full_credibility_mm));
}

double StepTable::lookup(double S) const {
  if (steps.empty()) return 1.0;
  double factor = steps.front().second;
  for (const auto& [lower, f] : steps) {
    if (S >= lower) factor = f;
  }
  return factor;
}

StepTable StepTable::pharmacy_utilization_default() {
  return StepTable{{{0.0, 1.10}, {0.2, 1.00}, {0.4, 0.90}, {0.6, 0.82}, {0.8, 0.75}}};
}

double experience_rate(const GroupExperience& exp, const RatingFactors& f) {
  exp.validate();
  f.validate();
  const double own = (exp.TC - exp.TSC) * trend_factor(f.AT, exp.m) * f.x_m * f.x_b * f.x_d;
  const double pooled = exp.n_s * f.x_p;
  const double pooling_charge =
      f.BC_p * trend_factor(f.AT_L, exp.m) * f.x_ph * f.x_gp * f.x_dp * f.x_ip * exp.mm;
  return own + pooled + pooling_charge;
}

double medical_utilization_factor(double S) { return 1.2 * std::exp(-0.8 * S); }

double manual_rate(const Census& census, const RatingFactors& f, const StepTable& pharmacy_utilization) {
  f.validate();
  require(census.mm > 0.0, "member months must be positive");
  require(census.S >= 0.0 && census.S <= 1.0, "cost share must lie in [0, 1]");
  const double medical = f.BC_med * trend_factor(f.AT_med, census.m) * f.x_gm * f.x_dm * f.x_im *
                         medical_utilization_factor(census.S);
  const double capitation = f.BC_cap * trend_factor(f.AT_med, census.m);
  const double pharmacy = f.BC_ph * trend_factor(f.AT_ph, census.m) * f.x_gph * f.x_dph * f.x_iph *
                          pharmacy_utilization.lookup(census.S);
  return (medical + capitation + pharmacy) * census.mm;
}

double blend(double er, double mr, double c) {
  require(c >= 0.0 && c <= 1.0, "credibility must lie in [0, 1]");
  return c * er + (1.0 - c) * mr;
}

double credibility(double mm, const CredibilityCurve& curve) {
  require(mm >= 0.0, "member months must be non-negative");
  return curve(mm);
}

ShockSplit shock_split(std::span<const double> member_totals, double pooling_level) {
  ShockSplit out;
  for (double t : member_totals) {
    out.TC += t;
    if (t > pooling_level) {
      out.TSC += t - pooling_level;
      out.n_s += 1;
    }
  }
  return out;
}

// Factor tables -------------------------------------------------------------------

void FactorTables::set(const std::string& table, const std::string& key, double factor) {
  require(factor > 0.0, "factor must be positive");
  tables_[table][key] = factor;
}

double FactorTables::get(const std::string& table, const std::string& key) const {
  auto t = tables_.find(table);
  if (t == tables_.end()) return 1.0;
  auto k = t->second.find(key);
  return k == t->second.end() ? 1.0 : k->second;
}

FactorTables FactorTables::read(const std::filesystem::path& path) {
  CsvReader in(path, {"table_name", "key", "factor"});
  FactorTables tables;
  while (in.next()) {
    const auto factor = parse_double(in["factor"]);
    if (!in.well_formed() || !factor || *factor <= 0.0) {
      throw std::runtime_error(path.string() + ": bad factor row at line " + std::to_string(in.line_no()));
    }
    tables.set(std::string(in["table_name"]), std::string(in["key"]), *factor);
  }
  return tables;
}

void FactorTables::write(const std::filesystem::path& path) const {
  CsvWriter out(path, {"table_name", "key", "factor"});
  for (const auto& [table, rows] : tables_) {
    for (const auto& [key, factor] : rows) out.row({table, key, format_double(factor)});
  }
}

// Calibration ----------------------------------------------------------------------

std::string age_band(int age) {
  if (age < 18) return "0-17";
  if (age < 30) return "18-29";
  if (age < 45) return "30-44";
  if (age < 55) return "45-54";
  if (age < 65) return "55-64";
  return "65+";
}

namespace {

std::string demographic_key(const PatientRecord& rec, Date d) {
  return std::string(to_string(rec.sex)) + ":" + age_band(rec.age_at(d));
}

double cost_share(const PeriodTotals& t, double fallback) {
  if (t.medical_allowed <= 0.0) return fallback;
  return std::clamp(1.0 - t.medical_paid / t.medical_allowed, 0.0, 1.0);
}

std::pair<double, double> roster_demographics(const Book& book, const GroupSlice& s,
                                              const ActuarialCalibration& cal) {
  double med = 0, ph = 0;
  std::size_t n = 0;
  for (const auto& id : s.roster) {
    const PatientRecord* rec = book.find(id);
    if (!rec) continue;
    auto it = cal.demographic.find(demographic_key(*rec, s.slice_date));
    med += it == cal.demographic.end() ? 1.0 : it->second.first;
    ph += it == cal.demographic.end() ? 1.0 : it->second.second;
    ++n;
  }
  if (n == 0) return {1.0, 1.0};
  return {med / static_cast<double>(n), ph / static_cast<double>(n)};
}

constexpr double kDefaultCostShare = 0.2;

}  // namespace

nlohmann::json ActuarialCalibration::to_json() const {
  const auto& f = factors;
  nlohmann::json j;
  j["factors"] = {{"AT", f.AT},         {"AT_L", f.AT_L},     {"AT_med", f.AT_med}, {"AT_ph", f.AT_ph},
                  {"BC_cap", f.BC_cap}, {"BC_med", f.BC_med}, {"BC_p", f.BC_p},     {"BC_ph", f.BC_ph},
                  {"x_p", f.x_p}};
  j["full_credibility_mm"] = curve.full_credibility_mm;
  j["midpoint_months"] = midpoint_months;
  j["pharmacy_utilization"] = nlohmann::json::array();
  for (const auto& [lower, factor] : pharmacy_utilization.steps) {
    j["pharmacy_utilization"].push_back({lower, factor});
  }
  j["demographic"] = nlohmann::json::object();
  for (const auto& [key, mp] : demographic) j["demographic"][key] = {mp.first, mp.second};
  return j;
}

ActuarialCalibration ActuarialCalibration::from_json(const nlohmann::json& j) {
  ActuarialCalibration c;
  const auto& f = j.at("factors");
  c.factors.AT = f.at("AT");
  c.factors.AT_L = f.at("AT_L");
  c.factors.AT_med = f.at("AT_med");
  c.factors.AT_ph = f.at("AT_ph");
  c.factors.BC_cap = f.at("BC_cap");
  c.factors.BC_med = f.at("BC_med");
  c.factors.BC_p = f.at("BC_p");
  c.factors.BC_ph = f.at("BC_ph");
  c.factors.x_p = f.at("x_p");
  c.curve.full_credibility_mm = j.at("full_credibility_mm");
  c.midpoint_months = j.at("midpoint_months");
  c.pharmacy_utilization.steps.clear();
  for (const auto& step : j.at("pharmacy_utilization")) {
    c.pharmacy_utilization.steps.emplace_back(step.at(0).get<double>(), step.at(1).get<double>());
  }
  for (const auto& [key, mp] : j.at("demographic").items()) {
    c.demographic[key] = {mp.at(0).get<double>(), mp.at(1).get<double>()};
  }
  return c;
}

ActuarialCalibration calibrate_actuarial(const Book& book, const std::vector<GroupSlice>& slices,
                                         const std::vector<GroupStats>& stats,
                                         const CalibrationOptions& options, DateField field) {
  if (slices.size() != stats.size()) throw std::invalid_argument("slices and stats must align");
  ActuarialCalibration cal;
  cal.factors.x_p = options.pooling_level;
  cal.curve.full_credibility_mm = options.full_credibility_mm;
  if (!slices.empty()) {
    const auto& s = slices.front();
    // Experience midpoint to projection midpoint.
    const double experience = std::round(days_between(s.experience_start, s.censor_cutoff()) / 30.4375);
    const double gap = std::round(days_between(s.censor_cutoff(), s.renewal_date) / 30.4375);
    const double projection =
        std::round(days_between(s.renewal_date, s.projection_end.add_days(1)) / 30.4375);
    cal.midpoint_months = experience / 2 + gap + projection / 2;
  }

  struct Sums {
    double med = 0, ph = 0, cap = 0, all = 0, mm = 0;
    void add(const PeriodTotals& t) {
      med += t.medical_allowed;
      ph += t.pharmacy_allowed;
      cap += t.capitation_allowed;
      all += t.allowed;
      mm += t.member_months;
    }
  } exp, proj;
  double pooled_excess = 0, udm_weighted = 0, udph_weighted = 0;
  for (const auto& g : stats) {
    if (g.experience.member_months <= 0 || g.projection.member_months <= 0) continue;
    exp.add(g.experience);
    proj.add(g.projection);
    pooled_excess += shock_split(g.experience.member_totals, options.pooling_level).TSC;
    const double S = cost_share(g.experience, kDefaultCostShare);
    udm_weighted += medical_utilization_factor(S) * g.experience.member_months;
    udph_weighted += cal.pharmacy_utilization.lookup(S) * g.experience.member_months;
  }
  if (exp.mm <= 0 || proj.mm <= 0) throw std::invalid_argument("calibration needs enrolled training groups");

  const double m = cal.midpoint_months;
  auto annual = [m](double projected_pmpm, double experience_pmpm) {
    if (experience_pmpm <= 0 || projected_pmpm <= 0) return 0.0;
    return std::pow(projected_pmpm / experience_pmpm, 12.0 / m) - 1.0;
  };
  auto& f = cal.factors;
  f.AT = annual(proj.all / proj.mm, exp.all / exp.mm);
  f.AT_L = f.AT;
  f.AT_med = annual((proj.med + proj.cap) / proj.mm, (exp.med + exp.cap) / exp.mm);
  f.AT_ph = annual(proj.ph / proj.mm, exp.ph / exp.mm);
  f.BC_med = exp.med / exp.mm / (udm_weighted / exp.mm);
  f.BC_ph = exp.ph / exp.mm / (udph_weighted / exp.mm);
  f.BC_cap = exp.cap / exp.mm;
  f.BC_p = pooled_excess / exp.mm;

  // Demographic cells over the same members and period.
  struct Cell {
    double med = 0, ph = 0, mm = 0;
  };
  std::map<std::string, Cell> cells;
  Cell total;
  for (const auto& s : slices) {
    for (const auto& id : s.roster) {
      const PatientRecord* rec = book.find(id);
      if (!rec) continue;
      Cell c;
      c.mm = enrolled_months(*rec, s.group_id, s.experience());
      for (const auto& claim : rec->claims) {
        const Date d = claim.date(field);
        if (!s.experience().contains(d) || !rec->covered_by(s.group_id, d)) continue;
        (claim.is_pharmacy ? c.ph : c.med) += claim.allowed_amount.dollars();
      }
      auto& cell = cells[demographic_key(*rec, s.slice_date)];
      cell.med += c.med;
      cell.ph += c.ph;
      cell.mm += c.mm;
      total.med += c.med;
      total.ph += c.ph;
      total.mm += c.mm;
    }
  }
  for (const auto& [key, c] : cells) {
    if (c.mm < options.min_cell_member_months || total.mm <= 0) continue;
    const double med = total.med > 0 ? (c.med / c.mm) / (total.med / total.mm) : 1.0;
    const double ph = total.ph > 0 ? (c.ph / c.mm) / (total.ph / total.mm) : 1.0;
    cal.demographic[key] = {std::max(med, 0.05), std::max(ph, 0.05)};
  }
  return cal;
}

std::vector<BaselinePrediction> actuarial_baseline(const Book& book,
                                                   const std::vector<GroupSlice>& slices,
                                                   const std::vector<GroupStats>& stats,
                                                   const ActuarialCalibration& calibration,
                                                   const FactorTables& tables) {
  if (slices.size() != stats.size()) throw std::invalid_argument("slices and stats must align");
  std::vector<BaselinePrediction> out;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    const auto& g = stats[i];
    const double mm = g.experience.member_months;
    if (mm <= 0) continue;

    RatingFactors f = calibration.factors;
    const auto [dm, dph] = roster_demographics(book, s, calibration);
    f.x_dm = dm;
    f.x_dph = dph;
    const std::string& plan = g.plan_type;
    f.x_b = tables.get("x_b", plan);
    f.x_m = tables.get("x_m", plan);
    f.x_gm = tables.get("x_gm", plan);
    f.x_gp = tables.get("x_gp", plan);
    f.x_gph = tables.get("x_gph", plan);
    f.x_im = tables.get("x_im", plan);
    f.x_ip = tables.get("x_ip", plan);
    f.x_iph = tables.get("x_iph", plan);

    const double S = cost_share(g.experience, kDefaultCostShare);
    const auto shock = shock_split(g.experience.member_totals, f.x_p);
    GroupExperience exp;
    exp.TC = shock.TC;
    exp.TSC = shock.TC >= 0 ? std::clamp(shock.TSC, 0.0, shock.TC) : shock.TSC;
    exp.n_s = shock.n_s;
    exp.mm = mm;
    exp.m = calibration.midpoint_months;
    exp.S = S;

    BaselinePrediction p;
    p.group_id = s.group_id;
    p.experience_pmpm = g.experience.pmpm();
    p.er_pmpm = std::max(0.0, experience_rate(exp, f) / mm);
    p.mr_pmpm = manual_rate(Census{mm, calibration.midpoint_months, S}, f, calibration.pharmacy_utilization) / mm;
    p.credibility = credibility(mm, calibration.curve);
    p.pmpm = blend(p.er_pmpm, p.mr_pmpm, p.credibility);
    p.trend = p.experience_pmpm > 0 ? p.pmpm / p.experience_pmpm : 0.0;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace uwml
