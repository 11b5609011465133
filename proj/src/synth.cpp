#include "uwml/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace uwml {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream per (seed, purpose, index).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  return std::mt19937_64{splitmix64(splitmix64(seed ^ (purpose << 56)) + index)};
}

std::string padded(char prefix, std::size_t n, int width) {
  std::string digits = std::to_string(n);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

class Draw {
 public:
  Draw(std::mt19937_64& rng, bool deterministic) : rng_(rng), deterministic_(deterministic) {}

  double uniform(double lo = 0, double hi = 1) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return p > 0 && uniform() < p; }
  double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(rng_); }
  int poisson(double mean) { return mean > 0 ? std::poisson_distribution<int>(mean)(rng_) : 0; }
  /// Claim amounts; the mean under deterministic costs.
  double cost(double shape, double scale) {
    return deterministic_ ? shape * scale : std::gamma_distribution<double>(shape, scale)(rng_);
  }
  double latent_gamma(double shape, double scale) { return std::gamma_distribution<double>(shape, scale)(rng_); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(integer(0, static_cast<int>(v.size()) - 1))];
  }

 private:
  std::mt19937_64& rng_;
  bool deterministic_;
};

double age_multiplier(double sensitivity, int age) {
  return std::min(4.0, std::exp(sensitivity * (age - 40) / 10.0));
}

Date last_day_of_month(Date d) { return d.first_of_month().add_months(1).add_days(-1); }

Date horizon_end(const SynthConfig& c) { return c.horizon_start.add_months(c.months_horizon).add_days(-1); }

constexpr double kCapitationMonthly = 30.0;
constexpr double kCareManagementFee = 20.0;
const char* const kCareManagementCode = "99490";

double cost_share(const std::string& plan) {
  if (plan == "HMO") return 0.10;
  if (plan == "EPO") return 0.30;
  return 0.20;
}

}  // namespace

std::vector<ConditionProfile> default_conditions() {
  std::vector<ConditionProfile> out;
  {
    ConditionProfile p;
    p.name = "diabetes";
    p.prevalence = 0.07;
    p.onset_per_year = 0.008;
    p.age_sensitivity = 0.35;
    p.icd10 = {"E11.9", "E11.65"};
    p.cpt = {"99214", "83036"};
    p.ndc = {"00002-8215", "00088-2220"};
    p.visit_probability = 0.30;
    p.visit_shape = 3;
    p.visit_scale = 60;
    p.pharmacy_monthly = 180;
    p.loinc = "4548-4";
    p.lab_mean = 7.4;
    p.lab_sd = 0.8;
    p.lab_high = 6.4;
    p.lab_drift_mean = 0.15;
    p.lab_drift_sd = 0.5;
    out.push_back(p);
  }
  {
    ConditionProfile p;
    p.name = "cardiac";
    p.prevalence = 0.05;
    p.onset_per_year = 0.006;
    p.age_sensitivity = 0.5;
    p.icd10 = {"I25.10", "I50.9"};
    p.cpt = {"93000", "93306"};
    p.ndc = {"00006-0749", "00093-7180"};
    p.visit_probability = 0.35;
    p.visit_shape = 2;
    p.visit_scale = 250;
    p.pharmacy_monthly = 120;
    p.loinc = "33762-6";
    p.lab_mean = 300;
    p.lab_sd = 150;
    p.lab_high = 125;
    p.lab_drift_mean = 40;
    p.lab_drift_sd = 120;
    out.push_back(p);
  }
  {
    ConditionProfile p;
    p.name = "ckd";
    p.prevalence = 0.03;
    p.onset_per_year = 0.004;
    p.age_sensitivity = 0.45;
    p.icd10 = {"N18.3"};
    p.cpt = {"80053", "99214"};
    p.ndc = {"00310-0280"};
    p.visit_probability = 0.25;
    p.visit_shape = 2;
    p.visit_scale = 150;
    p.pharmacy_monthly = 90;
    p.loinc = "2160-0";
    p.lab_mean = 1.6;
    p.lab_sd = 0.3;
    p.lab_high = 1.3;
    p.lab_drift_mean = 0.1;
    p.lab_drift_sd = 0.25;
    out.push_back(p);
  }
  {
    ConditionProfile p;
    p.name = "cancer";
    p.prevalence = 0.006;
    p.onset_per_year = 0.004;
    p.age_sensitivity = 0.4;
    p.duration_months = 16;
    p.icd10 = {"C50.911", "Z51.11"};
    p.cpt = {"96413", "77386"};
    p.ndc = {"00069-0137"};
    p.visit_probability = 0.8;
    p.visit_shape = 2;
    p.visit_scale = 2500;
    p.pharmacy_monthly = 900;
    out.push_back(p);
  }
  {
    ConditionProfile p;
    p.name = "asthma";
    p.prevalence = 0.07;
    p.onset_per_year = 0.004;
    p.icd10 = {"J45.909"};
    p.cpt = {"94010", "99213"};
    p.ndc = {"00173-0682"};
    p.visit_probability = 0.12;
    p.visit_shape = 2;
    p.visit_scale = 90;
    p.pharmacy_monthly = 60;
    out.push_back(p);
  }
  {
    ConditionProfile p;
    p.name = "depression";
    p.prevalence = 0.08;
    p.onset_per_year = 0.01;
    p.icd10 = {"F32.9"};
    p.cpt = {"90834", "90837"};
    p.ndc = {"00049-4960"};
    p.visit_probability = 0.3;
    p.visit_shape = 3;
    p.visit_scale = 45;
    p.pharmacy_monthly = 30;
    out.push_back(p);
  }
  return out;
}

void SynthConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string("synth: ") + what + " must be in [0, 1]");
  };
  if (n_groups < 1) throw std::invalid_argument("synth: n_groups must be positive");
  if (months_horizon < 1) throw std::invalid_argument("synth: months_horizon must be positive");
  if (group_frailty_sigma < 0 || group_burden_sigma < 0) throw std::invalid_argument("synth: negative group sigma");
  if (!(group_size_sigma > 0)) throw std::invalid_argument("synth: group size sigma must be positive");
  if (min_group_size < 1) throw std::invalid_argument("synth: min_group_size must be positive");
  if (renewal_months < 1) throw std::invalid_argument("synth: renewal_months must be positive");
  if (blackout_months < 0) throw std::invalid_argument("synth: negative blackout");
  prob(monthly_drop, "monthly_drop");
  prob(monthly_add, "monthly_add");
  prob(reversal_rate, "reversal_rate");
  prob(concession_fraction, "concession_fraction");
  prob(care_management_share, "care_management_share");
  prob(shock_rate / 12.0, "shock_rate / 12");
  prob(maternity_rate / 12.0, "maternity_rate / 12");
  if (!(concession_scale_min > 0 && concession_scale_min <= concession_scale_max && concession_scale_max <= 1)) {
    throw std::invalid_argument("synth: concession scales must satisfy 0 < min <= max <= 1");
  }
  for (const auto& c : conditions) {
    prob(c.prevalence, "condition prevalence");
    prob(c.visit_probability, "condition visit_probability");
    prob(c.onset_per_year / 12.0, "condition onset_per_year / 12");
    if (!(c.visit_shape > 0 && c.visit_scale > 0)) {
      throw std::invalid_argument("synth: condition " + c.name + " needs positive gamma parameters");
    }
    if (c.pharmacy_monthly < 0 || c.duration_months < 0) {
      throw std::invalid_argument("synth: condition " + c.name + " has negative cost or duration");
    }
    if (c.icd10.empty()) throw std::invalid_argument("synth: condition " + c.name + " has no diagnosis codes");
  }
  const Date last_projection = (dynamic_renewals ? first_renewal.add_months(renewal_months - 1) : fixed_renewal)
                                   .add_months(12)
                                   .add_days(-1);
  if (last_projection > horizon_end(*this)) {
    spdlog::warn("synth: horizon ends {} before the last projection day {}", horizon_end(*this).iso(),
                 last_projection.iso());
  }
}

double GroupTruth::projection_pmpm() const {
  return projection_member_months > 0 ? projection_allowed.dollars() / projection_member_months : 0.0;
}

double GroupTruth::concession_ratio() const {
  if (counterfactual_projection_allowed.cents <= 0) return 1.0;
  return static_cast<double>(projection_allowed.cents) / static_cast<double>(counterfactual_projection_allowed.cents);
}

// Population -------------------------------------------------------------------

namespace {

struct GroupDraft {
  GroupTruth truth;
  std::vector<MemberTruth> members;
};

MemberTruth draw_member(Draw& draw, const SynthConfig& cfg, Date start, Date end, bool joiner,
                        double group_frailty, double group_burden) {
  MemberTruth m;
  m.joiner = joiner;
  m.start = start;
  m.end = end;
  const bool dependent = draw.chance(0.3);
  const int age = dependent ? draw.integer(0, 19) : draw.integer(21, 64);
  m.birthday = start.add_days(-(age * 365 + draw.integer(0, 364)));
  m.sex = draw.chance(0.5) ? Sex::F : Sex::M;
  m.frailty = group_frailty * draw.latent_gamma(1.2, 1.0 / 1.2) * std::exp((age - 40) / 40.0) * (joiner ? 0.8 : 1.0);

  const int months = count_month_starts({start.first_of_month(), end});
  for (std::size_t p = 0; p < cfg.conditions.size(); ++p) {
    const auto& c = cfg.conditions[p];
    const double mult = age_multiplier(c.age_sensitivity, age) * group_burden * (joiner ? 0.6 : 1.0);
    std::optional<Date> onset;
    if (draw.chance(std::min(1.0, c.prevalence * mult))) {
      const int back = c.duration_months > 0 ? draw.integer(0, c.duration_months - 1) : draw.integer(0, 36);
      onset = start.first_of_month().add_months(-back);
    } else {
      for (int k = 1; k < months; ++k) {
        if (draw.chance(c.onset_per_year / 12.0 * mult)) {
          onset = start.first_of_month().add_months(k);
          break;
        }
      }
    }
    if (onset) {
      const double drift = c.loinc.empty() ? 0.0 : draw.normal(c.lab_drift_mean, c.lab_drift_sd);
      m.conditions.push_back(ConditionOnset{static_cast<int>(p), *onset, drift});
    }
  }
  for (int k = 0; k < months; ++k) {
    const Date month = start.first_of_month().add_months(k);
    if (draw.chance(cfg.shock_rate / 12.0 * std::min(3.0, m.frailty))) m.shocks.push_back(month);
    const int age_now = age + k / 12;
    const bool busy = !m.pregnancies.empty() && month < m.pregnancies.back().add_months(18);
    if (m.sex == Sex::F && age_now >= 20 && age_now <= 40 && !busy && draw.chance(cfg.maternity_rate / 12.0)) {
      m.pregnancies.push_back(month);
    }
  }
  return m;
}

GroupDraft draw_group(const SynthConfig& cfg, std::size_t index) {
  auto rng = stream(cfg.seed, 1, index);
  Draw draw(rng, cfg.deterministic_costs);
  GroupDraft g;
  g.truth.group_id = padded('G', index + 1, 4);
  const double plan = draw.uniform();
  g.truth.plan_type = plan < 0.5 ? "PPO" : plan < 0.8 ? "HMO" : "EPO";
  g.truth.renewal_date =
      cfg.dynamic_renewals ? cfg.first_renewal.add_months(draw.integer(0, cfg.renewal_months - 1)) : cfg.fixed_renewal;

  const double lognormal = std::exp(draw.normal(cfg.group_size_mu, cfg.group_size_sigma));
  const int size = std::max(cfg.min_group_size, static_cast<int>(std::lround(lognormal)));
  const double group_frailty = std::exp(draw.normal(0.0, cfg.group_frailty_sigma));
  const double group_burden = std::exp(draw.normal(0.0, cfg.group_burden_sigma));
  // Per-group churn intensity so that groups differ in growth.
  const double drop = std::min(1.0, cfg.monthly_drop * draw.uniform(0.0, 2.0));
  const double add = std::min(1.0, cfg.monthly_add * draw.uniform(0.0, 2.0));
  const Date end = horizon_end(cfg);

  auto leave_date = [&](Date from) {
    const int months = count_month_starts({from.first_of_month(), end});
    for (int k = 1; k < months; ++k) {
      if (draw.chance(drop)) return from.first_of_month().add_months(k).add_days(-1);
    }
    return end;
  };
  for (int i = 0; i < size; ++i) {
    const Date leave = leave_date(cfg.horizon_start);
    g.members.push_back(draw_member(draw, cfg, cfg.horizon_start, leave, false, group_frailty, group_burden));
  }
  for (int k = 1; k < cfg.months_horizon; ++k) {
    const int joiners = draw.poisson(add * size);
    const Date join = cfg.horizon_start.add_months(k);
    for (int j = 0; j < joiners; ++j) {
      const Date leave = leave_date(join);
      g.members.push_back(draw_member(draw, cfg, join, leave, true, group_frailty, group_burden));
    }
  }
  for (auto& m : g.members) m.group_id = g.truth.group_id;
  return g;
}

}  // namespace

SynthManifest build_population(const SynthConfig& config) {
  config.validate();
  std::vector<GroupDraft> drafts(static_cast<std::size_t>(config.n_groups));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.n_groups; ++i) drafts[static_cast<std::size_t>(i)] = draw_group(config, static_cast<std::size_t>(i));

  SynthManifest manifest;
  manifest.seed = config.seed;
  for (auto& g : drafts) {
    manifest.groups.push_back(g.truth);
    for (auto& m : g.members) {
      m.member_id = padded('M', manifest.members.size() + 1, 6);
      manifest.members.push_back(std::move(m));
    }
  }
  return manifest;
}

SynthManifest inject_concessions(SynthManifest manifest, double fraction, std::uint64_t seed, double care_share,
                                 double scale_min, double scale_max, int blackout_months) {
  if (!(fraction >= 0 && fraction <= 1)) throw std::invalid_argument("inject_concessions: fraction must be in [0, 1]");
  auto rng = stream(seed, 2, 0);
  Draw draw(rng, false);
  const std::size_t n = manifest.groups.size();
  const auto labeled = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::map<std::string, std::size_t, std::less<>> by_id;
  for (std::size_t i = 0; i < n; ++i) {
    auto& g = manifest.groups[i];
    g.concession = false;
    g.concession_scale = 1;
    g.care_start = Date{};
    by_id[g.group_id] = i;
  }
  for (std::size_t k = 0; k < labeled; ++k) {
    auto& g = manifest.groups[order[k]];
    g.concession = true;
    g.concession_scale = draw.uniform(scale_min, scale_max);
    const Date cutoff = make_slice(g.group_id, g.renewal_date, SliceSpec{SliceMode::fixed, g.renewal_date, blackout_months})
                            .censor_cutoff();
    g.care_start = cutoff.first_of_month().add_months(-draw.integer(1, 5));
  }
  for (auto& m : manifest.members) {
    m.care_managed = false;
    const auto& g = manifest.groups[by_id.at(m.group_id)];
    if (!g.concession) continue;
    const Date slice = make_slice(g.group_id, g.renewal_date, SliceSpec{SliceMode::fixed, g.renewal_date, blackout_months})
                           .slice_date;
    const bool enrolled = m.start <= slice && slice <= m.end;
    m.care_managed = enrolled && draw.chance(care_share);
  }
  return manifest;
}

// Claims -----------------------------------------------------------------------

namespace {

struct MemberBuilder {
  const SynthConfig& cfg;
  const MemberTruth& truth;
  const GroupTruth& group;
  Draw& draw;
  PatientRecord record;
  int claim_count = 0;
  Money counterfactual;  // unscaled projection cost without care management

  MemberBuilder(const SynthConfig& c, const MemberTruth& t, const GroupTruth& g, Draw& d)
      : cfg(c), truth(t), group(g), draw(d) {
    record.member_id = t.member_id;
    record.birthday = t.birthday;
    record.sex = t.sex;
    record.coverages.push_back(CoverageSpan{t.group_id, t.start, t.end, g.plan_type});
  }

  double inflation(Date d) const {
    return std::pow(1.0 + cfg.annual_trend, days_between(cfg.horizon_start, d) / 365.25);
  }

  Date day_in_month(Date month) {
    const Date first = std::max(month, truth.start);
    const Date last = std::min(last_day_of_month(month), truth.end);
    return first.add_days(draw.integer(0, days_between(first, last)));
  }

  std::uint32_t add_term(Date d, CodeSystem system, std::string code) {
    record.terms.push_back(TermEvent{d, system, std::move(code), std::nullopt, std::nullopt});
    return static_cast<std::uint32_t>(record.terms.size() - 1);
  }

  struct ClaimSpec {
    Date date;
    double dollars = 0;
    CareSetting setting = CareSetting::outpatient;
    bool pharmacy = false;
    bool capitation = false;
    bool care_management = false;
    std::vector<std::string> revenue;
    std::vector<std::pair<CodeSystem, std::string>> codes;
  };

  void emit(ClaimSpec spec) {
    const bool projection = group.renewal_date <= spec.date;
    const bool scaled = truth.care_managed && projection && !spec.capitation && !spec.care_management;
    Money unscaled = Money::from_dollars(spec.capitation ? spec.dollars : spec.dollars * inflation(spec.date));
    Money allowed = scaled ? Money::from_dollars(unscaled.dollars() * group.concession_scale) : unscaled;
    if (allowed.cents <= 0) allowed.cents = 1;
    if (unscaled.cents <= 0) unscaled.cents = 1;
    const double share = spec.capitation ? 0.0 : cost_share(group.plan_type);
    const Money paid{static_cast<std::int64_t>(std::llround(static_cast<double>(allowed.cents) * (1.0 - share)))};

    const DateRange projection_window{group.renewal_date, group.renewal_date.add_months(12).add_days(-1)};
    if (!spec.care_management && projection_window.contains(spec.date)) counterfactual += unscaled;

    Claim c;
    c.claim_id = record.member_id + "-" + padded('C', static_cast<std::size_t>(++claim_count), 4).substr(1);
    c.encounter_date = spec.date;
    const int lag = spec.capitation ? 0 : spec.pharmacy ? draw.integer(0, 3) : draw.integer(10, 75);
    c.paid_date = spec.date.add_days(lag);
    c.allowed_amount = allowed;
    c.paid_amount = paid;
    c.care_setting = spec.setting;
    c.is_pharmacy = spec.pharmacy;
    c.is_capitation = spec.capitation;
    c.revenue_codes = spec.revenue;
    for (auto& [system, code] : spec.codes) c.term_refs.push_back(add_term(spec.date, system, code));
    const bool reversible = !spec.capitation && !spec.pharmacy && !spec.care_management;
    const bool reverse = reversible && draw.chance(cfg.reversal_rate);
    record.claims.push_back(c);
    if (reverse) {
      Claim r = c;
      r.claim_id += "R";
      r.paid_date = c.paid_date.add_days(draw.integer(30, 150));
      r.allowed_amount = -allowed;
      r.paid_amount = -paid;
      r.term_refs.clear();
      for (auto& [system, code] : spec.codes) r.term_refs.push_back(add_term(spec.date, system, code));
      record.claims.push_back(std::move(r));
      if (!spec.care_management && projection_window.contains(spec.date)) counterfactual -= unscaled;
    }
  }

  void lab(Date d, const ConditionProfile& p, double value) {
    value = std::round(value * 10.0) / 10.0;
    TermEvent t{d, CodeSystem::LOINC, p.loinc, value,
                value > p.lab_high ? LabInterpretation::high : LabInterpretation::normal};
    record.terms.push_back(std::move(t));
  }

  void build() {
    const Date first_month = truth.start.first_of_month();
    const int months = count_month_starts({first_month, truth.end});
    const double f = truth.frailty;
    std::vector<double> lab_offset;
    for (const auto& cond : truth.conditions) {
      const auto& p = cfg.conditions[static_cast<std::size_t>(cond.profile)];
      lab_offset.push_back(p.loinc.empty() ? 0.0 : draw.normal(0.0, p.lab_sd * 0.5));
    }
    for (int k = 0; k < months; ++k) {
      const Date month = first_month.add_months(k);
      if (group.plan_type == "HMO") {
        emit({std::max(month, truth.start), kCapitationMonthly, CareSetting::primary, false, true, false, {}, {}});
      }
      if (draw.chance(std::min(1.0, 0.25 * std::sqrt(f)))) {
        emit({day_in_month(month), draw.cost(4, 35), CareSetting::primary, false, false, false, {},
              {{CodeSystem::CPT, "99213"}, {CodeSystem::ICD10, draw.chance(0.5) ? "Z00.00" : "J06.9"}}});
      }
      if (draw.chance(std::min(1.0, 0.08 * f))) {
        emit({day_in_month(month), draw.cost(1.2, 800), CareSetting::outpatient, false, false, false, {"0510"},
              {{CodeSystem::CPT, "99203"}, {CodeSystem::ICD10, draw.chance(0.5) ? "M54.5" : "R10.9"}}});
      }
      if (draw.chance(std::min(1.0, 0.015 * f))) {
        emit({day_in_month(month), draw.cost(1.5, 1000), CareSetting::emergency, false, false, false, {"0450"},
              {{CodeSystem::CPT, "99284"}, {CodeSystem::ICD10, "R07.9"}}});
      }
      if (k % 3 == 0 && draw.chance(std::min(1.0, 0.3 * std::sqrt(f)))) {
        emit({day_in_month(month), draw.cost(1.0, 90), CareSetting::ancillary, true, false, false, {},
              {{CodeSystem::NDC, "00093-0058"}}});
      }
      for (std::size_t ci = 0; ci < truth.conditions.size(); ++ci) condition_month(month, ci, lab_offset[ci]);
      for (const auto& s : truth.shocks) {
        if (s == month) shock(month);
      }
      for (const auto& p : truth.pregnancies) pregnancy_month(month, p);
      if (truth.care_managed && month >= group.care_start) {
        emit({day_in_month(month), kCareManagementFee, CareSetting::primary, false, false, true, {},
              {{CodeSystem::CPT, kCareManagementCode}}});
      }
    }
    normalize(record);
  }

  void condition_month(Date month, std::size_t ci, double offset) {
    const auto& cond = truth.conditions[ci];
    const auto& p = cfg.conditions[static_cast<std::size_t>(cond.profile)];
    if (month < cond.onset) return;
    const int age_months = count_month_starts({cond.onset, month}) - 1;
    if (p.duration_months > 0 && age_months >= p.duration_months) return;
    double severity = 1.0;
    if (!p.loinc.empty()) {
      const double value = p.lab_mean + offset + cond.lab_drift * age_months / 12.0;
      severity = 1.0 + 0.6 * std::max(0.0, (value - p.lab_mean) / p.lab_sd);
      if (age_months % 3 == 0) {
        const Date d = day_in_month(month);
        lab(d, p, value + draw.normal(0.0, p.lab_sd * 0.1));
        emit({d, draw.cost(2, 20), CareSetting::ancillary, false, false, false, {"0300"},
              {{CodeSystem::CPT, p.cpt.back()}, {CodeSystem::ICD10, p.icd10.front()}}});
      }
    }
    // Acute admissions grow with lab severity, so worsening trajectories cost more later.
    if (!p.loinc.empty() && draw.chance(std::min(1.0, 0.003 * severity * severity * severity))) {
      emit({day_in_month(month), draw.cost(2, 7000), CareSetting::inpatient, false, false, false, {"0120"},
            {{CodeSystem::ICD10, p.icd10.front()}, {CodeSystem::CPT, "99223"}}});
    }
    if (draw.chance(std::min(1.0, p.visit_probability * std::sqrt(severity)))) {
      emit({day_in_month(month), draw.cost(p.visit_shape, p.visit_scale) * severity, CareSetting::specialty, false,
            false, false, {}, {{CodeSystem::CPT, p.cpt.front()}, {CodeSystem::ICD10, draw.pick(p.icd10)}}});
    }
    if (p.pharmacy_monthly > 0 && age_months % 3 == 0) {
      emit({day_in_month(month), draw.cost(4, p.pharmacy_monthly * 3 / 4) * severity, CareSetting::ancillary, true,
            false, false, {}, {{CodeSystem::NDC, draw.pick(p.ndc)}}});
    }
  }

  void shock(Date month) {
    const bool fracture = draw.chance(0.5);
    emit({day_in_month(month), draw.cost(1.5, 18000), CareSetting::inpatient, false, false, false,
          {fracture ? "0360" : "0450", "0120"},
          {{CodeSystem::ICD10, fracture ? "S72.001A" : "K35.80"}, {CodeSystem::CPT, fracture ? "27236" : "44970"}}});
  }

  void pregnancy_month(Date month, Date conception) {
    if (month < conception) return;
    const int k = count_month_starts({conception, month}) - 1;
    if (k < 8) {
      if (k % 2 == 1) {
        emit({day_in_month(month), draw.cost(3, 60), CareSetting::specialty, false, false, false, {},
              {{CodeSystem::ICD10, "Z34.90"}, {CodeSystem::CPT, "59425"}}});
      }
    } else if (k == 8) {
      emit({day_in_month(month), draw.cost(6, 2000), CareSetting::inpatient, false, false, false, {"0720"},
            {{CodeSystem::ICD10, "O80"}, {CodeSystem::ICD10, "Z37.0"}, {CodeSystem::CPT, "59400"}}});
    }
  }
};

}  // namespace

SynthOutput realize(const SynthConfig& config, SynthManifest manifest) {
  config.validate();
  SynthOutput out;
  std::map<std::string, std::size_t, std::less<>> group_index;
  for (std::size_t i = 0; i < manifest.groups.size(); ++i) group_index[manifest.groups[i].group_id] = i;

  const std::size_t n = manifest.members.size();
  out.book.records.resize(n);
  std::vector<Money> counterfactual(n);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = manifest.members[i];
    auto rng = stream(config.seed, 3, i);
    Draw draw(rng, config.deterministic_costs);
    MemberBuilder b(config, m, manifest.groups[group_index.at(m.group_id)], draw);
    b.build();
    out.book.records[i] = std::move(b.record);
    counterfactual[i] = b.counterfactual;
  }
  std::stable_sort(out.book.records.begin(), out.book.records.end(),
                   [](const PatientRecord& a, const PatientRecord& b) { return a.member_id < b.member_id; });

  for (auto& g : manifest.groups) {
    g.members_at_slice = 0;
    g.experience_allowed = g.projection_allowed = g.counterfactual_projection_allowed = Money{};
    g.experience_member_months = g.projection_member_months = 0;
    out.renewals[g.group_id] = g.renewal_date;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = out.book.records[i];
    auto& g = manifest.groups[group_index.at(manifest.members[i].group_id)];
    const auto slice = make_slice(g.group_id, g.renewal_date,
                                  SliceSpec{SliceMode::fixed, g.renewal_date, config.blackout_months});
    if (rec.covered_by(g.group_id, slice.slice_date)) ++g.members_at_slice;
    g.experience_allowed += group_allowed(rec, g.group_id, slice.experience(), DateField::encounter);
    g.experience_member_months += enrolled_months(rec, g.group_id, slice.experience());
    g.projection_allowed += group_allowed(rec, g.group_id, slice.projection(), DateField::encounter);
    g.projection_member_months += enrolled_months(rec, g.group_id, slice.projection());
    g.counterfactual_projection_allowed += counterfactual[i];
  }
  out.manifest = std::move(manifest);
  return out;
}

SynthOutput generate(const SynthConfig& config) {
  auto manifest = build_population(config);
  manifest = inject_concessions(std::move(manifest), config.concession_fraction, config.seed,
                                config.care_management_share, config.concession_scale_min,
                                config.concession_scale_max, config.blackout_months);
  return realize(config, std::move(manifest));
}

// Manifest ---------------------------------------------------------------------

nlohmann::json SynthManifest::to_json() const {
  nlohmann::json j;
  j["format"] = "uwml-synth-manifest";
  j["version"] = 1;
  j["seed"] = seed;
  auto groups_json = nlohmann::json::array();
  for (const auto& g : groups) {
    groups_json.push_back({{"group_id", g.group_id},
                           {"renewal_date", g.renewal_date.iso()},
                           {"plan_type", g.plan_type},
                           {"concession", g.concession},
                           {"concession_scale", g.concession_scale},
                           {"care_start", g.concession ? g.care_start.iso() : ""},
                           {"members_at_slice", g.members_at_slice},
                           {"experience_allowed", g.experience_allowed.str()},
                           {"experience_member_months", g.experience_member_months},
                           {"projection_allowed", g.projection_allowed.str()},
                           {"projection_member_months", g.projection_member_months},
                           {"projection_pmpm", g.projection_pmpm()},
                           {"counterfactual_projection_allowed", g.counterfactual_projection_allowed.str()},
                           {"concession_ratio", g.concession_ratio()}});
  }
  j["groups"] = std::move(groups_json);
  auto members_json = nlohmann::json::array();
  for (const auto& m : members) {
    auto conditions = nlohmann::json::array();
    for (const auto& c : m.conditions) {
      conditions.push_back({{"profile", c.profile}, {"onset", c.onset.iso()}, {"lab_drift", c.lab_drift}});
    }
    auto dates = [](const std::vector<Date>& ds) {
      auto a = nlohmann::json::array();
      for (auto d : ds) a.push_back(d.iso());
      return a;
    };
    members_json.push_back({{"member_id", m.member_id},
                            {"group_id", m.group_id},
                            {"birthday", m.birthday.iso()},
                            {"sex", to_string(m.sex)},
                            {"start", m.start.iso()},
                            {"end", m.end.iso()},
                            {"frailty", m.frailty},
                            {"joiner", m.joiner},
                            {"care_managed", m.care_managed},
                            {"conditions", std::move(conditions)},
                            {"pregnancies", dates(m.pregnancies)},
                            {"shocks", dates(m.shocks)}});
  }
  j["members"] = std::move(members_json);
  return j;
}

SynthManifest SynthManifest::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "uwml-synth-manifest") throw std::invalid_argument("not a synth manifest");
  auto money = [](const nlohmann::json& v) {
    auto m = Money::parse(v.get<std::string>());
    if (!m) throw std::invalid_argument("manifest: bad amount");
    return *m;
  };
  SynthManifest out;
  out.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& g : j.at("groups")) {
    GroupTruth t;
    t.group_id = g.at("group_id").get<std::string>();
    t.renewal_date = Date::parse(g.at("renewal_date").get<std::string>());
    t.plan_type = g.at("plan_type").get<std::string>();
    t.concession = g.at("concession").get<bool>();
    t.concession_scale = g.at("concession_scale").get<double>();
    if (t.concession) t.care_start = Date::parse(g.at("care_start").get<std::string>());
    t.members_at_slice = g.at("members_at_slice").get<int>();
    t.experience_allowed = money(g.at("experience_allowed"));
    t.experience_member_months = g.at("experience_member_months").get<int>();
    t.projection_allowed = money(g.at("projection_allowed"));
    t.projection_member_months = g.at("projection_member_months").get<int>();
    t.counterfactual_projection_allowed = money(g.at("counterfactual_projection_allowed"));
    out.groups.push_back(std::move(t));
  }
  for (const auto& m : j.at("members")) {
    MemberTruth t;
    t.member_id = m.at("member_id").get<std::string>();
    t.group_id = m.at("group_id").get<std::string>();
    t.birthday = Date::parse(m.at("birthday").get<std::string>());
    t.sex = parse_sex(m.at("sex").get<std::string>()).value_or(Sex::F);
    t.start = Date::parse(m.at("start").get<std::string>());
    t.end = Date::parse(m.at("end").get<std::string>());
    t.frailty = m.at("frailty").get<double>();
    t.joiner = m.at("joiner").get<bool>();
    t.care_managed = m.at("care_managed").get<bool>();
    for (const auto& c : m.at("conditions")) {
      t.conditions.push_back(ConditionOnset{c.at("profile").get<int>(), Date::parse(c.at("onset").get<std::string>()),
                                            c.at("lab_drift").get<double>()});
    }
    for (const auto& d : m.at("pregnancies")) t.pregnancies.push_back(Date::parse(d.get<std::string>()));
    for (const auto& d : m.at("shocks")) t.shocks.push_back(Date::parse(d.get<std::string>()));
    out.members.push_back(std::move(t));
  }
  return out;
}

void write_synth(const SynthOutput& out, const std::filesystem::path& dir, bool renewal_table) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string());
  }
  write_book(out.book, dir / "claims.csv", dir / "eligibility.csv", dir / "labs.csv");
  std::ofstream manifest(dir / "manifest.json");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  manifest << out.manifest.to_json().dump(1) << '\n';
  if (renewal_table) write_renewal_table(out.renewals, dir / "renewals.csv");
}

}  // namespace uwml
