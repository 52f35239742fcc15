#include "elastrecon/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "elastrecon/error.hpp"
#include "elastrecon/field_io.hpp"
#include "elastrecon/rng.hpp"

namespace elastrecon {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kNoiseStream = 0xA5A5A5A5A5A5A5A5ULL;
constexpr const char* kDatasetFormat = "elastrecon-dataset-1";

[[noreturn]] void bad(const std::string& msg) { throw ConfigError(msg); }

void only_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) bad(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* key) { return k == key; }) == keys.end())
      bad(where + ": unknown key '" + k + "'");
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad(where + "." + key + ": " + e.what());
  }
}

template <class T>
void maybe(const json& j, const char* key, T& dst, const std::string& where) {
  if (j.contains(key)) dst = get<T>(j, key, where);
}

ScenarioKind parse_kind(const std::string& k) {
  if (k == "constant") return ScenarioKind::Constant;
  if (k == "ti") return ScenarioKind::TransverseIsotropic;
  if (k == "scaled-anisotropy") return ScenarioKind::ScaledAnisotropy;
  if (k == "near-constant") return ScenarioKind::NearConstant;
  if (k == "from-files") return ScenarioKind::FromFiles;
  bad("unknown scenario kind '" + k + "'");
}

std::string method_name(NormalMethod m) {
  switch (m) {
    case NormalMethod::Nullspace: return "nullspace";
    case NormalMethod::CrossprodSum: return "crossprod";
    case NormalMethod::Auto: return "auto";
  }
  return "auto";
}

NormalMethod parse_method(const std::string& m) {
  if (m == "nullspace") return NormalMethod::Nullspace;
  if (m == "crossprod") return NormalMethod::CrossprodSum;
  if (m == "auto") return NormalMethod::Auto;
  bad("unknown method '" + m + "' (expected nullspace, crossprod or auto)");
}

TauMethod parse_tau(const std::string& m) {
  if (m == "path") return TauMethod::Path;
  if (m == "poisson") return TauMethod::Poisson;
  bad("unknown tau method '" + m + "' (expected path or poisson)");
}

Symmetry parse_symmetry(const std::string& m) {
  if (m == "full") return Symmetry::Full;
  if (m == "ti") return Symmetry::TransverseIsotropic;
  bad("unknown symmetry '" + m + "' (expected full or ti)");
}

std::string symmetry_name(Symmetry s) { return s == Symmetry::Full ? "full" : "ti"; }

std::vector<double> parse_components(const json& j, const std::string& where) {
  std::vector<double> c;
  try {
    c = j.get<std::vector<double>>();
  } catch (const json::exception& e) {
    bad(where + ": " + e.what());
  }
  if (c.size() != kStiffnessComponents) bad(where + ": expected 21 stiffness components");
  for (double v : c)
    if (!std::isfinite(v)) bad(where + ": non-finite component");
  return c;
}

TIParams parse_ti(const json& j, const std::string& where) {
  TIParams t;
  if (j.is_array()) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 5) bad(where + ": expected 5 TI parameters [a, b, c, d, e]");
    t = {v[0], v[1], v[2], v[3], v[4]};
  } else {
    only_keys(j, {"a", "b", "c", "d", "e"}, where);
    t = {get<double>(j, "a", where), get<double>(j, "b", where), get<double>(j, "c", where), get<double>(j, "d", where),
         get<double>(j, "e", where)};
  }
  return t;
}

double bump(const Scenario& s, const Vec3& x) {
  double b = 1.0;
  for (std::size_t a = 0; a < 3; ++a) b *= std::sin(std::numbers::pi * x[a] / s.length);
  return b;
}

Vec3 bump_gradient(const Scenario& s, const Vec3& x) {
  const double k = std::numbers::pi / s.length;
  Vec3 sn, cs;
  for (std::size_t a = 0; a < 3; ++a) {
    sn[a] = std::sin(k * x[a]);
    cs[a] = std::cos(k * x[a]);
  }
  return {k * cs[0] * sn[1] * sn[2], k * sn[0] * cs[1] * sn[2], k * sn[0] * sn[1] * cs[2]};
}

Stiffness perturbation_tensor(const Scenario& s) {
  return s.perturbation ? Stiffness::from_components(*s.perturbation) : base_stiffness(s);
}

TIParams scenario_ti(const Scenario& s) {
  if (s.ti) return *s.ti;
  SplitMix64 rng(*s.random_seed);
  return random_ti_params(rng);
}

std::vector<QuadraticDisplacement> polynomial_fields(const Scenario& s, const Stiffness& c) {
  std::vector<QuadraticDisplacement> fields;
  for (const auto& f : linear_basis_fields()) fields.push_back(f);
  if (s.kind == ScenarioKind::TransverseIsotropic) {
    const auto [u7, u8] = ti_fields(scenario_ti(s));
    fields.push_back(u7);
    fields.push_back(u8);
    return fields;
  }
  const auto extra = s.extra == "full" ? general_family(c) : mixed_family(c, s.extra_count, s.seed);
  fields.insert(fields.end(), extra.begin(), extra.end());
  return fields;
}

Field sample_displacement(const Grid& g, const QuadraticDisplacement& f) {
  return Field::sample(g, 3, [&](const Vec3& x, std::span<double> out) {
    const auto v = eval_field(f, x);
    std::copy(v.begin(), v.end(), out.begin());
  });
}

void add_noise(Field& f, double eta, SplitMix64& rng) {
  double scale = 0.0;
  for (double v : f.data()) scale = std::max(scale, std::abs(v));
  scale *= eta;
  for (double& v : f.data()) v += scale * rng.gaussian();
}

std::string indexed_name(const char* stem, std::size_t i) {
  std::ostringstream os;
  os << stem << '_';
  if (i < 10) os << '0';
  os << i << ".efld";
  return os.str();
}

ordered_json vec_json(std::span<const double> v) {
  ordered_json a = ordered_json::array();
  for (double x : v) a.push_back(x);
  return a;
}

Field stiffness_truth_to_ctilde(const Field& c, Field* tau) {
  Field out(c.grid(), kStiffnessComponents);
  for (std::size_t n = 0; n < c.grid().nodes(); ++n) {
    const double t = std::pow(determinant(sym6_from_components(c.at(n))), 1.0 / 6.0);
    if (tau) (*tau)(n, 0) = t;
    for (std::size_t k = 0; k < kStiffnessComponents; ++k) out(n, k) = c(n, k) / t;
  }
  return out;
}

std::vector<std::uint8_t> evaluation_mask(const ReconReport& r, const Grid& g, double margin) {
  std::vector<std::uint8_t> m = r.mask;
  const double tol = 1e-9 * g.h;
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    const Vec3 x = g.point(n);
    for (std::size_t a = 0; a < 3; ++a) {
      const double lo = x[a] - g.origin[a];
      const double hi = g.origin[a] + g.h * static_cast<double>(g.dims[a] - 1) - x[a];
      if (lo < margin - tol || hi < margin - tol) m[n] |= 0x80;
    }
  }
  return m;
}

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::string csv_value(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Constant: return "constant";
    case ScenarioKind::TransverseIsotropic: return "ti";
    case ScenarioKind::ScaledAnisotropy: return "scaled-anisotropy";
    case ScenarioKind::NearConstant: return "near-constant";
    case ScenarioKind::FromFiles: return "from-files";
  }
  return "constant";
}

double Scenario::resolved_error_margin() const {
  if (error_margin >= 0.0) return error_margin;
  return variable_coefficients() ? 0.25 * length : 0.0;
}

Scenario parse_scenario(const json& j) {
  const std::string w = "scenario";
  only_keys(j, {"kind", "stiffness", "tau", "delta", "perturbation", "grid", "fields", "noise", "seed", "strain_order",
                "solver", "recon", "error_margin", "input", "sweep"},
            w);
  Scenario s;
  if (j.contains("kind")) s.kind = parse_kind(get<std::string>(j, "kind", w));
  maybe(j, "seed", s.seed, w);

  if (s.kind != ScenarioKind::FromFiles) {
    if (!j.contains("stiffness")) bad("scenario: a stiffness spec is required");
    const auto& st = j.at("stiffness");
    only_keys(st, {"components", "ti", "random_seed"}, "stiffness");
    if (st.size() != 1) bad("stiffness: give exactly one of components, ti, random_seed");
    if (st.contains("components")) s.components = parse_components(st.at("components"), "stiffness.components");
    if (st.contains("ti")) s.ti = parse_ti(st.at("ti"), "stiffness.ti");
    if (st.contains("random_seed")) s.random_seed = get<std::uint64_t>(st, "random_seed", "stiffness");
    if (s.kind == ScenarioKind::TransverseIsotropic && s.components) bad("ti scenario: use stiffness.ti or random_seed");
  }
  if (j.contains("tau")) {
    only_keys(j.at("tau"), {"amplitude"}, "tau");
    maybe(j.at("tau"), "amplitude", s.tau_amplitude, "tau");
  }
  maybe(j, "delta", s.delta, w);
  if (j.contains("perturbation")) s.perturbation = parse_components(j.at("perturbation"), "perturbation");
  if (j.contains("grid")) {
    only_keys(j.at("grid"), {"n", "length"}, "grid");
    maybe(j.at("grid"), "n", s.n, "grid");
    maybe(j.at("grid"), "length", s.length, "grid");
  }
  if (j.contains("fields")) {
    only_keys(j.at("fields"), {"extra", "count"}, "fields");
    maybe(j.at("fields"), "extra", s.extra, "fields");
    maybe(j.at("fields"), "count", s.extra_count, "fields");
  }
  if (j.contains("noise")) {
    const auto& nz = j.at("noise");
    only_keys(nz, {"eta", "target"}, "noise");
    maybe(nz, "eta", s.eta, "noise");
    std::string target = "strain";
    maybe(nz, "target", target, "noise");
    if (target != "strain" && target != "displacement") bad("noise.target must be strain or displacement");
    s.displacement_noise = target == "displacement";
  }
  maybe(j, "strain_order", s.strain_order, w);
  if (j.contains("solver")) {
    only_keys(j.at("solver"), {"tol", "max_iter"}, "solver");
    maybe(j.at("solver"), "tol", s.solver_tol, "solver");
    maybe(j.at("solver"), "max_iter", s.solver_max_iter, "solver");
  }
  if (s.kind == ScenarioKind::TransverseIsotropic) s.recon.symmetry = Symmetry::TransverseIsotropic;
  if (j.contains("recon")) {
    const auto& r = j.at("recon");
    const std::string rw = "recon";
    only_keys(r, {"c0", "c1", "fd_order", "subset_cap", "method", "tau_method", "symmetry", "base_point", "tau_ref",
                  "cg_tol", "cg_max_iter", "threads"},
              rw);
    maybe(r, "c0", s.recon.c0, rw);
    maybe(r, "c1", s.recon.c1, rw);
    maybe(r, "fd_order", s.recon.fd_order, rw);
    maybe(r, "subset_cap", s.recon.subset_cap, rw);
    if (r.contains("method")) s.recon.method = parse_method(get<std::string>(r, "method", rw));
    if (r.contains("tau_method")) s.recon.tau_method = parse_tau(get<std::string>(r, "tau_method", rw));
    if (r.contains("symmetry")) s.recon.symmetry = parse_symmetry(get<std::string>(r, "symmetry", rw));
    if (r.contains("base_point")) {
      const auto bp = get<std::vector<std::size_t>>(r, "base_point", rw);
      if (bp.size() != 3) bad("recon.base_point: expected 3 node indices");
      s.recon.base_point = std::array<std::size_t, 3>{bp[0], bp[1], bp[2]};
    }
    maybe(r, "tau_ref", s.recon.tau_ref, rw);
    maybe(r, "cg_tol", s.recon.cg_tol, rw);
    maybe(r, "cg_max_iter", s.recon.cg_max_iter, rw);
    maybe(r, "threads", s.recon.threads, rw);
  }
  maybe(j, "error_margin", s.error_margin, w);
  maybe(j, "input", s.input, w);
  if (j.contains("sweep")) {
    only_keys(j.at("sweep"), {"param", "values"}, "sweep");
    s.sweep_param = get<std::string>(j.at("sweep"), "param", "sweep");
    s.sweep_values = get<std::vector<double>>(j.at("sweep"), "values", "sweep");
    if (s.sweep_param != "eta" && s.sweep_param != "n" && s.sweep_param != "h" && s.sweep_param != "delta")
      bad("sweep.param must be eta, n, h or delta");
  }

  if (s.n < 3) bad("grid.n must be at least 3");
  if (!(s.length > 0.0)) bad("grid.length must be positive");
  if (!(s.eta >= 0.0)) bad("noise.eta must be non-negative");
  if (s.extra != "mixed" && s.extra != "full") bad("fields.extra must be mixed or full");
  if (s.kind != ScenarioKind::TransverseIsotropic && s.kind != ScenarioKind::FromFiles && s.extra == "mixed" &&
      s.extra_count < 7)
    bad("fields.count: the 21-parameter problem needs at least 7 additional solutions");
  if (s.strain_order != 2 && s.strain_order != 4) bad("strain_order must be 2 or 4");
  if (!(s.solver_tol > 0.0)) bad("solver.tol must be positive");
  if (s.kind == ScenarioKind::ScaledAnisotropy && !(std::abs(s.tau_amplitude) < 1.0))
    bad("tau.amplitude must lie in (-1, 1)");
  if (s.kind == ScenarioKind::FromFiles && s.input.empty()) bad("from-files scenario: input directory required");
  try {
    s.recon.validate();
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  return s;
}

Scenario load_scenario(const fs::path& path) {
  std::ifstream is(path);
  if (!is) bad("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    bad("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_scenario(j);
}

ordered_json scenario_to_json(const Scenario& s) {
  ordered_json j;
  j["kind"] = kind_name(s.kind);
  if (s.kind != ScenarioKind::FromFiles) {
    ordered_json st;
    if (s.components) st["components"] = vec_json(*s.components);
    if (s.ti) st["ti"] = {s.ti->a, s.ti->b, s.ti->c, s.ti->d, s.ti->e};
    if (s.random_seed) st["random_seed"] = *s.random_seed;
    j["stiffness"] = st;
  }
  if (s.kind == ScenarioKind::ScaledAnisotropy) j["tau"] = {{"amplitude", s.tau_amplitude}};
  if (s.kind == ScenarioKind::NearConstant) {
    j["delta"] = s.delta;
    if (s.perturbation) j["perturbation"] = vec_json(*s.perturbation);
  }
  j["grid"] = {{"n", s.n}, {"length", s.length}};
  j["fields"] = {{"extra", s.extra}, {"count", s.extra_count}};
  j["noise"] = {{"eta", s.eta}, {"target", s.displacement_noise ? "displacement" : "strain"}};
  j["seed"] = s.seed;
  j["strain_order"] = s.strain_order;
  j["solver"] = {{"tol", s.solver_tol}, {"max_iter", s.solver_max_iter}};
  ordered_json r;
  r["c0"] = s.recon.c0;
  r["c1"] = s.recon.c1;
  r["fd_order"] = s.recon.fd_order;
  r["subset_cap"] = s.recon.subset_cap;
  r["method"] = method_name(s.recon.method);
  r["tau_method"] = s.recon.tau_method == TauMethod::Path ? "path" : "poisson";
  r["symmetry"] = symmetry_name(s.recon.symmetry);
  if (s.recon.base_point) r["base_point"] = {(*s.recon.base_point)[0], (*s.recon.base_point)[1], (*s.recon.base_point)[2]};
  r["tau_ref"] = s.recon.tau_ref;
  r["cg_tol"] = s.recon.cg_tol;
  r["cg_max_iter"] = s.recon.cg_max_iter;
  r["threads"] = s.recon.threads;
  j["recon"] = r;
  j["error_margin"] = s.error_margin;
  if (!s.input.empty()) j["input"] = s.input;
  if (!s.sweep_param.empty()) j["sweep"] = {{"param", s.sweep_param}, {"values", s.sweep_values}};
  return j;
}

Stiffness base_stiffness(const Scenario& s) {
  if (s.kind == ScenarioKind::FromFiles) bad("from-files scenarios have no stiffness spec");
  Stiffness c;
  if (s.components) {
    c = Stiffness::from_components(*s.components);
  } else if (s.ti) {
    c = ti_tensor(*s.ti);
  } else if (s.random_seed) {
    SplitMix64 rng(*s.random_seed);
    c = s.kind == ScenarioKind::TransverseIsotropic ? ti_tensor(random_ti_params(rng)) : random_stable_stiffness(rng);
  } else {
    bad("scenario: missing stiffness spec");
  }
  const auto rep = stability_check(c);
  if (!rep.is_stable) {
    std::ostringstream os;
    os << "stiffness is not stable: lambda_min(c') = " << format_double(rep.lambda_min);
    bad(os.str());
  }
  return c;
}

Stiffness stiffness_at_point(const Scenario& s, const Vec3& x) {
  const Stiffness c = base_stiffness(s);
  switch (s.kind) {
    case ScenarioKind::ScaledAnisotropy: return c.scaled(1.0 + s.tau_amplitude * bump(s, x));
    case ScenarioKind::NearConstant:
      return Stiffness::from_matrix(c.matrix() + perturbation_tensor(s).matrix() * (s.delta * bump(s, x)));
    default: return c;
  }
}

std::array<double, 18> divc_at_point(const Scenario& s, const Vec3& x) {
  std::array<Mat6, 3> dc{};
  if (s.variable_coefficients()) {
    const Vec3 gb = bump_gradient(s, x);
    const Mat6 t = s.kind == ScenarioKind::ScaledAnisotropy ? base_stiffness(s).matrix() * s.tau_amplitude
                                                             : perturbation_tensor(s).matrix() * s.delta;
    for (std::size_t a = 0; a < 3; ++a) dc[a] = t * gb[a];
  }
  return divc_from_derivatives(dc);
}

Dataset generate_dataset(const Scenario& s, bool force_solve) {
  if (s.kind == ScenarioKind::FromFiles) bad("from-files scenarios cannot be generated; use recon on the directory");
  const Stiffness c0 = base_stiffness(s);
  // Evaluate the spatial tensor without re-deriving the base tensor per node.
  Scenario fixed = s;
  const auto comps = c0.components();
  fixed.components = std::vector<double>(comps.begin(), comps.end());
  fixed.ti.reset();
  fixed.random_seed.reset();
  if (s.kind == ScenarioKind::NearConstant && !s.perturbation) fixed.perturbation = fixed.components;

  Dataset d;
  d.grid = Grid::cube(s.n, s.length);
  d.symmetry = s.recon.symmetry;
  const auto fields = polynomial_fields(s, c0);
  const bool solve = force_solve || s.variable_coefficients();

  const Field c_true = stiffness_field(d.grid, [&](const Vec3& x) { return stiffness_at_point(fixed, x); });
  d.c_true = c_true;
  d.divc_true = Field::sample(d.grid, 18, [&](const Vec3& x, std::span<double> out) {
    const auto v = divc_at_point(fixed, x);
    std::copy(v.begin(), v.end(), out.begin());
  });

  d.measurements.grid = d.grid;
  if (!solve) {
    d.measurements = MeasurementSet::sample(d.grid, fields);
    for (const auto& f : fields) d.displacements.push_back(sample_displacement(d.grid, f));
  } else {
    ForwardProblem p;
    p.stiffness = c_true;
    p.boundary = Field(d.grid, 3);
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      bad(e.what());
    }
    for (const auto& f : fields) {
      p.boundary = sample_displacement(d.grid, f);
      SolveOptions opt;
      opt.tol = s.solver_tol;
      opt.max_iter = s.solver_max_iter;
      opt.threads = s.recon.threads;
      opt.initial_guess = &p.boundary;
      auto res = solve_dirichlet(p, opt);
      d.solver_stats.emplace_back(res.iterations, res.relative_residual);
      d.measurements.strains.push_back(strain_of(res.u, s.strain_order));
      d.displacements.push_back(std::move(res.u));
    }
  }

  if (s.eta > 0.0) {
    SplitMix64 rng(s.seed ^ kNoiseStream);
    d.measurements.analytic.clear();
    if (s.displacement_noise) {
      for (std::size_t i = 0; i < d.displacements.size(); ++i) {
        add_noise(d.displacements[i], s.eta, rng);
        d.measurements.strains[i] = strain_of(d.displacements[i], s.strain_order);
      }
    } else {
      for (auto& e : d.measurements.strains) add_noise(e, s.eta, rng);
    }
  }
  return d;
}

void write_dataset(const Dataset& d, const Scenario& s, const fs::path& dir) {
  fs::create_directories(dir);
  ordered_json m;
  m["format"] = kDatasetFormat;
  m["symmetry"] = symmetry_name(d.symmetry);
  m["grid"] = {{"dims", {d.grid.dims[0], d.grid.dims[1], d.grid.dims[2]}},
               {"spacing", d.grid.h},
               {"origin", {d.grid.origin[0], d.grid.origin[1], d.grid.origin[2]}}};
  ordered_json sols = ordered_json::array();
  const bool analytic = d.measurements.is_analytic();
  for (std::size_t i = 0; i < d.measurements.strains.size(); ++i) {
    ordered_json e;
    if (i < d.displacements.size()) {
      e["displacement"] = indexed_name("u", i);
      write_field(dir / indexed_name("u", i), d.displacements[i]);
    }
    e["strain"] = indexed_name("eps", i);
    write_field(dir / indexed_name("eps", i), d.measurements.strains[i]);
    if (analytic) {
      const auto& a = *d.measurements.analytic[i];
      e["analytic"] = {{"base", vec_json(a.base)},
                       {"gradient", {vec_json(a.gradient.v1), vec_json(a.gradient.v2), vec_json(a.gradient.v3)}}};
    }
    if (i < d.solver_stats.size())
      e["solver"] = {{"iterations", d.solver_stats[i].first}, {"relative_residual", d.solver_stats[i].second}};
    sols.push_back(e);
  }
  m["solutions"] = sols;
  if (d.c_true) {
    m["c_true"] = "c_true.efld";
    write_field(dir / "c_true.efld", *d.c_true);
  }
  if (d.divc_true) {
    m["divc_true"] = "divc_true.efld";
    write_field(dir / "divc_true.efld", *d.divc_true);
  }
  m["scenario"] = scenario_to_json(s);
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << m.dump(2) << '\n';
  if (!os) bad("cannot write manifest in " + dir.string());
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) bad("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    bad(std::string("manifest.json is not valid JSON: ") + e.what());
  }
  Dataset d;
  try {
    if (m.value("format", std::string()) != kDatasetFormat) bad("manifest.json: unknown format");
    d.symmetry = parse_symmetry(m.value("symmetry", std::string("full")));
    const auto& g = m.at("grid");
    const auto dims = g.at("dims").get<std::vector<std::size_t>>();
    const auto origin = g.at("origin").get<std::vector<double>>();
    if (dims.size() != 3 || origin.size() != 3) bad("manifest.json: grid dims and origin need 3 entries");
    d.grid.dims = {dims[0], dims[1], dims[2]};
    d.grid.origin = {origin[0], origin[1], origin[2]};
    d.grid.h = g.at("spacing").get<double>();
    d.grid.validate();
    d.measurements.grid = d.grid;

    const auto load = [&](const std::string& name, std::size_t comps) {
      Field f = read_field(dir / name);
      if (!(f.grid() == d.grid)) bad(name + ": grid differs from the manifest");
      if (f.components() != comps) bad(name + ": unexpected component count");
      return f;
    };
    bool all_analytic = true;
    for (const auto& e : m.at("solutions")) {
      d.measurements.strains.push_back(load(e.at("strain").get<std::string>(), 6));
      if (e.contains("displacement")) d.displacements.push_back(load(e.at("displacement").get<std::string>(), 3));
      if (e.contains("analytic")) {
        AffineStrain a;
        const auto base = e.at("analytic").at("base").get<std::vector<double>>();
        const auto grad = e.at("analytic").at("gradient").get<std::vector<std::vector<double>>>();
        if (base.size() != 6 || grad.size() != 3) bad("manifest.json: malformed analytic entry");
        std::copy(base.begin(), base.end(), a.base.begin());
        for (std::size_t k = 0; k < 3; ++k) {
          if (grad[k].size() != 6) bad("manifest.json: malformed analytic gradient");
          std::copy(grad[k].begin(), grad[k].end(), a.gradient[k].begin());
        }
        d.measurements.analytic.emplace_back(a);
      } else {
        all_analytic = false;
        d.measurements.analytic.emplace_back(std::nullopt);
      }
      if (e.contains("solver"))
        d.solver_stats.emplace_back(e.at("solver").at("iterations").get<std::size_t>(),
                                    e.at("solver").at("relative_residual").get<double>());
    }
    if (!all_analytic) d.measurements.analytic.clear();
    if (m.contains("c_true")) d.c_true = load(m.at("c_true").get<std::string>(), kStiffnessComponents);
    if (m.contains("divc_true")) d.divc_true = load(m.at("divc_true").get<std::string>(), 18);
  } catch (const json::exception& e) {
    bad(std::string("manifest.json: ") + e.what());
  } catch (const FieldFormatError& e) {
    bad(e.what());
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  return d;
}

ReconReport run_reconstruction(const Dataset& d, const Scenario& s) {
  ReconConfig cfg = s.recon;
  cfg.symmetry = d.symmetry;
  if (d.c_true) {
    const auto bp = cfg.base_point.value_or(std::array<std::size_t, 3>{d.grid.dims[0] / 2, d.grid.dims[1] / 2, d.grid.dims[2] / 2});
    if (bp[0] < d.grid.dims[0] && bp[1] < d.grid.dims[1] && bp[2] < d.grid.dims[2]) {
      const double det = determinant(sym6_from_components(d.c_true->at(d.grid.index(bp[0], bp[1], bp[2]))));
      if (det > 0.0) cfg.tau_ref = std::pow(det, 1.0 / 6.0);
    }
  }
  return reconstruct(d.measurements, cfg);
}

Metrics evaluate(const Dataset& d, const ReconReport& r, const Scenario& s) {
  Metrics m;
  m.masked_fraction = r.masked_fraction;
  m.f1_min = std::numeric_limits<double>::infinity();
  m.f2_min = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < d.grid.nodes(); ++n) {
    m.f1_min = std::min(m.f1_min, r.f1(n, 0));
    m.f2_min = std::min(m.f2_min, r.f2(n, 0));
  }
  const auto mask = evaluation_mask(r, d.grid, s.resolved_error_margin());
  const bool any_live = std::any_of(mask.begin(), mask.end(), [](auto v) { return v == 0; });
  if (!any_live) return m;
  if (d.c_true) {
    Field tau_true(d.grid, 1);
    const Field ct = stiffness_truth_to_ctilde(*d.c_true, &tau_true);
    m.err_ctilde_p0 = error_norm(r.ctilde, ct, 0, &mask);
    m.err_ctilde_p1 = error_norm(r.ctilde, ct, 1, &mask);
    m.err_tau_p0 = error_norm(r.tau, tau_true, 0, &mask);
    m.err_tau_p1 = error_norm(r.tau, tau_true, 1, &mask);
  }
  if (d.divc_true) {
    m.err_divc_p0 = error_norm(r.divc, *d.divc_true, 0, &mask);
    m.err_divc_p1 = error_norm(r.divc, *d.divc_true, 1, &mask);
  }
  return m;
}

ordered_json report_json(const Metrics& m, const ReconReport& r, const Scenario& s) {
  ordered_json j;
  j["f1_min"] = m.f1_min;
  j["f2_min"] = m.f2_min;
  j["masked_fraction"] = m.masked_fraction;
  j["err_ctilde_p0"] = optional_json(m.err_ctilde_p0);
  j["err_ctilde_p1"] = optional_json(m.err_ctilde_p1);
  j["err_tau_p0"] = optional_json(m.err_tau_p0);
  j["err_tau_p1"] = optional_json(m.err_tau_p1);
  j["err_divc_p0"] = optional_json(m.err_divc_p0);
  j["err_divc_p1"] = optional_json(m.err_divc_p1);
  j["tau_components"] = r.tau_components;
  j["nodes"] = r.mask.size();
  j["error_margin"] = s.resolved_error_margin();
  j["config"] = scenario_to_json(s);
  return j;
}

namespace {

int generate_and_write(const Scenario& s, const fs::path& out, std::ostream& log, bool force_solve) {
  const Dataset d = generate_dataset(s, force_solve);
  write_dataset(d, s, out);
  log << "wrote " << d.measurements.strains.size() << " solutions on a " << d.grid.dims[0] << "x" << d.grid.dims[1] << "x"
      << d.grid.dims[2] << " grid to " << out.string() << '\n';
  for (std::size_t i = 0; i < d.solver_stats.size(); ++i)
    log << "  solution " << i << ": " << d.solver_stats[i].first << " CG iterations, relative residual "
        << format_double(d.solver_stats[i].second) << '\n';
  return kExitOk;
}

}  // namespace

int cmd_gen(const Scenario& s, const fs::path& out, std::ostream& log) { return generate_and_write(s, out, log, false); }

int cmd_solve(const Scenario& s, const fs::path& out, std::ostream& log) { return generate_and_write(s, out, log, true); }

int cmd_recon(const fs::path& in, const Scenario& s, const fs::path& out, std::ostream& log) {
  const Dataset d = read_dataset(in);
  const ReconReport r = run_reconstruction(d, s);
  const Metrics m = evaluate(d, r, s);
  fs::create_directories(out);
  write_field(out / "ctilde.efld", r.ctilde);
  write_field(out / "tau.efld", r.tau);
  write_field(out / "divc.efld", r.divc);
  write_field(out / "f1.efld", r.f1);
  write_field(out / "f2.efld", r.f2);
  Field mask(d.grid, 1);
  for (std::size_t n = 0; n < d.grid.nodes(); ++n) mask(n, 0) = r.mask[n];
  write_field(out / "mask.efld", mask);
  {
    std::ofstream os(out / "recon_report.json", std::ios::trunc);
    os << report_json(m, r, s).dump(2) << '\n';
  }
  log << "masked fraction " << format_double(m.masked_fraction) << ", F1 min " << format_double(m.f1_min) << ", F2 min "
      << format_double(m.f2_min) << '\n';
  if (m.err_ctilde_p0) log << "ctilde error " << format_double(*m.err_ctilde_p0) << '\n';
  if (m.err_tau_p0) log << "tau error " << format_double(*m.err_tau_p0) << '\n';
  if (m.err_divc_p0) log << "div C error " << format_double(*m.err_divc_p0) << '\n';
  if (m.masked_fraction > 0.1) {
    log << "hypotheses failed on more than 10% of the nodes\n";
    return kExitHypothesesFailed;
  }
  return kExitOk;
}

int cmd_check(const std::optional<Scenario>& s, const std::optional<fs::path>& in, std::ostream& log) {
  if (s && s->kind != ScenarioKind::FromFiles) {
    const Stiffness c = base_stiffness(*s);
    const auto rep = stability_check(c);
    log << "stiffness stable: lambda_min(c') = " << format_double(rep.lambda_min) << ", kappa_eff = "
        << format_double(rep.kappa_eff) << ", det(c) = " << format_double(determinant(c.matrix())) << '\n';
    if (s->variable_coefficients()) {
      ForwardProblem p;
      const Grid g = Grid::cube(s->n, s->length);
      p.stiffness = stiffness_field(g, [&](const Vec3& x) { return stiffness_at_point(*s, x); });
      p.boundary = Field(g, 3);
      try {
        p.validate();
      } catch (const std::invalid_argument& e) {
        bad(e.what());
      }
      log << "stiffness field stable at all " << g.nodes() << " nodes\n";
    }
  }
  if (in) {
    const Dataset d = read_dataset(*in);
    const Field f1 = f1_map(d.measurements);
    double f1_min = std::numeric_limits<double>::infinity();
    for (double v : f1.data()) f1_min = std::min(f1_min, v);
    log << "dataset: " << d.measurements.strains.size() << " solutions, " << d.grid.nodes() << " nodes, F1 min "
        << format_double(f1_min) << (d.measurements.is_analytic() ? ", analytic" : ", sampled") << '\n';
  }
  if (!s && !in) bad("check: give --config and/or an input directory");
  return kExitOk;
}

int cmd_bench(const Scenario& s, const fs::path& out, std::ostream& log) {
  if (s.sweep_param.empty() || s.sweep_values.empty()) bad("bench: the scenario needs a sweep {param, values}");
  std::ostringstream csv;
  csv << "param,value,kind,n,h,eta,delta,seed,method,tau_method,err_ctilde_p0,err_ctilde_p1,err_tau_p0,err_tau_p1,"
         "err_divc_p0,err_divc_p1,f1_min,f2_min,masked_fraction,runtime_s\n";
  for (double v : s.sweep_values) {
    Scenario run = s;
    if (s.sweep_param == "eta") {
      run.eta = v;
    } else if (s.sweep_param == "delta") {
      run.delta = v;
    } else if (s.sweep_param == "n") {
      run.n = static_cast<std::size_t>(std::llround(v));
    } else {
      if (!(v > 0.0)) bad("bench: h values must be positive");
      run.n = static_cast<std::size_t>(std::llround(s.length / v)) + 1;
    }
    if (run.n < 3) bad("bench: grid too coarse");
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = generate_dataset(run);
    const ReconReport r = run_reconstruction(d, run);
    const Metrics m = evaluate(d, r, run);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    csv << s.sweep_param << ',' << format_double(v) << ',' << kind_name(run.kind) << ',' << run.n << ','
        << format_double(d.grid.h) << ',' << format_double(run.eta) << ',' << format_double(run.delta) << ',' << run.seed
        << ',' << method_name(run.recon.resolved_method(d.measurements.extra())) << ','
        << (run.recon.tau_method == TauMethod::Path ? "path" : "poisson") << ',' << csv_value(m.err_ctilde_p0) << ','
        << csv_value(m.err_ctilde_p1) << ',' << csv_value(m.err_tau_p0) << ',' << csv_value(m.err_tau_p1) << ','
        << csv_value(m.err_divc_p0) << ',' << csv_value(m.err_divc_p1) << ',' << format_double(m.f1_min) << ','
        << format_double(m.f2_min) << ',' << format_double(m.masked_fraction) << ',' << format_double(secs) << '\n';
  }
  fs::create_directories(out);
  std::ofstream os(out / "bench.csv", std::ios::trunc);
  os << csv.str();
  log << csv.str();
  return kExitOk;
}

}  // namespace elastrecon
