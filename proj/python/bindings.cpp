// Python bindings for the tensor algebra, hyperplane normals, field files and
// the scenario pipeline. Fields are exposed as arrays of shape (nz, ny, nx, k).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "elastrecon/error.hpp"
#include "elastrecon/field_io.hpp"
#include "elastrecon/harness.hpp"
#include "elastrecon/hyperplane.hpp"
#include "elastrecon/rng.hpp"
#include "elastrecon/synth_fields.hpp"
#include "elastrecon/tensor_core.hpp"

namespace py = pybind11;
using namespace elastrecon;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat6 to_mat6(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != 6 || a.shape(1) != 6) throw py::value_error("expected a 6x6 array");
  Mat6 m;
  std::copy_n(a.data(), 36, m.a.begin());
  return m;
}

Array from_mat6(const Mat6& m) {
  Array out({6, 6});
  std::copy(m.a.begin(), m.a.end(), out.mutable_data());
  return out;
}

std::vector<Mat6> to_mat6_stack(const Array& a) {
  if (a.ndim() != 3 || a.shape(1) != 6 || a.shape(2) != 6) throw py::value_error("expected an array of shape (k, 6, 6)");
  std::vector<Mat6> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) std::copy_n(a.data() + 36 * i, 36, out[i].a.begin());
  return out;
}

Array from_field(const Field& f) {
  const auto& d = f.grid().dims;
  Array out({d[2], d[1], d[0], f.components()});
  std::copy(f.data().begin(), f.data().end(), out.mutable_data());
  return out;
}

Field to_field(const Array& a, double spacing, const Vec3& origin) {
  if (a.ndim() != 4) throw py::value_error("expected an array of shape (nz, ny, nx, k)");
  Grid g;
  g.dims = {static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(1)),
            static_cast<std::size_t>(a.shape(0))};
  g.h = spacing;
  g.origin = origin;
  g.validate();
  Field f(g, static_cast<std::size_t>(a.shape(3)));
  std::copy_n(a.data(), f.data().size(), f.data().begin());
  return f;
}

Scenario scenario_from(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("scenario is not valid JSON");
  return parse_scenario(j);
}

py::dict report_dict(const ReconReport& r, const Metrics& m, const Scenario& s) {
  py::dict out;
  out["report"] = report_json(m, r, s).dump();
  out["ctilde"] = from_field(r.ctilde);
  out["tau"] = from_field(r.tau);
  out["divc"] = from_field(r.divc);
  out["f1"] = from_field(r.f1);
  out["f2"] = from_field(r.f2);
  py::array_t<std::uint8_t> mask(static_cast<py::ssize_t>(r.mask.size()));
  std::copy(r.mask.begin(), r.mask.end(), mask.mutable_data());
  const auto& d = r.tau.grid().dims;
  out["mask"] = mask.reshape({d[2], d[1], d[0]});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Anisotropic elasticity reconstruction from internal displacement fields";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
  py::register_exception<SingularMatrixError>(m, "SingularMatrixError", PyExc_ArithmeticError);

  m.def("voigt_index", &voigt_index, py::arg("i"), py::arg("j"));
  m.def("mehrabadi", [](const Array& c) { return from_mat6(mehrabadi(Stiffness::from_matrix(to_mat6(c)))); });
  m.def("eigenvalues_sym6", [](const Array& a) {
    const auto v = eigenvalues_sym6(to_mat6(a));
    return std::vector<double>(v.begin(), v.end());
  });
  m.def("det6", [](const Array& a) { return determinant(to_mat6(a)); });
  m.def("stability_check", [](const Array& c) {
    const auto r = stability_check(Stiffness::from_matrix(to_mat6(c)));
    py::dict d;
    d["is_stable"] = r.is_stable;
    d["lambda_min"] = r.lambda_min;
    d["kappa_eff"] = r.kappa_eff;
    d["det_lower_bound"] = r.det_lower_bound;
    return d;
  });
  m.def(
      "ti_tensor",
      [](double a, double b, double c, double d, double e) { return from_mat6(ti_tensor({a, b, c, d, e}).matrix()); },
      py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"), py::arg("e"));
  m.def(
      "random_stable_stiffness",
      [](std::uint64_t seed, double lo, double hi) {
        SplitMix64 rng(seed);
        return from_mat6(random_stable_stiffness(rng, lo, hi).matrix());
      },
      py::arg("seed"), py::arg("lo") = 0.5, py::arg("hi") = 5.0);

  m.def("cross21", [](const Array& mats) { return from_mat6(cross21(to_mat6_stack(mats))); });
  m.def("nullspace_normal", [](const Array& mats) {
    const auto r = nullspace_normal(to_mat6_stack(mats));
    return py::make_tuple(from_mat6(r.normal), r.rank);
  });

  m.def("read_field", [](const std::string& path) {
    const Field f = read_field(std::filesystem::path(path));
    const auto& o = f.grid().origin;
    return py::make_tuple(from_field(f), f.grid().h, py::make_tuple(o[0], o[1], o[2]));
  });
  m.def(
      "write_field",
      [](const std::string& path, const Array& a, double spacing, std::array<double, 3> origin) {
        write_field(std::filesystem::path(path), to_field(a, spacing, origin));
      },
      py::arg("path"), py::arg("data"), py::arg("spacing"), py::arg("origin") = std::array<double, 3>{0.0, 0.0, 0.0});

  m.def(
      "run_scenario",
      [](const std::string& text) {
        const Scenario s = scenario_from(text);
        ReconReport r;
        Metrics mt;
        {
          py::gil_scoped_release release;
          const Dataset d = generate_dataset(s);
          r = run_reconstruction(d, s);
          mt = evaluate(d, r, s);
        }
        return report_dict(r, mt, s);
      },
      py::arg("scenario_json"));
  m.def(
      "reconstruct",
      [](const Array& strains, double spacing, const std::string& text) {
        if (strains.ndim() != 5 || strains.shape(4) != 6)
          throw py::value_error("expected strains of shape (n_fields, nz, ny, nx, 6)");
        Scenario s = text.empty() ? Scenario{} : scenario_from(text);
        Dataset d;
        const std::size_t per = static_cast<std::size_t>(strains.size() / strains.shape(0));
        for (py::ssize_t i = 0; i < strains.shape(0); ++i) {
          Array one({strains.shape(1), strains.shape(2), strains.shape(3), strains.shape(4)});
          std::copy_n(strains.data() + per * static_cast<std::size_t>(i), per, one.mutable_data());
          d.measurements.strains.push_back(to_field(one, spacing, {0.0, 0.0, 0.0}));
        }
        d.grid = d.measurements.strains.front().grid();
        d.measurements.grid = d.grid;
        d.symmetry = s.recon.symmetry;
        const ReconReport r = run_reconstruction(d, s);
        return report_dict(r, evaluate(d, r, s), s);
      },
      py::arg("strains"), py::arg("spacing"), py::arg("scenario_json") = std::string());
}
