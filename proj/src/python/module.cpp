#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "rit/cli/app.hpp"
#include "rit/cli/config.hpp"
#include "rit/error.hpp"
#include "rit/metrics/metrics.hpp"
#include "rit/partition/partition.hpp"
#include "rit/sampling/sampling.hpp"

namespace py = pybind11;
using rit::nn::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, std::size_t cols, const char* what) {
  if (a.ndim() != 2 || (cols && static_cast<std::size_t>(a.shape(1)) != cols))
    throw py::value_error(std::string(what) + ": expected a 2-d array" +
                          (cols ? " with " + std::to_string(cols) + " columns" : std::string()));
  const std::size_t n = a.shape(0), m = a.shape(1);
  return Tensor({n, m}, std::vector<double>(a.data(), a.data() + n * m));
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out({t.dim(0), t.dim(1)});
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

rit::metrics::PanopticResult result_from(const std::vector<int>& instances) {
  rit::metrics::PanopticResult r;
  r.instances = instances;
  for (int id : instances) r.labels.push_back(id >= 0 ? 1 : 0);
  return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core: sampling, graph partitioning, panoptic metrics and the command line.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const rit::IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const rit::ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const rit::ContractError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "knn",
      [](const Array& query, const Array& source, std::size_t k) {
        const auto nb = rit::sampling::knn(to_tensor(query, 3, "query"), to_tensor(source, 3, "source"), k);
        py::array_t<std::int64_t> out({nb.rows, nb.k});
        std::copy(nb.indices.begin(), nb.indices.end(), out.mutable_data());
        return out;
      },
      py::arg("query"), py::arg("source"), py::arg("k"), "Indices of the k nearest source points, [Q, k].");
  m.def(
      "radius_neighbors",
      [](const Array& points, double r) { return rit::sampling::radius_neighbors(to_tensor(points, 3, "points"), r); },
      py::arg("points"), py::arg("r"), "Sorted pairs (i < j) within distance r.");
  m.def(
      "fps",
      [](const Array& points, std::size_t count, std::size_t seed_index) {
        return rit::sampling::fps(to_tensor(points, 3, "points"), count, seed_index);
      },
      py::arg("points"), py::arg("count"), py::arg("seed_index") = 0, "Farthest point sampling indices.");
  m.def(
      "idw_interpolate",
      [](const Array& coarse_points, const Array& coarse_features, const Array& fine_points, std::size_t k) {
        return to_array(rit::sampling::idw_interpolate(to_tensor(coarse_points, 3, "coarse_points"),
                                                       to_tensor(coarse_features, 0, "coarse_features"),
                                                       to_tensor(fine_points, 3, "fine_points"), k));
      },
      py::arg("coarse_points"), py::arg("coarse_features"), py::arg("fine_points"), py::arg("k") = 3,
      "Inverse-distance weighted features at the fine points.");

  m.def(
      "modularity",
      [](const Array& adjacency, const std::vector<int>& assignment) {
        const rit::partition::WeightedGraph g(to_tensor(adjacency, 0, "adjacency"));
        if (assignment.size() != g.size()) throw py::value_error("assignment length differs from the node count");
        return rit::partition::modularity(g, assignment);
      },
      py::arg("adjacency"), py::arg("assignment"));
  m.def(
      "partition_graph",
      [](const Array& adjacency) {
        return rit::partition::partition_graph(rit::partition::WeightedGraph(to_tensor(adjacency, 0, "adjacency")))
            .assignment;
      },
      py::arg("adjacency"), "Community id per node from recursive bisection and vertex moving.");
  m.def(
      "assign_instances",
      [](const Array& points, const Array& similarity, double r) {
        return rit::partition::assign_instances(to_tensor(points, 3, "points"), to_tensor(similarity, 0, "similarity"),
                                                r)
            .assignment;
      },
      py::arg("points"), py::arg("similarity"), py::arg("r") = 7.0,
      "Instance id per moving point from its pairwise similarity.");
  m.def(
      "brute_force_partition",
      [](const Array& adjacency) {
        const auto best =
            rit::partition::brute_force_partition(rit::partition::WeightedGraph(to_tensor(adjacency, 0, "adjacency")));
        return py::make_tuple(best.partition.assignment, best.q);
      },
      py::arg("adjacency"), "Optimal (assignment, Q) by exhaustive search; at most 12 nodes.");

  m.def(
      "panoptic_eval_json",
      [](const std::vector<int>& pred_instances, const std::vector<int>& gt_instances) {
        if (pred_instances.size() != gt_instances.size()) throw py::value_error("prediction and ground truth differ in length");
        return rit::metrics::panoptic_eval(result_from(pred_instances), result_from(gt_instances)).to_json();
      },
      py::arg("pred_instances"), py::arg("gt_instances"),
      "Report as JSON for one scan. Instance ids per point; -1 marks static points.");

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = rit::cli::run_app(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line; returns (exit code, stdout, stderr).");
  m.def(
      "config_json", [](const std::string& preset) {
        if (preset == "default") return rit::cli::to_json(rit::cli::PipelineConfig{});
        if (preset == "miniature") return rit::cli::to_json(rit::cli::miniature_config());
        throw py::value_error("preset must be 'default' or 'miniature'");
      },
      py::arg("preset") = "default");
}
