#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "grafuse/cli.hpp"
#include "grafuse/error.hpp"
#include "grafuse/fusion.hpp"
#include "grafuse/io.hpp"
#include "grafuse/training.hpp"
#include "grafuse/transport.hpp"

namespace py = pybind11;
using namespace grafuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dims");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Tensor::from({rows, cols}, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

DiscreteCloud cloud(const Array& points, std::optional<std::vector<double>> weights) {
  DiscreteCloud c = DiscreteCloud::uniform(to_tensor(points));
  if (weights) c.weights = *weights;
  return c;
}

py::dict wr_dict(const WrResult& r) {
  py::dict d;
  d["distance"] = r.distance;
  d["cost"] = r.plan.cost;
  d["converged"] = r.plan.converged;
  d["iterations"] = r.plan.iterations;
  Array plan({r.plan.rows, r.plan.cols});
  std::copy(r.plan.coupling.begin(), r.plan.coupling.end(), plan.mutable_data());
  d["plan"] = plan;
  return d;
}

struct LoadedCheckpoint {
  std::shared_ptr<Model> model;
  std::uint64_t epoch = 0;
};

GraphContext context_for(const Model& m, const GraphBundle& b) {
  return GraphContext::build(b, m.required_hops(), m.config().max_neighbors);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Graph expert models, transport distances and prediction fusion";

  auto base = py::register_exception<Error>(m, "GrafuseError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());

  py::class_<GraphBundle>(m, "Bundle")
      .def_readonly("num_nodes", &GraphBundle::num_nodes)
      .def_readonly("num_classes", &GraphBundle::num_classes)
      .def_readonly("feature_dim", &GraphBundle::feature_dim)
      .def_property_readonly("num_edges", &GraphBundle::num_undirected_edges)
      .def_property_readonly("features", [](const GraphBundle& b) { return to_array(b.feature_tensor()); })
      .def_property_readonly("labels",
                             [](const GraphBundle& b) { return py::array_t<std::uint16_t>(b.labels.size(), b.labels.data()); })
      .def_property_readonly("edges",
                             [](const GraphBundle& b) {
                               py::array_t<std::uint32_t> out({b.edges.size(), std::size_t{2}});
                               auto* p = out.mutable_data();
                               for (const auto& [s, d] : b.edges) {
                                 *p++ = s;
                                 *p++ = d;
                               }
                               return out;
                             })
      .def("nodes", [](const GraphBundle& b, const std::string& split) {
        Split s = Split::kTest;
        if (split == "train") s = Split::kTrain;
        else if (split == "val") s = Split::kVal;
        else if (split != "test") throw ConfigError("split must be train, val or test");
        return b.nodes_in(s);
      });

  m.def("read_bundle", &read_bundle, py::arg("path"));
  m.def("write_bundle", &write_bundle, py::arg("bundle"), py::arg("path"));
  m.def(
      "generate_sbm",
      [](std::vector<std::size_t> blocks, double p_in, double p_out, std::size_t feature_dim, double signal,
         std::uint64_t seed) { return generate_sbm(blocks, p_in, p_out, feature_dim, signal, seed); },
      py::arg("block_sizes"), py::arg("p_in"), py::arg("p_out"), py::arg("feature_dim") = 16,
      py::arg("signal") = 3.0, py::arg("seed") = 0);

  py::class_<LoadedCheckpoint>(m, "Model")
      .def_property_readonly("kind", [](const LoadedCheckpoint& c) { return std::string(model_kind_name(c.model->kind())); })
      .def_readonly("epoch", &LoadedCheckpoint::epoch)
      .def_property_readonly("embedding_dim", [](const LoadedCheckpoint& c) { return c.model->embedding_dim(); })
      .def("logits", [](const LoadedCheckpoint& c, const GraphBundle& b) {
        return to_array(c.model->forward(context_for(*c.model, b), {}));
      })
      .def("embed", [](const LoadedCheckpoint& c, const GraphBundle& b) {
        return to_array(c.model->embed(context_for(*c.model, b), {}));
      });
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& dir) {
        auto loaded = load_checkpoint(dir);
        return LoadedCheckpoint{std::shared_ptr<Model>(std::move(loaded.model)), loaded.epoch};
      },
      py::arg("path"));

  m.def(
      "exact_wr",
      [](const Array& x, const Array& y, double p, std::optional<std::vector<double>> wx,
         std::optional<std::vector<double>> wy) { return wr_dict(exact_wr(cloud(x, wx), cloud(y, wy), p)); },
      py::arg("x"), py::arg("y"), py::arg("p") = 2.0, py::arg("x_weights") = py::none(),
      py::arg("y_weights") = py::none());
  m.def(
      "sinkhorn_wr",
      [](const Array& x, const Array& y, double p, double epsilon, double epsilon_scale, std::size_t max_iters,
         double tol) {
        SinkhornOptions o;
        o.epsilon = epsilon;
        o.epsilon_scale = epsilon_scale;
        o.max_iters = max_iters;
        o.tol = tol;
        return wr_dict(sinkhorn_wr(DiscreteCloud::uniform(to_tensor(x)), DiscreteCloud::uniform(to_tensor(y)), p, o));
      },
      py::arg("x"), py::arg("y"), py::arg("p") = 2.0, py::arg("epsilon") = 0.0, py::arg("epsilon_scale") = 0.05,
      py::arg("max_iters") = 200, py::arg("tol") = 1e-6);

  m.def(
      "fixed_fuse",
      [](const Array& p, const Array& q, std::vector<double> base_gnn) {
        FusionPolicy policy = FusionPolicy::defaults(base_gnn.size());
        policy.base_gnn = std::move(base_gnn);
        return to_array(fixed_fuse(to_tensor(p), to_tensor(q), policy).probs);
      },
      py::arg("p_gnn"), py::arg("p_gat"), py::arg("base_gnn"));
  m.def(
      "adaptive_fuse", [](const Array& p, const Array& q) { return to_array(adaptive_fuse(to_tensor(p), to_tensor(q)).probs); },
      py::arg("p_gnn"), py::arg("p_gat"));
  m.def(
      "coefficient_of_variation",
      [](std::vector<double> v, bool sample) { return coefficient_of_variation(v, sample); }, py::arg("values"),
      py::arg("sample") = false);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "grafuse");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs a grafuse subcommand in-process and returns its exit code.");
}
