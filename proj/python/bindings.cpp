#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "retro3d/attention.hpp"
#include "retro3d/pipeline.hpp"

namespace py = pybind11;
using namespace retro3d;

namespace {

py::array_t<double> as_array(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  py::array_t<double> out({rows, cols});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

conformer::Conformer conformer_from(const chem::MolGraph& g, py::array_t<double, py::array::c_style | py::array::forcecast> xyz) {
  if (xyz.ndim() != 2 || xyz.shape(1) != 3) throw std::invalid_argument("coordinates must have shape (atoms, 3)");
  if (static_cast<std::size_t>(xyz.shape(0)) != g.size()) throw std::invalid_argument("one coordinate row per atom required");
  conformer::Conformer c;
  auto r = xyz.unchecked<2>();
  for (py::ssize_t i = 0; i < r.shape(0); ++i) c.coords.push_back({r(i, 0), r(i, 1), r(i, 2)});
  return c;
}

py::dict report_dict(const pipeline::EvalReport& r) {
  py::dict d;
  d["ks"] = r.ks;
  d["accuracy"] = r.accuracy;
  d["validity"] = r.validity;
  d["examples"] = r.examples;
  return d;
}

}  // namespace

PYBIND11_MODULE(_retro3d, m) {
  m.doc() = "Retrosynthesis with 3D-aware attention";

  py::register_exception<chem::ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<conformer::ConformerError>(m, "ConformerError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("tokenize", [](const std::string& s) { return chem::token_texts(chem::tokenize(s)); }, py::arg("smiles"));
  m.def("canonical_key", py::overload_cast<std::string_view>(&chem::canonical_key), py::arg("smiles"));
  m.def("is_valid", &chem::is_valid, py::arg("smiles"));
  m.def("strip_maps", py::overload_cast<std::string_view>(&chem::strip_maps), py::arg("smiles"));
  m.def("root_align", [](const std::string& p, const std::string& r) { return chem::root_align(p, r).smiles; },
        py::arg("product"), py::arg("reactants"));
  m.def("write", [](const std::string& s, int root, bool maps) {
    return chem::write(chem::parse(s), root, {.atom_maps = maps});
  }, py::arg("smiles"), py::arg("root"), py::arg("atom_maps") = true);
  m.def("build_sam", [](const std::string& p, const std::string& r) {
    auto sam = chem::build_sam(p, r);
    std::vector<double> v(sam.entries.begin(), sam.entries.end());
    return as_array(v, sam.rows, sam.cols);
  }, py::arg("product"), py::arg("reactants"), "Rows are reactant tokens, columns product tokens.");
  m.def("dataset_filter", [](const std::string& line) {
    auto f = chem::dataset_filter(chem::split_reaction(line));
    py::dict d;
    d["keep"] = f.keep;
    d["reason"] = f.reason;
    d["reactants"] = f.cleaned.reactants;
    d["product"] = f.cleaned.product;
    return d;
  }, py::arg("reaction"));

  m.def("synthetic_conformer", [](const std::string& s, std::uint64_t seed) {
    auto c = conformer::synthetic_conformer(chem::parse(s), seed);
    std::vector<double> v;
    for (const auto& p : c.coords) v.insert(v.end(), p.begin(), p.end());
    return as_array(v, c.coords.size(), 3);
  }, py::arg("smiles"), py::arg("seed") = 0);
  m.def("distance_matrix", [](const std::string& s, py::array_t<double, py::array::c_style | py::array::forcecast> xyz) {
    auto tokens = chem::tokenize(s);
    auto c = conformer_from(chem::parse(tokens), xyz);
    auto dm = conformer::distance_matrix(tokens, c);
    return as_array(dm.values, dm.size, dm.size);
  }, py::arg("smiles"), py::arg("coords"), "Token-by-token distances; zero on non-atom tokens.");
  m.def("gaussian_basis", [](double d, std::vector<double> mu, std::vector<double> sigma, double gamma, double beta,
                             bool negate) {
    attention::GaussianKernel k;
    k.mu = std::move(mu);
    k.sigma = std::move(sigma);
    k.gamma.assign(attention::kBondTypes, gamma);
    k.beta.assign(attention::kBondTypes, beta);
    return attention::gaussian_basis(d, attention::BondType::None, k, negate);
  }, py::arg("d"), py::arg("mu"), py::arg("sigma"), py::arg("gamma") = 1.0, py::arg("beta") = 0.0,
        py::arg("negate") = true);

  py::class_<pipeline::Vocab>(m, "Vocab")
      .def_static("load", &pipeline::Vocab::load, py::arg("path"))
      .def_static("build", [](const std::vector<std::string>& files, bool classes) {
        return pipeline::build_vocab(files, classes);
      }, py::arg("files"), py::arg("class_tokens") = false)
      .def("save", &pipeline::Vocab::save, py::arg("path"))
      .def("id", &pipeline::Vocab::id)
      .def("text", &pipeline::Vocab::text)
      .def("encode", [](const pipeline::Vocab& v, const std::string& s) { return v.encode(chem::tokenize(s)); })
      .def("decode", &pipeline::Vocab::decode)
      .def_property_readonly("tokens", &pipeline::Vocab::tokens)
      .def("__len__", &pipeline::Vocab::size);

  py::class_<model::Checkpoint>(m, "Checkpoint")
      .def_static("load", &model::load_checkpoint, py::arg("path"))
      .def("save", [](const model::Checkpoint& c, const std::string& path) { model::save_checkpoint(path, c); })
      .def_property_readonly("config", [](const model::Checkpoint& c) { return model::to_json(c.config).dump(); })
      .def_property_readonly("meta", [](const model::Checkpoint& c) { return c.meta.dump(); })
      .def_property_readonly("parameter_count", [](const model::Checkpoint& c) { return model::parameter_count(c.params); })
      .def("parameter", [](const model::Checkpoint& c, const std::string& name) {
        const Tensor& t = c.params.at(name);
        std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
        py::array_t<double> out(shape);
        std::copy(t.data().begin(), t.data().end(), out.mutable_data());
        return out;
      })
      .def("names", [](const model::Checkpoint& c) {
        std::vector<std::string> out;
        for (const auto& [name, t] : c.params) out.push_back(name);
        return out;
      });
  m.def("average_checkpoints", &model::average_checkpoints, py::arg("checkpoints"));

  m.def("predict", [](const model::Checkpoint& ck, const std::string& smiles, std::optional<py::array_t<double>> coords,
                      std::size_t beam) {
    auto vocab = pipeline::vocab_of(ck);
    std::optional<conformer::Conformer> conf;
    if (coords) conf = conformer_from(chem::parse(smiles), *coords);
    auto input = pipeline::product_input(smiles, conf ? &*conf : nullptr, vocab);
    py::gil_scoped_release release;
    auto preds = pipeline::predict(ck, input, beam);
    py::gil_scoped_acquire acquire;
    py::list out;
    for (const auto& p : preds) out.append(py::make_tuple(p.smiles, p.score, p.valid));
    return out;
  }, py::arg("checkpoint"), py::arg("smiles"), py::arg("coords") = py::none(), py::arg("beam") = 10);

  m.def("train", [](const std::string& config_path, std::optional<std::string> out_dir, std::optional<std::size_t> max_steps) {
    auto cfg = pipeline::load_run_config(config_path);
    if (out_dir) cfg.out_dir = *out_dir;
    if (max_steps) cfg.max_steps = *max_steps;
    pipeline::TrainResult r;
    {
      py::gil_scoped_release release;
      r = pipeline::train(cfg);
    }
    py::dict d;
    d["steps"] = r.steps;
    d["epochs"] = r.epochs;
    d["best_top1"] = r.best_top1;
    d["averaged"] = r.averaged;
    d["kept"] = r.kept;
    d["stop_reason"] = r.stop_reason;
    return d;
  }, py::arg("config"), py::arg("out_dir") = py::none(), py::arg("max_steps") = py::none());

  m.def("evaluate", [](const model::Checkpoint& ck, const std::string& reactions, const std::string& conformers,
                       std::size_t beam, std::vector<std::size_t> ks) {
    auto vocab = pipeline::vocab_of(ck);
    pipeline::ConformerIndex index;
    if (!conformers.empty()) index = conformer::load_jsonl(conformers);
    pipeline::AssembleOptions opts;
    opts.on_missing_conformer = conformers.empty() ? pipeline::MissingConformer::Zero : pipeline::MissingConformer::Skip;
    opts.max_length = ck.config.max_length;
    pipeline::EvalReport r;
    {
      py::gil_scoped_release release;
      auto ds = pipeline::load_dataset(pipeline::read_reactions(reactions), conformers.empty() ? nullptr : &index, vocab, opts);
      r = pipeline::evaluate(ck, ds.examples, beam, ks);
    }
    return report_dict(r);
  }, py::arg("checkpoint"), py::arg("reactions"), py::arg("conformers") = "", py::arg("beam") = 10,
        py::arg("ks") = std::vector<std::size_t>{1, 3, 5, 10});
}
