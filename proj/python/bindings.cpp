#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "lmscale/collapse.hpp"
#include "lmscale/config.hpp"
#include "lmscale/covstats.hpp"
#include "lmscale/error.hpp"
#include "lmscale/fitkit.hpp"
#include "lmscale/loss_curves.hpp"
#include "lmscale/pipeline.hpp"
#include "lmscale/synthlang.hpp"
#include "lmscale/theory.hpp"
#include "lmscale/token_stream.hpp"
#include "lmscale/tokenizer.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using IdArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

IdArray to_array(std::vector<lmscale::TokenId> ids) {
  auto* heap = new std::vector<lmscale::TokenId>(std::move(ids));
  py::capsule owner(heap, [](void* p) { delete static_cast<std::vector<lmscale::TokenId>*>(p); });
  return IdArray(static_cast<py::ssize_t>(heap->size()), heap->data(), owner);
}

lmscale::TokenStream to_stream(const IdArray& ids, std::uint32_t vocab_size) {
  lmscale::TokenStream s;
  s.vocab_size = vocab_size;
  s.ids.assign(ids.data(), ids.data() + ids.size());
  s.validate();
  return s;
}

std::vector<lmscale::Point> to_points(const std::vector<double>& x, const std::vector<double>& y,
                                      const std::optional<std::vector<double>>& w) {
  if (x.size() != y.size() || (w && w->size() != x.size()))
    throw lmscale::ConfigError("x, y and weights must have equal lengths");
  std::vector<lmscale::Point> pts(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) pts[i] = {x[i], y[i], w ? (*w)[i] : 1.0};
  return pts;
}

lmscale::FitRange range_of(std::optional<double> lo, std::optional<double> hi) {
  lmscale::FitRange r;
  if (lo) r.lo = *lo;
  if (hi) r.hi = *hi;
  return r;
}

lmscale::Config config_of(const std::optional<std::string>& ini) {
  return ini ? lmscale::Config::parse(*ini) : lmscale::Config::defaults();
}

lmscale::LossCurveSet curves_of(const std::string& csv) {
  std::istringstream in(csv);
  std::vector<lmscale::LossRecord> records;
  const auto report = lmscale::validate_loss_csv(in, &records);
  if (!report.ok()) throw lmscale::DataError("invalid loss-curve CSV: " + report.summary());
  return lmscale::LossCurveSet::from_records(records);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of lmscale";
  m.attr("__version__") = LMSCALE_VERSION;

  auto base = py::register_exception<lmscale::Error>(m, "Error");
  py::register_exception<lmscale::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<lmscale::DataError>(m, "DataError", base.ptr());
  py::register_exception<lmscale::ConvergenceError>(m, "ConvergenceError", base.ptr());

  py::class_<lmscale::Vocabulary>(m, "Vocabulary")
      .def_property_readonly("size", &lmscale::Vocabulary::size)
      .def_property_readonly("eos_id", &lmscale::Vocabulary::eos_id)
      .def("merges", &lmscale::Vocabulary::merges)
      .def("token_bytes", [](const lmscale::Vocabulary& v, lmscale::TokenId id) { return py::bytes(v.token_bytes(id)); })
      .def("to_json", &lmscale::Vocabulary::to_json)
      .def_static("from_json", [](const std::string& s) { return lmscale::Vocabulary::from_json(s); })
      .def("save", [](const lmscale::Vocabulary& v, const std::string& p) { v.save(p); })
      .def_static("load", [](const std::string& p) { return lmscale::Vocabulary::load(p); });

  m.def("train_bpe", py::overload_cast<const std::vector<std::string>&, std::uint32_t>(&lmscale::train_bpe),
        py::arg("documents"), py::arg("vocab_size"), py::call_guard<py::gil_scoped_release>());
  m.def("encode", [](const std::vector<std::string>& docs, const lmscale::Vocabulary& v) {
    lmscale::TokenStream s;
    {
      py::gil_scoped_release release;
      s = lmscale::encode(docs, v);
    }
    return to_array(std::move(s.ids));
  });
  m.def("decode", [](const IdArray& ids, const lmscale::Vocabulary& v) {
    return lmscale::decode_documents(std::span<const lmscale::TokenId>(ids.data(), ids.size()), v);
  });

  m.def("read_token_stream", [](const std::string& path) {
    auto s = lmscale::read_token_stream(path);
    const auto V = s.vocab_size;
    return py::make_tuple(to_array(std::move(s.ids)), V);
  });
  m.def("write_token_stream", [](const std::string& path, const IdArray& ids, std::uint32_t vocab_size) {
    lmscale::write_token_stream(path, to_stream(ids, vocab_size));
  });

  m.def(
      "covariance_summary",
      [](const IdArray& ids, std::uint32_t vocab_size, const std::vector<std::uint32_t>& lags, bool cross_documents) {
        const auto stream = to_stream(ids, vocab_size);
        py::gil_scoped_release release;
        lmscale::CountOptions opt;
        opt.cross_documents = cross_documents;
        const auto rows = lmscale::summarize(lmscale::count_pairs(stream, lags, opt));
        std::string out = "[";
        for (std::size_t i = 0; i < rows.size(); ++i) out += (i ? "," : "") + lmscale::summary_to_json(rows[i]);
        return out + "]";
      },
      py::arg("ids"), py::arg("vocab_size"), py::arg("lags"), py::arg("cross_documents") = false);

  m.def(
      "operator_norm",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> a, double tol, std::uint32_t max_iters) {
        if (a.ndim() != 2) throw lmscale::ConfigError("operator_norm expects a 2-d array");
        const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
        lmscale::DenseOperator op(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
        lmscale::PowerIterationOptions opt;
        opt.tol = tol;
        opt.max_iters = max_iters;
        const auto r = lmscale::operator_norm(op, opt);
        return py::make_tuple(r.value, r.iterations, r.converged);
      },
      py::arg("matrix"), py::arg("tol") = 1e-8, py::arg("max_iters") = 10000);

  m.def(
      "fit_power_law",
      [](const std::vector<double>& x, const std::vector<double>& y, std::optional<std::vector<double>> w,
         std::optional<double> lo, std::optional<double> hi) {
        return lmscale::json_of(lmscale::fit_power_law(to_points(x, y, w), range_of(lo, hi))).dump();
      },
      py::arg("x"), py::arg("y"), py::arg("weights") = py::none(), py::arg("lo") = py::none(),
      py::arg("hi") = py::none());
  m.def(
      "fit_asymptote",
      [](const std::vector<double>& x, const std::vector<double>& y, double step, double min_ratio, double threshold) {
        lmscale::AsymptoteOptions opt;
        opt.grid.step = step;
        opt.min_ratio = min_ratio;
        opt.threshold = threshold;
        return lmscale::json_of(lmscale::fit_asymptote(to_points(x, y, std::nullopt), opt)).dump();
      },
      py::arg("x"), py::arg("y"), py::arg("step") = 0.01, py::arg("min_ratio") = 10.0, py::arg("threshold") = 0.0);
  m.def(
      "fit_broken_power_law",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        return lmscale::json_of(lmscale::fit_broken_power_law(to_points(x, y, std::nullopt))).dump();
      },
      py::arg("x"), py::arg("y"));

  m.def("predict_alpha", &lmscale::predict_alpha, py::arg("gamma"), py::arg("beta"));
  m.def("data_threshold", &lmscale::data_threshold, py::arg("n"), py::arg("beta"), py::arg("c") = 1.0);
  m.def("horizon", &lmscale::horizon, py::arg("P"), py::arg("beta"), py::arg("c") = 1.0);
  m.def("classify_regime", [](double g, double b, double d) {
    return lmscale::json_of(lmscale::classify_regime(g, b, d)).dump();
  });

  m.def("synthesize_curves", [](const std::string& ansatz_json) {
    const auto spec = lmscale::ansatz_from_json(json::parse(ansatz_json));
    return lmscale::to_csv(lmscale::synthesize_curves(spec));
  });
  m.def("ansatz_autoregressive_loss", [](const std::string& ansatz_json, double P, std::uint64_t T) {
    return lmscale::ansatz_autoregressive_loss(lmscale::ansatz_from_json(json::parse(ansatz_json)), P, T);
  });

  m.def(
      "collapse",
      [](const std::string& csv, double gamma, double beta, std::size_t bins) {
        return lmscale::json_of(lmscale::collapse(curves_of(csv), gamma, beta, bins)).dump();
      },
      py::arg("csv"), py::arg("gamma"), py::arg("beta"), py::arg("bins") = 32);
  m.def(
      "exponent_scan",
      [](const std::string& csv, const std::vector<double>& gammas, const std::vector<double>& betas,
         std::size_t bins) {
        const auto curves = curves_of(csv);
        py::gil_scoped_release release;
        return lmscale::json_of(lmscale::exponent_scan(curves, gammas, betas, bins)).dump();
      },
      py::arg("csv"), py::arg("gammas"), py::arg("betas"), py::arg("bins") = 32);

  m.def("validate_loss_csv", [](const std::string& csv) {
    std::istringstream in(csv);
    const auto r = lmscale::validate_loss_csv(in);
    std::vector<std::string> errors, warnings;
    for (const auto& e : r.errors) errors.push_back("line " + std::to_string(e.line) + ": " + e.message);
    for (const auto& w : r.warnings) warnings.push_back("line " + std::to_string(w.line) + ": " + w.message);
    return py::make_tuple(r.ok(), errors, warnings);
  });

  m.def("generate", [](const std::string& spec_json) {
    const auto spec = lmscale::SynthSpec::from_json(spec_json);
    lmscale::TokenStream s;
    {
      py::gil_scoped_release release;
      s = lmscale::generate(spec);
    }
    const auto V = s.vocab_size;
    return py::make_tuple(to_array(std::move(s.ids)), V);
  });

  m.def("default_config", [] { return lmscale::Config::defaults().to_ini(); });
  m.def(
      "run_job",
      [](const std::string& verb, const std::string& params_json, std::optional<std::string> config_ini) {
        const auto config = config_of(config_ini);
        const auto params = json::parse(params_json);
        py::gil_scoped_release release;
        return lmscale::run_job(verb, params, config).summary.dump();
      },
      py::arg("verb"), py::arg("params"), py::arg("config") = py::none());
  m.def(
      "run_recorded",
      [](const std::string& verb, const std::string& params_json, std::optional<std::string> config_ini,
         std::optional<std::string> manifest) {
        const auto config = config_of(config_ini);
        const auto params = json::parse(params_json);
        std::optional<std::filesystem::path> path;
        if (manifest) path = *manifest;
        py::gil_scoped_release release;
        return lmscale::run_recorded(verb, params, config, path).to_json().dump();
      },
      py::arg("verb"), py::arg("params"), py::arg("config") = py::none(), py::arg("manifest") = py::none());
  m.def("selftest", [](const std::string& manifest) {
    const auto r = lmscale::selftest(manifest);
    return py::make_tuple(r.ok, r.mismatches);
  });
}
