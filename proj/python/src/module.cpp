#include "reliqa/accuracy.hpp"
#include "reliqa/cli.hpp"
#include "reliqa/errors.hpp"
#include "reliqa/metrics.hpp"
#include "reliqa/reliability.hpp"
#include "reliqa/selectors.hpp"
#include "reliqa/synth.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace reliqa;

namespace {

std::vector<ScoredExample> examples(const std::vector<double>& confidences, const std::vector<double>& accuracies)
{
    if (confidences.size() != accuracies.size()) {
        throw DimensionError("confidences and accuracies differ in length (" + std::to_string(confidences.size()) +
                             " vs " + std::to_string(accuracies.size()) + ")");
    }
    std::vector<ScoredExample> out(confidences.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].id = std::to_string(i);
        out[i].confidence = confidences[i];
        out[i].accuracy = accuracies[i];
        out[i].correct_top1 = accuracies[i] >= 0.6;
    }
    return out;
}

py::list points(const RCCurve& c)
{
    py::list out;
    for (const auto& p : c.points) {
        out.append(py::make_tuple(p.coverage, p.risk, p.threshold));
    }
    return out;
}

py::dict scored_dict(const std::vector<ScoredExample>& ex)
{
    std::vector<std::string> ids;
    std::vector<double> conf, acc;
    for (const auto& e : ex) {
        ids.push_back(e.id);
        conf.push_back(e.confidence);
        acc.push_back(e.accuracy);
    }
    py::dict d;
    d["ids"] = ids;
    d["confidences"] = conf;
    d["accuracies"] = acc;
    return d;
}

} // namespace

PYBIND11_MODULE(_reliqa, m)
{
    m.doc() = "Selective question answering evaluation";
    m.attr("__version__") = cli::version();

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

    m.def("vqa_accuracy",
          [](const std::string& prediction, const std::vector<std::string>& annotations) {
              return vqa_accuracy(AnswerText(prediction), AnnotationSet::from_strings(annotations));
          },
          py::arg("prediction"), py::arg("annotations"), "Leave-one-out accuracy against ten references.");
    m.def("closed_form_accuracy", &closed_form_accuracy, py::arg("matches"));
    m.def("normalize_answer", [](const std::string& s) { return normalize_answer(s); });

    m.def("rc_curve", [](const std::vector<double>& c, const std::vector<double>& a) { return points(rc_curve(examples(c, a))); },
          py::arg("confidences"), py::arg("accuracies"), "List of (coverage, risk, threshold).");
    m.def("best_possible_curve",
          [](const std::vector<double>& a) { return points(best_possible_curve(examples(std::vector<double>(a.size(), 0.0), a))); },
          py::arg("accuracies"));
    m.def("auc", [](const std::vector<double>& c, const std::vector<double>& a) { return auc(rc_curve(examples(c, a))); },
          py::arg("confidences"), py::arg("accuracies"));
    m.def("coverage_at_risk",
          [](const std::vector<double>& c, const std::vector<double>& a, double target) {
              return coverage_at_risk(rc_curve(examples(c, a)), target);
          },
          py::arg("confidences"), py::arg("accuracies"), py::arg("target_risk"));
    m.def("ece",
          [](const std::vector<double>& c, const std::vector<bool>& correct, int bins) {
              std::vector<ScoredExample> ex(c.size());
              if (c.size() != correct.size()) {
                  throw DimensionError("confidences and correct flags differ in length");
              }
              for (std::size_t i = 0; i < ex.size(); ++i) {
                  ex[i].confidence = c[i];
                  ex[i].correct_top1 = correct[i];
              }
              return ece(ex, bins);
          },
          py::arg("confidences"), py::arg("correct"), py::arg("bins") = 10);

    m.def("phi",
          [](const std::vector<double>& c, const std::vector<double>& a, double gamma, double cost) {
              const auto r = evaluate_at_threshold(examples(c, a), Threshold{gamma}, Cost(cost));
              py::dict d;
              d["phi"] = r.phi;
              d["coverage"] = r.coverage;
              d["risk"] = r.risk ? py::cast(*r.risk) : py::none();
              return d;
          },
          py::arg("confidences"), py::arg("accuracies"), py::arg("gamma"), py::arg("cost"),
          "Effective reliability when answering iff confidence >= gamma.");
    m.def("choose_threshold_phi",
          [](const std::vector<double>& c, const std::vector<double>& a, double cost) {
              return choose_threshold_phi(examples(c, a), Cost(cost)).gamma;
          },
          py::arg("confidences"), py::arg("accuracies"), py::arg("cost"));
    m.def("choose_threshold_risk",
          [](const std::vector<double>& c, const std::vector<double>& a, double target) -> std::optional<double> {
              try {
                  return choose_threshold_risk(examples(c, a), target).gamma;
              } catch (const UnreachableRiskError&) {
                  return std::nullopt;
              }
          },
          py::arg("confidences"), py::arg("accuracies"), py::arg("target_risk"),
          "Smallest threshold meeting the target, or None.");

    m.def("generate_synth",
          [](const std::filesystem::path& path, std::size_t n, std::uint64_t seed) {
              SynthConfig cfg;
              cfg.n = n;
              cfg.seed = seed;
              const auto d = generate(cfg);
              save_records(path, d.records);
              save_latents(latent_path_for(path), d.latents);
          },
          py::arg("path"), py::arg("n") = 1000, py::arg("seed") = 0,
          "Writes a synthetic record file with its vocabulary and latent sidecars.");
    m.def("score_maxprob", [](const std::filesystem::path& path) { return scored_dict(score_maxprob(load_records(path))); },
          py::arg("path"));

    m.def("run_cli",
          [](const std::vector<std::string>& args) {
              std::ostringstream out, err;
              int code = 0;
              {
                  py::gil_scoped_release release;
                  code = cli::run(args, out, err);
              }
              return py::make_tuple(code, out.str(), err.str());
          },
          py::arg("args"), "Runs the command line in-process: (exit code, stdout, stderr).");
}
