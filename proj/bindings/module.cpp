#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ttlab/attack.hpp"
#include "ttlab/data.hpp"
#include "ttlab/errors.hpp"
#include "ttlab/evaluation.hpp"
#include "ttlab/model.hpp"
#include "ttlab/synth.hpp"
#include "ttlab/uap.hpp"

namespace py = pybind11;
using namespace ttlab;

namespace {

std::vector<const Model*> as_ptrs(const std::vector<Model*>& models) {
  std::vector<const Model*> out;
  out.reserve(models.size());
  for (Model* m : models) out.push_back(m);
  return out;
}

}  // namespace

PYBIND11_MODULE(ttlab, m) {
  m.doc() = "desk-scale laboratory for transferable targeted adversarial attacks";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<UsageError>(m, "UsageError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<NumericalDomainError>(m, "NumericalDomainError", base);
  py::register_exception<TrainingError>(m, "TrainingError", base);

  py::class_<Tensor>(m, "Tensor")
      .def(py::init([](const std::vector<int>& shape) { return Tensor(shape); }),
           py::arg("shape"))
      .def_readonly("shape", &Tensor::shape)
      .def_property(
          "data", [](const Tensor& t) { return t.data; },
          [](Tensor& t, const std::vector<float>& v) {
            if (v.size() != t.data.size())
              throw ShapeError("data length " + std::to_string(v.size()) +
                               " does not match tensor of " + std::to_string(t.data.size()));
            t.data = v;
          })
      .def("numel", &Tensor::numel);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("split", &Dataset::split)
      .def("size", &Dataset::size)
      .def(
          "image",
          [](const Dataset& d, std::size_t i) -> const Tensor& {
            if (i >= d.images.size())
              throw UsageError("image index " + std::to_string(i) + " outside dataset of " +
                               std::to_string(d.images.size()));
            return d.images[i];
          },
          py::arg("index"), py::return_value_policy::reference_internal);

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("train_n", &SynthConfig::train_n)
      .def_readwrite("test_n", &SynthConfig::test_n)
      .def_readwrite("seed", &SynthConfig::seed)
      .def_readwrite("classes", &SynthConfig::classes)
      .def_readwrite("cue_amp", &SynthConfig::cue_amp)
      .def_readwrite("cue_count", &SynthConfig::cue_count)
      .def_readwrite("cue_floor", &SynthConfig::cue_floor)
      .def_readwrite("max_shift", &SynthConfig::max_shift)
      .def_readwrite("contrast_jitter", &SynthConfig::contrast_jitter)
      .def_readwrite("brightness_jitter", &SynthConfig::brightness_jitter)
      .def_readwrite("smooth_noise", &SynthConfig::smooth_noise)
      .def_readwrite("white_noise", &SynthConfig::white_noise);

  m.def("synth_cifar_split", &synth_cifar_split, py::arg("config"), py::arg("test_split"),
        py::call_guard<py::gil_scoped_release>());
  m.def("synth_cifar_to_dir", &synth_cifar_to_dir, py::arg("config"), py::arg("dir"),
        py::call_guard<py::gil_scoped_release>());
  m.def("load_cifar10", &load_cifar10, py::arg("dir"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<Model>(m, "Model")
      .def_readonly("arch_id", &Model::arch_id)
      .def_readonly("num_classes", &Model::num_classes)
      .def_readonly("input_shape", &Model::input_shape);

  m.def("known_archs", &known_archs);
  m.def("build_model", &build_model, py::arg("arch_id"), py::arg("num_classes"),
        py::arg("seed"), py::arg("input_shape") = std::vector<int>{3, 32, 32});
  m.def("save_weights", &save_weights, py::arg("model"), py::arg("path"));
  m.def("load_weights", &load_weights, py::arg("path"),
        py::arg("input_shape") = std::vector<int>{3, 32, 32});
  m.def(
      "predict_logits_one",
      [](const Model& model, const Tensor& image) {
        Graph g = model.graph;
        return predict_logits_one(g, model, image);
      },
      py::arg("model"), py::arg("image"));
  m.def("accuracy", &accuracy, py::arg("model"), py::arg("dataset"), py::arg("limit") = 0,
        py::call_guard<py::gil_scoped_release>());

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("decay_epochs", &TrainConfig::decay_epochs)
      .def_readwrite("decay_factor", &TrainConfig::decay_factor)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("flip_augment", &TrainConfig::flip_augment)
      .def_readwrite("train_subset", &TrainConfig::train_subset);

  py::class_<TrainMetrics>(m, "TrainMetrics")
      .def_readonly("test_accuracy", &TrainMetrics::test_accuracy)
      .def_readonly("epoch_mean_loss", &TrainMetrics::epoch_mean_loss);

  m.def("train", &train, py::arg("model"), py::arg("train_set"), py::arg("test_set"),
        py::arg("config"), py::call_guard<py::gil_scoped_release>());

  py::enum_<LossKind>(m, "LossKind")
      .value("ce", LossKind::ce)
      .value("logit", LossKind::logit)
      .value("cw", LossKind::cw)
      .value("po_trip", LossKind::po_trip);
  m.def("loss_name", &loss_name);
  m.def("parse_loss", &parse_loss);

  py::class_<LossSpec>(m, "LossSpec")
      .def(py::init<>())
      .def_readwrite("kind", &LossSpec::kind)
      .def_readwrite("cw_k", &LossSpec::cw_k)
      .def_readwrite("po_lambda", &LossSpec::po_lambda)
      .def_readwrite("trip_gamma", &LossSpec::trip_gamma)
      .def_readwrite("xi", &LossSpec::xi);

  py::enum_<NormKind>(m, "NormKind").value("linf", NormKind::linf).value("l2", NormKind::l2);
  py::enum_<InitKind>(m, "InitKind")
      .value("zero", InitKind::zero)
      .value("gaussian", InitKind::gaussian);

  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_readwrite("loss", &AttackConfig::loss)
      .def_readwrite("epsilon", &AttackConfig::epsilon)
      .def_readwrite("alpha", &AttackConfig::alpha)
      .def_readwrite("iterations", &AttackConfig::iterations)
      .def_readwrite("checkpoints", &AttackConfig::checkpoints)
      .def_readwrite("use_mi", &AttackConfig::use_mi)
      .def_readwrite("mi_mu", &AttackConfig::mi_mu)
      .def_readwrite("use_ti", &AttackConfig::use_ti)
      .def_readwrite("ti_kernel", &AttackConfig::ti_kernel)
      .def_readwrite("use_di", &AttackConfig::use_di)
      .def_readwrite("di_prob", &AttackConfig::di_prob)
      .def_readwrite("di_low", &AttackConfig::di_low)
      .def_readwrite("di_high", &AttackConfig::di_high)
      .def_readwrite("norm", &AttackConfig::norm)
      .def_readwrite("unbounded", &AttackConfig::unbounded)
      .def_readwrite("init", &AttackConfig::init)
      .def_readwrite("init_sigma", &AttackConfig::init_sigma)
      .def_readwrite("seed", &AttackConfig::seed);

  py::class_<AttackResult>(m, "AttackResult")
      .def_readonly("checkpoint_iters", &AttackResult::checkpoint_iters)
      .def_readonly("checkpoint_images", &AttackResult::checkpoint_images)
      .def_readonly("final_image", &AttackResult::final_image)
      .def_readonly("loss_trace", &AttackResult::loss_trace)
      .def_readonly("grad_l1_trace", &AttackResult::grad_l1_trace)
      .def_readonly("target_logit_trace", &AttackResult::target_logit_trace)
      .def_readonly("target_prob_trace", &AttackResult::target_prob_trace)
      .def_readonly("target_rank_trace", &AttackResult::target_rank_trace)
      .def_readonly("zero_grad_flags", &AttackResult::zero_grad_flags)
      .def_readonly("zero_grad_events", &AttackResult::zero_grad_events)
      .def_readonly("seed", &AttackResult::seed);

  m.def(
      "attack",
      [](const std::vector<Model*>& models, const Tensor& image, int target, int original,
         const AttackConfig& cfg) {
        std::vector<const Model*> ptrs = as_ptrs(models);
        py::gil_scoped_release release;
        return attack(ptrs, image, target, original, cfg);
      },
      py::arg("models"), py::arg("image"), py::arg("target"), py::arg("original"),
      py::arg("config"));

  py::class_<NamedModel>(m, "NamedModel")
      .def(py::init([](const std::string& id, const Model& model) {
             return NamedModel{id, model};
           }),
           py::arg("id"), py::arg("model"))
      .def_readwrite("id", &NamedModel::id)
      .def_readonly("model", &NamedModel::model);

  py::class_<SuiteConfig>(m, "SuiteConfig")
      .def(py::init<>())
      .def_readwrite("attack", &SuiteConfig::attack)
      .def_readwrite("losses", &SuiteConfig::losses)
      .def_readwrite("n_images", &SuiteConfig::n_images)
      .def_readwrite("include_whitebox", &SuiteConfig::include_whitebox)
      .def_readwrite("jobs", &SuiteConfig::jobs);

  py::class_<TransferRow>(m, "TransferRow")
      .def_readonly("source", &TransferRow::source)
      .def_readonly("target", &TransferRow::target)
      .def_readonly("loss", &TransferRow::loss)
      .def_readonly("methods", &TransferRow::methods)
      .def_readonly("checkpoint", &TransferRow::checkpoint)
      .def_readonly("epsilon", &TransferRow::epsilon)
      .def_readonly("alpha", &TransferRow::alpha)
      .def_readonly("seed", &TransferRow::seed)
      .def_readonly("n_images", &TransferRow::n_images)
      .def_readonly("targeted_sr", &TransferRow::targeted_sr)
      .def_readonly("nontargeted_sr", &TransferRow::nontargeted_sr)
      .def_readonly("mean_target_conf", &TransferRow::mean_target_conf)
      .def_readonly("mean_target_rank", &TransferRow::mean_target_rank);

  py::class_<TransferReport>(m, "TransferReport")
      .def_readonly("rows", &TransferReport::rows);

  py::class_<TrendSeries>(m, "TrendSeries")
      .def_readonly("loss", &TrendSeries::loss)
      .def_readonly("norm_loss", &TrendSeries::norm_loss)
      .def_readonly("norm_grad_l1", &TrendSeries::norm_grad_l1)
      .def_readonly("target_logit", &TrendSeries::target_logit);

  py::class_<TargetStats>(m, "TargetStats")
      .def_readonly("confidence", &TargetStats::confidence)
      .def_readonly("rank", &TargetStats::rank);

  py::enum_<HoldoutRule>(m, "HoldoutRule")
      .value("easy", HoldoutRule::easy)
      .value("hard", HoldoutRule::hard);

  m.def("transfer_csv", &transfer_csv);
  m.def("trend_csv", &trend_csv);
  m.def("select_target_by_rank", &select_target_by_rank, py::arg("model"), py::arg("image"),
        py::arg("rank"));
  m.def("target_stats", &target_stats, py::arg("model"), py::arg("image"), py::arg("target"));
  m.def("ensure_trained", &ensure_trained, py::arg("models"), py::arg("test_set"),
        py::arg("min_accuracy") = 0.6f, py::arg("limit") = 1000,
        py::call_guard<py::gil_scoped_release>());
  m.def("run_single_transfer", &run_single_transfer, py::arg("models"), py::arg("test_set"),
        py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("run_ensemble_transfer", &run_ensemble_transfer, py::arg("models"), py::arg("rule"),
        py::arg("siblings"), py::arg("test_set"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_rank_sweep", &run_rank_sweep, py::arg("source"), py::arg("target_model"),
        py::arg("ranks"), py::arg("test_set"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_trend_analysis", &run_trend_analysis, py::arg("source"), py::arg("test_set"),
        py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("run_stepsize_sweep", &run_stepsize_sweep, py::arg("source"), py::arg("target_model"),
        py::arg("alphas"), py::arg("test_set"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<UapArtifact>(m, "UapArtifact")
      .def_readonly("delta", &UapArtifact::delta)
      .def_readonly("target", &UapArtifact::target)
      .def_readonly("epsilon", &UapArtifact::epsilon)
      .def_readonly("arch_id", &UapArtifact::arch_id)
      .def_readonly("seed", &UapArtifact::seed);

  m.def(
      "generate_uap",
      [](const std::vector<Model*>& models, const std::string& source_id, int target,
         const AttackConfig& cfg) {
        std::vector<const Model*> ptrs = as_ptrs(models);
        py::gil_scoped_release release;
        return generate_uap(ptrs, source_id, target, cfg);
      },
      py::arg("models"), py::arg("source_id"), py::arg("target"), py::arg("config"));
  m.def("save_uap", &save_uap, py::arg("uap"), py::arg("path"));
  m.def("load_uap", &load_uap, py::arg("path"));
  m.def("evaluate_uap", &evaluate_uap, py::arg("uap"), py::arg("model"), py::arg("dataset"),
        py::arg("limit") = 0, py::call_guard<py::gil_scoped_release>());
  m.def("run_uap_suite", &run_uap_suite, py::arg("models"), py::arg("test_set"),
        py::arg("config"), py::arg("eval_n") = 1000,
        py::call_guard<py::gil_scoped_release>());
}
