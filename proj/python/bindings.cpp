#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "tesu/binio.hpp"
#include "tesu/checkpoint.hpp"
#include "tesu/config.hpp"
#include "tesu/eval.hpp"
#include "tesu/pipeline.hpp"
#include "tesu/synthspeech.hpp"

namespace py = pybind11;
using namespace tesu;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D frame array");
  Shape shape = {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
  std::vector<Real> values(a.data(), a.data() + a.size());
  return Tensor::from(std::move(shape), std::move(values));
}

// A trained stack loaded from a run directory.
class LoadedStack {
 public:
  LoadedStack(const std::filesystem::path& config, const std::string& work_dir, bool control) {
    cfg_ = load_run_config(config);
    if (!work_dir.empty()) cfg_.work_dir = work_dir;
    const cli::Layout layout{cfg_.work_dir};
    vocab_ = Vocab::load(layout.vocab());
    EncoderConfig ec = cfg_.encoder;
    ec.vocab_size = vocab_.size();
    LmConfig lc = cfg_.lm;
    lc.vocab_size = vocab_.size();
    enc_ = UnifiedEncoder::from_checkpoint(load_checkpoint(layout.unified(control)), ec);
    lm_ = DecoderLM::from_checkpoint(load_checkpoint(layout.lm()), lc);
    proj_ = Projector::from_checkpoint(load_checkpoint(layout.projector(control)), cfg_.projector);
  }

  std::string infer_text(const std::string& text, const std::string& prompt, std::size_t max_new) const {
    return infer(view(), encode(text, vocab_), prompt, max_new).text;
  }

  std::string infer_frames(const Array& frames, const std::string& prompt, std::size_t max_new) const {
    AcousticSeq seq;
    seq.frames = from_numpy(frames);
    seq.frames_per_token = cfg_.synth.frames_per_token;
    seq.token_count = seq.frames.rows() / seq.frames_per_token;
    return infer(view(), seq, prompt, max_new).text;
  }

  Array render(const std::string& text, std::uint64_t seed, double sigma) const {
    return to_numpy(tesu::render(encode(text, vocab_), seed, sigma, cfg_.synth.frames_per_token, cfg_.synth).frames);
  }

  py::dict residual(const std::string& text, std::uint64_t seed, double sigma) const {
    const TokenSeq t = encode(text, vocab_);
    const auto r =
        alignment_residual(enc_, t, tesu::render(t, seed, sigma, cfg_.synth.frames_per_token, cfg_.synth));
    py::dict d;
    d["mse"] = r.mse;
    d["mean_cosine"] = r.mean_cosine;
    return d;
  }

  py::dict evaluate(const std::vector<std::string>& sentences, const std::string& path, double sigma) const {
    EvalOptions opts;
    opts.path = path == "speech" ? InputPath::kSpeech : InputPath::kText;
    opts.sigma = sigma;
    opts.noise_seed = cfg_.eval.noise_seed;
    opts.max_new = cfg_.eval.max_new;
    opts.synth = cfg_.synth;
    const RepetitionScore s = repetition_eval(view(), sentences, opts);
    py::dict d;
    d["wer"] = s.wer;
    d["exact_match"] = s.exact_match;
    d["align_cosine"] = s.align_cosine;
    d["ce"] = s.ce;
    return d;
  }

  const Vocab& vocab() const { return vocab_; }

 private:
  Stack view() const { return {&enc_, &proj_, &lm_, &vocab_}; }

  RunConfig cfg_;
  Vocab vocab_;
  UnifiedEncoder enc_;
  DecoderLM lm_;
  Projector proj_;
};

}  // namespace

PYBIND11_MODULE(_tesu, m) {
  m.doc() = "Text-only trained speech-capable LM stack (desk scale)";

  static py::exception<Error> error(m, "TesuError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(e.category()) + ": " + e.what()).c_str());
    }
  });

  m.def("normalize_text", [](const std::string& s) { return normalize_text(s); });

  py::class_<Vocab>(m, "Vocab")
      .def(py::init<std::vector<std::string>>(), py::arg("words"))
      .def("__len__", &Vocab::size)
      .def("id", [](const Vocab& v, const std::string& w) { return v.id(w); })
      .def("word", &Vocab::word)
      .def_property_readonly("words", &Vocab::words)
      .def("serialize", &Vocab::serialize)
      .def_static("parse", [](const std::string& text) { return Vocab::parse(text); })
      .def_static("load", &Vocab::load)
      .def("save", &Vocab::save);

  m.def("build_vocab", [](const std::vector<std::string>& corpus, std::size_t max_size) {
    return build_vocab(corpus, max_size);
  }, py::arg("corpus"), py::arg("max_size"));
  m.def("encode", [](const std::string& text, const Vocab& v, bool frame) { return encode(text, v, frame).ids; },
        py::arg("text"), py::arg("vocab"), py::arg("frame") = false);
  m.def("decode", [](const std::vector<int>& ids, const Vocab& v) { return decode(ids, v); });

  m.def("wer", [](const std::string& ref, const std::string& hyp) { return wer(ref, hyp); });
  m.def("edit_distance", [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return edit_distance(a, b);
  });

  m.def("render", [](const std::vector<int>& ids, std::uint64_t seed, double sigma, std::size_t r) {
    TokenSeq t;
    t.ids = ids;
    return to_numpy(render(t, seed, sigma, r).frames);
  }, py::arg("ids"), py::arg("seed"), py::arg("sigma"), py::arg("frames_per_token") = 4);

  m.def("config_hash", [](const std::filesystem::path& path) { return hash_hex(config_hash(load_run_config(path))); });
  m.def("dump_config", [](const std::filesystem::path& path) { return dump_run_config(load_run_config(path)); });

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    const Checkpoint c = load_checkpoint(path);
    py::dict tensors;
    for (const auto& [name, t] : model_tensors(c)) tensors[py::str(name)] = to_numpy(t);
    const auto h = config_hash(c);
    return py::make_tuple(component_name(c.tag), tensors, h ? py::object(py::str(hash_hex(*h))) : py::none());
  });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code = 0;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"));

  py::class_<LoadedStack>(m, "Stack")
      .def(py::init<const std::filesystem::path&, const std::string&, bool>(), py::arg("config"),
           py::arg("work_dir") = "", py::arg("control") = false)
      .def("infer_text", &LoadedStack::infer_text, py::arg("text"), py::arg("prompt") = kRepetitionPrompt,
           py::arg("max_new") = 32)
      .def("infer_frames", &LoadedStack::infer_frames, py::arg("frames"), py::arg("prompt") = kRepetitionPrompt,
           py::arg("max_new") = 32)
      .def("render", &LoadedStack::render, py::arg("text"), py::arg("seed") = 1, py::arg("sigma") = 0.1)
      .def("residual", &LoadedStack::residual, py::arg("text"), py::arg("seed") = 1, py::arg("sigma") = 0.1)
      .def("evaluate", &LoadedStack::evaluate, py::arg("sentences"), py::arg("path") = "text",
           py::arg("sigma") = 0.1)
      .def_property_readonly("vocab", &LoadedStack::vocab, py::return_value_policy::reference_internal);

  m.attr("REPETITION_PROMPT") = kRepetitionPrompt;
}
