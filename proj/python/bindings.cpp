#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "w2st/checkpoint.hpp"
#include "w2st/cli.hpp"
#include "w2st/curriculum.hpp"
#include "w2st/generate.hpp"
#include "w2st/metrics.hpp"

namespace py = pybind11;
using namespace w2st;

namespace {

struct Model {
  ModelConfig config;
  Vocab vocab;
  ModelParams params;
};

py::dict example_dict(const InstructionExample& x) {
  py::dict d;
  d["instruction"] = x.instruction;
  d["strength"] = std::string(to_string(x.strength));
  d["story"] = x.story;
  return d;
}

InstructionExample example_from(const py::dict& d) {
  const auto strength = parse_strength(d["strength"].cast<std::string>());
  if (!strength) throw std::invalid_argument("strength must be 'weak' or 'strong'");
  return {d["instruction"].cast<std::string>(), *strength, d["story"].cast<std::string>()};
}

std::vector<InstructionExample> examples_from(const py::list& xs) {
  std::vector<InstructionExample> out;
  for (const auto& x : xs) out.push_back(example_from(x.cast<py::dict>()));
  return out;
}

py::list example_list(const std::vector<InstructionExample>& xs) {
  py::list out;
  for (const auto& x : xs) out.append(example_dict(x));
  return out;
}

py::dict scores_dict(const SplitScores& s) {
  py::dict d;
  d["count"] = s.count;
  d["bleu1"] = s.bleu1;
  d["bleu2"] = s.bleu2;
  d["rouge_l"] = s.rouge_l;
  d["perplexity"] = s.perplexity;
  return d;
}

std::vector<std::string> words(const py::object& x) {
  if (py::isinstance<py::str>(x)) return split_words(x.cast<std::string>());
  return x.cast<std::vector<std::string>>();
}

GenParams gen_params(int max_new, const std::string& mode, double temperature, std::uint64_t seed,
                     const ModelConfig& cfg) {
  GenParams gp;
  gp.max_new_tokens = max_new > 0 ? max_new : cfg.max_len - 1;
  if (mode == "greedy") {
    gp.mode = DecodeMode::kGreedy;
  } else if (mode == "sample") {
    gp.mode = DecodeMode::kSample;
  } else {
    throw std::invalid_argument("mode must be 'greedy' or 'sample'");
  }
  gp.temperature = temperature;
  gp.seed = seed;
  return gp;
}

}  // namespace

PYBIND11_MODULE(_w2st, m) {
  m.doc() = "Curriculum instruction tuning for a small encoder-decoder story model";

  m.def(
      "synth_corpus",
      [](std::uint64_t seed, std::size_t n) {
        const CorpusSplit c = synth_corpus(seed, n);
        py::dict d;
        d["train"] = example_list(c.train);
        d["validation"] = example_list(c.validation);
        d["test"] = example_list(c.test);
        d["pretrain_pool"] = c.pretrain_pool;
        return d;
      },
      py::arg("seed"), py::arg("n"));

  m.def("bleu", [](const py::object& c, const py::object& r, int n) { return bleu_n(words(c), words(r), n); },
        py::arg("candidate"), py::arg("reference"), py::arg("n") = 1);
  m.def("rouge_l", [](const py::object& c, const py::object& r) { return rouge_l(words(c), words(r)); },
        py::arg("candidate"), py::arg("reference"));

  py::class_<Model>(m, "Model")
      .def_property_readonly("vocab_size", [](const Model& x) { return x.config.vocab_size; })
      .def_property_readonly("config", [](const Model& x) {
        py::dict d;
        d["d_model"] = x.config.d_model;
        d["n_heads"] = x.config.n_heads;
        d["n_layers_enc"] = x.config.n_layers_enc;
        d["n_layers_dec"] = x.config.n_layers_dec;
        d["d_ff"] = x.config.d_ff;
        d["max_len"] = x.config.max_len;
        d["vocab_size"] = x.config.vocab_size;
        return d;
      })
      .def_property_readonly("parameter_count", [](const Model& x) { return x.params.parameter_count(); })
      .def(
          "generate",
          [](const Model& x, const std::string& instruction, int max_new, const std::string& mode,
             double temperature, std::uint64_t seed) {
            const Generation g =
                generate(x.params, x.config, x.vocab, instruction, gen_params(max_new, mode, temperature, seed, x.config));
            py::dict d;
            d["text"] = g.text;
            d["tokens"] = g.tokens;
            d["logprobs"] = g.logprobs;
            return d;
          },
          py::arg("instruction"), py::arg("max_new") = 0, py::arg("mode") = "greedy",
          py::arg("temperature") = 1.0, py::arg("seed") = 0)
      .def(
          "perplexity",
          [](const Model& x, const py::list& examples) {
            std::vector<EncodedExample> enc;
            for (const auto& ex : examples_from(examples)) enc.push_back(encode_example(x.vocab, ex));
            return perplexity(x.params, x.config, enc);
          },
          py::arg("examples"))
      .def(
          "evaluate",
          [](const Model& x, const py::list& examples, int max_new) {
            const auto xs = examples_from(examples);
            GenParams gp;
            gp.max_new_tokens = max_new > 0 ? max_new : x.config.max_len - 1;
            const EvalReport r = evaluate(x.params, x.config, x.vocab, xs, gp);
            py::dict d;
            if (r.all) d["all"] = scores_dict(*r.all);
            if (r.weak) d["weak"] = scores_dict(*r.weak);
            if (r.strong) d["strong"] = scores_dict(*r.strong);
            return d;
          },
          py::arg("examples"), py::arg("max_new") = 0)
      .def("save", [](const Model& x, const std::string& path) { save_checkpoint(path, x.config, x.vocab, x.params); },
           py::arg("path"));

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        Checkpoint c = load_checkpoint(path);
        return Model{c.config, std::move(c.vocab), std::move(c.params)};
      },
      py::arg("path"));

  m.def(
      "train",
      [](const py::dict& corpus, std::uint64_t seed, int pretrain_steps, int weak_steps, int strong_steps,
         double learning_rate, std::size_t batch_size, int d_model, int n_heads, int n_layers, int d_ff,
         int max_len) {
        CorpusSplit c;
        c.train = examples_from(corpus["train"].cast<py::list>());
        if (corpus.contains("validation")) c.validation = examples_from(corpus["validation"].cast<py::list>());
        if (corpus.contains("pretrain_pool")) {
          c.pretrain_pool = corpus["pretrain_pool"].cast<std::vector<std::string>>();
        } else {
          for (const auto& x : c.train) c.pretrain_pool.push_back(x.story);
        }
        TrainConfig tc;
        tc.seed = seed;
        tc.model = {d_model, n_heads, n_layers, n_layers, d_ff, max_len, 0};
        const int steps[] = {pretrain_steps, weak_steps, strong_steps};
        for (Phase p : {Phase::kPretrain, Phase::kWeak, Phase::kStrong}) {
          tc.plan.at(p).steps = steps[static_cast<int>(p)];
          tc.plan.at(p).learning_rate = learning_rate;
          tc.plan.at(p).batch_size = batch_size;
        }
        CurriculumResult r;
        {
          py::gil_scoped_release release;
          r = run_curriculum(tc, c);
        }
        py::list log;
        for (const auto& s : r.log.steps) log.append(py::make_tuple(std::string(to_string(s.phase)), s.step, s.loss));
        py::dict out;
        out["model"] = Model{r.config, r.vocab, std::move(r.params)};
        out["log"] = log;
        out["checkpoints"] = [&] {
          py::list labels;
          for (const auto& ck : r.checkpoints) labels.append(ck.label);
          return labels;
        }();
        return out;
      },
      py::arg("corpus"), py::arg("seed") = 1, py::arg("pretrain_steps") = 100, py::arg("weak_steps") = 100,
      py::arg("strong_steps") = 100, py::arg("learning_rate") = 1e-3, py::arg("batch_size") = 8,
      py::arg("d_model") = 64, py::arg("n_heads") = 2, py::arg("n_layers") = 2, py::arg("d_ff") = 128,
      py::arg("max_len") = 64);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
