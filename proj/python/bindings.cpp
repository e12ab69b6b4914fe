#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "proclip/binary_io.hpp"
#include "proclip/retrieval.hpp"
#include "proclip/trainer.hpp"

namespace py = pybind11;
using namespace proclip;

namespace {

using ModelPtr = std::shared_ptr<const ModelParams>;

struct Model {
  ModelPtr params;
};

Model wrap(ModelParams m) { return {std::make_shared<const ModelParams>(std::move(m))}; }

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  d["r1"] = r.r1;
  d["r5"] = r.r5;
  d["r10"] = r.r10;
  d["mean_rank"] = r.mean_rank;
  d["ranks"] = r.ranks;
  return d;
}

}  // namespace

PYBIND11_MODULE(_proclip, m) {
  m.doc() = "Two-stage prompt-aware text-video retrieval over embedding corpora";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("n_videos", &SynthSpec::n_videos)
      .def_readwrite("n_queries", &SynthSpec::n_queries)
      .def_readwrite("frames_min", &SynthSpec::frames_min)
      .def_readwrite("frames_max", &SynthSpec::frames_max)
      .def_readwrite("words_per_query", &SynthSpec::words_per_query)
      .def_readwrite("raw_dim", &SynthSpec::raw_dim)
      .def_readwrite("dim", &SynthSpec::dim)
      .def_readwrite("duration_lo", &SynthSpec::duration_lo)
      .def_readwrite("duration_hi", &SynthSpec::duration_hi)
      .def_readwrite("relevance_snr", &SynthSpec::relevance_snr)
      .def_readwrite("relevant_frame_fraction", &SynthSpec::relevant_frame_fraction)
      .def_readwrite("seed", &SynthSpec::seed);

  py::class_<CorpusBundle>(m, "Corpus")
      .def_property_readonly("video_ids",
                             [](const CorpusBundle& c) {
                               std::vector<std::string> ids;
                               for (const auto& v : c.videos) ids.push_back(v.id);
                               return ids;
                             })
      .def_property_readonly("query_ids",
                             [](const CorpusBundle& c) {
                               std::vector<std::string> ids;
                               for (const auto& q : c.queries) ids.push_back(q.id);
                               return ids;
                             })
      .def_property_readonly("dims", [](const CorpusBundle& c) { return py::make_tuple(c.dims.raw_dim, c.dims.dim); })
      .def("clip_frames", [](const CorpusBundle& c, std::size_t i) { return FloatMatrix(c.videos.at(i).clip_frames); })
      .def("teacher_video", [](const CorpusBundle& c, std::size_t i) { return FloatRow(c.videos.at(i).teacher_video); })
      .def("sentence", [](const CorpusBundle& c, std::size_t q) { return FloatRow(c.queries.at(q).sentence); })
      .def("ground_truth", [](const CorpusBundle& c, std::size_t q) { return c.queries.at(q).ground_truth_video; })
      .def("__eq__", [](const CorpusBundle& a, const CorpusBundle& b) { return bitwise_equal(a, b); });

  m.def("synth_corpus", &synth_corpus, py::arg("spec"));
  m.def("write_corpus", &write_corpus, py::arg("corpus"), py::arg("path"));
  m.def("read_corpus", &read_corpus, py::arg("path"));
  m.def(
      "validate_corpus",
      [](const CorpusBundle& c) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& v : validate_corpus(c).violations) out.emplace_back(v.kind, v.subject);
        return out;
      },
      py::arg("corpus"), "List of (kind, subject) violations; empty when valid.");

  py::class_<Model>(m, "Model")
      .def_static(
          "untrained",
          [](const CorpusBundle& c, std::uint64_t seed) {
            ModelConfig config;
            config.raw_dim = c.dims.raw_dim;
            config.dim = c.dims.dim;
            config.seed = seed;
            return wrap(ModelParams::init(config));
          },
          py::arg("corpus"), py::arg("seed") = 1)
      .def_static("load", [](const std::filesystem::path& p) { return wrap(read_checkpoint(p)); }, py::arg("path"))
      .def("save", [](const Model& self, const std::filesystem::path& p) { write_checkpoint(*self.params, p); },
           py::arg("path"))
      .def_property_readonly("hash", [](const Model& self) { return model_hash(*self.params); })
      .def("group_equal", [](const Model& a, const Model& b, const std::string& group) {
        return group_bitwise_equal(*a.params, *b.params, group);
      });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("backbone_lr", &TrainConfig::backbone_lr)
      .def_readwrite("head_lr", &TrainConfig::head_lr)
      .def_readwrite("k_frames", &TrainConfig::k_frames)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("distill_epochs", &TrainConfig::distill_epochs)
      .def_readwrite("distill_batch", &TrainConfig::distill_batch)
      .def_readwrite("distill_lr", &TrainConfig::distill_lr)
      .def_readwrite("seed", &TrainConfig::seed);

  m.def(
      "train_retrieval_stage",
      [](const CorpusBundle& c, const TrainConfig& config) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_retrieval_stage(c, config);
        }
        std::vector<double> losses;
        for (const auto& e : r.log) losses.push_back(e.loss);
        return py::make_tuple(wrap(std::move(r.model)), losses);
      },
      py::arg("corpus"), py::arg("config") = TrainConfig{}, "Returns (model, per-epoch loss).");
  m.def(
      "train_distill_stage",
      [](const CorpusBundle& c, const Model& model, const TrainConfig& config) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_distill_stage(c, *model.params, config);
        }
        std::vector<double> losses;
        for (const auto& e : r.log) losses.push_back(e.loss);
        return py::make_tuple(wrap(std::move(r.model)), losses);
      },
      py::arg("corpus"), py::arg("model"), py::arg("config") = TrainConfig{}, "Returns (model, per-epoch corpus MSE).");

  py::class_<RetrievalIndex>(m, "Index")
      .def_property_readonly("size", &RetrievalIndex::size)
      .def_property_readonly("ids", [](const RetrievalIndex& i) { return i.ids; })
      .def_property_readonly("distilled", [](const RetrievalIndex& i) { return i.distilled; })
      .def("save", [](const RetrievalIndex& i, const std::filesystem::path& p) { write_index(i, p); })
      .def("__eq__", [](const RetrievalIndex& a, const RetrievalIndex& b) { return bitwise_equal(a, b); });

  m.def("index_corpus", [](const CorpusBundle& c, const Model& model) { return index_corpus(c, model.params); },
        py::arg("corpus"), py::arg("model"));
  m.def(
      "read_index",
      [](const std::filesystem::path& p, const CorpusBundle& c, const Model& model) {
        return read_index(p, c, model.params);
      },
      py::arg("path"), py::arg("corpus"), py::arg("model"));

  m.def(
      "retrieve",
      [](const CorpusBundle& c, std::size_t query, const RetrievalIndex& index, double k_percent, int k_frames) {
        const RankedList r = retrieve(c.queries.at(query), index, {k_percent, k_frames, false});
        py::dict d;
        d["ids"] = r.ids;
        d["scores"] = r.scores;
        d["stage2_count"] = r.stage2_count;
        d["frames_aggregated"] = r.frames_aggregated;
        return d;
      },
      py::arg("corpus"), py::arg("query"), py::arg("index"), py::arg("k_percent") = 50.0, py::arg("k_frames") = 12);
  m.def(
      "evaluate",
      [](const CorpusBundle& c, const RetrievalIndex& index, double k_percent, int k_frames) {
        return metrics_dict(evaluate(c.queries, index, {k_percent, k_frames, false}));
      },
      py::arg("corpus"), py::arg("index"), py::arg("k_percent") = 50.0, py::arg("k_frames") = 12);
  m.def(
      "bench",
      [](const CorpusBundle& c, const Model& model, std::vector<double> k_percents, int rounds) {
        BenchConfig config;
        config.k_percents = std::move(k_percents);
        config.rounds = rounds;
        std::vector<LatencyReport> reports;
        {
          py::gil_scoped_release release;
          reports = bench(c, model.params, config);
        }
        py::list out;
        for (const auto& r : reports) {
          py::dict d;
          d["k_percent"] = r.k_percent;
          d["fq_s"] = r.fq_latency_s;
          d["aq_s"] = r.aq_latency_s;
          d["stage2_count"] = r.stage2_count;
          out.append(d);
        }
        return out;
      },
      py::arg("corpus"), py::arg("model"), py::arg("k_percents") = BenchConfig{}.k_percents, py::arg("rounds") = 10);
  m.def("metrics_from_ranks", [](std::vector<std::size_t> ranks) {
    return metrics_dict(metrics_from_ranks(std::vector<std::string>(ranks.size()), std::move(ranks)));
  });

  m.def("contrastive_loss", [](const Matrix& sim) { return contrastive_loss(sim); }, py::arg("sim"));
  m.def(
      "topk_infer",
      [](const Eigen::VectorXd& scores, int k) {
        const SelectedFrames s = topk_infer(scores, k);
        return py::make_tuple(s.indices, s.alpha);
      },
      py::arg("scores"), py::arg("k"), "Returns (ascending indices, alpha).");
  m.def(
      "hard_topk_train",
      [](const Eigen::VectorXd& scores, int k, double temperature) {
        return Matrix(hard_topk_train(Var(Matrix(scores)), k, temperature).weights.value());
      },
      py::arg("scores"), py::arg("k"), py::arg("temperature"), "K x N row-stochastic selection weights.");
  m.def("anneal_temperature", [](long step) { return anneal_temperature(step); }, py::arg("step"));
  m.def("retained_count", &retained_count, py::arg("total"), py::arg("k_percent"));
  m.def(
      "cosine_similarity",
      [](const Eigen::RowVectorXd& v, const Eigen::RowVectorXd& t) { return cosine_similarity(v, t); }, py::arg("v"),
      py::arg("t"));
  m.def("registered_blocks", &registered_blocks);
  m.def(
      "grad_check",
      [](const std::string& block, int dim, int frames) {
        GradCheckSample s;
        s.dim = dim;
        s.frames = frames;
        return grad_check(block, s).max_relative_error;
      },
      py::arg("block"), py::arg("dim") = 4, py::arg("frames") = 5);
}
