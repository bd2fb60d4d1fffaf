// SPDX-License-Identifier: Apache-2.0
//
// Python module: model load/save/train, compress/decompress, metrics and the
// raw range coder. Images cross the boundary as H x W x 3 float32 in [0, 1].
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "ccpc/codec.hpp"
#include "ccpc/errors.hpp"
#include "ccpc/image_io.hpp"
#include "ccpc/metrics.hpp"
#include "ccpc/model.hpp"
#include "ccpc/range_coder.hpp"
#include "ccpc/training.hpp"

namespace py = pybind11;
using namespace ccpc;

namespace {

using Image = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> from_hwc(const Image& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw DimensionError("expected an H x W x 3 array");
  }
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  Tensor<float> t(1, 3, h, w);
  auto r = a.unchecked<3>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) t.at(0, c, y, x) = r(y, x, c);
    }
  }
  return t;
}

template <typename T>
py::array_t<float> to_hwc(const Tensor<T>& t) {
  py::array_t<float> a({t.h(), t.w(), t.c()});
  auto m = a.mutable_unchecked<3>();
  for (int c = 0; c < t.c(); ++c) {
    for (int y = 0; y < t.h(); ++y) {
      for (int x = 0; x < t.w(); ++x) m(y, x, c) = static_cast<float>(t.at(0, c, y, x));
    }
  }
  return a;
}

Tensor<double> to_double(const Tensor<float>& t) {
  Tensor<double> d(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) d.data()[i] = t.data()[i];
  return d;
}

py::dict stream_dict(const codec::StreamStats& s) {
  py::dict d;
  d["model_bits"] = s.model_bits;
  d["table_bits"] = s.table_bits;
  d["payload_bytes"] = s.payload_bytes;
  return d;
}

std::vector<metrics::RdPoint> rd_points(const std::vector<std::pair<double, double>>& v) {
  std::vector<metrics::RdPoint> out;
  for (const auto& [bpp, psnr] : v) out.push_back({bpp, psnr});
  return out;
}

// The codec keeps a reference to its model, so the Python object owns both.
struct PyCodec {
  std::shared_ptr<CompressionModel<float>> model;
  codec::Codec codec;
  explicit PyCodec(std::shared_ptr<CompressionModel<float>> m) : model(std::move(m)), codec(*model) {}
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the ccpc image codec";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InvalidParamsError>(m, "InvalidParamsError", PyExc_ValueError);
  py::register_exception<CorruptStreamError>(m, "CorruptStreamError", PyExc_RuntimeError);
  py::register_exception<VersionMismatchError>(m, "VersionMismatchError", PyExc_RuntimeError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<CompressionModel<float>, std::shared_ptr<CompressionModel<float>>>(m, "Model")
      .def(py::init([](const std::string& config, std::uint64_t seed) {
             return std::make_shared<CompressionModel<float>>(parse_config(config), seed);
           }),
           py::arg("config") = "", py::arg("seed") = 1,
           "New model from 'key = value' config text (empty for defaults).")
      .def_static(
          "load",
          [](const std::string& path) {
            return std::shared_ptr<CompressionModel<float>>(CompressionModel<float>::load(path));
          },
          py::arg("path"))
      .def("save", &CompressionModel<float>::save, py::arg("path"))
      .def_property_readonly("config",
                             [](const CompressionModel<float>& self) {
                               return format_config(self.config());
                             })
      .def_property_readonly("num_parameters",
                             [](CompressionModel<float>& self) {
                               std::size_t n = 0;
                               for (auto& p : self.parameters()) n += p.param->value.size();
                               return n;
                             })
      .def(
          "rd_loss",
          [](CompressionModel<float>& self, const Image& x, double lam,
             const std::string& metric, std::uint64_t seed) {
            const auto r = self.rd_loss(from_hwc(x), lam, parse_metric(metric), seed, false);
            py::dict d;
            d["loss"] = r.loss;
            d["bpp"] = r.bpp;
            d["bits_y1"] = r.bits_y1;
            d["bits_y2"] = r.bits_y2;
            d["bits_z"] = r.bits_z;
            d["mse"] = r.mse;
            d["ms_ssim"] = r.ms_ssim;
            return d;
          },
          py::arg("image"), py::arg("lmbda"), py::arg("metric") = "mse", py::arg("seed") = 1,
          "Training-time RD terms with noisy latents.");

  py::class_<PyCodec>(m, "Codec")
      .def(py::init<std::shared_ptr<CompressionModel<float>>>(), py::arg("model"))
      .def(
          "compress",
          [](PyCodec& self, const Image& x) {
            const auto e = self.codec.encode(from_hwc(x));
            py::dict stats;
            stats["bpp"] = 8.0 * e.bytes.size() / e.pixels;
            stats["bits_y1"] = e.model_bits_y1;
            stats["bits_y2"] = e.model_bits_y2;
            stats["y"] = stream_dict(e.y);
            stats["z"] = stream_dict(e.z);
            stats["clamped"] = e.clamped;
            return py::make_tuple(
                py::bytes(reinterpret_cast<const char*>(e.bytes.data()), e.bytes.size()),
                stats);
          },
          py::arg("image"), "Returns (bitstream, stats).")
      .def(
          "decompress",
          [](PyCodec& self, const py::bytes& data) {
            const std::string s = data;
            const std::vector<std::uint8_t> bytes(s.begin(), s.end());
            return to_hwc(self.codec.decode(bytes).x_hat);
          },
          py::arg("data"));

  m.def("read_png", [](const std::string& path) { return to_hwc(io::read_png(path)); },
        py::arg("path"));
  m.def("write_png",
        [](const std::string& path, const Image& x) { io::write_png(path, from_hwc(x)); },
        py::arg("path"), py::arg("image"));

  m.def("psnr",
        [](const Image& a, const Image& b) {
          return metrics::psnr(to_double(from_hwc(a)), to_double(from_hwc(b)));
        },
        py::arg("x"), py::arg("x_hat"), "PSNR after 8-bit rounding.");
  m.def("ms_ssim",
        [](const Image& a, const Image& b) {
          return metrics::ms_ssim(to_double(from_hwc(a)), to_double(from_hwc(b)));
        },
        py::arg("x"), py::arg("x_hat"));
  m.def("bd_rate",
        [](const std::vector<std::pair<double, double>>& test,
           const std::vector<std::pair<double, double>>& anchor) {
          return metrics::bd_rate(rd_points(test), rd_points(anchor));
        },
        py::arg("test"), py::arg("anchor"),
        "BD-rate in percent; each curve is a list of (bpp, psnr).");

  m.def("range_encode",
        [](const std::vector<int>& symbols, const std::vector<std::uint32_t>& cdf) {
          rc::Encoder enc;
          for (int s : symbols) enc.encode(cdf, s);
          const auto out = enc.finish();
          return py::bytes(reinterpret_cast<const char*>(out.data()), out.size());
        },
        py::arg("symbols"), py::arg("cdf"));
  m.def("range_decode",
        [](const py::bytes& data, const std::vector<std::uint32_t>& cdf, std::size_t count) {
          const std::string s = data;
          const std::vector<std::uint8_t> bytes(s.begin(), s.end());
          rc::Decoder dec(bytes);
          std::vector<int> out;
          out.reserve(count);
          for (std::size_t i = 0; i < count; ++i) out.push_back(dec.decode(cdf));
          return out;
        },
        py::arg("data"), py::arg("cdf"), py::arg("count"));

  m.def(
      "train",
      [](CompressionModel<float>& model, const std::string& train_dir, double lam, int steps,
         int batch, int patch, double lr, std::uint64_t seed) {
        train::TrainConfig cfg;
        cfg.lambda = lam;
        cfg.steps = steps;
        cfg.batch = batch;
        cfg.patch = patch;
        cfg.lr = lr;
        cfg.lr_final = std::min(cfg.lr_final, lr);
        cfg.seed = seed;
        const auto data = train::Dataset::from_directory(train_dir);
        train::TrainSummary s;
        {
          py::gil_scoped_release release;
          s = train::train(model, data, cfg);
        }
        py::list log;
        for (const auto& r : s.log) {
          py::dict d;
          d["step"] = r.step;
          d["loss"] = r.loss;
          d["bpp_est"] = r.bpp_est;
          d["psnr"] = r.psnr;
          d["lr"] = r.lr;
          log.append(d);
        }
        return log;
      },
      py::arg("model"), py::arg("train_dir"), py::arg("lmbda"), py::arg("steps"),
      py::arg("batch") = 8, py::arg("patch") = 128, py::arg("lr") = 5e-5, py::arg("seed") = 1,
      "Trains in place on every PNG under train_dir; returns the log records.");
}
