#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mscnn/metrics.hpp"
#include "mscnn/training.hpp"

namespace py = pybind11;
using namespace mscnn;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Plane8 to_plane(const U8Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D uint8 array");
  Plane8 p(a.shape(1), a.shape(0));
  std::copy_n(a.data(), p.data.size(), p.data.begin());
  return p;
}

U8Array to_array(const Plane8& p) {
  U8Array out({p.height, p.width});
  std::copy(p.data.begin(), p.data.end(), out.mutable_data());
  return out;
}

RdCurve to_curve(const std::vector<std::pair<double, double>>& pts) {
  RdCurve c;
  for (auto [rate, q] : pts) c.points.push_back({rate, q});
  return c;
}

}  // namespace

PYBIND11_MODULE(_mscnn, m) {
  m.doc() = "Dual-branch CNN in-loop filter core";
  py::register_exception<Error>(m, "MscnnError", PyExc_ValueError);

  m.def("psnr", [](const U8Array& a, const U8Array& b) { return psnr(to_plane(a), to_plane(b)); });
  m.def("ssim", [](const U8Array& a, const U8Array& b) { return ssim(to_plane(a), to_plane(b)); });
  m.def(
      "codec_proxy",
      [](const U8Array& img, int qp, int max_passes) {
        return to_array(codec_proxy(to_plane(img), {qp, 8, max_passes}));
      },
      py::arg("image"), py::arg("qp"), py::arg("max_passes") = 32);
  m.def("augment", [](const U8Array& img) {
    py::list out;
    for (const auto& [v, p] : augment(to_plane(img))) out.append(py::make_tuple(v.rotation, v.scale, v.flip, to_array(p)));
    return out;
  });
  m.def("bd_rate", [](const std::vector<std::pair<double, double>>& anchor,
                      const std::vector<std::pair<double, double>>& test) {
    return bd_rate(to_curve(anchor), to_curve(test)).value;
  });
  m.def("bd_psnr", [](const std::vector<std::pair<double, double>>& anchor,
                      const std::vector<std::pair<double, double>>& test) {
    return bd_psnr(to_curve(anchor), to_curve(test)).value;
  });
  m.def(
      "parameter_count",
      [](const std::string& variant) { return parameter_count(NetworkConfig::for_variant(DecoderVariant::parse(variant))); },
      py::arg("variant") = "full");
  m.attr("PUBLISHED_PARAMETER_TOTAL") = kPublishedParameterTotal;

  py::class_<Model<float>>(m, "Model")
      .def_static("zeros", [](const std::string& variant) {
        return Model<float>::zeros(NetworkConfig::for_variant(DecoderVariant::parse(variant)));
      }, py::arg("variant") = "full")
      .def_static("init", [](std::uint64_t seed, const std::string& variant) {
        return Model<float>::init(NetworkConfig::for_variant(DecoderVariant::parse(variant)), seed);
      }, py::arg("seed"), py::arg("variant") = "full")
      .def_static("load", [](const std::string& path) { return load_checkpoint(path); })
      .def("save", [](const Model<float>& self, const std::string& path) { save_checkpoint(self, path); })
      .def_property_readonly("size", &Model<float>::size)
      .def(
          "filter",
          [](const Model<float>& self, const U8Array& cur, const U8Array& ref, std::size_t patch) {
            const Plane8 c = to_plane(cur), r = to_plane(ref);
            if (c.width != r.width || c.height != r.height) throw py::value_error("current and reference differ in size");
            const std::size_t p = patch ? patch : std::min(c.width, c.height);
            Plane8 out;
            {
              py::gil_scoped_release nogil;
              out = filter_frame(self, c, r, PatchGrid::make(c.width, c.height, p, p));
            }
            return to_array(out);
          },
          py::arg("current"), py::arg("reference"), py::arg("patch") = 0);
}
