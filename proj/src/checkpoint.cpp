#include "lpimpute/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "lpimpute/error.hpp"

namespace lpimpute::nn {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  const double* data;
  std::size_t size;
};

std::vector<NamedArray> named_arrays(const NetSpec& spec, const NetParams& params) {
  std::vector<NamedArray> out;
  const auto layers = spec.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    const auto& p = params.layers.at(l);
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.push_back({prefix + "weight", {s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, nullptr, 0});
    out.push_back({prefix + "bias", {s.out_channels}, p.bias.data(), static_cast<std::size_t>(p.bias.size())});
    if (s.use_batchnorm) {
      for (const auto& [name, vec] : {std::pair{"bn_scale", &p.bn_scale}, std::pair{"bn_shift", &p.bn_shift},
                                      std::pair{"running_mean", &p.running_mean},
                                      std::pair{"running_var", &p.running_var}}) {
        out.push_back({prefix + name, {s.out_channels}, vec->data(), static_cast<std::size_t>(vec->size())});
      }
    }
  }
  return out;
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::None: break;
  }
  return "none";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "none") return Activation::None;
  throw DataError("unknown activation '" + s + "'");
}

}  // namespace

void save_params(std::ostream& out, const NetSpec& spec, const NetParams& params) {
  const auto arrays = named_arrays(spec, params);
  out << "lpimpute-params 1 " << arrays.size() << '\n';
  std::size_t layer = 0;
  for (const auto& a : arrays) {
    out << a.name << ' ' << a.shape.size();
    for (auto d : a.shape) out << ' ' << d;
    out << '\n';
    if (a.name.ends_with(".weight")) {
      // Row-major (out, in, kh, kw) matches the weight matrix's (row, column) order.
      const auto& w = params.layers.at(layer++).weight;
      bool first = true;
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          out << (first ? "" : " ") << g17(w(r, c));
          first = false;
        }
    } else {
      for (std::size_t k = 0; k < a.size; ++k) out << (k ? " " : "") << g17(a.data[k]);
    }
    out << '\n';
  }
}

NetParams load_params(std::istream& in, const NetSpec& spec) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "lpimpute-params" || version != 1) {
    throw DataError("not an lpimpute parameter container");
  }
  NetParams params = zeros_like(init_params(spec, 0));
  const auto expected = named_arrays(spec, params);
  if (count != expected.size()) throw DataError("parameter container has wrong array count");

  std::size_t layer = 0;
  for (const auto& e : expected) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank) || name != e.name || rank != e.shape.size()) {
      throw DataError("expected array '" + e.name + "' in parameter container");
    }
    std::size_t total = 1;
    for (std::size_t k = 0; k < rank; ++k) {
      std::size_t d = 0;
      if (!(in >> d) || d != e.shape[k]) throw DataError("shape mismatch for array '" + e.name + "'");
      total *= d;
    }
    std::vector<double> values(total);
    for (auto& v : values) {
      std::string tok;
      if (!(in >> tok)) throw DataError("truncated array '" + e.name + "'");
      const auto* end = tok.data() + tok.size();
      auto [ptr, ec] = std::from_chars(tok.data(), end, v);
      if (ec != std::errc{} || ptr != end) throw DataError("bad number '" + tok + "' in array '" + e.name + "'");
    }
    const auto dot = e.name.find('.');
    const std::string field = e.name.substr(dot + 1);
    if (field == "weight") {
      auto& w = params.layers[layer].weight;
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = values[k++];
    } else {
      auto& p = params.layers[layer];
      Eigen::VectorXd* target = field == "bias"           ? &p.bias
                                : field == "bn_scale"     ? &p.bn_scale
                                : field == "bn_shift"     ? &p.bn_shift
                                : field == "running_mean" ? &p.running_mean
                                                          : &p.running_var;
      *target = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
    const auto layers = spec.layers();
    const bool last_of_layer = layers[layer].use_batchnorm ? field == "running_var" : field == "bias";
    if (last_of_layer) ++layer;
  }
  return params;
}

void save_spec(std::ostream& out, const NetSpec& spec) {
  const auto layers = spec.layers();
  out << "netspec " << spec.input_channels << ' ' << spec.rows << ' ' << spec.cols << ' ' << layers.size() << '\n';
  for (const auto& l : layers) {
    out << "layer " << l.in_channels << ' ' << l.out_channels << ' ' << l.kernel_h << ' ' << l.kernel_w << ' '
        << activation_name(l.activation) << ' ' << (l.use_batchnorm ? 1 : 0) << ' ' << g17(l.dropout_rate) << '\n';
  }
}

NetSpec load_spec(std::istream& in) {
  std::string tag;
  NetSpec spec;
  std::size_t count = 0;
  if (!(in >> tag >> spec.input_channels >> spec.rows >> spec.cols >> count) || tag != "netspec" || count == 0) {
    throw DataError("malformed netspec block");
  }
  for (std::size_t k = 0; k < count; ++k) {
    ConvLayerSpec l;
    std::string act;
    int bn = 0;
    if (!(in >> tag >> l.in_channels >> l.out_channels >> l.kernel_h >> l.kernel_w >> act >> bn >> l.dropout_rate) ||
        tag != "layer") {
      throw DataError("malformed layer line in netspec block");
    }
    l.activation = parse_activation(act);
    l.use_batchnorm = bn != 0;
    if (k + 1 == count) {
      spec.output = l;
    } else {
      spec.hidden.push_back(l);
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return spec;
}

}  // namespace lpimpute::nn
