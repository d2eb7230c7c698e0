#include "vqskill/errors.hpp"
#include "vqskill/text_io.hpp"
#include "vqskill/vqcnmp.hpp"

#include <json.hpp>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

// Checkpoint layout: one JSON header line, then one line per parameter array
// "<name> <count> v0 v1 ...". Matrices are row-major.

namespace vqskill {

namespace {

using nlohmann::json;

const char* act_name(nn::Activation a) { return a == nn::Activation::relu ? "relu" : "identity"; }

json shapes_of(const nn::MlpParams& p) {
  json arr = json::array();
  for (const auto& l : p.layers) arr.push_back({l.weight.cols(), l.weight.rows(), act_name(l.activation)});
  return arr;
}

nn::MlpParams params_from_shapes(const json& arr) {
  nn::MlpParams p;
  for (const auto& s : arr) {
    nn::DenseLayer l;
    const auto in = s.at(0).get<Eigen::Index>();
    const auto out = s.at(1).get<Eigen::Index>();
    const auto act = s.at(2).get<std::string>();
    if (in < 1 || out < 1) throw CheckpointError("layer widths must be positive");
    if (act == "relu")
      l.activation = nn::Activation::relu;
    else if (act == "identity")
      l.activation = nn::Activation::identity;
    else
      throw CheckpointError("unknown activation '" + act + "'");
    l.weight.resize(out, in);
    l.bias.resize(out);
    p.layers.push_back(std::move(l));
  }
  return p;
}

void write_row_major(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  std::string line = name + ' ' + std::to_string(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      line += ' ';
      line += text::format_double(m(r, c));
    }
  out << line << '\n';
}

void read_row_major(std::istream& in, int& line_no, const std::string& name, Eigen::MatrixXd& m) {
  std::string line;
  ++line_no;
  if (!std::getline(in, line)) throw CheckpointError("line " + std::to_string(line_no) + ": missing array '" + name + "'");
  std::istringstream ls(line);
  std::string got;
  long count = -1;
  ls >> got >> count;
  if (got != name) throw CheckpointError("line " + std::to_string(line_no) + ": expected '" + name + "', found '" + got + "'");
  if (count != static_cast<long>(m.size()))
    throw ShapeError("checkpoint array '" + name + "' has " + std::to_string(count) + " values, header declares " +
                     std::to_string(m.size()));
  std::string tok;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!(ls >> tok)) throw CheckpointError("line " + std::to_string(line_no) + ": '" + name + "' truncated");
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || errno == ERANGE)
        throw CheckpointError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
      m(r, c) = v;
    }
  if (ls >> tok) throw CheckpointError("line " + std::to_string(line_no) + ": trailing data in '" + name + "'");
}

template <typename Fn>
void for_each_array(const std::string& prefix, nn::MlpParams& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    fn(prefix + "." + std::to_string(i) + ".weight", p.layers[i].weight);
    Eigen::MatrixXd b = p.layers[i].bias;
    fn(prefix + "." + std::to_string(i) + ".bias", b);
    p.layers[i].bias = b.col(0);
  }
}

}  // namespace

CheckpointSummary save_model(const VqCnmpModel& model, const std::filesystem::path& path) {
  model.check();
  json header;
  header["version"] = model.version;
  header["d"] = model.d;
  header["d_z"] = model.d_z;
  header["K"] = model.codebook.size();
  header["encoder"] = shapes_of(model.encoder);
  header["decoder"] = shapes_of(model.decoder);

  std::string ns = "{\"mean\":";
  text::append_array(ns, model.norm_stats.mean);
  ns += ",\"scale\":";
  text::append_array(ns, model.norm_stats.scale);
  ns += ",\"zero_variance\":[";
  for (std::size_t j = 0; j < model.norm_stats.zero_variance.size(); ++j) {
    if (j) ns += ',';
    ns += model.norm_stats.zero_variance[j] ? "true" : "false";
  }
  ns += "]}";
  header["norm_stats"] = "__NS__";
  std::string head = header.dump();
  head.replace(head.find("\"__NS__\""), 8, ns);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << head << '\n';
  VqCnmpModel copy = model;
  auto emit = [&](const std::string& name, Eigen::MatrixXd& m) { write_row_major(out, name, m); };
  for_each_array("encoder", copy.encoder, emit);
  for_each_array("decoder", copy.decoder, emit);
  write_row_major(out, "codebook", copy.codebook.vectors);
  if (!out) throw CheckpointError("write failed for " + path.string());
  return {"encoder.0.weight[0,0]", model.encoder.layers.front().weight(0, 0)};
}

VqCnmpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty checkpoint");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error&) {
    throw VersionError("checkpoint header is not a v" + std::to_string(kModelVersion) + " header");
  }
  if (!header.is_object() || !header.contains("version") || !header["version"].is_number_integer())
    throw VersionError("checkpoint header is not a v" + std::to_string(kModelVersion) + " header");
  const int version = header["version"].get<int>();
  if (version != kModelVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kModelVersion) + ")");

  VqCnmpModel model;
  try {
    model.version = version;
    model.d = header.at("d").get<int>();
    model.d_z = header.at("d_z").get<int>();
    const int k = header.at("K").get<int>();
    if (model.d < 1 || model.d_z < 1 || k < 1) throw CheckpointError("non-positive dimension in header");
    model.encoder = params_from_shapes(header.at("encoder"));
    model.decoder = params_from_shapes(header.at("decoder"));
    model.codebook.vectors.resize(k, model.d_z);
    const auto& ns = header.at("norm_stats");
    const auto& mean = ns.at("mean");
    const auto& scale = ns.at("scale");
    model.norm_stats.mean.resize(static_cast<Eigen::Index>(mean.size()));
    model.norm_stats.scale.resize(static_cast<Eigen::Index>(scale.size()));
    for (std::size_t j = 0; j < mean.size(); ++j) model.norm_stats.mean[static_cast<Eigen::Index>(j)] = mean[j].get<double>();
    for (std::size_t j = 0; j < scale.size(); ++j) model.norm_stats.scale[static_cast<Eigen::Index>(j)] = scale[j].get<double>();
    for (const auto& z : ns.at("zero_variance")) model.norm_stats.zero_variance.push_back(z.get<bool>());
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  model.check();

  int line_no = 1;
  auto read = [&](const std::string& name, Eigen::MatrixXd& m) { read_row_major(in, line_no, name, m); };
  for_each_array("encoder", model.encoder, read);
  for_each_array("decoder", model.decoder, read);
  read_row_major(in, line_no, "codebook", model.codebook.vectors);
  if (std::getline(in, line) && !line.empty()) throw CheckpointError("unexpected trailing data in checkpoint");
  return model;
}

}  // namespace vqskill
