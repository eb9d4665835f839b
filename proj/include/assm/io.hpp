#pragma once

/**
 * @file
 * @brief Output and persistence: provenance-tagged CSV tables, JSON documents, and JSON
 * (de)serialization of trajectories, dictionaries and baseline models.
 *
 * CSV numbers are printed with 17 significant digits, so a written file reads back to the same
 * doubles and identical inputs always produce identical bytes.
 */

#include "baselines.hpp"
#include "collect.hpp"
#include "dictionary.hpp"
#include "mpc.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef ASSM_VERSION
#define ASSM_VERSION "0.0.0"
#endif

namespace assm {

using Json = nlohmann::json;
namespace fs = std::filesystem;

/// Config hash and code version stamped on every output file.
struct Provenance
{
  std::string config_hash;
  std::string version{ASSM_VERSION};
};

inline std::string format_double(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------------------------
// CSV

/// Table with named columns; one row per record.
struct CsvTable
{
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(const std::vector<double> & values)
  {
    std::vector<std::string> r;
    r.reserve(values.size());
    for (double v : values) r.push_back(format_double(v));
    rows.push_back(std::move(r));
  }
  void add_row(std::vector<std::string> cells) { rows.push_back(std::move(cells)); }
};

inline void write_text(const fs::path & path, const std::string & text)
{
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error(ErrorKind::io, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path & path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// The first line is a `# config_hash=... version=...` comment, the second the header.
inline void write_csv(const fs::path & path, const CsvTable & t, const Provenance & prov)
{
  std::string out = "# config_hash=" + prov.config_hash + " version=" + prov.version + "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += "\n";
  for (const auto & r : t.rows) {
    require(r.size() == t.columns.size(), "csv: row width differs from header in '" + path.string() + "'");
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
    out += "\n";
  }
  write_text(path, out);
}

/// Numeric CSV read back into a column-per-record matrix (rows = columns of the file).
inline std::pair<std::vector<std::string>, Mat> read_numeric_csv(const fs::path & path)
{
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> records;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size())
      throw Error(ErrorKind::precondition, "csv '" + path.string() + "': ragged row");
    std::vector<double> r;
    for (const auto & c : cells) {
      try {
        std::size_t used = 0;
        r.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception &) {
        throw Error(ErrorKind::precondition, "csv '" + path.string() + "': non-numeric cell '" + c + "'");
      }
    }
    records.push_back(std::move(r));
  }
  if (header.empty()) throw Error(ErrorKind::precondition, "csv '" + path.string() + "': missing header");
  Mat m(static_cast<Index>(header.size()), static_cast<Index>(records.size()));
  for (std::size_t k = 0; k < records.size(); ++k)
    for (std::size_t i = 0; i < header.size(); ++i) m(static_cast<Index>(i), static_cast<Index>(k)) = records[k][i];
  return {header, m};
}

/// Columns t, x0..x{n-1}, then u0..u{m-1} when the trajectory carries inputs.
inline void write_trajectory_csv(const fs::path & path, const Trajectory & t, const Provenance & prov,
                                 const std::string & value_prefix = "x")
{
  CsvTable tab;
  tab.columns.push_back("t");
  for (Index i = 0; i < t.dim(); ++i) tab.columns.push_back(value_prefix + std::to_string(i));
  for (Index i = 0; i < t.inputs.rows(); ++i) tab.columns.push_back("u" + std::to_string(i));
  for (Index k = 0; k < t.size(); ++k) {
    std::vector<double> r{t.times[k]};
    for (Index i = 0; i < t.dim(); ++i) r.push_back(t.values(i, k));
    for (Index i = 0; i < t.inputs.rows(); ++i) r.push_back(t.inputs(i, k));
    tab.add_row(r);
  }
  write_csv(path, tab, prov);
}

inline Trajectory read_trajectory_csv(const fs::path & path, TrajectoryLabel label)
{
  const auto [header, m] = read_numeric_csv(path);
  if (header.empty() || header.front() != "t")
    throw Error(ErrorKind::precondition, "trajectory csv '" + path.string() + "': first column must be t");
  Index n_x = 0, n_u = 0;
  for (std::size_t i = 1; i < header.size(); ++i) (header[i].rfind('u', 0) == 0 ? n_u : n_x)++;
  Trajectory t;
  t.label = label;
  t.times = m.row(0).transpose();
  t.values = m.middleRows(1, n_x);
  if (n_u > 0) t.inputs = m.middleRows(1 + n_x, n_u);
  t.validate();
  return t;
}

inline void write_json(const fs::path & path, Json doc, const Provenance & prov)
{
  doc["provenance"] = {{"config_hash", prov.config_hash}, {"version", prov.version}};
  write_text(path, doc.dump(2) + "\n");
}

/// JSON has no non-finite numbers; they are written as null and read back as NaN.
inline double json_number(const Json & j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

inline Json read_json(const fs::path & path)
{
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception & e) {
    throw Error(ErrorKind::precondition, "invalid JSON in '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// Matrices and models

inline Json to_json(const Mat & m)
{
  Json data = Json::array();
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Mat mat_from_json(const Json & j)
{
  const auto r = j.at("rows").get<Index>();
  const auto c = j.at("cols").get<Index>();
  const auto & d = j.at("data");
  require(r >= 0 && c >= 0 && static_cast<Index>(d.size()) == r * c, "json matrix: data size differs from shape");
  Mat m(r, c);
  std::size_t k = 0;
  for (Index jj = 0; jj < c; ++jj)
    for (Index i = 0; i < r; ++i) m(i, jj) = d[k++].get<double>();
  return m;
}

inline Json to_json(const Vec & v) { return to_json(Mat(v)); }
inline Vec vec_from_json(const Json & j)
{
  const Mat m = mat_from_json(j);
  require(m.cols() == 1 || m.size() == 0, "json vector: expected one column");
  return m.size() == 0 ? Vec() : Vec(m.col(0));
}

inline Json to_json(const StaticSSMModel & m)
{
  return {{"d", m.d()},          {"n_w", m.n_w()},      {"n_r", m.n_r()}, {"anchor", to_json(m.anchor)},
          {"static_input", to_json(m.static_input)}, {"V", to_json(m.V)}, {"W", to_json(m.W)},
          {"R", to_json(m.R)},   {"B", to_json(m.B)}};
}

inline StaticSSMModel static_model_from_json(const Json & j)
{
  StaticSSMModel m(j.at("d").get<Index>(), j.at("n_w").get<int>(), j.at("n_r").get<int>());
  m.anchor = vec_from_json(j.at("anchor"));
  m.static_input = vec_from_json(j.at("static_input"));
  m.V = mat_from_json(j.at("V"));
  m.W = mat_from_json(j.at("W"));
  m.R = mat_from_json(j.at("R"));
  m.B = mat_from_json(j.at("B"));
  m.validate();
  return m;
}

inline Json to_json(const ASSMDictionary & dict)
{
  Json nodes = Json::array();
  for (const auto & n : dict.nodes()) {
    nodes.push_back({{"name", n.name},
                     {"q", to_json(n.q)},
                     {"model", to_json(n.bundle.model)},
                     {"b_first", to_json(n.bundle.b_first)},
                     {"test_nmte", n.report.test_nmte},
                     {"residual_energy", n.report.residual_energy},
                     {"singular_values", to_json(n.report.singular_values)}});
  }
  const auto & cm = dict.critical_manifold();
  const auto & s = dict.sampler();
  return {{"kind", "assm-dictionary"},
          {"sampler", {{"kind", to_string(s.kind)}, {"radius", s.radius}, {"exponent", s.exponent}, {"order", s.order}}},
          {"critical_manifold",
           {{"n_s", cm.n_s()},
            {"n_i", cm.n_i()},
            {"input_dim", cm.input_dim()},
            {"S", to_json(cm.s_coefficients())},
            {"I", to_json(cm.i_coefficients())},
            {"selector", to_json(cm.selector())},
            {"round_trip", cm.round_trip_error()}}},
          {"nodes", nodes}};
}

inline SamplerConfig sampler_from_json(const Json & j)
{
  SamplerConfig s;
  const auto kind = j.at("kind").get<std::string>();
  require(kind == "midw" || kind == "qpr", "sampler kind must be 'midw' or 'qpr'");
  s.kind = kind == "midw" ? SamplerKind::midw : SamplerKind::qpr;
  s.radius = j.value("radius", 0.0);
  s.exponent = j.value("exponent", 2.0);
  s.order = j.value("order", 2);
  return s;
}

inline std::shared_ptr<const ASSMDictionary> dictionary_from_json(const Json & j)
{
  require(j.value("kind", std::string()) == "assm-dictionary", "not an aSSM dictionary document");
  const Json & c = j.at("critical_manifold");
  CriticalManifoldMap cm = CriticalManifoldMap::from_coefficients(
    c.at("input_dim").get<Index>(), mat_from_json(c.at("S")), c.at("n_s").get<int>(), mat_from_json(c.at("I")),
    c.at("n_i").get<int>(), mat_from_json(c.at("selector")), c.at("round_trip").get<double>());
  std::vector<DictionaryNode> nodes;
  for (const auto & n : j.at("nodes")) {
    DictionaryNode nd;
    nd.name = n.at("name").get<std::string>();
    nd.q = vec_from_json(n.at("q"));
    nd.bundle.model = static_model_from_json(n.at("model"));
    nd.bundle.b_first = mat_from_json(n.at("b_first"));
    nd.report.test_nmte = n.value("test_nmte", 0.0);
    nd.report.residual_energy = n.value("residual_energy", 0.0);
    if (n.contains("singular_values")) nd.report.singular_values = vec_from_json(n.at("singular_values"));
    nodes.push_back(std::move(nd));
  }
  return std::make_shared<const ASSMDictionary>(std::move(nodes), std::move(cm), sampler_from_json(j.at("sampler")));
}

inline Json to_json(const TPWLModel & m)
{
  Json locals = Json::array();
  for (const auto & l : m.locals())
    locals.push_back({{"x", to_json(l.x)}, {"u", to_json(l.u)}, {"anchor", to_json(l.anchor)},
                      {"A", to_json(l.a)}, {"B", to_json(l.b)}, {"c", to_json(l.c)}});
  return {{"kind", "tpwl"}, {"basis", to_json(m.basis())}, {"threshold", m.threshold()}, {"locals", locals}};
}

inline TPWLModel tpwl_from_json(const Json & j)
{
  require(j.value("kind", std::string()) == "tpwl", "not a TPWL document");
  std::vector<TPWLLocal> locals;
  for (const auto & l : j.at("locals")) {
    TPWLLocal t;
    t.x = vec_from_json(l.at("x"));
    t.u = vec_from_json(l.at("u"));
    t.anchor = vec_from_json(l.at("anchor"));
    t.a = mat_from_json(l.at("A"));
    t.b = mat_from_json(l.at("B"));
    t.c = vec_from_json(l.at("c"));
    locals.push_back(std::move(t));
  }
  return TPWLModel(mat_from_json(j.at("basis")), std::move(locals), j.at("threshold").get<double>());
}

inline Json to_json(const KoopmanModel & m)
{
  return {{"kind", "koopman"},
          {"A", to_json(m.A)},
          {"B", to_json(m.B)},
          {"G", to_json(m.G)},
          {"lift", to_json(m.lift)},
          {"K", to_json(m.K)},
          {"care_residual", m.care.residual},
          {"open_loop_stable", m.open_loop_stable}};
}

inline KoopmanModel koopman_from_json(const Json & j)
{
  require(j.value("kind", std::string()) == "koopman", "not a Koopman document");
  KoopmanModel m;
  m.A = mat_from_json(j.at("A"));
  m.B = mat_from_json(j.at("B"));
  m.G = mat_from_json(j.at("G"));
  m.lift = mat_from_json(j.at("lift"));
  m.K = mat_from_json(j.at("K"));
  m.care.K = m.K;
  m.care.residual = j.value("care_residual", 0.0);
  m.open_loop_stable = j.value("open_loop_stable", false);
  return m;
}

}  // namespace assm
