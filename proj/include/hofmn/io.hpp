#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hofmn/configurations.hpp"
#include "hofmn/dataset.hpp"
#include "hofmn/evaluation.hpp"
#include "hofmn/fmn.hpp"
#include "hofmn/hyperopt.hpp"
#include "hofmn/model.hpp"

namespace hofmn {

/// Raised for unreadable or malformed files.
class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered key/value pairs written as "# key: value" lines at the top of CSV
/// outputs and as the first record of JSONL outputs.
using Provenance = std::vector<std::pair<std::string, std::string>>;

/// Shortest decimal that round-trips; infinities as "inf".
inline std::string format_number(double v) { return fmt::format("{}", v); }

inline double parse_number(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  if (text == "inf" || text == "+inf") return kInf;
  if (text == "-inf") return -kInf;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw io_error("not a number: '" + std::string(text) + "'");
  return v;
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  return out;
}

inline void write_provenance(std::ostream& out, const Provenance& provenance) {
  for (const auto& [k, v] : provenance) out << "# " << k << ": " << v << '\n';
}

/// Splits a CSV stream into provenance, header and data rows.
struct CsvTable {
  Provenance provenance;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw io_error("missing column '" + name + "'");
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(": ");
      if (colon != std::string::npos && colon > 2)
        t.provenance.emplace_back(line.substr(2, colon - 2), line.substr(colon + 2));
      continue;
    }
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    auto row = split(line);
    if (row.size() != t.header.size())
      throw io_error(fmt::format("row has {} cells, header has {}", row.size(), t.header.size()));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw io_error("CSV has no header");
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------- model

inline nlohmann::json model_to_json(const Model& model, const std::string& seed_provenance = {},
                                    const Provenance& provenance = {}) {
  nlohmann::json j;
  if (!provenance.empty()) {
    nlohmann::json p = nlohmann::json::object();
    for (const auto& [k, v] : provenance) p[k] = v;
    j["provenance"] = p;
  }
  j["architecture"] = {{"input_dim", model.input_dim()}, {"widths", model.architecture().widths}};
  j["class_count"] = model.class_count();
  j["seed_provenance"] = seed_provenance;
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const Matrix& w = model.weights()[l];
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(w.cols()));
      for (Eigen::Index c = 0; c < w.cols(); ++c) row[static_cast<std::size_t>(c)] = w(r, c);
      rows.push_back(row);
    }
    weights.push_back(rows);
    const Vector& b = model.biases()[l];
    biases.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  }
  j["weights"] = weights;
  j["biases"] = biases;
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    Architecture arch{j.at("architecture").at("input_dim").get<std::size_t>(),
                      j.at("architecture").at("widths").get<std::vector<std::size_t>>()};
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    for (const auto& layer : j.at("weights")) {
      const auto rows = layer.get<std::vector<std::vector<double>>>();
      const auto cols = rows.empty() ? 0 : rows[0].size();
      Matrix w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw io_error("ragged weight matrix");
        for (std::size_t c = 0; c < cols; ++c)
          w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
      weights.push_back(std::move(w));
    }
    for (const auto& layer : j.at("biases")) {
      const auto b = layer.get<std::vector<double>>();
      biases.push_back(Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size())));
    }
    Model m(std::move(arch), std::move(weights), std::move(biases));
    if (j.contains("class_count") && j["class_count"].get<std::size_t>() != m.class_count())
      throw io_error("class_count disagrees with the architecture");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("malformed model document: ") + e.what());
  }
}

inline void save_model(const std::string& path, const Model& model, const std::string& seed_provenance = {},
                       const Provenance& provenance = {}) {
  auto out = detail::open_out(path);
  out << model_to_json(model, seed_provenance, provenance).dump(1) << '\n';
}

inline Model load_model(const std::string& path) {
  auto in = detail::open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("'" + path + "' is not a model document: " + e.what());
  }
  return model_from_json(j);
}

// ---------------------------------------------------------------- dataset

inline constexpr char kDatasetMagic[4] = {'H', 'O', 'F', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset_csv(const std::string& path, const Dataset& data, const Provenance& provenance = {}) {
  require(!data.empty(), "dataset is empty");
  auto out = detail::open_out(path);
  detail::write_provenance(out, provenance);
  for (std::size_t i = 0; i < data.dim(); ++i) out << "x_" << i << ',';
  out << "label\n";
  for (const auto& s : data.samples) {
    for (Eigen::Index i = 0; i < s.x.size(); ++i) out << format_number(s.x[i]) << ',';
    out << s.label << '\n';
  }
}

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "binary datasets assume a little-endian host");
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw io_error("truncated binary dataset");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

/// Layout: "HOFD", u32 version, u32 n, u32 d, then n records of d float64
/// followed by an i32 label. Little-endian.
inline void save_dataset_binary(const std::string& path, const Dataset& data) {
  require(!data.empty(), "dataset is empty");
  auto out = detail::open_out(path, true);
  out.write(kDatasetMagic, 4);
  detail::put_le<std::uint32_t>(out, kDatasetVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
  for (const auto& s : data.samples) {
    for (Eigen::Index i = 0; i < s.x.size(); ++i) detail::put_le<double>(out, s.x[i]);
    detail::put_le<std::int32_t>(out, static_cast<std::int32_t>(s.label));
  }
}

/// Reads either layout (binary is recognised by its magic bytes) and
/// validates it.
inline Dataset load_dataset(const std::string& path) {
  auto in = detail::open_in(path, true);
  char magic[4] = {};
  in.read(magic, 4);
  Dataset data;
  if (in.gcount() == 4 && std::memcmp(magic, kDatasetMagic, 4) == 0) {
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != kDatasetVersion) throw io_error(fmt::format("unsupported dataset version {}", version));
    const auto n = detail::get_le<std::uint32_t>(in);
    const auto d = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < n; ++r) {
      Sample s;
      s.x.resize(d);
      for (std::uint32_t i = 0; i < d; ++i) s.x[i] = detail::get_le<double>(in);
      const auto label = detail::get_le<std::int32_t>(in);
      if (label < 0) throw io_error("negative label");
      s.label = static_cast<std::size_t>(label);
      data.samples.push_back(std::move(s));
    }
  } else {
    in.clear();
    in.seekg(0);
    const auto table = detail::read_csv(in);
    const std::size_t d = table.header.size() - 1;
    if (table.header.back() != "label") throw io_error("dataset CSV must end with a label column");
    for (std::size_t i = 0; i < d; ++i)
      if (table.header[i] != fmt::format("x_{}", i)) throw io_error("dataset CSV header must be x_0..x_{d-1},label");
    for (const auto& row : table.rows) {
      Sample s;
      s.x.resize(static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) s.x[static_cast<Eigen::Index>(i)] = parse_number(row[i]);
      const double label = parse_number(row.back());
      if (label < 0 || label != std::floor(label)) throw io_error("labels must be non-negative integers");
      s.label = static_cast<std::size_t>(label);
      data.samples.push_back(std::move(s));
    }
  }
  try {
    data.validate();
  } catch (const rejected_input& e) {
    throw io_error("'" + path + "': " + e.what());
  }
  return data;
}

// ---------------------------------------------------------------- attack results

inline void write_attack_result(std::ostream& out, const AttackResult& result, const Provenance& provenance,
                                bool with_delta = false) {
  detail::write_provenance(out, provenance);
  out << "index,success,best_norm,clean_correct";
  if (with_delta) out << ",best_delta";
  out << '\n';
  for (std::size_t i = 0; i < result.samples.size(); ++i) {
    const auto& s = result.samples[i];
    out << i << ',' << (s.success ? 1 : 0) << ',' << format_number(s.best_norm) << ','
        << (s.clean_correct ? 1 : 0);
    if (with_delta) {
      out << ',';
      for (Eigen::Index k = 0; k < s.best_delta.size(); ++k)
        out << (k ? " " : "") << format_number(s.best_delta[k]);
    }
    out << '\n';
  }
}

inline void save_attack_result(const std::string& path, const AttackResult& result,
                               const Provenance& provenance, bool with_delta = false) {
  auto out = detail::open_out(path);
  write_attack_result(out, result, provenance, with_delta);
}

inline AttackResult load_attack_result(const std::string& path, Provenance* provenance = nullptr) {
  auto in = detail::open_in(path);
  const auto table = detail::read_csv(in);
  const auto c_success = table.column("success");
  const auto c_norm = table.column("best_norm");
  const auto c_clean = table.column("clean_correct");
  std::optional<std::size_t> c_delta;
  for (std::size_t i = 0; i < table.header.size(); ++i)
    if (table.header[i] == "best_delta") c_delta = i;
  AttackResult result;
  for (const auto& row : table.rows) {
    SampleOutcome s;
    s.success = row[c_success] == "1";
    s.best_norm = parse_number(row[c_norm]);
    s.clean_correct = row[c_clean] == "1";
    if (c_delta && !row[*c_delta].empty()) {
      const auto cells = detail::split(row[*c_delta], ' ');
      s.best_delta.resize(static_cast<Eigen::Index>(cells.size()));
      for (std::size_t k = 0; k < cells.size(); ++k) s.best_delta[static_cast<Eigen::Index>(k)] = parse_number(cells[k]);
    }
    if (s.success != std::isfinite(s.best_norm)) throw io_error("success flag disagrees with best_norm");
    result.samples.push_back(std::move(s));
  }
  if (provenance) *provenance = table.provenance;
  return result;
}

inline void save_trace(const std::string& path, const AttackResult& result, const Provenance& provenance) {
  auto out = detail::open_out(path);
  detail::write_provenance(out, provenance);
  out << "sample,k,norm,loss,eps,alpha\n";
  for (const auto& s : result.samples)
    for (const auto& t : s.trace)
      out << t.sample << ',' << t.k << ',' << format_number(t.norm) << ',' << format_number(t.loss) << ','
          << format_number(t.eps) << ',' << format_number(t.alpha) << '\n';
}

// ---------------------------------------------------------------- curves and reports

inline void save_curve(const std::string& path, std::span<const CurvePoint> rows, const Provenance& provenance) {
  auto out = detail::open_out(path);
  detail::write_provenance(out, provenance);
  out << "epsilon,robust_accuracy\n";
  for (const auto& r : rows) out << format_number(r.epsilon) << ',' << format_number(r.robust_accuracy) << '\n';
}

inline std::vector<CurvePoint> load_curve(const std::string& path) {
  auto in = detail::open_in(path);
  const auto table = detail::read_csv(in);
  const auto ce = table.column("epsilon");
  const auto cr = table.column("robust_accuracy");
  std::vector<CurvePoint> rows;
  for (const auto& row : table.rows) rows.push_back({parse_number(row[ce]), parse_number(row[cr])});
  return rows;
}

inline void save_comparison(const std::string& path, std::span<const ComparisonRow> rows,
                            const Provenance& provenance) {
  auto out = detail::open_out(path);
  detail::write_provenance(out, provenance);
  out << "method,total_time_s,median_norm\n";
  for (const auto& r : rows)
    out << r.method << ',' << format_number(r.total_time_s) << ',' << format_number(r.median_norm) << '\n';
}

inline std::vector<ComparisonRow> load_comparison(const std::string& path) {
  auto in = detail::open_in(path);
  const auto table = detail::read_csv(in);
  std::vector<ComparisonRow> rows;
  for (const auto& row : table.rows)
    rows.push_back({row[table.column("method")], parse_number(row[table.column("total_time_s")]),
                    parse_number(row[table.column("median_norm")])});
  return rows;
}

// ---------------------------------------------------------------- tuning history

inline nlohmann::json hyperpoint_to_json(const HyperPoint& h) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : h) j[k] = v;
  return j;
}

inline HyperPoint hyperpoint_from_json(const nlohmann::json& j) {
  HyperPoint h;
  for (const auto& [k, v] : j.items()) h[k] = v.get<double>();
  return h;
}

/// Medians are written as numbers, or null when infinite.
inline nlohmann::json observation_to_json(const Observation& o) {
  nlohmann::json j;
  j["trial"] = o.trial;
  j["config_id"] = o.config_id;
  j["hyperparameters"] = hyperpoint_to_json(o.point);
  j["median"] = std::isfinite(o.median) ? nlohmann::json(o.median) : nlohmann::json(nullptr);
  j["wall_time_s"] = o.wall_time_s;
  return j;
}

inline Observation observation_from_json(const nlohmann::json& j) {
  Observation o;
  o.trial = j.at("trial").get<std::size_t>();
  o.config_id = j.at("config_id").get<std::string>();
  o.point = hyperpoint_from_json(j.at("hyperparameters"));
  o.median = j.at("median").is_null() ? kInf : j.at("median").get<double>();
  o.wall_time_s = j.value("wall_time_s", 0.0);
  return o;
}

/// First line is {"type":"header", <provenance>}; every further line is one
/// trial.
class HistoryWriter {
 public:
  HistoryWriter(const std::string& path, const Provenance& provenance) : out_(detail::open_out(path)) {
    nlohmann::ordered_json header;
    header["type"] = "header";
    for (const auto& [k, v] : provenance) header[k] = v;
    out_ << header.dump() << '\n';
    out_.flush();
  }

  void append(const Observation& o) {
    auto j = observation_to_json(o);
    j["type"] = "trial";
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Trials grouped by configuration id, in file order.
inline std::map<std::string, History> load_history(const std::string& path, Provenance* provenance = nullptr) {
  auto in = detail::open_in(path);
  std::map<std::string, History> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw io_error(std::string("malformed history line: ") + e.what());
    }
    if (j.value("type", "") == "header") {
      if (provenance)
        for (const auto& [k, v] : j.items())
          if (k != "type") provenance->emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
      continue;
    }
    try {
      auto o = observation_from_json(j);
      out[o.config_id].observations.push_back(std::move(o));
    } catch (const nlohmann::json::exception& e) {
      throw io_error(std::string("malformed history record: ") + e.what());
    }
  }
  return out;
}

/// The best trial of one configuration in a history file.
inline HyperPoint best_point_from_history(const std::string& path, const std::string& config_id) {
  const auto all = load_history(path);
  const auto it = all.find(config_id);
  if (it == all.end()) throw io_error("history has no trials for '" + config_id + "'");
  const auto best = it->second.best_index();
  if (!best) throw io_error("history has no finite median for '" + config_id + "'");
  return it->second.observations[*best].point;
}

}  // namespace hofmn
