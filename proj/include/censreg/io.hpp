#pragma once

// File formats: dataset CSV (inline "<limit>*" or sidecar mask), NDJSON draw
// store, predictive CSVs, and JSON documents. Every double is written with
// 17 significant digits so reading it back is bit-exact.

#include "censreg/model.hpp"
#include "censreg/predict.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace censreg {

using json = nlohmann::json;

class ParseError : public std::runtime_error {
 public:
  ParseError(long row, long col, const std::string& what)
      : std::runtime_error(locate(row, col) + what), row_(row), col_(col) {}
  long row() const { return row_; }
  long col() const { return col_; }

 private:
  static std::string locate(long row, long col) {
    std::string s;
    if (row >= 0) s += "row " + std::to_string(row);
    if (col >= 0) s += (s.empty() ? "" : ", ") + std::string("column ") + std::to_string(col);
    return s.empty() ? s : s + ": ";
  }
  long row_;
  long col_;
};

inline std::string fmt17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void dump17(const json& j, std::string& out) {
  switch (j.type()) {
    case json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += json(it.key()).dump();
        out += ':';
        dump17(it.value(), out);
      }
      out += '}';
      break;
    }
    case json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        dump17(j[i], out);
      }
      out += ']';
      break;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite number cannot be written as JSON");
      std::string s = fmt17(v);
      // keep a float marker so integral values read back as floats
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      out += s;
      break;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// Compact JSON with 17-significant-digit floats.
inline std::string dump17(const json& j) {
  std::string s;
  detail::dump17(j, s);
  return s;
}

inline double parse_double(const std::string& field, long row, long col) {
  if (field.empty()) throw ParseError(row, col, "empty field");
  if (field == "inf") return std::numeric_limits<double>::infinity();
  if (field == "-inf") return -std::numeric_limits<double>::infinity();
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || errno == ERANGE)
    throw ParseError(row, col, "cannot parse '" + field + "' as a number");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset CSV

enum class CensorEncoding { inline_star, sidecar };

inline std::string dataset_header(const CensoredDataset& d) {
  std::string h;
  if (d.y) h += "y";
  for (Index j = 0; j < d.p(); ++j) h += (h.empty() ? "" : ",") + std::string("x") + std::to_string(j + 1);
  if (d.w)
    for (Index k = 0; k < d.w->cols(); ++k) h += ",w" + std::to_string(k + 1);
  return h;
}

/// Censored entries hold their limit. With `inline_star` they carry a
/// trailing '*'; with `sidecar` the mask goes to `write_mask_csv`.
inline void write_dataset_csv(std::ostream& os, const CensoredDataset& d,
                              CensorEncoding enc = CensorEncoding::inline_star) {
  os << dataset_header(d) << '\n';
  for (Index i = 0; i < d.n(); ++i) {
    std::string line;
    if (d.y) line += fmt17((*d.y)(i));
    for (Index j = 0; j < d.p(); ++j) {
      if (!line.empty() || j > 0) line += ',';
      if (d.mask(i, j)) {
        line += fmt17(d.limits(i, j));
        if (enc == CensorEncoding::inline_star) line += '*';
      } else {
        line += fmt17(d.x(i, j));
      }
    }
    if (d.w)
      for (Index k = 0; k < d.w->cols(); ++k) line += ',' + fmt17((*d.w)(i, k));
    os << line << '\n';
  }
}

inline void write_mask_csv(std::ostream& os, const CensoredDataset& d) {
  for (Index j = 0; j < d.p(); ++j) os << (j ? "," : "") << 'x' << j + 1;
  os << '\n';
  for (Index i = 0; i < d.n(); ++i) {
    for (Index j = 0; j < d.p(); ++j) os << (j ? "," : "") << (d.mask(i, j) ? '1' : '0');
    os << '\n';
  }
}

/// Parse a dataset CSV. Columns are identified by header name: "y", "x1".."xp"
/// and "w1".."wr" (in that order within each group). Errors report the
/// 1-based data row and column.
inline CensoredDataset read_dataset_csv(std::istream& is, std::istream* mask_is = nullptr) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(-1, -1, "empty dataset file");
  const auto header = split_csv_line(line);
  long y_col = -1;
  std::vector<long> x_cols, w_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    const long col = static_cast<long>(c) + 1;
    if (h == "y") {
      if (y_col >= 0) throw ParseError(0, col, "duplicate y column");
      y_col = static_cast<long>(c);
    } else if (h.size() > 1 && (h[0] == 'x' || h[0] == 'w') &&
               h.find_first_not_of("0123456789", 1) == std::string::npos) {
      auto& group = h[0] == 'x' ? x_cols : w_cols;
      if (std::stol(h.substr(1)) != static_cast<long>(group.size()) + 1)
        throw ParseError(0, col, "column '" + h + "' out of sequence");
      group.push_back(static_cast<long>(c));
    } else {
      throw ParseError(0, col, "unknown column '" + h + "'");
    }
  }
  if (x_cols.empty()) throw ParseError(0, -1, "no covariate columns");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw ParseError(static_cast<long>(rows.size()) + 1, -1,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    rows.push_back(std::move(f));
  }
  const Index n = static_cast<Index>(rows.size());
  const Index p = static_cast<Index>(x_cols.size());

  BoolMatrix sidecar;
  if (mask_is) {
    if (!std::getline(*mask_is, line)) throw ParseError(-1, -1, "empty mask file");
    if (static_cast<Index>(split_csv_line(line).size()) != p) throw ParseError(0, -1, "mask header width differs from x");
    sidecar = BoolMatrix::Zero(n, p);
    Index i = 0;
    while (std::getline(*mask_is, line)) {
      if (line.empty() || line == "\r") continue;
      const auto f = split_csv_line(line);
      if (i >= n) throw ParseError(i + 1, -1, "mask has more rows than the dataset");
      if (static_cast<Index>(f.size()) != p) throw ParseError(i + 1, -1, "mask row width differs from x");
      for (Index j = 0; j < p; ++j) {
        if (f[j] != "0" && f[j] != "1") throw ParseError(i + 1, j + 1, "mask entries must be 0 or 1");
        sidecar(i, j) = f[j] == "1";
      }
      ++i;
    }
    if (i != n) throw ParseError(i + 1, -1, "mask has fewer rows than the dataset");
  }

  CensoredDataset d;
  d.x.resize(n, p);
  d.mask = BoolMatrix::Zero(n, p);
  d.limits = Matrix::Constant(n, p, -std::numeric_limits<double>::infinity());
  if (y_col >= 0) d.y = Vector(n);
  if (!w_cols.empty()) d.w = Matrix(n, static_cast<Index>(w_cols.size()));
  for (Index i = 0; i < n; ++i) {
    const auto& f = rows[static_cast<std::size_t>(i)];
    const long row = static_cast<long>(i) + 1;
    if (y_col >= 0) (*d.y)(i) = parse_double(f[static_cast<std::size_t>(y_col)], row, y_col + 1);
    for (Index j = 0; j < p; ++j) {
      const long c = x_cols[static_cast<std::size_t>(j)];
      std::string s = f[static_cast<std::size_t>(c)];
      bool star = !s.empty() && s.back() == '*';
      if (star) s.pop_back();
      const double v = parse_double(s, row, c + 1);
      if (mask_is) {
        if (star && !sidecar(i, j)) throw ParseError(row, c + 1, "entry marked censored but mask is 0");
        star = sidecar(i, j);
      }
      d.x(i, j) = v;
      if (star) {
        if (!std::isfinite(v)) throw ParseError(row, c + 1, "censoring limit must be finite");
        d.mask(i, j) = true;
        d.limits(i, j) = v;
      } else if (!std::isfinite(v)) {
        throw ParseError(row, c + 1, "observed value must be finite");
      }
    }
    for (std::size_t k = 0; k < w_cols.size(); ++k)
      (*d.w)(i, static_cast<Index>(k)) = parse_double(f[static_cast<std::size_t>(w_cols[k])], row, w_cols[k] + 1);
  }
  return d;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for reading");
  return f;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  return f;
}

inline CensoredDataset read_dataset_file(const std::string& path, const std::string& mask_path = {}) {
  auto f = open_in(path);
  if (mask_path.empty()) return read_dataset_csv(f);
  auto m = open_in(mask_path);
  return read_dataset_csv(f, &m);
}

// ---------------------------------------------------------------------------
// parameters and draw store

inline json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Index>(i)) = a[i].get<double>();
  return v;
}

inline json matrix_rows_json(const Matrix& m) {
  json a = json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

inline Matrix matrix_from_rows_json(const json& a) {
  if (a.empty()) return {};
  Matrix m(static_cast<Index>(a.size()), static_cast<Index>(a[0].size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != static_cast<std::size_t>(m.cols())) throw std::invalid_argument("ragged matrix in JSON");
    m.row(static_cast<Index>(i)) = vector_from_json(a[i]).transpose();
  }
  return m;
}

inline json params_json(const ModelParams& p) {
  return json{{"beta0", p.beta0},
              {"beta", vector_json(p.beta)},
              {"sigma2", p.sigma2},
              {"gamma", matrix_rows_json(p.gamma)},
              {"omega", matrix_rows_json(p.omega)}};
}

inline ModelParams params_from_json(const json& j) {
  ModelParams p;
  p.beta0 = j.at("beta0").get<double>();
  p.beta = vector_from_json(j.at("beta"));
  p.sigma2 = j.at("sigma2").get<double>();
  p.gamma = matrix_from_rows_json(j.at("gamma"));
  p.omega = matrix_from_rows_json(j.at("omega"));
  return p;
}

inline json draw_json(const Draw& d) {
  const auto& g = d.params.gamma;
  const auto& om = d.params.omega;
  json vec_g = json::array();
  for (Index c = 0; c < g.cols(); ++c)
    for (Index r = 0; r < g.rows(); ++r) vec_g.push_back(g(r, c));
  json lower = json::array();
  for (Index c = 0; c < om.cols(); ++c)
    for (Index r = c; r < om.rows(); ++r) lower.push_back(om(r, c));
  json j{{"iteration", d.iteration},
         {"beta0", d.params.beta0},
         {"beta", vector_json(d.params.beta)},
         {"sigma2", d.params.sigma2},
         {"gamma", vec_g},
         {"omega_lower", lower}};
  if (d.imputations) j["imputations"] = vector_json(*d.imputations);
  return j;
}

inline Draw draw_from_json(const json& j, Index p, Index r) {
  Draw d;
  d.iteration = j.at("iteration").get<long>();
  d.params.beta0 = j.at("beta0").get<double>();
  d.params.beta = vector_from_json(j.at("beta"));
  d.params.sigma2 = j.at("sigma2").get<double>();
  const auto& g = j.at("gamma");
  const auto& lo = j.at("omega_lower");
  if (d.params.beta.size() != p || static_cast<Index>(g.size()) != r * p ||
      static_cast<Index>(lo.size()) != p * (p + 1) / 2)
    throw std::invalid_argument("draw record dimensions differ from the header");
  d.params.gamma.resize(r, p);
  std::size_t k = 0;
  for (Index c = 0; c < p; ++c)
    for (Index rr = 0; rr < r; ++rr) d.params.gamma(rr, c) = g[k++].get<double>();
  d.params.omega.resize(p, p);
  k = 0;
  for (Index c = 0; c < p; ++c)
    for (Index rr = c; rr < p; ++rr) d.params.omega(rr, c) = d.params.omega(c, rr) = lo[k++].get<double>();
  if (j.contains("imputations")) d.imputations = vector_from_json(j["imputations"]);
  return d;
}

/// First line: metadata object; then one object per stored draw.
inline void write_drawstore(std::ostream& os, const DrawStore& s) {
  json entries = json::array();
  for (const auto& [i, c] : s.censored_entries) entries.push_back(json::array({i, c}));
  const json header{{"format", "censreg-drawstore"},
                    {"version", 1},
                    {"seed", s.seed},
                    {"n_iter", s.n_iter},
                    {"burn_in", s.burn_in},
                    {"thin", s.thin},
                    {"scan_prob", s.scan_prob},
                    {"p", s.p},
                    {"r", s.r},
                    {"has_aux", s.has_aux},
                    {"complete", s.complete},
                    {"row_updates", s.row_updates},
                    {"approximate_updates", s.approximate_updates},
                    {"draws", s.draws.size()},
                    {"censored_entries", entries}};
  os << dump17(header) << '\n';
  for (const auto& d : s.draws) os << dump17(draw_json(d)) << '\n';
}

inline DrawStore read_drawstore(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(-1, -1, "empty draw store");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(1, -1, std::string("bad draw store header: ") + e.what());
  }
  if (h.value("format", "") != "censreg-drawstore") throw ParseError(1, -1, "not a draw store file");
  DrawStore s;
  s.seed = h.at("seed").get<std::uint64_t>();
  s.n_iter = h.at("n_iter").get<long>();
  s.burn_in = h.at("burn_in").get<long>();
  s.thin = h.at("thin").get<long>();
  s.scan_prob = h.at("scan_prob").get<double>();
  s.p = h.at("p").get<Index>();
  s.r = h.at("r").get<Index>();
  s.has_aux = h.at("has_aux").get<bool>();
  s.complete = h.at("complete").get<bool>();
  s.row_updates = h.at("row_updates").get<std::uint64_t>();
  s.approximate_updates = h.at("approximate_updates").get<std::uint64_t>();
  for (const auto& e : h.at("censored_entries")) s.censored_entries.emplace_back(e[0].get<Index>(), e[1].get<Index>());
  const auto expected = h.at("draws").get<std::size_t>();
  long lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      s.draws.push_back(draw_from_json(json::parse(line), s.p, s.r));
    } catch (const std::exception& e) {
      throw ParseError(lineno, -1, e.what());
    }
  }
  if (s.draws.size() != expected)
    throw ParseError(lineno, -1, "header announces " + std::to_string(expected) + " draws, found " +
                                     std::to_string(s.draws.size()));
  return s;
}

// ---------------------------------------------------------------------------
// predictive output

inline void write_predictive_draws(std::ostream& os, const std::vector<PredictiveDraws>& pds, Index row_offset = 0) {
  os << "row_id,draw_index,y_draw\n";
  for (std::size_t i = 0; i < pds.size(); ++i)
    for (Index s = 0; s < pds[i].size(); ++s)
      os << row_offset + static_cast<Index>(i) << ',' << s << ',' << fmt17(pds[i].y_draws(s)) << '\n';
}

inline void write_predictive_components(std::ostream& os, const std::vector<PredictiveDraws>& pds,
                                        Index row_offset = 0) {
  os << "row_id,draw_index,linear_predictor,sigma2\n";
  for (std::size_t i = 0; i < pds.size(); ++i)
    for (Index s = 0; s < pds[i].size(); ++s)
      os << row_offset + static_cast<Index>(i) << ',' << s << ',' << fmt17(pds[i].linear_predictor(s)) << ','
         << fmt17(pds[i].sigma2(s)) << '\n';
}

inline void write_predictive_summary(std::ostream& os, const std::vector<PredictiveDraws>& pds,
                                     const std::optional<Vector>& y, Index row_offset = 0) {
  os << "row_id,mean,sd,q05,q50,q95,log_pred_density_if_y_known\n";
  for (std::size_t i = 0; i < pds.size(); ++i) {
    const auto s = summarize(pds[i]);
    os << row_offset + static_cast<Index>(i) << ',' << fmt17(s.mean) << ',' << fmt17(s.sd) << ',' << fmt17(s.q05)
       << ',' << fmt17(s.q50) << ',' << fmt17(s.q95) << ',';
    if (y) os << fmt17(log_predictive_density(pds[i], (*y)(static_cast<Index>(i))));
    os << '\n';
  }
}

/// Rebuild per-row predictive draws from the draws and components CSVs.
/// Rows come back ordered by row_id.
inline std::vector<PredictiveDraws> read_predictions(std::istream& draws_is, std::istream& comp_is) {
  std::map<long, std::vector<std::array<double, 3>>> rows;
  std::string line;
  if (!std::getline(draws_is, line) || line.rfind("row_id,draw_index,y_draw", 0) != 0)
    throw ParseError(0, -1, "bad predictive draws header");
  long r = 0;
  while (std::getline(draws_is, line)) {
    ++r;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw ParseError(r, -1, "expected 3 fields");
    const long id = static_cast<long>(parse_double(f[0], r, 1));
    const long s = static_cast<long>(parse_double(f[1], r, 2));
    auto& v = rows[id];
    if (s != static_cast<long>(v.size())) throw ParseError(r, 2, "draw_index out of sequence");
    v.push_back({parse_double(f[2], r, 3), 0.0, 0.0});
  }
  if (!std::getline(comp_is, line) || line.rfind("row_id,draw_index,linear_predictor,sigma2", 0) != 0)
    throw ParseError(0, -1, "bad predictive components header");
  r = 0;
  while (std::getline(comp_is, line)) {
    ++r;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw ParseError(r, -1, "expected 4 fields");
    const long id = static_cast<long>(parse_double(f[0], r, 1));
    const long s = static_cast<long>(parse_double(f[1], r, 2));
    auto it = rows.find(id);
    if (it == rows.end() || s < 0 || s >= static_cast<long>(it->second.size()))
      throw ParseError(r, -1, "component without a matching draw");
    it->second[static_cast<std::size_t>(s)][1] = parse_double(f[2], r, 3);
    it->second[static_cast<std::size_t>(s)][2] = parse_double(f[3], r, 4);
  }
  std::vector<PredictiveDraws> out;
  for (const auto& [id, v] : rows) {
    PredictiveDraws pd;
    const Index S = static_cast<Index>(v.size());
    pd.y_draws.resize(S);
    pd.linear_predictor.resize(S);
    pd.sigma2.resize(S);
    for (Index s = 0; s < S; ++s) {
      pd.y_draws(s) = v[static_cast<std::size_t>(s)][0];
      pd.linear_predictor(s) = v[static_cast<std::size_t>(s)][1];
      pd.sigma2(s) = v[static_cast<std::size_t>(s)][2];
    }
    out.push_back(std::move(pd));
  }
  return out;
}

}  // namespace censreg
