#pragma once

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core_data.hpp"
#include "errors.hpp"
#include "mirror.hpp"
#include "train.hpp"

namespace dlnlab::io {

using data::Dataset;
using json = nlohmann::json;

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + p.string());
}

// ---- dataset file ----
// header "n d s mean sigma seed", n rows of d values, y, then beta* (or "-").

inline std::string format_dataset(const Dataset& ds) {
  std::string out;
  out += std::to_string(ds.n) + ' ' + std::to_string(ds.d) + ' ' + std::to_string(ds.meta.s) + ' ' +
         fmt17(ds.meta.mean) + ' ' + fmt17(ds.meta.sigma) + ' ' + std::to_string(ds.meta.seed) + '\n';
  auto line = [&](auto&& get, int m) {
    for (int j = 0; j < m; ++j) {
      if (j) out += ' ';
      out += fmt17(get(j));
    }
    out += '\n';
  };
  for (int i = 0; i < ds.n; ++i) line([&](int j) { return ds.raw_rows(i, j); }, ds.d);
  line([&](int i) { return ds.raw_y(i); }, ds.n);
  if (ds.sparse_truth) line([&](int j) { return (*ds.sparse_truth)(j); }, ds.d);
  else out += "-\n";
  return out;
}

inline Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  long long n = 0, d = 0, s = 0;
  std::uint64_t seed = 0;
  std::string mean_s, sigma_s;
  if (!(in >> n >> d >> s >> mean_s >> sigma_s >> seed))
    throw Error(ErrorKind::Io, "malformed dataset header");
  require(n >= 1 && d >= 1 && n * d <= (1LL << 31), ErrorKind::Io, "dataset header has bad sizes");
  auto num = [&](const std::string& tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw Error(ErrorKind::Io, "bad number '" + tok + "'");
    return v;
  };
  auto next = [&]() {
    std::string tok;
    if (!(in >> tok)) throw Error(ErrorKind::Io, "dataset file truncated");
    return num(tok);
  };
  Mat rows(n, d);
  for (long long i = 0; i < n; ++i)
    for (long long j = 0; j < d; ++j) rows(i, j) = next();
  Vec y(n);
  for (long long i = 0; i < n; ++i) y(i) = next();
  std::optional<Vec> truth;
  std::string tok;
  if (!(in >> tok)) throw Error(ErrorKind::Io, "dataset file lacks the truth line");
  if (tok != "-") {
    Vec t(d);
    t(0) = num(tok);
    for (long long j = 1; j < d; ++j) t(j) = next();
    truth = std::move(t);
  }
  if (in >> tok) throw Error(ErrorKind::Io, "trailing data in dataset file");
  return data::make_dataset(std::move(rows), std::move(y), std::move(truth),
                            data::DatasetMeta{static_cast<int>(s), num(mean_s), num(sigma_s), seed});
}

inline void write_dataset(const std::filesystem::path& p, const Dataset& ds) { write_file(p, format_dataset(ds)); }
inline Dataset read_dataset(const std::filesystem::path& p) { return parse_dataset(read_file(p)); }

// ---- key=value configs ----

struct KeySpec {
  std::string key;
  std::string def;
  std::string help;
};
using Schema = std::vector<KeySpec>;

class Config {
 public:
  Config() = default;
  explicit Config(const Schema& schema) {
    for (const auto& k : schema) kv_.emplace_back(k.key, k.def);
  }

  bool has(const std::string& k) const { return find(k) != nullptr; }

  const std::string& str(const std::string& k) const {
    const auto* v = find(k);
    if (!v) throw Error(ErrorKind::InvalidArgument, "unknown key '" + k + "'");
    return *v;
  }

  void set(const std::string& k, std::string v) {
    for (auto& [key, val] : kv_)
      if (key == k) {
        val = std::move(v);
        return;
      }
    throw Error(ErrorKind::InvalidArgument, "unknown key '" + k + "'");
  }

  double num(const std::string& k) const {
    const std::string& s = str(k);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw Error(ErrorKind::InvalidArgument, k + ": not a number '" + s + "'");
    return v;
  }

  long long integer(const std::string& k) const {
    const std::string& s = str(k);
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') {
      // accept integral values written in floating point, e.g. 1e6
      const double x = num(k);
      if (x != std::floor(x) || std::abs(x) > 9e15)
        throw Error(ErrorKind::InvalidArgument, k + ": not an integer '" + s + "'");
      return static_cast<long long>(x);
    }
    return v;
  }

  std::uint64_t u64(const std::string& k) const {
    const std::string& s = str(k);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || s[0] == '-') throw Error(ErrorKind::InvalidArgument, k + ": not a seed '" + s + "'");
    return v;
  }

  bool flag(const std::string& k) const {
    const std::string& s = str(k);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off" || s.empty()) return false;
    throw Error(ErrorKind::InvalidArgument, k + ": not a boolean '" + s + "'");
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return kv_; }
  bool operator==(const Config& o) const { return kv_ == o.kv_; }

 private:
  const std::string* find(const std::string& k) const {
    for (const auto& [key, val] : kv_)
      if (key == k) return &val;
    return nullptr;
  }
  std::vector<std::pair<std::string, std::string>> kv_;
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Applies key=value lines on top of `base`. '#' starts a comment line.
inline Config parse_config(const std::string& text, Config base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!base.has(key))
      throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    base.set(key, trim(line.substr(eq + 1)));
  }
  return base;
}

inline Config parse_config(const std::string& text, const Schema& schema) { return parse_config(text, Config(schema)); }

inline std::string print_config(const Config& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.items()) out += k + '=' + v + '\n';
  return out;
}

inline std::string config_hash(const Config& cfg) { return hex64(fnv1a(print_config(cfg))); }

// ---- trajectory CSV ----

inline void csv_row(std::string& out, std::int64_t k, double loss, const mirror::MirrorLedger& L, const Vec* beta) {
  const Vec a = L.alpha_sq().cwiseSqrt();
  out += std::to_string(k) + ',' + fmt17(loss) + ',' + fmt17(L.gain().lpNorm<1>()) + ',' + fmt17(a.minCoeff()) +
         ',' + fmt17(a.maxCoeff()) + ',' + fmt17(L.phi().cwiseAbs().maxCoeff());
  if (beta)
    for (Eigen::Index j = 0; j < beta->size(); ++j) out += ',' + fmt17((*beta)(j));
  out += '\n';
}

inline std::string trajectory_csv(const dln::Trajectory& tr, const Dataset& ds, bool with_beta,
                                  const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n# status=" + dln::to_string(tr.status) + "\n";
  out += "k,loss,gain_l1,alpha_min,alpha_max,phi_linf";
  if (with_beta)
    for (int j = 0; j < ds.d; ++j) out += ",beta_" + std::to_string(j);
  out += '\n';
  for (const auto& r : tr.records) csv_row(out, r.k, r.loss, r.ledger, with_beta ? &r.beta : nullptr);
  if (tr.records.empty() || tr.records.back().k != tr.iterations)
    csv_row(out, tr.iterations, tr.final_loss, tr.ledger, with_beta ? &tr.final_state.beta : nullptr);
  return out;
}

// ---- JSON ----

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vec vec_from_json(const json& a) {
  require(a.is_array(), ErrorKind::Io, "expected a JSON array");
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].is_number(), ErrorKind::Io, "expected numbers in JSON array");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

// Ledger plus limits (limits only for converged runs).
inline json ledger_json(const dln::Trajectory& tr) {
  const auto& L = tr.ledger;
  json j;
  j["status"] = dln::to_string(tr.status);
  j["iterations"] = tr.iterations;
  j["final_loss"] = tr.final_loss;
  j["max_abs_step"] = L.max_abs_step;
  j["degenerate_zero"] = tr.degenerate_zero;
  j["alpha0"] = to_json(L.alpha0);
  j["sum_qplus"] = to_json(L.sum_qplus);
  j["sum_qminus"] = to_json(L.sum_qminus);
  j["sum_grad"] = to_json(L.sum_grad);
  j["gain"] = to_json(L.gain());
  j["beta"] = to_json(tr.final_state.beta);
  if (tr.status == dln::RunStatus::Converged) {
    const auto lim = mirror::limits(L);
    j["alpha_inf"] = to_json(lim.alpha_inf);
    j["phi_inf"] = to_json(L.phi());
    j["beta_tilde0"] = to_json(lim.beta_tilde0);
    j["beta_tilde0_bound_holds"] = lim.bound_holds;
  }
  return j;
}

}  // namespace dlnlab::io
