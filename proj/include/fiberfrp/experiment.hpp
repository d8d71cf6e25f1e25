// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and the simulate / kernels / optimize / evaluate /
// sweep pipelines behind the command-line tool.
#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "fiberfrp/frp.hpp"
#include "fiberfrp/kernels.hpp"
#include "fiberfrp/metrics.hpp"
#include "fiberfrp/nbgd.hpp"
#include "fiberfrp/seed.hpp"
#include "fiberfrp/signal.hpp"
#include "fiberfrp/ssfm.hpp"

namespace fiberfrp {

namespace fs = std::filesystem;

/// Shortest round-trip decimal form ("10", "0.1", "1.2e-05").
inline std::string fmt_num(double v, std::chars_format f = std::chars_format{}) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[400];
  const auto res = f == std::chars_format{} ? std::to_chars(buf, buf + sizeof buf, v)
                                            : std::to_chars(buf, buf + sizeof buf, v, f);
  return std::string(buf, res.ptr);
}

struct ExperimentConfig {
  // Fiber, datasheet units.
  double alpha_db_km = 0.2;
  double beta2_ps2_km = -21.7;
  double gamma_w_km = 1.2;
  double length_km = 120.0;
  double ssfm_step_m = 10.0;
  // Signal.
  std::string constellation = "16QAM";
  double symbol_rate = 60e9;
  double rolloff = 0.01;
  int samples_per_symbol = 4;
  int rrc_span = 64;
  std::size_t n_symbols = 16384;
  AseConfig ase;
  // Sweep.
  std::vector<double> powers_dbm{-2, 0, 2, 4, 6, 8, 10, 12, 14, 16};
  std::vector<int> memories{0, 1, 2, 3, 4, 5};
  bool sweep_optimize = true;
  std::size_t workers = 0;  // 0: hardware concurrency
  // Kernels and optimizer.
  std::size_t kernel_nz = 640;
  OptimizerConfig optimizer;
  Polarization train_pol = Polarization::x;
  // Run.
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  FiberParams fiber() const {
    FiberParams f;
    f.alpha = alpha_db_km * std::log(10.0) / 10.0 / 1e3;
    f.beta2 = beta2_ps2_km * 1e-27;
    f.gamma = gamma_w_km / 1e3;
    f.length = length_km * 1e3;
    return f;
  }
  PulseShape pulse() const {
    PulseShape p;
    p.rolloff = rolloff;
    p.symbol_period = 1.0 / symbol_rate;
    p.span = rrc_span;
    p.samples_per_symbol = samples_per_symbol;
    return p;
  }
  LinkPower power(double dbm) const { return {dbm, symbol_rate}; }

  void validate() const {
    if (!(alpha_db_km >= 0.0)) throw ConfigError("fiber.alpha_db_per_km must be >= 0");
    if (!(gamma_w_km >= 0.0)) throw ConfigError("fiber.gamma_per_w_per_km must be >= 0");
    if (!(length_km > 0.0)) throw ConfigError("fiber.length_km must be positive");
    if (!(ssfm_step_m > 0.0)) throw ConfigError("fiber.ssfm_step_m must be positive");
    if (!(symbol_rate > 0.0)) throw ConfigError("signal.symbol_rate_gbaud must be positive");
    if (n_symbols == 0) throw ConfigError("signal.n_symbols must be positive");
    if (powers_dbm.empty()) throw ConfigError("sweep.powers_dbm is empty");
    if (memories.empty()) throw ConfigError("sweep.memories is empty");
    for (int m : memories)
      if (m < 0) throw ConfigError("sweep.memories entries must be >= 0");
    if (kernel_nz == 0) throw ConfigError("kernels.n_z must be positive");
    make_constellation(constellation);
    pulse().validate();
    fiber().validate();
    ase.validate();
    optimizer.validate();
  }

  /// Every setting that affects results (seed and output directory excluded).
  std::string canonical() const {
    std::ostringstream os;
    os << "alpha_db_km=" << fmt_num(alpha_db_km) << "\nbeta2_ps2_km=" << fmt_num(beta2_ps2_km)
       << "\ngamma_w_km=" << fmt_num(gamma_w_km) << "\nlength_km=" << fmt_num(length_km)
       << "\nssfm_step_m=" << fmt_num(ssfm_step_m) << "\nconstellation=" << constellation
       << "\nsymbol_rate=" << fmt_num(symbol_rate) << "\nrolloff=" << fmt_num(rolloff)
       << "\nsamples_per_symbol=" << samples_per_symbol << "\nrrc_span=" << rrc_span << "\nn_symbols=" << n_symbols
       << "\nase=" << ase.enabled << "\nnoise_figure_db=" << fmt_num(ase.noise_figure_db)
       << "\ncenter_frequency=" << fmt_num(ase.center_frequency) << "\nkernel_nz=" << kernel_nz
       << "\ntrain_pol=" << to_string(train_pol) << "\noptimizer=" << nlohmann::json(optimizer).dump() << '\n';
    return os.str();
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
    return buf;
  }
};

namespace detail {
template <class T>
std::vector<T> parse_list(const std::string& s, const char* key) {
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(", \t"), boost::token_compress_on);
  std::vector<T> out;
  for (auto& p : parts) {
    boost::trim(p);
    if (p.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, int>) out.push_back(std::stoi(p, &used));
      else out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw ConfigError(std::string("cannot parse list entry '") + p + "' of " + key);
    }
  }
  return out;
}

template <class T>
T parse_number(const std::string& raw, const std::string& key) {
  const auto v = boost::trim_copy(raw);
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config: cannot parse " + key + " = '" + raw + "'");
  return out;
}

inline bool parse_bool(const std::string& v, const char* key) {
  const auto s = boost::to_lower_copy(boost::trim_copy(v));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(std::string("cannot parse boolean ") + key + " = " + v);
}

inline Polarization parse_pol(const std::string& v) {
  if (v == "x") return Polarization::x;
  if (v == "y") return Polarization::y;
  throw ConfigError("polarization must be x or y, got '" + v + "'");
}
}  // namespace detail

/// Reads section.key values from an INI file; missing keys keep their defaults.
inline ExperimentConfig load_config(const std::string& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  static const std::map<std::string, std::vector<std::string>> known = {
      {"fiber", {"alpha_db_per_km", "beta2_ps2_per_km", "gamma_per_w_per_km", "length_km", "ssfm_step_m"}},
      {"signal", {"constellation", "symbol_rate_gbaud", "rolloff", "samples_per_symbol", "rrc_span", "n_symbols"}},
      {"noise", {"ase", "noise_figure_db", "center_frequency_thz"}},
      {"sweep", {"powers_dbm", "memories", "optimize", "workers"}},
      {"kernels", {"n_z"}},
      {"optimizer",
       {"alpha0", "schedule_decay", "schedule_period", "mse_threshold_factor", "max_iterations", "validation_factor",
        "validation_retries", "alpha_retry_shrink", "batch_size", "criterion", "parameter_tolerance",
        "polarization"}},
      {"run", {"seed", "out_dir"}}};
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, _] : body)
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError("config: unknown key " + section + "." + key);
  }
  auto str = [&](const char* k) { return tree.get_optional<std::string>(k); };
  auto num = [&](const char* k, auto& v) {
    if (auto raw = str(k)) v = detail::parse_number<std::decay_t<decltype(v)>>(*raw, k);
  };
  num("fiber.alpha_db_per_km", c.alpha_db_km);
  num("fiber.beta2_ps2_per_km", c.beta2_ps2_km);
  num("fiber.gamma_per_w_per_km", c.gamma_w_km);
  num("fiber.length_km", c.length_km);
  num("fiber.ssfm_step_m", c.ssfm_step_m);
  if (auto v = str("signal.constellation")) c.constellation = boost::trim_copy(*v);
  double gbaud = c.symbol_rate / 1e9;
  num("signal.symbol_rate_gbaud", gbaud);
  c.symbol_rate = gbaud * 1e9;
  num("signal.rolloff", c.rolloff);
  num("signal.samples_per_symbol", c.samples_per_symbol);
  num("signal.rrc_span", c.rrc_span);
  num("signal.n_symbols", c.n_symbols);
  if (auto v = str("noise.ase")) c.ase.enabled = detail::parse_bool(*v, "noise.ase");
  num("noise.noise_figure_db", c.ase.noise_figure_db);
  double thz = c.ase.center_frequency / 1e12;
  num("noise.center_frequency_thz", thz);
  c.ase.center_frequency = thz * 1e12;
  if (auto v = str("sweep.powers_dbm")) c.powers_dbm = detail::parse_list<double>(*v, "sweep.powers_dbm");
  if (auto v = str("sweep.memories")) c.memories = detail::parse_list<int>(*v, "sweep.memories");
  if (auto v = str("sweep.optimize")) c.sweep_optimize = detail::parse_bool(*v, "sweep.optimize");
  num("sweep.workers", c.workers);
  num("kernels.n_z", c.kernel_nz);
  auto& o = c.optimizer;
  num("optimizer.alpha0", o.alpha0);
  num("optimizer.schedule_decay", o.schedule_decay);
  num("optimizer.schedule_period", o.schedule_period);
  num("optimizer.mse_threshold_factor", o.mse_threshold_factor);
  num("optimizer.max_iterations", o.max_iterations);
  num("optimizer.validation_factor", o.validation_factor);
  num("optimizer.validation_retries", o.validation_retries);
  num("optimizer.alpha_retry_shrink", o.alpha_retry_shrink);
  num("optimizer.batch_size", o.batch_size);
  num("optimizer.parameter_tolerance", o.parameter_tolerance);
  if (auto v = str("optimizer.criterion")) {
    const auto name = boost::trim_copy(*v);
    if (name == "mse_difference") o.criterion = ConvergenceCriterion::mse_difference;
    else if (name == "parameter_distance") o.criterion = ConvergenceCriterion::parameter_distance;
    else throw ConfigError("optimizer.criterion must be mse_difference or parameter_distance");
  }
  if (auto v = str("optimizer.polarization")) c.train_pol = detail::parse_pol(boost::trim_copy(*v));
  num("run.seed", c.seed);
  if (auto v = str("run.out_dir")) c.out_dir = boost::trim_copy(*v);
  return c;
}

// ---------------------------------------------------------------------------
// Simulation

enum class Stream { evaluation, training };

inline const char* to_string(Stream s) { return s == Stream::evaluation ? "eval" : "train"; }

struct LinkData {
  DualPolSymbolSeq a;
  DualPolSymbolSeq r;
  double power_dbm = 0.0;
  std::string constellation;
};

/// Filename-safe power tag: 13 -> "13", -2 -> "m2", 12.5 -> "12.5".
inline std::string power_tag(double dbm) {
  std::string s = fmt_num(dbm, std::chars_format::fixed);
  if (!s.empty() && s[0] == '-') s = "m" + s.substr(1);
  return s;
}

inline std::uint64_t symbol_seed(const ExperimentConfig& cfg, Stream stream, const std::string& label) {
  return derive_seed(cfg.seed, std::string("symbols/") + to_string(stream) + "/" + label);
}

/// Transmitter, SSFM, optional ASE, CDC, matched filter and sampler.
inline DualPolSymbolSeq run_link(const ExperimentConfig& cfg, const DualPolSymbolSeq& a, double power_dbm,
                                 std::uint64_t ase_seed) {
  const auto pulse = cfg.pulse();
  const auto fiber = cfg.fiber();
  const auto power = cfg.power(power_dbm);
  auto field = modulate(a, pulse, power);
  field = propagate(std::move(field), fiber, cfg.ssfm_step_m);
  field = add_ase(std::move(field), cfg.ase, fiber, ase_seed);
  field = cdc(std::move(field), fiber);
  return receive(field, pulse, power);
}

namespace detail {
inline constexpr char kSymbolCacheMagic[8] = {'F', 'R', 'P', 'S', 'Y', 'M', 'B', 'S'};

inline void write_symbols(const fs::path& path, const DualPolSymbolSeq& r) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(kSymbolCacheMagic, 8);
    write_le<std::uint64_t>(os, r.size());
    for (const CVec* p : {&r.x, &r.y})
      for (const auto& c : *p) {
        write_le<double>(os, c.real());
        write_le<double>(os, c.imag());
      }
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::optional<DualPolSymbolSeq> read_symbols(const fs::path& path, std::size_t n) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kSymbolCacheMagic)) return std::nullopt;
  try {
    if (read_le<std::uint64_t>(is) != n) return std::nullopt;
    DualPolSymbolSeq r(n);
    for (CVec* p : {&r.x, &r.y})
      for (auto& c : *p) {
        const double re = read_le<double>(is);
        const double im = read_le<double>(is);
        c = {re, im};
      }
    return r;
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}
}  // namespace detail

/// Symbols and received samples for one power; reused from cache_dir when present.
inline LinkData simulate_link(const ExperimentConfig& cfg, double power_dbm, const std::string& label, Stream stream,
                              const std::string& cache_dir = {}) {
  const auto c = make_constellation(label);
  LinkData d;
  d.power_dbm = power_dbm;
  d.constellation = c.label;
  d.a = random_symbols(c, cfg.n_symbols, symbol_seed(cfg, stream, c.label));
  fs::path cache;
  if (!cache_dir.empty()) {
    cache = fs::path(cache_dir) / ("ssfm_" + std::string(to_string(stream)) + "_" + c.label + "_P" +
                                   power_tag(power_dbm) + "_" + cfg.hash() + "_s" + std::to_string(cfg.seed) + ".bin");
    if (auto r = detail::read_symbols(cache, cfg.n_symbols)) {
      d.r = std::move(*r);
      return d;
    }
  }
  const auto ase_seed =
      derive_seed(cfg.seed, std::string("ase/") + to_string(stream) + "/" + c.label + "/" + power_tag(power_dbm));
  d.r = run_link(cfg, d.a, power_dbm, ase_seed);
  if (!cache.empty()) {
    fs::create_directories(cache.parent_path());
    detail::write_symbols(cache, d.r);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Kernels and optimizer

inline KernelTensor analytical_kernels(const ExperimentConfig& cfg, int memory) {
  const auto pulse = cfg.pulse();
  const auto fiber = cfg.fiber();
  return compute_tensor(memory, pulse, fiber, IntegrationGrid::for_link(pulse, fiber, cfg.kernel_nz));
}

/// Training rows and per-attempt validation rows drawn without overlap from one stream.
inline BatchSource make_batch_source(const ExperimentConfig& cfg, const LinkData& train, int memory) {
  const std::size_t n = train.a.size();
  const std::size_t b = cfg.optimizer.batch_size;
  if (2 * b > n)
    throw ConfigError("optimizer.batch_size must be at most half of signal.n_symbols (training and validation rows)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(cfg.seed, "optimizer/training-rows"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(b), order.end());
  const auto pol = cfg.train_pol;
  const auto master = cfg.seed;
  return BatchSource{
      [&train, rows, memory, pol] { return build_batch(train.a, train.r, memory, pol, rows); },
      [&train, rest, memory, pol, b, master](std::size_t attempt) {
        std::vector<std::size_t> pick = rest;
        std::mt19937_64 g(derive_seed(master, "optimizer/validation-rows/" + std::to_string(attempt)));
        std::shuffle(pick.begin(), pick.end(), g);
        pick.resize(b);
        return build_batch(train.a, train.r, memory, pol, pick);
      }};
}

inline NbgdResult train_nbgd(const ExperimentConfig& cfg, int memory, const LinkData& train) {
  const double kappa = nonlinear_scale(cfg.fiber().gamma, cfg.power(train.power_dbm).symbol_energy());
  KernelTensor init(memory);
  init.grid = IntegrationGrid::for_link(cfg.pulse(), cfg.fiber(), cfg.kernel_nz);
  auto res = run_nbgd(make_batch_source(cfg, train, memory), cfg.optimizer, init, kappa);
  res.kernels.training_power_dbm = train.power_dbm;
  res.kernels.seed = cfg.seed;
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  double power_dbm = 0.0;
  std::optional<int> memory;  // empty for the SSFM reference
  std::string source;         // ssfm | analytical | nbgd
  std::string constellation;
  std::optional<double> snr_db;
  double delta_r = 0.0;
  double delta_phi = 0.0;
  double mean_phase_rad = 0.0;
  std::optional<double> relative_error;
};

inline constexpr const char* kEvalHeader =
    "power_dbm,memory,source,constellation,snr_db,delta_r,delta_phi,mean_phase_rad,relative_error,kernel_count,"
    "mults_per_symbol,seed,config_hash";

inline constexpr const char* kMeansHeader =
    "power_dbm,memory,source,constellation,pol,point,s_re,s_im,mu_re,mu_im,sigma2,count,seed,config_hash";

inline std::string eval_csv_line(const EvalRow& r, const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << fmt_num(r.power_dbm) << ',' << (r.memory ? std::to_string(*r.memory) : "") << ',' << r.source << ','
     << r.constellation << ',' << (r.snr_db ? fmt_num(*r.snr_db) : "inf") << ',' << fmt_num(r.delta_r) << ','
     << fmt_num(r.delta_phi) << ',' << fmt_num(r.mean_phase_rad) << ','
     << (r.relative_error ? fmt_num(*r.relative_error) : "") << ',';
  if (r.memory) {
    const auto l = KernelTensor::length(*r.memory);
    os << l << ',' << l;
  } else {
    os << ',';
  }
  os << ',' << cfg.seed << ',' << cfg.hash() << '\n';
  return os.str();
}

inline std::string means_csv_lines(const ConditionalStats& st, double power_dbm, std::optional<int> memory,
                                   const std::string& source, const std::string& label, const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto pol : {Polarization::x, Polarization::y}) {
    const auto& ps = st.of(pol);
    for (std::size_t m = 0; m < ps.size(); ++m) {
      os << fmt_num(power_dbm) << ',' << (memory ? std::to_string(*memory) : "") << ',' << source << ',' << label
         << ',' << to_string(pol) << ',' << m << ',' << fmt_num(ps[m].point.real()) << ','
         << fmt_num(ps[m].point.imag()) << ',' << fmt_num(ps[m].mu.real()) << ',' << fmt_num(ps[m].mu.imag()) << ','
         << fmt_num(ps[m].sigma2) << ',' << ps[m].count << ',' << cfg.seed << ',' << cfg.hash() << '\n';
    }
  }
  return os.str();
}

/// Rows and conditional-mean lines for one power: the SSFM reference plus one row per tensor.
struct EvalCell {
  std::vector<EvalRow> rows;
  std::string eval_lines;
  std::string means_lines;
};

inline EvalRow metric_row(const ConditionalStats& st, const RingStructure& rings, double power_dbm,
                          std::optional<int> memory, std::string source, std::string label) {
  EvalRow row;
  row.power_dbm = power_dbm;
  row.memory = memory;
  row.source = std::move(source);
  row.constellation = std::move(label);
  row.snr_db = snr_db(st);
  row.delta_r = delta_r(st);
  row.delta_phi = delta_phi(st, rings);
  row.mean_phase_rad = mean_phase_rotation(st);
  return row;
}

inline EvalCell evaluate_cell(const ExperimentConfig& cfg, const LinkData& data,
                              const std::vector<const KernelTensor*>& tensors, bool include_ssfm = true) {
  const auto c = make_constellation(data.constellation);
  const auto rings = ring_structure(c);
  const double gamma = cfg.fiber().gamma;
  const double es = cfg.power(data.power_dbm).symbol_energy();
  EvalCell cell;
  auto add = [&](EvalRow row, const ConditionalStats& st) {
    cell.eval_lines += eval_csv_line(row, cfg);
    cell.means_lines += means_csv_lines(st, row.power_dbm, row.memory, row.source, row.constellation, cfg);
    cell.rows.push_back(std::move(row));
  };
  if (include_ssfm) {
    const auto st = conditional_stats(data.a, data.r, c);
    add(metric_row(st, rings, data.power_dbm, std::nullopt, "ssfm", c.label), st);
  }
  for (const KernelTensor* t : tensors) {
    const auto model = predict_sequence(data.a, *t, gamma, es);
    const auto st = conditional_stats(data.a, model, c);
    auto row = metric_row(st, rings, data.power_dbm, t->memory, to_string(t->source), c.label);
    row.relative_error = relative_error(data.r, model);
    add(std::move(row), st);
  }
  return cell;
}

// ---------------------------------------------------------------------------
// File layout and commands

namespace detail {
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void save_tensor_atomic(const fs::path& path, const KernelTensor& t) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  save_tensor(tmp.string(), t);
  fs::rename(tmp, path);
}
}  // namespace detail

inline fs::path cache_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "cache"; }
inline fs::path kernel_path(const ExperimentConfig& cfg, int m) {
  return fs::path(cfg.out_dir) / ("kernels_M" + std::to_string(m) + ".bin");
}
inline fs::path nbgd_path(const ExperimentConfig& cfg, int m, double p) {
  return fs::path(cfg.out_dir) / ("nbgd_M" + std::to_string(m) + "_P" + power_tag(p) + ".bin");
}

/// Writes simulate_<constellation>_P<power>.csv per power.
inline std::vector<fs::path> cmd_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<fs::path> out;
  for (double p : cfg.powers_dbm) {
    const auto d = simulate_link(cfg, p, cfg.constellation, Stream::evaluation, cache_dir(cfg).string());
    std::ostringstream os;
    os << "power_dbm,seed,config_hash,index,ax_re,ax_im,ay_re,ay_im,rx_re,rx_im,ry_re,ry_im\n";
    const std::string prefix = fmt_num(p) + ',' + std::to_string(cfg.seed) + ',' + cfg.hash() + ',';
    for (std::size_t i = 0; i < d.a.size(); ++i) {
      os << prefix << i << ',' << fmt_num(d.a.x[i].real()) << ',' << fmt_num(d.a.x[i].imag()) << ','
         << fmt_num(d.a.y[i].real()) << ',' << fmt_num(d.a.y[i].imag()) << ',' << fmt_num(d.r.x[i].real()) << ','
         << fmt_num(d.r.x[i].imag()) << ',' << fmt_num(d.r.y[i].real()) << ',' << fmt_num(d.r.y[i].imag()) << '\n';
    }
    const auto path = fs::path(cfg.out_dir) / ("simulate_" + d.constellation + "_P" + power_tag(p) + ".csv");
    detail::write_atomic(path, os.str());
    out.push_back(path);
  }
  return out;
}

/// Writes kernels_M<m>.bin, its CSV export and a convergence certificate; returns the certificate.
inline ConvergenceCertificate cmd_kernels(const ExperimentConfig& cfg, int memory) {
  cfg.validate();
  if (memory < 0) throw ConfigError("memory must be >= 0");
  const auto t = analytical_kernels(cfg, memory);
  const auto cert = certify(t, cfg.pulse(), cfg.fiber());
  const auto path = kernel_path(cfg, memory);
  detail::save_tensor_atomic(path, t);
  export_tensor_csv((fs::path(cfg.out_dir) / ("kernels_M" + std::to_string(memory) + ".csv")).string(), t);
  nlohmann::json j = {{"memory", memory},
                      {"kernel_count", t.size()},
                      {"base_grid", {{"t_min", t.grid.t_min}, {"t_max", t.grid.t_max}, {"n_t", t.grid.n_t}, {"n_z", t.grid.n_z}}},
                      {"refined_grid", {{"n_t", cert.refined.n_t}, {"n_z", cert.refined.n_z}}},
                      {"max_relative_change", cert.max_relative_change},
                      {"max_change_vs_peak", cert.max_change_vs_peak},
                      {"tolerance", cert.tolerance},
                      {"passed", cert.passed()},
                      {"config_hash", cfg.hash()}};
  detail::write_atomic(fs::path(cfg.out_dir) / ("kernels_M" + std::to_string(memory) + "_certificate.json"),
                       j.dump(2) + "\n");
  return cert;
}

inline KernelTensor load_or_compute_kernels(const ExperimentConfig& cfg, int memory) {
  const auto path = kernel_path(cfg, memory);
  if (fs::exists(path)) {
    auto t = load_tensor(path.string());
    if (t.memory != memory) throw ConfigError(path.string() + " holds memory " + std::to_string(t.memory));
    return t;
  }
  auto t = analytical_kernels(cfg, memory);
  detail::save_tensor_atomic(path, t);
  return t;
}

/// Trains at one power on the training stream; writes the tensor and the JSON report.
/// Throws OptimizerError (after writing the report) when validation never passes.
inline NbgdResult cmd_optimize(const ExperimentConfig& cfg, int memory, double power_dbm) {
  cfg.validate();
  if (memory < 0) throw ConfigError("memory must be >= 0");
  const auto train = simulate_link(cfg, power_dbm, cfg.constellation, Stream::training, cache_dir(cfg).string());
  auto res = train_nbgd(cfg, memory, train);
  auto j = res.report.to_json();
  j["training_power_dbm"] = power_dbm;
  j["constellation"] = train.constellation;
  j["polarization"] = to_string(cfg.train_pol);
  j["seed"] = cfg.seed;
  j["config_hash"] = cfg.hash();
  const auto path = nbgd_path(cfg, memory, power_dbm);
  detail::write_atomic(fs::path(path.string().substr(0, path.string().size() - 4) + "_report.json"), j.dump(2) + "\n");
  if (res.report.status != OptimizerStatus::validated)
    throw OptimizerError("NBGD found no validated estimate for M=" + std::to_string(memory) + " at " +
                         fmt_num(power_dbm) + " dBm");
  detail::save_tensor_atomic(path, res.kernels);
  return res;
}

/// Evaluates tensors at every configured power. With no explicit files, uses the analytical
/// tensor of each configured memory plus any NBGD tensor trained at that power.
inline fs::path cmd_evaluate(const ExperimentConfig& cfg, const std::vector<std::string>& kernel_files,
                             std::optional<int> required_memory = std::nullopt) {
  cfg.validate();
  std::vector<KernelTensor> given;
  for (const auto& f : kernel_files) {
    given.push_back(load_tensor(f));
    if (required_memory && given.back().memory != *required_memory)
      throw ConfigError(f + " has memory " + std::to_string(given.back().memory) + ", requested " +
                        std::to_string(*required_memory));
  }
  std::vector<int> memories = required_memory ? std::vector<int>{*required_memory} : cfg.memories;
  std::vector<KernelTensor> analytic;
  if (given.empty())
    for (int m : memories) analytic.push_back(load_or_compute_kernels(cfg, m));

  std::string eval = std::string(kEvalHeader) + "\n";
  std::string means = std::string(kMeansHeader) + "\n";
  for (double p : cfg.powers_dbm) {
    const auto data = simulate_link(cfg, p, cfg.constellation, Stream::evaluation, cache_dir(cfg).string());
    std::vector<KernelTensor> trained;
    std::vector<const KernelTensor*> use;
    if (given.empty()) {
      for (const auto& t : analytic) use.push_back(&t);
      for (int m : memories)
        if (fs::exists(nbgd_path(cfg, m, p))) trained.push_back(load_tensor(nbgd_path(cfg, m, p).string()));
      for (const auto& t : trained) use.push_back(&t);
    } else {
      for (const auto& t : given) use.push_back(&t);
    }
    const auto cell = evaluate_cell(cfg, data, use);
    eval += cell.eval_lines;
    means += cell.means_lines;
  }
  const auto label = make_constellation(cfg.constellation).label;
  const auto path = fs::path(cfg.out_dir) / ("evaluate_" + label + ".csv");
  detail::write_atomic(path, eval);
  detail::write_atomic(fs::path(cfg.out_dir) / ("conditional_means_" + label + ".csv"), means);
  return path;
}

struct SweepSummary {
  std::size_t cells = 0;
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // cell, message
};

/// Power x memory grid. Cells (one per power) are skipped when their CSV exists.
inline SweepSummary cmd_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  SweepSummary sum;
  std::mutex mu;
  std::vector<KernelTensor> analytic;
  for (int m : cfg.memories) analytic.push_back(load_or_compute_kernels(cfg, m));
  const fs::path cells = fs::path(cfg.out_dir) / "cells";
  auto cell_path = [&](double p, const char* kind) {
    return cells / (std::string(kind) + "_P" + power_tag(p) + ".csv");
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.powers_dbm.size(); i = next++) {
      const double p = cfg.powers_dbm[i];
      const std::string name = "P" + power_tag(p);
      if (fs::exists(cell_path(p, "evaluate")) && fs::exists(cell_path(p, "means"))) {
        std::lock_guard lock(mu);
        ++sum.skipped;
        continue;
      }
      try {
        const auto data = simulate_link(cfg, p, cfg.constellation, Stream::evaluation, cache_dir(cfg).string());
        std::vector<KernelTensor> trained;
        if (cfg.sweep_optimize && cfg.fiber().gamma > 0.0) {
          std::optional<LinkData> train;
          for (int m : cfg.memories) {
            const auto np = nbgd_path(cfg, m, p);
            if (fs::exists(np)) {
              trained.push_back(load_tensor(np.string()));
              continue;
            }
            if (!train) train = simulate_link(cfg, p, cfg.constellation, Stream::training, cache_dir(cfg).string());
            auto res = train_nbgd(cfg, m, *train);
            auto j = res.report.to_json();
            j["training_power_dbm"] = p;
            j["config_hash"] = cfg.hash();
            detail::write_atomic(fs::path(np.string().substr(0, np.string().size() - 4) + "_report.json"),
                                 j.dump(2) + "\n");
            if (res.report.status != OptimizerStatus::validated) {
              std::lock_guard lock(mu);
              sum.failures.emplace_back(name + "/M" + std::to_string(m), "NBGD found no validated estimate");
              continue;
            }
            detail::save_tensor_atomic(np, res.kernels);
            trained.push_back(std::move(res.kernels));
          }
        }
        std::vector<const KernelTensor*> use;
        for (const auto& t : analytic) use.push_back(&t);
        for (const auto& t : trained) use.push_back(&t);
        const auto cell = evaluate_cell(cfg, data, use);
        detail::write_atomic(cell_path(p, "means"), cell.means_lines);
        detail::write_atomic(cell_path(p, "evaluate"), cell.eval_lines);
        std::lock_guard lock(mu);
        ++sum.computed;
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        sum.failures.emplace_back(name, e.what());
      }
    }
  };
  std::size_t nw = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  nw = std::min(nw, cfg.powers_dbm.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  sum.cells = cfg.powers_dbm.size();

  std::string eval = std::string(kEvalHeader) + "\n";
  std::string means = std::string(kMeansHeader) + "\n";
  for (double p : cfg.powers_dbm) {
    for (auto [kind, dst] : {std::pair{"evaluate", &eval}, std::pair{"means", &means}}) {
      std::ifstream is(cell_path(p, kind), std::ios::binary);
      if (is) *dst += std::string(std::istreambuf_iterator<char>(is), {});
    }
  }
  const auto label = make_constellation(cfg.constellation).label;
  detail::write_atomic(fs::path(cfg.out_dir) / ("sweep_evaluate_" + label + ".csv"), eval);
  detail::write_atomic(fs::path(cfg.out_dir) / ("sweep_conditional_means_" + label + ".csv"), means);
  std::string fail = "cell,error\n";
  std::sort(sum.failures.begin(), sum.failures.end());
  for (const auto& [cell, msg] : sum.failures) {
    std::string m = msg;
    std::replace(m.begin(), m.end(), ',', ';');
    std::replace(m.begin(), m.end(), '\n', ' ');
    fail += cell + ',' + m + '\n';
  }
  detail::write_atomic(fs::path(cfg.out_dir) / "sweep_failures.csv", fail);
  return sum;
}

}  // namespace fiberfrp
