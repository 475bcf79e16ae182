#include "wscl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "wscl/error.hpp"

#ifndef WSCL_VERSION
#define WSCL_VERSION "dev"
#endif

namespace fs = std::filesystem;

namespace wscl {

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::Config, what); }

bool non_negative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Strict field reader for one JSON object.
class Fields {
public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) config_error(where_ + " must be an object");
  }

  const Json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void size(const char* key, std::size_t& out) {
    if (const Json* v = find(key)) {
      if (!non_negative_integer(*v)) {
        config_error(path(key) + " must be a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }
  void real(const char* key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) config_error(path(key) + " must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) config_error(path(key) + " must be finite");
    }
  }
  void real(const char* key, float& out) {
    double tmp = out;
    real(key, tmp);
    out = static_cast<float>(tmp);
  }
  void flag(const char* key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) config_error(path(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void text(const char* key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) config_error(path(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) config_error("unknown key '" + (where_.empty() ? item.key() : where_ + "." + item.key()) + "'");
    }
  }

private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ArchConfig arch_from_json(const Json& j) {
  ArchConfig arch;
  Fields f(j, "arch");
  std::string kind = to_string(arch.kind);
  f.text("kind", kind);
  arch.kind = arch_kind_from_string(kind);
  if (const Json* w = f.find("widths")) {
    if (!w->is_array()) config_error("arch.widths must be an array");
    arch.widths.clear();
    for (const auto& v : *w) {
      if (!non_negative_integer(v) || v.get<std::size_t>() == 0) config_error("arch.widths entries must be positive integers");
      arch.widths.push_back(v.get<std::size_t>());
    }
  }
  f.size("kernel", arch.kernel);
  f.finish();
  try {
    arch.validate();
  } catch (const Error& e) {
    config_error(std::string("arch: ") + e.detail());
  }
  return arch;
}

DataConfig data_from_json(const Json& j) {
  DataConfig d;
  Fields f(j, "data");
  f.text("stream", d.stream);
  f.text("train", d.train_path);
  f.text("test", d.test_path);
  f.size("tasks", d.tasks);
  f.text("dream", d.dream);
  f.real("dream_fraction", d.dream_fraction);
  f.real("noise_pct", d.noise_pct);
  f.size("downscale", d.downscale);
  f.finish();
  if (d.train_path.empty() != d.test_path.empty()) config_error("data.train and data.test must be given together");
  if (d.train_path.empty()) {
    try {
      parse_synth_spec(d.stream);
    } catch (const Error& e) {
      config_error(std::string("data.stream: ") + e.detail());
    }
  } else if (d.tasks == 0) {
    config_error("data.tasks must be positive");
  }
  if (!(d.dream_fraction > 0.0 && d.dream_fraction <= 1.0)) config_error("data.dream_fraction must lie in (0,1]");
  if (!(d.noise_pct >= 0.0 && d.noise_pct <= 1.0)) config_error("data.noise_pct must lie in [0,1]");
  if (d.downscale == 0) config_error("data.downscale must be >= 1");
  return d;
}

WsclConfig wscl_from_json(const Json& j) {
  WsclConfig c;
  Fields f(j, "wscl");
  std::string regime = to_string(c.regime);
  f.text("regime", regime);
  c.regime = regime_from_string(regime);
  f.size("wake_epochs", c.wake_epochs);
  f.size("sleep_epochs", c.sleep_epochs);
  f.real("lr", c.lr);
  f.size("batch_size", c.batch_size);
  f.real("alpha", c.alpha);
  f.size("short_term_capacity", c.short_term_capacity);
  f.size("long_term_capacity", c.long_term_capacity);
  f.real("wake_view_ratio", c.wake_view_ratio);
  f.real("selection_tail", c.selection_tail);
  if (const Json* s = f.find("stages")) {
    Fields sf(*s, "wscl.stages");
    sf.flag("wake_search", c.stages.wake_search);
    sf.flag("nrem", c.stages.nrem);
    sf.flag("rem", c.stages.rem);
    sf.finish();
  }
  if (const Json* m = f.find("method")) {
    if (m->is_string()) {
      c.method.kind = method_kind_from_string(m->get<std::string>());
    } else {
      Fields mf(*m, "wscl.method");
      std::string kind = to_string(c.method.kind);
      mf.text("kind", kind);
      c.method.kind = method_kind_from_string(kind);
      mf.real("alpha_logits", c.method.alpha_logits);
      mf.real("beta_replay", c.method.beta_replay);
      mf.finish();
    }
  }
  std::string fwt_mode = to_string(c.fwt_mode);
  f.text("fwt_mode", fwt_mode);
  c.fwt_mode = fwt_mode_from_string(fwt_mode);
  f.size("initial_depth", c.initial_depth);
  f.flag("parallel_candidates", c.parallel_candidates);
  f.flag("compute_fwt", c.compute_fwt);
  f.size("baseline_epochs", c.baseline_epochs);
  f.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    config_error(std::string("wscl: ") + e.detail());
  }
  return c;
}

/// The part of a config document that defines what is computed: seeds and
/// the output directory are stripped so runs of one config can share a
/// directory and be compared across directories.
Json canonical(const Json& doc) {
  Json out = doc;
  out.erase("seeds");
  out.erase("output_dir");
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json matrix_json(const AccuracyMatrix& r) {
  Json rows = Json::array();
  for (std::size_t t = 0; t < r.tasks(); ++t) {
    Json row = Json::array();
    for (std::size_t i = 0; i < r.tasks(); ++i) row.push_back(r.has(t, i) ? Json(r.at(t, i)) : Json(nullptr));
    rows.push_back(row);
  }
  return rows;
}

Json metrics_json(const MetricsReport& m) {
  Json j;
  j["eval_mode"] = to_string(m.eval_mode);
  j["faa"] = m.faa;
  j["fwt"] = m.fwt ? Json(*m.fwt) : Json(nullptr);
  j["forgetting"] = m.forgetting ? Json(*m.forgetting) : Json(nullptr);
  j["per_task_accuracies"] = m.per_task_accuracies;
  j["update_count"] = m.update_count;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidData, path.string() + ": " + e.what());
  }
}

struct Stat {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double q = 0.0;
    for (double x : xs) q += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(q / static_cast<double>(xs.size() - 1));
  }
  return s;
}

Json stat_json(const std::vector<double>& xs) {
  if (xs.empty()) return nullptr;
  const Stat s = stat_of(xs);
  return Json{{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

std::vector<fs::path> run_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("run-", 0) == 0 && entry.path().extension() == ".json") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Json summarize(const std::vector<Json>& records) {
  std::map<std::string, std::vector<const Json*>> by_point;
  std::vector<std::string> order;
  for (const Json& r : records) {
    const std::string p = r.at("point").get<std::string>();
    if (!by_point.count(p)) order.push_back(p);
    by_point[p].push_back(&r);
  }
  Json rows = Json::array();
  for (const auto& p : order) {
    std::vector<double> faa, fwt, forg, upd;
    std::vector<std::uint64_t> seeds;
    for (const Json* r : by_point[p]) {
      const Json& m = r->at("metrics").at("class_il");
      faa.push_back(m.at("faa").get<double>());
      if (!m.at("fwt").is_null()) fwt.push_back(m.at("fwt").get<double>());
      if (!m.at("forgetting").is_null()) forg.push_back(m.at("forgetting").get<double>());
      upd.push_back(r->at("total_updates").get<double>());
      seeds.push_back(r->at("seed").get<std::uint64_t>());
    }
    rows.push_back(Json{{"point", p}, {"seeds", seeds}, {"faa", stat_json(faa)}, {"fwt", stat_json(fwt)},
                        {"forgetting", stat_json(forg)}, {"update_count", stat_json(upd)}});
  }
  return rows;
}

}  // namespace

ExperimentConfig config_from_json(const Json& doc) {
  ExperimentConfig cfg;
  Fields f(doc, "");
  if (const Json* a = f.find("arch")) cfg.arch = arch_from_json(*a);
  if (const Json* d = f.find("data")) cfg.data = data_from_json(*d);
  if (const Json* w = f.find("wscl")) cfg.wscl = wscl_from_json(*w);
  if (const Json* s = f.find("seeds")) {
    if (!s->is_array() || s->empty()) config_error("seeds must be a non-empty array");
    cfg.seeds.clear();
    for (const auto& v : *s) {
      if (!non_negative_integer(v)) config_error("seeds must be non-negative integers");
      cfg.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  f.text("output_dir", cfg.output_dir);
  if (const Json* s = f.find("sweep")) {
    Fields sf(*s, "sweep");
    SweepSpec sweep;
    sf.text("parameter", sweep.parameter);
    const Json* values = sf.find("values");
    sf.finish();
    if (sweep.parameter.empty()) config_error("sweep.parameter is required");
    if (!values || !values->is_array() || values->empty()) config_error("sweep.values must be a non-empty array");
    sweep.values.assign(values->begin(), values->end());
    cfg.sweep = std::move(sweep);
  }
  f.finish();
  return cfg;
}

Json to_json(const ArchConfig& arch) {
  return Json{{"kind", to_string(arch.kind)}, {"widths", arch.widths}, {"kernel", arch.kernel}};
}

Json to_json(const WsclConfig& c) {
  return Json{{"regime", to_string(c.regime)},
              {"wake_epochs", c.wake_epochs},
              {"sleep_epochs", c.sleep_epochs},
              {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"alpha", c.alpha},
              {"short_term_capacity", c.short_term_capacity},
              {"long_term_capacity", c.long_term_capacity},
              {"wake_view_ratio", c.wake_view_ratio},
              {"selection_tail", c.selection_tail},
              {"stages", {{"wake_search", c.stages.wake_search}, {"nrem", c.stages.nrem}, {"rem", c.stages.rem}}},
              {"method", {{"kind", to_string(c.method.kind)}, {"alpha_logits", c.method.alpha_logits},
                          {"beta_replay", c.method.beta_replay}}},
              {"fwt_mode", to_string(c.fwt_mode)},
              {"initial_depth", c.initial_depth},
              {"parallel_candidates", c.parallel_candidates},
              {"compute_fwt", c.compute_fwt},
              {"baseline_epochs", c.baseline_epochs}};
}

Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["arch"] = to_json(cfg.arch);
  j["data"] = Json{{"stream", cfg.data.stream}, {"train", cfg.data.train_path}, {"test", cfg.data.test_path},
                   {"tasks", cfg.data.tasks},   {"dream", cfg.data.dream},      {"dream_fraction", cfg.data.dream_fraction},
                   {"noise_pct", cfg.data.noise_pct}, {"downscale", cfg.data.downscale}};
  j["wscl"] = to_json(cfg.wscl);
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  if (cfg.sweep) j["sweep"] = Json{{"parameter", cfg.sweep->parameter}, {"values", cfg.sweep->values}};
  return j;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) config_error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) config_error("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    if (!node->is_object()) config_error("override key '" + key + "' crosses a non-object value");
    node = &(*node)[path[k]];
    if (node->is_null()) *node = Json::object();
  }
  if (!node->is_object()) config_error("override key '" + key + "' crosses a non-object value");
  (*node)[path.back()] = std::move(value);
}

std::string config_hash(const Json& doc) {
  const std::string text = canonical(doc).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return hex64(h);
}

std::string code_version() { return WSCL_VERSION; }

RunInputs load_inputs(const DataConfig& data, std::uint64_t seed) {
  RunInputs in;
  std::optional<DreamSource> dream;
  if (data.train_path.empty()) {
    StreamAndDream sd = synth_stream(parse_synth_spec(data.stream), seed);
    in.stream = std::move(sd.stream);
    if (data.dream == "synth") {
      if (sd.dream.dataset.size() == 0) throw Error(ErrorCode::Config, "synthetic spec has no dream classes");
      dream = std::move(sd.dream);
    }
  } else {
    in.stream = split_class_incremental(load_dataset(data.train_path), load_dataset(data.test_path), data.tasks, seed);
    if (data.dream == "synth") throw Error(ErrorCode::Config, "data.dream='synth' needs a synthetic stream");
  }
  if (data.dream != "synth" && data.dream != "none") dream = DreamSource{load_dataset(data.dream)};

  if (dream) {
    if (data.dream_fraction < 1.0) {
      dream = subsample_fraction(*dream, data.dream_fraction, derive_seed(seed, "dream.subsample"));
    }
    if (data.noise_pct > 0.0 || data.downscale > 1) {
      dream->noise_pct = data.noise_pct;
      dream->downscale_factor = data.downscale;
      dream = corrupt(*dream, derive_seed(seed, "dream.corrupt"));
    }
    in.dream = std::move(dream);
  }
  return in;
}

Json run_record_to_json(const RunRecord& record) {
  Json j;
  j["seed"] = record.seed;
  j["wscl"] = to_json(record.config);
  j["arch"] = to_json(record.arch);
  j["arch"]["input_spec"] = record.arch.input_spec;
  j["arch"]["num_classes"] = record.arch.num_classes;
  j["layout"] = Json{{"block_scalars", record.layout.block_scalars},
                     {"cl_head_scalars", record.layout.cl_head_scalars},
                     {"dream_head_scalars", record.layout.dream_head_scalars}};
  Json tasks = Json::array();
  for (const auto& t : record.tasks) {
    Json cands = Json::array();
    for (const auto& c : t.candidates) {
      cands.push_back(Json{{"depth", c.depth}, {"selection_loss", c.selection_loss}, {"mean_loss", c.mean_loss},
                           {"steps", c.steps}, {"updates", c.updates}});
    }
    tasks.push_back(Json{{"task", t.task_index + 1},
                         {"accepted_depth", t.accepted_mask.depth},
                         {"theta_digest", hex64(t.theta_digest)},
                         {"update_count", t.update_count},
                         {"search_update_count", t.search_update_count},
                         {"wake_steps", t.wake_steps},
                         {"nrem_steps", t.nrem_steps},
                         {"rem_steps", t.rem_steps},
                         {"task_data_steps", t.task_data_steps},
                         {"ltm_size", t.ltm_size},
                         {"candidates", cands},
                         {"sleep_schedule", t.sleep_schedule}});
  }
  j["tasks"] = tasks;
  j["class_il"] = matrix_json(record.class_il);
  j["task_il"] = matrix_json(record.task_il);
  j["scratch_accuracies"] = record.scratch_accuracies;
  j["random_init_accuracies"] = record.random_init_accuracies;
  j["metrics"] = Json{{"class_il", metrics_json(record.metrics)}, {"task_il", metrics_json(record.metrics_task_il)}};
  j["total_updates"] = record.total_updates;
  j["recomputed_updates"] = recompute_update_count(record);
  return j;
}

std::vector<RunPoint> expand_sweep(const Json& doc) {
  const ExperimentConfig base = config_from_json(doc);
  std::vector<RunPoint> points;
  if (!base.sweep) {
    points.push_back(RunPoint{"base", doc, base});
    return points;
  }
  for (const Json& value : base.sweep->values) {
    Json point = doc;
    point.erase("sweep");
    apply_override(point, base.sweep->parameter + "=" + value.dump());
    ExperimentConfig cfg;
    try {
      cfg = config_from_json(point);
    } catch (const Error& e) {
      config_error("sweep value " + value.dump() + " for '" + base.sweep->parameter + "': " + e.detail());
    }
    cfg.sweep = base.sweep;
    points.push_back(RunPoint{base.sweep->parameter + "=" + value.dump(), std::move(point), std::move(cfg)});
  }
  return points;
}

std::size_t workers_from_env() {
  const char* env = std::getenv("WSCL_WORKERS");
  if (!env || !*env) return std::max(1u, std::thread::hardware_concurrency());
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw Error(ErrorCode::Config, std::string("WSCL_WORKERS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

int run_experiment(const Json& doc, const RunOptions& options) {
  std::vector<RunPoint> points;
  ExperimentConfig base;
  try {
    base = config_from_json(doc);
    points = expand_sweep(doc);
  } catch (const Error& e) {
    if (options.log) *options.log << e.what() << '\n';
    return 2;
  }

  const std::string hash = config_hash(doc);
  const fs::path out_dir = base.output_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    if (options.log) *options.log << "cannot create " << out_dir << ": " << ec.message() << '\n';
    return 1;
  }
  const fs::path manifest_path = out_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    try {
      const Json old = read_json(manifest_path);
      if (old.value("config_hash", "") != hash) {
        if (options.log) *options.log << "invalid config: " << out_dir << " holds runs of config " << old.value("config_hash", "?") << '\n';
        return 2;
      }
    } catch (const Error& e) {
      if (options.log) *options.log << e.what() << '\n';
      return 1;
    }
  }
  fs::remove(out_dir / "FAILED", ec);

  struct Job {
    std::size_t point;
    std::uint64_t seed;
    std::string stem;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::uint64_t seed : base.seeds) {
      std::string stem = points.size() == 1 && !base.sweep ? "run-seed" + std::to_string(seed)
                                                           : "run-p" + std::to_string(p) + "-seed" + std::to_string(seed);
      jobs.push_back(Job{p, seed, std::move(stem)});
    }
  }

  std::mutex mu;
  std::vector<std::string> failures;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  auto worker = [&] {
    for (;;) {
      if (stop) return;
      const std::size_t k = next++;
      if (k >= jobs.size()) return;
      const Job& job = jobs[k];
      const RunPoint& point = points[job.point];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const RunInputs in = load_inputs(point.config.data, job.seed);
        const RunRecord record =
            run_stream(in.stream, in.dream ? &*in.dream : nullptr, point.config.arch, point.config.wscl, job.seed);
        Json j = run_record_to_json(record);
        j["config_hash"] = hash;
        j["code_version"] = code_version();
        j["point"] = point.label;
        j["config"] = canonical(point.document);
        write_text(out_dir / (job.stem + ".json"), j.dump(2) + "\n");
        write_text(out_dir / (job.stem + ".class_il.csv"), record.class_il.to_csv());
        write_text(out_dir / (job.stem + ".task_il.csv"), record.task_il.to_csv());
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard lock(mu);
        if (options.log) {
          *options.log << job.stem << " [" << point.label << "] faa=" << record.metrics.faa;
          if (record.metrics.fwt) *options.log << " fwt=" << *record.metrics.fwt;
          if (record.metrics.forgetting) *options.log << " forgetting=" << *record.metrics.forgetting;
          *options.log << " updates=" << record.total_updates << " (" << secs << "s)\n";
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        failures.push_back(job.stem + ": " + e.what());
        if (options.log) *options.log << job.stem << " failed: " << e.what() << '\n';
        stop = true;
      }
    }
  };
  const std::size_t lanes = std::clamp<std::size_t>(options.workers, 1, jobs.size());
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < lanes; ++w) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  try {
    std::vector<Json> records;
    Json files = Json::array();
    for (const auto& path : run_files(out_dir)) {
      Json r = read_json(path);
      if (r.value("config_hash", "") != hash) continue;
      files.push_back(path.filename().string());
      records.push_back(std::move(r));
    }
    Json manifest{{"config_hash", hash},
                  {"code_version", code_version()},
                  {"config", canonical(doc)},
                  {"sweep", base.sweep ? Json{{"parameter", base.sweep->parameter}, {"values", base.sweep->values}} : Json(nullptr)},
                  {"runs", files},
                  {"status", failures.empty() ? "complete" : "failed"}};
    write_text(manifest_path, manifest.dump(2) + "\n");
    if (!records.empty()) {
      write_text(out_dir / "summary.json", Json{{"config_hash", hash}, {"rows", summarize(records)}}.dump(2) + "\n");
    }
    if (!failures.empty()) {
      std::string text;
      for (const auto& f : failures) text += f + "\n";
      write_text(out_dir / "FAILED", text);
      return 1;
    }
  } catch (const std::exception& e) {
    if (options.log) *options.log << e.what() << '\n';
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

struct Group {
  std::string hash, point, regime, method, stages;
  std::size_t buffer = 0, epochs = 0;
  std::vector<double> faa, fwt, forgetting, updates, search_updates, depth;
};

std::string csv_quote(const std::string& text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_num(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

std::string csv_stat(const std::vector<double>& xs) {
  if (xs.empty()) return ",";
  const Stat s = stat_of(xs);
  return csv_num(s.mean) + "," + csv_num(s.std);
}

int stage_rank(const std::string& label) {
  static const std::vector<std::string> order{"Only Wake", "Wake+REM", "Wake+NREM", "Wake+REM+NREM"};
  return static_cast<int>(std::find(order.begin(), order.end(), label) - order.begin());
}

}  // namespace

std::size_t emit_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  std::vector<Json> records;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir.string() + " is not a directory");
    for (const auto& path : run_files(dir)) records.push_back(read_json(path));
  }
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no run records found");

  std::map<std::pair<std::string, std::string>, Group> groups;
  std::vector<std::pair<std::string, std::string>> order;
  std::ostringstream depths;
  depths << "config_hash,point,seed,task,accepted_depth,frozen_scalars,trainable_scalars\n";
  for (const Json& r : records) {
    const auto key = std::make_pair(r.at("config_hash").get<std::string>(), r.at("point").get<std::string>());
    auto [it, fresh] = groups.try_emplace(key);
    Group& g = it->second;
    const Json& w = r.at("wscl");
    if (fresh) {
      order.push_back(key);
      g.hash = key.first;
      g.point = key.second;
      g.regime = w.at("regime").get<std::string>();
      g.method = w.at("method").at("kind").get<std::string>();
      const StageFlags stages{w.at("stages").at("wake_search").get<bool>(), w.at("stages").at("nrem").get<bool>(),
                              w.at("stages").at("rem").get<bool>()};
      g.stages = g.regime == "wscl" ? stage_label(stages) : "";
      g.buffer = g.regime == "finetune" || g.regime == "joint" ? 0 : w.at("long_term_capacity").get<std::size_t>();
      const std::size_t baseline = w.at("baseline_epochs").get<std::size_t>();
      const std::size_t wake = w.at("wake_epochs").get<std::size_t>(), sleep = w.at("sleep_epochs").get<std::size_t>();
      g.epochs = g.regime == "wscl" ? wake + sleep : (baseline ? baseline : wake + sleep);
    }
    const Json& m = r.at("metrics").at("class_il");
    g.faa.push_back(m.at("faa").get<double>());
    if (!m.at("fwt").is_null()) g.fwt.push_back(m.at("fwt").get<double>());
    if (!m.at("forgetting").is_null()) g.forgetting.push_back(m.at("forgetting").get<double>());
    g.updates.push_back(r.at("total_updates").get<double>());

    const Json& layout = r.at("layout");
    const auto blocks = layout.at("block_scalars").get<std::vector<std::size_t>>();
    const std::size_t head = layout.at("cl_head_scalars").get<std::size_t>();
    double search = 0.0, depth_sum = 0.0;
    for (const Json& t : r.at("tasks")) {
      const std::size_t d = t.at("accepted_depth").get<std::size_t>();
      std::size_t frozen = 0, trainable = head;
      for (std::size_t k = 0; k < blocks.size(); ++k) (k < d ? frozen : trainable) += blocks[k];
      depths << key.first << ',' << csv_quote(key.second) << ',' << r.at("seed").get<std::uint64_t>() << ','
             << t.at("task").get<std::size_t>() << ',' << d << ',' << frozen << ',' << trainable << '\n';
      search += t.at("search_update_count").get<double>();
      depth_sum += static_cast<double>(d);
    }
    g.search_updates.push_back(search);
    g.depth.push_back(r.at("tasks").empty() ? 0.0 : depth_sum / static_cast<double>(r.at("tasks").size()));
  }

  std::ostringstream methods, forgetting, stages, updates;
  methods << "config_hash,point,regime,method,buffer_size,stages,n,faa_mean,faa_std,fwt_mean,fwt_std\n";
  forgetting << "config_hash,point,regime,method,buffer_size,stages,n,forgetting_mean,forgetting_std\n";
  stages << "config_hash,point,method,buffer_size,stages,n,faa_mean,faa_std,fwt_mean,fwt_std\n";
  updates << "config_hash,point,regime,method,stages,epochs_per_task,mean_accepted_depth,n,update_count_mean,search_update_count_mean\n";

  std::vector<const Group*> stage_rows;
  for (const auto& key : order) {
    const Group& g = groups.at(key);
    const std::string head = g.hash + "," + csv_quote(g.point);
    methods << head << ',' << g.regime << ',' << g.method << ',' << g.buffer << ',' << g.stages << ',' << g.faa.size()
            << ',' << csv_stat(g.faa) << ',' << csv_stat(g.fwt) << '\n';
    forgetting << head << ',' << g.regime << ',' << g.method << ',' << g.buffer << ',' << g.stages << ','
               << g.forgetting.size() << ',' << csv_stat(g.forgetting) << '\n';
    updates << head << ',' << g.regime << ',' << g.method << ',' << g.stages << ',' << g.epochs << ','
            << csv_num(stat_of(g.depth).mean) << ',' << g.updates.size() << ',' << csv_num(stat_of(g.updates).mean)
            << ',' << csv_num(stat_of(g.search_updates).mean) << '\n';
    if (g.regime == "wscl") stage_rows.push_back(&g);
  }
  std::stable_sort(stage_rows.begin(), stage_rows.end(),
                   [](const Group* a, const Group* b) { return stage_rank(a->stages) < stage_rank(b->stages); });
  for (const Group* g : stage_rows) {
    stages << g->hash << ',' << csv_quote(g->point) << ',' << g->method << ',' << g->buffer << ',' << g->stages << ','
           << g->faa.size() << ',' << csv_stat(g->faa) << ',' << csv_stat(g->fwt) << '\n';
  }

  fs::create_directories(out_dir);
  write_text(out_dir / "methods.csv", methods.str());
  write_text(out_dir / "forgetting.csv", forgetting.str());
  write_text(out_dir / "stages.csv", stages.str());
  write_text(out_dir / "updates.csv", updates.str());
  write_text(out_dir / "freeze_depths.csv", depths.str());
  return records.size();
}

}  // namespace wscl
