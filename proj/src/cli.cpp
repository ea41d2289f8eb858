#include "cftraj/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cftraj/config.hpp"
#include "cftraj/congestion_graph.hpp"
#include "cftraj/core_types.hpp"
#include "cftraj/cpm.hpp"
#include "cftraj/metrics.hpp"
#include "cftraj/simulator.hpp"
#include "cftraj/student.hpp"
#include "cftraj/teacher.hpp"

namespace cftraj::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kSubcommands{"simulate",  "train-teacher", "train-student", "evaluate",
                                            "cpm-solve", "plot-data",     "convert"};

// Inputs named on the command line. Everything tunable lives in RunConfig instead.
struct Inputs {
  std::string data;
  std::string teacher;
  std::vector<std::string> models;
  std::string p;
  std::string q;
  std::string input;
  std::string kind = "external";
  std::string report;
  std::string split = "test";
  bool dump_graphs = false;

  json to_json() const {
    json j = json::object();
    auto put = [&](const char* k, const std::string& v) {
      if (!v.empty()) j[k] = v;
    };
    put("data", data);
    put("teacher", teacher);
    if (!models.empty()) j["models"] = models;
    put("p", p);
    put("q", q);
    put("input", input);
    put("kind", kind);
    put("report", report);
    put("split", split);
    if (dump_graphs) j["dump_graphs"] = true;
    return j;
  }
  static Inputs from_json(const json& j) {
    Inputs in;
    in.data = j.value("data", "");
    in.teacher = j.value("teacher", "");
    in.models = j.value("models", std::vector<std::string>{});
    in.p = j.value("p", "");
    in.q = j.value("q", "");
    in.input = j.value("input", "");
    in.kind = j.value("kind", "external");
    in.report = j.value("report", "");
    in.split = j.value("split", "test");
    in.dump_graphs = j.value("dump_graphs", false);
    return in;
  }
};

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("cannot parse " + path.string() + ": " + e.what());
  }
}

void require(const std::string& value, const char* flag, const std::string& sub) {
  if (value.empty()) throw ValidationError(sub + " needs " + flag);
}

Dataset load_data_dir(const std::string& dir) {
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw ValidationError("data directory " + d.string() + " does not exist");
  Dataset ds = load_scenes(d / "dataset.jsonl");
  load_split(ds, d / "split.json");
  return ds;
}

std::vector<const Scene*> select(const Dataset& ds, const std::string& which) {
  if (which == "test") return ds.scenes_in(Split::test);
  if (which == "train") return ds.scenes_in(Split::train);
  if (which == "all") {
    std::vector<const Scene*> v;
    for (const auto& s : ds.scenes) v.push_back(&s);
    return v;
  }
  throw ValidationError("--split must be train, test or all");
}

std::string labels_jsonl(const Dataset& ds, double d_col) {
  std::ostringstream out;
  for (const auto& s : ds.scenes) {
    const auto lab = label_collisions(s, d_col);
    json events = json::array();
    for (const auto& e : lab.merged_events()) events.push_back({{"u", e.u}, {"v", e.v}, {"frame", e.frame}});
    json flags = json::array();
    for (bool f : lab.flagged) flags.push_back(f);
    out << json{{"scene_id", s.scene_id}, {"events", events}, {"flags", flags}}.dump() << '\n';
  }
  return out.str();
}

void write_dataset(const Dataset& ds, const fs::path& out, double d_col) {
  save_scenes(ds, out / "dataset.jsonl");
  save_split(ds, out / "split.json");
  write_text(out / "labels.jsonl", labels_jsonl(ds, d_col));
}

Dataset with_split(Dataset ds, const RunConfig& cfg) {
  if (ds.scenes.size() >= 2) return split_dataset(std::move(ds), cfg.split_ratio, cfg.seed);
  for (const auto& s : ds.scenes) ds.split[s.scene_id] = Split::train;
  return ds;
}

json matrix_json(const CouplingMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::vector<double> r(m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols),
                          m.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.cols));
    rows.push_back(r);
  }
  return rows;
}

std::pair<std::string, std::string> model_name(const std::string& spec, std::size_t index) {
  const auto eq = spec.find('=');
  if (eq != std::string::npos) return {spec.substr(0, eq), spec.substr(eq + 1)};
  const fs::path p(spec);
  std::string name = p.stem().string();
  if (p.has_parent_path() && !p.parent_path().filename().empty()) name = p.parent_path().filename().string() + "/" + name;
  if (name.empty()) name = "model" + std::to_string(index);
  return {name, spec};
}

// ---- subcommands --------------------------------------------------------------------------

void cmd_simulate(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  Dataset ds = with_split(generate_dataset(cfg.dataset_spec()), cfg);
  write_dataset(ds, out, cfg.d_col);
  log << "wrote " << ds.scenes.size() << " scenes to " << out.string() << '\n';
}

void cmd_convert(const Inputs& in, const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require(in.input, "--input", "convert");
  ScenarioKind kind;
  try {
    kind = scenario_kind_from_string(in.kind);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  Dataset ds = with_split(convert_csv(in.input, kind, cfg.dt, cfg.t_h), cfg);
  write_dataset(ds, out, cfg.d_col);
  log << "converted " << ds.scenes.size() << " scenes to " << out.string() << '\n';
}

void cmd_train_teacher(const Inputs& in, const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require(in.data, "--data", "train-teacher");
  const Dataset ds = load_data_dir(in.data);
  const auto res = train_teacher(ds, cfg.teacher_config());
  save_teacher(res.model, out / "teacher.json");
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) csv += std::to_string(e + 1) + "," + num(res.epoch_loss[e]) + "\n";
  write_text(out / "teacher_log.csv", csv);
  json summary = {{"em_log_likelihood", res.em_log_likelihood.empty() ? 0.0 : res.em_log_likelihood.back()},
                  {"q_weights", res.model.q_mixture.weights}};
  const auto test = ds.scenes_in(Split::test);
  try {
    summary["auc_test"] = reconstruction_auc(res.model, test);
  } catch (const std::invalid_argument&) {
    summary["auc_test"] = nullptr;  // held-out graphs lack one of the two edge classes
  }
  write_json(out / "teacher_summary.json", summary);
  if (in.dump_graphs) {
    std::string lines;
    for (const auto& s : ds.scenes) {
      const auto seq = build_graph_sequence(s, cfg.teacher.w_max);
      for (std::size_t t = 0; t < seq.graphs.size(); ++t) {
        lines += graph_dump_line(s.scene_id, static_cast<int>(t), seq.graphs[t]) + "\n";
      }
    }
    write_text(out / "graphs.jsonl", lines);
  }
  log << "teacher: " << summary.dump() << '\n';
}

void cmd_train_student(const Inputs& in, const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require(in.data, "--data", "train-student");
  const StudentConfig sc = cfg.student_config();
  std::optional<TeacherModel> teacher;
  if (sc.use_cpm) {
    if (in.teacher.empty()) throw ValidationError("train-student needs --teacher unless student.use_cpm=false");
    teacher = load_teacher(in.teacher);
    if (teacher->d_z != sc.d_z) {
      throw ValidationError("teacher latent size " + std::to_string(teacher->d_z) + " does not match d_z " +
                            std::to_string(sc.d_z));
    }
  }
  const Dataset ds = load_data_dir(in.data);
  const auto res = train_student(ds, teacher ? &*teacher : nullptr, sc);
  save_student(res.model, out / "student.json");
  std::string csv = "epoch,L2,L1,total\n";
  for (const auto& e : res.log) {
    csv += std::to_string(e.epoch) + "," + num(e.l2) + "," + num(e.l1) + "," + num(e.total) + "\n";
  }
  write_text(out / "student_log.csv", csv);
  if (!res.log.empty()) {
    log << "student: epoch " << res.log.back().epoch << " L2 " << res.log.back().l2 << " L1 " << res.log.back().l1
        << '\n';
  }
}

void cmd_evaluate(const Inputs& in, const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require(in.data, "--data", "evaluate");
  std::vector<std::pair<std::string, StudentModel>> models;
  for (std::size_t k = 0; k < in.models.size(); ++k) {
    auto [name, path] = model_name(in.models[k], k);
    models.emplace_back(name, load_student(path));
  }
  const Dataset ds = load_data_dir(in.data);
  const auto scenes = select(ds, in.split);
  if (scenes.empty()) throw ValidationError("no scenes in the " + in.split + " split");
  std::vector<EvalReport> reports;
  Predictions cv;
  for (const Scene* s : scenes) cv[s->scene_id] = constant_velocity(*s);
  reports.push_back(evaluate("cv", cv, scenes, cfg.d_col));
  for (const auto& [name, model] : models) {
    Predictions p;
    for (const Scene* s : scenes) p[s->scene_id] = predict(model, *s);
    reports.push_back(evaluate(name, p, scenes, cfg.d_col));
  }
  json all = json::array();
  for (const auto& r : reports) all.push_back(r.to_json());
  write_json(out / "report.json", {{"split", in.split}, {"d_col", cfg.d_col}, {"reports", all}});
  if (reports.size() >= 2) {
    const std::string table = compare(reports);
    write_text(out / "compare.tsv", table);
    log << table;
  } else {
    log << reports.front().to_json().dump(2) << '\n';
  }
}

void cmd_cpm_solve(const Inputs& in, const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require(in.p, "--p", "cpm-solve");
  require(in.q, "--q", "cpm-solve");
  GaussianMixture p0, q;
  try {
    p0 = GaussianMixture::from_json(read_json(in.p));
    q = GaussianMixture::from_json(read_json(in.q));
    p0.validate();
    q.validate();
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("bad mixture file: ") + e.what());
  }
  if (p0.dim() != q.dim()) throw ValidationError("mixtures have different dimensions");
  const auto res = cpm_solve(p0, q, cfg.cpm);
  json j = {{"p", res.p.to_json()},
            {"alpha", matrix_json(res.coupling.alpha)},
            {"beta", matrix_json(res.coupling.beta)},
            {"report",
             {{"bound_trace", res.report.bound_trace},
              {"iterations", res.report.iterations},
              {"converged", res.report.converged}}}};
  if (cfg.mc_samples > 0) {
    const auto mc = monte_carlo_kl(res.p, q, cfg.mc_samples, cfg.seed);
    j["monte_carlo_kl"] = {{"estimate", mc.estimate}, {"standard_error", mc.standard_error},
                           {"samples", cfg.mc_samples}};
  }
  write_json(out / "solution.json", j);
  log << "cpm: L1 " << res.report.bound_trace.back() << " after " << res.report.iterations << " iterations\n";
}

void cmd_plot_data(const Inputs& in, const RunConfig& /*cfg*/, const fs::path& out, std::ostream& log) {
  require(in.data, "--data", "plot-data");
  require(in.teacher, "--teacher", "plot-data");
  const TeacherModel teacher = load_teacher(in.teacher);
  const Dataset ds = load_data_dir(in.data);
  std::string csv = "scene_id,kind,frame,component,weight\n";
  for (const Scene* s : select(ds, in.split)) {
    const auto resp = pattern_responsibilities(teacher, *s);
    for (std::size_t f = 0; f < resp.size(); ++f) {
      for (std::size_t i = 0; i < resp[f].size(); ++i) {
        csv += s->scene_id + "," + std::string(to_string(s->kind)) + "," + std::to_string(f) + "," +
               std::to_string(i) + "," + num(resp[f][i]) + "\n";
      }
    }
  }
  write_text(out / "responsibilities.csv", csv);
  if (!in.report.empty()) {
    const json rep = read_json(in.report);
    std::string rmse = "model,scenario,horizon_s,rmse\n";
    std::string col = "model,scenario,collision_rate\n";
    for (const auto& r : rep.at("reports")) {
      const std::string name = r.at("name");
      col += name + ",all," + num(r.at("collision_rate").get<double>()) + "\n";
      for (const auto& [h, v] : r.at("rmse").items()) {
        rmse += name + ",all," + h.substr(0, h.size() - 1) + "," + num(v.get<double>()) + "\n";
      }
      for (const auto& [kind, m] : r.at("per_scenario").items()) {
        col += name + "," + kind + "," + num(m.at("collision_rate").get<double>()) + "\n";
        for (const auto& [h, v] : m.at("rmse").items()) {
          rmse += name + "," + kind + "," + h.substr(0, h.size() - 1) + "," + num(v.get<double>()) + "\n";
        }
      }
    }
    write_text(out / "rmse.csv", rmse);
    write_text(out / "collision.csv", col);
  }
  log << "wrote plot data to " << out.string() << '\n';
}

int execute(const std::string& sub, const Inputs& in, const RunConfig& cfg, const fs::path& out,
            const json& invocation, std::ostream& log) {
  fs::create_directories(out);
  if (sub == "simulate") cmd_simulate(cfg, out, log);
  else if (sub == "convert") cmd_convert(in, cfg, out, log);
  else if (sub == "train-teacher") cmd_train_teacher(in, cfg, out, log);
  else if (sub == "train-student") cmd_train_student(in, cfg, out, log);
  else if (sub == "evaluate") cmd_evaluate(in, cfg, out, log);
  else if (sub == "cpm-solve") cmd_cpm_solve(in, cfg, out, log);
  else if (sub == "plot-data") cmd_plot_data(in, cfg, out, log);
  else throw ValidationError("unknown subcommand '" + sub + "'");
  json manifest = {{"tool", "cftraj"},
                   {"version", kVersion},
                   {"subcommand", sub},
                   {"inputs", in.to_json()},
                   {"invocation", invocation},
                   {"config", cfg.to_json()},
                   {"seeds", {{"seed", cfg.seed}}}};
  write_json(out / "manifest.json", manifest);
  return 0;
}

int relaunch(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"Re-run a recorded invocation", "cftraj"};
  std::string manifest_path, out_dir;
  app.add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  app.add_option("--out", out_dir, "output directory for the re-run")->required();
  std::vector<std::string> rev(args.rbegin(), args.rend());
  app.parse(rev);
  const json m = read_json(manifest_path);
  const std::string sub = m.at("subcommand");
  if (std::find(kSubcommands.begin(), kSubcommands.end(), sub) == kSubcommands.end()) {
    throw ValidationError("manifest names unknown subcommand '" + sub + "'");
  }
  const RunConfig cfg = RunConfig::from_json(m.at("config"));
  return execute(sub, Inputs::from_json(m.at("inputs")), cfg, out_dir, m.at("invocation"), out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    if (std::find(args.begin(), args.end(), "--manifest") != args.end()) return relaunch(args, out);

    CLI::App app{"Congestion-aware collision-free trajectory prediction", "cftraj"};
    app.require_subcommand(1, 1);
    std::string config_file, out_dir;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> mc_samples;
    Inputs in;
    auto common = [&](CLI::App* sc) {
      sc->add_option("--config", config_file, "key=value config file");
      sc->add_option("--set", sets, "override one config key (key=value), repeatable");
      sc->add_option("--out", out_dir, "output directory")->required();
    };
    auto* sim = app.add_subcommand("simulate", "generate the synthetic scenario dataset");
    common(sim);
    sim->add_option("--seed", seed, "dataset seed (same as --set seed=N)");
    auto* conv = app.add_subcommand("convert", "ingest an external CSV of trajectories");
    common(conv);
    conv->add_option("--input", in.input, "CSV with scene_id,agent_id,frame,x,y")->required();
    conv->add_option("--kind", in.kind, "scenario kind recorded for every scene");
    auto* tt = app.add_subcommand("train-teacher", "train the graph VAE and fit Q");
    common(tt);
    tt->add_option("--data", in.data, "dataset directory")->required();
    tt->add_flag("--dump-graphs", in.dump_graphs, "also write every frame graph to graphs.jsonl");
    auto* ts = app.add_subcommand("train-student", "train the trajectory predictor");
    common(ts);
    ts->add_option("--data", in.data, "dataset directory")->required();
    ts->add_option("--teacher", in.teacher, "teacher checkpoint");
    auto* ev = app.add_subcommand("evaluate", "collision rate and RMSE against the CV baseline");
    common(ev);
    ev->add_option("--data", in.data, "dataset directory")->required();
    ev->add_option("--model", in.models, "student checkpoint, optionally name=path; repeatable");
    ev->add_option("--split", in.split, "train, test or all");
    auto* cs = app.add_subcommand("cpm-solve", "match mixture P to mixture Q");
    common(cs);
    cs->add_option("--p", in.p, "initial mixture JSON")->required();
    cs->add_option("--q", in.q, "target mixture JSON")->required();
    cs->add_option("--mc-samples", mc_samples, "Monte-Carlo KL check sample count");
    auto* pd = app.add_subcommand("plot-data", "emit responsibility and metric series as CSV");
    common(pd);
    pd->add_option("--data", in.data, "dataset directory")->required();
    pd->add_option("--teacher", in.teacher, "teacher checkpoint")->required();
    pd->add_option("--report", in.report, "report.json from evaluate");
    pd->add_option("--split", in.split, "train, test or all");

    try {
      std::vector<std::string> rev(args.rbegin(), args.rend());
      app.parse(rev);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n" << app.help();
      return 1;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& s : sets) cfg.set(s);
    if (seed) cfg.seed = *seed;
    if (mc_samples) cfg.mc_samples = *mc_samples;
    cfg.validate();
    json invocation = json::array();
    for (const auto& a : args) invocation.push_back(a);
    return execute(sub, in, cfg, out_dir, invocation, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cftraj::cli
