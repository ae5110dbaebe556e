#include "gpusim/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "gpusim/checkpoint/checkpoint.hpp"
#include "gpusim/diff/diff.hpp"
#include "gpusim/runtime/generate.hpp"

namespace gpusim {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string command;
  std::string manifest;
  std::string config;
  std::string mode = "functional";
  std::string fault;
  std::string checkpoint;
  std::string resume;
  std::string out = "out";
  uint64_t window = 500;
  uint64_t seed = 1;
  std::string exec_a, exec_b;
  std::string timeline;
  int call = -1;
  uint64_t kernel = 0;
  unsigned ops = 40;
};

void write_text(const fs::path& p, const std::string& s) {
  write_file(p, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

ExecutorConfig executor(const Options& o) {
  ExecutorConfig e;
  e.mode = parse_exec_mode(o.mode);
  if (!o.fault.empty()) e.fault = parse_injected_fault(o.fault);
  if (!o.config.empty()) e.timing = load_timing_config(o.config);
  return e;
}

void print_checks(const Session& s) {
  for (const auto& c : s.checks())
    std::cout << "check " << c.buffer << " (line " << c.line << "): " << (c.passed ? "ok" : "FAILED, " + c.summary) << "\n";
}

// Dumps, stats views and the exit code shared by run and resume.
int finish_session(const Session& s, const Options& o) {
  print_checks(s);
  if (s.exec().mode == ExecMode::performance) {
    const fs::path stats = fs::path(o.out) / "stats";
    fs::create_directories(stats);
    export_views(s.timeline(), o.window, stats);
    write_file(stats / "timeline.bin", s.timeline().serialize());
    nlohmann::ordered_json k = nlohmann::ordered_json::array();
    for (const auto& t : s.kernel_timings())
      k.push_back({{"start_cycle", t.start_cycle}, {"cycles", t.cycles}, {"committed", t.committed}, {"dram_requests", t.requests}});
    write_text(stats / "kernels.json", k.dump(2) + "\n");
  }
  std::cout << s.launches_executed() << " launches, " << s.committed() << " instructions committed";
  if (s.exec().mode == ExecMode::performance) std::cout << ", " << s.engine().cycle() << " cycles";
  std::cout << "\n";
  return s.checks_passed() ? kExitOk : kExitCheckFailed;
}

int cmd_run(const Options& o) {
  const Manifest m = load_manifest(o.manifest);
  if (!o.checkpoint.empty()) {
    const CheckpointBundle b = checkpoint_run(m, parse_position(o.checkpoint));
    const fs::path p = fs::path(o.out) / "bundle.psck";
    write_file(p, encode_bundle(b));
    std::cout << "checkpoint " << format_position(b.position) << " written to " << p.string() << " (" << b.inflight.size()
              << " in-flight CTAs)\n";
    return kExitOk;
  }
  Session s(m, executor(o));
  s.dump_dir = fs::path(o.out) / "dumps";
  fs::create_directories(*s.dump_dir);
  s.run();
  return finish_session(s, o);
}

int cmd_resume(const Options& o) {
  const Manifest m = load_manifest(o.manifest);
  const CheckpointBundle b = load_bundle(o.resume);
  Options eo = o;
  if (eo.mode == "functional") eo.mode = "functional-serial";  // CTA state continues one CTA at a time
  Session s(m, executor(eo));
  install_resume(s, b);
  s.dump_dir = fs::path(o.out) / "dumps";
  fs::create_directories(*s.dump_dir);
  s.run();
  std::cout << "resumed from " << format_position(b.position) << "\n";
  return finish_session(s, o);
}

int cmd_diff(const Options& o) {
  const Manifest m = load_manifest(o.manifest);
  ExecutorConfig a = parse_executor(o.exec_a), b = parse_executor(o.exec_b);
  if (!o.config.empty()) a.timing = b.timing = load_timing_config(o.config);
  const DivergenceReport r = compare_runs(m, a, b);
  write_text(fs::path(o.out) / "report.txt", r.text());
  write_text(fs::path(o.out) / "report.json", r.json());
  std::cout << r.text();
  return r.level == DivergenceReport::Level::match ? kExitOk : kExitDivergence;
}

int cmd_stats(const Options& o) {
  const Timeline t = Timeline::deserialize(read_file(o.timeline));
  const fs::path dir = fs::path(o.out) / "stats";
  fs::create_directories(dir);
  export_views(t, o.window, dir);
  std::cout << "cycles " << t.first_cycle() << ".." << t.last_cycle() << ", " << t.total_committed() << " instructions, window "
            << o.window << "\n";
  return kExitOk;
}

int cmd_instrument(const Options& o) {
  const Manifest m = load_manifest(o.manifest);
  const ExecutorConfig e = executor(o);
  Session s(m, e);
  const fs::path logs = fs::path(o.out) / "logs";
  fs::create_directories(logs);
  s.hooks.before_launch = [&](Session& ss, LaunchContext& ctx) {
    if (o.kernel != 0 && ctx.ordinal != o.kernel) return false;
    InstrumentedRun r = run_instrumented(e, ctx.env, ss.memory());
    if (r.fault) throw MachineFault(MachineFaultRecord{ctx.kernel->name, ctx.module, -1, "", {}, {}, FaultKind::out_of_bounds, *r.fault});
    ss.memory().restore_contents(r.memory);
    const std::string name = "launch_" + std::to_string(ctx.ordinal) + "_" + ctx.kernel->name + ".log";
    write_file(logs / name, log_records_file(r.log));
    std::cout << name << ": " << r.log.size() << " register writes\n";
    return true;
  };
  s.run();
  return s.checks_passed() ? kExitOk : kExitCheckFailed;
}

int cmd_extract(const Options& o) {
  const Manifest m = load_manifest(o.manifest);
  const fs::path p = extract_kernel_harness(m, o.call, o.kernel, o.out);
  std::cout << "harness written to " << p.string() << "\n";
  return kExitOk;
}

int cmd_generate(const Options& o) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const fs::path p = dir / ("streams_" + std::to_string(o.seed) + ".manifest");
  write_text(p, random_stream_manifest(o.seed, o.manifest.empty() ? "vecadd.ptx" : o.manifest, o.ops));
  std::cout << p.string() << "\n";
  return kExitOk;
}

void write_invocation(const Options& o, const std::vector<std::string>& args, int code) {
  nlohmann::ordered_json j;
  j["command"] = o.command;
  j["args"] = args;
  j["cwd"] = fs::current_path().string();
  j["manifest"] = o.manifest;
  if (!o.manifest.empty() && fs::exists(o.manifest) && o.command != "generate") {
    try {
      j["manifest_sha256"] = hex(manifest_hash(load_manifest(o.manifest)));
    } catch (const Error&) {
    }
  }
  j["config"] = o.config;
  j["mode"] = o.mode;
  j["fault"] = o.fault;
  j["checkpoint"] = o.checkpoint;
  j["resume"] = o.resume;
  j["out"] = o.out;
  j["window"] = o.window;
  j["seed"] = o.seed;
  j["exec_a"] = o.exec_a;
  j["exec_b"] = o.exec_b;
  j["exit_code"] = code;
  write_text(fs::path(o.out) / "invocation.json", j.dump(2) + "\n");
}

int dispatch(const Options& o) {
  if (o.command == "run") return cmd_run(o);
  if (o.command == "resume") return cmd_resume(o);
  if (o.command == "diff") return cmd_diff(o);
  if (o.command == "stats") return cmd_stats(o);
  if (o.command == "instrument") return cmd_instrument(o);
  if (o.command == "extract") return cmd_extract(o);
  if (o.command == "generate") return cmd_generate(o);
  throw ConfigError("no command");
}

int run_args(std::vector<std::string> args, bool allow_replay);

int cmd_replay(const std::string& invocation, const std::string& out) {
  const auto bytes = read_file(invocation);
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
  std::vector<std::string> args = j.at("args").get<std::vector<std::string>>();
  // same arguments, fresh output directory
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" && i + 1 < args.size()) args[i + 1] = out;
    else if (args[i].starts_with("--out=")) args[i] = "--out=" + out;
  }
  if (std::find(args.begin(), args.end(), "--out") == args.end() &&
      std::none_of(args.begin(), args.end(), [](const std::string& a) { return a.starts_with("--out="); })) {
    args.push_back("--out");
    args.push_back(out);
  }
  // relative paths in args resolve against the recorded directory
  const fs::path here = fs::current_path();
  const fs::path abs_out = fs::absolute(out);
  for (size_t i = 0; i < args.size(); ++i)
    if (args[i] == "--out" && i + 1 < args.size()) args[i + 1] = abs_out.string();
    else if (args[i].starts_with("--out=")) args[i] = "--out=" + abs_out.string();
  if (j.contains("cwd")) fs::current_path(j.at("cwd").get<std::string>());
  int code = kExitInternal;
  try {
    code = run_args(args, false);
  } catch (...) {
    fs::current_path(here);
    throw;
  }
  fs::current_path(here);
  return code;
}

int run_args(std::vector<std::string> args, bool allow_replay) {
  Options o;
  CLI::App app{"Desk-scale GPU simulator for a PTX subset", "gpusim"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto add_common = [&](CLI::App* c, bool needs_manifest) {
    auto* opt = c->add_option("--manifest", o.manifest, "workload manifest");
    if (needs_manifest) opt->required()->check(CLI::ExistingFile);
    c->add_option("--out", o.out, "output directory")->capture_default_str();
  };
  auto add_exec = [&](CLI::App* c) {
    c->add_option("--mode", o.mode, "functional, functional-serial, reference or performance")->capture_default_str();
    c->add_option("--config", o.config, "timing configuration (JSON)")->check(CLI::ExistingFile);
    c->add_option("--fault", o.fault, "inject a semantic fault into the SIMT core");
    c->add_option("--window", o.window, "stats window in cycles")->capture_default_str()->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "execute a manifest");
  add_common(run, true);
  add_exec(run);
  run->add_option("--checkpoint", o.checkpoint, "stop at x,M,t,y and write bundle.psck");

  auto* resume = app.add_subcommand("resume", "continue from a checkpoint bundle");
  add_common(resume, true);
  add_exec(resume);
  resume->add_option("--resume", o.resume, "bundle file")->required()->check(CLI::ExistingFile);

  auto* diff = app.add_subcommand("diff", "localize the first divergence between two executors");
  add_common(diff, true);
  diff->add_option("--exec-a", o.exec_a, "executor under test, e.g. functional+union_rem")->required();
  diff->add_option("--exec-b", o.exec_b, "trusted executor, e.g. reference")->required();
  diff->add_option("--config", o.config, "timing configuration (JSON)")->check(CLI::ExistingFile);

  auto* stats = app.add_subcommand("stats", "re-export stats views from a saved timeline");
  stats->add_option("--timeline", o.timeline, "timeline.bin from a performance run")->required()->check(CLI::ExistingFile);
  stats->add_option("--out", o.out, "output directory")->capture_default_str();
  stats->add_option("--window", o.window, "stats window in cycles")->capture_default_str()->check(CLI::PositiveNumber);

  auto* inst = app.add_subcommand("instrument", "run with register-write logging");
  add_common(inst, true);
  add_exec(inst);
  inst->add_option("--kernel", o.kernel, "launch ordinal to instrument (default: all)");

  auto* extract = app.add_subcommand("extract", "write a standalone harness for one kernel launch");
  add_common(extract, true);
  extract->add_option("--call", o.call, "call index, -1 for launches before the first call")->required();
  extract->add_option("--kernel", o.kernel, "1-based launch within the call")->required();

  auto* gen = app.add_subcommand("generate", "write a random multi-stream manifest");
  gen->add_option("--seed", o.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", o.out, "output directory")->capture_default_str();
  gen->add_option("--manifest", o.manifest, "vec_add PTX path written into the manifest");
  gen->add_option("--ops", o.ops, "number of random directives")->capture_default_str();

  std::string invocation;
  auto* replay = app.add_subcommand("replay", "re-run a recorded invocation.json");
  replay->add_option("--invocation", invocation, "invocation.json")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", o.out, "output directory")->required();

  std::vector<const char*> argv{"gpusim"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  for (auto* sc : app.get_subcommands()) o.command = sc->get_name();

  if (o.command == "replay") {
    if (!allow_replay) {
      std::cerr << "error: a recorded invocation cannot be a replay\n";
      return kExitUsage;
    }
    try {
      return cmd_replay(invocation, o.out);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    }
  }

  int code = kExitInternal;
  try {
    fs::create_directories(o.out);
    code = dispatch(o);
  } catch (const MachineFault& e) {
    std::cerr << "machine fault: " << e.what() << "\n";
    code = kExitMachineFault;
  } catch (const MemoryError& e) {
    std::cerr << "memory error: " << e.what() << "\n";
    code = kExitMachineFault;
  } catch (const DeadlockError& e) {
    std::cerr << "deadlock: " << e.what() << "\n";
    code = kExitDeadlock;
  } catch (const RangeError& e) {
    std::cerr << "checkpoint position: " << e.what() << "\n";
    code = kExitCheckpoint;
  } catch (const BundleError& e) {
    std::cerr << "bundle: " << e.what() << "\n";
    code = kExitCheckpoint;
  } catch (const Error& e) {
    // parse, manifest, config, launch, binding, capture
    std::cerr << "error: " << e.what() << "\n";
    code = kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    code = kExitInternal;
  }
  try {
    write_invocation(o, args, code);
  } catch (const std::exception& e) {
    std::cerr << "warning: could not write invocation.json: " << e.what() << "\n";
  }
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) { return run_args(args, true); }

}  // namespace gpusim
