#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "impnet/harness.hpp"
#include "impnet/schedule.hpp"

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v)) throw impnet::ValidationError("bad list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw impnet::ValidationError("empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace impnet;
  CLI::App app{"Sparse keyframe video detection with impression features"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run a pipeline mode over a video set");
  std::string run_config, run_checkpoint, run_scenes, run_frames, run_out, run_mode, run_flow;
  std::uint64_t run_seed = 1;
  std::size_t run_clips = 10, run_l = 0, run_k = 0;
  double run_g = -1;
  bool run_wall_clock = false;
  run->add_option("--config", run_config, "key=value run configuration");
  run->add_option("--checkpoint", run_checkpoint, "parameter checkpoint");
  run->add_option("--scenes", run_scenes, "scene manifest");
  run->add_option("--frames", run_frames, "directory of .impt frame tensors");
  run->add_option("--seed", run_seed, "blur-heavy suite seed when no scenes are given");
  run->add_option("--clips", run_clips, "clips in the generated suite");
  run->add_option("--mode", run_mode, "perframe | dff | fixed | impression");
  run->add_option("--l", run_l, "segment length");
  run->add_option("--k", run_k, "keyframe offset (default: optimal for l)");
  run->add_option("--g", run_g, "memory gate in [0, 1]");
  run->add_option("--flow", run_flow, "learned | oracle");
  run->add_option("--out", run_out, "output directory")->required();
  run->add_flag("--wall-clock", run_wall_clock, "record per-component wall-clock timings");

  // train
  auto* train = app.add_subcommand("train", "train end to end");
  std::string train_config, train_out, train_flow;
  std::uint64_t train_seed = 0;
  std::size_t train_l = 0;
  train->add_option("--config", train_config, "key=value training configuration");
  train->add_option("--seed", train_seed, "override the configured seed");
  train->add_option("--l", train_l, "override the configured segment length");
  train->add_option("--flow", train_flow, "learned | oracle");
  train->add_option("--out", train_out, "output directory")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "speed/accuracy sweep over l and g");
  std::string sweep_checkpoint, sweep_scenes, sweep_out, sweep_l = "1,2,5,10,15,20", sweep_g = "1", sweep_mode,
                                                         sweep_flow;
  std::uint64_t sweep_seed = 1;
  std::size_t sweep_clips = 10;
  bool sweep_no_calibrate = false;
  sw->add_option("--checkpoint", sweep_checkpoint, "trained checkpoint")->required();
  sw->add_option("--scenes", sweep_scenes, "scene manifest");
  sw->add_option("--seed", sweep_seed, "blur-heavy suite seed when no scenes are given");
  sw->add_option("--clips", sweep_clips, "clips in the generated suite");
  sw->add_option("--l", sweep_l, "comma-separated segment lengths");
  sw->add_option("--g", sweep_g, "comma-separated memory gates");
  sw->add_option("--mode", sweep_mode, "dff | fixed | impression");
  sw->add_option("--flow", sweep_flow, "learned | oracle");
  sw->add_option("--out", sweep_out, "output directory")->required();
  sw->add_flag("--no-calibrate", sweep_no_calibrate, "skip cost-model calibration");

  // schedule
  auto* sched = app.add_subcommand("schedule", "average propagation distance table");
  std::size_t sched_l = 10, sched_l_min = 1;
  std::string sched_out;
  sched->add_option("--l", sched_l, "largest segment length");
  sched->add_option("--l-min", sched_l_min, "smallest segment length in the CSV");
  sched->add_option("--out", sched_out, "output directory for CSV files");

  auto* verify = app.add_subcommand("verify", "run built-in property and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (*run) {
    return guarded(std::cerr, [&] {
      RunManifest m;
      bool k_set = false;
      if (!run_config.empty()) {
        std::ifstream is(run_config);
        if (!is) throw ValidationError("cannot open run config " + run_config);
        m = parse_run_manifest(is);
        k_set = true;
      }
      if (!run_checkpoint.empty()) m.checkpoint = run_checkpoint;
      if (!run_scenes.empty()) m.source.scenes = run_scenes;
      if (!run_frames.empty()) m.source.frames_dir = run_frames;
      if (run->count("--seed")) m.source.suite_seed = run_seed;
      if (run->count("--clips")) m.source.clips = run_clips;
      if (!run_mode.empty()) m.mode = mode_from_string(run_mode);
      if (run->count("--l")) {
        m.segment.segment_length = run_l;
        k_set = false;
      }
      if (run->count("--k")) {
        m.segment.keyframe_offset = run_k;
        k_set = true;
      }
      if (!k_set) m.segment.keyframe_offset = optimal_keyframe(m.segment.segment_length);
      if (run->count("--g")) m.segment.memory_gate = run_g;
      if (!run_flow.empty()) m.segment.flow_source = flow_source_from_string(run_flow);
      m.wall_clock = m.wall_clock || run_wall_clock;
      m.out_dir = run_out;
      return cmd_run(m, std::cout, std::cerr);
    });
  }
  if (*train) {
    return guarded(std::cerr, [&] {
      TrainConfig cfg;
      if (!train_config.empty()) cfg = load_train_config(train_config);
      if (train->count("--seed")) cfg.seed = train_seed;
      if (train->count("--l")) cfg.l = train_l;
      if (!train_flow.empty()) cfg.flow_source = flow_source_from_string(train_flow);
      return cmd_train(cfg, train_out, std::cout, std::cerr);
    });
  }
  if (*sw) {
    return guarded(std::cerr, [&] {
      SweepRequest r;
      r.checkpoint = sweep_checkpoint;
      r.source.scenes = sweep_scenes;
      r.source.suite_seed = sweep_seed;
      r.source.clips = sweep_clips;
      r.l_values = parse_list<std::size_t>(sweep_l);
      r.g_values = parse_list<double>(sweep_g);
      if (!sweep_mode.empty()) r.mode = mode_from_string(sweep_mode);
      if (!sweep_flow.empty()) r.flow_source = flow_source_from_string(sweep_flow);
      r.calibrate = !sweep_no_calibrate;
      r.out_dir = sweep_out;
      return cmd_sweep(r, std::cout, std::cerr);
    });
  }
  if (*sched) return cmd_schedule(sched_l_min, sched_l, sched_out, std::cout, std::cerr);
  if (*verify) return cmd_verify(std::cout, std::cerr);
  return kExitValidation;
}
