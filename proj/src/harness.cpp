#include "impnet/harness.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "impnet/evaluate.hpp"
#include "impnet/schedule.hpp"
#include "impnet/tensor_io.hpp"

namespace impnet {

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitValidation;
  }
}

LoadedVideos load_videos(const VideoSource& source, std::size_t num_classes) {
  LoadedVideos v;
  if (!source.frames_dir.empty()) {
    if (!source.scenes.empty()) throw ValidationError("give either a scene manifest or a frame directory, not both");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(source.frames_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".impt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("no .impt frames in " + source.frames_dir.string());
    for (const auto& f : files) v.raw_frames.push_back(load_tensor(f));
    return v;
  }
  std::vector<SceneSpec> specs;
  if (!source.scenes.empty()) {
    specs = load_manifest(source.scenes);
  } else {
    SuiteOptions o;
    o.seed = source.suite_seed;
    o.clips = source.clips;
    o.num_classes = num_classes;
    specs = blur_heavy_suite(o);
  }
  for (const auto& s : specs) {
    if (s.num_classes != num_classes) throw ValidationError("scene class count does not match the checkpoint");
  }
  v.clips = render_all(specs);
  return v;
}

RunManifest parse_run_manifest(std::istream& is) {
  RunManifest m;
  bool k_given = false;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw ValidationError("run config: expected key = value, got '" + line + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "checkpoint") m.checkpoint = value;
      else if (key == "scenes") m.source.scenes = value;
      else if (key == "frames") m.source.frames_dir = value;
      else if (key == "suite_seed") m.source.suite_seed = std::stoull(value);
      else if (key == "clips") m.source.clips = std::stoul(value);
      else if (key == "mode") m.mode = mode_from_string(value);
      else if (key == "l") m.segment.segment_length = std::stoul(value);
      else if (key == "k") {
        m.segment.keyframe_offset = std::stoul(value);
        k_given = true;
      } else if (key == "g") m.segment.memory_gate = std::stod(value);
      else if (key == "flow") m.segment.flow_source = flow_source_from_string(value);
      else if (key == "wall_clock") m.wall_clock = value == "1" || value == "true";
      else throw ValidationError("run config: unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ValidationError*>(&e)) throw;
      throw ValidationError("run config: bad value for '" + key + "'");
    }
  }
  if (!k_given) m.segment.keyframe_offset = optimal_keyframe(m.segment.segment_length);
  return m;
}

int cmd_run(const RunManifest& m, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (m.checkpoint.empty()) throw ValidationError("run: a checkpoint is required");
    if (m.out_dir.empty()) throw ValidationError("run: an output directory is required");
    m.segment.validate();
    const Params params = load_params(m.checkpoint);
    const LoadedVideos videos = load_videos(m.source, params.spec.num_classes);
    std::filesystem::create_directories(m.out_dir);
    std::ofstream frames_csv(m.out_dir / "frames.csv");
    std::ofstream det_csv(m.out_dir / "detections.csv");
    const PipelineOptions options{m.wall_clock};

    std::vector<Detection> detections;
    std::vector<GroundTruth> truth;
    ComponentCounts counts;
    double total_ms = 0;
    std::size_t frames = 0;
    auto consume = [&](const PipelineRun& run, const VideoClip* clip) {
      write_frames_csv(frames_csv, run, frames, frames == 0);
      auto d = collect_detections(run, frames);
      detections.insert(detections.end(), d.begin(), d.end());
      if (clip) {
        auto g = ground_truth(*clip, frames);
        truth.insert(truth.end(), g.begin(), g.end());
      }
      counts.feature += run.counts.feature;
      counts.flow += run.counts.flow;
      counts.warp += run.counts.warp;
      counts.aggregation += run.counts.aggregation;
      counts.task += run.counts.task;
      total_ms += run.timing.total();
      frames += run.frames.size();
    };
    if (!videos.raw_frames.empty()) {
      if (m.segment.flow_source == FlowSource::oracle) {
        throw ValidationError("run: oracle flow needs rendered scenes, not a frame directory");
      }
      consume(run_pipeline(videos.raw_frames, m.mode, m.segment, params, {}, options), nullptr);
    } else {
      for (const auto& clip : videos.clips) {
        consume(run_pipeline(clip.frames, m.mode, m.segment, params,
                             oracle_flow(clip, params.spec.feature_stride()), options),
                &clip);
      }
    }
    write_detections_csv(det_csv, detections);

    std::ostringstream summary;
    summary.precision(6);
    summary << "mode=" << to_string(m.mode) << " flow=" << to_string(m.segment.flow_source)
            << " l=" << m.segment.segment_length << " k=" << m.segment.keyframe_offset
            << " g=" << m.segment.memory_gate << " frames=" << frames << " feature_calls=" << counts.feature
            << " flow_calls=" << counts.flow << " warp_calls=" << counts.warp << " detections=" << detections.size();
    if (videos.raw_frames.empty()) {
      summary << " mAP=" << compute_map(detections, truth, params.spec.num_classes).map;
    } else {
      summary << " mAP=n/a";
    }
    if (m.wall_clock) summary << " ms_per_frame=" << total_ms / static_cast<double>(frames);
    std::ofstream(m.out_dir / "summary.txt") << summary.str() << '\n';
    out << summary.str() << '\n';
    return kExitOk;
  });
}

int cmd_train(const TrainConfig& cfg, const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (out_dir.empty()) throw ValidationError("train: an output directory is required");
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream os(out_dir / "config.txt");
      write_train_config(os, cfg);
    }
    const auto clips = render_all(blur_heavy_suite(cfg.data_options()));
    const TrainResult r = train(clips, cfg, out_dir);
    save_params(out_dir / "final.impp", r.params);
    const std::size_t tail = std::min<std::size_t>(100, r.curve.size());
    double mean_tail = 0;
    for (std::size_t i = r.curve.size() - tail; i < r.curve.size(); ++i) mean_tail += r.curve[i].loss;
    mean_tail /= static_cast<double>(tail);
    out.precision(6);
    out << "iterations=" << r.curve.size() << " first_loss=" << r.curve.front().loss
        << " final_loss=" << r.curve.back().loss << " mean_last_" << tail << "=" << mean_tail << '\n';
    return kExitOk;
  });
}

int cmd_sweep(const SweepRequest& request, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (request.checkpoint.empty()) throw ValidationError("sweep: a checkpoint is required");
    if (request.out_dir.empty()) throw ValidationError("sweep: an output directory is required");
    const Params params = load_params(request.checkpoint);
    if (params.trained_iterations == 0) {
      throw ValidationError("sweep: checkpoint has never been trained; train first");
    }
    const LoadedVideos videos = load_videos(request.source, params.spec.num_classes);
    if (videos.clips.empty()) throw ValidationError("sweep: needs rendered scenes with ground truth");
    std::filesystem::create_directories(request.out_dir);

    std::optional<CostModel> cost;
    if (request.calibrate) {
      const Tensor& f = videos.clips.front().frames.front();
      cost = calibrate_cost_model(params, f.height(), f.width(), 11);
      std::ofstream os(request.out_dir / "cost_model.csv");
      os << "c_feat,c_flow,c_warp,c_agg,c_task\n"
         << cost->c_feat << ',' << cost->c_flow << ',' << cost->c_warp << ',' << cost->c_agg << ',' << cost->c_task
         << '\n';
    }
    SweepGrid grid;
    grid.l_values = request.l_values;
    grid.g_values = request.g_values;
    grid.mode = request.mode;
    grid.flow_source = request.flow_source;
    const auto points = sweep(grid, videos.clips, params, cost ? &*cost : nullptr);
    std::ofstream os(request.out_dir / "sweep.csv");
    write_sweep_csv(os, points);
    write_sweep_csv(out, points);
    return kExitOk;
  });
}

int cmd_schedule(std::size_t l_min, std::size_t l_max, const std::filesystem::path& out_dir, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    if (l_min < 1 || l_min > l_max) throw ValidationError("schedule: need 1 <= l_min <= l_max");
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      std::ofstream os(out_dir / "schedule.csv");
      write_schedule_csv(os, l_min, l_max);
      for (double g : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        std::ostringstream name;
        name << "contribution_g" << g << ".csv";
        std::ofstream cs(out_dir / name.str());
        write_contribution_csv(cs, contribution_profile(MemoryGate(g), 0.5, 10));
      }
    }
    const std::size_t best = optimal_keyframe(l_max);
    out << "l=" << l_max << " optimal_k=" << best << '\n';
    for (std::size_t k = 0; k < l_max; ++k) {
      out << "k=" << k << " dbar=" << avg_propagation_distance(l_max, k) << (k == best ? " *" : "") << '\n';
    }
    return kExitOk;
  });
}

}  // namespace impnet
