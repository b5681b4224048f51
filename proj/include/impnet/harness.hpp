#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "impnet/pipeline.hpp"
#include "impnet/synth.hpp"
#include "impnet/training.hpp"

namespace impnet {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2 };

// Runs `body`, mapping ValidationError/ShapeError (and other invalid_argument) to 1 and
// NumericalError to 2, with the message written to `err`.
int guarded(std::ostream& err, const std::function<int()>& body);

// Where the frames of a run or sweep come from: an explicit scene manifest, a directory of
// IMPT frame tensors (no ground truth), or a generated blur-heavy suite.
struct VideoSource {
  std::filesystem::path scenes;
  std::filesystem::path frames_dir;
  std::uint64_t suite_seed = 1;
  std::size_t clips = 10;
};

struct LoadedVideos {
  std::vector<VideoClip> clips;  // with ground truth
  std::vector<Tensor> raw_frames;  // set instead of clips for a frame directory
};

LoadedVideos load_videos(const VideoSource& source, std::size_t num_classes);

// Flat key=value run configuration; keys: checkpoint, scenes, frames, suite_seed, clips,
// mode, l, k, g, flow, wall_clock.
struct RunManifest {
  std::filesystem::path checkpoint;
  VideoSource source;
  Mode mode = Mode::impression;
  SegmentConfig segment;
  std::filesystem::path out_dir;
  bool wall_clock = false;
};

RunManifest parse_run_manifest(std::istream& is);

// Writes frames.csv, detections.csv and summary.txt to out_dir and prints the summary line.
int cmd_run(const RunManifest& manifest, std::ostream& out, std::ostream& err);

// Generates the training suite from the config, trains, writes loss.csv, schedule-boundary
// checkpoints, final.impp and the effective config.txt.
int cmd_train(const TrainConfig& cfg, const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);

struct SweepRequest {
  std::filesystem::path checkpoint;
  VideoSource source;
  std::vector<std::size_t> l_values{10};
  std::vector<double> g_values{1.0};
  Mode mode = Mode::impression;
  FlowSource flow_source = FlowSource::learned;
  bool calibrate = true;
  std::filesystem::path out_dir;
};

// Writes sweep.csv (and cost_model.csv when calibrating).
int cmd_sweep(const SweepRequest& request, std::ostream& out, std::ostream& err);

// Writes schedule.csv for l in [l_min, l_max] and contribution_g<g>.csv for the g grid
// {0, 0.25, 0.5, 0.75, 1} when out_dir is set; prints the table for l_max.
int cmd_schedule(std::size_t l_min, std::size_t l_max, const std::filesystem::path& out_dir, std::ostream& out,
                 std::ostream& err);

// Runs the built-in property and gradient checks; one PASS/FAIL line each.
int cmd_verify(std::ostream& out, std::ostream& err);

}  // namespace impnet
