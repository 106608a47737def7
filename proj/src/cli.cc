// Copyright 2026 The LHGM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lhgm/cli.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lhgm/bench.h"
#include "lhgm/codec.h"
#include "lhgm/config.h"
#include "lhgm/model.h"
#include "lhgm/train.h"

namespace lhgm {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<uint8_t> ReadBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void WriteBytes(const std::string& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path);
}

// Writes to `path`, or to `out` when path is empty or "-".
void Emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  WriteBytes(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

// Integers separated by whitespace or commas; '#' starts a comment.
std::vector<int> ReadSamples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<int> samples;
  for (std::string line; std::getline(in, line);) {
    line = line.substr(0, line.find('#'));
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream fields(line);
    for (std::string token; fields >> token;) {
      int v = 0;
      const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec != std::errc() || end != token.data() + token.size()) {
        throw std::runtime_error("not an integer sample in " + path + ": '" + token + "'");
      }
      samples.push_back(v);
    }
  }
  return samples;
}

std::vector<RgbImage> ReadCorpus(const std::string& dir) {
  std::vector<RgbImage> corpus;
  for (const std::string& path : ListImages(dir)) corpus.push_back(ReadImage(path));
  if (corpus.empty()) throw std::runtime_error("no .png or .ppm images in " + dir);
  return corpus;
}

TrainConfig LoadConfig(const std::string& path) {
  if (path.empty()) return DeskTrainConfig();
  return TrainConfig::FromFile(path);
}

std::string SeedLine(uint64_t seed) { return "# seed " + std::to_string(seed) + "\n"; }

struct TrainArgs {
  std::string config, corpus, out, metrics;
  std::optional<uint64_t> seed;
  int64_t steps = -1;
};

int Train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config = LoadConfig(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.steps >= 0) {
    config.steps = a.steps;
    config.Validate();
  }
  const std::vector<RgbImage> corpus = ReadCorpus(a.corpus);
  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path);
  TrainOptions options;
  options.metrics = &metrics;
  options.warnings = &err;
  options.checkpoint_path = a.out;
  const TrainResult result = TrainLoop(config, corpus, options);
  SaveWeights(result.model, a.out);
  char digest[17];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(WeightsDigest(result.model)));
  out << "trained " << config.steps << " steps, seed " << config.seed << ", skipped "
      << result.skipped_steps << ", weights " << a.out << " (digest " << digest << ")\n";
  return kExitOk;
}

CompressOptions ContextOption(const Model& model, bool no_context) {
  if (!no_context && !model.config().context_model) {
    throw UsageError("these weights have no context model; pass --no-context");
  }
  return {.context = !no_context};
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lossless image compression with a learned hyperprior model", "lhgm"};
  app.require_subcommand(1);
  app.allow_extras(false);

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a directory of images");
  train_cmd->add_option("--config", train.config,
                        "key = value training/model config (default: desk preset)");
  train_cmd->add_option("--corpus", train.corpus, "Directory of .png/.ppm images")
      ->required();
  train_cmd->add_option("--out", train.out, "Weights file to write")->required();
  train_cmd->add_option("--seed", train.seed, "Training seed (default: the config's, else 1)");
  train_cmd->add_option("--steps", train.steps, "Override the configured step count");
  train_cmd->add_option("--metrics", train.metrics,
                        "Metrics CSV (default: <out>.metrics.csv)");

  std::string weights, in_path, out_path;
  bool no_context = false;
  CLI::App* compress_cmd = app.add_subcommand("compress", "Compress one image");
  compress_cmd->add_option("--weights", weights, "Weights file")->required();
  compress_cmd->add_option("--in", in_path, "Input .png/.ppm image")->required();
  compress_cmd->add_option("--out", out_path, "Output container")->required();
  compress_cmd->add_flag("--no-context", no_context,
                         "Code y from the hyperprior alone (default: context on)");

  CLI::App* decompress_cmd = app.add_subcommand("decompress", "Decompress one container");
  decompress_cmd->add_option("--weights", weights, "Weights file")->required();
  decompress_cmd->add_option("--in", in_path, "Input container")->required();
  decompress_cmd->add_option("--out", out_path, "Output .png or .ppm image")->required();

  std::string dir, report;
  int jobs = 1;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Round-trip every image and report bpsp");
  eval_cmd->add_option("--weights", weights, "Weights file")->required();
  eval_cmd->add_option("--dir", dir, "Directory of .png/.ppm images")->required();
  eval_cmd->add_option("--report", report, "Report CSV (default: stdout)");
  eval_cmd->add_option("--jobs", jobs, "Images coded in parallel")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--no-context", no_context, "Code y without the context model");

  std::string samples_path, image_path, family = "all";
  int mixtures = 3;
  uint64_t seed = 1;
  CLI::App* fit_cmd = app.add_subcommand("fit-dist", "Fit distribution families to samples");
  auto* samples_opt =
      fit_cmd->add_option("--samples", samples_path, "Text file of integer samples");
  auto* image_opt = fit_cmd->add_option("--image", image_path, "Image whose sub-pixels are fitted");
  samples_opt->excludes(image_opt);
  fit_cmd->add_option("--family", family,
                      "gaussian, laplace, logistic, cauchy, or all (ranked comparison)")
      ->capture_default_str();
  fit_cmd->add_option("--K", mixtures,
                      "Mixture components (Gaussian only; used for the mixture row of 'all')")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--seed", seed, "Seed for the split and EM restarts")
      ->capture_default_str();
  fit_cmd->add_option("--out", out_path, "Output CSV (default: stdout)");

  std::string latents;
  CLI::App* hist_cmd = app.add_subcommand("histogram", "Marginal histogram of pixels or latents");
  hist_cmd->add_option("--image", image_path, "Input image")->required();
  hist_cmd->add_option("--latents", latents, "Histogram the y or z latents instead of pixels")
      ->check(CLI::IsMember({"y", "z"}));
  hist_cmd->add_option("--weights", weights, "Weights file (required with --latents)");
  hist_cmd->add_option("--out", out_path, "Output CSV (default: stdout)");

  std::string config_path, corpus, seeds_text = "1,2,3,4,5", summary_path;
  double lambda_warm = 0.6;
  int64_t steps = -1;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate-warmup", "Paired runs with and without the L2 warm-up");
  ablate_cmd->add_option("--config", config_path, "Training config (default: desk preset)");
  ablate_cmd->add_option("--corpus", corpus, "Directory of training images")->required();
  ablate_cmd->add_option("--seeds", seeds_text, "Comma-separated seeds")->capture_default_str();
  ablate_cmd->add_option("--lambda-warm", lambda_warm, "Warm-up weight of the second arm")
      ->capture_default_str();
  ablate_cmd->add_option("--steps", steps, "Override the configured step count");
  ablate_cmd->add_option("--out", out_path, "Per-run CSV (default: stdout)");
  ablate_cmd->add_option("--summary", summary_path,
                         "Per-seed differences and median CSV (default: <out>.summary.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return Train(train, out, err);

    if (compress_cmd->parsed()) {
      const Model model = LoadWeights(weights);
      const std::vector<uint8_t> file =
          Compress(ReadImage(in_path), model, ContextOption(model, no_context));
      WriteBytes(out_path, file);
      const BpspReport r = ReportFor(in_path, file);
      out << "wrote " << out_path << ": " << file.size() << " bytes, "
          << r.bpsp << " bpsp\n";
      return kExitOk;
    }

    if (decompress_cmd->parsed()) {
      const Model model = LoadWeights(weights);
      WriteImage(out_path, Decompress(ReadBytes(in_path), model));
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      const Model model = LoadWeights(weights);
      const EvalResult result =
          EvalDirectory(dir, model, ContextOption(model, no_context), jobs);
      Emit(report, FormatEvalReport(result, WeightsDigest(model)), out);
      if (!report.empty() && report != "-") {
        out << result.images.size() << " images, mean " << result.mean_bpsp << " bpsp\n";
      }
      return kExitOk;
    }

    if (fit_cmd->parsed()) {
      if (samples_path.empty() && image_path.empty()) {
        throw UsageError("fit-dist needs --samples or --image");
      }
      const std::vector<int> samples =
          samples_path.empty() ? PixelSamples(ReadImage(image_path)) : ReadSamples(samples_path);
      const FitOptions options{.seed = seed};
      if (family == "all") {
        Emit(out_path,
             SeedLine(seed) + FormatComparisonCsv(CompareFamilies(samples, options, mixtures)),
             out);
        return kExitOk;
      }
      Family f;
      try {
        f = ParseFamily(family);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (mixtures > 1 && f != Family::kGaussian) {
        throw UsageError("--K > 1 is only supported for the gaussian family");
      }
      const FitResult fit = FitFamily(samples, f, mixtures, options);
      FamilyComparison single;
      single.alphabet = fit.alphabet;
      single.rows.push_back({fit, fit.nll_bits});
      Emit(out_path, SeedLine(seed) + FormatComparisonCsv(single), out);
      return kExitOk;
    }

    if (hist_cmd->parsed()) {
      const RgbImage image = ReadImage(image_path);
      Histogram h;
      if (latents.empty()) {
        h = MarginalHistogram(PixelSamples(image), kPixelAlphabet);
      } else {
        if (weights.empty()) throw UsageError("--latents needs --weights");
        h = MarginalHistogram(LatentSamples(LoadWeights(weights), image,
                                            latents == "y" ? LatentKind::kY : LatentKind::kZ));
      }
      Emit(out_path, FormatHistogramCsv(h), out);
      return kExitOk;
    }

    if (ablate_cmd->parsed()) {
      TrainConfig config = LoadConfig(config_path);
      if (steps >= 0) {
        config.steps = steps;
        config.Validate();
      }
      AblationOptions options;
      options.lambda_warm = lambda_warm;
      options.seeds.clear();
      std::istringstream list(seeds_text);
      for (std::string token; std::getline(list, token, ',');) {
        uint64_t s = 0;
        const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), s);
        if (ec != std::errc() || end != token.data() + token.size()) {
          throw UsageError("bad seed '" + token + "'");
        }
        options.seeds.push_back(s);
      }
      const AblationSummary s =
          WarmupAblation(config, ReadCorpus(corpus), options, &err);
      Emit(out_path, FormatAblationCsv(s), out);
      const std::string summary = FormatAblationSummary(s, options);
      if (!summary_path.empty()) {
        Emit(summary_path, summary, out);
      } else if (!out_path.empty() && out_path != "-") {
        Emit(out_path + ".summary.csv", summary, out);
      } else {
        out << summary;
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace lhgm
