// Command-line front end: dataset generation, training, evaluation,
// benchmarking, heat-map export and cost-model reporting.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evodhm/evaluation.hpp"
#include "evodhm/heatmap.hpp"
#include "evodhm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evodhm;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  bool deterministic = false;
};

void write_run_json(const fs::path& out_dir, const std::string& subcommand,
                    const json& resolved) {
  fs::create_directories(out_dir);
  json j;
  j["schema_version"] = 1;
  j["subcommand"] = subcommand;
  j["config"] = resolved;
  std::ofstream(out_dir / "run.json") << j.dump(2) << "\n";
}

json config_json(const PipelineConfig& cfg) {
  return json{{"variant", to_string(cfg.variant)},
              {"image_size", cfg.image_size},
              {"steps", cfg.steps},
              {"width_multiplier", cfg.width_multiplier},
              {"cnn_block_count", cfg.cnn_block_count},
              {"classic_conv_layers", cfg.classic_conv_layers},
              {"landmarks", cfg.landmarks},
              {"k_id", cfg.k_id},
              {"k_exp", cfg.k_exp},
              {"sigma", cfg.sigma},
              {"hidden_dim", cfg.hidden_dim},
              {"batch", cfg.batch},
              {"epochs", cfg.epochs},
              {"learning_rate", cfg.effective_learning_rate()},
              {"stage_loss_weight", cfg.stage_loss_weight},
              {"seed", cfg.seed},
              {"deterministic", cfg.deterministic}};
}

struct CostRow {
  LayerCost layer;
};

int run_cost(const PipelineConfig& cfg, const CommonOpts& common) {
  std::vector<LayerCost> rows;
  if (cfg.variant == Variant::fast_dhm) {
    FastNetwork net = FastNetwork::create(cfg, cfg.seed);
    rows = net.layer_costs();
  } else {
    ClassicNetwork net = ClassicNetwork::create(cfg, cfg.seed);
    rows = net.layer_costs();
  }

  json out;
  out["schema_version"] = 1;
  out["layers"] = json::array();
  long long total_ma = 0, total_p = 0;
  std::printf("%-28s %-10s %14s %12s\n", "layer", "mode", "mult_adds", "parameters");
  for (const auto& row : rows) {
    std::printf("%-28s %-10s %14lld %12lld\n", row.name.c_str(), row.mode.c_str(),
                row.cost.mult_adds, row.cost.parameters);
    out["layers"].push_back({{"layer", row.name},
                             {"mode", row.mode},
                             {"mult_adds", row.cost.mult_adds},
                             {"parameters", row.cost.parameters}});
    total_ma += row.cost.mult_adds;
    total_p += row.cost.parameters;
  }
  std::printf("%-28s %-10s %14lld %12lld\n", "total", "", total_ma, total_p);
  out["total"] = {{"mult_adds", total_ma}, {"parameters", total_p}};

  if (cfg.variant == Variant::fast_dhm) {
    // Efficiency of the separable blocks against equivalent standard convs,
    // restricted to widths >= 64 where the analysis applies.
    FastNetwork net = FastNetwork::create(cfg, cfg.seed);
    long long sep_ma = 0, std_ma = 0;
    std::size_t size = cfg.image_size / 2;
    std::size_t ch = 8 * cfg.width_multiplier;
    for (std::size_t b = 1; b <= cfg.cnn_block_count; ++b) {
      const bool strided = (b % 2 == 1);
      const std::size_t out_ch = strided ? ch * 2 : ch;
      const std::size_t stride = strided ? 2 : 1;
      auto dw = cost_of(ConvSpec::same(ConvMode::depthwise, 3, ch, ch, stride), size);
      if (strided) size /= 2;
      auto pw = cost_of(ConvSpec::same(ConvMode::pointwise, 1, ch, out_ch), size);
      auto std_equiv = cost_of(ConvSpec::same(ConvMode::standard, 3, ch, out_ch, 1), size);
      if (out_ch >= 64) {
        sep_ma += dw.mult_adds + pw.mult_adds;
        std_ma += std_equiv.mult_adds;
      }
      ch = out_ch;
    }
    if (std_ma > 0) {
      const double ratio = static_cast<double>(sep_ma) / static_cast<double>(std_ma);
      std::printf("separable/standard mult-add ratio (widths >= 64): %.6f\n", ratio);
      out["separable_vs_standard_ratio_wide"] = ratio;
    }
    (void)net;
  }

  write_run_json(common.out_dir, "cost", config_json(cfg));
  std::ofstream(fs::path(common.out_dir) / "cost.json") << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep evolutionary diffusion heat-map face alignment toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags take precedence");
  app.allow_config_extras(true);

  CommonOpts common;
  PipelineConfig cfg;
  std::string variant_str = "fast";
  std::string ablation_str = "none";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--seed", common.seed, "random seed");
    sub->add_flag("--deterministic", common.deterministic,
                  "force single-threaded bitwise-reproducible execution");
    sub->add_option("--image-size", cfg.image_size, "square image resolution");
    sub->add_option("--landmarks", cfg.landmarks, "landmark count L");
    sub->add_option("--k-id", cfg.k_id, "identity basis size");
    sub->add_option("--k-exp", cfg.k_exp, "expression basis size");
    sub->add_option("--sigma", cfg.sigma, "heat-map Gaussian std-dev (pixels)");
    sub->add_option("--steps", cfg.steps, "recurrent unroll depth T");
    sub->add_option("--multiplier", cfg.width_multiplier, "fast CNN channel multiplier");
    sub->add_option("--variant", variant_str, "fast | classic");
    sub->add_option("--ablation", ablation_str, "none | 2d-rnn | 3d-cnn");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::size_t gen_n = 100;
  gen->add_option("--n", gen_n, "sample count")->check(CLI::PositiveNumber);
  add_common(gen);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a network on a dataset");
  std::string data_dir;
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--epochs", cfg.epochs, "training epochs");
  train_cmd->add_option("--batch", cfg.batch, "batch size");
  double lr_flag = -1.0;
  train_cmd->add_option("--lr", lr_flag, "initial learning rate (>= 0)");
  train_cmd->add_option("--stage-loss-weight", cfg.stage_loss_weight,
                        "weight of intermediate-stage loss terms (fast variant)");
  add_common(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained model");
  std::string model_path;
  eval_cmd->add_option("--model", model_path, "trained model file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  add_common(eval_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "single-core benchmark");
  std::size_t warmup = 3, iters = 20;
  bench_cmd->add_option("--model", model_path, "trained model file (optional)");
  bench_cmd->add_option("--warmup", warmup, "warmup iterations");
  bench_cmd->add_option("--iters", iters, "timed iterations")->check(CLI::Range(10, 1000000));
  add_common(bench_cmd);

  // cost
  auto* cost_cmd = app.add_subcommand("cost", "per-layer cost-model report");
  add_common(cost_cmd);

  // export-heatmap
  auto* hm_cmd = app.add_subcommand("export-heatmap", "write heat maps as PPM images");
  int channel = -1;
  bool iterations = false;
  hm_cmd->add_option("--model", model_path, "classic model file (per-iteration export)");
  hm_cmd->add_option("--channel", channel, "channel 0..2, or -1 for composite")
      ->check(CLI::Range(-1, 2));
  hm_cmd->add_flag("--iterations", iterations, "export per-iteration evolving maps");
  add_common(hm_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  cfg.seed = common.seed;
  cfg.deterministic = common.deterministic;
  if (lr_flag >= 0) cfg.learning_rate = lr_flag;
  try {
    cfg.variant = variant_from_string(variant_str);
    if (ablation_str == "none")
      cfg.ablation = Ablation::none;
    else if (ablation_str == "2d-rnn")
      cfg.ablation = Ablation::no_heatmap_2d_rnn;
    else if (ablation_str == "3d-cnn")
      cfg.ablation = Ablation::no_recurrence_3d_cnn;
    else
      throw ContractViolation("unknown ablation: " + ablation_str);

    const fs::path out_dir(common.out_dir);

    if (gen->parsed()) {
      auto model = generate_synthetic_model(cfg.seed, cfg.landmarks, cfg.k_id, cfg.k_exp);
      auto dataset = generate_synthetic_dataset(model, gen_n, cfg.seed, cfg);
      save_dataset(dataset, out_dir, cfg);
      json echo = config_json(cfg);
      echo["n"] = gen_n;
      write_run_json(out_dir, "gen-data", echo);
      std::cout << "wrote " << dataset.samples.size() << " samples to " << out_dir
                << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      Dataset dataset = load_dataset(data_dir);
      cfg.landmarks = dataset.model.landmark_count;
      cfg.k_id = dataset.model.k_id();
      cfg.k_exp = dataset.model.k_exp();
      cfg.image_size = dataset.image_size;
      TrainedModel tm = train(dataset, cfg, cfg.seed);
      fs::create_directories(out_dir);
      save_trained_model(tm, out_dir / "model.evam");
      std::ofstream(out_dir / "train_log.csv") << training_log_csv(tm.log);
      json echo = config_json(cfg);
      echo["data"] = data_dir;
      write_run_json(out_dir, "train", echo);
      std::cout << "final train NME " << tm.log.back().nme_train << "; model written to "
                << (out_dir / "model.evam") << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      Dataset dataset = load_dataset(data_dir);
      if (dataset.samples.empty()) throw ContractViolation("empty evaluation set");
      TrainedModel tm = load_trained_model(model_path);
      if (tm.cfg.image_size != dataset.image_size ||
          tm.model.landmark_count != dataset.model.landmark_count)
        throw std::runtime_error("model/dataset mismatch (image size or landmark count)");
      std::vector<double> nmes, yaws;
      for (const auto& s : dataset.samples) {
        AlignmentResult res = tm.run(s.image);
        const auto [w, h] = bbox_from_landmarks(s.ground_truth_2d);
        nmes.push_back(nme(res.final_landmarks, s.ground_truth_2d, w, h));
        yaws.push_back(s.yaw);
      }
      NmeReport report = pose_binned_report(nmes, yaws);
      fs::create_directories(out_dir);
      std::ofstream(out_dir / "nme_report.json") << nme_report_json(report) << "\n";
      std::ofstream(out_dir / "per_sample.csv") << nme_report_csv(report);
      std::ofstream(out_dir / "ced.svg") << ced_curve_svg(ced_curve(nmes, default_ced_grid()));
      json echo = config_json(tm.cfg);
      echo["model"] = model_path;
      echo["data"] = data_dir;
      write_run_json(out_dir, "eval", echo);
      std::cout << "mean NME " << report.mean_nme << " over " << nmes.size()
                << " samples; failure rate " << report.failure_rate << "\n";
      return 0;
    }

    if (bench_cmd->parsed()) {
      TrainedModel tm;
      if (!model_path.empty()) {
        tm = load_trained_model(model_path);
      } else {
        tm.cfg = cfg;
        tm.model = generate_synthetic_model(cfg.seed, cfg.landmarks, cfg.k_id, cfg.k_exp);
        if (cfg.variant == Variant::fast_dhm)
          tm.fast = FastNetwork::create(cfg, cfg.seed);
        else
          tm.classic = ClassicNetwork::create(cfg, cfg.seed);
      }
      BenchReport report = benchmark(tm, warmup, iters);
      fs::create_directories(out_dir);
      std::ofstream(out_dir / "bench.json") << bench_report_json(report) << "\n";
      write_run_json(out_dir, "bench", config_json(tm.cfg));
      std::cout << bench_report_json(report) << "\n";
      return 0;
    }

    if (cost_cmd->parsed()) return run_cost(cfg, common);

    if (hm_cmd->parsed()) {
      fs::create_directories(out_dir);
      if (iterations) {
        TrainedModel tm;
        if (!model_path.empty()) {
          tm = load_trained_model(model_path);
          if (!tm.classic)
            throw ContractViolation("--iterations needs a classic-variant model");
        } else {
          cfg.variant = Variant::classic_dhm;
          tm.cfg = cfg;
          tm.model = generate_synthetic_model(cfg.seed, cfg.landmarks, cfg.k_id, cfg.k_exp);
          tm.classic = ClassicNetwork::create(cfg, cfg.seed);
        }
        Tensor image({tm.cfg.image_size, tm.cfg.image_size, 3});
        for (std::size_t i = 0; i < image.size(); ++i)
          image.data[i] = 0.4 + 0.2 * std::sin(static_cast<double>(i) * 0.017);
        PoseShapeParams p0 = default_centered_pose(tm.model, tm.cfg.image_size);
        AlignmentResult res =
            classic_forward(tm.model, *tm.classic, image, p0, /*capture_heatmaps=*/true);
        for (std::size_t t = 0; t < res.iteration_heatmaps.size(); ++t)
          write_ppm(res.iteration_heatmaps[t],
                    out_dir / ("heatmap_iter" + std::to_string(t) + ".ppm"), channel);
        std::cout << "wrote " << res.iteration_heatmaps.size() << " per-iteration maps\n";
      } else {
        auto model = generate_synthetic_model(cfg.seed, cfg.landmarks, cfg.k_id, cfg.k_exp);
        PoseShapeParams pose = default_centered_pose(model, cfg.image_size);
        auto map = mean_initial_heatmap(model, pose, cfg.image_size, cfg.image_size,
                                        cfg.sigma);
        write_ppm(map.data, out_dir / "heatmap_mean.ppm", channel);
        std::cout << "wrote " << (out_dir / "heatmap_mean.ppm") << "\n";
      }
      write_run_json(out_dir, "export-heatmap", config_json(cfg));
      return 0;
    }
  } catch (const ContractViolation& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
