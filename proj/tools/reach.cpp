// reach: data generation, training, evaluation and rendezvous campaigns.
//
// Exit codes: 0 success, 2 curriculum disqualification, 1 any other error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "reach/config.hpp"
#include "reach/errors.hpp"
#include "reach/models.hpp"
#include "reach/protocol.hpp"
#include "reach/streaming.hpp"
#include "reach/training.hpp"

namespace fs = std::filesystem;
using namespace reach;

namespace {

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> argv;
};

config::RunConfig resolve(const Common& o) {
  config::RunConfig c = config::load(o.config);
  if (!o.data.empty()) c.data_dir = o.data;
  if (!o.out.empty()) c.out_dir = o.out;
  return c;
}

// The snapshot is itself a valid --config; run.json adds how it was invoked.
void snapshot(const config::RunConfig& c, const Common& o, const std::string& command) {
  const nlohmann::json resolved = config::to_json(c);
  config::write_json(resolved, c.out_dir / "resolved_config.json");
  config::write_json({{"command", command}, {"argv", o.argv}, {"config", resolved}}, c.out_dir / "run.json");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

data::LoadedDataset load_data(const config::RunConfig& c) {
  std::cerr << "loading " << c.data_dir.string() << "\n";
  return data::load_dataset(c.data_dir);
}

std::optional<train::CurriculumConfig> pick_curriculum(const std::optional<train::CurriculumConfig>& from_config,
                                                       int flag) {
  if (flag > 0) return from_config.value_or(train::CurriculumConfig{});
  if (flag < 0) return std::nullopt;
  return from_config;
}

nlohmann::json report_json(const train::EvalReport& r) {
  return {{"mean_mm", r.mean_mm},         {"std_mm", r.std_mm},     {"episodes", r.episodes},
          {"samples", r.samples},         {"aggregation", r.aggregation}};
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_common(CLI::App* app, Common& o, bool needs_data) {
  app->add_option("--config", o.config, "JSON config overlaid on the defaults");
  app->add_option("--out", o.out, "output directory");
  if (needs_data) app->add_option("--data", o.data, "dataset directory written by gen-data");
}

void add_curriculum_flags(CLI::App* app, int& flag) {
  app->add_flag_callback("--curriculum", [&flag] { flag = 1; }, "train with the reverse curriculum");
  app->add_flag_callback("--no-curriculum", [&flag] { flag = -1; }, "train on all samples from the start");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reaching-target prediction from wearable IMU streams"};
  app.require_subcommand(1);
  Common o;
  o.argv.assign(argv, argv + argc);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic reaching campaign");
  add_common(gen, o, false);
  std::optional<int> squares, train_per, test_per;
  gen->add_option("--squares", squares, "use the first N board squares");
  gen->add_option("--train-per-square", train_per);
  gen->add_option("--test-per-square", test_per);

  // train-gamma
  auto* tg = app.add_subcommand("train-gamma", "train the wrist position model");
  add_common(tg, o, true);
  std::string mask;
  int curriculum_flag = 0;
  std::optional<int> epochs;
  tg->add_option("--mask", mask, "feature mask");
  tg->add_option("--epochs", epochs);
  add_curriculum_flags(tg, curriculum_flag);

  // train-target
  auto* tt = app.add_subcommand("train-target", "train LSTM-Pos on a frozen wrist model");
  add_common(tt, o, true);
  std::string gamma_path, mode;
  std::optional<int> window;
  tt->add_option("--gamma", gamma_path, "wrist model weights (not needed for raw-only)");
  tt->add_option("--mode", mode, "pos-only | concat | raw-only");
  tt->add_option("--H", window, "window length");
  tt->add_option("--mask", mask, "feature mask (defaults to the wrist model's)");
  tt->add_option("--epochs", epochs);
  add_curriculum_flags(tt, curriculum_flag);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate on the test split");
  add_common(ev, o, true);
  std::string target_path, tag = "test";
  bool heatmap = false;
  ev->add_option("--gamma", gamma_path, "wrist model weights");
  ev->add_option("--target", target_path, "target model weights; evaluates the wrist model alone if omitted");
  ev->add_option("--tag", tag, "suffix of the output files");
  ev->add_flag("--heatmap", heatmap, "write the per-square heatmap CSV");

  // ablate
  auto* ab = app.add_subcommand("ablate", "feature-mask ablation");
  add_common(ab, o, true);
  std::string masks_arg, modes_arg = "raw-only,pos-only";
  ab->add_option("--masks", masks_arg, "comma-separated masks (default: all seven)");
  ab->add_option("--modes", modes_arg, "comma-separated input modes; empty for the wrist model alone");

  // h-sweep
  auto* hs = app.add_subcommand("h-sweep", "target error against the window length");
  add_common(hs, o, true);
  std::string windows_arg = "5,10,20,30,40,60";
  hs->add_option("--gamma", gamma_path, "wrist model weights; trained first if omitted");
  hs->add_option("--H", windows_arg, "comma-separated window lengths");
  hs->add_option("--mode", mode, "input mode");

  // rendezvous
  auto* rv = app.add_subcommand("rendezvous", "simulated robot rendezvous campaign");
  add_common(rv, o, true);
  std::optional<double> threshold, v_max, grace;
  bool paced = false;
  rv->add_option("--gamma", gamma_path, "wrist model weights");
  rv->add_option("--target", target_path, "target model weights")->required();
  rv->add_option("--threshold", threshold, "success distance in mm");
  rv->add_option("--v-max", v_max, "robot speed bound in m/s");
  rv->add_option("--grace", grace, "seconds the robot may keep moving after the episode");
  rv->add_flag("--paced", paced, "run trials in real time at the sample rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    config::RunConfig cfg = resolve(o);
    if (!mask.empty()) cfg.mask = mask;

    if (gen->parsed()) {
      if (squares) cfg.protocol.squares = *squares;
      if (train_per) cfg.protocol.train_per_square = *train_per;
      if (test_per) cfg.protocol.test_per_square = *test_per;
      cfg.validate();
      cfg.data_dir = cfg.out_dir;
      data::GeneratedData d = data::generate_protocol(cfg.protocol);
      d.manifest.config = config::to_json(cfg);
      d.manifest.config.erase("paths");  // the dataset does not depend on where it is written
      data::save_dataset(cfg.out_dir, d.manifest, d.train, d.test);
      snapshot(cfg, o, "gen-data");
      std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test episodes to "
                << cfg.out_dir.string() << "\n";
      return 0;
    }

    if (tg->parsed()) {
      if (epochs) cfg.experiment.gamma_train.epochs = *epochs;
      cfg.experiment.gamma_curriculum = pick_curriculum(cfg.experiment.gamma_curriculum, curriculum_flag);
      cfg.validate();
      snapshot(cfg, o, "train-gamma");
      const auto d = load_data(cfg);
      const auto& e = cfg.experiment;
      const auto [fit, val] = train::split_validation(d.train, e.validation_fraction, mix_seed(e.gamma_train.seed, 0x7a1));
      const auto run = train::train_gamma(fit, val, data::feature_mask(cfg.mask), e.gamma, e.gamma_train,
                                          e.gamma_curriculum);
      write_text(cfg.out_dir / "gamma_history.log", run.history.format_log());
      models::save_model(run.net, cfg.out_dir / "gamma.bin");
      const auto report = train::evaluate_position(run.net, d.test, d.manifest.board);
      config::write_json(report_json(report), cfg.out_dir / "gamma_eval.json");
      std::cout << "gamma test error " << report.mean_mm << " +- " << report.std_mm << " mm\n";
      return 0;
    }

    if (tt->parsed()) {
      auto& e = cfg.experiment;
      if (!mode.empty()) e.target.mode = models::parse_input_mode(mode);
      if (window) e.target.window = *window;
      if (epochs) e.target_train.epochs = *epochs;
      e.target_curriculum = pick_curriculum(e.target_curriculum, curriculum_flag);
      std::optional<models::GammaNet> gamma;
      if (models::needs_gamma(e.target.mode)) {
        if (gamma_path.empty()) throw InvalidArgument(models::to_string(e.target.mode) + " needs --gamma");
        gamma = models::load_gamma(gamma_path);
        if (mask.empty()) cfg.mask = gamma->mask().name();
      }
      cfg.validate();
      snapshot(cfg, o, "train-target");
      const auto d = load_data(cfg);
      const auto [fit, val] = train::split_validation(d.train, e.validation_fraction, mix_seed(e.target_train.seed, 0x7a1));
      const models::GammaNet* g = gamma ? &*gamma : nullptr;
      const auto run = train::train_target(fit, val, data::feature_mask(cfg.mask), g, e.target, e.target_train,
                                           e.target_curriculum);
      write_text(cfg.out_dir / "target_history.log", run.history.format_log());
      models::save_model(run.net, cfg.out_dir / "target.bin");
      const auto report = train::evaluate_target(run.net, g, d.test, d.manifest.board);
      config::write_json(report_json(report), cfg.out_dir / "target_eval.json");
      std::cout << "target test error " << report.mean_mm << " +- " << report.std_mm << " mm\n";
      return 0;
    }

    if (ev->parsed()) {
      cfg.validate();
      snapshot(cfg, o, "eval");
      const auto d = load_data(cfg);
      std::optional<models::GammaNet> gamma;
      if (!gamma_path.empty()) gamma = models::load_gamma(gamma_path);
      train::EvalReport report;
      nlohmann::json meta;
      if (!target_path.empty()) {
        const models::LstmPosNet phi = models::load_lstm_pos(target_path);
        if (models::needs_gamma(phi.config().mode) && !gamma) throw InvalidArgument("this target model needs --gamma");
        report = train::evaluate_target(phi, gamma ? &*gamma : nullptr, d.test, d.manifest.board);
        meta = report_json(report);
        meta["kind"] = "target";
        meta["mode"] = models::to_string(phi.config().mode);
        meta["H"] = phi.config().window;
        meta["mask"] = phi.mask().name();
      } else {
        if (!gamma) throw InvalidArgument("eval needs --gamma and/or --target");
        report = train::evaluate_position(*gamma, d.test, d.manifest.board);
        meta = report_json(report);
        meta["kind"] = "position";
        meta["mask"] = gamma->mask().name();
      }
      train::write_error_vs_time_csv(report, cfg.out_dir / ("error_vs_time_" + tag + ".csv"));
      if (heatmap) train::write_heatmap_csv(report, cfg.out_dir / ("heatmap_" + tag + ".csv"));
      config::write_json(meta, cfg.out_dir / ("eval_" + tag + ".json"));
      std::cout << "mean error " << report.mean_mm << " +- " << report.std_mm << " mm over " << report.episodes
                << " episodes\n";
      return 0;
    }

    if (ab->parsed()) {
      cfg.validate();
      snapshot(cfg, o, "ablate");
      const auto d = load_data(cfg);
      std::vector<std::string> masks = split_list(masks_arg);
      if (masks.empty()) masks = data::feature_mask_names();
      std::vector<models::InputMode> modes;
      for (const auto& m : split_list(modes_arg)) modes.push_back(models::parse_input_mode(m));
      const auto rows = train::run_ablation(masks, modes, d.train, d.test, d.manifest.board, cfg.experiment,
                                            [](const train::AblationRow& r) {
                                              std::cerr << r.mask << " / " << r.mode << ": " << r.mean_mm << " mm ("
                                                        << r.status << ")\n";
                                            });
      train::write_ablation_csv(rows, cfg.out_dir / "ablation.csv");
      config::write_json({{"aggregation", train::kAggregation}}, cfg.out_dir / "ablation_meta.json");
      return 0;
    }

    if (hs->parsed()) {
      auto& e = cfg.experiment;
      if (!mode.empty()) e.target.mode = models::parse_input_mode(mode);
      cfg.validate();
      snapshot(cfg, o, "h-sweep");
      const auto d = load_data(cfg);
      std::vector<int> windows;
      for (const auto& w : split_list(windows_arg)) windows.push_back(std::stoi(w));
      std::optional<models::GammaNet> gamma;
      if (models::needs_gamma(e.target.mode)) {
        if (!gamma_path.empty()) {
          gamma = models::load_gamma(gamma_path);
        } else {
          const auto [fit, val] = train::split_validation(d.train, e.validation_fraction, mix_seed(e.gamma_train.seed, 0x7a1));
          gamma = train::train_gamma(fit, val, data::feature_mask(cfg.mask), e.gamma, e.gamma_train, e.gamma_curriculum).net;
        }
      }
      const auto mask_used = gamma ? gamma->mask() : data::feature_mask(cfg.mask);
      const auto pts = train::run_h_sweep(windows, gamma ? &*gamma : nullptr, mask_used, d.train, d.test,
                                          d.manifest.board, e);
      train::write_h_sweep_csv(pts, cfg.out_dir / "h_sweep.csv");
      config::write_json({{"aggregation", train::kAggregation},
                          {"operating_point_H", 60},
                          {"operating_point_note",
                           "H=60 is half of a 120-sample (2 s at 60 Hz) episode: longer windows cost a later "
                           "first prediction for little further gain"}},
                         cfg.out_dir / "h_sweep_meta.json");
      return 0;
    }

    if (rv->parsed()) {
      if (threshold) cfg.rendezvous.threshold_mm = *threshold;
      if (v_max) cfg.rendezvous.v_max = *v_max;
      if (grace) cfg.rendezvous.grace_s = *grace;
      if (paced) cfg.rendezvous.paced = true;
      cfg.validate();
      snapshot(cfg, o, "rendezvous");
      const auto d = load_data(cfg);
      std::optional<models::GammaNet> gamma;
      if (!gamma_path.empty()) gamma = models::load_gamma(gamma_path);
      const models::LstmPosNet phi = models::load_lstm_pos(target_path);
      const auto result = stream::run_campaign(d.test, stream::model_predictor(phi, gamma ? &*gamma : nullptr),
                                               cfg.rendezvous);
      stream::write_campaign_csv(result, cfg.out_dir / "campaign.csv");
      config::write_json({{"success_rate", result.success_rate},
                          {"trials", result.trials.size()},
                          {"success_rule", "final robot-wrist distance at episode end plus grace_s <= threshold_mm"},
                          {"rendezvous", cfg.rendezvous.to_json()}},
                         cfg.out_dir / "campaign_meta.json");
      std::printf("success rate %.1f%% over %zu trials\n", 100.0 * result.success_rate, result.trials.size());
      return 0;
    }
  } catch (const Disqualified& e) {
    std::cerr << "disqualified: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
