// mgtbench: config-driven benchmark runner.
//
//   mgtbench build-dataset --config exp.json
//   mgtbench attack        --config exp.json
//   mgtbench train         --config exp.json [--detector ID] [--dataset ID] [--method M] [--lr X]
//   mgtbench calibrate     --config exp.json
//   mgtbench evaluate      --config exp.json [--calibrate] [--run-id ID]
//   mgtbench report        --run out/runs/ID
//   mgtbench list-attacks  [--json]
//   mgtbench run           --config exp.json      (every stage in order)
//
// Exit codes: 2 config/input, 3 training, 4 evaluation, 5 backend exhaustion.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgtbench/pipeline.hpp"

namespace {

using namespace mgtbench;

int exit_code_for(const std::exception_ptr& ep, std::string& message) {
  try {
    std::rethrow_exception(ep);
  } catch (const TrainError& e) {
    message = e.what();
    return 3;
  } catch (const ProbeError& e) {
    message = e.what();
    return 2;
  } catch (const MetricError& e) {
    message = e.what();
    return 4;
  } catch (const ScoreError& e) {
    message = e.what();
    return 4;
  } catch (const ReportError& e) {
    message = e.what();
    return 4;
  } catch (const BackendError& e) {
    message = e.what();
    return 5;
  } catch (const CorpusGenerationError& e) {
    message = e.what();
    return 5;
  } catch (const AttackBuildError& e) {
    message = e.what();
    return 5;
  } catch (const ParaphraseError& e) {
    message = e.what();
    return 5;
  } catch (const std::exception& e) {
    // config, input, version and everything else the user can fix by editing inputs
    message = e.what();
    return 2;
  }
}

struct Common {
  std::string config;
  bool force = false;
  bool quiet = false;
};

ExperimentConfig read_config(const Common& c) { return load_config(c.config); }

StageOptions stage_options(const Common& c) {
  StageOptions o;
  o.force = c.force;
  if (!c.quiet) o.log = [](const std::string& m) { std::cerr << "[mgtbench] " << m << "\n"; };
  return o;
}

void print_list(const std::string& what, const std::vector<std::string>& ids) {
  for (const auto& id : ids) std::cout << what << " " << id << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Machine-generated text detection benchmark"};
  app.require_subcommand(1);

  Common common;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "Experiment config (JSON)")->required();
    sub->add_flag("--force", common.force, "Rebuild even when the stage is up to date");
    sub->add_flag("-q,--quiet", common.quiet, "No progress messages");
  };

  auto* build = app.add_subcommand("build-dataset", "Generate one paired dataset per generator (plus round-robin)");
  with_config(build);
  std::vector<std::string> only;
  bool no_round_robin = false;
  build->add_option("--generator", only, "Only these generators");
  build->add_flag("--no-round-robin", no_round_robin, "Skip the round-robin dataset");

  auto* attack = app.add_subcommand("attack", "Build attacked test sets for the configured targets");
  with_config(attack);

  auto* train = app.add_subcommand("train", "Fine-tune trained detectors");
  with_config(train);
  std::vector<std::string> train_ids;
  std::string train_dataset, train_method;
  std::optional<double> train_lr;
  train->add_option("--detector", train_ids, "Detector ids (default: all trained detectors)");
  train->add_option("--dataset", train_dataset, "Override the training dataset");
  train->add_option("--method", train_method, "Override the method: full | head_only | adapter");
  train->add_option("--lr", train_lr, "Override the learning rate");

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate thresholds on eval splits");
  with_config(calibrate);
  std::vector<std::string> cal_ids;
  calibrate->add_option("--detector", cal_ids, "Detector ids (default: all)");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate every detector on every test set");
  with_config(evaluate);
  EvaluateOptions eo;
  bool no_human_only = false;
  evaluate->add_flag("--calibrate", eo.calibrate_missing, "Calibrate detectors that have no threshold yet");
  evaluate->add_flag("--no-human-only", no_human_only, "Skip the human-only evaluation");
  evaluate->add_option("--run-id", eo.run_id, "Run directory name (default: from the clock)");
  evaluate->add_option("--started-at", eo.started_at, "Override the recorded start time");

  auto* run = app.add_subcommand("run", "build-dataset, attack, train, calibrate and evaluate in order");
  with_config(run);
  run->add_option("--run-id", eo.run_id, "Run directory name");
  run->add_option("--started-at", eo.started_at, "Override the recorded start time");

  auto* report = app.add_subcommand("report", "Re-render report.md and figures of a stored run");
  std::string run_dir;
  report->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  auto* list = app.add_subcommand("list-attacks", "Print the attack catalog");
  bool as_json = false;
  list->add_flag("--json", as_json, "Machine-readable output");

  auto* corpus = app.add_subcommand("make-corpus", "Write a synthetic corpus as JSONL");
  std::string reg = "human", out_path;
  std::size_t n_articles = 100;
  std::uint64_t corpus_seed = 0;
  corpus->add_option("--register", reg, "human | shifted | machine-a | machine-b | machine-c | machine-chat");
  corpus->add_option("-n,--articles", n_articles, "Number of articles");
  corpus->add_option("--seed", corpus_seed, "Seed");
  corpus->add_option("-o,--output", out_path, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list) {
      if (as_json) {
        std::cout << attack_catalog_json().dump(2) << "\n";
      } else {
        for (const auto& a : list_attacks()) {
          std::cout << to_string(a.attack_id);
          if (a.param_overrides.temperature) std::cout << "  temperature=" << *a.param_overrides.temperature;
          if (a.param_overrides.repetition_penalty) std::cout << "  repetition_penalty=" << *a.param_overrides.repetition_penalty;
          if (a.template_override) std::cout << "  template=" << a.template_override->prompt_id;
          if (a.paraphraser_backend) std::cout << "  paraphraser=" << *a.paraphraser_backend;
          std::cout << "\n";
        }
      }
      return 0;
    }
    if (*corpus) {
      std::string body;
      for (const auto& r : synth::corpus(synth::register_by_name(reg), n_articles, corpus_seed, reg + "-")) {
        body += nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() + "\n";
      }
      fs::atomic_write(out_path, body);
      return 0;
    }
    if (*report) {
      const std::filesystem::path dir(run_dir);
      auto artifacts = load_run(dir);
      PersistOptions po;
      po.force = true;
      po.reference_human_dataset = "in-distribution";
      persist_run(artifacts, dir.parent_path(), po);
      std::cout << (dir / "report.md").string() << "\n";
      return 0;
    }

    auto cfg = read_config(common);
    if (*train) {
      for (auto& d : cfg.detectors) {
        if (d.type != "trained") continue;
        if (!train_ids.empty() && std::find(train_ids.begin(), train_ids.end(), d.id) == train_ids.end()) continue;
        if (!train_dataset.empty()) {
          const auto ids = cfg.dataset_ids();
          if (std::find(ids.begin(), ids.end(), train_dataset) == ids.end()) {
            throw ConfigError("unknown dataset '" + train_dataset + "'");
          }
          d.train_dataset = train_dataset;
        }
        if (!train_method.empty()) d.train.method = parse_method(train_method);
        if (train_lr) d.train.learning_rate = *train_lr;
        d.train.validate();
      }
      for (const auto& id : train_ids) {
        if (cfg.detector(id).type != "trained") throw ConfigError("detector '" + id + "' is not a trained detector");
      }
    }

    Pipeline p(std::move(cfg), stage_options(common));
    if (*build) {
      for (const auto& id : only) p.config().generator(id);
      p.build_datasets(only, !no_round_robin);
      for (const auto& id : p.config().dataset_ids()) {
        if (std::filesystem::exists(p.dataset_dir(id) / "manifest.json")) std::cout << p.dataset_dir(id).string() << "\n";
      }
    } else if (*attack) {
      p.build_attacks();
      for (const auto& id : p.attack_dataset_ids()) std::cout << p.dataset_dir(id).string() << "\n";
    } else if (*train) {
      p.train(train_ids);
      for (const auto& d : p.config().detectors) {
        if (d.type == "trained") std::cout << p.detector_dir(d.id).string() << "\n";
      }
    } else if (*calibrate) {
      for (const auto& [id, t] : p.calibrate(cal_ids)) {
        std::cout << id << " threshold=" << t.value << " fpr_eval=" << t.achieved_fpr_on_eval
                  << " tpr_eval=" << t.achieved_tpr_on_eval << (t.degenerate ? " degenerate" : "") << "\n";
      }
    } else if (*evaluate || *run) {
      if (*run) {
        p.build_datasets();
        p.build_attacks();
        p.train();
        p.calibrate();
        eo.calibrate_missing = true;
      }
      eo.human_only = !no_human_only;
      eo.force = common.force;
      const auto artifacts = p.evaluate(eo);
      std::cout << (p.out() / "runs" / artifacts.manifest.run_id).string() << "\n";
    }
    return 0;
  } catch (...) {
    std::string message;
    const int code = exit_code_for(std::current_exception(), message);
    std::cerr << "mgtbench: error: " << message << "\n";
    return code;
  }
}
