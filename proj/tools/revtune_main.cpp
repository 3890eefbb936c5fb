#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "revtune/harness.hpp"
#include "revtune/textutil.hpp"

namespace {

struct CliFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string strategy;
    std::string hypotheses_path;
};

void add_common_options(CLI::App* sub, CliFlags& flags) {
    sub->add_option("--config", flags.config_path, "experiment config file (key = value lines)");
    sub->add_option("--seed", flags.seed, "override the experiment seed");
    sub->add_option("--out", flags.out_dir, "override the output directory");
    sub->add_option("--strategy", flags.strategy, "override the layer-selection strategy");
}

revtune::ExperimentConfig build_config(const CLI::App* sub, const CliFlags& flags) {
    revtune::ExperimentConfig config =
        flags.config_path.empty() ? revtune::parse_experiment_config("")
                                  : revtune::load_experiment_config(flags.config_path);
    if (sub->count("--seed") > 0) {
        config.seed = flags.seed;
        config.train.seed = flags.seed;
    }
    if (sub->count("--out") > 0) config.out_dir = flags.out_dir;
    if (sub->count("--strategy") > 0) config.strategy = flags.strategy;
    config.validate();
    return config;
}

revtune::TrainHooks progress_hooks(const revtune::ExperimentConfig& config) {
    revtune::TrainHooks hooks;
    const int every = config.train.log_every;
    hooks.on_stage1_step = [every](int step, double loss) {
        if (every > 0 && (step + 1) % every == 0)
            std::cout << "pre step " << (step + 1) << " loss " << revtune::format_double(loss)
                      << "\n";
    };
    hooks.on_stage2_step = [every](int step, double loss) {
        if (every > 0 && (step + 1) % every == 0)
            std::cout << "gen step " << (step + 1) << " loss " << revtune::format_double(loss)
                      << "\n";
    };
    return hooks;
}

int run_command(const std::string& command, const CLI::App* sub, const CliFlags& flags) {
    const revtune::ExperimentConfig config = build_config(sub, flags);
    nlohmann::json result;
    result["command"] = command;

    if (command == "synth") {
        revtune::cmd_synth(config);
        result["corpus_dir"] = config.corpus_dir;
        result["train_size"] = config.synth_train_size;
        result["val_size"] = config.synth_val_size;
        result["test_size"] = config.synth_test_size;
    } else if (command == "probe") {
        const revtune::TrainHooks hooks = progress_hooks(config);
        const revtune::TrainResult run = revtune::cmd_probe(config, &hooks);
        result["out_dir"] = config.out_dir;
        result["steps"] = run.report.stage1_losses.size();
        result["final_layers"] = run.report.final_split.important;
    } else if (command == "train") {
        const revtune::TrainHooks hooks = progress_hooks(config);
        const revtune::TrainResult run = revtune::cmd_train(config, &hooks);
        result["out_dir"] = config.out_dir;
        result["strategy"] = config.strategy;
        result["final_layers"] = run.report.final_split.important;
        result["trainable_params"] = run.report.stage2_trainable_params;
    } else if (command == "generate") {
        const revtune::TrainHooks hooks = progress_hooks(config);
        const auto records = revtune::cmd_generate(config, &hooks);
        result["out_dir"] = config.out_dir;
        result["strategy"] = config.strategy;
        result["examples"] = records.size();
    } else if (command == "evaluate") {
        const revtune::MetricReport report = revtune::cmd_evaluate(config, flags.hypotheses_path);
        result["out_dir"] = config.out_dir;
        result["sari"] = report.sari;
        result["gleu"] = report.gleu;
        result["update_r"] = report.update_r;
        result["average"] = report.average;
    } else if (command == "compare") {
        const revtune::ComparisonTable table = revtune::cmd_compare(config);
        result["out_dir"] = config.out_dir;
        result["alignment"] = table.alignment;
        result["strategies"] = table.rows.size();
    } else if (command == "heatmap") {
        revtune::cmd_heatmap(config);
        result["out_dir"] = config.out_dir;
    }

    std::cout << result.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-guided layer selection for revision models at desk scale"};
    app.require_subcommand(1);

    CliFlags flags;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "generate the synthetic revision corpus"},
        {"probe", "run the intention-prediction stage and emit layer scores"},
        {"train", "train under the configured strategy and save artifacts"},
        {"generate", "train, then decode hypotheses for the test split"},
        {"evaluate", "score a hypotheses file with SARI, GLEU and Update-R"},
        {"compare", "run every strategy under one seed and tabulate metrics"},
        {"heatmap", "emit per-layer normalized gradient-norm averages"},
    };
    for (const auto& [name, description] : commands) {
        CLI::App* sub = app.add_subcommand(name, description);
        add_common_options(sub, flags);
        if (name == "evaluate")
            sub->add_option("--hypotheses", flags.hypotheses_path, "hypotheses jsonl file")
                ->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        nlohmann::json error;
        error["error"] = e.what();
        std::cerr << error.dump() << "\n";
        return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
    }

    const CLI::App* sub = app.get_subcommands().front();
    try {
        return run_command(sub->get_name(), sub, flags);
    } catch (const std::exception& e) {
        nlohmann::json error;
        error["error"] = e.what();
        std::cerr << error.dump() << "\n";
        return 1;
    }
}
