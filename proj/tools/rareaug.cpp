// Command-line front end: detect, train-gan, augment, evaluate, diagnostics.
//
// Exit status: 0 success, 1 usage or precondition error, 2 data error,
// 3 numerical failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rareaug/rareaug.hpp"

namespace {

using namespace rareaug;

struct DataArgs {
    std::string path;
    std::optional<std::string> target;
    std::optional<std::size_t> target_index;

    JointDataset load() const {
        if (target && target_index) {
            throw PreconditionError("give either --target or --target-index, not both");
        }
        if (target) {
            return load_csv(path, *target);
        }
        if (target_index) {
            return load_csv(path, *target_index);
        }
        throw PreconditionError("a target column is required (--target NAME or --target-index N)");
    }
};

void add_data_options(CLI::App* app, DataArgs& d) {
    app->add_option("--data", d.path, "input CSV with a header row")->required()->check(CLI::ExistingFile);
    app->add_option("--target", d.target, "name of the target column");
    app->add_option("--target-index", d.target_index, "zero-based position of the target column");
}

void add_em_options(CLI::App* app, EmOptions& em) {
    app->add_option("--em-max-iter", em.max_iter, "EM iteration cap")->capture_default_str();
    app->add_option("--em-tol", em.tol, "relative log-likelihood tolerance")->capture_default_str();
    app->add_option("--fallback-quantile", em.fallback_quantile, "quantile of d2 used when no crossing exists")
        ->capture_default_str();
}

void add_gan_options(CLI::App* app, GanConfig& g) {
    app->add_option("--latent-dim", g.latent_dim, "noise dimension q")->capture_default_str();
    app->add_option("--lambda-gp", g.lambda_gp, "gradient penalty weight")->capture_default_str();
    app->add_option("--pool-size", g.pool_size, "synthetic pool size")->capture_default_str();
    app->add_option("--critic-steps", g.critic_steps_per_gen, "critic updates per generator update")
        ->capture_default_str();
    app->add_option("--batch-size", g.batch_size, "minibatch size (0: min(64, minority count))")
        ->capture_default_str();
    app->add_option("--iterations", g.total_gen_iterations, "generator iterations")->capture_default_str();
    app->add_option("--generator-hidden", g.generator_hidden, "generator hidden widths")->capture_default_str();
    app->add_option("--critic-hidden", g.critic_hidden, "critic hidden widths")->capture_default_str();
    app->add_option("--critic-lr", g.critic_adam.learning_rate, "critic Adam learning rate")->capture_default_str();
    app->add_option("--generator-lr", g.generator_adam.learning_rate, "generator Adam learning rate")
        ->capture_default_str();
    app->add_option("--ema-decay", g.generator_ema_decay, "generator weight averaging decay (0: off)")
        ->capture_default_str();
    app->add_flag("--lr-decay", g.linear_lr_decay, "anneal learning rates linearly to zero");
}

void add_match_options(CLI::App* app, MatchConfig& m) {
    app->add_option("--k", m.k, "shortlist size")->capture_default_str();
    app->add_option("--n-pick", m.n_pick, "picks per real minority row")->capture_default_str();
    app->add_flag("--with-replacement", [&m](std::int64_t) { m.without_replacement = false; },
                  "allow one pool row to be picked by several real rows");
    app->add_flag("--fall-through", [&m](std::int64_t) { m.strict_shortlist = false; },
                  "look beyond the shortlist when it is used up");
}

/// Config reader for files written without [section] headers: top-level
/// keys are handed to whichever subcommand was selected.
class SubcommandConfig : public CLI::ConfigTOML {
  public:
    explicit SubcommandConfig(const CLI::App* app) : app_(app) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::vector<CLI::ConfigItem> items = CLI::ConfigTOML::from_config(input);
        const auto subs = app_->get_subcommands();
        if (!subs.empty()) {
            for (auto& item : items) {
                if (item.parents.empty() && item.name != "config") {
                    item.parents = {subs.front()->get_name()};
                }
            }
        }
        return items;
    }

  private:
    const CLI::App* app_;
};

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    return out;
}

void print_detection(const Detection& det, std::ostream& out) {
    const auto& s = det.split;
    out << "threshold T = " << s.threshold << '\n';
    out << "minority rows = " << s.minority_count() << " of " << s.minority_mask.size() << '\n';
    out << "mixture: weight_minority = " << s.weight_minority << ", mu1 = " << s.mu1 << ", var1 = " << s.var1
        << ", mu2 = " << s.mu2 << ", var2 = " << s.var2 << '\n';
    out << "fallback used = " << (s.fallback_used ? "yes" : "no") << ", ridge = " << det.stats.ridge_used << '\n';
}

int run(int argc, char** argv) {
    CLI::App app{"Minority-focused augmentation for imbalanced regression"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key = value file; keys are long option names without dashes");
    app.config_formatter(std::make_shared<SubcommandConfig>(&app));

    // detect
    DataArgs detect_data;
    EmOptions detect_em;
    std::string detect_json;
    auto* detect = app.add_subcommand("detect", "fit the distance mixture and print the threshold");
    add_data_options(detect, detect_data);
    add_em_options(detect, detect_em);
    detect->add_option("--json", detect_json, "also write the fit as JSON");

    // train-gan
    DataArgs train_data;
    PipelineConfig train_cfg;
    std::uint64_t train_seed = 0;
    std::string checkpoint_path, loss_csv;
    auto* train = app.add_subcommand("train-gan", "train the generator on the detected minority rows");
    add_data_options(train, train_data);
    add_em_options(train, train_cfg.em);
    add_gan_options(train, train_cfg.gan);
    train->add_option("--seed", train_seed, "master seed")->capture_default_str();
    train->add_option("--checkpoint", checkpoint_path, "output checkpoint (JSON)")->required();
    train->add_option("--loss-csv", loss_csv, "write the loss history here");

    // augment
    DataArgs aug_data;
    PipelineConfig aug_cfg;
    std::uint64_t aug_seed = 0;
    std::string aug_out, aug_assign, aug_checkpoint;
    auto* aug = app.add_subcommand("augment", "run the full pipeline and write the augmented CSV");
    add_data_options(aug, aug_data);
    add_em_options(aug, aug_cfg.em);
    add_gan_options(aug, aug_cfg.gan);
    add_match_options(aug, aug_cfg.match);
    aug->add_option("--seed", aug_seed, "master seed")->capture_default_str();
    aug->add_option("--out", aug_out, "augmented CSV")->required();
    aug->add_option("--assignments", aug_assign, "write real_index,pool_index,delta here");
    aug->add_option("--checkpoint", aug_checkpoint, "save the trained GAN here");

    // evaluate
    DataArgs eval_data;
    ExperimentConfig eval_cfg;
    std::uint64_t eval_seed = 0;
    std::string eval_report = "eval_report.json", eval_summary, relevance = "both_extremes";
    std::vector<std::string> externals;
    auto* eval = app.add_subcommand("evaluate", "repeated train/test comparison of augmentation methods");
    add_data_options(eval, eval_data);
    add_em_options(eval, eval_cfg.pipeline.em);
    add_gan_options(eval, eval_cfg.pipeline.gan);
    add_match_options(eval, eval_cfg.pipeline.match);
    eval->add_option("--seed", eval_seed, "master seed")->required();
    eval->add_option("--splits", eval_cfg.n_splits, "number of random splits")->capture_default_str();
    eval->add_option("--train-fraction", eval_cfg.train_fraction, "training share of each split")
        ->capture_default_str();
    eval->add_option("--methods", eval_cfg.methods, "none, random_oversample, mahalanobis_gan")
        ->delimiter(',')
        ->capture_default_str();
    eval->add_option("--knn-k", eval_cfg.knn_k, "neighbours of the downstream regressor")->capture_default_str();
    eval->add_option("--ro-ratio", eval_cfg.ro_ratio, "random oversampling growth of the minority")
        ->capture_default_str();
    eval->add_option("--t-r", eval_cfg.thresholds, "relevance thresholds for F_phi1")
        ->delimiter(',')
        ->capture_default_str();
    eval->add_option("--relevance", relevance, "both_extremes, high_only or low_only")->capture_default_str();
    eval->add_option("--external", externals, "NAME=PATH of a split_id,row_id,prediction CSV");
    eval->add_option("--alpha", eval_cfg.alpha, "significance level")->capture_default_str();
    eval->add_option("--threads", eval_cfg.threads, "splits run concurrently")->capture_default_str();
    eval->add_flag("--timings", eval_cfg.record_timings, "record wall-clock times in the report");
    eval->add_option("--report", eval_report, "report JSON")->capture_default_str();
    eval->add_option("--summary", eval_summary, "also write the summary table here");

    // diagnostics
    DataArgs diag_data;
    PipelineConfig diag_cfg;
    std::uint64_t diag_seed = 0;
    std::string diag_dir;
    auto* diag = app.add_subcommand("diagnostics", "run the pipeline once and export plot data");
    add_data_options(diag, diag_data);
    add_em_options(diag, diag_cfg.em);
    add_gan_options(diag, diag_cfg.gan);
    add_match_options(diag, diag_cfg.match);
    diag->add_option("--seed", diag_seed, "master seed")->capture_default_str();
    diag->add_option("--out-dir", diag_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (detect->parsed()) {
        const JointDataset data = detect_data.load();
        Standardizer s;
        const auto [z, det] = standardized_detection(data, s, detect_em);
        print_detection(det, std::cout);
        if (!detect_json.empty()) {
            nlohmann::json j = to_json(det.split);
            j["gaussian"] = to_json(det.stats);
            open_out(detect_json) << j.dump(2) << '\n';
        }
    } else if (train->parsed()) {
        const JointDataset data = train_data.load();
        Standardizer s;
        const auto [z, det] = standardized_detection(data, s, train_cfg.em);
        print_detection(det, std::cout);
        GanConfig g = train_cfg.gan;
        g.seed = derive_seed(train_seed, 1);
        const MatrixXd minority = detail::select_rows(z.rows, det.split.minority_indices());
        const TrainedGan gan = train_gan(minority, g);
        save_checkpoint(gan, checkpoint_path);
        if (!loss_csv.empty()) {
            auto out = open_out(loss_csv);
            write_loss_history_csv(gan, out);
        }
        if (!gan.loss_history.empty()) {
            const auto& last = gan.loss_history.back();
            std::cout << "final critic loss = " << last.critic_loss << ", generator loss = " << last.generator_loss
                      << '\n';
        }
    } else if (aug->parsed()) {
        const JointDataset data = aug_data.load();
        const AugmentArtifacts a = augment(data, aug_cfg, aug_seed);
        print_detection(a.detection, std::cout);
        write_csv(a.augmented, aug_out);
        if (!aug_assign.empty()) {
            auto out = open_out(aug_assign);
            write_assignments_csv(a.match, out);
        }
        if (!aug_checkpoint.empty()) {
            save_checkpoint(a.gan, aug_checkpoint);
        }
        std::cout << "synthetic rows appended = " << a.match.refined_set.rows() << " (unmatched real rows "
                  << a.match.unmatched_real.size() << ")\n";
        std::cout << "augmented rows = " << a.augmented.n() << '\n';
    } else if (eval->parsed()) {
        const JointDataset data = eval_data.load();
        eval_cfg.seed = eval_seed;
        eval_cfg.dataset_label = eval_data.path;
        eval_cfg.relevance_mode = relevance_mode_from_string(relevance);
        for (const auto& e : externals) {
            const auto eq = e.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == e.size()) {
                throw PreconditionError("--external expects NAME=PATH, got '" + e + "'");
            }
            eval_cfg.external_predictions[e.substr(0, eq)] = e.substr(eq + 1);
        }
        const EvalReport report = run_experiment(data, eval_cfg);
        open_out(eval_report) << to_json(report).dump(2) << '\n';
        write_summary(report, std::cout);
        if (!eval_summary.empty()) {
            auto out = open_out(eval_summary);
            write_summary(report, out);
        }
    } else if (diag->parsed()) {
        const JointDataset data = diag_data.load();
        const AugmentArtifacts a = augment(data, diag_cfg, diag_seed);
        export_diagnostics(a, diag_dir);
        print_detection(a.detection, std::cout);
        std::cout << "diagnostics written to " << diag_dir << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const rareaug::PreconditionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const rareaug::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const rareaug::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
