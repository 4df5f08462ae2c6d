// dac: command-line front end for cache building, adapter training,
// text-cache tuning and evaluation over precomputed embedding bundles.
//
// Every subcommand prints one JSON object on stdout; diagnostics go to
// stderr. Exit codes: 0 ok, 2 usage, 3 I/O, 4 invariant, 5 numeric.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "dac/dac.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

/// A bundle with an optional seeded shot subset applied.
dac::EmbeddingBundle load_bundle(const std::string& path, std::size_t shots, std::uint64_t shot_seed)
{
    dac::EmbeddingBundle b = dac::read_bundle(path);
    if (shots > 0)
        b = dac::subsample_shots(b, shots, shot_seed);
    return b;
}

/// Accepts a saved visual cache or a cache-split bundle.
dac::VisualCache load_cache_any(const std::string& path)
{
    if (dac::peek_magic(path) == dac::bundle_magic)
        return dac::build_visual_cache(dac::read_bundle(path));
    return dac::load_visual_cache(path);
}

// Flags shared by the commands that score a classifier.
struct ScoreFlags {
    std::string method = "dac-v";
    std::string text;
    std::string cache;
    std::string adapter;
    std::string tuned_text;
    double beta = dac::default_tip_beta;
    double lo = 0.1;
    double hi = 10.0;
    double step = 0.01;

    void add(CLI::App* cmd, bool grid)
    {
        cmd->add_option("--method", method, "zero-shot | tip | dac-v | dac-vt")->capture_default_str();
        cmd->add_option("--text", text, "text bundle or text cache")->required();
        cmd->add_option("--cache", cache, "visual cache (or cache-split bundle)");
        cmd->add_option("--adapter", adapter, "trained adapter (dac-v, dac-vt)");
        cmd->add_option("--tuned-text", tuned_text, "tuned text cache (dac-vt)");
        cmd->add_option("--beta", beta, "Tip-Adapter sharpness")->capture_default_str();
        if (grid) {
            cmd->add_option("--lo", lo, "alpha grid start")->capture_default_str();
            cmd->add_option("--hi", hi, "alpha grid end")->capture_default_str();
            cmd->add_option("--step", step, "alpha grid step")->capture_default_str();
        }
    }

    dac::AlphaGrid alpha_grid() const { return {lo, hi, step}; }

    dac::Artifacts load(dac::Method m) const
    {
        dac::Artifacts a{dac::load_text_any(text), std::nullopt, std::nullopt, std::nullopt, std::nullopt, beta};
        if (m == dac::Method::zero_shot)
            return a;
        if (cache.empty())
            dac::fail(dac::ErrorKind::usage, std::string(dac::method_name(m)) + " needs --cache");
        a.cache = load_cache_any(cache);
        if (m == dac::Method::tip)
            return a;
        if (adapter.empty())
            dac::fail(dac::ErrorKind::usage, std::string(dac::method_name(m)) + " needs --adapter");
        a.adapter = dac::load_adapter(adapter);
        if (a.adapter->dim() != a.cache->dim())
            dac::fail(dac::ErrorKind::dimension_mismatch, "adapter dim " + std::to_string(a.adapter->dim())
                                                              + " vs cache dim " + std::to_string(a.cache->dim()));
        a.ensure_adapted();
        if (m == dac::Method::dacvt) {
            if (tuned_text.empty())
                dac::fail(dac::ErrorKind::usage, "dac-vt needs --tuned-text");
            a.tuned_text = dac::load_text_any(tuned_text);
        }
        return a;
    }
};

int run_synth(const fs::path& out_dir, const dac::SyntheticSpec& spec)
{
    const auto bench = dac::make_synthetic(spec);
    fs::create_directories(out_dir);
    const json files = {{"text", (out_dir / "text.dactxt").string()},
                        {"train", (out_dir / "train.dacemb").string()},
                        {"cache", (out_dir / "cache.dacemb").string()},
                        {"val", (out_dir / "val.dacemb").string()},
                        {"test", (out_dir / "test.dacemb").string()}};
    dac::write_text_bundle(bench.text, files["text"].get<std::string>());
    dac::write_bundle(bench.train, files["train"].get<std::string>());
    dac::write_bundle(bench.cache, files["cache"].get<std::string>());
    dac::write_bundle(bench.val, files["val"].get<std::string>());
    dac::write_bundle(bench.test, files["test"].get<std::string>());
    emit({{"files", files},
          {"classes", spec.classes},
          {"dim", spec.dim},
          {"shots", spec.shots},
          {"seed", spec.seed}});
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Domain-aligned few-shot adaptation over precomputed CLIP embeddings"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic Gaussian-cluster benchmark");
    std::string synth_dir;
    dac::SyntheticSpec spec;
    synth->add_option("--out-dir", synth_dir, "output directory")->required();
    synth->add_option("--classes", spec.classes)->capture_default_str();
    synth->add_option("--dim", spec.dim)->capture_default_str();
    synth->add_option("--shots", spec.shots)->capture_default_str();
    synth->add_option("--train-views", spec.train_views)->capture_default_str();
    synth->add_option("--cache-views", spec.cache_views)->capture_default_str();
    synth->add_option("--val-per-class", spec.val_per_class)->capture_default_str();
    synth->add_option("--test-per-class", spec.test_per_class)->capture_default_str();
    synth->add_option("--nuisance-dims", spec.nuisance_dims)->capture_default_str();
    synth->add_option("--image-noise", spec.image_noise)->capture_default_str();
    synth->add_option("--nuisance-scale", spec.nuisance_scale)->capture_default_str();
    synth->add_option("--view-noise", spec.view_noise)->capture_default_str();
    synth->add_option("--text-noise", spec.text_noise)->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();

    // build-text
    auto* build_text = app.add_subcommand("build-text", "normalize a text bundle into a text cache");
    std::string bt_bundle, bt_out;
    build_text->add_option("--bundle", bt_bundle, "text bundle")->required();
    build_text->add_option("--out", bt_out, "text cache output")->required();

    // build-cache
    auto* build_cache = app.add_subcommand("build-cache", "build a visual key/value cache");
    std::string bc_bundle, bc_out;
    bool bc_prototype = false;
    std::size_t bc_views = dac::default_cache_views_per_image, bc_shots = 0;
    std::uint64_t bc_shot_seed = 0;
    build_cache->add_option("--bundle", bc_bundle, "cache-split bundle")->required();
    build_cache->add_option("--out", bc_out, "visual cache output")->required();
    build_cache->add_flag("--prototype", bc_prototype, "one averaged key per class");
    build_cache->add_option("--views", bc_views, "views averaged per image")->capture_default_str();
    build_cache->add_option("--shots", bc_shots, "keep this many shots per class (0 = all)")->capture_default_str();
    build_cache->add_option("--shot-seed", bc_shot_seed, "seed of the shot subset")->capture_default_str();

    // train-visual
    auto* train_visual = app.add_subcommand("train-visual", "train the visual adapter");
    std::string tv_train, tv_cache, tv_text, tv_val, tv_out, tv_log, tv_resume, tv_objective = "contrastive";
    std::size_t tv_shots = 0;
    std::uint64_t tv_shot_seed = 0;
    dac::TrainConfig tcfg;
    double tv_lo = 0.1, tv_hi = 10.0, tv_step = 0.01;
    train_visual->add_option("--train", tv_train, "train-split bundle")->required();
    train_visual->add_option("--cache", tv_cache, "visual cache (or cache-split bundle)")->required();
    train_visual->add_option("--text", tv_text, "text bundle or text cache")->required();
    train_visual->add_option("--val", tv_val, "val-split bundle for checkpoint selection");
    train_visual->add_option("--out", tv_out, "adapter output")->required();
    train_visual->add_option("--log", tv_log, "per-epoch training log (JSON)");
    train_visual->add_option("--resume", tv_resume, "continue from a saved adapter");
    train_visual->add_option("--lr", tcfg.lr)->capture_default_str();
    train_visual->add_option("--tau", tcfg.tau)->capture_default_str();
    train_visual->add_option("--epochs", tcfg.epochs)->capture_default_str();
    train_visual->add_option("--views", tcfg.views_per_shot, "views per shot (0 = all)")->capture_default_str();
    train_visual->add_option("--seed", tcfg.seed)->capture_default_str();
    train_visual->add_option("--objective", tv_objective, "contrastive | cross-entropy")->capture_default_str();
    train_visual->add_option("--alpha", tcfg.alpha, "ensemble weight (cross-entropy)")->capture_default_str();
    train_visual->add_flag("--full-batch", tcfg.full_batch, "one step per epoch over every pair");
    train_visual->add_option("--depth", tcfg.depth, "adapter layers (1..4)")->capture_default_str();
    train_visual->add_option("--select-every", tcfg.select_every, "validation cadence")->capture_default_str();
    train_visual->add_option("--shots", tv_shots, "keep this many shots per class (0 = all)")->capture_default_str();
    train_visual->add_option("--shot-seed", tv_shot_seed)->capture_default_str();
    train_visual->add_option("--lo", tv_lo, "alpha grid start")->capture_default_str();
    train_visual->add_option("--hi", tv_hi, "alpha grid end")->capture_default_str();
    train_visual->add_option("--step", tv_step, "alpha grid step")->capture_default_str();

    // train-text
    auto* train_text = app.add_subcommand("train-text", "fine-tune the text cache with the adapter frozen");
    std::string tt_text, tt_cache, tt_adapter, tt_train, tt_out;
    std::size_t tt_shots = 0;
    std::uint64_t tt_shot_seed = 0;
    dac::TextTuneConfig xcfg;
    train_text->add_option("--text", tt_text, "text bundle or text cache")->required();
    train_text->add_option("--cache", tt_cache, "visual cache (or cache-split bundle)")->required();
    train_text->add_option("--adapter", tt_adapter, "trained adapter")->required();
    train_text->add_option("--train", tt_train, "train-split bundle")->required();
    train_text->add_option("--out", tt_out, "tuned text cache output")->required();
    train_text->add_option("--lr", xcfg.lr)->capture_default_str();
    train_text->add_option("--epochs", xcfg.epochs)->capture_default_str();
    train_text->add_option("--views", xcfg.views_per_shot, "views per shot (0 = all)")->capture_default_str();
    train_text->add_option("--seed", xcfg.seed)->capture_default_str();
    train_text->add_flag("--full-batch", xcfg.full_batch);
    train_text->add_option("--shots", tt_shots, "keep this many shots per class (0 = all)")->capture_default_str();
    train_text->add_option("--shot-seed", tt_shot_seed)->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "top-1 accuracy of one classifier");
    ScoreFlags ev;
    std::string ev_test, ev_val, ev_out, ev_csv;
    std::optional<double> ev_alpha;
    ev.add(eval, true);
    eval->add_option("--test", ev_test, "val- or test-split bundle")->required();
    eval->add_option("--val", ev_val, "grid-search alpha on this bundle");
    eval->add_option("--alpha", ev_alpha, "fixed ensemble weight");
    eval->add_option("--out", ev_out, "also write the report here");
    eval->add_option("--csv", ev_csv, "append method,shots,alpha,top1,n_samples");

    // grid-alpha
    auto* grid = app.add_subcommand("grid-alpha", "grid-search the ensemble weight on a validation bundle");
    ScoreFlags gr;
    std::string gr_val;
    gr.add(grid, true);
    grid->add_option("--val", gr_val, "val-split bundle")->required();

    // analyze-flips
    auto* flips = app.add_subcommand("analyze-flips", "flip and inconsistency analysis of an ensemble");
    ScoreFlags fl;
    std::string fl_test, fl_val;
    std::optional<double> fl_alpha;
    fl.add(flips, true);
    flips->add_option("--test", fl_test, "val- or test-split bundle")->required();
    flips->add_option("--val", fl_val, "grid-search alpha on this bundle");
    flips->add_option("--alpha", fl_alpha, "fixed ensemble weight");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(dac::ErrorFamily::usage);
    }

    try {
        if (synth->parsed())
            return run_synth(synth_dir, spec);

        if (build_text->parsed()) {
            const dac::TextCache t = dac::build_text_cache(dac::read_text_bundle(bt_bundle));
            dac::save_text_cache(t, bt_out);
            emit({{"out", bt_out}, {"dim", t.dim()}, {"classes", t.num_classes()}});
            return 0;
        }

        if (build_cache->parsed()) {
            const dac::EmbeddingBundle b = load_bundle(bc_bundle, bc_shots, bc_shot_seed);
            const dac::VisualCache c
                = bc_prototype ? dac::build_prototype_cache(b, bc_views) : dac::build_visual_cache(b, bc_views);
            dac::save_visual_cache(c, bc_out);
            emit({{"out", bc_out},
                  {"dim", c.dim()},
                  {"classes", c.num_classes()},
                  {"shots", c.shots},
                  {"keys", c.num_keys()},
                  {"prototype", c.prototype}});
            return 0;
        }

        if (train_visual->parsed()) {
            tcfg.objective = dac::parse_objective(tv_objective);
            tcfg.alpha_grid = {tv_lo, tv_hi, tv_step};
            tcfg.validate();
            const dac::EmbeddingBundle train = load_bundle(tv_train, tv_shots, tv_shot_seed);
            const dac::VisualCache cache = load_cache_any(tv_cache);
            const dac::TextCache text = dac::load_text_any(tv_text);
            std::optional<dac::EmbeddingBundle> val;
            if (!tv_val.empty())
                val = dac::read_bundle(tv_val);
            std::optional<dac::Adapter> resume;
            if (!tv_resume.empty())
                resume = dac::load_adapter(tv_resume);
            std::cerr << "training " << tcfg.epochs << " epochs on " << train.records.size() << " views\n";
            const dac::TrainResult r = dac::train_visual_adapter(train, tcfg, val ? &*val : nullptr, cache, text,
                                                                 resume ? &*resume : nullptr);
            dac::save_adapter(r.adapter, tv_out);
            if (!tv_log.empty())
                dac::write_json(tv_log, to_json(r.log));
            json out = {{"out", tv_out},
                        {"epochs_run", r.log.epochs.size()},
                        {"selected_epoch", r.log.selected_epoch},
                        {"first_loss", r.log.epochs.front().mean_loss},
                        {"last_loss", r.log.epochs.back().mean_loss},
                        {"pair_terms_per_class", r.log.epochs.back().pair_terms_per_class}};
            if (r.log.selected_alpha)
                out["selected_alpha"] = *r.log.selected_alpha;
            if (r.log.selected_val_accuracy)
                out["selected_val_accuracy"] = *r.log.selected_val_accuracy;
            emit(out);
            return 0;
        }

        if (train_text->parsed()) {
            const dac::TextCache text = dac::load_text_any(tt_text);
            const dac::VisualCache cache = load_cache_any(tt_cache);
            const dac::Adapter adapter = dac::load_adapter(tt_adapter);
            const dac::EmbeddingBundle train = load_bundle(tt_train, tt_shots, tt_shot_seed);
            const dac::TextTuneResult r
                = dac::tune_text_cache(text, dac::adapt_cache(cache, adapter), adapter, train, xcfg);
            dac::save_text_cache(r.text, tt_out);
            emit({{"out", tt_out},
                  {"epochs_run", r.epoch_loss.size()},
                  {"first_loss", r.epoch_loss.front()},
                  {"last_loss", r.epoch_loss.back()}});
            return 0;
        }

        if (eval->parsed()) {
            const dac::EmbeddingBundle test = dac::read_bundle(ev_test);
            dac::EvalReport report;
            std::optional<std::size_t> shots;
            if (ev.method == "intra-clip" || ev.method == "intra-dac") {
                if (ev.cache.empty())
                    dac::fail(dac::ErrorKind::usage, ev.method + " needs --cache");
                const dac::VisualCache cache = load_cache_any(ev.cache);
                shots = cache.shots;
                std::optional<dac::Adapter> adapter;
                if (ev.method == "intra-dac") {
                    if (ev.adapter.empty())
                        dac::fail(dac::ErrorKind::usage, "intra-dac needs --adapter");
                    adapter = dac::load_adapter(ev.adapter);
                }
                report = dac::intra_modal_accuracy(cache, test, adapter ? &*adapter : nullptr, ev.beta);
            } else {
                const dac::Method m = dac::parse_method(ev.method);
                const dac::Artifacts art = ev.load(m);
                if (art.cache)
                    shots = art.cache->shots;
                if (ev_alpha) {
                    report = dac::evaluate(m, test, art, *ev_alpha);
                } else {
                    std::optional<dac::EmbeddingBundle> val;
                    if (!ev_val.empty())
                        val = dac::read_bundle(ev_val);
                    report = dac::evaluate_with_selection(m, test, val ? &*val : nullptr, art, ev.alpha_grid());
                }
            }
            for (const auto& w : report.warnings)
                std::cerr << "warning: " << w << '\n';
            const json j = to_json(report);
            if (!ev_out.empty())
                dac::write_json(ev_out, j);
            if (!ev_csv.empty()) {
                const bool fresh = !fs::exists(ev_csv);
                std::ofstream csv(ev_csv, std::ios::app);
                if (!csv)
                    dac::fail(dac::ErrorKind::io_error, "cannot open " + ev_csv);
                if (fresh)
                    csv << "method,shots,alpha,top1,n_samples\n";
                csv << report.method << ',' << (shots ? std::to_string(*shots) : std::string()) << ','
                    << json(report.alpha_used).dump() << ',' << json(report.top1).dump() << ',' << report.n_samples
                    << '\n';
            }
            emit(j);
            return 0;
        }

        if (grid->parsed()) {
            const dac::Method m = dac::parse_method(gr.method);
            const dac::EmbeddingBundle val = dac::read_bundle(gr_val);
            const dac::AlphaGrid g = gr.alpha_grid();
            const dac::AlphaSearch s = dac::grid_search_alpha(m, val, gr.load(m), g);
            emit({{"method", dac::method_name(m)}, {"alpha", s.alpha}, {"accuracy", s.accuracy}, {"points", g.points()}});
            return 0;
        }

        if (flips->parsed()) {
            const dac::Method m = dac::parse_method(fl.method);
            if (m == dac::Method::zero_shot)
                dac::fail(dac::ErrorKind::usage, "flip analysis needs an ensemble method");
            const dac::Artifacts art = fl.load(m);
            const dac::EmbeddingBundle test = dac::read_bundle(fl_test);
            double alpha = 1.0;
            if (fl_alpha)
                alpha = *fl_alpha;
            else if (!fl_val.empty())
                alpha = dac::grid_search_alpha(m, dac::read_bundle(fl_val), art, fl.alpha_grid()).alpha;
            else
                std::cerr << "warning: no --alpha or --val; alpha defaulted to 1.0\n";
            json j = to_json(dac::flip_analysis(dac::bundle_logits(m, art, test), alpha));
            j["method"] = dac::method_name(m);
            j["alpha"] = alpha;
            emit(j);
            return 0;
        }
    } catch (const dac::Error& e) {
        std::cerr << "dac: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "dac: IoError: " << e.what() << '\n';
        return static_cast<int>(dac::ErrorFamily::io);
    }
    return 0;
}
