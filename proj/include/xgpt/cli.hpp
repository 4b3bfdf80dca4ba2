#pragma once

// Command-line front end.  run_cli() is the whole program so tests can drive
// subcommands in-process.  Exit codes: 0 success, 1 any error, 2 a gradient
// check that ran to completion and failed tolerance.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "xgpt/config_file.hpp"
#include "xgpt/data_synth.hpp"
#include "xgpt/decoding.hpp"
#include "xgpt/diagnostics.hpp"
#include "xgpt/metrics.hpp"
#include "xgpt/training.hpp"

namespace xgpt {

namespace cli_detail {

inline std::size_t default_threads() {
    if (const char* env = std::getenv("XGPT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        throw std::runtime_error(std::string("XGPT_THREADS is not a positive integer: '") + env +
                                 "'");
    }
    return 1;
}

inline std::string format4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline void apply_overrides(Config& cfg, const std::vector<std::string>& sets) {
    for (const std::string& kv : sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        }
        cfg.override_value(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

inline ModelConfig model_config_from(Config& cfg, std::size_t vocab_size, std::size_t d_feat) {
    ModelConfig mc;
    mc.layers = cfg.get_size("layers", 2);
    mc.width = cfg.get_size("width", 64);
    mc.heads = cfg.get_size("heads", 8);
    mc.vocab = vocab_size;
    mc.d_feat = d_feat;
    mc.max_positions = cfg.get_size("max_positions", 128);
    mc.max_regions = cfg.get_size("max_regions", kMaxRegions);
    mc.dropout = cfg.get_double("dropout", 0.1);
    mc.share = cfg.get_bool("share", true);
    mc.validate();
    return mc;
}

struct StageDefaults {
    LossWeights weights;
    LRSchedule schedule;
};

inline StageDefaults stage_defaults(const std::string& mode) {
    if (mode == "out-domain") {
        return {LossWeights::uniform(), LRSchedule{1e-4, 2e-5, 500}};
    }
    if (mode == "in-domain") {
        return {LossWeights::captioning_weighted(), LRSchedule::constant(1e-5)};
    }
    if (mode == "finetune") {
        return {LossWeights{1.0, 0.0, 0.0, 0.0}, LRSchedule::constant(1e-5)};
    }
    throw std::runtime_error("unknown training mode '" + mode + "'");
}

inline std::size_t feature_dim_of(const std::vector<std::pair<std::string, RegionSet>>& records,
                                  const std::string& path) {
    if (records.empty()) throw std::runtime_error(path + ": no records");
    return records.front().second.d_feat;
}

// Shared driver behind pretrain and finetune.
inline int run_training(const std::string& mode, const std::string& config_path,
                        const std::vector<std::string>& sets, const std::string& data_dir,
                        const std::string& out_dir, const std::string& init_ckpt) {
    Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
    apply_overrides(cfg, sets);

    const Vocabulary vocab = Vocabulary::load(data_dir + "/vocab.txt");
    const Dataset train =
        load_dataset(data_dir + "/train.features.bin", data_dir + "/train.captions.tsv", vocab);
    const Dataset val =
        load_dataset(data_dir + "/val.features.bin", data_dir + "/val.captions.tsv", vocab);

    const ModelConfig mc = model_config_from(cfg, static_cast<std::size_t>(vocab.size()),
                                             train.front().regions.d_feat);
    const StageDefaults defaults = stage_defaults(mode);

    StagePlan plan;
    plan.name = mode;
    plan.seed = cfg.get_u64("seed", 1);
    plan.iterations = cfg.get_size("iterations", 500);
    plan.batch_size = cfg.get_size("batch_size", 8);
    plan.val_interval = cfg.get_size("val_interval", 50);
    plan.checkpoint_interval = cfg.get_size("checkpoint_interval", 0);
    plan.ida_single_mask = cfg.get_bool("ida_single_mask", true);
    plan.weights.ic = cfg.get_double("lambda_ic", defaults.weights.ic);
    plan.weights.imlm = cfg.get_double("lambda_imlm", defaults.weights.imlm);
    plan.weights.ida = cfg.get_double("lambda_ida", defaults.weights.ida);
    plan.weights.tifg = cfg.get_double("lambda_tifg", defaults.weights.tifg);
    plan.schedule.peak = cfg.get_double("peak_lr", defaults.schedule.peak);
    plan.schedule.floor_lr = cfg.get_double("floor_lr", defaults.schedule.floor_lr);
    plan.schedule.warmup = cfg.get_size("warmup", defaults.schedule.warmup);
    cfg.reject_unknown_keys();

    Model<float> model(mc);
    model.init(plan.seed);
    if (!init_ckpt.empty()) load_into(model.params(), read_checkpoint(init_ckpt));

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream resolved(out_dir + "/config.resolved");
        if (!resolved) throw std::runtime_error("cannot write " + out_dir + "/config.resolved");
        resolved << cfg.resolved();
    }

    const StageResult result = run_stage(model, train, val, vocab, plan, out_dir);
    const double final_loss = evaluate_ic_loss(model, val);
    const double final_match = exact_match_rate(model, val);
    std::cout << mode << " done: iterations=" << plan.iterations
              << " val_loss=" << format4(final_loss) << " exact_match=" << format4(final_match)
              << "\nfinal checkpoint: " << result.final_checkpoint << "\n";
    return 0;
}

inline int run_gen_data(const std::string& out_dir, std::size_t train_count, std::size_t val_count,
                        std::uint64_t seed) {
    if (train_count == 0 || val_count == 0) {
        throw std::runtime_error("gen-data: train and val counts must be positive");
    }
    std::filesystem::create_directories(out_dir);
    const Vocabulary vocab = build_scene_vocabulary();
    vocab.save(out_dir + "/vocab.txt");

    auto emit = [&](const std::string& split, std::uint64_t first_uid, std::size_t count) {
        std::vector<std::pair<std::string, RegionSet>> features;
        std::vector<std::pair<std::string, std::string>> captions;
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t uid = first_uid + i;
            const Scene scene = synth_scene(seed, uid);
            features.emplace_back(image_id_for(uid), scene_regions(scene));
            captions.emplace_back(image_id_for(uid), scene_caption(scene));
        }
        write_features(out_dir + "/" + split + ".features.bin", features);
        write_captions_tsv(out_dir + "/" + split + ".captions.tsv", captions);
    };
    emit("train", 0, train_count);
    emit("val", train_count, val_count);
    std::cout << "wrote " << train_count << " train and " << val_count << " val scenes to "
              << out_dir << "\n";
    return 0;
}

inline int run_caption(const std::string& config_path, const std::vector<std::string>& sets,
                       const std::string& ckpt_path, const std::string& features_path,
                       const std::string& vocab_path, const std::string& out_path,
                       std::size_t beam, std::size_t threads, std::size_t max_len) {
    Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
    apply_overrides(cfg, sets);

    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const auto records = read_features(features_path);
    const ModelConfig mc = model_config_from(cfg, static_cast<std::size_t>(vocab.size()),
                                             feature_dim_of(records, features_path));
    cfg.reject_unknown_keys();

    Model<float> model(mc);
    model.init(1);
    load_into(model.params(), read_checkpoint(ckpt_path));

    std::vector<std::string> outputs(records.size());
    auto decode_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Hypothesis hyp = caption_regions(model, records[i].second, beam, max_len);
            outputs[i] = vocab.decode(hyp.tokens);
        }
    };
    if (threads <= 1 || records.size() <= 1) {
        decode_range(0, records.size());
    } else {
        const std::size_t workers = std::min(threads, records.size());
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = records.size() * w / workers;
            const std::size_t end = records.size() * (w + 1) / workers;
            pool.emplace_back([&decode_range, begin, end] { decode_range(begin, end); });
        }
        for (std::thread& t : pool) t.join();
    }

    std::vector<std::pair<std::string, std::string>> rows;
    rows.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        rows.emplace_back(records[i].first, outputs[i]);
    }
    write_captions_tsv(out_path, rows);
    std::cout << "captioned " << records.size() << " images -> " << out_path << "\n";
    return 0;
}

inline int run_eval(const std::string& hyp_path, const std::string& ref_path,
                    const std::string& out_path) {
    const auto hyp_rows = read_captions_tsv(hyp_path);
    const auto ref_rows = read_captions_tsv(ref_path);
    std::map<std::string, std::vector<std::vector<std::string>>> refs_by_id;
    for (const auto& [id, caption] : ref_rows) {
        refs_by_id[id].push_back(tokenize_caption(caption));
    }
    std::vector<CaptionEval> corpus;
    for (const auto& [id, caption] : hyp_rows) {
        auto it = refs_by_id.find(id);
        if (it == refs_by_id.end()) {
            throw std::runtime_error(ref_path + ": no reference for image '" + id + "'");
        }
        corpus.push_back(CaptionEval{id, tokenize_caption(caption), it->second});
    }
    if (corpus.empty()) throw std::runtime_error(hyp_path + ": no hypotheses");

    std::string report;
    report += "bleu4\t" + format4(bleu4(corpus)) + "\n";
    report += "cider\t" + format4(cider(corpus)) + "\n";
    std::cout << report;
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write " + out_path);
        out << report;
    }
    return 0;
}

inline int run_gradcheck(std::uint64_t seed, double tol, double step) {
    const SuiteReport report = run_gradient_suite(seed, tol, step);
    for (const SuiteCase& c : report.cases) {
        std::printf("%-16s loss=%-12.6f max_rel_err=%-12.3e worst=%s\n", c.objective.c_str(),
                    c.loss, c.max_rel_err, c.worst_parameter.c_str());
    }
    std::printf("suite %s (tolerance %.1e)\n", report.ok() ? "passed" : "FAILED", report.tolerance);
    return report.ok() ? 0 : 2;
}

inline int run_avg_ckpt(const std::string& index_path, std::size_t k, const std::string& out_path) {
    std::ifstream in(index_path);
    if (!in) throw std::runtime_error("cannot open " + index_path);
    std::vector<std::string> files;
    std::vector<double> scores;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string file, step, loss;
        if (!std::getline(row, file, '\t') || !std::getline(row, step, '\t') ||
            !std::getline(row, loss, '\t')) {
            throw std::runtime_error(index_path + ":" + std::to_string(line_no) +
                                     ": expected file<TAB>step<TAB>val_loss");
        }
        files.push_back(file);
        try {
            scores.push_back(std::stod(loss));
        } catch (const std::exception&) {
            throw std::runtime_error(index_path + ":" + std::to_string(line_no) +
                                     ": bad loss value '" + loss + "'");
        }
    }
    if (files.empty()) throw std::runtime_error(index_path + ": no checkpoint rows");

    const auto chosen = select_top_k(scores, std::min(k, files.size()));
    const std::string base = std::filesystem::path(index_path).parent_path().string();
    std::vector<CheckpointData> inputs;
    for (std::size_t idx : chosen) {
        std::filesystem::path p(files[idx]);
        const std::string full = p.is_absolute() || base.empty() ? p.string()
                                                                 : base + "/" + p.string();
        std::cout << "averaging " << files[idx] << " (val_loss " << format4(scores[idx]) << ")\n";
        inputs.push_back(read_checkpoint(full));
    }
    write_checkpoint(out_path, average_checkpoints(inputs));
    std::cout << "wrote mean of " << inputs.size() << " checkpoints -> " << out_path << "\n";
    return 0;
}

} // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"shared-parameter encoder-decoder captioner"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene corpus");
    std::string gen_out;
    std::size_t gen_train = 512, gen_val = 64;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--train", gen_train, "training scene count");
    gen->add_option("--val", gen_val, "validation scene count");
    gen->add_option("--seed", gen_seed, "generator seed");

    // pretrain / finetune
    std::string tr_config, tr_data, tr_out, tr_init, tr_stage = "out-domain";
    std::vector<std::string> tr_sets;
    auto* pre = app.add_subcommand("pretrain", "multi-task pre-training stage");
    pre->add_option("--config", tr_config, "key = value config file");
    pre->add_option("--data", tr_data, "corpus directory from gen-data")->required();
    pre->add_option("--out", tr_out, "run directory")->required();
    pre->add_option("--init-ckpt", tr_init, "checkpoint to start from");
    pre->add_option("--stage", tr_stage, "out-domain or in-domain")
        ->check(CLI::IsMember({"out-domain", "in-domain"}));
    pre->add_option("--set", tr_sets, "config override key=value");

    auto* fin = app.add_subcommand("finetune", "caption-only fine-tuning");
    fin->add_option("--config", tr_config, "key = value config file");
    fin->add_option("--data", tr_data, "corpus directory from gen-data")->required();
    fin->add_option("--out", tr_out, "run directory")->required();
    fin->add_option("--init-ckpt", tr_init, "checkpoint to start from");
    fin->add_option("--set", tr_sets, "config override key=value");

    // caption
    std::string cap_config, cap_ckpt, cap_features, cap_vocab, cap_out;
    std::vector<std::string> cap_sets;
    std::size_t cap_beam = 1, cap_threads = 0, cap_max_len = kMaxSequenceLen;
    auto* cap = app.add_subcommand("caption", "decode captions for a feature file");
    cap->add_option("--config", cap_config, "key = value config file");
    cap->add_option("--ckpt", cap_ckpt, "model checkpoint")->required();
    cap->add_option("--features", cap_features, "region feature file")->required();
    cap->add_option("--vocab", cap_vocab, "vocabulary file")->required();
    cap->add_option("--out", cap_out, "output caption TSV")->required();
    cap->add_option("--beam", cap_beam, "beam width (1 = greedy)");
    cap->add_option("--threads", cap_threads, "decoding threads (default $XGPT_THREADS or 1)");
    cap->add_option("--max-len", cap_max_len, "decoding length cap");
    cap->add_option("--set", cap_sets, "config override key=value");

    // eval
    std::string ev_hyp, ev_ref, ev_out;
    auto* ev = app.add_subcommand("eval", "score hypothesis captions against references");
    ev->add_option("--hyp", ev_hyp, "hypothesis TSV (image_id<TAB>caption)")->required();
    ev->add_option("--ref", ev_ref, "reference TSV, ids may repeat")->required();
    ev->add_option("--out", ev_out, "also write the metric report here");

    // gradcheck
    std::uint64_t gc_seed = 7;
    double gc_tol = 1e-4, gc_step = 1e-5;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--seed", gc_seed, "suite seed");
    gc->add_option("--tol", gc_tol, "max relative error tolerance");
    gc->add_option("--step", gc_step, "finite-difference step");

    // avg-ckpt
    std::string avg_index, avg_out;
    std::size_t avg_k = 4;
    auto* avg = app.add_subcommand("avg-ckpt", "average the best checkpoints of a run");
    avg->add_option("--index", avg_index, "checkpoints.tsv from a training run")->required();
    avg->add_option("--k", avg_k, "how many lowest-loss checkpoints to average");
    avg->add_option("--out", avg_out, "averaged checkpoint path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cli_detail::run_gen_data(gen_out, gen_train, gen_val, gen_seed);
        if (pre->parsed()) {
            return cli_detail::run_training(tr_stage, tr_config, tr_sets, tr_data, tr_out, tr_init);
        }
        if (fin->parsed()) {
            return cli_detail::run_training("finetune", tr_config, tr_sets, tr_data, tr_out,
                                            tr_init);
        }
        if (cap->parsed()) {
            const std::size_t threads =
                cap_threads == 0 ? cli_detail::default_threads() : cap_threads;
            return cli_detail::run_caption(cap_config, cap_sets, cap_ckpt, cap_features, cap_vocab,
                                           cap_out, cap_beam, threads, cap_max_len);
        }
        if (ev->parsed()) return cli_detail::run_eval(ev_hyp, ev_ref, ev_out);
        if (gc->parsed()) return cli_detail::run_gradcheck(gc_seed, gc_tol, gc_step);
        if (avg->parsed()) return cli_detail::run_avg_ckpt(avg_index, avg_k, avg_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}

} // namespace xgpt
