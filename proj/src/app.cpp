#include "rlpipe/app.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>

#include "rlpipe/checkpoint.hpp"
#include "rlpipe/dataset_io.hpp"
#include "rlpipe/errors.hpp"
#include "rlpipe/filters.hpp"
#include "rlpipe/gradcheck.hpp"
#include "rlpipe/hash.hpp"
#include "rlpipe/sampling.hpp"

namespace rlpipe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

PipelinePaths PipelinePaths::under(const std::string& root) {
    PipelinePaths p;
    p.root = root;
    p.sft_questions = root + "/questions/train.jsonl";
    p.rl_questions = root + "/questions/rl.jsonl";
    p.eval_questions = root + "/questions/eval.jsonl";
    p.sft_dir = root + "/sft";
    p.infer_answers = root + "/infer/answers.jsonl";
    p.verified_answers = root + "/verify/verified.jsonl";
    p.dataset = root + "/filter/dataset.jsonl";
    p.rl_dir = root + "/rl";
    p.report_sft = root + "/eval/report-sft.json";
    p.report_rl = root + "/eval/report-rl.json";
    p.compare_txt = root + "/compare.txt";
    return p;
}

namespace {

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) {
        fs::create_directories(parent);
    }
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) {
        raise(ErrorClass::config, "cannot write file: " + path);
    }
    out << text;
}

} // namespace

void do_gen_tasks(const RunConfig& cfg, const PipelinePaths& paths) {
    const int total = cfg.sft_count + cfg.rl_count + cfg.eval_count;
    const uint64_t seed = cfg.seed_for("questions");
    // One generator call, then a three-way split: the splits can never share
    // an operand multiset, which is exactly what the contamination guard
    // checks at evaluation time.
    const std::vector<tasks::Question> all = tasks::gen_questions(
        total, cfg.difficulty_min, cfg.difficulty_max, seed, cfg.operands);

    auto write_slice = [&](const std::string& path, const char* kind, int lo, int hi) {
        std::vector<tasks::Question> slice(all.begin() + lo, all.begin() + hi);
        json header;
        header["kind"] = kind;
        header["config_hash"] = cfg.config_hash;
        header["seed"] = seed;
        header["operands"] = cfg.operands;
        header["difficulty_min"] = cfg.difficulty_min;
        header["difficulty_max"] = cfg.difficulty_max;
        ensure_parent_dir(path);
        data::write_questions(path, slice, header);
    };
    write_slice(paths.sft_questions, "train", 0, cfg.sft_count);
    write_slice(paths.rl_questions, "rl", cfg.sft_count, cfg.sft_count + cfg.rl_count);
    write_slice(paths.eval_questions, "eval", cfg.sft_count + cfg.rl_count, total);
    std::printf("gen-tasks: %d train, %d rl, %d eval questions under %s\n", cfg.sft_count,
                cfg.rl_count, cfg.eval_count, paths.root.c_str());
}

train::TrainResult do_sft(const RunConfig& cfg, const std::string& questions_path,
                          const std::string& out_dir, const std::string& resume) {
    const data::QuestionsFile qf = data::load_questions(questions_path);
    std::vector<train::GoldSample> gold;
    gold.reserve(qf.questions.size());
    for (const auto& q : qf.questions) {
        gold.push_back({q.id, q.prompt, tasks::gen_gold_answer(q)});
    }
    model::ModelState m = model::ModelState::init(cfg.arch, cfg.seed_for("model-init"),
                                                  cfg.precision);
    train::SftConfig sc = cfg.sft;
    sc.out_dir = out_dir;
    sc.resume_from = resume;
    sc.shuffle_seed = cfg.seed_for("sft-shuffle");
    sc.workers = cfg.workers;
    return train_sft(m, gold, sc);
}

void do_infer(const RunConfig& cfg, const std::string& checkpoint,
              const std::string& questions_path, int k, const std::string& out,
              int workers) {
    if (k < 2) {
        raise(ErrorClass::config, "infer needs k >= 2 (the variance filter needs spread)");
    }
    const model::Checkpoint ck = model::load_checkpoint(checkpoint, &cfg.arch);
    const data::QuestionsFile qf = data::load_questions(questions_path);

    data::AnswersHeader header;
    header.config_hash = cfg.config_hash;
    header.checkpoint_id = ck.checkpoint_id;
    header.questions_digest = qf.digest;
    header.k = k;
    header.decode = cfg.effective.at("decode");
    header.verified = false;

    // A finished output with matching provenance short-circuits recompute;
    // the partial file resumes interrupted runs at question granularity.
    std::vector<data::QuestionGroup> reuse;
    if (fs::exists(out)) {
        const data::AnswersFile existing = data::load_answers(out);
        if (existing.header.compatible(header)) {
            reuse = existing.groups;
        } else {
            raise(ErrorClass::provenance,
                  "existing output " + out + " came from different inputs");
        }
    }

    data::CollectConfig cc;
    cc.k = k;
    cc.decode = cfg.decode;
    cc.base_seed = cfg.seed_for("infer");
    cc.workers = workers;
    cc.partial_path = out + ".partial";
    cc.header = header;
    ensure_parent_dir(out);
    const std::vector<data::QuestionGroup> groups =
        data::collect_answers(ck.model, qf.questions, cc, reuse);
    data::write_answers(out, groups, header);
    fs::remove(cc.partial_path);
    std::printf("infer: %zu groups x %d answers -> %s\n", groups.size(), k, out.c_str());
}

void do_verify(const std::string& in, const std::string& questions_path,
               const std::string& out) {
    data::AnswersFile af = data::load_answers(in);
    const data::QuestionsFile qf = data::load_questions(questions_path);
    if (af.header.questions_digest != qf.digest) {
        raise(ErrorClass::provenance,
              "answers were inferred against a different question file");
    }
    const auto table = data::question_table(qf.questions);
    data::assign_rewards(af.groups, table);
    af.header.verified = true;
    ensure_parent_dir(out);
    data::write_answers(out, af.groups, af.header);
    int correct = 0, total = 0;
    for (const auto& g : af.groups) {
        correct += g.num_correct;
        total += static_cast<int>(g.records.size());
    }
    std::printf("verify: %d/%d answers correct -> %s\n", correct, total, out.c_str());
}

void do_filter(const std::string& in, const data::FilterParams& params,
               const std::string& out) {
    // Peek at the schema: verified answers get the full filter chain; an
    // already-built dataset re-applies the sample-level filter only (group
    // structure is consumed by flattening).
    std::ifstream probe(in, std::ios::binary);
    if (!probe.is_open()) {
        raise(ErrorClass::config, "cannot open file: " + in);
    }
    std::string first_line;
    std::getline(probe, first_line);
    probe.close();
    json header = json::parse(first_line, nullptr, false);
    const std::string schema = header.is_discarded() ? "" : header.value("schema", "");

    ensure_parent_dir(out);
    if (schema == "rlpipe.answers/1") {
        const data::AnswersFile af = data::load_answers(in);
        if (!af.header.verified) {
            raise(ErrorClass::provenance, "filter needs verified answers (run verify first)");
        }
        data::Provenance prov;
        prov.config_hash = af.header.config_hash;
        prov.checkpoint_id = af.header.checkpoint_id;
        prov.questions_digest = af.header.questions_digest;
        prov.k = af.header.k;
        const data::RlDataset ds = data::build_dataset(af.groups, params, prov);
        data::write_dataset(out, ds);
        std::printf("filter: %d samples (%d positive, %d negative) -> %s\n", ds.counts.total,
                    ds.counts.positive, ds.counts.negative, out.c_str());
        return;
    }
    if (schema == "rlpipe.dataset/1") {
        data::RlDataset ds = data::load_dataset_raw(in);
        if (params.min_mean_length != ds.filter_params.min_mean_length) {
            raise(ErrorClass::config,
                  "cannot re-apply the group-level difficulty filter to a flattened dataset");
        }
        ds.samples = data::filter_length_bias(ds.samples, params.max_positive_length);
        if (ds.samples.empty()) {
            raise(ErrorClass::empty_dataset, "all samples were filtered out");
        }
        ds.filter_params = params;
        ds.counts = {};
        for (const auto& s : ds.samples) {
            ds.counts.total += 1;
            (s.reward == 1 ? ds.counts.positive : ds.counts.negative) += 1;
        }
        data::write_dataset(out, ds);
        std::printf("filter: %d samples (%d positive, %d negative) -> %s\n", ds.counts.total,
                    ds.counts.positive, ds.counts.negative, out.c_str());
        return;
    }
    raise(ErrorClass::config, "filter input must be verified answers or a dataset file");
}

train::TrainResult do_rl_train(const RunConfig& cfg, const std::string& dataset_path,
                               const std::string& questions_path,
                               const std::string& init_checkpoint,
                               const std::string& out_dir, const std::string& resume) {
    const data::QuestionsFile qf = data::load_questions(questions_path);
    const auto table = data::question_table(qf.questions);
    const data::RlDataset ds = data::load_dataset(dataset_path, table);
    if (ds.provenance.questions_digest != qf.digest) {
        raise(ErrorClass::provenance,
              "dataset was built against a different question file");
    }
    model::Checkpoint ck = model::load_checkpoint(init_checkpoint, &cfg.arch);
    if (!ds.provenance.checkpoint_id.empty() &&
        ds.provenance.checkpoint_id != ck.checkpoint_id) {
        raise(ErrorClass::provenance,
              "dataset answers came from a different checkpoint than the RL init model");
    }
    train::RlConfig rc = cfg.rl;
    rc.out_dir = out_dir;
    rc.resume_from = resume;
    rc.shuffle_seed = cfg.seed_for("rl-shuffle");
    rc.workers = cfg.workers;
    model::ModelState m = std::move(ck.model);
    return train_rl(m, ds, rc);
}

eval::EvalReport do_eval(const RunConfig& cfg, const std::string& checkpoint,
                         const std::string& questions_path, int n, const std::string& out,
                         const std::vector<std::string>& train_question_paths, int workers) {
    const model::Checkpoint ck = model::load_checkpoint(checkpoint, &cfg.arch);
    const data::QuestionsFile qf = data::load_questions(questions_path);
    std::vector<tasks::Question> guard;
    for (const auto& path : train_question_paths) {
        const data::QuestionsFile tf = data::load_questions(path);
        guard.insert(guard.end(), tf.questions.begin(), tf.questions.end());
    }

    eval::EvalConfig ec;
    ec.n_samples = n;
    ec.decode = cfg.decode;
    ec.base_seed = cfg.seed_for("eval");
    ec.bucket_edges = cfg.bucket_edges;
    ec.workers = workers;
    ec.partial_path = out + ".partial";
    ec.header.config_hash = cfg.config_hash;
    ec.header.checkpoint_id = ck.checkpoint_id;
    ec.header.questions_digest = qf.digest;
    ec.header.k = n;
    ec.header.decode = cfg.effective.at("decode");
    ec.header.verified = false;

    ensure_parent_dir(out);
    const eval::EvalReport report = eval::evaluate(ck.model, qf.questions, guard, ec);
    write_text(out, report.to_json().dump(2) + "\n");
    fs::remove(ec.partial_path);
    std::printf("eval: pass@1 %.4f avg len %.1f -> %s\n", report.pass_at_1,
                report.avg_response_length, out.c_str());
    return report;
}

std::string do_compare(const std::string& before, const std::string& after) {
    auto load = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in.is_open()) {
            raise(ErrorClass::config, "cannot open report: " + path);
        }
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) {
            raise(ErrorClass::config, "malformed report: " + path);
        }
        return eval::EvalReport::from_json(j);
    };
    const eval::EvalReport a = load(before);
    const eval::EvalReport b = load(after);
    const eval::ReportDelta delta = eval::compare_reports(a, b);
    return delta.render_text();
}

void do_pipeline(const RunConfig& cfg, const PipelinePaths& paths) {
    std::printf("== pipeline: %s (config %s) ==\n", paths.root.c_str(),
                cfg.config_hash.c_str());
    do_gen_tasks(cfg, paths);

    std::printf("-- sft --\n");
    const train::TrainResult sft_result =
        do_sft(cfg, paths.sft_questions, paths.sft_dir, "");

    std::printf("-- infer --\n");
    do_infer(cfg, sft_result.final_checkpoint, paths.rl_questions, cfg.k,
             paths.infer_answers, cfg.workers);

    std::printf("-- verify --\n");
    do_verify(paths.infer_answers, paths.rl_questions, paths.verified_answers);

    std::printf("-- filter --\n");
    do_filter(paths.verified_answers, cfg.filters, paths.dataset);

    std::printf("-- rl-train --\n");
    const train::TrainResult rl_result =
        do_rl_train(cfg, paths.dataset, paths.rl_questions, sft_result.final_checkpoint,
                    paths.rl_dir, "");

    std::printf("-- eval (sft) --\n");
    do_eval(cfg, sft_result.final_checkpoint, paths.eval_questions, cfg.eval_n,
            paths.report_sft, {paths.sft_questions, paths.rl_questions}, cfg.workers);

    std::printf("-- eval (rl) --\n");
    do_eval(cfg, rl_result.final_checkpoint, paths.eval_questions, cfg.eval_n,
            paths.report_rl, {paths.sft_questions, paths.rl_questions}, cfg.workers);

    std::printf("-- compare --\n");
    const std::string delta = do_compare(paths.report_sft, paths.report_rl);
    write_text(paths.compare_txt, delta);
    std::printf("%s", delta.c_str());
    std::printf("== pipeline complete ==\n");
}

int run_main(int argc, char** argv) {
    CLI::App app{"rlpipe: SFT + offline RL post-training pipeline for a toy reasoning task"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, questions, dataset, in_path, out_path, resume;
    std::string before, after;
    std::vector<std::string> train_questions;
    int k = -1, n = -1, workers = -1, seeds = 3;
    int min_mean_len = -1, max_pos_len = -1;

    auto* gen = app.add_subcommand("gen-tasks", "Generate train/rl/eval question files");
    gen->add_option("--config", config_path)->required();
    gen->add_option("--out", out_path, "Run directory (default: [run].out_dir)");

    auto* sft = app.add_subcommand("sft", "Supervised fine-tuning on gold traces");
    sft->add_option("--config", config_path)->required();
    sft->add_option("--questions", questions, "Training questions (default under --out)");
    sft->add_option("--out", out_path, "Run directory");
    sft->add_option("--resume", resume, "Checkpoint to resume from");

    auto* infer = app.add_subcommand("infer", "Sample k candidate answers per question");
    infer->add_option("--config", config_path)->required();
    infer->add_option("--checkpoint", checkpoint)->required();
    infer->add_option("--questions", questions)->required();
    infer->add_option("-k", k, "Answers per question (default [rl].k)");
    infer->add_option("--out", out_path)->required();
    infer->add_option("--workers", workers);

    auto* verify = app.add_subcommand("verify", "Assign binary rewards to sampled answers");
    verify->add_option("--in", in_path)->required();
    verify->add_option("--questions", questions)->required();
    verify->add_option("--out", out_path)->required();

    auto* filter = app.add_subcommand("filter", "Apply difficulty/variance/length filters");
    filter->add_option("--config", config_path, "Config supplying default thresholds");
    filter->add_option("--in", in_path)->required();
    filter->add_option("--min-mean-len", min_mean_len);
    filter->add_option("--max-pos-len", max_pos_len);
    filter->add_option("--out", out_path)->required();

    auto* rl = app.add_subcommand("rl-train", "Offline RL on a fixed rewarded dataset");
    rl->add_option("--config", config_path)->required();
    rl->add_option("--dataset", dataset)->required();
    rl->add_option("--questions", questions)->required();
    rl->add_option("--checkpoint", checkpoint, "Initial model (the SFT result)")->required();
    rl->add_option("--out", out_path, "Run directory");
    rl->add_option("--resume", resume);

    auto* ev = app.add_subcommand("eval", "pass@1 over n sampled responses per question");
    ev->add_option("--config", config_path)->required();
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--questions", questions)->required();
    ev->add_option("-n", n, "Responses per question (default [eval].n_samples)");
    ev->add_option("--out", out_path)->required();
    ev->add_option("--train-questions", train_questions,
                   "Question files to guard against contamination")
        ->take_all();
    ev->add_option("--workers", workers);

    auto* cmp = app.add_subcommand("compare", "Delta table between two eval reports");
    cmp->add_option("--before", before)->required();
    cmp->add_option("--after", after)->required();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gc->add_option("--seeds", seeds);

    auto* pipe = app.add_subcommand("pipeline", "Full run: gen-tasks through compare");
    pipe->add_option("--config", config_path)->required();
    pipe->add_option("--out", out_path, "Run directory (default: [run].out_dir)");

    try {
        app.parse(argc, argv);

        if (gen->parsed()) {
            const RunConfig cfg = load_config(config_path);
            do_gen_tasks(cfg, PipelinePaths::under(out_path.empty() ? cfg.out_dir : out_path));
        } else if (sft->parsed()) {
            const RunConfig cfg = load_config(config_path);
            const PipelinePaths paths =
                PipelinePaths::under(out_path.empty() ? cfg.out_dir : out_path);
            const std::string qs = questions.empty() ? paths.sft_questions : questions;
            const train::TrainResult r = do_sft(cfg, qs, paths.sft_dir, resume);
            std::printf("sft: %lld steps, loss %.4f -> %.4f, final %s\n",
                        static_cast<long long>(r.steps), r.first_loss, r.final_loss,
                        r.final_checkpoint.c_str());
        } else if (infer->parsed()) {
            const RunConfig cfg = load_config(config_path);
            do_infer(cfg, checkpoint, questions, k > 0 ? k : cfg.k, out_path,
                     workers > 0 ? workers : cfg.workers);
        } else if (verify->parsed()) {
            do_verify(in_path, questions, out_path);
        } else if (filter->parsed()) {
            data::FilterParams params;
            if (!config_path.empty()) {
                params = load_config(config_path).filters;
            }
            if (min_mean_len >= 0) {
                params.min_mean_length = min_mean_len;
            }
            if (max_pos_len >= 0) {
                params.max_positive_length = max_pos_len;
            }
            do_filter(in_path, params, out_path);
        } else if (rl->parsed()) {
            const RunConfig cfg = load_config(config_path);
            const PipelinePaths paths =
                PipelinePaths::under(out_path.empty() ? cfg.out_dir : out_path);
            const train::TrainResult r =
                do_rl_train(cfg, dataset, questions, checkpoint, paths.rl_dir, resume);
            std::printf("rl-train: %lld steps, loss %.4f -> %.4f, final %s\n",
                        static_cast<long long>(r.steps), r.first_loss, r.final_loss,
                        r.final_checkpoint.c_str());
        } else if (ev->parsed()) {
            const RunConfig cfg = load_config(config_path);
            do_eval(cfg, checkpoint, questions, n > 0 ? n : cfg.eval_n, out_path,
                    train_questions, workers > 0 ? workers : cfg.workers);
        } else if (cmp->parsed()) {
            std::printf("%s", do_compare(before, after).c_str());
        } else if (gc->parsed()) {
            const model::GradCheckSummary s = model::run_gradcheck(seeds);
            std::printf("gradcheck: %d seeds, %zu coordinates, max rel err %.3e (tol %.1e): %s\n",
                        s.seeds, s.coords_checked, s.max_rel_err, s.tolerance,
                        s.pass ? "PASS" : "FAIL");
            if (!s.pass) {
                raise(ErrorClass::numeric, "gradient check failed");
            }
        } else if (pipe->parsed()) {
            const RunConfig cfg = load_config(config_path);
            do_pipeline(cfg, PipelinePaths::under(out_path.empty() ? cfg.out_dir : out_path));
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.diagnostic().c_str());
        return exit_code(e.cls());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "rlpipe: error class=internal code=1 msg=\"%s\"\n", e.what());
        return 1;
    }
}

} // namespace rlpipe::cli
