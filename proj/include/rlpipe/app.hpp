#pragma once

#include <string>
#include <vector>

#include "rlpipe/config.hpp"
#include "rlpipe/evaluate.hpp"
#include "rlpipe/trainer.hpp"

namespace rlpipe::cli {

// Canonical artifact layout for a pipeline run rooted at `root`.
struct PipelinePaths {
    std::string root;
    std::string sft_questions, rl_questions, eval_questions;
    std::string sft_dir;
    std::string infer_answers, verified_answers, dataset;
    std::string rl_dir;
    std::string report_sft, report_rl, compare_txt;

    static PipelinePaths under(const std::string& root);
};

// Phase entry points. The CLI subcommands call these; the acceptance suite
// drives the same functions in-process.
void do_gen_tasks(const RunConfig& cfg, const PipelinePaths& paths);
train::TrainResult do_sft(const RunConfig& cfg, const std::string& questions_path,
                          const std::string& out_dir, const std::string& resume);
void do_infer(const RunConfig& cfg, const std::string& checkpoint,
              const std::string& questions_path, int k, const std::string& out,
              int workers);
void do_verify(const std::string& in, const std::string& questions_path,
               const std::string& out);
void do_filter(const std::string& in, const data::FilterParams& params,
               const std::string& out);
train::TrainResult do_rl_train(const RunConfig& cfg, const std::string& dataset_path,
                               const std::string& questions_path,
                               const std::string& init_checkpoint,
                               const std::string& out_dir, const std::string& resume);
eval::EvalReport do_eval(const RunConfig& cfg, const std::string& checkpoint,
                         const std::string& questions_path, int n, const std::string& out,
                         const std::vector<std::string>& train_question_paths, int workers);
std::string do_compare(const std::string& before, const std::string& after);
void do_pipeline(const RunConfig& cfg, const PipelinePaths& paths);

int run_main(int argc, char** argv);

} // namespace rlpipe::cli
