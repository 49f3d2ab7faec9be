#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "rlpipe/app.hpp"
#include "rlpipe/dataset_io.hpp"
#include "rlpipe/errors.hpp"
#include "rlpipe/filters.hpp"
#include "rlpipe/hash.hpp"

using namespace rlpipe;
namespace fs = std::filesystem;

namespace {

std::string binary_path() {
    const char* env = std::getenv("RLPIPE_BIN");
    return env ? env : "";
}

int run(const std::string& args) {
    const std::string cmd = binary_path() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("missing config file exits with the config error code, writing nothing") {
    REQUIRE(!binary_path().empty());
    const std::string out = "/tmp/rlpipe_cli_missing_out";
    fs::remove_all(out);
    CHECK(run("gen-tasks --config /tmp/rlpipe_does_not_exist.toml --out " + out) == 2);
    CHECK(!fs::exists(out));
}

TEST_CASE("bad subcommand and bad flags are CLI errors") {
    CHECK(run("no-such-command") != 0);
    CHECK(run("") != 0);
}

TEST_CASE("gradcheck subcommand passes") {
    CHECK(run("gradcheck --seeds 1") == 0);
}

TEST_CASE("filter run twice on its own output is byte-identical") {
    // Build a small verified answers file in process, then run the filter
    // twice through the public entry point.
    const std::string dir = "/tmp/rlpipe_cli_filter";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const auto questions = tasks::gen_questions(10, 2, 3, 40);
    const auto table = data::question_table(questions);
    std::vector<data::QuestionGroup> groups;
    int toggle = 0;
    for (const auto& q : questions) {
        data::QuestionGroup g;
        g.question_id = q.id;
        for (int s = 0; s < 4; ++s) {
            data::AnswerRecord r;
            r.question_id = q.id;
            r.sample_index = s;
            if ((toggle++ % 3) != 0) {
                r.answer = tasks::gen_gold_answer(q);
            } else {
                r.answer.tokens = {vocab::kAnswer, vocab::digit(1), vocab::kEndAnswer,
                                   vocab::kEos};
            }
            r.length = r.answer.size();
            g.records.push_back(std::move(r));
        }
        groups.push_back(std::move(g));
    }
    data::assign_rewards(groups, table);
    data::AnswersHeader header;
    header.config_hash = "cfg";
    header.checkpoint_id = "ck";
    header.questions_digest = "qd";
    header.k = 4;
    header.verified = true;
    const std::string verified = dir + "/verified.jsonl";
    data::write_answers(verified, groups, header);

    data::FilterParams params;
    params.min_mean_length = 2;
    params.max_positive_length = 100;
    const std::string once = dir + "/dataset1.jsonl";
    const std::string twice = dir + "/dataset2.jsonl";
    cli::do_filter(verified, params, once);
    cli::do_filter(once, params, twice);
    CHECK(read_file(once) == read_file(twice));

    fs::remove_all(dir);
}

TEST_CASE("compare exits nonzero on incomparable reports") {
    const std::string dir = "/tmp/rlpipe_cli_compare";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir + "/a.json") << "{\"schema\":\"rlpipe.report/1\",\"pass_at_1\":0.5,"
                                      "\"avg_response_length\":10,\"n_samples\":2,"
                                      "\"per_question\":[{\"id\":\"q1\",\"difficulty\":1,"
                                      "\"accuracy\":0.5,\"mean_length\":10}],"
                                      "\"per_difficulty\":[],\"length_buckets\":[]}";
    std::ofstream(dir + "/b.json") << "{\"schema\":\"rlpipe.report/1\",\"pass_at_1\":0.5,"
                                      "\"avg_response_length\":10,\"n_samples\":2,"
                                      "\"per_question\":[{\"id\":\"q2\",\"difficulty\":1,"
                                      "\"accuracy\":0.5,\"mean_length\":10}],"
                                      "\"per_difficulty\":[],\"length_buckets\":[]}";
    CHECK(run("compare --before " + dir + "/a.json --after " + dir + "/b.json") ==
          exit_code(ErrorClass::provenance));
    CHECK(run("compare --before " + dir + "/a.json --after " + dir + "/a.json") == 0);
    fs::remove_all(dir);
}
