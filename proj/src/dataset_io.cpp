#include "rlpipe/dataset_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"

namespace rlpipe::data {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) {
        raise(ErrorClass::config, "cannot write file: " + path);
    }
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        raise(ErrorClass::config, "cannot open file: " + path);
    }
    return in;
}

json parse_line(const std::string& line, const std::string& path) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
        raise(ErrorClass::config, "malformed JSON line in " + path);
    }
    return j;
}

json record_to_json(const AnswerRecord& r, bool with_reward) {
    json j;
    j["question_id"] = r.question_id;
    j["sample_index"] = r.sample_index;
    j["tokens"] = r.answer.tokens;
    j["length"] = r.length;
    j["truncated"] = r.truncated;
    if (with_reward && r.reward) {
        j["reward"] = *r.reward;
    }
    return j;
}

AnswerRecord record_from_json(const json& j) {
    AnswerRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.sample_index = j.at("sample_index").get<int>();
    r.answer.tokens = j.at("tokens").get<std::vector<int>>();
    r.answer.role_split = 0;
    r.length = j.at("length").get<int>();
    r.truncated = j.at("truncated").get<bool>();
    if (j.contains("reward")) {
        const int reward = j.at("reward").get<int>();
        if (reward != 1 && reward != -1) {
            raise(ErrorClass::config, "reward must be +1 or -1");
        }
        r.reward = reward;
    }
    return r;
}

} // namespace

// ---- questions ----

void write_questions(const std::string& path, const std::vector<tasks::Question>& questions,
                     const json& header_extra) {
    auto out = open_out(path);
    json header = header_extra;
    header["schema"] = "rlpipe.questions/1";
    header["count"] = questions.size();
    out << header.dump() << "\n";
    for (const auto& q : questions) {
        json j;
        j["id"] = q.id;
        j["operands"] = q.operands;
        j["difficulty"] = q.difficulty;
        j["ground_truth"] = q.ground_truth;
        out << j.dump() << "\n";
    }
    if (!out.good()) {
        raise(ErrorClass::config, "failed writing " + path);
    }
}

QuestionsFile load_questions(const std::string& path) {
    QuestionsFile qf;
    auto in = open_in(path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = parse_line(line, path);
        if (first) {
            first = false;
            if (j.value("schema", "") != "rlpipe.questions/1") {
                raise(ErrorClass::config, "not a questions file: " + path);
            }
            qf.header = j;
            continue;
        }
        tasks::Question q;
        q.id = j.at("id").get<std::string>();
        q.operands = j.at("operands").get<std::vector<uint64_t>>();
        q.difficulty = j.at("difficulty").get<int>();
        q.ground_truth = j.at("ground_truth").get<std::string>();
        q.prompt = tasks::render_prompt(q);
        if (q.id != tasks::question_id(q.operands)) {
            raise(ErrorClass::provenance, "question id does not match operands in " + path);
        }
        qf.questions.push_back(std::move(q));
    }
    if (first) {
        raise(ErrorClass::config, "empty questions file: " + path);
    }
    qf.digest = file_digest(path);
    return qf;
}

std::unordered_map<std::string, const tasks::Question*>
question_table(const std::vector<tasks::Question>& questions) {
    std::unordered_map<std::string, const tasks::Question*> table;
    table.reserve(questions.size());
    for (const auto& q : questions) {
        table.emplace(q.id, &q);
    }
    return table;
}

// ---- answers ----

json AnswersHeader::to_json(bool partial) const {
    json j;
    j["schema"] = partial ? "rlpipe.answers.partial/1" : "rlpipe.answers/1";
    j["config_hash"] = config_hash;
    j["checkpoint_id"] = checkpoint_id;
    j["questions_digest"] = questions_digest;
    j["k"] = k;
    j["decode"] = decode;
    j["verified"] = verified;
    return j;
}

AnswersHeader AnswersHeader::from_json(const json& j) {
    AnswersHeader h;
    h.config_hash = j.value("config_hash", "");
    h.checkpoint_id = j.value("checkpoint_id", "");
    h.questions_digest = j.value("questions_digest", "");
    h.k = j.value("k", 0);
    if (j.contains("decode")) {
        h.decode = j.at("decode");
    }
    h.verified = j.value("verified", false);
    return h;
}

bool AnswersHeader::compatible(const AnswersHeader& other) const {
    return checkpoint_id == other.checkpoint_id &&
           questions_digest == other.questions_digest && k == other.k &&
           decode == other.decode;
}

void write_answers(const std::string& path, const std::vector<QuestionGroup>& groups,
                   const AnswersHeader& header) {
    const std::string tmp = path + ".tmp";
    {
        auto out = open_out(tmp);
        out << header.to_json(false).dump() << "\n";
        std::vector<const QuestionGroup*> sorted;
        sorted.reserve(groups.size());
        for (const auto& g : groups) {
            sorted.push_back(&g);
        }
        std::sort(sorted.begin(), sorted.end(),
                  [](const QuestionGroup* a, const QuestionGroup* b) {
                      return a->question_id < b->question_id;
                  });
        for (const QuestionGroup* g : sorted) {
            for (const auto& r : g->records) {
                out << record_to_json(r, header.verified).dump() << "\n";
            }
        }
        if (!out.good()) {
            raise(ErrorClass::config, "failed writing " + path);
        }
    }
    std::filesystem::rename(tmp, path);
}

AnswersFile load_answers(const std::string& path) {
    AnswersFile af;
    auto in = open_in(path);
    std::string line;
    bool first = true;
    std::unordered_map<std::string, size_t> index;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = parse_line(line, path);
        if (first) {
            first = false;
            if (j.value("schema", "") != "rlpipe.answers/1") {
                raise(ErrorClass::config, "not an answers file: " + path);
            }
            af.header = AnswersHeader::from_json(j);
            continue;
        }
        AnswerRecord r = record_from_json(j);
        auto [it, inserted] = index.emplace(r.question_id, af.groups.size());
        if (inserted) {
            QuestionGroup g;
            g.question_id = r.question_id;
            af.groups.push_back(std::move(g));
        }
        af.groups[it->second].records.push_back(std::move(r));
    }
    if (first) {
        raise(ErrorClass::config, "empty answers file: " + path);
    }
    for (auto& g : af.groups) {
        std::sort(g.records.begin(), g.records.end(),
                  [](const AnswerRecord& a, const AnswerRecord& b) {
                      return a.sample_index < b.sample_index;
                  });
        if (af.header.k > 0 && static_cast<int>(g.records.size()) != af.header.k) {
            raise(ErrorClass::provenance,
                  "group " + g.question_id + " does not have k records in " + path);
        }
        g.recompute_stats();
    }
    return af;
}

void append_partial_group(const std::string& path, const QuestionGroup& group,
                          const AnswersHeader& header) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out.is_open()) {
        raise(ErrorClass::config, "cannot write file: " + path);
    }
    if (fresh) {
        out << header.to_json(true).dump() << "\n";
    }
    json j;
    j["question_id"] = group.question_id;
    json records = json::array();
    for (const auto& r : group.records) {
        records.push_back(record_to_json(r, false));
    }
    j["records"] = std::move(records);
    out << j.dump() << "\n";
    out.flush();
}

std::vector<QuestionGroup> load_partial_groups(const std::string& path,
                                               const AnswersHeader& expected) {
    std::vector<QuestionGroup> out;
    if (!std::filesystem::exists(path)) {
        return out;
    }
    auto in = open_in(path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            break;  // truncated tail from an interrupted run; recompute the rest
        }
        if (first) {
            first = false;
            if (j.value("schema", "") != "rlpipe.answers.partial/1") {
                raise(ErrorClass::config, "not a partial answers file: " + path);
            }
            const AnswersHeader h = AnswersHeader::from_json(j);
            if (!h.compatible(expected)) {
                raise(ErrorClass::provenance,
                      "partial answers provenance does not match this run: " + path);
            }
            continue;
        }
        if (!j.contains("question_id") || !j.contains("records")) {
            break;
        }
        QuestionGroup g;
        g.question_id = j.at("question_id").get<std::string>();
        for (const auto& rj : j.at("records")) {
            g.records.push_back(record_from_json(rj));
        }
        std::sort(g.records.begin(), g.records.end(),
                  [](const AnswerRecord& a, const AnswerRecord& b) {
                      return a.sample_index < b.sample_index;
                  });
        out.push_back(std::move(g));
    }
    return out;
}

// ---- datasets ----

void write_dataset(const std::string& path, const RlDataset& ds) {
    const std::string tmp = path + ".tmp";
    {
        auto out = open_out(tmp);
        json header;
        header["schema"] = "rlpipe.dataset/1";
        header["config_hash"] = ds.provenance.config_hash;
        header["checkpoint_id"] = ds.provenance.checkpoint_id;
        header["questions_digest"] = ds.provenance.questions_digest;
        header["k"] = ds.provenance.k;
        header["filter_params"] = {{"min_mean_length", ds.filter_params.min_mean_length},
                                   {"max_positive_length", ds.filter_params.max_positive_length}};
        header["counts"] = {{"total", ds.counts.total},
                            {"positive", ds.counts.positive},
                            {"negative", ds.counts.negative}};
        out << header.dump() << "\n";
        for (const auto& s : ds.samples) {
            json j;
            j["question_id"] = s.question_id;
            j["sample_index"] = s.sample_index;
            j["tokens"] = s.answer.tokens;
            j["length"] = s.length;
            j["reward"] = s.reward;
            j["truncated"] = s.truncated;
            out << j.dump() << "\n";
        }
        if (!out.good()) {
            raise(ErrorClass::config, "failed writing " + path);
        }
    }
    std::filesystem::rename(tmp, path);
}

RlDataset load_dataset_raw(const std::string& path) {
    RlDataset ds;
    auto in = open_in(path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j = parse_line(line, path);
        if (first) {
            first = false;
            if (j.value("schema", "") != "rlpipe.dataset/1") {
                raise(ErrorClass::config, "not a dataset file: " + path);
            }
            ds.provenance.config_hash = j.value("config_hash", "");
            ds.provenance.checkpoint_id = j.value("checkpoint_id", "");
            ds.provenance.questions_digest = j.value("questions_digest", "");
            ds.provenance.k = j.value("k", 0);
            const auto& fp = j.at("filter_params");
            ds.filter_params.min_mean_length = fp.at("min_mean_length").get<int>();
            ds.filter_params.max_positive_length = fp.at("max_positive_length").get<int>();
            continue;
        }
        RewardedSample s;
        s.question_id = j.at("question_id").get<std::string>();
        s.sample_index = j.at("sample_index").get<int>();
        s.answer.tokens = j.at("tokens").get<std::vector<int>>();
        s.answer.role_split = 0;
        s.length = j.at("length").get<int>();
        s.reward = j.at("reward").get<int>();
        s.truncated = j.at("truncated").get<bool>();
        if (s.reward != 1 && s.reward != -1) {
            raise(ErrorClass::config, "reward must be +1 or -1");
        }
        ds.counts.total += 1;
        if (s.reward == 1) {
            ds.counts.positive += 1;
        } else {
            ds.counts.negative += 1;
        }
        ds.samples.push_back(std::move(s));
    }
    if (first) {
        raise(ErrorClass::config, "empty dataset file: " + path);
    }
    return ds;
}

RlDataset load_dataset(const std::string& path,
                       const std::unordered_map<std::string, const tasks::Question*>& questions) {
    RlDataset ds = load_dataset_raw(path);
    for (auto& s : ds.samples) {
        const auto it = questions.find(s.question_id);
        if (it == questions.end()) {
            raise(ErrorClass::provenance,
                  "dataset sample references unknown question " + s.question_id);
        }
        s.prompt = it->second->prompt;
    }
    return ds;
}

} // namespace rlpipe::data
