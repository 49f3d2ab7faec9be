#include "rlpipe/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"
#include "rlpipe/rng.hpp"
#include "rlpipe/tasks.hpp"

namespace rlpipe::cli {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t a = 0;
    size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) {
        ++a;
    }
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) {
        --b;
    }
    return s.substr(a, b - a);
}

// Single scalar: quoted string, bool, integer, or float.
json parse_scalar(const std::string& raw, const std::string& context) {
    const std::string v = trim(raw);
    if (v.empty()) {
        raise(ErrorClass::config, "empty value for " + context);
    }
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') {
            raise(ErrorClass::config, "unterminated string for " + context);
        }
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") {
        return true;
    }
    if (v == "false") {
        return false;
    }
    // Integer?
    {
        size_t i = (v[0] == '-' || v[0] == '+') ? 1 : 0;
        bool all_digits = i < v.size();
        for (size_t j = i; j < v.size(); ++j) {
            if (!std::isdigit(static_cast<unsigned char>(v[j]))) {
                all_digits = false;
                break;
            }
        }
        if (all_digits) {
            return static_cast<int64_t>(std::stoll(v));
        }
    }
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() + v.size()) {
        return d;
    }
    raise(ErrorClass::config, "cannot parse value '" + v + "' for " + context);
}

json parse_value(const std::string& raw, const std::string& context) {
    const std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') {
            raise(ErrorClass::config, "unterminated array for " + context);
        }
        json arr = json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string item;
        for (size_t i = 0; i <= inner.size(); ++i) {
            if (i == inner.size() || inner[i] == ',') {
                if (!trim(item).empty()) {
                    arr.push_back(parse_scalar(item, context));
                }
                item.clear();
            } else {
                item += inner[i];
            }
        }
        return arr;
    }
    return parse_scalar(v, context);
}

json parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        raise(ErrorClass::config, "cannot open config file: " + path);
    }
    json sections = json::object();
    std::string section;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Strip comments (# outside quotes).
        bool in_quote = false;
        std::string body;
        for (char c : line) {
            if (c == '"') {
                in_quote = !in_quote;
            }
            if (c == '#' && !in_quote) {
                break;
            }
            body += c;
        }
        body = trim(body);
        if (body.empty()) {
            continue;
        }
        if (body.front() == '[') {
            if (body.back() != ']') {
                raise(ErrorClass::config,
                      path + ":" + std::to_string(lineno) + ": malformed section header");
            }
            section = trim(body.substr(1, body.size() - 2));
            if (section.empty()) {
                raise(ErrorClass::config,
                      path + ":" + std::to_string(lineno) + ": empty section name");
            }
            continue;
        }
        const size_t eq = body.find('=');
        if (eq == std::string::npos) {
            raise(ErrorClass::config,
                  path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        if (key.empty() || section.empty()) {
            raise(ErrorClass::config,
                  path + ":" + std::to_string(lineno) + ": key outside a section");
        }
        const std::string context = "[" + section + "]." + key;
        if (sections.contains(section) && sections[section].contains(key)) {
            raise(ErrorClass::config, "duplicate key " + context);
        }
        sections[section][key] = parse_value(body.substr(eq + 1), context);
    }
    return sections;
}

template <class T>
void assign_int(T* dst, const json& v, const std::string& context) {
    if (!v.is_number_integer()) {
        raise(ErrorClass::config, context + " must be an integer");
    }
    *dst = static_cast<T>(v.get<int64_t>());
}

void assign_double(double* dst, const json& v, const std::string& context) {
    if (!v.is_number()) {
        raise(ErrorClass::config, context + " must be a number");
    }
    *dst = v.get<double>();
}

void assign_string(std::string* dst, const json& v, const std::string& context) {
    if (!v.is_string()) {
        raise(ErrorClass::config, context + " must be a string");
    }
    *dst = v.get<std::string>();
}

void apply(RunConfig& c, const std::string& section, const std::string& key, const json& v) {
    const std::string ctx = "[" + section + "]." + key;
    if (section == "arch") {
        if (key == "vocab_size") return assign_int(&c.arch.vocab_size, v, ctx);
        if (key == "context_len") return assign_int(&c.arch.context_len, v, ctx);
        if (key == "layers") return assign_int(&c.arch.layers, v, ctx);
        if (key == "hidden_dim") return assign_int(&c.arch.hidden_dim, v, ctx);
        if (key == "heads") return assign_int(&c.arch.heads, v, ctx);
        if (key == "precision") {
            std::string s;
            assign_string(&s, v, ctx);
            c.precision = model::precision_from_string(s);
            return;
        }
    } else if (section == "seeds") {
        if (key == "master") {
            int64_t s = 0;
            assign_int(&s, v, ctx);
            c.master_seed = static_cast<uint64_t>(s);
            return;
        }
    } else if (section == "tasks") {
        if (key == "operands") return assign_int(&c.operands, v, ctx);
        if (key == "sft_count") return assign_int(&c.sft_count, v, ctx);
        if (key == "rl_count") return assign_int(&c.rl_count, v, ctx);
        if (key == "eval_count") return assign_int(&c.eval_count, v, ctx);
        if (key == "difficulty_min") return assign_int(&c.difficulty_min, v, ctx);
        if (key == "difficulty_max") return assign_int(&c.difficulty_max, v, ctx);
    } else if (section == "decode") {
        if (key == "temperature") return assign_double(&c.decode.temperature, v, ctx);
        if (key == "top_k") return assign_int(&c.decode.top_k, v, ctx);
        if (key == "top_p") return assign_double(&c.decode.top_p, v, ctx);
        if (key == "max_new_tokens") return assign_int(&c.decode.max_new_tokens, v, ctx);
    } else if (section == "sft") {
        if (key == "batch_samples") return assign_int(&c.sft.batch_samples, v, ctx);
        if (key == "epochs") return assign_int(&c.sft.epochs, v, ctx);
        if (key == "lr_max") return assign_double(&c.sft.lr_max, v, ctx);
        if (key == "lr_min") return assign_double(&c.sft.lr_min, v, ctx);
        if (key == "warmup_ratio") return assign_double(&c.sft.warmup_ratio, v, ctx);
        if (key == "weight_decay") return assign_double(&c.sft.optim.weight_decay, v, ctx);
        if (key == "beta1") return assign_double(&c.sft.optim.beta1, v, ctx);
        if (key == "beta2") return assign_double(&c.sft.optim.beta2, v, ctx);
        if (key == "grad_clip") return assign_double(&c.sft.optim.grad_clip, v, ctx);
        if (key == "micro_batch_streams") return assign_int(&c.sft.micro_batch_streams, v, ctx);
        if (key == "checkpoint_every") return assign_int(&c.sft.checkpoint_every, v, ctx);
        if (key == "log_every") return assign_int(&c.sft.log_every, v, ctx);
    } else if (section == "rl") {
        if (key == "steps") return assign_int(&c.rl.steps, v, ctx);
        if (key == "batch_samples") return assign_int(&c.rl.batch_samples, v, ctx);
        if (key == "lr_max") return assign_double(&c.rl.lr_max, v, ctx);
        if (key == "lr_min") return assign_double(&c.rl.lr_min, v, ctx);
        if (key == "warmup_ratio") return assign_double(&c.rl.warmup_ratio, v, ctx);
        if (key == "weight_decay") return assign_double(&c.rl.optim.weight_decay, v, ctx);
        if (key == "beta1") return assign_double(&c.rl.optim.beta1, v, ctx);
        if (key == "beta2") return assign_double(&c.rl.optim.beta2, v, ctx);
        if (key == "grad_clip") return assign_double(&c.rl.optim.grad_clip, v, ctx);
        if (key == "micro_batch_samples") return assign_int(&c.rl.micro_batch_samples, v, ctx);
        if (key == "checkpoint_every") return assign_int(&c.rl.checkpoint_every, v, ctx);
        if (key == "log_every") return assign_int(&c.rl.log_every, v, ctx);
        if (key == "k") return assign_int(&c.k, v, ctx);
        if (key == "loss_variant") {
            std::string s;
            assign_string(&s, v, ctx);
            c.rl.variant = train::rl_loss_variant_from_string(s);
            return;
        }
    } else if (section == "filters") {
        if (key == "min_mean_length") return assign_int(&c.filters.min_mean_length, v, ctx);
        if (key == "max_positive_length")
            return assign_int(&c.filters.max_positive_length, v, ctx);
    } else if (section == "eval") {
        if (key == "n_samples") return assign_int(&c.eval_n, v, ctx);
        if (key == "bucket_edges") {
            if (!v.is_array()) {
                raise(ErrorClass::config, ctx + " must be an array of integers");
            }
            c.bucket_edges.clear();
            for (const auto& e : v) {
                if (!e.is_number_integer()) {
                    raise(ErrorClass::config, ctx + " must be an array of integers");
                }
                c.bucket_edges.push_back(static_cast<int>(e.get<int64_t>()));
            }
            return;
        }
    } else if (section == "run") {
        if (key == "workers") return assign_int(&c.workers, v, ctx);
        if (key == "out_dir") return assign_string(&c.out_dir, v, ctx);
    }
    raise(ErrorClass::config, "unknown key " + ctx);
}

int max_prompt_len(const RunConfig& c) {
    // <bos> + operands * difficulty digits + separators + '=' + <think>
    return 1 + c.operands * c.difficulty_max + (c.operands - 1) + 2;
}

void validate(RunConfig& c) {
    model::validate_arch(c.arch);
    if (c.arch.vocab_size < vocab::kAlphabetSize) {
        raise(ErrorClass::config, "vocab_size must cover the task alphabet (>= " +
                                      std::to_string(vocab::kAlphabetSize) + ")");
    }
    if (c.operands < tasks::kMinOperands || c.operands > tasks::kMaxOperands) {
        raise(ErrorClass::config, "operands out of range");
    }
    if (c.difficulty_min < 1 || c.difficulty_min > c.difficulty_max ||
        c.difficulty_max > tasks::kMaxDifficulty) {
        raise(ErrorClass::config, "invalid difficulty range");
    }
    if (c.sft_count < 1 || c.rl_count < 1 || c.eval_count < 1) {
        raise(ErrorClass::config, "question counts must be >= 1");
    }
    if (c.decode.temperature <= 0.0 || c.decode.top_k < 1 || c.decode.top_p <= 0.0 ||
        c.decode.top_p > 1.0) {
        raise(ErrorClass::config, "invalid decode parameters");
    }
    if (max_prompt_len(c) + c.decode.max_new_tokens > c.arch.context_len) {
        raise(ErrorClass::config,
              "max_new_tokens plus the longest prompt exceeds context_len");
    }
    if (c.k < 2) {
        raise(ErrorClass::config, "k must be >= 2 (the variance filter needs it)");
    }
    if (c.eval_n < 1) {
        raise(ErrorClass::config, "eval n_samples must be >= 1");
    }
    if (c.bucket_edges.size() < 2 || c.bucket_edges.front() != 0 ||
        c.bucket_edges.back() <= c.decode.max_new_tokens) {
        raise(ErrorClass::config,
              "bucket_edges must start at 0 and end beyond max_new_tokens");
    }
    for (size_t i = 1; i < c.bucket_edges.size(); ++i) {
        if (c.bucket_edges[i] <= c.bucket_edges[i - 1]) {
            raise(ErrorClass::config, "bucket_edges must be strictly increasing");
        }
    }
    if (c.workers < 1) {
        raise(ErrorClass::config, "workers must be >= 1");
    }

    const char* root = std::getenv("RLPIPE_OUT_ROOT");
    if (root && root[0] != '\0' && !c.out_dir.empty() && c.out_dir.front() != '/') {
        c.out_dir = std::string(root) + "/" + c.out_dir;
    }
}

} // namespace

uint64_t RunConfig::seed_for(const char* tag) const {
    return derive_seed(master_seed, tag);
}

json effective_json(const RunConfig& c) {
    json j;
    j["arch"] = {{"vocab_size", c.arch.vocab_size},
                 {"context_len", c.arch.context_len},
                 {"layers", c.arch.layers},
                 {"hidden_dim", c.arch.hidden_dim},
                 {"heads", c.arch.heads},
                 {"precision", model::to_string(c.precision)}};
    j["seeds"] = {{"master", c.master_seed}};
    j["tasks"] = {{"operands", c.operands},
                  {"sft_count", c.sft_count},
                  {"rl_count", c.rl_count},
                  {"eval_count", c.eval_count},
                  {"difficulty_min", c.difficulty_min},
                  {"difficulty_max", c.difficulty_max}};
    j["decode"] = {{"temperature", c.decode.temperature},
                   {"top_k", c.decode.top_k},
                   {"top_p", c.decode.top_p},
                   {"max_new_tokens", c.decode.max_new_tokens}};
    j["sft"] = {{"batch_samples", c.sft.batch_samples},
                {"epochs", c.sft.epochs},
                {"lr_max", c.sft.lr_max},
                {"lr_min", c.sft.lr_min},
                {"warmup_ratio", c.sft.warmup_ratio},
                {"weight_decay", c.sft.optim.weight_decay},
                {"beta1", c.sft.optim.beta1},
                {"beta2", c.sft.optim.beta2},
                {"grad_clip", c.sft.optim.grad_clip},
                {"micro_batch_streams", c.sft.micro_batch_streams},
                {"checkpoint_every", c.sft.checkpoint_every}};
    j["rl"] = {{"steps", c.rl.steps},
               {"batch_samples", c.rl.batch_samples},
               {"lr_max", c.rl.lr_max},
               {"lr_min", c.rl.lr_min},
               {"warmup_ratio", c.rl.warmup_ratio},
               {"weight_decay", c.rl.optim.weight_decay},
               {"beta1", c.rl.optim.beta1},
               {"beta2", c.rl.optim.beta2},
               {"grad_clip", c.rl.optim.grad_clip},
               {"micro_batch_samples", c.rl.micro_batch_samples},
               {"checkpoint_every", c.rl.checkpoint_every},
               {"k", c.k},
               {"loss_variant", c.rl.variant == train::RlLossVariant::rl ? "rl" : "rl_norm"}};
    j["filters"] = {{"min_mean_length", c.filters.min_mean_length},
                    {"max_positive_length", c.filters.max_positive_length}};
    j["eval"] = {{"n_samples", c.eval_n}, {"bucket_edges", c.bucket_edges}};
    // Execution details (workers, out_dir, log cadence) stay out of the
    // hash: they must not change what any artifact contains.
    return j;
}

namespace {

void finalize(RunConfig& c) {
    validate(c);
    c.effective = effective_json(c);
    c.config_hash = to_hex(fnv1a64(c.effective.dump()));
}

} // namespace

RunConfig default_config() {
    RunConfig c;
    finalize(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    const json sections = parse_config_file(path);
    RunConfig c;
    for (const auto& [section, keys] : sections.items()) {
        for (const auto& [key, value] : keys.items()) {
            apply(c, section, key, value);
        }
    }
    finalize(c);
    return c;
}

} // namespace rlpipe::cli
