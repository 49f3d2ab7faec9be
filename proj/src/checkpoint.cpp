#include "rlpipe/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"

namespace rlpipe::model {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    write_bytes(out, &v, sizeof(T));
}

void read_bytes(std::ifstream& in, void* p, size_t n, const std::string& path) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) {
        raise(ErrorClass::config, "truncated checkpoint file: " + path);
    }
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v;
    read_bytes(in, &v, sizeof(T), path);
    return v;
}

uint64_t params_digest(const Arch& arch, int64_t step, const std::vector<double>& vals) {
    std::string bytes;
    bytes.reserve(vals.size() * sizeof(double) + 64);
    bytes.append(reinterpret_cast<const char*>(&arch), sizeof(arch));
    bytes.append(reinterpret_cast<const char*>(&step), sizeof(step));
    bytes.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(double));
    return fnv1a64(bytes);
}

void write_array(std::ofstream& out, const std::string& name,
                 const std::vector<double>& vals, size_t offset, size_t count) {
    const uint16_t name_len = static_cast<uint16_t>(name.size());
    write_pod(out, name_len);
    write_bytes(out, name.data(), name.size());
    const uint64_t n = count;
    write_pod(out, n);
    write_bytes(out, vals.data() + offset, count * sizeof(double));
}

} // namespace

void save_checkpoint(const std::string& path, const ModelState& model,
                     const OptimizerState* opt, int64_t step,
                     const std::array<uint64_t, 4>& rng_state) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out.is_open()) {
            raise(ErrorClass::config, "cannot write checkpoint: " + tmp);
        }
        const std::vector<double> vals = model.params_as_double();
        const uint64_t digest = params_digest(model.arch(), step, vals);

        write_bytes(out, kMagic, sizeof(kMagic));
        write_pod(out, kVersion);
        const Arch& a = model.arch();
        write_pod(out, static_cast<int32_t>(a.vocab_size));
        write_pod(out, static_cast<int32_t>(a.context_len));
        write_pod(out, static_cast<int32_t>(a.layers));
        write_pod(out, static_cast<int32_t>(a.hidden_dim));
        write_pod(out, static_cast<int32_t>(a.heads));
        write_pod(out, static_cast<uint8_t>(model.precision() == Precision::high ? 0 : 1));
        write_pod(out, static_cast<int64_t>(step));
        for (uint64_t w : rng_state) {
            write_pod(out, w);
        }
        write_pod(out, digest);

        uint32_t n_arrays = static_cast<uint32_t>(model.layout().size());
        uint8_t has_opt = opt != nullptr ? 1 : 0;
        write_pod(out, has_opt);
        if (opt) {
            write_pod(out, opt->step);
            write_pod(out, opt->beta1);
            write_pod(out, opt->beta2);
            write_pod(out, opt->weight_decay);
            write_pod(out, opt->eps);
            n_arrays *= 3;  // params + first/second moments
        }
        write_pod(out, n_arrays);
        for (const auto& view : model.layout()) {
            write_array(out, view.name, vals, view.offset, view.count);
        }
        if (opt) {
            std::vector<double> m(model.param_count());
            std::vector<double> v(model.param_count());
            if (model.precision() == Precision::high) {
                m = opt->m64;
                v = opt->v64;
            } else {
                for (size_t i = 0; i < m.size(); ++i) {
                    m[i] = static_cast<double>(opt->m32[i]);
                    v[i] = static_cast<double>(opt->v32[i]);
                }
            }
            for (const auto& view : model.layout()) {
                write_array(out, "opt.m." + view.name, m, view.offset, view.count);
            }
            for (const auto& view : model.layout()) {
                write_array(out, "opt.v." + view.name, v, view.offset, view.count);
            }
        }
        if (!out.good()) {
            raise(ErrorClass::config, "failed writing checkpoint: " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

namespace {

struct Header {
    Arch arch;
    Precision precision;
    int64_t step;
    std::array<uint64_t, 4> rng_state;
    uint64_t digest;
    uint8_t has_opt;
    int64_t opt_step = 0;
    double beta1 = 0, beta2 = 0, weight_decay = 0, eps = 0;
    uint32_t n_arrays = 0;
};

Header read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    read_bytes(in, magic, sizeof(magic), path);
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        raise(ErrorClass::config, "not a checkpoint file: " + path);
    }
    const uint32_t version = read_pod<uint32_t>(in, path);
    if (version != kVersion) {
        raise(ErrorClass::config, "unsupported checkpoint version " +
                                      std::to_string(version) + ": " + path);
    }
    Header h{};
    h.arch.vocab_size = read_pod<int32_t>(in, path);
    h.arch.context_len = read_pod<int32_t>(in, path);
    h.arch.layers = read_pod<int32_t>(in, path);
    h.arch.hidden_dim = read_pod<int32_t>(in, path);
    h.arch.heads = read_pod<int32_t>(in, path);
    h.precision = read_pod<uint8_t>(in, path) == 0 ? Precision::high : Precision::standard;
    h.step = read_pod<int64_t>(in, path);
    for (auto& w : h.rng_state) {
        w = read_pod<uint64_t>(in, path);
    }
    h.digest = read_pod<uint64_t>(in, path);
    h.has_opt = read_pod<uint8_t>(in, path);
    if (h.has_opt) {
        h.opt_step = read_pod<int64_t>(in, path);
        h.beta1 = read_pod<double>(in, path);
        h.beta2 = read_pod<double>(in, path);
        h.weight_decay = read_pod<double>(in, path);
        h.eps = read_pod<double>(in, path);
    }
    h.n_arrays = read_pod<uint32_t>(in, path);
    return h;
}

} // namespace

Checkpoint load_checkpoint(const std::string& path, const Arch* expected_arch) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        raise(ErrorClass::config, "cannot open checkpoint: " + path);
    }
    const Header h = read_header(in, path);
    if (expected_arch && !(h.arch == *expected_arch)) {
        raise(ErrorClass::provenance, "checkpoint arch incompatible with configuration: " + path);
    }

    Checkpoint ck;
    ck.model = ModelState::init(h.arch, 0, h.precision);
    ck.step = h.step;
    ck.rng_state = h.rng_state;

    std::vector<double> params(ck.model.param_count(), 0.0);
    std::vector<double> m, v;
    if (h.has_opt) {
        m.assign(ck.model.param_count(), 0.0);
        v.assign(ck.model.param_count(), 0.0);
    }

    // Name -> (offset, count) from the canonical layout.
    const auto& layout = ck.model.layout();
    auto find_view = [&layout](const std::string& name) -> const ParamView* {
        for (const auto& view : layout) {
            if (view.name == name) {
                return &view;
            }
        }
        return nullptr;
    };

    for (uint32_t i = 0; i < h.n_arrays; ++i) {
        const uint16_t name_len = read_pod<uint16_t>(in, path);
        std::string name(name_len, '\0');
        read_bytes(in, name.data(), name_len, path);
        const uint64_t count = read_pod<uint64_t>(in, path);
        std::vector<double>* dest = nullptr;
        std::string base = name;
        if (name.rfind("opt.m.", 0) == 0) {
            dest = &m;
            base = name.substr(6);
        } else if (name.rfind("opt.v.", 0) == 0) {
            dest = &v;
            base = name.substr(6);
        } else {
            dest = &params;
        }
        const ParamView* view = find_view(base);
        if (!view || view->count != count || (dest != &params && !h.has_opt)) {
            raise(ErrorClass::config, "checkpoint array mismatch for '" + name + "': " + path);
        }
        read_bytes(in, dest->data() + view->offset, count * sizeof(double), path);
    }

    const uint64_t digest = params_digest(h.arch, h.step, params);
    if (digest != h.digest) {
        raise(ErrorClass::provenance, "checkpoint content digest mismatch: " + path);
    }
    ck.checkpoint_id = to_hex(digest);
    ck.model.set_params_from_double(params);

    if (h.has_opt) {
        OptimizerState opt = OptimizerState::init(ck.model, h.beta1, h.beta2, h.weight_decay);
        opt.eps = h.eps;
        opt.step = h.opt_step;
        if (ck.model.precision() == Precision::high) {
            opt.m64 = m;
            opt.v64 = v;
        } else {
            for (size_t i = 0; i < m.size(); ++i) {
                opt.m32[i] = static_cast<float>(m[i]);
                opt.v32[i] = static_cast<float>(v[i]);
            }
        }
        ck.opt = std::move(opt);
    }
    return ck;
}

std::string checkpoint_id_of(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        raise(ErrorClass::config, "cannot open checkpoint: " + path);
    }
    const Header h = read_header(in, path);
    return to_hex(h.digest);
}

} // namespace rlpipe::model
