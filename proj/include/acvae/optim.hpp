#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "acvae/tensor.hpp"

namespace acvae {

template <class S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    Tensor<S> m, v;        // Adam moments
    std::int64_t step = 0; // Adam bias-correction counter

    explicit Parameter(std::string n, std::vector<std::size_t> shape)
        : name(std::move(n)), value(shape), grad(shape), m(shape), v(shape) {}

    void zero_grad() { grad.zero(); }
};

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double lr_decay = 0.99; // multiplicative, applied per epoch
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0; // global gradient norm; <= 0 disables

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("learning rate must be positive");
        if (lr_decay <= 0 || lr_decay > 1) throw std::invalid_argument("lr decay must be in (0, 1]");
    }

    double rate_at_epoch(std::size_t epoch) const {
        return learning_rate * std::pow(lr_decay, static_cast<double>(epoch));
    }
};

// Scales all gradients so the global L2 norm is at most clip_norm.
// Returns the pre-clip norm. Throws on a non-finite gradient, naming the
// parameter that holds it.
template <class S>
double clip_gradients(std::vector<Parameter<S>*>& params, double clip_norm) {
    double sq = 0.0;
    for (const auto* p : params)
        for (S g : p->grad.data) {
            if (!std::isfinite(static_cast<double>(g)))
                throw std::runtime_error("non-finite gradient in parameter '" + p->name + "'");
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    double norm = std::sqrt(sq);
    if (clip_norm > 0 && norm > clip_norm) {
        S scale = static_cast<S>(clip_norm / norm);
        for (auto* p : params)
            for (S& g : p->grad.data) g *= scale;
    }
    return norm;
}

// One Adam update with bias correction at effective rate
// learning_rate * lr_decay^epoch. Clips first.
template <class S>
void adam_step(std::vector<Parameter<S>*>& params, const OptimizerConfig& cfg, std::size_t epoch) {
    clip_gradients(params, cfg.clip_norm);
    const double lr = cfg.rate_at_epoch(epoch);
    for (auto* p : params) {
        p->step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            double g = static_cast<double>(p->grad.data[i]);
            double m = cfg.beta1 * static_cast<double>(p->m.data[i]) + (1.0 - cfg.beta1) * g;
            double v = cfg.beta2 * static_cast<double>(p->v.data[i]) + (1.0 - cfg.beta2) * g * g;
            p->m.data[i] = static_cast<S>(m);
            p->v.data[i] = static_cast<S>(v);
            double mhat = m / bc1;
            double vhat = v / bc2;
            p->value.data[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// checkpoint format: magic "ACVAE\x01", u32 LE entry count, then per entry
// u32 name length + UTF-8 name + u32 rank + u32 dims + f32 LE row-major
// values. Adam state rides along as "<name>.m" / "<name>.v" / "<name>.t".

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
    std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void put_entry(std::ostream& out, const std::string& name,
                      const std::vector<std::size_t>& shape, const float* values, std::size_t n) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < n; ++i) put_f32(out, values[i]);
}

} // namespace detail

inline constexpr char kCheckpointMagic[6] = {'A', 'C', 'V', 'A', 'E', '\x01'};

template <class S>
void save_checkpoint(const std::string& path, const std::vector<const Parameter<S>*>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 6);
    detail::put_u32(out, static_cast<std::uint32_t>(params.size() * 4));
    std::vector<float> buf;
    for (const auto* p : params) {
        auto dump = [&](const std::string& name, const Tensor<S>& t) {
            buf.assign(t.data.begin(), t.data.end());
            detail::put_entry(out, name, t.shape, buf.data(), buf.size());
        };
        dump(p->name, p->value);
        dump(p->name + ".m", p->m);
        dump(p->name + ".v", p->v);
        float step = static_cast<float>(p->step);
        detail::put_entry(out, p->name + ".t", {1}, &step, 1);
    }
    if (!out) throw std::runtime_error("write failed for checkpoint: " + path);
}

struct CheckpointEntry {
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

inline std::map<std::string, CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kCheckpointMagic, 6) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    std::uint32_t count = detail::get_u32(in);
    std::map<std::string, CheckpointEntry> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::uint32_t name_len = detail::get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = detail::get_u32(in);
        CheckpointEntry entry;
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            entry.shape.push_back(detail::get_u32(in));
            n *= entry.shape.back();
        }
        entry.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) entry.values[i] = detail::get_f32(in);
        if (!in) throw std::runtime_error("checkpoint truncated: " + path);
        entries.emplace(std::move(name), std::move(entry));
    }
    return entries;
}

template <class S>
void load_checkpoint(const std::string& path, std::vector<Parameter<S>*>& params) {
    auto entries = read_checkpoint(path);
    for (auto* p : params) {
        auto fetch = [&](const std::string& name, Tensor<S>& t, bool check_shape) {
            auto it = entries.find(name);
            if (it == entries.end())
                throw std::runtime_error("checkpoint " + path + " is missing entry '" + name + "'");
            if (check_shape && it->second.shape != t.shape)
                throw std::runtime_error("checkpoint entry '" + name + "' has shape " +
                                         shape_str(it->second.shape) + ", expected " + shape_str(t.shape));
            if (it->second.values.size() != t.size())
                throw std::runtime_error("checkpoint entry '" + name + "' has wrong value count");
            for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(it->second.values[i]);
        };
        fetch(p->name, p->value, true);
        fetch(p->name + ".m", p->m, true);
        fetch(p->name + ".v", p->v, true);
        auto it = entries.find(p->name + ".t");
        if (it == entries.end() || it->second.values.size() != 1)
            throw std::runtime_error("checkpoint " + path + " is missing entry '" + p->name + ".t'");
        p->step = static_cast<std::int64_t>(it->second.values[0]);
    }
}

} // namespace acvae
