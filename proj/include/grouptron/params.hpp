#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>

#include "grouptron/errors.hpp"
#include "grouptron/tensor.hpp"

// Named trainable tensors plus a flat binary snapshot format:
//   header: version (u32), tensor count (u32)
//   per tensor: path length (u32), path bytes, rank (u32), each axis (u64),
//               raw little-endian float64 data
// Paths are namespaced with '.' (e.g. "decoder_gru.w_ih").

namespace grouptron {

inline constexpr std::uint32_t kSnapshotVersion = 1;

class ParameterStore {
  public:
    // Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)] where fan_in is the
    // product of all input axes (everything but the last).
    Tensor& create(const std::string& path, Shape shape, std::mt19937_64& rng) {
        Tensor t = Tensor::zeros(shape, true);
        const double fan_in = static_cast<double>(t.numel() / shape.back());
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (double& x : t.data()) x = u(rng);
        return insert(path, std::move(t));
    }

    Tensor& create_zeros(const std::string& path, Shape shape) {
        return insert(path, Tensor::zeros(std::move(shape), true));
    }

    Tensor& get(const std::string& path) {
        auto it = params_.find(path);
        if (it == params_.end()) throw state_error("unknown parameter: " + path);
        return it->second;
    }
    const Tensor& get(const std::string& path) const {
        auto it = params_.find(path);
        if (it == params_.end()) throw state_error("unknown parameter: " + path);
        return it->second;
    }
    bool contains(const std::string& path) const { return params_.count(path) > 0; }

    const std::map<std::string, Tensor>& all() const { return params_; }

    std::size_t size() const { return params_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [path, t] : params_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [path, t] : params_) t.zero_grad();
    }

    void save(std::ostream& out) const {
        write_u32(out, kSnapshotVersion);
        write_u32(out, static_cast<std::uint32_t>(params_.size()));
        for (const auto& [path, t] : params_) {
            write_u32(out, static_cast<std::uint32_t>(path.size()));
            out.write(path.data(), static_cast<std::streamsize>(path.size()));
            write_u32(out, static_cast<std::uint32_t>(t.rank()));
            for (std::size_t d : t.shape()) {
                const std::uint64_t v = d;
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
            out.write(reinterpret_cast<const char*>(t.data().data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
        if (!out) throw data_error("failed to write parameter snapshot");
    }

    // Loads a snapshot. Tensors already in the store must match shapes and
    // have their data replaced in place; new paths are created.
    void load(std::istream& in) {
        const std::uint32_t version = read_u32(in, "snapshot header");
        if (version != kSnapshotVersion)
            throw data_error("unsupported snapshot version " + std::to_string(version));
        const std::uint32_t count = read_u32(in, "snapshot header");
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = read_u32(in, "tensor path");
            std::string path(len, '\0');
            in.read(path.data(), static_cast<std::streamsize>(len));
            const std::uint32_t rank = read_u32(in, "tensor rank");
            if (rank == 0 || rank > 8) throw data_error("snapshot tensor '" + path + "' has bad rank");
            Shape shape(rank);
            for (auto& d : shape) {
                std::uint64_t v = 0;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                d = static_cast<std::size_t>(v);
            }
            if (!in) throw data_error("truncated snapshot while reading '" + path + "'");
            Tensor t = contains(path) ? get(path) : Tensor();
            if (t.defined()) {
                if (t.shape() != shape)
                    throw data_error("snapshot shape mismatch for '" + path + "': expected " +
                                     detail::shape_str(t.shape()) + ", got " + detail::shape_str(shape));
            } else {
                t = Tensor::zeros(shape, true);
                insert(path, t);
            }
            auto& target = get(path);
            in.read(reinterpret_cast<char*>(target.data().data()),
                    static_cast<std::streamsize>(target.numel() * sizeof(double)));
            if (!in) throw data_error("truncated snapshot while reading '" + path + "'");
            for (double x : target.data())
                if (!std::isfinite(x)) throw data_error("snapshot tensor '" + path + "' holds non-finite values");
        }
    }

  private:
    Tensor& insert(const std::string& path, Tensor t) {
        auto [it, fresh] = params_.emplace(path, std::move(t));
        if (!fresh) throw state_error("duplicate parameter: " + path);
        return it->second;
    }

    static void write_u32(std::ostream& out, std::uint32_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static std::uint32_t read_u32(std::istream& in, const char* what) {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw data_error(std::string("truncated snapshot while reading ") + what);
        return v;
    }

    std::map<std::string, Tensor> params_;
};

} // namespace grouptron
