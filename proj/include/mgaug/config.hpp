// Run configuration (plain-text key = value) and reproducibility records.
#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mgaug/tensor_io.hpp"

namespace mgaug {

/// Bad invocation or configuration: unknown key, out-of-range value, missing input.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class RunConfig {
public:
    enum class Type { integer, real, text, flag, choice };

    struct Key {
        std::string name;
        Type type;
        std::string fallback;
        double lo = 0.0, hi = 0.0;  // inclusive range for numbers
        std::vector<std::string> choices;
        std::string doc;
    };

    static const std::vector<Key>& schema() {
        static const std::vector<Key> keys = {
            {"alpha", Type::real, "3.0", 1e-6, 1e3, {}, "metric smoothness weight in L = 1 + alpha * laplacian"},
            {"sigma", Type::real, "0.02", 1e-6, 1e3, {}, "registration noise level"},
            {"lambda", Type::real, "0.02", 1e-6, 1e3, {}, "MGAug image noise level"},
            {"steps", Type::integer, "10", 1, 1000, {}, "Euler steps for shooting and flow"},
            {"C", Type::integer, "2", 1, 64, {}, "mixture components"},
            {"latent_dim", Type::integer, "16", 1, 4096, {}, "latent x dimension"},
            {"eps_dim", Type::integer, "8", 1, 4096, {}, "latent epsilon dimension"},
            {"hidden", Type::integer, "256", 1, 8192, {}, "MGAug MLP width"},
            {"lr", Type::real, "1e-3", 1e-9, 1.0, {}, "MGAug learning rate"},
            {"batch", Type::integer, "16", 1, 100000, {}, "batch size"},
            {"epochs", Type::integer, "50", 0, 1000000, {}, "MGAug epochs"},
            {"warm_start", Type::integer, "5", -1, 1000000, {}, "epoch at which the mixture is k-means seeded (-1 off)"},
            {"seed", Type::integer, "0", 0, 9.0e15, {}, "random seed"},
            {"multiplier", Type::real, "3", 1e-6, 1000, {}, "augmented-to-original ratio"},
            {"max_step", Type::real, "0.4", 1e-6, 100, {}, "per-step displacement cap for sampled deformations (voxels)"},
            {"noise", Type::flag, "false", 0, 0, {}, "add N(0, lambda^2) observation noise to augmented images"},
            {"components", Type::text, "", 0, 0, {}, "comma-separated 0-based components to sample from (empty: all)"},
            {"task", Type::choice, "classification", 0, 0, {"classification", "segmentation"}, "downstream task"},
            {"task_epochs", Type::integer, "200", 0, 1000000, {}, "task epochs"},
            {"task_lr", Type::real, "1e-3", 1e-9, 1.0, {}, "task learning rate"},
            {"task_hidden", Type::integer, "128", 1, 8192, {}, "task MLP width"},
            {"gamma", Type::real, "1", 0, 1e6, {}, "classification loss weight"},
            {"tau", Type::real, "1", 0, 1e6, {}, "segmentation loss weight"},
            {"weight_decay", Type::real, "1e-5", 0, 1, {}, "L2 weight decay"},
            {"patch", Type::integer, "5", 1, 31, {}, "segmentation patch side (odd)"},
            {"r", Type::integer, "5", 1, 100000, {}, "joint training epochs per trainer per round"},
            {"joint_eps", Type::real, "1e-3", 1e-300, 1e300, {}, "joint convergence threshold on the total loss"},
            {"max_rounds", Type::integer, "10", 1, 100000, {}, "joint training round cap"},
            {"reg_lr", Type::real, "0.02", 1e-9, 10, {}, "registration Adam learning rate"},
            {"reg_iterations", Type::integer, "300", 0, 1000000, {}, "registration iteration cap"},
            {"reg_tol", Type::real, "1e-6", 0, 1, {}, "registration relative-change stop"},
            {"classes", Type::text, "disk,cross", 0, 0, {}, "synthetic class shapes (disk, cross, ring, bar)"},
            {"modes", Type::integer, "2", 1, 64, {}, "synthetic modes"},
            {"n_per_class", Type::integer, "40", 1, 1000000, {}, "synthetic images per class"},
            {"size", Type::integer, "28", 8, 4096, {}, "synthetic grid side"},
            {"mode_separation", Type::real, "1.8", 0, 1e3, {}, "synthetic mode-mean radius in coefficient space"},
            {"mode_std", Type::real, "0.6", 0, 1e3, {}, "synthetic per-coefficient spread"},
            {"png", Type::flag, "false", 0, 0, {}, "also write PNG previews"},
            {"threads", Type::integer, "0", 0, 1024, {}, "worker cap (0: MGAUG_THREADS or 1)"},
            {"data", Type::text, "", 0, 0, {}, "image-set directory"},
            {"velocities", Type::text, "", 0, 0, {}, "registered velocity directory"},
            {"templates", Type::text, "", 0, 0, {}, "class template directory"},
            {"model", Type::text, "", 0, 0, {}, "MGAug checkpoint directory"},
            {"task_model", Type::text, "", 0, 0, {}, "task model directory"},
            {"aug", Type::text, "", 0, 0, {}, "augmented image-set directory to add to training"},
            {"out", Type::text, "", 0, 0, {}, "output directory"},
        };
        return keys;
    }

    static const Key& key(const std::string& name) {
        for (const auto& k : schema())
            if (k.name == name) return k;
        throw UsageError("unknown config key: " + name);
    }

    RunConfig() {
        for (const auto& k : schema()) values_[k.name] = k.fallback;
    }

    void set(const std::string& name, std::string value) {
        const Key& k = key(name);
        value = trim(value);
        switch (k.type) {
            case Type::integer: {
                long long v = 0;
                const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
                if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
                    throw UsageError(name + ": expected an integer, got '" + value + "'");
                }
                if (v < k.lo || v > k.hi) throw UsageError(name + " = " + value + " is out of range" + range(k));
                break;
            }
            case Type::real: {
                double v = 0.0;
                std::size_t used = 0;
                try {
                    v = std::stod(value, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used == 0 || used != value.size() || !std::isfinite(v)) {
                    throw UsageError(name + ": expected a number, got '" + value + "'");
                }
                if (v < k.lo || v > k.hi) throw UsageError(name + " = " + value + " is out of range" + range(k));
                break;
            }
            case Type::flag:
                if (value == "1" || value == "on" || value == "yes") value = "true";
                if (value == "0" || value == "off" || value == "no") value = "false";
                if (value != "true" && value != "false") throw UsageError(name + ": expected true or false");
                break;
            case Type::choice:
                if (std::find(k.choices.begin(), k.choices.end(), value) == k.choices.end()) {
                    throw UsageError(name + ": '" + value + "' is not one of the allowed values");
                }
                break;
            case Type::text: break;
        }
        values_[name] = value;
    }

    /// `key = value` lines; '#' starts a comment.
    void merge_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot read config file: " + path.string());
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
            }
            try {
                set(trim(line.substr(0, eq)), line.substr(eq + 1));
            } catch (const UsageError& e) {
                throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    /// `key=value` override, as given on the command line.
    void merge_assignment(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("expected key=value, got '" + kv + "'");
        set(trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }

    const std::string& text(const std::string& name) const {
        key(name);
        return values_.at(name);
    }
    long long integer(const std::string& name) const { return std::stoll(text(name)); }
    int int_value(const std::string& name) const { return static_cast<int>(integer(name)); }
    double real(const std::string& name) const { return std::stod(text(name)); }
    bool flag(const std::string& name) const { return text(name) == "true"; }
    std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

    /// Path-valued key; throws a usage error naming the key when empty.
    std::filesystem::path path(const std::string& name) const {
        const auto& v = text(name);
        if (v.empty()) throw UsageError("missing required input: --" + name);
        return v;
    }
    std::filesystem::path existing(const std::string& name) const {
        const auto p = path(name);
        if (!std::filesystem::exists(p)) throw UsageError("input not found (--" + name + "): " + p.string());
        return p;
    }

    /// Every resolved key in schema order; parseable by merge_file.
    std::string dump() const {
        std::ostringstream os;
        for (const auto& k : schema()) os << k.name << " = " << values_.at(k.name) << '\n';
        return os.str();
    }

    static std::string usage_table() {
        std::ostringstream os;
        for (const auto& k : schema()) {
            os << "  " << k.name << std::string(k.name.size() < 16 ? 16 - k.name.size() : 1, ' ') << k.doc;
            if (!k.fallback.empty()) os << " [" << k.fallback << "]";
            os << '\n';
        }
        return os.str();
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
    }
    static std::string range(const Key& k) {
        std::ostringstream os;
        os << " [" << k.lo << ", " << k.hi << "]";
        return os.str();
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Content hashes.

inline std::string sha1_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1) {
        throw std::runtime_error("SHA-1 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

/// Same id as `git hash-object`: SHA-1 of "blob <size>\0<content>".
inline std::string git_blob_hash(std::string_view content) {
    std::string buf = "blob " + std::to_string(content.size());
    buf.push_back('\0');
    buf.append(content);
    return sha1_hex(buf);
}

/// Files hash as git blobs; a directory hashes as the git blob of its sorted
/// recursive listing of "<blob-hash> <relative-path>" lines.
inline std::string content_hash(const std::filesystem::path& p) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(p)) {
        const auto bytes = detail::read_all(p);
        return git_blob_hash({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
    }
    if (!fs::is_directory(p)) throw UsageError("cannot hash missing input: " + p.string());
    std::vector<std::string> lines;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (!e.is_regular_file()) continue;
        lines.push_back(content_hash(e.path()) + " " + fs::relative(e.path(), p).generic_string());
    }
    std::sort(lines.begin(), lines.end(), [](const std::string& a, const std::string& b) {
        return a.substr(41) < b.substr(41);
    });
    std::string listing;
    for (const auto& l : lines) listing += l + "\n";
    return git_blob_hash(listing);
}

/// record.cfg: comment header (command, input hashes) followed by the fully
/// resolved config, so `mgaug <command> --config record.cfg` replays the run.
inline void write_record(const std::filesystem::path& out_dir, const std::string& command, const RunConfig& cfg,
                         const std::vector<std::string>& input_keys) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir / "record.cfg");
    os << "# mgaug reproducibility record\n# command: " << command << "\n# seed: " << cfg.seed() << '\n';
    for (const auto& k : input_keys) {
        const auto& v = cfg.text(k);
        if (!v.empty()) os << "# input " << k << " " << content_hash(v) << '\n';
    }
    os << cfg.dump();
    if (!os) throw std::runtime_error("could not write " + (out_dir / "record.cfg").string());
}

}  // namespace mgaug
