#include "fw/config.hpp"

#include <fstream>

#include "fw/error.hpp"

namespace fw {

namespace {

const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> kDefaults = {
        {"seed", "0"},
        {"data.dir", "data"},
        {"data.scenes", "60"},
        {"data.classes", "9"},
        {"data.size", "64"},
        {"data.labeled_fraction", "0.2"},
        {"data.test_fraction", "0.0833333"},
        {"data.domain", "target"},
        {"backbone.in_channels", "3"},
        {"backbone.channels", "32,64,128,256"},
        {"backbone.decoder_channels", "128,64,32,16"},
        {"adapter.stages", "3,4"},
        {"adapter.rho", "auto"},
        {"adapter.rho.stage1", "auto"},
        {"adapter.rho.stage2", "auto"},
        {"adapter.rho.stage3", "auto"},
        {"adapter.rho.stage4", "auto"},
        {"adapter.bottleneck", "16"},
        {"train.mode", "fw+uats"},
        {"train.lr", "5e-4"},
        {"train.batch", "2"},
        {"train.epochs", "50"},
        {"semisup.alpha", "0.99"},
        {"semisup.lambda", "0.1"},
        {"aug.weak_noise", "0.01"},
        {"aug.strong_noise", "0.05"},
        {"aug.jitter", "1"},
        {"aug.cutout", "1"},
        {"pretrain.epochs", "24"},
        {"pretrain.scenes", "40"},
        {"pretrain.lr", "1e-3"},
        {"pretrain.batch", "2"},
        {"pretrain.checkpoint", "backbone.fwck"},
        {"ablate.seeds", "3"},
        {"ablate.epochs", "15"},
    };
    return kDefaults;
}

std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = strip(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        cfg.set(strip(t.substr(0, eq)), strip(t.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (defaults().find(key) == defaults().end())
        throw ConfigError("unknown config key: " + key);
    values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t pos = 0;
        const std::int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw ConfigError("");
        return r;
    } catch (...) {
        throw ConfigError("config key " + key + " is not an integer: " + v);
    }
}

double RunConfig::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw ConfigError("");
        return r;
    } catch (...) {
        throw ConfigError("config key " + key + " is not a number: " + v);
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: " + v);
}

std::vector<std::int64_t> RunConfig::get_int_list(const std::string& key) const {
    const std::string v = get(key);
    std::vector<std::int64_t> out;
    std::size_t start = 0;
    if (strip(v).empty()) return out;
    while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const std::string part =
            strip(comma == std::string::npos ? v.substr(start) : v.substr(start, comma - start));
        if (part.empty()) throw ConfigError("config key " + key + ": empty list element");
        try {
            out.push_back(std::stoll(part));
        } catch (...) {
            throw ConfigError("config key " + key + ": bad integer " + part);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string RunConfig::render() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

}  // namespace fw
