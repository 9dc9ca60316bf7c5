#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fw {

// Flat key=value run configuration. Every tunable has a default; unknown keys
// are rejected; the resolved set is echoed into the run directory verbatim.
class RunConfig {
public:
    RunConfig();  // defaults only

    static RunConfig from_file(const std::string& path);
    void set(const std::string& key, const std::string& value);  // rejects unknown keys

    std::string get(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::int64_t> get_int_list(const std::string& key) const;

    // Full resolved key set, sorted, one "key=value" per line.
    std::string render() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace fw
