#pragma once

#include <map>
#include <string>
#include <vector>

#include "rtdlab/errors.hpp"

namespace rtdlab {

struct ConfigKeyInfo {
    const char* key;
    const char* default_value;
    const char* help;
};

// Flat `section.key = value` configuration. All keys are registered with
// defaults; unknown keys are rejected. File values overlay the defaults and
// command-line --set flags overlay the file.
class Config {
public:
    static Config defaults();
    static const std::vector<ConfigKeyInfo>& registry();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    int geti(const std::string& key) const;
    double getf(const std::string& key) const;
    bool getb(const std::string& key) const;
    const std::string& gets(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_float_list(const std::string& key) const;

    // canonical text form, one sorted `key = value` line each
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace rtdlab
