#ifndef ADJUD_CONFIG_HPP
#define ADJUD_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

namespace adjud {

// Flat `key = value` configuration file. `#` starts a comment; vector values
// are written as bracketed comma lists, e.g. `gamma = [0.05, 0.02, -0.4]`.
class Config {
public:
    Config() = default;
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_vector(const std::string& key) const;
    std::vector<double> get_vector(const std::string& key, const std::vector<double>& fallback) const;

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    const std::map<std::string, std::string>& items() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace adjud

#endif
