#pragma once

// Run configuration files: "key = value" lines, '#' starts a comment, blank
// lines ignored.  Keys are consumed through typed getters with defaults; any
// file key nobody asked for is an error, and resolved() reports every value
// that was used together with where it came from.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace xgpt {

class Config {
public:
    Config() : origin_("<empty>") {}

    static Config from_string(const std::string& text, const std::string& origin) {
        Config cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                         ": expected 'key = value', got '" + trimmed + "'");
            }
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) {
                throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": empty key");
            }
            if (cfg.entries_.count(key)) {
                throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                         ": duplicate key '" + key + "'");
            }
            cfg.entries_[key] = Entry{value, "config", false};
        }
        return cfg;
    }

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file " + path);
        std::ostringstream text;
        text << in.rdbuf();
        return from_string(text.str(), path);
    }

    const std::string& origin() const { return origin_; }

    // Command-line overrides win over file values.
    void override_value(const std::string& key, const std::string& value) {
        entries_[key] = Entry{value, "override", false};
    }

    std::string get_str(const std::string& key, const std::string& fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) {
            used_[key] = Used{fallback, "default"};
            return fallback;
        }
        it->second.consumed = true;
        used_[key] = Used{it->second.value, it->second.source};
        return it->second.value;
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) {
        return parse_unsigned(key, get_str(key, std::to_string(fallback)));
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        return parse_unsigned(key, get_str(key, std::to_string(fallback)));
    }

    double get_double(const std::string& key, double fallback) {
        const std::string raw = get_str(key, format_double(fallback));
        try {
            std::size_t end = 0;
            const double v = std::stod(raw, &end);
            if (end != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error(origin_ + ": key '" + key + "': not a number: '" + raw + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        const std::string raw = get_str(key, fallback ? "true" : "false");
        if (raw == "true" || raw == "1" || raw == "yes") return true;
        if (raw == "false" || raw == "0" || raw == "no") return false;
        throw std::runtime_error(origin_ + ": key '" + key + "': not a boolean: '" + raw + "'");
    }

    // Call after every getter ran: file keys nobody consumed are mistakes.
    void reject_unknown_keys() const {
        std::string unknown;
        for (const auto& [key, entry] : entries_) {
            if (!entry.consumed) {
                if (!unknown.empty()) unknown += ", ";
                unknown += "'" + key + "'";
            }
        }
        if (!unknown.empty()) {
            throw std::runtime_error(origin_ + ": unknown keys: " + unknown);
        }
    }

    // Every consumed key with its effective value and source, one per line.
    std::string resolved() const {
        std::string out;
        for (const auto& [key, used] : used_) {
            out += key + " = " + used.value + "  # " + used.source + "\n";
        }
        return out;
    }

private:
    struct Entry {
        std::string value;
        std::string source;
        bool consumed = false;
    };
    struct Used {
        std::string value;
        std::string source;
    };

    static std::string trim(const std::string& s) {
        std::size_t b = 0;
        std::size_t e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    std::uint64_t parse_unsigned(const std::string& key, const std::string& raw) const {
        try {
            std::size_t end = 0;
            if (!raw.empty() && raw[0] == '-') throw std::invalid_argument(raw);
            const unsigned long long v = std::stoull(raw, &end);
            if (end != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error(origin_ + ": key '" + key + "': not a non-negative integer: '" +
                                     raw + "'");
        }
    }

    static std::string format_double(double v) {
        std::ostringstream out;
        out << v;
        return out.str();
    }

    std::string origin_;
    std::map<std::string, Entry> entries_;
    std::map<std::string, Used> used_;
};

} // namespace xgpt
