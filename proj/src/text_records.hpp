#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "droughtcast/errors.hpp"

namespace droughtcast::detail {

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Plain-text records: a "<tag> <version>" line, then one "key value..." line per field.
class RecordWriter {
public:
    RecordWriter(const std::string& tag, int version) { out_ << tag << ' ' << version << '\n'; }

    void put(const std::string& key, std::size_t v) { out_ << key << ' ' << v << '\n'; }
    void put(const std::string& key, int v) { out_ << key << ' ' << v << '\n'; }
    void put(const std::string& key, double v) { out_ << key << ' ' << format_real(v) << '\n'; }
    void put(const std::string& key, const std::string& v) { out_ << key << ' ' << v << '\n'; }
    void put(const std::string& key, const std::vector<double>& v) {
        out_ << key << ' ' << v.size();
        for (double x : v) {
            out_ << ' ' << format_real(x);
        }
        out_ << '\n';
    }
    /// Raw line, for nested structures.
    void line(const std::string& text) { out_ << text << '\n'; }

    std::string str() const { return out_.str(); }

private:
    std::ostringstream out_;
};

class RecordReader {
public:
    RecordReader(const std::string& text, const std::string& tag, int version) {
        std::istringstream in(text);
        std::string got_tag;
        int got_version = 0;
        if (!(in >> got_tag) || got_tag != tag) {
            throw FormatError("expected a '" + tag + "' record");
        }
        if (!(in >> got_version) || got_version != version) {
            throw UnsupportedVersionError("unsupported " + tag + " version");
        }
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const auto sp = line.find(' ');
            const std::string key = line.substr(0, sp);
            fields_[key] = sp == std::string::npos ? std::string() : line.substr(sp + 1);
            order_.push_back(key);
        }
    }

    bool has(const std::string& key) const { return fields_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        const auto it = fields_.find(key);
        if (it == fields_.end()) {
            throw FormatError("missing field '" + key + "'");
        }
        return it->second;
    }

    std::size_t get_size(const std::string& key) const {
        try {
            return std::stoull(get(key));
        } catch (const std::logic_error&) {
            throw FormatError("field '" + key + "' is not an unsigned integer");
        }
    }

    double get_real(const std::string& key) const {
        try {
            return std::stod(get(key));
        } catch (const std::logic_error&) {
            throw FormatError("field '" + key + "' is not a number");
        }
    }

    /// Length-prefixed list; `expected` of SIZE_MAX skips the length check.
    std::vector<double> get_reals(const std::string& key, std::size_t expected = static_cast<std::size_t>(-1)) const {
        std::istringstream in(get(key));
        std::size_t n = 0;
        if (!(in >> n) || (expected != static_cast<std::size_t>(-1) && n != expected)) {
            throw FormatError("field '" + key + "' has the wrong length");
        }
        std::vector<double> v(n);
        for (auto& x : v) {
            std::string tok;
            if (!(in >> tok)) {
                throw FormatError("field '" + key + "' is truncated");
            }
            try {
                x = std::stod(tok);
            } catch (const std::logic_error&) {
                throw FormatError("field '" + key + "' holds a non-number");
            }
        }
        return v;
    }

private:
    std::map<std::string, std::string> fields_;
    std::vector<std::string> order_;
};

} // namespace droughtcast::detail
