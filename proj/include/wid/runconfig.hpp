// Plain "key = value" run configuration. '#' starts a comment, blank lines
// are ignored. Every key in the file must be consumed by the program; unknown
// keys fail the run instead of being silently dropped. The resolved values
// (including defaults that were filled in) can be written back out so a run
// directory records exactly what it ran with.
#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace wid {

class RunConfig {
  public:
    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return raw_.count(key) > 0; }
    void set(const std::string& key, const std::string& value);  // CLI overrides

    std::string gets(const std::string& key, const std::string& def);
    int geti(const std::string& key, int def);
    int64_t geti64(const std::string& key, int64_t def);
    uint64_t getu64(const std::string& key, uint64_t def);
    float getf(const std::string& key, float def);
    bool getb(const std::string& key, bool def);

    std::string req_s(const std::string& key);
    int req_i(const std::string& key);

    // throws ConfigError when a key was never read
    void assert_consumed() const;
    // resolved key=value lines, sorted
    std::string resolved_text() const;
    void write_resolved(const std::string& path) const;

  private:
    std::string lookup(const std::string& key, const std::string& def, bool required);
    std::map<std::string, std::string> raw_;
    std::map<std::string, bool> consumed_;
    std::map<std::string, std::string> resolved_;
    std::string origin_;
};

}  // namespace wid
