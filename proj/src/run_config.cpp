#include "dsdg/run_config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "dsdg/error.hpp"
#include "dsdg/eval.hpp"

namespace dsdg {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size() || text.empty())
        throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not a valid number");
    return value;
}

std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

// Paths are stored absolute so a snapshot is meaningful from any directory.
fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute()) return p;
    return fs::absolute(base.empty() ? p : base / p).lexically_normal();
}

struct Entry {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view key, std::string_view value, const fs::path& base)> set;
};

template <class Access>
Entry int_entry(Access access) {
    return {[access](const RunConfig& c) { return std::to_string(access(c)); },
            [access](RunConfig& c, std::string_view k, std::string_view v, const fs::path&) {
                access(c) = parse_number<int>(k, v);
            }};
}

template <class Access>
Entry seed_entry(Access access) {
    return {[access](const RunConfig& c) { return std::to_string(access(c)); },
            [access](RunConfig& c, std::string_view k, std::string_view v, const fs::path&) {
                access(c) = parse_number<std::uint64_t>(k, v);
            }};
}

template <class Access>
Entry real_entry(Access access) {
    return {[access](const RunConfig& c) { return format_double(access(c)); },
            [access](RunConfig& c, std::string_view k, std::string_view v, const fs::path&) {
                access(c) = parse_number<double>(k, v);
            }};
}

template <class Access>
Entry text_entry(Access access) {
    return {[access](const RunConfig& c) { return access(c); },
            [access](RunConfig& c, std::string_view, std::string_view v, const fs::path&) { access(c) = v; }};
}

template <class Access>
Entry path_entry(Access access) {
    return {[access](const RunConfig& c) { return access(c).string(); },
            [access](RunConfig& c, std::string_view, std::string_view v, const fs::path& base) {
                access(c) = resolve(fs::path(std::string(v)), base);
            }};
}

#define DSDG_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::map<std::string, Entry, std::less<>>& table() {
    static const std::map<std::string, Entry, std::less<>> t = {
        {"data.manifest", path_entry(DSDG_FIELD(data.manifest))},
        {"data.pairing", text_entry(DSDG_FIELD(data.pairing))},
        {"gen.latent_dim", int_entry(DSDG_FIELD(gen.latent_dim))},
        {"gen.base_channels", int_entry(DSDG_FIELD(gen.base_channels))},
        {"gen.stages", int_entry(DSDG_FIELD(gen.stages))},
        {"gen.steps", int_entry(DSDG_FIELD(gen.steps))},
        {"gen.batch_size", int_entry(DSDG_FIELD(gen.batch_size))},
        {"gen.lr", real_entry(DSDG_FIELD(gen.lr))},
        {"gen.seed", seed_entry(DSDG_FIELD(gen.seed))},
        {"gen.lambda_mmd", real_entry(DSDG_FIELD(gen.weights.lambda_mmd))},
        {"gen.lambda_pair", real_entry(DSDG_FIELD(gen.weights.lambda_pair))},
        {"gen.lambda_ort", real_entry(DSDG_FIELD(gen.weights.lambda_ort))},
        {"gen.lambda_cls", real_entry(DSDG_FIELD(gen.weights.lambda_cls))},
        {"generate.n", int_entry(DSDG_FIELD(generate.n))},
        {"generate.seed", seed_entry(DSDG_FIELD(generate.seed))},
        {"backbone.kind",
         {[](const RunConfig& c) { return to_string(c.backbone.kind); },
          [](RunConfig& c, std::string_view, std::string_view v, const fs::path&) {
              c.backbone.kind = parse_backbone_kind(std::string(v));
          }}},
        {"backbone.cdc_theta", real_entry(DSDG_FIELD(backbone.cdc_theta))},
        {"backbone.width", real_entry(DSDG_FIELD(backbone.width))},
        {"fas.steps", int_entry(DSDG_FIELD(fas.steps))},
        {"fas.batch_size", int_entry(DSDG_FIELD(fas.batch_size))},
        {"fas.lr", real_entry(DSDG_FIELD(fas.lr))},
        {"fas.seed", seed_entry(DSDG_FIELD(fas.seed))},
        {"fas.lambda_kl", real_entry(DSDG_FIELD(fas.weights.lambda_kl))},
        {"fas.lambda_g", real_entry(DSDG_FIELD(fas.weights.lambda_g))},
        {"fas.ratio_r", real_entry(DSDG_FIELD(fas.weights.ratio_r))},
        {"fas.generated_manifest", path_entry(DSDG_FIELD(fas.generated_manifest))},
        {"eval.protocol", text_entry(DSDG_FIELD(eval.protocol))},
        {"eval.dev_manifest", path_entry(DSDG_FIELD(eval.dev_manifest))},
        {"eval.test_manifest", path_entry(DSDG_FIELD(eval.test_manifest))},
    };
    return t;
}

#undef DSDG_FIELD

const Entry& lookup(std::string_view key) {
    const auto& t = table();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown configuration key '" + std::string(key) + "'");
    return it->second;
}

void set_resolved(RunConfig& cfg, std::string_view key, std::string_view value, const fs::path& base) {
    lookup(key).set(cfg, key, value, base);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { set_resolved(*this, key, value, fs::current_path()); }

std::string RunConfig::get(std::string_view key) const { return lookup(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& [name, _] : table()) out.push_back(name);
        return out;
    }();
    return k;
}

void RunConfig::validate() const {
    parse_pairing(data.pairing);
    if (gen.latent_dim < 1) throw ConfigError("gen.latent_dim must be positive");
    if (gen.base_channels < 1) throw ConfigError("gen.base_channels must be positive");
    if (gen.stages < 1) throw ConfigError("gen.stages must be positive");
    if (gen.steps < 0) throw ConfigError("gen.steps must be nonnegative");
    if (gen.batch_size < 1) throw ConfigError("gen.batch_size must be positive");
    if (!(gen.lr > 0.0)) throw ConfigError("gen.lr must be positive");
    gen.weights.validate();
    if (generate.n < 0) throw ConfigError("generate.n must be nonnegative");
    backbone.validate();
    if (fas.steps < 0) throw ConfigError("fas.steps must be nonnegative");
    if (fas.batch_size < 1) throw ConfigError("fas.batch_size must be positive");
    if (!(fas.lr > 0.0)) throw ConfigError("fas.lr must be positive");
    fas.weights.validate();
    parse_protocol(eval.protocol);
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [name, entry] : table()) out += name + " = " + entry.get(*this) + "\n";
    return out;
}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
    RunConfig cfg;
    int line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
        const std::string_view key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        try {
            set_resolved(cfg, key, value, base_dir);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ResolutionError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str(), fs::absolute(path).parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
    std::vector<std::string> out;
    for (const auto& [name, entry] : table())
        if (entry.get(a) != entry.get(b)) out.push_back(name);
    return out;
}

RunDir RunDir::open(const fs::path& root, const RunConfig& cfg) {
    cfg.validate();
    RunDir dir;
    dir.root_ = fs::absolute(root);
    dir.config_ = cfg;
    if (fs::exists(dir.snapshot())) {
        const RunConfig previous = load_run_config(dir.snapshot());
        const auto changed = config_diff(previous, cfg);
        if (!changed.empty()) {
            std::string msg = "run directory " + dir.root_.string() + " was created with a different configuration (";
            for (std::size_t i = 0; i < changed.size(); ++i) msg += (i ? ", " : "") + changed[i];
            throw ConfigError(msg + "); use a new run directory");
        }
    } else {
        fs::create_directories(dir.root_);
        std::ofstream(dir.snapshot()) << cfg.to_text();
    }
    for (const auto& sub : {dir.checkpoints(), dir.reports(), dir.heatmaps()}) fs::create_directories(sub);
    return dir;
}

RunDir RunDir::attach(const fs::path& root) {
    const fs::path snapshot = fs::absolute(root) / "config.snapshot";
    if (!fs::exists(snapshot)) throw ResolutionError(root.string() + " is not a run directory (no config.snapshot)");
    return open(root, load_run_config(snapshot));
}

std::ofstream RunDir::open_history() const {
    std::ofstream out(history(), std::ios::app);
    if (!out) throw ResolutionError("cannot write " + history().string());
    return out;
}

}  // namespace dsdg
