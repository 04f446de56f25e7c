#include "mhd/config.hpp"

#include "mhd/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace mhd::config {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("invalid value '" + value + "' for " + key + ": expected " + expected);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    if (v == "inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) bad(key, v, "a number");
        return out;
    } catch (const std::logic_error&) {
        bad(key, v, "a number");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    bad(key, v, "true or false");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string num(double v) {
    if (std::isinf(v)) return "inf";
    // Shortest text that parses back to the same double.
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string yes(bool b) { return b ? "true" : "false"; }

template <typename E>
E to_enum(const std::string& key, const std::string& v, const std::vector<std::pair<std::string, E>>& names) {
    for (const auto& [n, e] : names)
        if (n == v) return e;
    std::string expected;
    for (const auto& [n, e] : names) expected += (expected.empty() ? "" : "|") + n;
    bad(key, v, expected);
}

template <typename E>
std::string enum_name(E e, const std::vector<std::pair<std::string, E>>& names) {
    for (const auto& [n, x] : names)
        if (x == e) return n;
    return "?";
}

const std::vector<std::pair<std::string, fed::BaselineMode>> kModes{{"mhd", fed::BaselineMode::mhd},
                                                                    {"fedavg", fed::BaselineMode::fedavg},
                                                                    {"separate", fed::BaselineMode::separate},
                                                                    {"pooled_supervised", fed::BaselineMode::pooled_supervised}};
const std::vector<std::pair<std::string, data::AssignmentMode>> kAssign{{"even", data::AssignmentMode::even},
                                                                        {"random", data::AssignmentMode::random}};
const std::vector<std::pair<std::string, distill::ConfidenceMode>> kConf{{"max_softmax", distill::ConfidenceMode::max_softmax},
                                                                         {"random", distill::ConfidenceMode::random}};
using Kind = fed::TopologySpec::Kind;
const std::vector<std::pair<std::string, Kind>> kKinds{{"complete", Kind::complete}, {"cycle", Kind::cycle},
                                                       {"islands", Kind::islands},   {"chain", Kind::chain},
                                                       {"custom", Kind::custom},     {"random", Kind::random}};

std::string edges_text(const std::vector<std::pair<int, int>>& edges) {
    std::string out;
    for (const auto& [a, b] : edges) out += (out.empty() ? "" : ",") + std::to_string(a) + ">" + std::to_string(b);
    return out;
}

std::vector<std::pair<int, int>> parse_edges(const std::string& key, const std::string& v) {
    std::vector<std::pair<int, int>> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto gt = item.find('>');
        if (gt == std::string::npos) bad(key, v, "edges like 0>1,1>2");
        out.emplace_back(static_cast<int>(to_size(key, trim(item.substr(0, gt)))),
                         static_cast<int>(to_size(key, trim(item.substr(gt + 1)))));
    }
    return out;
}

struct KeySpec {
    std::string key;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define MHD_SIZE(K, FIELD, HELP)                                                                              \
    KeySpec{K, HELP, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_size(k, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define MHD_DOUBLE(K, FIELD, HELP)                                                                               \
    KeySpec{K, HELP, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); }, \
            [](const ExperimentConfig& c) { return num(c.FIELD); }}
#define MHD_BOOL(K, FIELD, HELP)                                                                               \
    KeySpec{K, HELP, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); }, \
            [](const ExperimentConfig& c) { return yes(c.FIELD); }}
#define MHD_ENUM(K, FIELD, TABLE, HELP)                                                                                \
    KeySpec{K, HELP, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_enum(k, v, TABLE); }, \
            [](const ExperimentConfig& c) { return enum_name(c.FIELD, TABLE); }}

const std::vector<KeySpec>& keys() {
    static const std::vector<KeySpec> table{
        KeySpec{"run.seed", "master seed; every random stream is derived from it",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.run.seed = to_u64(k, v); },
                [](const ExperimentConfig& c) { return std::to_string(c.run.seed); }},
        MHD_SIZE("run.total_steps", run.total_steps, "training steps per client"),
        MHD_SIZE("run.eval_interval", run.eval_interval, "steps between metric evaluations"),
        MHD_ENUM("run.mode", run.mode, kModes, "mhd | fedavg | separate | pooled_supervised"),
        MHD_BOOL("run.deterministic", run.deterministic, "train clients sequentially (bit-reproducible)"),
        MHD_BOOL("run.interleave", run.interleave, "alternate a private step and a distillation step"),

        MHD_SIZE("dataset.num_classes", run.dataset.num_classes, "number of labels d"),
        MHD_SIZE("dataset.samples_per_class", run.dataset.samples_per_class, "samples drawn per Gaussian cluster"),
        MHD_SIZE("dataset.input_dim", run.dataset.input_dim, "feature dimension"),
        MHD_DOUBLE("dataset.cluster_separation", run.dataset.cluster_separation, "distance of cluster centers from the origin"),
        MHD_DOUBLE("dataset.noise_sigma", run.dataset.noise_sigma, "per-feature noise standard deviation"),

        MHD_SIZE("partition.num_clients", run.partition.num_clients, "number of clients K"),
        MHD_SIZE("partition.primary_labels_per_client", run.partition.primary_labels_per_client, "primary labels per client"),
        MHD_ENUM("partition.assignment", run.partition.assignment_mode, kAssign, "even | random primary label assignment"),
        MHD_DOUBLE("partition.skewness", run.partition.skewness, "s: primary clients get (1+s)x weight; inf allowed"),
        MHD_DOUBLE("partition.public_fraction", run.partition.public_fraction, "fraction of non-test samples made public"),
        MHD_DOUBLE("partition.test_fraction", run.partition.test_fraction, "per-class fraction held out as shared test"),

        KeySpec{"model.hidden", "backbone hidden widths, comma separated",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.run.model.hidden = to_sizes(k, v); },
                [](const ExperimentConfig& c) { return join(c.run.model.hidden); }},
        MHD_SIZE("model.embedding_dim", run.model.embedding_dim, "embedding size"),
        MHD_SIZE("model.num_aux_heads", run.model.num_aux_heads, "auxiliary heads m"),

        MHD_DOUBLE("distill.nu_emb", run.distill.nu_emb, "embedding distillation weight"),
        MHD_DOUBLE("distill.nu_aux", run.distill.nu_aux, "auxiliary head distillation weight"),
        MHD_SIZE("distill.delta", run.distill.delta, "teachers sampled from the pool per step"),
        MHD_ENUM("distill.confidence", run.distill.confidence_mode, kConf, "max_softmax | random target selection"),
        MHD_BOOL("distill.include_self", run.distill.include_self, "student's own rank-k head is a candidate"),
        MHD_BOOL("distill.include_same_level", run.distill.include_same_level, "teachers' rank-k heads are candidates"),
        MHD_BOOL("distill.include_own_previous", run.distill.include_own_previous, "student's own rank-(k-1) head is a candidate"),
        MHD_BOOL("distill.skip_if_student_more_confident", run.distill.skip_if_student_more_confident,
                 "skip samples where the student is more confident than the target"),
        MHD_DOUBLE("distill.temperature", run.distill.temperature, "teacher softmax temperature"),

        MHD_SIZE("pool.size", run.pool_size, "checkpoint pool capacity N_P; 0 = number of clients"),
        MHD_SIZE("pool.interval", run.pool_interval, "steps between pool updates S_P"),

        MHD_ENUM("topology.kind", run.topology.kind, kKinds, "complete | cycle | islands | chain | custom | random"),
        MHD_SIZE("topology.island_size", run.topology.island_size, "islands: clients per island"),
        KeySpec{"topology.edges", "custom: directed edges i>j (i distills from j), comma separated",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.run.topology.edges = parse_edges(k, v); },
                [](const ExperimentConfig& c) { return edges_text(c.run.topology.edges); }},
        MHD_SIZE("topology.out_degree", run.topology.random_out_degree, "random: out-neighbors per client"),
        MHD_BOOL("topology.dynamic", run.topology.dynamic, "random: resample neighbors every step"),

        MHD_SIZE("optimizer.batch_size", run.optimizer.batch_size, "private batch size"),
        MHD_SIZE("optimizer.public_batch_size", run.optimizer.public_batch_size, "public distillation batch size"),
        MHD_DOUBLE("optimizer.lr", run.optimizer.lr, "base learning rate (cosine decay)"),
        MHD_DOUBLE("optimizer.momentum", run.optimizer.momentum, "SGD momentum"),

        MHD_SIZE("baseline.fedavg_interval", run.fedavg_interval, "fedavg: steps between averaging rounds u"),

        MHD_SIZE("comm.top_k", run.comm.top_k, "predictions sent per head and sample"),
        MHD_SIZE("comm.value_bytes", run.comm.value_bytes, "bytes per transmitted value"),
        MHD_SIZE("comm.index_bytes", run.comm.index_bytes, "bytes per transmitted class index"),
        MHD_SIZE("comm.sample_id_bytes", run.comm.sample_id_bytes, "bytes per public sample id"),

        KeySpec{"output.dir", "run directory",
                [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output.dir = v; },
                [](const ExperimentConfig& c) { return c.output.dir; }},
        MHD_BOOL("output.checkpoints", output.checkpoints, "write final client checkpoints"),
    };
    return table;
}

#undef MHD_SIZE
#undef MHD_DOUBLE
#undef MHD_BOOL
#undef MHD_ENUM

constexpr const char* kOverridePrefix = "model.hidden_override.";

}  // namespace

Entries parse_text(const std::string& text) {
    Entries out;
    std::istringstream in(text);
    std::string line, section;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(no) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(no) + ": empty key");
        out.emplace_back(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
    }
    return out;
}

bool is_known_key(const std::string& key) {
    if (key.rfind(kOverridePrefix, 0) == 0) return true;
    for (const auto& k : keys())
        if (k.key == key) return true;
    return false;
}

void apply(ExperimentConfig& config, const std::string& key, const std::string& value) {
    if (key.rfind(kOverridePrefix, 0) == 0) {
        const int client = static_cast<int>(to_size(key, key.substr(std::string(kOverridePrefix).size())));
        config.run.hidden_overrides[client] = to_sizes(key, value);
        return;
    }
    for (const auto& k : keys())
        if (k.key == key) return k.set(config, key, value);
    throw ConfigError("unknown config key '" + key + "'");
}

std::pair<std::string, std::string> split_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))};
}

ExperimentConfig from_text(const std::string& text, const std::vector<std::string>& overrides) {
    ExperimentConfig c;
    for (const auto& [k, v] : parse_text(text)) apply(c, k, v);
    for (const auto& o : overrides) {
        const auto [k, v] = split_assignment(o);
        apply(c, k, v);
    }
    return c;
}

ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), overrides);
}

std::string to_text(const ExperimentConfig& config) {
    std::ostringstream os;
    std::string section;
    for (const auto& k : keys()) {
        const auto dot = k.key.find('.');
        const std::string s = k.key.substr(0, dot);
        if (s != section) {
            os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
            section = s;
        }
        os << k.key.substr(dot + 1) << " = " << k.get(config) << '\n';
        if (k.key == "model.num_aux_heads")
            for (const auto& [client, widths] : config.run.hidden_overrides)
                os << "hidden_override." << client << " = " << join(widths) << '\n';
    }
    return os.str();
}

std::string reference() {
    const ExperimentConfig defaults;
    std::ostringstream os;
    os << "# key = default    description\n";
    for (const auto& k : keys()) os << k.key << " = " << k.get(defaults) << "    # " << k.help << '\n';
    os << kOverridePrefix << "<client> = <widths>    # per-client backbone widths (heterogeneous models)\n";
    return os.str();
}

}  // namespace mhd::config
