#include "mecam/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mecam/error.hpp"

namespace mecam {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
    T v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw UsageError("config key '" + key + "': expected an integer, got '" + text + "'");
    }
    return v;
}

double parse_number(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw UsageError("config key '" + key + "': expected a number, got '" + text + "'");
    }
    return v;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    for (const auto& item : split_list(value)) out.push_back(parse_integer<int>(key, item));
    return out;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const auto& item : split_list(value)) out.push_back(parse_number(key, item));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_same_v<T, double>) {
            out += format_real(items[i]);
        } else if constexpr (std::is_same_v<T, std::string>) {
            out += items[i];
        } else {
            out += std::to_string(items[i]);
        }
    }
    return out;
}

}  // namespace

void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    if (key == "seed") c.seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "epochs") c.epochs = parse_integer<int>(key, value);
    else if (key == "batch_size") c.batch_size = parse_integer<int>(key, value);
    else if (key == "lr_start") c.lr_start = parse_number(key, value);
    else if (key == "lr_end") c.lr_end = parse_number(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_number(key, value);
    else if (key == "momentum") c.momentum = parse_number(key, value);
    else if (key == "input_size") c.input_size = parse_integer<int>(key, value);
    else if (key == "in_channels") c.in_channels = parse_integer<int>(key, value);
    else if (key == "num_classes") c.num_classes = parse_integer<int>(key, value);
    else if (key == "stage_widths") c.stage_widths = parse_int_list(key, value);
    else if (key == "exit_stages") c.exit_stages = parse_int_list(key, value);
    else if (key == "exit_loss_weights") c.exit_loss_weights = parse_real_list(key, value);
    else if (key == "exit_mask") c.exit_mask = parse_int_list(key, value);
    else if (key == "target_tpr") c.target_tpr = parse_number(key, value);
    else if (key == "scorers") c.scorers = parse_scorer_list(value);
    else if (key == "mood_exit") {
        if (value.empty()) c.mood_exit.reset();
        else c.mood_exit = parse_integer<int>(key, value);
    }
    else if (key == "data_root") c.data_root = value;
    else if (key == "manifest") c.manifest = value;
    else if (key == "ood_manifest") c.ood_manifest = split_list(value);
    else if (key == "checkpoint") c.checkpoint = value;
    else if (key == "out_dir") c.out_dir = value;
    else throw UsageError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& config, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
        }
        apply_setting(config, line.substr(0, eq), line.substr(eq + 1));
    }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(config, ss.str());
}

void apply_seed_env(RunConfig& config) {
    if (const char* env = std::getenv("MECAM_SEED"); env && *env) {
        config.seed = parse_integer<std::uint64_t>("MECAM_SEED", trim(env));
    }
}

std::string format_config(const RunConfig& c) {
    std::vector<std::string> scorer_names;
    for (Scorer s : c.scorers) scorer_names.emplace_back(to_string(s));
    std::ostringstream out;
    out << "seed=" << c.seed << '\n'
        << "epochs=" << c.epochs << '\n'
        << "batch_size=" << c.batch_size << '\n'
        << "lr_start=" << format_real(c.lr_start) << '\n'
        << "lr_end=" << format_real(c.lr_end) << '\n'
        << "weight_decay=" << format_real(c.weight_decay) << '\n'
        << "momentum=" << format_real(c.momentum) << '\n'
        << "input_size=" << c.input_size << '\n'
        << "in_channels=" << c.in_channels << '\n'
        << "num_classes=" << c.num_classes << '\n'
        << "stage_widths=" << join(c.stage_widths) << '\n'
        << "exit_stages=" << join(c.exit_stages) << '\n'
        << "exit_loss_weights=" << join(c.exit_loss_weights) << '\n'
        << "exit_mask=" << join(c.exit_mask) << '\n'
        << "target_tpr=" << format_real(c.target_tpr) << '\n'
        << "scorers=" << join(scorer_names) << '\n'
        << "mood_exit=" << (c.mood_exit ? std::to_string(*c.mood_exit) : std::string()) << '\n'
        << "data_root=" << c.data_root << '\n'
        << "manifest=" << c.manifest << '\n'
        << "ood_manifest=" << join(c.ood_manifest) << '\n'
        << "checkpoint=" << c.checkpoint << '\n'
        << "out_dir=" << c.out_dir << '\n';
    return out.str();
}

void write_resolved_config(const RunConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "config.resolved";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
    out << format_config(config);
}

ModelConfig model_config(const RunConfig& c) {
    ModelConfig m;
    m.in_channels = c.in_channels;
    m.num_classes = c.num_classes;
    m.stage_widths = c.stage_widths;
    m.exit_stages = c.exit_stages;
    m.input_size = c.input_size;
    m.validate();
    return m;
}

TrainOptions train_options(const RunConfig& c) {
    TrainOptions t;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.lr_start = c.lr_start;
    t.lr_end = c.lr_end;
    t.weight_decay = c.weight_decay;
    t.momentum = c.momentum;
    t.exit_loss_weights = c.exit_loss_weights;
    t.seed = c.seed;
    return t;
}

ScoreOptions score_options(const RunConfig& c) {
    ScoreOptions s;
    s.exit_mask = c.exit_mask;
    s.mood_stage = c.mood_exit;
    return s;
}

}  // namespace mecam
