#pragma once

// Experiment configuration as a flat key=value text file.

#include "bcpnn/feedforward.hpp"
#include "bcpnn/probe.hpp"
#include "bcpnn/recurrent.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace bcpnn {

struct config_error : std::runtime_error {
    config_error(const std::string& key, const std::string& msg) : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(key) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct ExperimentConfig {
    int input_hypercolumns = kImagePixels;
    int input_minicolumns = 2;
    int hidden_hypercolumns = 100;
    int hidden_minicolumns = 100;
    double p_conn = 0.10;
    double alpha = 1e-4;
    double trace_floor = kTraceFloor;
    int timesteps = 20;
    double eps_conv = kConvergenceTolerance;

    int epochs = 3;
    int rewire_epochs = 2;
    double swap_fraction = 0.1;
    bool shuffle = true;
    std::uint64_t seed = 1;
    std::size_t param_interval = 1000;
    bool data_init = true;
    double activity_noise = 1.0;
    int noise_epochs = 1;
    std::size_t train_samples = 0;  ///< 0 uses the whole training file

    int recurrent_epochs = 1;
    DriveMode drive_mode = DriveMode::clamped_init;
    double drive_gain = 1.0;

    std::size_t test_samples = 1000;
    double theta_low = 0.5;
    double theta_high = 0.9;
    int probe_passes = 20;
    double probe_step = 0.01;
    int probe_trials = 5;
    std::uint64_t probe_seed = 7;
    std::uint64_t distort_seed = 2020;
    std::size_t samples_per_cell = 10;

    std::size_t batch_size = 1000;

    FeedforwardConfig feedforward() const {
        FeedforwardConfig c;
        c.hidden = LayerGeometry(hidden_hypercolumns, hidden_minicolumns);
        c.p_conn = p_conn;
        c.alpha = alpha;
        c.trace_floor = trace_floor;
        c.epochs = epochs;
        c.rewire_epochs = rewire_epochs;
        c.swap_fraction = swap_fraction;
        c.shuffle = shuffle;
        c.seed = seed;
        c.param_interval = param_interval;
        c.data_init = data_init;
        c.activity_noise = activity_noise;
        c.noise_epochs = noise_epochs;
        c.batch_size = batch_size;
        return c;
    }

    RecurrentConfig recurrent() const {
        RecurrentConfig c;
        c.alpha = alpha;
        c.trace_floor = trace_floor;
        c.epochs = recurrent_epochs;
        c.timesteps = timesteps;
        c.drive_mode = drive_mode;
        c.drive_gain = drive_gain;
        c.eps_conv = eps_conv;
        c.shuffle = shuffle;
        c.seed = seed;
        c.batch_size = batch_size;
        return c;
    }

    ProbeConfig probe() const { return {probe_passes, probe_step, probe_trials, probe_seed}; }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    bool ok = !text.empty() && ec == std::errc{} && ptr == end;
    if constexpr (std::is_floating_point_v<T>) ok = ok && std::isfinite(v);
    if (!ok) throw config_error(key, "cannot parse '" + text + "' as a number");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw config_error(key, "expected true or false, got '" + text + "'");
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct ConfigKey {
    std::string name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
ConfigKey numeric_key(std::string name, T ExperimentConfig::*field, T lo, T hi) {
    auto set = [=](ExperimentConfig& c, const std::string& text) {
        const T v = parse_number<T>(name, text);
        if (v < lo || v > hi) {
            std::ostringstream os;
            os << "value " << text << " outside [" << lo << ", " << hi << "]";
            throw config_error(name, os.str());
        }
        c.*field = v;
    };
    auto get = [=](const ExperimentConfig& c) {
        if constexpr (std::is_floating_point_v<T>)
            return format_double(c.*field);
        else
            return std::to_string(c.*field);
    };
    return {std::move(name), set, get};
}

inline ConfigKey bool_key(std::string name, bool ExperimentConfig::*field) {
    return {name, [=](ExperimentConfig& c, const std::string& t) { c.*field = parse_bool(name, t); },
            [=](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

inline const std::vector<ConfigKey>& config_keys() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    constexpr auto big = std::numeric_limits<std::size_t>::max();
    constexpr auto big_seed = std::numeric_limits<std::uint64_t>::max();
    using E = ExperimentConfig;
    static const std::vector<ConfigKey> keys = {
        numeric_key("input_hypercolumns", &E::input_hypercolumns, kImagePixels, kImagePixels),
        numeric_key("input_minicolumns", &E::input_minicolumns, 2, 2),
        numeric_key("hidden_hypercolumns", &E::hidden_hypercolumns, 1, 10000),
        numeric_key("hidden_minicolumns", &E::hidden_minicolumns, 2, 10000),
        numeric_key("p_conn", &E::p_conn, 1e-6, 1.0),
        numeric_key("alpha", &E::alpha, 1e-12, 1.0),
        numeric_key("trace_floor", &E::trace_floor, 1e-300, 1e-2),
        numeric_key("timesteps", &E::timesteps, 1, 100000),
        numeric_key("eps_conv", &E::eps_conv, 1e-300, 1.0),
        numeric_key("epochs", &E::epochs, 0, 10000),
        numeric_key("rewire_epochs", &E::rewire_epochs, 0, 10000),
        numeric_key("swap_fraction", &E::swap_fraction, 0.0, 1.0),
        bool_key("shuffle", &E::shuffle),
        numeric_key("seed", &E::seed, std::uint64_t{0}, big_seed),
        numeric_key("param_interval", &E::param_interval, std::size_t{0}, big),
        bool_key("data_init", &E::data_init),
        numeric_key("activity_noise", &E::activity_noise, 0.0, inf),
        numeric_key("noise_epochs", &E::noise_epochs, 0, 10000),
        numeric_key("train_samples", &E::train_samples, std::size_t{0}, big),
        numeric_key("recurrent_epochs", &E::recurrent_epochs, 0, 10000),
        {"drive_mode", [](E& c, const std::string& t) {
             try {
                 c.drive_mode = parse_drive_mode(t);
             } catch (const parameter_error& e) {
                 throw config_error("drive_mode", e.what());
             }
         },
         [](const E& c) { return to_string(c.drive_mode); }},
        numeric_key("drive_gain", &E::drive_gain, 0.0, inf),
        numeric_key("test_samples", &E::test_samples, std::size_t{2}, big),
        numeric_key("theta_low", &E::theta_low, 1e-9, 1.0 - 1e-9),
        numeric_key("theta_high", &E::theta_high, 1e-9, 1.0 - 1e-9),
        numeric_key("probe_passes", &E::probe_passes, 1, 100000),
        numeric_key("probe_step", &E::probe_step, 1e-12, inf),
        numeric_key("probe_trials", &E::probe_trials, 1, 1000),
        numeric_key("probe_seed", &E::probe_seed, std::uint64_t{0}, big_seed),
        numeric_key("distort_seed", &E::distort_seed, std::uint64_t{0}, big_seed),
        numeric_key("samples_per_cell", &E::samples_per_cell, std::size_t{1}, std::size_t{1000}),
        numeric_key("batch_size", &E::batch_size, std::size_t{1}, big),
    };
    return keys;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Checks relations between keys that single-key ranges cannot express.
inline void validate(const ExperimentConfig& c) {
    if (c.rewire_epochs > c.epochs) throw config_error("rewire_epochs", "exceeds epochs");
    if (c.noise_epochs > c.epochs) throw config_error("noise_epochs", "exceeds epochs");
    if (!(c.theta_low < c.theta_high)) throw config_error("theta_low", "must be below theta_high");
}

/// Sets one key from its text value.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
    for (const auto& k : detail::config_keys())
        if (k.name == key) return k.set(c, value);
    throw config_error(key, "unknown configuration key");
}

/// Parses `key = value` lines over the defaults. Blank lines and lines starting with '#' are ignored.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = detail::trim(line);
        if (body.empty() || body[0] == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw config_error("", "line " + std::to_string(line_no) + ": expected key = value");
        const auto key = detail::trim(body.substr(0, eq));
        if (!seen.emplace(key, line_no).second) throw config_error(key, "given twice");
        set_config_value(c, key, detail::trim(body.substr(eq + 1)));
    }
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("", "cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every key in documented order; parse_config(to_text(c)) reproduces c exactly.
inline std::string to_text(const ExperimentConfig& c) {
    std::string out;
    for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(c) + "\n";
    return out;
}

/// Desk preset: hidden hypercolumns and minicolumns times `scale`, training set 40000 * scale samples
/// (all samples at scale 1), and alpha raised by the same factor the training set shrinks so that one pass
/// still spans the same number of trace time constants.
inline void apply_scale(ExperimentConfig& c, double scale, std::size_t full_train = 60000) {
    if (!(scale > 0.0 && scale <= 1.0)) throw config_error("scale", "must lie in (0, 1]");
    if (scale == 1.0) return;
    c.hidden_hypercolumns = std::max(1, static_cast<int>(std::lround(c.hidden_hypercolumns * scale)));
    c.hidden_minicolumns = std::max(2, static_cast<int>(std::lround(c.hidden_minicolumns * scale)));
    c.train_samples = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(40000.0 * scale)));
    c.alpha = std::min(1.0, c.alpha * static_cast<double>(full_train) / static_cast<double>(c.train_samples));
}

}  // namespace bcpnn
