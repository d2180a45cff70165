#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jumpctl/channel.hpp"
#include "jumpctl/closed_loop.hpp"
#include "jumpctl/errors.hpp"
#include "jumpctl/model.hpp"

// JSON schemas for configurations, gains and reports, plus the trace CSV
// writer. All matrices are arrays of rows; mode labels in configs and traces
// are 1-based, matching ModePath.

namespace jumpctl {

inline const char* kVersion = "0.1.0";

namespace io {

using nlohmann::json;

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
    if (!j.is_array() || j.empty())
        throw ConfigError("field '" + name + "' must be a non-empty array of rows");
    const bool nested = j.front().is_array();
    const int rows = static_cast<int>(j.size());
    const int cols = nested ? static_cast<int>(j.front().size()) : 1;
    Eigen::MatrixXd m(rows, nested ? cols : 1);
    for (int i = 0; i < rows; ++i) {
        if (nested) {
            const auto& row = j.at(i);
            if (!row.is_array() || static_cast<int>(row.size()) != cols)
                throw ConfigError("field '" + name + "' has ragged rows");
            for (int c = 0; c < cols; ++c) m(i, c) = row.at(c).get<double>();
        } else {
            m(i, 0) = j.at(i).get<double>();
        }
    }
    return m;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& name) {
    if (!j.is_array()) throw ConfigError("field '" + name + "' must be an array");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<long>(i)) = j.at(i).get<double>();
    return v;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(row);
    }
    return rows;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline MarkovChannel channel_from_json(const json& j, const std::string& name) {
    if (!j.contains("tpm") || !j.contains("delivery_prob"))
        throw ConfigError("channel '" + name + "' needs 'tpm' and 'delivery_prob'");
    MarkovChannel ch;
    ch.tpm = TransitionMatrix(matrix_from_json(j.at("tpm"), name + ".tpm"));
    ch.tpm.normalize_rows();
    ch.delivery_prob = vector_from_json(j.at("delivery_prob"), name + ".delivery_prob");
    return ch;
}

inline json channel_to_json(const MarkovChannel& ch) {
    return json{{"tpm", matrix_to_json(ch.tpm.entries)},
                {"delivery_prob", vector_to_json(ch.delivery_prob)}};
}

// Model object: A, B, G, L, H plus either C or Qc, and either D or Rc.
inline MjlsModel model_from_json(const json& j) {
    for (const char* key : {"A", "B", "G", "L", "H"})
        if (!j.contains(key)) throw ConfigError(std::string("model is missing '") + key + "'");
    MjlsModel m;
    m.A = matrix_from_json(j.at("A"), "A");
    m.B = matrix_from_json(j.at("B"), "B");
    m.G = matrix_from_json(j.at("G"), "G");
    m.L = matrix_from_json(j.at("L"), "L");
    m.H = matrix_from_json(j.at("H"), "H");
    m.noise_scale = j.value("noise_scale", 1.0);

    const bool has_c = j.contains("C"), has_qc = j.contains("Qc");
    const bool has_d = j.contains("D"), has_rc = j.contains("Rc");
    if (!has_c && !has_qc) throw ConfigError("model needs 'C' or 'Qc'");
    if (!has_d && !has_rc) throw ConfigError("model needs 'D' or 'Rc'");
    if (has_c) {
        m.C = matrix_from_json(j.at("C"), "C");
        m.Qc = m.C->adjoint() * *m.C;
    } else {
        m.Qc = matrix_from_json(j.at("Qc"), "Qc");
    }
    if (has_d) {
        m.D = matrix_from_json(j.at("D"), "D");
        m.Rc = m.D->adjoint() * *m.D;
    } else {
        m.Rc = matrix_from_json(j.at("Rc"), "Rc");
    }
    if (has_c != has_d) {
        // A lone output factor cannot pair with a bare weight; fall back to
        // the synthesized stacked factors for z.
        m.C.reset();
        m.D.reset();
    }
    return m;
}

inline json model_to_json(const MjlsModel& m) {
    json j{{"A", matrix_to_json(m.A)},       {"B", matrix_to_json(m.B)},
           {"G", matrix_to_json(m.G)},       {"L", matrix_to_json(m.L)},
           {"H", matrix_to_json(m.H)},       {"noise_scale", m.noise_scale},
           {"Qc", matrix_to_json(m.Qc)},     {"Rc", matrix_to_json(m.Rc)}};
    if (m.C) j["C"] = matrix_to_json(*m.C);
    if (m.D) j["D"] = matrix_to_json(*m.D);
    return j;
}

} // namespace io

struct RunConfig {
    MjlsModel model;
    MarkovChannel actuation_channel;
    MarkovChannel sensing_channel;
    Eigen::VectorXd x0, xhat0;
    std::optional<int> theta0; // 0-based; unset means stationary draw
    std::optional<int> eta0;
    double solver_tol = 1e-10;
    long solver_max_iter = 100000;
    long sim_steps = 500;
    long sim_trials = 1;
    std::uint64_t sim_seed = 1;
    bool sim_noise_on = true;

    std::string canonical_json; // exact configuration text, for hashing
};

inline RunConfig parse_run_config(const std::string& text) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.contains("model")) throw ConfigError("config is missing 'model'");
    if (!j.contains("actuation_channel") || !j.contains("sensing_channel"))
        throw ConfigError("config needs 'actuation_channel' and 'sensing_channel'");

    RunConfig cfg;
    cfg.model = io::model_from_json(j.at("model"));
    cfg.actuation_channel = io::channel_from_json(j.at("actuation_channel"), "actuation_channel");
    cfg.sensing_channel = io::channel_from_json(j.at("sensing_channel"), "sensing_channel");

    const int nx = cfg.model.nx();
    cfg.x0 = Eigen::VectorXd::Zero(nx);
    cfg.xhat0 = Eigen::VectorXd::Zero(nx);
    if (j.contains("initial")) {
        const json& init = j.at("initial");
        if (init.contains("x0")) cfg.x0 = io::vector_from_json(init.at("x0"), "initial.x0");
        if (init.contains("xhat0"))
            cfg.xhat0 = io::vector_from_json(init.at("xhat0"), "initial.xhat0");
        auto parse_mode = [&](const char* key, int modes) -> std::optional<int> {
            if (!init.contains(key) || init.at(key) == "stationary") return std::nullopt;
            const int label = init.at(key).get<int>();
            if (label < 1 || label > modes)
                throw ConfigError(std::string("initial.") + key + " must be 'stationary' or in 1.." +
                                  std::to_string(modes));
            return label - 1;
        };
        cfg.theta0 = parse_mode("theta0", cfg.actuation_channel.modes());
        cfg.eta0 = parse_mode("eta0", cfg.sensing_channel.modes());
    }
    if (j.contains("solver")) {
        cfg.solver_tol = j.at("solver").value("tol", 1e-10);
        cfg.solver_max_iter = j.at("solver").value("max_iter", 100000L);
    }
    if (j.contains("sim")) {
        const json& s = j.at("sim");
        cfg.sim_steps = s.value("steps", 500L);
        cfg.sim_trials = s.value("trials", 1L);
        cfg.sim_seed = s.value("seed", 1UL);
        cfg.sim_noise_on = s.value("noise_on", true);
    }
    if (cfg.x0.size() != nx || cfg.xhat0.size() != nx)
        throw ConfigError("initial state dimension does not match the model");
    cfg.canonical_json = j.dump();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

// Collected validation problems, empty when the configuration is usable.
inline std::vector<std::string> validate_run_config(const RunConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& v : validate_model(cfg.model)) out.push_back("model: " + v);
    for (const auto& v : validate_channel(cfg.actuation_channel))
        out.push_back("actuation_channel: " + v);
    for (const auto& v : validate_channel(cfg.sensing_channel))
        out.push_back("sensing_channel: " + v);
    return out;
}

inline std::uint64_t fnv1a_hash(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

namespace io {

inline json gains_to_json(const ModeMatrices& f, const ModeMatrices& m) {
    json jf = json::array(), jm = json::array();
    for (const auto& g : f) jf.push_back(matrix_to_json(g));
    for (const auto& g : m) jm.push_back(matrix_to_json(g));
    return json{{"F", jf}, {"M", jm}};
}

struct GainsFile {
    ModeMatrices F, M;
    std::optional<BlockCollection> X, Y; // solution blocks when present
};

inline GainsFile gains_from_json(const json& root) {
    const json& j = root.contains("gains") ? root.at("gains") : root;
    if (!j.contains("F") || !j.contains("M"))
        throw ConfigError("gains object needs 'F' and 'M' arrays");
    GainsFile out;
    for (const auto& g : j.at("F")) out.F.push_back(matrix_from_json(g, "F"));
    for (const auto& g : j.at("M")) out.M.push_back(matrix_from_json(g, "M"));
    auto blocks_from = [&](const char* key) -> std::optional<BlockCollection> {
        const json& src = root.contains("solution") ? root.at("solution") : root;
        if (!src.contains(key)) return std::nullopt;
        std::vector<Eigen::MatrixXd> blocks;
        for (const auto& b : src.at(key)) blocks.push_back(matrix_from_json(b, key));
        return BlockCollection(std::move(blocks));
    };
    out.X = blocks_from("X");
    out.Y = blocks_from("Y");
    return out;
}

inline GainsFile load_gains(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open gains file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("gains file is not valid JSON: ") + e.what());
    }
    return gains_from_json(j);
}

} // namespace io

// Trace CSV: `k,trial,theta,eta,nu,gamma,x1..xn,xhat1..xhatn,e1..en,u1..um,znorm2`,
// one row per (trial, step), floats with 17 significant digits.
inline void write_trace_csv(std::ostream& os, const SimulationTrace& trace, int nx, int nu) {
    os << "k,trial,theta,eta,nu,gamma";
    for (int i = 1; i <= nx; ++i) os << ",x" << i;
    for (int i = 1; i <= nx; ++i) os << ",xhat" << i;
    for (int i = 1; i <= nx; ++i) os << ",e" << i;
    for (int i = 1; i <= nu; ++i) os << ",u" << i;
    os << ",znorm2\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (const auto& r : trace.records) {
        os << r.k << ',' << r.trial << ',' << r.theta << ',' << r.eta << ',' << r.nu << ','
           << r.gamma;
        for (int i = 0; i < nx; ++i) put(r.x(i));
        for (int i = 0; i < nx; ++i) put(r.xhat(i));
        for (int i = 0; i < nx; ++i) put(r.e(i));
        for (int i = 0; i < nu; ++i) put(r.u(i));
        put(r.znorm2);
        os << '\n';
    }
}

} // namespace jumpctl
