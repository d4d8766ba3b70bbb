#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "stackdec/ensemble.hpp"
#include "stackdec/metrics.hpp"

namespace stackdec {

using nlohmann::json;

inline json effect_set_to_json(const EffectSet& set) {
    json arr = json::array();
    for (const auto& t : set.terms) arr.push_back(t.indices());
    return arr;
}

// JSON array of integer arrays, e.g. [[1],[2],[1,2]]; the intercept is never
// serialized. Loading applies the effects-of-interest rule (the full-order
// term is added when missing).
inline EffectSet effect_set_from_json(const json& arr, int d) {
    if (!arr.is_array() || arr.empty())
        throw ValidationError("effects JSON must be a non-empty array of integer arrays");
    std::vector<EffectIndex> terms;
    for (const auto& item : arr) {
        if (!item.is_array()) throw ValidationError("effects JSON entries must be integer arrays");
        std::vector<int> idx;
        for (const auto& v : item) idx.push_back(v.get<int>());
        terms.emplace_back(std::move(idx));
    }
    return restrict_to(terms, d);
}

inline EffectSet load_effects_file(const std::string& path, int d) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open effects file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError("effects file " + path + " is not valid JSON: " + e.what());
    }
    return effect_set_from_json(j, d);
}

inline void to_json(json& j, const SubNetworkConfig& c) {
    j = json{{"hidden_widths", c.hidden_widths}, {"dropout_rates", c.dropout_rates}};
}
inline void from_json(const json& j, SubNetworkConfig& c) {
    j.at("hidden_widths").get_to(c.hidden_widths);
    j.at("dropout_rates").get_to(c.dropout_rates);
}

inline void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"epsilon", c.epsilon},
             {"batch_size", c.batch_size},
             {"max_epochs", c.max_epochs},
             {"r2_target", c.r2_target},
             {"seed", c.seed},
             {"full_batch", c.full_batch},
             {"dropout_finetune", c.dropout_finetune},
             {"finetune_patience", c.finetune_patience},
             {"finetune_min_delta", c.finetune_min_delta},
             {"plateau_decay", c.plateau_decay},
             {"plateau_patience", c.plateau_patience},
             {"min_learning_rate", c.min_learning_rate}};
}
inline void from_json(const json& j, TrainConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.r2_target = j.value("r2_target", c.r2_target);
    c.seed = j.value("seed", c.seed);
    c.full_batch = j.value("full_batch", c.full_batch);
    c.dropout_finetune = j.value("dropout_finetune", c.dropout_finetune);
    c.finetune_patience = j.value("finetune_patience", c.finetune_patience);
    c.finetune_min_delta = j.value("finetune_min_delta", c.finetune_min_delta);
    c.plateau_decay = j.value("plateau_decay", c.plateau_decay);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.min_learning_rate = j.value("min_learning_rate", c.min_learning_rate);
}

inline json vector_to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vector vector_from_json(const json& a) {
    Vector v(static_cast<Eigen::Index>(a.size()));
    Eigen::Index i = 0;
    for (const auto& x : a) v[i++] = x.get<double>();
    return v;
}

// ---------------------------------------------------------------------------
// decomposition result directory
// ---------------------------------------------------------------------------

inline json decomposition_to_json(const DecompositionResult& res, const Vector& original_f,
                                  const MetricsTable& metrics) {
    const auto& ev = res.final_vectors;
    json j;
    j["format"] = "stackdec-decomposition";
    j["tool_version"] = kVersion;
    j["d"] = ev.set.d;
    j["restricted"] = ev.set.restricted;
    j["terms"] = effect_set_to_json(ev.set);
    j["intercept"] = ev.intercept;
    j["iterations"] = ev.iterations;

    json records = json::array();
    for (size_t t = 0; t < ev.records.size(); ++t) {
        const auto& rec = ev.records[t];
        json r;
        r["term"] = ev.set.terms[t].indices();
        r["beta"] = vector_to_json(rec.beta);
        r["centering"] = rec.centering;
        r["processed"] = rec.processed;
        r["processed_level"] = rec.processed_level;
        json corr = json::array();
        for (const auto& [other, gamma] : rec.corrections) {
            json c;
            c["term"] = other < 0 ? json("intercept")
                                  : json(ev.set.terms[static_cast<size_t>(other)].indices());
            c["gamma"] = vector_to_json(gamma);
            corr.push_back(std::move(c));
        }
        r["corrections"] = std::move(corr);
        records.push_back(std::move(r));
    }
    j["records"] = std::move(records);

    j["F"] = vector_to_json(original_f);
    j["surrogate"] = vector_to_json(ev.surrogate_values());

    json diag;
    diag["member_r2"] = res.member_r2;
    diag["warnings"] = res.warnings;
    diag["term_spread"] = res.term_spread;
    auto orep = orthogonality_report(ev);
    diag["orthogonality_max_offdiag"] = orep.max_offdiag;
    diag["centering_max"] = orep.max_centering;
    j["diagnostics"] = std::move(diag);

    json met = json::array();
    for (const auto& row : metrics.rows)
        met.push_back(json{{"metric", row.metric},
                           {"key", row.key},
                           {"value", row.value},
                           {"denominator", row.denominator}});
    j["metrics"] = std::move(met);
    return j;
}

inline void write_metrics_csv(const MetricsTable& tab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << "metric,key,value,denominator\n";
    for (const auto& row : tab.rows)
        out << row.metric << ',' << row.key << ',' << fp17(row.value) << ',' << row.denominator << '\n';
}

inline MetricsTable read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty metrics file " + path);
    MetricsTable tab;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 4) throw ValidationError("malformed metrics row: " + line);
        tab.add(cells[0], cells[1], detail::parse_cell(cells[2], tab.rows.size() + 1, "value"), cells[3]);
    }
    return tab;
}

// per-term CSV: sample index, feature values of theta, effect value
inline void write_term_csv(const EffectVectors& ev, int t, const Matrix& X, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    const auto& theta = ev.set.terms[static_cast<size_t>(t)];
    out << "index";
    for (int idx : theta.indices()) out << ",x" << idx;
    out << ",f\n";
    const auto& f = ev.vectors[static_cast<size_t>(t)];
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        out << i;
        for (int idx : theta.indices()) out << ',' << fp17(X(i, idx - 1));
        out << ',' << fp17(f[i]) << '\n';
    }
}

// Minimal stored form for recomputation: everything compute_metrics needs.
struct StoredDecomposition {
    EffectVectors effects;  // set, vectors, intercept populated; no bases
    Vector original_f;
};

inline void write_decomposition_dir(const DecompositionResult& res, const Vector& original_f,
                                    const MetricsTable& metrics, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "decomposition.json");
        if (!out) throw ValidationError("cannot write decomposition.json in " + dir);
        out << decomposition_to_json(res, original_f, metrics).dump(2) << '\n';
    }
    write_metrics_csv(metrics, (fs::path(dir) / "metrics.csv").string());
}

inline void write_term_csvs(const DecompositionResult& res, const Matrix& X, const std::string& dir) {
    namespace fs = std::filesystem;
    for (int t = 0; t < res.effect_set.term_count(); ++t) {
        auto path = fs::path(dir) / ("term_" + res.effect_set.terms[static_cast<size_t>(t)].key() + ".csv");
        write_term_csv(res.final_vectors, t, X, path.string());
    }
}

inline StoredDecomposition load_decomposition_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "decomposition.json");
    if (!in) throw ValidationError("cannot open decomposition.json in " + dir);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("decomposition.json parse error: ") + e.what());
    }
    StoredDecomposition sd;
    sd.effects.set.d = j.at("d").get<int>();
    sd.effects.set.restricted = j.at("restricted").get<bool>();
    for (const auto& item : j.at("terms")) {
        std::vector<int> idx;
        for (const auto& v : item) idx.push_back(v.get<int>());
        sd.effects.set.terms.emplace_back(std::move(idx));
    }
    sd.effects.intercept = j.at("intercept").get<double>();
    sd.effects.records.resize(sd.effects.set.terms.size());
    sd.original_f = vector_from_json(j.at("F"));

    // term sample vectors come from the per-term CSVs (exact 17-digit round trip)
    for (const auto& theta : sd.effects.set.terms) {
        auto path = fs::path(dir) / ("term_" + theta.key() + ".csv");
        std::ifstream tin(path);
        if (!tin) throw ValidationError("cannot open " + path.string());
        std::string line;
        std::getline(tin, line);
        std::vector<double> vals;
        while (std::getline(tin, line)) {
            if (line.empty()) continue;
            auto cells = detail::split_csv_line(line);
            vals.push_back(detail::parse_cell(cells.back(), vals.size() + 1, "f"));
        }
        Vector v(static_cast<Eigen::Index>(vals.size()));
        for (size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
        sd.effects.vectors.push_back(std::move(v));
    }
    return sd;
}

// ---------------------------------------------------------------------------
// model checkpoints: JSON header + little-endian 64-bit float payload
// ---------------------------------------------------------------------------

namespace detail {

inline void put_le64(std::ofstream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char buf[8];
    for (int k = 0; k < 8; ++k) buf[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

inline double get_le64(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw ValidationError("truncated checkpoint payload");
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<uint64_t>(buf[k]) << (8 * k);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void save_model(const NamModel& model, const FitReport& report, const std::string& path) {
    json header;
    header["format"] = "stackdec-nam";
    header["tool_version"] = kVersion;
    header["d"] = model.effect_set.d;
    header["restricted"] = model.effect_set.restricted;
    header["terms"] = effect_set_to_json(model.effect_set);
    header["config"] = model.config;
    header["seed"] = model.seed;
    header["fit_report"] = json{{"final_r2", report.final_r2},
                                {"final_mse", report.final_mse},
                                {"epochs", report.epochs},
                                {"converged", report.converged},
                                {"zero_target_variance", report.zero_target_variance}};
    json shapes = json::array();
    size_t count = 0;
    for (const auto& net : model.subnets) {
        json s = json::array();
        for (const auto& layer : net.layers) {
            s.push_back({layer.W.rows(), layer.W.cols()});
            count += static_cast<size_t>(layer.W.size() + layer.b.size());
        }
        shapes.push_back(std::move(s));
        count += static_cast<size_t>(net.out_w.size());
    }
    header["layer_shapes"] = std::move(shapes);
    header["payload_doubles"] = count;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint " + path);
    std::string h = header.dump();
    uint32_t len = static_cast<uint32_t>(h.size());
    out.write("SDNAM001", 8);
    unsigned char lb[4];
    for (int k = 0; k < 4; ++k) lb[k] = static_cast<unsigned char>((len >> (8 * k)) & 0xff);
    out.write(reinterpret_cast<const char*>(lb), 4);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& net : model.subnets) {
        for (const auto& layer : net.layers) {
            for (Eigen::Index i = 0; i < layer.W.rows(); ++i)
                for (Eigen::Index j = 0; j < layer.W.cols(); ++j) detail::put_le64(out, layer.W(i, j));
            for (Eigen::Index i = 0; i < layer.b.size(); ++i) detail::put_le64(out, layer.b[i]);
        }
        for (Eigen::Index i = 0; i < net.out_w.size(); ++i) detail::put_le64(out, net.out_w[i]);
    }
}

inline std::pair<NamModel, FitReport> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "SDNAM001")
        throw ValidationError("not a stackdec checkpoint: " + path);
    unsigned char lb[4];
    in.read(reinterpret_cast<char*>(lb), 4);
    uint32_t len = 0;
    for (int k = 0; k < 4; ++k) len |= static_cast<uint32_t>(lb[k]) << (8 * k);
    std::string h(len, '\0');
    in.read(h.data(), len);
    if (!in) throw ValidationError("truncated checkpoint header");
    json header = json::parse(h);

    NamModel model;
    model.effect_set.d = header.at("d").get<int>();
    model.effect_set.restricted = header.at("restricted").get<bool>();
    for (const auto& item : header.at("terms")) {
        std::vector<int> idx;
        for (const auto& v : item) idx.push_back(v.get<int>());
        model.effect_set.terms.emplace_back(std::move(idx));
    }
    header.at("config").get_to(model.config);
    model.seed = header.at("seed").get<uint64_t>();

    model.subnets.resize(model.effect_set.terms.size());
    const auto& shapes = header.at("layer_shapes");
    for (size_t t = 0; t < model.subnets.size(); ++t) {
        auto& net = model.subnets[t];
        net.input_dim = model.effect_set.terms[t].level();
        for (const auto& s : shapes.at(t)) {
            DenseLayer layer;
            layer.W.resize(s.at(0).get<Eigen::Index>(), s.at(1).get<Eigen::Index>());
            layer.b.resize(s.at(0).get<Eigen::Index>());
            net.layers.push_back(std::move(layer));
        }
        net.out_w.resize(model.config.penultimate_width());
    }
    for (auto& net : model.subnets) {
        for (auto& layer : net.layers) {
            for (Eigen::Index i = 0; i < layer.W.rows(); ++i)
                for (Eigen::Index j = 0; j < layer.W.cols(); ++j) layer.W(i, j) = detail::get_le64(in);
            for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = detail::get_le64(in);
        }
        for (Eigen::Index i = 0; i < net.out_w.size(); ++i) net.out_w[i] = detail::get_le64(in);
    }
    FitReport rep;
    const auto& fr = header.at("fit_report");
    rep.final_r2 = fr.at("final_r2").get<double>();
    rep.final_mse = fr.at("final_mse").get<double>();
    rep.epochs = fr.at("epochs").get<int>();
    rep.converged = fr.at("converged").get<bool>();
    rep.zero_target_variance = fr.at("zero_target_variance").get<bool>();
    return {std::move(model), rep};
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path + " for digesting");
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    return to_hex(h);
}

}  // namespace stackdec
