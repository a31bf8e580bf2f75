#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmsparse/pipeline.hpp"
#include "nmsparse/pruning.hpp"

namespace nmsparse {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline std::string scorer_name(Scorer s) { return s == Scorer::Magnitude ? "magnitude" : "ria"; }

inline Scorer scorer_from_name(const std::string& name) {
    if (name == "magnitude") return Scorer::Magnitude;
    if (name == "ria") return Scorer::Ria;
    throw ConfigError("unknown scorer '" + name + "' (expected magnitude|ria)");
}

// PipelineConfig document, schema "v1".
inline nlohmann::json config_to_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["version"] = "v1";
    j["residual_pattern"] = format_pattern(cfg.residual_shape);
    j["salient_pattern"] = cfg.salient_shape ? format_pattern(*cfg.salient_shape) : "none";
    j["scorer"] = scorer_name(cfg.scorer);
    j["use_equalization"] = cfg.use_equalization;
    j["use_variance_correction"] = cfg.use_variance_correction;
    j["variance_includes_zeros"] = cfg.variance_includes_zeros;
    j["epsilon"] = cfg.epsilon;
    j["activation_power"] = cfg.activation_power;
    j["clamp_min"] = cfg.clamp_min;
    j["reconstruct"] = {{"enabled", cfg.run_reconstruction},
                        {"max_iters", cfg.reconstruction.max_iters},
                        {"step_size", cfg.reconstruction.step_size},
                        {"rel_tol", cfg.reconstruction.rel_tol},
                        {"ridge", cfg.reconstruction.ridge}};
    return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<std::string>() != "v1")
            throw ConfigError("unsupported config version (expected \"v1\")");
        PipelineConfig cfg;
        cfg.residual_shape = parse_pattern(j.at("residual_pattern").get<std::string>());
        const std::string sal = j.value("salient_pattern", std::string("none"));
        if (sal != "none") cfg.salient_shape = parse_pattern(sal);
        cfg.scorer = scorer_from_name(j.value("scorer", std::string("magnitude")));
        cfg.use_equalization = j.value("use_equalization", false);
        cfg.use_variance_correction = j.value("use_variance_correction", false);
        cfg.variance_includes_zeros = j.value("variance_includes_zeros", true);
        cfg.epsilon = j.value("epsilon", 1e-8);
        cfg.activation_power = j.value("activation_power", 0.5);
        cfg.clamp_min = j.value("clamp_min", kDefaultClampMin);
        if (j.contains("reconstruct")) {
            const auto& r = j.at("reconstruct");
            cfg.run_reconstruction = r.value("enabled", false);
            cfg.reconstruction.max_iters = r.value("max_iters", std::size_t{500});
            cfg.reconstruction.step_size = r.value("step_size", 0.0);
            cfg.reconstruction.rel_tol = r.value("rel_tol", 1e-7);
            cfg.reconstruction.ridge = r.value("ridge", 0.0);
        }
        validate(cfg);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config document: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("bad config document: ") + e.what());
    }
}

inline nlohmann::json report_to_json(const StorageReport& r) {
    nlohmann::json j;
    j["rows"] = r.rows;
    j["cols"] = r.cols;
    j["residual_pattern"] = format_pattern(r.residual_shape);
    j["salient_pattern"] =
        r.salient_k > 0 ? format_pattern(PatternShape{r.salient_k, kSalientBlock}) : "none";
    j["residual"] = {{"blocks", r.residual_blocks},
                     {"bits_per_block", r.residual_bits_per_block},
                     {"metadata_bits", r.residual_metadata_bits},
                     {"value_count", r.residual_value_count}};
    j["salient"] = {{"blocks", r.salient_blocks},
                    {"bits_per_block", r.salient_bits_per_block},
                    {"metadata_bits", r.salient_metadata_bits},
                    {"value_count", r.salient_value_count}};
    j["unstructured_baseline"] = {{"index_bits", r.unstructured_index_bits},
                                  {"metadata_bits", r.unstructured_metadata_bits}};
    j["value_bits"] = {{"float32", r.value_bits_float32}, {"float64", r.value_bits_float64}};
    j["metadata_bits_per_element"] = r.metadata_bits_per_element;
    j["kept_fraction"] = r.kept_fraction;
    return j;
}

// Per-layer entry of a prune run manifest.
struct LayerRunRecord {
    std::string input;
    std::string output;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    double correction_factor = 1.0;
    double kept_fraction = 0.0;
    bool reconstruction_ran = false;
    double reconstruction_initial_loss = 0.0;
    double reconstruction_final_loss = 0.0;
    std::uint64_t reconstruction_iterations = 0;
    StorageReport storage;
};

struct RunManifest {
    std::string tool = "nmsparse";
    std::string version;
    PipelineConfig config;
    std::vector<LayerRunRecord> layers;
    double wall_time_seconds = 0.0;
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j;
    j["tool"] = m.tool;
    j["version"] = m.version;
    j["config"] = config_to_json(m.config);
    j["wall_time_seconds"] = m.wall_time_seconds;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : m.layers) {
        nlohmann::json e;
        e["input"] = l.input;
        e["output"] = l.output;
        e["rows"] = l.rows;
        e["cols"] = l.cols;
        e["correction_factor"] = l.correction_factor;
        e["kept_fraction"] = l.kept_fraction;
        if (l.reconstruction_ran) {
            e["reconstruction"] = {{"initial_loss", l.reconstruction_initial_loss},
                                   {"final_loss", l.reconstruction_final_loss},
                                   {"iterations", l.reconstruction_iterations}};
        }
        e["storage"] = report_to_json(l.storage);
        j["layers"].push_back(std::move(e));
    }
    return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.tool = j.at("tool").get<std::string>();
        m.version = j.at("version").get<std::string>();
        m.config = config_from_json(j.at("config"));
        m.wall_time_seconds = j.at("wall_time_seconds").get<double>();
        for (const auto& e : j.at("layers")) {
            LayerRunRecord l;
            l.input = e.at("input").get<std::string>();
            l.output = e.at("output").get<std::string>();
            l.rows = e.at("rows").get<std::uint64_t>();
            l.cols = e.at("cols").get<std::uint64_t>();
            l.correction_factor = e.at("correction_factor").get<double>();
            l.kept_fraction = e.at("kept_fraction").get<double>();
            if (e.contains("reconstruction")) {
                l.reconstruction_ran = true;
                l.reconstruction_initial_loss = e["reconstruction"].at("initial_loss").get<double>();
                l.reconstruction_final_loss = e["reconstruction"].at("final_loss").get<double>();
                l.reconstruction_iterations =
                    e["reconstruction"].at("iterations").get<std::uint64_t>();
            }
            m.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad manifest document: ") + e.what());
    }
    return m;
}

}  // namespace nmsparse
