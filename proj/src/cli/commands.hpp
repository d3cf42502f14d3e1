#pragma once

#include <CLI11.hpp>
#include <json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "mscq/layout.hpp"
#include "mscq/quantizer.hpp"
#include "mscq/simsa/simsa.hpp"

namespace mscq::cli {

using Json = nlohmann::ordered_json;

struct QuantOptions {
    std::vector<std::string> weights;
    std::vector<std::string> calib;
    std::vector<std::string> outputs;
    std::string report;
    int bb = 2;
    int mab = 128;
    int mub = 8;
    int row_block = 128;
    double sigma = 3.0;
    double alpha = 0.0;
    double lambda_frac = 0.01;
    std::string overflow = "demote";
    bool no_compensate = false;
    int jobs = 1;
};

struct SimOptions {
    std::string layer;
    std::string acts;
    std::string output;
    std::string stats;
    std::string trace;
    std::string mode = "4b";
    int rows = 16;
    int cols = 16;
    int num_recon = 1;
    int frac_bits = 2;
    int act_bits = 8;
    int out_bits = 0;
};

struct VerifyOptions {
    std::string layer;
    std::string weights;
    std::string calib;
};

struct SynthOptions {
    std::string kind = "gaussian";
    std::string prefix;
    int rows = 64;
    int cols = 512;
    int tokens = 256;
    int mub = 8;
    double outlier_mubs = 9.0;
    std::uint64_t seed = 0;
};

void add_quantize(CLI::App& app, QuantOptions& o);
void add_simulate(CLI::App& app, SimOptions& o);
void add_verify(CLI::App& app, VerifyOptions& o);
void add_synth(CLI::App& app, SynthOptions& o);

int cmd_quantize(const QuantOptions& o, std::ostream& out);
int cmd_simulate(const SimOptions& o, std::ostream& out);
int cmd_verify(const VerifyOptions& o, std::ostream& out);
int cmd_inspect(const std::string& layer, std::ostream& out);
int cmd_synth(const SynthOptions& o, std::ostream& out);

QuantConfig to_quant_config(const QuantOptions& o);
Json config_json(const QuantConfig& c);
Json ebw_json(const EbwReport& r);
Json stats_json(const simsa::SimStats& s);

}  // namespace mscq::cli
