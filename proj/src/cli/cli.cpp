#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>

#include "commands.hpp"
#include "mscq/cli.hpp"
#include "mscq/error.hpp"

namespace mscq {

namespace {

void init_logging() {
    static const auto logger = [] {
        auto l = spdlog::stderr_color_mt("mscq");
        spdlog::set_default_logger(l);
        return l;
    }();
    const char* env = std::getenv("MSCQ_LOG");
    logger->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    init_logging();
    CLI::App app{"Mixed-precision outlier-aware quantizer and accelerator simulator", "mscq"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "mscq 0.1");

    cli::QuantOptions qo;
    cli::SimOptions so;
    cli::VerifyOptions vo;
    cli::SynthOptions yo;
    std::string inspect_path;
    std::uint64_t seed = 0;

    auto* quantize = app.add_subcommand("quantize", "quantize layers and write packed files");
    cli::add_quantize(*quantize, qo);
    auto* simulate = app.add_subcommand("simulate", "run a packed layer on the accelerator model");
    cli::add_simulate(*simulate, so);
    auto* verify = app.add_subcommand("verify", "re-derive a packed layer and check its invariants");
    cli::add_verify(*verify, vo);
    auto* inspect = app.add_subcommand("inspect", "print header, sections and EBW of a packed layer");
    inspect->add_option("-q,--layer", inspect_path, "packed layer")->required();
    auto* synth = app.add_subcommand("synth", "write seeded synthetic inputs");
    cli::add_synth(*synth, yo);
    // Everything except synth is deterministic without a seed; accept it anywhere.
    for (auto* sub : {quantize, simulate, verify, inspect}) sub->add_option("--seed", seed, "RNG seed (unused)");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitShape;
    }

    try {
        if (*quantize) return cli::cmd_quantize(qo, out);
        if (*simulate) return cli::cmd_simulate(so, out);
        if (*verify) return cli::cmd_verify(vo, out);
        if (*inspect) return cli::cmd_inspect(inspect_path, out);
        if (*synth) return cli::cmd_synth(yo, out);
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const CapacityError& e) {
        err << "capacity error: " << e.what() << '\n';
        return kExitCapacity;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitShape;
    }
    return kExitShape;
}

}  // namespace mscq
