// pico: command line front end.
//
//   pico run --prompt TEXT --n N --seed S [--config FILE] [--backend toy|bridge:ADDR]
//            [--out DIR] [--dump-masks] [--select-only] [--ablate PARAM=V1,V2,...]
//            [--set KEY=VALUE]... [--lexicon FILE]
//   pico serve (--stdio | --unix PATH)
//
// Exit codes: 0 success, 2 config error, 3 parser error, 4 backend error.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pico/bridge.hpp"
#include "pico/config.hpp"
#include "pico/error.hpp"
#include "pico/pipeline.hpp"
#include "pico/toy_backend.hpp"

namespace {

constexpr int exit_config = 2;
constexpr int exit_parser = 3;
constexpr int exit_backend = 4;

int exit_code(pico::ErrorKind kind)
{
    switch (kind) {
    case pico::ErrorKind::parse: return exit_parser;
    case pico::ErrorKind::backend: return exit_backend;
    case pico::ErrorKind::config:
    case pico::ErrorKind::invalid_argument:
    case pico::ErrorKind::io: return exit_config;
    }
    return exit_config;
}

std::vector<std::string> split(const std::string& text, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::pair<std::string, std::string> key_value(const std::string& text, const char* what)
{
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw pico::Error(pico::ErrorKind::config, std::string(what) + " expects KEY=VALUE, got '" + text + "'");
    }
    return {text.substr(0, eq), text.substr(eq + 1)};
}

std::uint64_t parse_seed(const std::string& text)
{
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(text, &pos, 0);
        if (pos == text.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw pico::Error(pico::ErrorKind::config, "seed must be an unsigned integer, got '" + text + "'");
}

struct RunArgs {
    std::optional<std::string> prompt;
    std::optional<std::size_t> n;
    std::optional<std::string> seed;
    std::optional<std::string> config;
    std::optional<std::string> backend;
    std::optional<std::string> out;
    std::optional<std::string> ablate;
    std::optional<std::string> lexicon;
    std::vector<std::string> sets;
    bool dump_masks = false;
    bool select_only = false;
};

int command_run(const RunArgs& a)
{
    pico::RunConfig rc;
    bool have_prompt = a.prompt.has_value();
    if (a.config) {
        const auto parsed = pico::load_config(*a.config, {"prompt", "N", "seed", "backend", "lexicon"});
        rc.control = parsed.control;
        for (const auto& [k, v] : parsed.extra) {
            if (k == "prompt") {
                rc.prompt = v;
                have_prompt = true;
            } else if (k == "N") {
                rc.n_images = static_cast<std::size_t>(parse_seed(v));
            } else if (k == "seed") {
                rc.master_seed = parse_seed(v);
            } else if (k == "backend") {
                rc.backend = v;
            } else if (k == "lexicon") {
                rc.lexicon = pico::AttributeLexicon::load(v);
            }
        }
    }
    for (const auto& s : a.sets) {
        const auto [k, v] = key_value(s, "--set");
        pico::set_parameter(rc.control, k, v);
    }
    pico::validate(rc.control);
    if (a.prompt) {
        rc.prompt = *a.prompt;
    }
    if (a.n) {
        rc.n_images = *a.n;
    }
    if (a.seed) {
        rc.master_seed = parse_seed(*a.seed);
    }
    if (a.backend) {
        rc.backend = *a.backend;
    }
    if (a.lexicon) {
        rc.lexicon = pico::AttributeLexicon::load(*a.lexicon);
    }
    if (a.out) {
        rc.out_dir = *a.out;
    }
    rc.dump_masks = a.dump_masks;
    if (!have_prompt) {
        throw pico::Error(pico::ErrorKind::config, "a prompt is required (--prompt or 'prompt' in the config file)");
    }

    std::unique_ptr<pico::Backend> backend;
    if (rc.backend == "toy") {
        backend = std::make_unique<pico::ToyBackend>(pico::ToyBackendOptions{}, pico::Palette::builtin(), rc.lexicon);
    } else {
        backend = pico::make_backend(rc.backend);
    }

    if (a.select_only) {
        const auto j = pico::run_noise_selection_only(rc, *backend);
        if (!rc.out_dir) {
            std::cout << j.dump(2) << '\n';
        } else {
            std::cout << "selected";
            for (const auto& s : j.at("selected")) {
                std::cout << ' ' << s.get<std::uint64_t>();
            }
            std::cout << '\n';
        }
        return 0;
    }
    if (a.ablate) {
        const auto [param, list] = key_value(*a.ablate, "--ablate");
        std::vector<std::string> values;
        if (!list.empty()) {
            values = split(list, ',');
        }
        const auto reports = pico::run_ablation(rc, *backend, param, values);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            std::cout << param << '=' << values[i] << ':';
            for (const auto& img : reports[i].images) {
                std::cout << ' ' << pico::seed_stem(img.seed) << " (" << img.events.size() << " control events)";
            }
            std::cout << '\n';
        }
        return 0;
    }
    const auto report = pico::run(rc, *backend);
    for (const auto& img : report.images) {
        std::cout << pico::seed_stem(img.seed) << ": " << img.events.size() << " control events\n";
    }
    return 0;
}

int command_serve(bool stdio, const std::optional<std::string>& unix_path)
{
    const pico::ToyBackend backend;
    if (unix_path) {
        pico::serve_unix(backend, *unix_path);
        return 0;
    }
    if (!stdio) {
        throw pico::Error(pico::ErrorKind::config, "serve needs --stdio or --unix PATH");
    }
    std::ios::sync_with_stdio(false);
    pico::serve(backend, std::cin, std::cout);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Noise selection and referring mask control over a toy diffusion backend"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "score candidate noises, select the best and generate with mask control");
    run->add_option("--prompt", run_args.prompt, "text prompt");
    run->add_option("--n", run_args.n, "number of images N")->check(CLI::PositiveNumber);
    run->add_option("--seed", run_args.seed, "master seed");
    run->add_option("--config", run_args.config, "key = value config file")->check(CLI::ExistingFile);
    run->add_option("--backend", run_args.backend, "toy | bridge:exec:CMD | bridge:unix:PATH");
    run->add_option("--out", run_args.out, "output directory");
    run->add_flag("--dump-masks", run_args.dump_masks, "write masks and attention maps per timestep");
    run->add_flag("--select-only", run_args.select_only, "stop after noise selection");
    run->add_option("--ablate", run_args.ablate, "PARAM=V1,V2,... one run per value");
    run->add_option("--set", run_args.sets, "override a hyperparameter, KEY=VALUE");
    run->add_option("--lexicon", run_args.lexicon, "attribute lexicon file")->check(CLI::ExistingFile);

    bool stdio = false;
    std::optional<std::string> unix_path;
    auto* serve = app.add_subcommand("serve", "serve the toy backend over the bridge protocol");
    serve->add_flag("--stdio", stdio, "newline-delimited JSON on stdin/stdout");
    serve->add_option("--unix", unix_path, "listen on a Unix socket");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_config;
    }

    try {
        if (*run) {
            return command_run(run_args);
        }
        return command_serve(stdio, unix_path);
    } catch (const pico::Error& e) {
        std::cerr << "pico: " << pico::to_string(e.kind()) << " error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "pico: " << e.what() << '\n';
        return exit_backend;
    }
}
