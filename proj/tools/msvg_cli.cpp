// Command-line surface for the library: fit CSV data, draw synthetic samples,
// run the location-estimator rate study, and emit Q-Q pairings.
//
// Exit codes: 0 success, 2 input/flag error, 3 non-convergence (fit hit the
// sweep limit), 4 internal degeneracy (a numerically undefined update).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <msvg/csv_io.hpp>
#include <msvg/ecm_fitter.hpp>
#include <msvg/rng.hpp>
#include <msvg/sim_harness.hpp>
#include <msvg/vg_model.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNonConverged = 3;
constexpr int kExitDegenerate = 4;

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string item =
            text.substr(start, comma == std::string::npos ? comma : comma - start);
        const std::size_t b = item.find_first_not_of(" \t");
        const std::size_t e = item.find_last_not_of(" \t");
        if (b == std::string::npos)
            throw msvg::InputError(flag + ": empty element in '" + text + "'");
        double value = 0.0;
        const char* first = item.data() + b + (item[b] == '+' ? 1 : 0);
        const char* last = item.data() + e + 1;
        const auto res = std::from_chars(first, last, value);
        if (res.ec != std::errc{} || res.ptr != last)
            throw msvg::InputError(flag + ": cannot parse number '" +
                                   item.substr(b, e - b + 1) + "'");
        out.push_back(value);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw msvg::InputError(flag + ": list is empty");
    return out;
}

std::vector<Eigen::Index> parse_index_list(const std::string& text, const std::string& flag) {
    std::vector<Eigen::Index> out;
    for (double v : parse_double_list(text, flag)) {
        const auto n = static_cast<Eigen::Index>(v);
        if (static_cast<double>(n) != v)
            throw msvg::InputError(flag + ": expected integers");
        out.push_back(n);
    }
    return out;
}

nlohmann::json params_to_json(const msvg::VgParams& params) {
    nlohmann::json j;
    j["mu"] = std::vector<double>(params.mu().begin(), params.mu().end());
    std::vector<std::vector<double>> sigma;
    for (Eigen::Index i = 0; i < params.dim(); ++i)
        sigma.emplace_back(params.sigma().row(i).begin(), params.sigma().row(i).end());
    j["sigma"] = sigma;
    j["gamma"] = std::vector<double>(params.gamma().begin(), params.gamma().end());
    j["nu"] = params.nu();
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw msvg::InputError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw msvg::InputError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------- fit ------

struct FitFlags {
    std::string input;
    std::string out;
    std::string fix;
    bool robust_init = false;
    bool skip_header = false;
    msvg::EcmConfig cfg;
};

int cmd_fit(const FitFlags& f) {
    msvg::EcmConfig cfg = f.cfg;
    for (std::size_t start = 0; !f.fix.empty() && start <= f.fix.size();) {
        const std::size_t comma = f.fix.find(',', start);
        const std::string block =
            f.fix.substr(start, comma == std::string::npos ? comma : comma - start);
        if (block == "mu")
            cfg.fix_mu = true;
        else if (block == "sigma")
            cfg.fix_sigma = true;
        else if (block == "gamma")
            cfg.fix_gamma = true;
        else if (block == "nu")
            cfg.fix_nu = true;
        else
            throw msvg::InputError("--fix: unknown block '" + block +
                                   "' (expected mu, sigma, gamma, nu)");
        if (comma == std::string::npos) break;
        start = comma + 1;
    }

    const msvg::Dataset data(msvg::read_csv(f.input, f.skip_header));
    const msvg::VgParams init = msvg::initialize(data, f.robust_init);
    const msvg::FitResult result = msvg::fit(data, cfg, init);

    nlohmann::json report;
    report["command"] = "fit";
    report["input"] = f.input;
    report["n"] = data.n();
    report["dim"] = data.dim();
    report["status"] =
        result.termination == msvg::Termination::converged ? "converged" : "max_iter";
    report["iterations"] = result.iterations;
    report["loglik"] = result.loglik_trace.back();
    report["trace_length"] = result.loglik_trace.size();
    report["estimates"] = params_to_json(result.params);
    report["init"] = params_to_json(init);
    report["warnings"] = result.warnings;
    write_text(f.out, report.dump(2) + "\n");
    return result.termination == msvg::Termination::converged ? kExitOk
                                                              : kExitNonConverged;
}

// ------------------------------------------------------------- sample ------

struct SampleFlags {
    std::string mu = "0";
    std::string sigma = "1";
    std::string gamma;
    double nu = 1.0;
    std::int64_t n = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_sample(const SampleFlags& f) {
    const std::vector<double> mu = parse_double_list(f.mu, "--mu");
    const std::vector<double> sigma = parse_double_list(f.sigma, "--sigma");
    const auto d = static_cast<Eigen::Index>(mu.size());
    if (sigma.size() != mu.size() * mu.size())
        throw msvg::InputError("--sigma: expected " + std::to_string(mu.size() * mu.size()) +
                               " row-major entries for dimension " +
                               std::to_string(mu.size()));
    std::vector<double> gamma(mu.size(), 0.0);
    if (!f.gamma.empty()) {
        gamma = parse_double_list(f.gamma, "--gamma");
        if (gamma.size() != mu.size())
            throw msvg::InputError("--gamma: expected " + std::to_string(mu.size()) +
                                   " entries");
    }
    if (f.n < 0) throw msvg::InputError("--n must be >= 0");

    Eigen::VectorXd mu_v = Eigen::Map<const Eigen::VectorXd>(mu.data(), d);
    Eigen::VectorXd gamma_v = Eigen::Map<const Eigen::VectorXd>(gamma.data(), d);
    Eigen::MatrixXd sigma_m(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            sigma_m(i, j) = sigma[static_cast<std::size_t>(i * d + j)];
    const msvg::VgParams params(mu_v, sigma_m, gamma_v, f.nu); // validates here

    if (f.n == 0) {
        msvg::write_csv(f.out, Eigen::MatrixXd(0, 0));
        return kExitOk;
    }
    msvg::RngStream rng(f.seed);
    const msvg::Dataset data = msvg::sample(params, f.n, rng);
    msvg::write_csv(f.out, data.observations());
    return kExitOk;
}

// --------------------------------------------------------- rate study ------

struct StudyFlags {
    std::string nu_grid;
    std::string n_grid;
    int replicates = 100;
    std::uint64_t seed = 0;
    int threads = 1;
    Eigen::Index qq_mc = 0; // 0: match the replicate count
    std::string out_dir;
};

int cmd_rate_study(const StudyFlags& f) {
    msvg::StudySpec spec;
    spec.nu_grid = parse_double_list(f.nu_grid, "--nu-grid");
    spec.n_grid = parse_index_list(f.n_grid, "--n-grid");
    spec.replicates = f.replicates;
    spec.seed = f.seed;
    if (f.threads < 1) throw msvg::InputError("--threads must be >= 1");

    const msvg::RateStudyResult res = msvg::run_rate_study(spec, f.threads);

    namespace fs = std::filesystem;
    fs::create_directories(f.out_dir);
    const auto path_in = [&](const std::string& name) {
        return (fs::path(f.out_dir) / name).string();
    };

    // study.csv: one row per (nu, n) cell; the per-nu regression columns are
    // repeated across that nu's rows.
    const std::size_t nn = spec.n_grid.size();
    std::string study = "nu,n,replicates_ok,iqr,beta_hat,beta_proposed,rel_error,"
                        "sigma_mu_hat,nu_mu_hat\n";
    for (std::size_t i = 0; i < res.cells.size(); ++i) {
        const msvg::CellResult& c = res.cells[i];
        const msvg::NuRow& row = res.per_nu[i / nn];
        study += msvg::format_double(c.nu);
        study += ',' + std::to_string(static_cast<long long>(c.n));
        study += ',' + std::to_string(c.replicates_ok);
        study += ',' + msvg::format_double(c.iqr);
        study += ',' + msvg::format_double(row.power_law.beta_hat);
        study += ',' + msvg::format_double(row.beta_proposed);
        study += ',' + msvg::format_double(row.rel_error);
        study += ',' + msvg::format_double(c.sigma_mu_hat);
        study += ',' + msvg::format_double(c.nu_mu_hat);
        study += '\n';
    }
    write_text(path_in("study.csv"), study);

    // Fixed KDE grid in IQR-standardized units.
    std::vector<double> grid;
    for (int k = -400; k <= 400; ++k) grid.push_back(0.02 * k);

    std::vector<std::string> kde_files, qq_files;
    nlohmann::json skipped = nlohmann::json::array();
    for (std::size_t i = 0; i < res.cells.size(); ++i) {
        const msvg::CellResult& c = res.cells[i];
        const msvg::NuRow& row = res.per_nu[i / nn];
        const std::string tag = "nu" + msvg::format_double(c.nu) + "_n" +
                                std::to_string(static_cast<long long>(c.n)) + ".csv";
        std::vector<double> scaled(c.mu_hats.size());
        const double scale =
            std::pow(static_cast<double>(c.n), row.power_law.beta_hat);
        for (std::size_t k = 0; k < c.mu_hats.size(); ++k)
            scaled[k] = scale * c.mu_hats[k];

        try {
            const std::vector<double> density = msvg::kde_curve(scaled, grid);
            std::string kde = "x,density\n";
            for (std::size_t k = 0; k < grid.size(); ++k)
                kde += msvg::format_double(grid[k]) + "," +
                       msvg::format_double(density[k]) + "\n";
            write_text(path_in("kde_" + tag), kde);
            kde_files.push_back("kde_" + tag);
        } catch (const std::exception& e) {
            skipped.push_back({{"file", "kde_" + tag}, {"reason", e.what()}});
        }

        try {
            if (!std::isfinite(c.sigma_mu_hat) || !std::isfinite(c.nu_mu_hat))
                throw msvg::InputError("re-fit unavailable for this cell");
            // Replicate streams use indices 0..replicates-1; the index
            // `replicates` is fresh, keeping the Monte Carlo draw independent
            // of them and identical across thread counts.
            msvg::RngStream rng = msvg::RngStream::substream(
                spec.seed, static_cast<std::uint64_t>(i / nn),
                static_cast<std::uint64_t>(i % nn),
                static_cast<std::uint64_t>(spec.replicates));
            const Eigen::Index mc =
                f.qq_mc > 0 ? f.qq_mc
                            : static_cast<Eigen::Index>(spec.replicates);
            const msvg::QqPairs qq =
                msvg::emit_qq(scaled, {c.sigma_mu_hat, c.nu_mu_hat}, mc, rng);
            std::string text = "theoretical,empirical\n";
            for (std::size_t k = 0; k < qq.theoretical.size(); ++k)
                text += msvg::format_double(qq.theoretical[k]) + "," +
                        msvg::format_double(qq.empirical[k]) + "\n";
            write_text(path_in("qq_" + tag), text);
            qq_files.push_back("qq_" + tag);
        } catch (const std::exception& e) {
            skipped.push_back({{"file", "qq_" + tag}, {"reason", e.what()}});
        }
    }

    nlohmann::json manifest;
    manifest["command"] = "rate-study";
    manifest["spec"] = {{"nu_grid", spec.nu_grid},
                        {"n_grid", std::vector<long long>(spec.n_grid.begin(),
                                                          spec.n_grid.end())},
                        {"replicates", spec.replicates},
                        {"seed", spec.seed},
                        {"d", 1}};
    manifest["threads"] = f.threads;
    manifest["qq_mc"] = f.qq_mc > 0 ? static_cast<long long>(f.qq_mc)
                                    : static_cast<long long>(spec.replicates);
    manifest["failed_replicates"] = res.failed_replicates;
    manifest["failed_refits"] = res.failed_refits;
    nlohmann::json per_nu = nlohmann::json::array();
    for (const msvg::NuRow& row : res.per_nu)
        per_nu.push_back({{"nu", row.nu},
                          {"beta_hat", row.power_law.beta_hat},
                          {"log_a", row.power_law.log_a},
                          {"beta_proposed", row.beta_proposed},
                          {"singular", row.singular},
                          {"rel_error", row.rel_error}});
    manifest["per_nu"] = per_nu;
    manifest["outputs"] = {{"study", "study.csv"},
                           {"kde", kde_files},
                           {"qq", qq_files},
                           {"skipped", skipped}};
    write_text(path_in("manifest.json"), manifest.dump(2) + "\n");
    return kExitOk;
}

// ------------------------------------------------------------------ qq -----

struct QqFlags {
    std::string samples_csv;
    bool skip_header = false;
    double sigma = 1.0;
    double nu = 1.0;
    Eigen::Index mc_size = 20000;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_qq(const QqFlags& f) {
    const Eigen::MatrixXd m = msvg::read_csv(f.samples_csv, f.skip_header);
    if (m.cols() != 1)
        throw msvg::InputError("expected a single-column samples file, got " +
                               std::to_string(m.cols()) + " columns");
    const std::vector<double> samples(m.col(0).begin(), m.col(0).end());
    msvg::RngStream rng(f.seed);
    const msvg::QqPairs qq = msvg::emit_qq(samples, {f.sigma, f.nu}, f.mc_size, rng);
    std::string text = "theoretical,empirical\n";
    for (std::size_t k = 0; k < qq.theoretical.size(); ++k)
        text += msvg::format_double(qq.theoretical[k]) + "," +
                msvg::format_double(qq.empirical[k]) + "\n";
    write_text(f.out, text);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skewed variance-gamma toolkit: leave-one-out likelihood fitting, "
                 "sampling, and the location-estimator rate study"};
    app.require_subcommand(1);

    FitFlags fit_flags;
    CLI::App* fit = app.add_subcommand(
        "fit", "Fit the distribution to CSV data (one observation per row) by "
               "maximizing the leave-one-out likelihood");
    fit->add_option("input", fit_flags.input, "Input CSV path")->required();
    fit->add_option("--out,-o", fit_flags.out,
                    "Write the JSON report here instead of standard output");
    fit->add_flag("--robust-init", fit_flags.robust_init,
                  "Initialize from column medians and MAD instead of mean/covariance");
    fit->add_flag("--skip-header", fit_flags.skip_header,
                  "Ignore the first line of the input CSV");
    fit->add_option("--tol", fit_flags.cfg.tol,
                    "Relative log-likelihood increment that stops the sweeps")
        ->capture_default_str();
    fit->add_option("--max-iter", fit_flags.cfg.max_iter, "Maximum number of sweeps")
        ->capture_default_str();
    fit->add_option("--m", fit_flags.cfg.m_search,
                    "Nearest-point candidates in the local point search")
        ->capture_default_str();
    fit->add_option("--nu-min", fit_flags.cfg.nu_min, "Lower clamp for the shape")
        ->capture_default_str();
    fit->add_option("--nu-max", fit_flags.cfg.nu_max, "Upper clamp for the shape")
        ->capture_default_str();
    fit->add_option("--nr-max-iter", fit_flags.cfg.nr_max_iter,
                    "Newton-Raphson iterations for the shape update")
        ->capture_default_str();
    fit->add_option("--line-search-evals", fit_flags.cfg.line_search_evals,
                    "Objective evaluations per line search")
        ->capture_default_str();
    fit->add_option("--fix", fit_flags.fix,
                    "Comma list of parameter blocks to hold at their initial "
                    "values (mu, sigma, gamma, nu)");

    SampleFlags sample_flags;
    CLI::App* smp = app.add_subcommand(
        "sample", "Draw synthetic observations and write them as CSV");
    smp->add_option("--mu", sample_flags.mu, "Location vector, comma-separated")
        ->capture_default_str();
    smp->add_option("--sigma", sample_flags.sigma,
                    "Scale matrix, row-major comma-separated (d*d entries)")
        ->capture_default_str();
    smp->add_option("--gamma", sample_flags.gamma,
                    "Skew vector, comma-separated (default: zeros)");
    smp->add_option("--nu", sample_flags.nu, "Shape parameter")->capture_default_str();
    smp->add_option("--n", sample_flags.n, "Number of observations (0 writes an empty file)")
        ->required();
    smp->add_option("--seed", sample_flags.seed, "RNG seed")->capture_default_str();
    smp->add_option("--out,-o", sample_flags.out, "Output CSV path")->required();

    StudyFlags study_flags;
    CLI::App* study = app.add_subcommand(
        "rate-study",
        "Measure the decay rate of the location estimator's spread over a grid of "
        "shapes and sample sizes; writes study.csv, KDE and Q-Q CSVs, and a manifest");
    study->add_option("--nu-grid", study_flags.nu_grid,
                      "Shape values, comma-separated")->required();
    study->add_option("--n-grid", study_flags.n_grid,
                      "Sample sizes, comma-separated")->required();
    study->add_option("--replicates", study_flags.replicates,
                      "Independent replicates per (shape, size) cell")
        ->capture_default_str();
    study->add_option("--seed", study_flags.seed, "Base RNG seed")->capture_default_str();
    study->add_option("--threads", study_flags.threads,
                      "Worker threads (results are identical for any value)")
        ->capture_default_str();
    study->add_option("--qq-mc", study_flags.qq_mc,
                      "Monte Carlo draw size for Q-Q files (0: match --replicates)")
        ->capture_default_str();
    study->add_option("--out-dir", study_flags.out_dir, "Output directory")->required();

    QqFlags qq_flags;
    CLI::App* qq = app.add_subcommand(
        "qq", "Rank-pair a one-column sample file against Monte Carlo draws from a "
              "symmetric fit with the given scale and shape");
    qq->add_option("--samples-csv", qq_flags.samples_csv, "One-column CSV of samples")
        ->required();
    qq->add_flag("--skip-header", qq_flags.skip_header,
                 "Ignore the first line of the samples file");
    qq->add_option("--sigma", qq_flags.sigma,
                   "Fitted scale as a standard deviation")->capture_default_str();
    qq->add_option("--nu", qq_flags.nu, "Fitted shape")->capture_default_str();
    qq->add_option("--mc-size", qq_flags.mc_size, "Monte Carlo draw size")
        ->capture_default_str();
    qq->add_option("--seed", qq_flags.seed, "RNG seed")->capture_default_str();
    qq->add_option("--out,-o", qq_flags.out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (fit->parsed()) return cmd_fit(fit_flags);
        if (smp->parsed()) return cmd_sample(sample_flags);
        if (study->parsed()) return cmd_rate_study(study_flags);
        return cmd_qq(qq_flags);
    } catch (const msvg::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const msvg::ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const msvg::InitializationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitDegenerate;
    }
}
