#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ensembles.hpp"
#include "errors.hpp"
#include "lattice.hpp"
#include "model.hpp"
#include "polymer.hpp"
#include "rng.hpp"
#include "sampler.hpp"

namespace wrsim {

inline constexpr const char* kCodeVersion = "0.1.0";

// Flat "key = value" text with [section] headers; keys are stored as "section.key".
using ConfigMap = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline ConfigMap parse_config_text(const std::string& text) {
    ConfigMap m;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') raise("ConfigSyntax", "line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) raise("ConfigSyntax", "line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) raise("ConfigSyntax", "line " + std::to_string(lineno) + ": empty key");
        m[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    return m;
}

inline ConfigMap load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise("IOError", "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

inline bool is_known_key(const std::string& k) {
    static const std::vector<std::string> keys{
        "model.d", "model.q", "model.z", "model.D", "model.R", "experiment.kind", "experiment.L",
        "experiment.z_grid", "experiment.chains", "experiment.boundary", "experiment.central_fraction",
        "experiment.threshold", "experiment.size_cap", "experiment.weight_samples", "chain.sweeps",
        "chain.burn_in", "chain.thinning", "chain.p_birth", "chain.p_death", "chain.p_translate", "chain.step",
        "chain.initial_type", "run.seed", "run.threads", "output.dir"};
    if (k.size() == 9 && k.rfind("model.D", 0) == 0 && std::isdigit(static_cast<unsigned char>(k[7])) &&
        std::isdigit(static_cast<unsigned char>(k[8])))
        return true;
    return std::find(keys.begin(), keys.end(), k) != keys.end();
}

// WRSIM_SECTION_KEY=value overrides section.key. The section is lowercased; the key keeps its case when that
// names a known key (WRSIM_MODEL_D is the diameter, WRSIM_MODEL_d the dimension) and is lowercased otherwise.
// Underscores after the section belong to the key (WRSIM_CHAIN_BURN_IN is chain.burn_in).
inline void apply_env_overrides(ConfigMap& m, char** envp) {
    if (!envp) return;
    auto lower = [](std::string x) {
        for (char& c : x) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return x;
    };
    for (char** e = envp; *e; ++e) {
        std::string kv = *e;
        if (kv.rfind("WRSIM_", 0) != 0) continue;
        auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string name = kv.substr(6, eq - 6);
        auto us = name.find('_');
        if (us == std::string::npos) continue;
        std::string section = lower(name.substr(0, us)), rest = name.substr(us + 1);
        std::string key = section + "." + rest;
        if (!is_known_key(key) && !m.count(key)) key = section + "." + lower(rest);
        m[key] = kv.substr(eq + 1);
    }
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

struct ExperimentConfig {
    ModelParams params;
    std::string experiment = "classify";
    std::vector<int> L{20};              // box sides in cells
    std::vector<double> z_grid;          // empty: use params.z only
    ChainSettings chain;
    int chains = 4;                      // independent chains per grid point
    int boundary = 1;                    // boundary type (0: empty boundary)
    double central_fraction = 0.25;      // side fraction of the central box for phase labels
    double threshold = -1;               // small/large contour threshold; < 0 means b^{2d}
    int size_cap = 2;
    long weight_samples = 20000;
    std::string out_dir;
    uint64_t seed = 1;
    int threads = 1;
    ConfigMap raw;

    std::string hash() const {
        // FNV-1a over the canonical key = value listing, threads excluded since results do not depend on it.
        uint64_t h = 1469598103934665603ULL;
        for (const auto& [k, v] : raw) {
            if (k == "run.threads" || k == "output.dir") continue;
            for (char c : k + "=" + v + "\n") {
                h ^= static_cast<unsigned char>(c);
                h *= 1099511628211ULL;
            }
        }
        std::ostringstream os;
        os << std::hex << h;
        return os.str();
    }
};

inline ExperimentConfig make_config(const ConfigMap& m) {
    ExperimentConfig c;
    c.raw = m;
    auto get = [&](const std::string& k, const std::string& def) {
        auto it = m.find(k);
        return it == m.end() ? def : it->second;
    };
    auto num = [&](const std::string& k, double def) {
        auto it = m.find(k);
        if (it == m.end()) return def;
        try {
            size_t pos = 0;
            double x = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(k);
            return x;
        } catch (const std::exception&) {
            raise("ConfigValue", k + " is not a number: " + it->second);
        }
    };
    int d = static_cast<int>(num("model.d", 2));
    int q = static_cast<int>(num("model.q", 2));
    double z = num("model.z", 1.0);
    c.params = ModelParams::uniform(d, q, z, get("model.D", "25"));
    c.params.R = parse_decimal(get("model.R", "1"));
    for (const auto& [k, v] : m) {
        // model.D12 = 21 sets one pair
        if (k.rfind("model.D", 0) == 0 && k.size() == 9) {
            int i = k[7] - '0', j = k[8] - '0';
            if (i < 1 || j < 1 || i > q || j > q || i == j) raise("ConfigValue", "bad diameter key " + k);
            c.params.set(i, j, parse_decimal(v));
        }
    }
    c.params = validate_and_rescale(c.params);
    c.experiment = get("experiment.kind", "classify");
    static const std::vector<std::string> kinds{"classify", "sample", "contours", "weights", "expand",
                                                "phase-dominance", "mixture-test", "penetration",
                                                "interface-density"};
    if (std::find(kinds.begin(), kinds.end(), c.experiment) == kinds.end())
        raise("ConfigValue", "unknown experiment " + c.experiment);
    auto list_item = [&](const std::string& k, const std::string& s) {
        try {
            size_t pos = 0;
            double x = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(k);
            return x;
        } catch (const std::exception&) {
            raise("ConfigValue", k + " has a non-numeric entry: " + s);
        }
    };
    c.L.clear();
    for (const auto& s : split_list(get("experiment.L", "20"))) {
        double l = list_item("experiment.L", s);
        if (l <= 0 || l != std::floor(l)) raise("ConfigValue", "box sides must be positive integers");
        c.L.push_back(static_cast<int>(l));
    }
    for (const auto& s : split_list(get("experiment.z_grid", "")))
        c.z_grid.push_back(list_item("experiment.z_grid", s));
    c.chains = static_cast<int>(num("experiment.chains", 4));
    c.boundary = static_cast<int>(num("experiment.boundary", 1));
    if (c.boundary < 0 || c.boundary > q) raise("ConfigValue", "boundary type out of range");
    c.central_fraction = num("experiment.central_fraction", 0.25);
    c.threshold = num("experiment.threshold", -1);
    c.size_cap = static_cast<int>(num("experiment.size_cap", 2));
    c.weight_samples = static_cast<long>(num("experiment.weight_samples", 20000));
    c.chain.sweeps = static_cast<long>(num("chain.sweeps", 100));
    c.chain.burn_in = static_cast<long>(num("chain.burn_in", 10));
    c.chain.thinning = static_cast<long>(num("chain.thinning", 1));
    c.chain.p_birth = num("chain.p_birth", 0.4);
    c.chain.p_death = num("chain.p_death", 0.4);
    c.chain.p_translate = num("chain.p_translate", 0.2);
    c.chain.step = num("chain.step", 0.5);
    c.chain.initial_type = static_cast<int>(num("chain.initial_type", 0));
    c.seed = static_cast<uint64_t>(num("run.seed", 1));
    c.threads = std::max(1, static_cast<int>(num("run.threads", 1)));
    c.out_dir = get("output.dir", "");
    if (!c.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(c.out_dir, ec);
        std::ofstream probe(c.out_dir + "/.probe");
        if (!probe) raise("ConfigValue", "output directory is not writable: " + c.out_dir);
        probe.close();
        std::filesystem::remove(c.out_dir + "/.probe", ec);
    }
    return c;
}

// One measured value at a grid point.
struct Observable {
    std::string name;
    std::map<std::string, double> at;  // grid coordinates such as L and z
    double mean = 0;
    double stderr_ = 0;
    long n = 0;
    bool operator==(const Observable& o) const {
        return name == o.name && at == o.at && mean == o.mean && stderr_ == o.stderr_ && n == o.n;
    }
};

struct RunRecord {
    std::string config_hash;
    std::string code_version = kCodeVersion;
    std::string experiment;
    nlohmann::json rng;                  // algorithm and seed
    std::vector<Observable> series;
    nlohmann::json estimates = nlohmann::json::object();
    double wall_clock = 0;               // seconds; not part of the observables file
    bool operator==(const RunRecord& o) const {
        return config_hash == o.config_hash && code_version == o.code_version && experiment == o.experiment &&
               rng == o.rng && series == o.series && estimates == o.estimates && wall_clock == o.wall_clock;
    }
};

inline nlohmann::json observable_to_json(const Observable& o) {
    return {{"kind", "observable"}, {"name", o.name}, {"at", o.at}, {"mean", o.mean}, {"stderr", o.stderr_}, {"n", o.n}};
}

// Deterministic observables stream: header, one line per observable, then the estimates.
inline std::string observables_jsonl(const RunRecord& r) {
    std::string out;
    nlohmann::json h = {{"kind", "header"},
                        {"config_hash", r.config_hash},
                        {"code_version", r.code_version},
                        {"experiment", r.experiment},
                        {"rng", r.rng}};
    out += h.dump() + "\n";
    for (const auto& o : r.series) out += observable_to_json(o).dump() + "\n";
    if (!r.estimates.empty()) out += nlohmann::json{{"kind", "estimates"}, {"values", r.estimates}}.dump() + "\n";
    return out;
}

inline std::string record_jsonl(const RunRecord& r) {
    return observables_jsonl(r) + nlohmann::json{{"kind", "timing"}, {"wall_clock", r.wall_clock}}.dump() + "\n";
}

inline RunRecord parse_record(const std::string& text) {
    RunRecord r;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        std::string kind = j.at("kind");
        if (kind == "header") {
            r.config_hash = j.at("config_hash");
            r.code_version = j.at("code_version");
            r.experiment = j.at("experiment");
            r.rng = j.at("rng");
        } else if (kind == "observable") {
            Observable o;
            o.name = j.at("name");
            o.at = j.at("at").get<std::map<std::string, double>>();
            o.mean = j.at("mean");
            o.stderr_ = j.at("stderr");
            o.n = j.at("n");
            r.series.push_back(o);
        } else if (kind == "estimates") {
            r.estimates = j.at("values");
        } else if (kind == "timing") {
            r.wall_clock = j.at("wall_clock");
        } else {
            raise("ParseError", "unknown record line kind " + kind);
        }
    }
    return r;
}

inline std::string summary_text(const RunRecord& r) {
    std::ostringstream os;
    os << "experiment " << r.experiment << "  config " << r.config_hash << "  version " << r.code_version << "\n";
    for (const auto& o : r.series) {
        os << o.name;
        for (const auto& [k, v] : o.at) os << " " << k << "=" << v;
        os << ": " << o.mean << " +- " << o.stderr_ << " (n=" << o.n << ")\n";
    }
    if (!r.estimates.empty()) os << r.estimates.dump(2) << "\n";
    os << "wall clock " << r.wall_clock << " s\n";
    return os.str();
}

// Writes observables.jsonl (deterministic), record.jsonl (with timing) and summary.txt into dir.
inline void emit_report(const RunRecord& r, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    auto put = [&](const std::string& name, const std::string& body) {
        std::ofstream out(dir + "/" + name, std::ios::binary);
        if (!out) raise("IOError", "cannot write " + dir + "/" + name);
        out << body;
        if (!out) raise("IOError", "write failed for " + dir + "/" + name);
    };
    put("observables.jsonl", observables_jsonl(r));
    put("record.jsonl", record_jsonl(r));
    put("summary.txt", summary_text(r));
}

// ---------------------------------------------------------------------------------------------

inline nlohmann::json stability_to_json(const StabilityReport& rep, const ModelParams& p) {
    nlohmann::json j;
    std::vector<std::string> lv;
    for (const auto& l : rep.levels) lv.push_back(to_string(l));
    j["levels"] = lv;
    nlohmann::json vec = nlohmann::json::object();
    for (int t = 1; t <= p.q; ++t) vec[std::to_string(t)] = rep.vectors[static_cast<size_t>(t)];
    j["incidence"] = vec;
    j["stable"] = rep.stable_set;
    j["symmetries"] = rep.symmetry_group.size();
    return j;
}

inline nlohmann::json prediction_to_json(const PhasePrediction& pr) {
    nlohmann::json j;
    j["case"] = pr.case_tag;
    nlohmann::json lim = nlohmann::json::object();
    for (const auto& [bc, m] : pr.limits) {
        nlohmann::json e = nlohmann::json::object();
        for (const auto& [t, w] : m) e[std::to_string(t)] = w;
        lim[bc == 0 ? "empty" : std::to_string(bc)] = e;
    }
    j["limits"] = lim;
    return j;
}

// Runs `n` jobs on up to `threads` workers; job k writes only to slot k so results are order independent.
template <class F>
void parallel_for(int n, int threads, F&& job) {
    if (threads <= 1 || n <= 1) {
        for (int k = 0; k < n; ++k) job(k);
        return;
    }
    std::mutex mu;
    int next = 0;
    std::exception_ptr err;
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(threads, n); ++w)
        pool.emplace_back([&] {
            for (;;) {
                int k;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= n || err) return;
                    k = next++;
                }
                try {
                    job(k);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// Majority phase over the central box: a type in 1..q, or 0 when no phase holds a strict majority.
inline int central_label(const PhaseMap& pm, const Box& central, int q) {
    std::vector<size_t> cnt(static_cast<size_t>(q + 1), 0);
    for (size_t k = 0; k < central.volume(); ++k) {
        int t = pm.at(central.cell(k));
        if (t > 0) ++cnt[static_cast<size_t>(t)];
    }
    for (int t = 1; t <= q; ++t)
        if (2 * cnt[static_cast<size_t>(t)] > central.volume()) return t;
    return 0;
}

inline double phase_fraction(const PhaseMap& pm, const Box& central, int t) {
    size_t c = 0;
    for (size_t k = 0; k < central.volume(); ++k) c += pm.at(central.cell(k)) == t;
    return static_cast<double>(c) / static_cast<double>(central.volume());
}

struct ChainJob {
    Box box;
    ModelParams params;
    ChainSettings settings;
    int boundary = 0;
};

// Runs one chain with boundary ||boundary (or the empty boundary) and hands every emitted
// sample to `f` together with the field over the box.
template <class F>
void run_job(const ChainJob& job, F&& f) {
    CounterRng brng(job.settings.seed, job.settings.stream ^ 0xb0u);
    BoundaryCondition bc = job.boundary > 0 ? make_type_boundary(job.box, job.boundary, job.params.z, brng, job.params)
                                            : BoundaryCondition::empty();
    std::optional<int> ext;
    if (job.boundary > 0) ext = job.boundary;
    run_chain(job.box, bc, job.params, job.settings, [&](const ParticleConfiguration& c, long) {
        f(c, cell_field(c, job.box, ext));
    });
}

inline Box experiment_box(int d, int L) { return Box::cube(d, L, 0); }

inline Observable make_observable(const std::string& name, std::map<std::string, double> at,
                                  const std::vector<double>& per_chain) {
    Observable o;
    o.name = name;
    o.at = std::move(at);
    auto e = estimate_mean(per_chain);
    o.mean = e.mean;
    o.stderr_ = per_chain.size() > 1 ? e.stderr_ : 0.0;
    o.n = static_cast<long>(per_chain.size());
    return o;
}

inline double effective_threshold(const ExperimentConfig& c) {
    return c.threshold < 0 ? c.params.small_threshold() : c.threshold;
}

inline void run_phase_dominance(const ExperimentConfig& c, RunRecord& r) {
    std::vector<double> zs = c.z_grid.empty() ? std::vector<double>{c.params.z} : c.z_grid;
    int t = c.boundary;
    uint64_t point = 0;
    for (double z : zs)
        for (int L : c.L) {
            ModelParams p = c.params;
            p.z = z;
            Box box = experiment_box(p.d, L);
            Box central = box.central(c.central_fraction);
            std::vector<double> frac(static_cast<size_t>(c.chains), 0.0);
            parallel_for(c.chains, c.threads, [&](int k) {
                ChainJob job{box, p, c.chain, t};
                job.settings.seed = c.seed;
                job.settings.stream = point * 100003ULL + static_cast<uint64_t>(k);
                double s = 0;
                long n = 0;
                run_job(job, [&](const ParticleConfiguration&, const CellField& f) {
                    s += phase_fraction(phase_map(f), central, t > 0 ? t : 1);
                    ++n;
                });
                frac[static_cast<size_t>(k)] = n ? s / static_cast<double>(n) : 0.0;
            });
            r.series.push_back(make_observable("central_phase_fraction", {{"L", L}, {"z", z}}, frac));
            ++point;
        }
}

// Label of the last sample of each chain; chains are the independent units.
inline void run_mixture_test(const ExperimentConfig& c, RunRecord& r) {
    auto rep = stable_types(c.params);
    auto pred = predict_limits(rep, c.params);
    r.estimates["prediction"] = prediction_to_json(pred);
    r.estimates["stable"] = rep.stable_set;
    int L = c.L.front();
    Box box = experiment_box(c.params.d, L);
    Box central = box.central(c.central_fraction);
    std::vector<int> label(static_cast<size_t>(c.chains), 0);
    parallel_for(c.chains, c.threads, [&](int k) {
        ChainJob job{box, c.params, c.chain, c.boundary};
        job.settings.seed = c.seed;
        job.settings.stream = static_cast<uint64_t>(k);
        int last = 0;
        run_job(job, [&](const ParticleConfiguration&, const CellField& f) {
            last = central_label(phase_map(f), central, c.params.q);
        });
        label[static_cast<size_t>(k)] = last;
    });
    nlohmann::json counts = nlohmann::json::object();
    std::vector<long> cnt(static_cast<size_t>(c.params.q + 1), 0);
    for (int l : label) ++cnt[static_cast<size_t>(l)];
    for (int t = 1; t <= c.params.q; ++t) counts[std::to_string(t)] = cnt[static_cast<size_t>(t)];
    counts["mixed"] = cnt[0];
    r.estimates["labels"] = counts;
    long stable_n = 0;
    for (int s : rep.stable_set) stable_n += cnt[static_cast<size_t>(s)];
    for (int s : rep.stable_set) {
        Observable o;
        o.name = "stable_share";
        o.at = {{"type", s}, {"L", L}};
        o.n = stable_n;
        if (stable_n > 0) {
            double ph = static_cast<double>(cnt[static_cast<size_t>(s)]) / static_cast<double>(stable_n);
            o.mean = ph;
            o.stderr_ = std::sqrt(ph * (1 - ph) / static_cast<double>(stable_n));
        }
        r.series.push_back(o);
    }
    std::vector<double> ind(label.size());
    for (size_t k = 0; k < label.size(); ++k) ind[k] = rep.is_stable(label[k]) ? 1.0 : 0.0;
    r.series.push_back(make_observable("stable_labelled", {{"L", L}}, ind));
}

// Event: the boundary layer reaches the concentric box of half the side.
inline void run_penetration(const ExperimentConfig& c, RunRecord& r) {
    auto rep = stable_types(c.params);
    double thr = effective_threshold(c);
    r.estimates["threshold"] = thr;
    uint64_t point = 0;
    for (int L : c.L) {
        Box box = experiment_box(c.params.d, L);
        Box half = box.central(0.5);
        std::vector<double> hit(static_cast<size_t>(c.chains), 0.0);
        parallel_for(c.chains, c.threads, [&](int k) {
            ChainJob job{box, c.params, c.chain, c.boundary};
            job.settings.seed = c.seed;
            job.settings.stream = point * 100003ULL + static_cast<uint64_t>(k);
            double s = 0;
            long n = 0;
            run_job(job, [&](const ParticleConfiguration&, const CellField& f) {
                auto layer = boundary_layer(f, box, rep.stable_set, thr);
                bool meets = false;
                for (CellKey key : layer.base)
                    if (half.contains(decode(key, box.d))) {
                        meets = true;
                        break;
                    }
                s += meets;
                ++n;
            });
            hit[static_cast<size_t>(k)] = n ? s / static_cast<double>(n) : 0.0;
        });
        r.series.push_back(make_observable("penetration", {{"L", L}}, hit));
        ++point;
    }
}

inline void run_interface_density(const ExperimentConfig& c, RunRecord& r) {
    uint64_t point = 0;
    for (int L : c.L) {
        Box box = experiment_box(c.params.d, L);
        std::vector<double> vol(static_cast<size_t>(c.chains), 0.0), dens(vol.size(), 0.0);
        parallel_for(c.chains, c.threads, [&](int k) {
            ChainJob job{box, c.params, c.chain, c.boundary};
            job.settings.seed = c.seed;
            job.settings.stream = point * 100003ULL + static_cast<uint64_t>(k);
            double s = 0;
            long n = 0;
            run_job(job, [&](const ParticleConfiguration&, const CellField& f) {
                auto col = extract_contours(f, effective_threshold(c));
                double v = 0;
                for (const auto& g : interface_contours(col, box)) v += static_cast<double>(g.volume());
                s += v;
                ++n;
            });
            vol[static_cast<size_t>(k)] = n ? s / static_cast<double>(n) : 0.0;
            dens[static_cast<size_t>(k)] = vol[static_cast<size_t>(k)] / static_cast<double>(box.volume());
        });
        r.series.push_back(make_observable("interface_volume", {{"L", L}}, vol));
        r.series.push_back(make_observable("interface_density", {{"L", L}}, dens));
        ++point;
    }
}

inline void run_sample(const ExperimentConfig& c, RunRecord& r, bool contours) {
    int L = c.L.front();
    Box box = experiment_box(c.params.d, L);
    ChainJob job{box, c.params, c.chain, c.boundary};
    job.settings.seed = c.seed;
    std::vector<double> total, admissible, ncont, compatible;
    ParticleConfiguration last;
    CellField last_field;
    bool have = false;
    run_job(job, [&](const ParticleConfiguration& cfg, const CellField& f) {
        total.push_back(static_cast<double>(cfg.total()));
        admissible.push_back(is_admissible(cfg, c.params) ? 1.0 : 0.0);
        if (contours) {
            auto col = extract_contours(f, effective_threshold(c));
            ncont.push_back(static_cast<double>(col.contours.size()));
            compatible.push_back(check_compatibility(col).ok ? 1.0 : 0.0);
        }
        last = cfg;
        last_field = f;
        have = true;
    });
    r.series.push_back(make_observable("particles", {{"L", L}}, total));
    r.series.push_back(make_observable("admissible", {{"L", L}}, admissible));
    if (contours) {
        r.series.push_back(make_observable("contours", {{"L", L}}, ncont));
        r.series.push_back(make_observable("compatible", {{"L", L}}, compatible));
    }
    if (have && !c.out_dir.empty()) {
        std::ofstream snap(c.out_dir + "/snapshot.bin", std::ios::binary);
        write_snapshot(snap, last, c.params.z, c.seed, c.chain.sweeps);
        if (contours) {
            std::ofstream rle(c.out_dir + "/field.rle");
            rle << field_to_rle(last_field);
            std::ofstream cj(c.out_dir + "/contours.jsonl");
            for (const auto& g : extract_contours(last_field, effective_threshold(c)).contours)
                cj << contour_to_json(g).dump() << "\n";
        }
    }
}

inline void run_weights(const ExperimentConfig& c, RunRecord& r) {
    ModelParams p = c.params;
    int d = p.d;
    // The single empty cell inside a type-1 sea.
    Box b = Box::cube(d, 1, 0);
    CellField f(b, 0, 1);
    auto col = extract_contours(f);
    Budget budget{c.weight_samples, c.seed};
    auto est = estimate_contour_weight(col.contours.front(), p, budget);
    auto direct = direct_field_weight(f, 1, p, budget);
    r.estimates["single_empty_closed_form"] = p.v() / (1 - p.v());
    r.estimates["single_empty_weight"] = est.mean;
    r.series.push_back({"single_empty_direct", {{"z", p.z}}, direct.mean, direct.stderr_, direct.samples});
}

inline void run_expand(const ExperimentConfig& c, RunRecord& r) {
    const auto& p = c.params;
    nlohmann::json gaps = nlohmann::json::array();
    for (int i = 1; i <= p.q; ++i)
        for (int j = i + 1; j <= p.q; ++j) {
            auto g = free_energy_gap(p, i, j, c.size_cap);
            gaps.push_back({{"i", i},
                            {"j", j},
                            {"sign", g.sign},
                            {"log_abs", std::isfinite(g.log_abs) ? nlohmann::json(g.log_abs) : nlohmann::json(nullptr)},
                            {"level", g.level},
                            {"log_bound", std::isfinite(g.log_bound) ? nlohmann::json(g.log_bound) : nlohmann::json(nullptr)},
                            {"bound_holds", g.bound_holds},
                            {"agrees_with_classifier", g.agrees_with_classifier}});
        }
    r.estimates["gaps"] = gaps;
    auto f = small_contour_free_energy(1, p, c.size_cap, build_weight_table(p, 1));
    r.estimates["f1_nonseparating"] = f.nonseparating;
    r.estimates["f1_remainder_bound"] = f.remainder_bound;
}

inline RunRecord run_experiment(const ExperimentConfig& c) {
    auto t0 = std::chrono::steady_clock::now();
    RunRecord r;
    r.config_hash = c.hash();
    r.experiment = c.experiment;
    r.rng = {{"algorithm", CounterRng::algorithm}, {"seed", c.seed}};
    auto rep = stable_types(c.params);
    r.estimates["stability"] = stability_to_json(rep, c.params);
    if (c.params.q <= 4) r.estimates["prediction"] = prediction_to_json(predict_limits(rep, c.params));
    if (!c.params.warnings.empty()) r.estimates["warnings"] = c.params.warnings;
    const auto& e = c.experiment;
    if (e == "sample") run_sample(c, r, false);
    else if (e == "contours") run_sample(c, r, true);
    else if (e == "weights") run_weights(c, r);
    else if (e == "expand") run_expand(c, r);
    else if (e == "phase-dominance") run_phase_dominance(c, r);
    else if (e == "mixture-test") run_mixture_test(c, r);
    else if (e == "penetration") run_penetration(c, r);
    else if (e == "interface-density") run_interface_density(c, r);
    r.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace wrsim
