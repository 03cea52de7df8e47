#include "astromae/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace astromae {

RunMode mode_from_string(const std::string& s) {
    if (s == "gen-data") return RunMode::GenData;
    if (s == "pretrain") return RunMode::Pretrain;
    if (s == "finetune" || s == "train-scratch") return RunMode::Finetune;
    if (s == "eval") return RunMode::Eval;
    if (s == "gradcheck") return RunMode::GradCheck;
    throw ConfigError("unknown mode '" + s + "'");
}

std::string mode_to_string(RunMode m) {
    switch (m) {
        case RunMode::GenData: return "gen-data";
        case RunMode::Pretrain: return "pretrain";
        case RunMode::Finetune: return "finetune";
        case RunMode::Eval: return "eval";
        case RunMode::GradCheck: return "gradcheck";
    }
    return "?";
}

RunConfig RunConfig::defaults_for(RunMode mode) {
    RunConfig cfg;
    cfg.mode = mode;
    if (mode == RunMode::Pretrain) {
        cfg.lr_peak = 1.17e-3;
        cfg.warmup_epochs = 196;
        cfg.weight_decay = 0.05;
        cfg.beta1 = 0.9;
        cfg.beta2 = 0.95;
        cfg.epochs = 2000;
        cfg.batch = 2048;
    } else {
        cfg.lr_initial = 1e-4;
        cfg.weight_decay = 0.005;
        cfg.beta1 = 0.9;
        cfg.beta2 = 0.999;
        cfg.epochs = 700;
        cfg.batch = 1024;
    }
    return cfg;
}

// Small-model settings for a single desk-class machine. The published embed
// width is kept per-head divisible by bumping heads to 4 (64 % 3 != 0), and
// the warmup keeps its ~10% share of the shortened schedule.
void RunConfig::apply_desk_preset() {
    desk = true;
    embed_dim = 64;
    enc_depth = 4;
    dec_depth = 2;
    heads = 4;
    batch = 64;
    warmup_epochs = 20;
    if (mode == RunMode::Pretrain) {
        epochs = 200;
        n_samples = 2000;
    } else if (mode == RunMode::Finetune) {
        epochs = 60;
        n_samples = 5000;
    } else if (mode == RunMode::GenData) {
        n_samples = 2000;
    }
}

namespace {

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void RunConfig::apply_key(const std::string& key, const std::string& value) {
    if (key == "mode") mode = mode_from_string(value);
    else if (key == "data") data_path = value;
    else if (key == "out") out_dir = value;
    else if (key == "variant") variant = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "resume") resume = value;
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "patch_size") patch = parse_int(key, value);
    else if (key == "embed_dim") embed_dim = parse_int(key, value);
    else if (key == "enc_depth") enc_depth = parse_int(key, value);
    else if (key == "dec_depth") dec_depth = parse_int(key, value);
    else if (key == "heads") heads = parse_int(key, value);
    else if (key == "crop") crop = parse_int(key, value);
    else if (key == "mask_ratio") mask_ratio = parse_double(key, value);
    else if (key == "lr_peak") lr_peak = parse_double(key, value);
    else if (key == "lr_initial") lr_initial = parse_double(key, value);
    else if (key == "warmup_epochs") warmup_epochs = parse_int(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "epochs") epochs = parse_int(key, value);
    else if (key == "batch") batch = parse_int(key, value);
    else if (key == "cycle_length") cycle_length = parse_int(key, value);
    else if (key == "decay_base") decay_base = parse_double(key, value);
    else if (key == "cyclic_mode") cyclic_mode = value;
    else if (key == "noise_std") noise_std = parse_double(key, value);
    else if (key == "n_samples") n_samples = parse_int(key, value);
    else if (key == "desk") { if (parse_bool(key, value)) apply_desk_preset(); }
    else if (key == "split") eval_split = value;
    else if (key == "allow_train_eval") allow_train_eval = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
    if (patch < 1 || crop % patch != 0) {
        throw ConfigError("crop " + std::to_string(crop) + " must be divisible by patch_size " +
                          std::to_string(patch));
    }
    if (embed_dim % heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be divisible by heads " +
                          std::to_string(heads));
    }
    if (embed_dim % 2 != 0) throw ConfigError("embed_dim must be even for sine-cosine positions");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch < 2) throw ConfigError("batch must be >= 2");
    if (mode == RunMode::Pretrain && warmup_epochs >= epochs) {
        throw ConfigError("warmup_epochs must be smaller than epochs");
    }
    if (cyclic_mode != "restart" && cyclic_mode != "envelope") {
        throw ConfigError("cyclic_mode must be 'restart' or 'envelope'");
    }
    if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
        throw ConfigError("split must be train, val or test");
    }
}

std::string RunConfig::resolve_text() const {
    std::ostringstream os;
    os << "allow_train_eval=" << (allow_train_eval ? "true" : "false") << "\n";
    os << "batch=" << batch << "\n";
    os << "beta1=" << fmt_double(beta1) << "\n";
    os << "beta2=" << fmt_double(beta2) << "\n";
    os << "checkpoint=" << checkpoint << "\n";
    os << "crop=" << crop << "\n";
    os << "cycle_length=" << cycle_length << "\n";
    os << "cyclic_mode=" << cyclic_mode << "\n";
    os << "data=" << data_path << "\n";
    os << "dec_depth=" << dec_depth << "\n";
    os << "decay_base=" << fmt_double(decay_base) << "\n";
    os << "desk=" << (desk ? "true" : "false") << "\n";
    os << "embed_dim=" << embed_dim << "\n";
    os << "enc_depth=" << enc_depth << "\n";
    os << "epochs=" << epochs << "\n";
    os << "heads=" << heads << "\n";
    os << "lr_initial=" << fmt_double(lr_initial) << "\n";
    os << "lr_peak=" << fmt_double(lr_peak) << "\n";
    os << "mask_ratio=" << fmt_double(mask_ratio) << "\n";
    os << "mode=" << mode_to_string(mode) << "\n";
    os << "n_samples=" << n_samples << "\n";
    os << "noise_std=" << fmt_double(noise_std) << "\n";
    os << "out=" << out_dir << "\n";
    os << "patch_size=" << patch << "\n";
    os << "resume=" << resume << "\n";
    os << "seed=" << seed << "\n";
    os << "split=" << eval_split << "\n";
    os << "variant=" << variant << "\n";
    os << "warmup_epochs=" << warmup_epochs << "\n";
    os << "weight_decay=" << fmt_double(weight_decay) << "\n";
    return os.str();
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r\n");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

}  // namespace astromae
