#include "fedsim/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fedsim {

namespace {

using nlohmann::json;

void require_known_keys(const json& obj, const std::set<std::string>& known,
                        const std::string& prefix) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key())) {
            throw ParseError("unknown key '" + prefix + it.key() + "'");
        }
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ParseError(std::string("field '") + key + "': " + e.what());
        }
    }
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

Algorithm ExperimentConfig::algorithm() const {
    return algorithm_from_name(federation.algorithm);
}

bool ExperimentConfig::agc_active() const {
    if (optim.agc == "on") return true;
    if (optim.agc == "off") return false;
    // Auto rule: clipping exists for normalization-free training and the
    // reference practice bypasses it at small batch sizes.
    const Variant v =
        (algorithm() == Algorithm::FedWon && !model.wsconv) ? Variant::Plain
                                                            : variant_for(algorithm());
    const bool norm_free = (v == Variant::WSConv || v == Variant::Plain);
    return norm_free && federation.batch_size >= 8;
}

AlgorithmSpec ExperimentConfig::algorithm_spec() const {
    AlgorithmSpec spec;
    spec.kind = algorithm();
    spec.freeze_round = federation.freeze_round;
    spec.ws_enabled = model.wsconv;
    spec.optim.lr = optim.lr;
    spec.optim.agc_eps = optim.agc_eps;
    spec.optim.agc_lambda = optim.agc_lambda;
    spec.optim.agc_scope =
        optim.agc_scope == "conv_only" ? AgcScope::ConvOnly : AgcScope::ConvAndFc;
    spec.optim.agc_enabled = agc_active();
    spec.optim.prox_mu = (spec.kind == Algorithm::FedProx) ? optim.prox_mu : 0.0;
    return spec;
}

ModelSpec ExperimentConfig::model_spec() const {
    ModelSpec spec;
    spec.in_channels = dataset.channels;
    spec.height = dataset.image_size;
    spec.width = dataset.image_size;
    spec.num_classes = dataset.classes;
    spec.width_scale = model.width_scale;
    spec.dropout_rate = model.dropout;
    spec.variant = algorithm_spec().model_variant();
    return spec;
}

DataGenConfig ExperimentConfig::datagen_config() const {
    DataGenConfig cfg;
    cfg.num_domains = dataset.domains;
    cfg.num_classes = dataset.classes;
    cfg.train_per_domain = dataset.train_per_domain;
    cfg.test_per_domain = dataset.test_per_domain;
    cfg.channels = dataset.channels;
    cfg.height = dataset.image_size;
    cfg.width = dataset.image_size;
    cfg.gap_strength = dataset.gap_strength;
    return cfg;
}

std::size_t ExperimentConfig::total_clients() const {
    if (dataset.partition == "domain") return dataset.domains * dataset.clients_per_domain;
    return dataset.num_clients;
}

namespace {

json dataset_to_json(const DatasetBlock& d) {
    json j;
    j["domains"] = d.domains;
    j["classes"] = d.classes;
    j["train_per_domain"] = d.train_per_domain;
    j["test_per_domain"] = d.test_per_domain;
    j["channels"] = d.channels;
    j["image_size"] = d.image_size;
    j["gap_strength"] = d.gap_strength;
    j["partition"] = d.partition;
    j["alpha"] = d.alpha;
    j["clients_per_domain"] = d.clients_per_domain;
    j["num_clients"] = d.num_clients;
    return j;
}

}  // namespace

std::string ExperimentConfig::resolved_json() const {
    json j;
    j["name"] = name;
    j["dataset"] = dataset_to_json(dataset);
    j["federation"] = {{"algorithm", federation.algorithm},
                       {"rounds", federation.rounds},
                       {"client_fraction", federation.client_fraction},
                       {"local_epochs", federation.local_epochs},
                       {"batch_size", federation.batch_size},
                       {"freeze_round", federation.freeze_round},
                       {"checkpoint_interval", federation.checkpoint_interval}};
    j["model"] = {{"width_scale", model.width_scale},
                  {"dropout", model.dropout},
                  {"wsconv", model.wsconv}};
    j["optim"] = {{"lr", optim.lr},          {"agc", optim.agc},
                  {"agc_lambda", optim.agc_lambda}, {"agc_eps", optim.agc_eps},
                  {"agc_scope", optim.agc_scope},   {"prox_mu", optim.prox_mu},
                  {"agc_active", agc_active()}};
    j["seeds"] = seeds;
    j["output_dir"] = output_dir;
    j["timing"] = timing;
    return j.dump(2);
}

std::string ExperimentConfig::dataset_fingerprint() const {
    json j;
    j["dataset"] = dataset_to_json(dataset);
    j["seeds"] = seeds;
    std::ostringstream os;
    os << std::hex << fnv1a64(j.dump());
    return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config is not valid json: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("config root must be an object");

    require_known_keys(doc, {"name", "dataset", "federation", "model", "optim", "seeds",
                             "output_dir", "timing"},
                       "");

    ExperimentConfig cfg;

    if (doc.contains("dataset")) {
        const json& d = doc["dataset"];
        require_known_keys(d,
                           {"domains", "classes", "train_per_domain", "test_per_domain",
                            "channels", "image_size", "gap_strength", "partition", "alpha",
                            "clients_per_domain", "num_clients"},
                           "dataset.");
        get_if(d, "domains", cfg.dataset.domains);
        get_if(d, "classes", cfg.dataset.classes);
        get_if(d, "train_per_domain", cfg.dataset.train_per_domain);
        get_if(d, "test_per_domain", cfg.dataset.test_per_domain);
        get_if(d, "channels", cfg.dataset.channels);
        get_if(d, "image_size", cfg.dataset.image_size);
        get_if(d, "gap_strength", cfg.dataset.gap_strength);
        get_if(d, "partition", cfg.dataset.partition);
        get_if(d, "alpha", cfg.dataset.alpha);
        get_if(d, "clients_per_domain", cfg.dataset.clients_per_domain);
        get_if(d, "num_clients", cfg.dataset.num_clients);
    }
    if (doc.contains("federation")) {
        const json& f = doc["federation"];
        require_known_keys(f,
                           {"algorithm", "rounds", "client_fraction", "local_epochs",
                            "batch_size", "freeze_round", "checkpoint_interval"},
                           "federation.");
        get_if(f, "algorithm", cfg.federation.algorithm);
        get_if(f, "rounds", cfg.federation.rounds);
        get_if(f, "client_fraction", cfg.federation.client_fraction);
        get_if(f, "local_epochs", cfg.federation.local_epochs);
        get_if(f, "batch_size", cfg.federation.batch_size);
        if (f.contains("freeze_round")) {
            get_if(f, "freeze_round", cfg.federation.freeze_round);
            cfg.federation.freeze_round_set = true;
        }
        get_if(f, "checkpoint_interval", cfg.federation.checkpoint_interval);
    }
    if (doc.contains("model")) {
        const json& m = doc["model"];
        require_known_keys(m, {"width_scale", "dropout", "wsconv"}, "model.");
        get_if(m, "width_scale", cfg.model.width_scale);
        get_if(m, "dropout", cfg.model.dropout);
        get_if(m, "wsconv", cfg.model.wsconv);
    }
    if (doc.contains("optim")) {
        const json& o = doc["optim"];
        require_known_keys(
            o, {"lr", "agc", "agc_lambda", "agc_eps", "agc_scope", "prox_mu"}, "optim.");
        if (o.contains("lr")) {
            get_if(o, "lr", cfg.optim.lr);
            cfg.optim.lr_set = true;
        }
        get_if(o, "agc", cfg.optim.agc);
        get_if(o, "agc_lambda", cfg.optim.agc_lambda);
        get_if(o, "agc_eps", cfg.optim.agc_eps);
        get_if(o, "agc_scope", cfg.optim.agc_scope);
        get_if(o, "prox_mu", cfg.optim.prox_mu);
    }
    get_if(doc, "name", cfg.name);
    get_if(doc, "seeds", cfg.seeds);
    get_if(doc, "output_dir", cfg.output_dir);
    get_if(doc, "timing", cfg.timing);

    finalize_config(cfg);
    return cfg;
}

void finalize_config(ExperimentConfig& cfg) {
    const Algorithm algo = algorithm_from_name(cfg.federation.algorithm);

    if (cfg.name.empty()) cfg.name = cfg.federation.algorithm;
    if (!cfg.federation.freeze_round_set) {
        cfg.federation.freeze_round = cfg.federation.rounds / 2;
        cfg.federation.freeze_round_set = true;
    }
    if (!cfg.optim.lr_set) {
        cfg.optim.lr = (algo == Algorithm::FedWon) ? 0.05 : 0.01;
        cfg.optim.lr_set = true;
    }

    // Structural checks.
    if (cfg.dataset.partition != "domain" && cfg.dataset.partition != "iid" &&
        cfg.dataset.partition != "dirichlet") {
        throw ParseError("dataset.partition must be domain, iid or dirichlet, got '" +
                         cfg.dataset.partition + "'");
    }
    if (cfg.optim.agc != "auto" && cfg.optim.agc != "on" && cfg.optim.agc != "off") {
        throw ParseError("optim.agc must be auto, on or off");
    }
    if (cfg.optim.agc_scope != "conv_and_fc" && cfg.optim.agc_scope != "conv_only") {
        throw ParseError("optim.agc_scope must be conv_and_fc or conv_only");
    }
    if (cfg.seeds.empty()) throw ConstraintViolation("seeds must not be empty");
    if (!(cfg.federation.client_fraction > 0.0 && cfg.federation.client_fraction <= 1.0)) {
        throw ConstraintViolation("client_fraction must be in (0, 1]");
    }
    if (cfg.federation.batch_size < 1) throw ConstraintViolation("batch_size must be >= 1");
    if (!(cfg.optim.lr > 0.0)) throw ConstraintViolation("lr must be positive");
    if (!(cfg.optim.agc_lambda > 0.0)) {
        throw ConstraintViolation("agc_lambda must be positive");
    }
    if (cfg.dataset.partition == "dirichlet" && !(cfg.dataset.alpha > 0.0)) {
        throw ConstraintViolation("dirichlet partition needs alpha > 0");
    }

    // Protocol constraints.
    if (is_stateful(algo) && cfg.federation.client_fraction < 1.0) {
        throw ConstraintViolation(cfg.federation.algorithm +
                                  " is stateful: every client must participate every round "
                                  "(client_fraction must be 1)");
    }
    if (is_bn_based(algo) && cfg.federation.batch_size < 2) {
        throw ConstraintViolation(cfg.federation.algorithm +
                                  " trains batch-norm statistics and needs batch_size >= 2");
    }
    if (!cfg.model.wsconv && algo != Algorithm::FedWon) {
        throw ConstraintViolation("model.wsconv=false is only meaningful for fedwon");
    }

    // The model dimensions must be constructible.
    try {
        Cnn6 probe(cfg.model_spec());
        (void)probe;
    } catch (const InvalidSpec& e) {
        throw ConstraintViolation(e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ParseError("override must be key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    auto as_size = [&]() -> std::size_t {
        try {
            return static_cast<std::size_t>(std::stoull(value));
        } catch (...) {
            throw ParseError("override '" + key + "' needs an integer, got '" + value + "'");
        }
    };
    auto as_double = [&]() -> double {
        try {
            return std::stod(value);
        } catch (...) {
            throw ParseError("override '" + key + "' needs a number, got '" + value + "'");
        }
    };
    auto as_bool = [&]() -> bool {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw ParseError("override '" + key + "' needs true/false, got '" + value + "'");
    };

    if (key == "name") cfg.name = value;
    else if (key == "dataset.domains") cfg.dataset.domains = as_size();
    else if (key == "dataset.classes") cfg.dataset.classes = as_size();
    else if (key == "dataset.train_per_domain") cfg.dataset.train_per_domain = as_size();
    else if (key == "dataset.test_per_domain") cfg.dataset.test_per_domain = as_size();
    else if (key == "dataset.channels") cfg.dataset.channels = as_size();
    else if (key == "dataset.image_size") cfg.dataset.image_size = as_size();
    else if (key == "dataset.gap_strength") cfg.dataset.gap_strength = as_double();
    else if (key == "dataset.partition") cfg.dataset.partition = value;
    else if (key == "dataset.alpha") cfg.dataset.alpha = as_double();
    else if (key == "dataset.clients_per_domain") cfg.dataset.clients_per_domain = as_size();
    else if (key == "dataset.num_clients") cfg.dataset.num_clients = as_size();
    else if (key == "federation.algorithm") cfg.federation.algorithm = value;
    else if (key == "federation.rounds") cfg.federation.rounds = as_size();
    else if (key == "federation.client_fraction") cfg.federation.client_fraction = as_double();
    else if (key == "federation.local_epochs") cfg.federation.local_epochs = as_size();
    else if (key == "federation.batch_size") cfg.federation.batch_size = as_size();
    else if (key == "federation.freeze_round") {
        cfg.federation.freeze_round = as_size();
        cfg.federation.freeze_round_set = true;
    } else if (key == "federation.checkpoint_interval") {
        cfg.federation.checkpoint_interval = as_size();
    } else if (key == "model.width_scale") cfg.model.width_scale = as_double();
    else if (key == "model.dropout") cfg.model.dropout = as_double();
    else if (key == "model.wsconv") cfg.model.wsconv = as_bool();
    else if (key == "optim.lr") {
        cfg.optim.lr = as_double();
        cfg.optim.lr_set = true;
    } else if (key == "optim.agc") cfg.optim.agc = value;
    else if (key == "optim.agc_lambda") cfg.optim.agc_lambda = as_double();
    else if (key == "optim.agc_eps") cfg.optim.agc_eps = as_double();
    else if (key == "optim.agc_scope") cfg.optim.agc_scope = value;
    else if (key == "optim.prox_mu") cfg.optim.prox_mu = as_double();
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "timing") cfg.timing = as_bool();
    else if (key == "seeds") {
        cfg.seeds.clear();
        std::istringstream ls(value);
        std::string tok;
        while (std::getline(ls, tok, ',')) {
            try {
                cfg.seeds.push_back(std::stoull(tok));
            } catch (...) {
                throw ParseError("seeds override needs comma-separated integers");
            }
        }
    } else {
        throw ParseError("unknown override key '" + key + "'");
    }

    finalize_config(cfg);
}

}  // namespace fedsim
