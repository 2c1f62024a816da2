#include "dsdg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dsdg/error.hpp"

namespace dsdg {

double score(const UncertainDepth& ud) { return ud.mu.mean(); }

double score(const FasModel& model, const Image& image) { return score(model.predict(image)); }

Confusion confusion(const std::vector<ScoredSample>& scores, double threshold) {
    Confusion c;
    for (const auto& s : scores) {
        const bool predicted_live = s.score >= threshold;
        if (s.label == Label::live)
            (predicted_live ? c.tp : c.fn)++;
        else
            (predicted_live ? c.fp : c.tn)++;
    }
    return c;
}

namespace {

void emit(const WarningSink& warn, const std::string& msg) {
    if (warn)
        warn(msg);
    else
        std::cerr << "warning: " << msg << '\n';
}

double ratio(long num, long den) { return static_cast<double>(num) / static_cast<double>(den); }

struct ClassCounts {
    long live = 0, spoof = 0;
};

ClassCounts count_classes(const std::vector<ScoredSample>& scores) {
    ClassCounts c;
    for (const auto& s : scores) {
        if (!std::isfinite(s.score)) throw DomainError("scores must be finite");
        (s.label == Label::live ? c.live : c.spoof)++;
    }
    return c;
}

}  // namespace

ErrorRates metrics(const Confusion& c, const WarningSink& warn) {
    ErrorRates r;
    if (c.fp + c.tn == 0)
        emit(warn, "APCER undefined: no spoof samples; reported as 0");
    else
        r.apcer = ratio(c.fp, c.fp + c.tn);
    if (c.fn + c.tp == 0)
        emit(warn, "BPCER undefined: no live samples; reported as 0");
    else
        r.bpcer = ratio(c.fn, c.fn + c.tp);
    if (c.fp + c.tn > 0 && c.fn + c.tp > 0) {
        // One rounding from exact integer arithmetic.
        const long spoof = c.fp + c.tn, live = c.fn + c.tp;
        r.acer = static_cast<double>(c.fp * live + c.fn * spoof) / static_cast<double>(2 * spoof * live);
    } else {
        r.acer = 0.5 * (r.apcer + r.bpcer);
    }
    return r;
}

EerResult eer(const std::vector<ScoredSample>& scores) {
    const ClassCounts n = count_classes(scores);
    if (n.live == 0 || n.spoof == 0) throw LabelError("EER needs both live and spoof samples");

    std::vector<std::pair<double, Label>> sorted;
    sorted.reserve(scores.size());
    for (const auto& s : scores) sorted.emplace_back(s.score, s.label);
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    // Candidate thresholds lie between adjacent distinct scores; everything at
    // or below the lower score is predicted spoof.
    long live_below = 0, spoof_below = 0;
    bool found = false;
    EerResult best;
    double best_gap = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double v = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == v) {
            (sorted[i].second == Label::live ? live_below : spoof_below)++;
            ++i;
        }
        if (i == sorted.size()) break;
        const double threshold = 0.5 * (v + sorted[i].first);
        const double apcer = ratio(n.spoof - spoof_below, n.spoof);
        const double bpcer = ratio(live_below, n.live);
        const double gap = std::abs(apcer - bpcer);
        if (!found || gap < best_gap) {
            found = true;
            best_gap = gap;
            best = {0.5 * (apcer + bpcer), threshold};
        }
    }
    if (!found) {
        // All scores equal: the only meaningful threshold is the score itself.
        const double t = sorted.front().first;
        const ErrorRates r = metrics(confusion(scores, t), [](const std::string&) {});
        best = {0.5 * (r.apcer + r.bpcer), t};
    }
    return best;
}

double hter(const std::vector<ScoredSample>& dev, const std::vector<ScoredSample>& test) {
    const double t = eer(dev).threshold;
    return metrics(confusion(test, t)).acer;
}

EvalReport evaluate_at(const std::vector<ScoredSample>& scores, double threshold, const WarningSink& warn) {
    EvalReport r;
    r.threshold = threshold;
    r.counts = confusion(scores, threshold);
    r.rates = metrics(r.counts, warn);
    const ClassCounts n = count_classes(scores);
    if (n.live > 0 && n.spoof > 0) r.eer = eer(scores).eer;
    r.scores = scores;
    return r;
}

// --- protocols --------------------------------------------------------------

std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::intra: return "intra";
        case Protocol::cross_type_loo: return "cross_type_loo";
        case Protocol::cross_dataset: return "cross_dataset";
    }
    return "?";
}

Protocol parse_protocol(const std::string& text) {
    for (auto p : {Protocol::intra, Protocol::cross_type_loo, Protocol::cross_dataset})
        if (to_string(p) == text) return p;
    throw ConfigError("unknown protocol '" + text + "' (expected intra, cross_type_loo or cross_dataset)");
}

std::vector<Fold> leave_one_type_out(const std::vector<SampleRecord>& records) {
    std::vector<std::string> types;
    for (const auto& r : records)
        if (r.label == Label::spoof && std::find(types.begin(), types.end(), *r.spoof_type) == types.end())
            types.push_back(*r.spoof_type);
    std::vector<Fold> folds;
    for (const auto& held_out : types) {
        Fold f;
        f.name = held_out;
        for (const auto& r : records) {
            const bool is_held = r.label == Label::spoof && *r.spoof_type == held_out;
            if (r.label == Label::live || !is_held) f.train.push_back(r);
            if (r.label == Label::live || is_held) f.test.push_back(r);
        }
        folds.push_back(std::move(f));
    }
    return folds;
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) return {};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

ProtocolReport aggregate(Protocol protocol, std::vector<std::string> names, std::vector<EvalReport> folds) {
    ProtocolReport out;
    out.protocol = protocol;
    std::vector<double> a, b, c, e, h;
    for (const auto& f : folds) {
        a.push_back(f.rates.apcer);
        b.push_back(f.rates.bpcer);
        c.push_back(f.rates.acer);
        e.push_back(f.eer);
        if (f.hter) h.push_back(*f.hter);
    }
    out.apcer = mean_std(a);
    out.bpcer = mean_std(b);
    out.acer = mean_std(c);
    out.eer = mean_std(e);
    out.hter = mean_std(h);
    out.fold_names = std::move(names);
    out.folds = std::move(folds);
    return out;
}

EvalReport evaluate_split(const std::vector<ScoredSample>& test, const std::vector<ScoredSample>& dev, Protocol protocol,
                          const WarningSink& warn) {
    if (test.empty()) throw ConfigError("empty test split");
    switch (protocol) {
        case Protocol::intra:
            return evaluate_at(test, eer(dev.empty() ? test : dev).threshold, warn);
        case Protocol::cross_type_loo:
            return evaluate_at(test, eer(test).threshold, warn);
        case Protocol::cross_dataset: {
            if (dev.empty()) throw ConfigError("cross_dataset evaluation needs a dev split");
            EvalReport r = evaluate_at(test, eer(dev).threshold, warn);
            r.hter = r.rates.acer;
            return r;
        }
    }
    throw ConfigError("unhandled protocol");
}

ProtocolReport run_protocol(const std::vector<Fold>& folds, Protocol protocol, const FoldScorer& scorer,
                            const WarningSink& warn) {
    if (folds.empty()) throw ConfigError("protocol has no folds");
    std::vector<std::string> names;
    std::vector<EvalReport> reports;
    for (const auto& fold : folds) {
        if (fold.test.empty()) throw ConfigError("fold '" + fold.name + "' has an empty test split");
        if (protocol == Protocol::cross_dataset && fold.dev.empty())
            throw ConfigError("cross_dataset fold '" + fold.name + "' needs a dev split");
        const std::vector<ScoredSample> test = scorer(fold, fold.test);
        const std::vector<ScoredSample> dev =
            protocol == Protocol::cross_type_loo || fold.dev.empty() ? std::vector<ScoredSample>{} : scorer(fold, fold.dev);
        names.push_back(fold.name);
        reports.push_back(evaluate_split(test, dev, protocol, warn));
    }
    return aggregate(protocol, std::move(names), std::move(reports));
}

ProtocolReport evaluate_scores(const std::vector<ScoredSample>& test, const std::vector<ScoredSample>& dev,
                               Protocol protocol, const WarningSink& warn) {
    if (protocol != Protocol::cross_type_loo)
        return aggregate(protocol, {"all"}, {evaluate_split(test, dev, protocol, warn)});
    std::vector<std::string> types;
    for (const auto& s : test) {
        if (s.label != Label::spoof) continue;
        const std::string t = s.spoof_type.value_or(kUnknownSpoofType);
        if (std::find(types.begin(), types.end(), t) == types.end()) types.push_back(t);
    }
    if (types.empty()) throw LabelError("cross_type_loo needs spoof samples");
    std::vector<EvalReport> reports;
    for (const auto& t : types) {
        std::vector<ScoredSample> fold;
        for (const auto& s : test)
            if (s.label == Label::live || s.spoof_type.value_or(kUnknownSpoofType) == t) fold.push_back(s);
        reports.push_back(evaluate_split(fold, {}, protocol, warn));
    }
    return aggregate(protocol, types, std::move(reports));
}

// --- files ------------------------------------------------------------------

std::vector<ScoredSample> read_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ResolutionError("cannot open score file " + path.string());
    std::vector<ScoredSample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
        if (fields.size() != 3 && fields.size() != 4)
            throw ParseError("expected 3 or 4 tab-separated fields, found " + std::to_string(fields.size()), line_no);
        ScoredSample s;
        s.source = fields[0];
        try {
            s.label = parse_label(fields[1]);
        } catch (const Error& e) {
            throw ParseError(e.what(), line_no);
        }
        std::size_t used = 0;
        try {
            s.score = std::stod(fields[2], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != fields[2].size() || !std::isfinite(s.score))
            throw ParseError("score '" + fields[2] + "' is not a finite number", line_no);
        if (fields.size() == 4 && fields[3] != "-") s.spoof_type = fields[3];
        out.push_back(std::move(s));
    }
    return out;
}

void write_scores(const std::filesystem::path& path, const std::vector<ScoredSample>& scores) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ResolutionError("cannot write score file " + path.string());
    out << std::setprecision(17);
    for (const auto& s : scores) {
        out << s.source << '\t' << to_string(s.label) << '\t' << s.score;
        if (s.spoof_type) out << '\t' << *s.spoof_type;
        out << '\n';
    }
}

nlohmann::json to_json(const EvalReport& r, bool include_scores) {
    nlohmann::json j;
    j["threshold"] = r.threshold;
    j["tp"] = r.counts.tp;
    j["tn"] = r.counts.tn;
    j["fp"] = r.counts.fp;
    j["fn"] = r.counts.fn;
    j["apcer"] = r.rates.apcer;
    j["bpcer"] = r.rates.bpcer;
    j["acer"] = r.rates.acer;
    j["eer"] = r.eer;
    j["hter"] = r.hter ? nlohmann::json(*r.hter) : nlohmann::json(nullptr);
    if (include_scores) {
        j["scores"] = nlohmann::json::array();
        for (const auto& s : r.scores)
            j["scores"].push_back({{"source", s.source}, {"label", to_string(s.label)}, {"score", s.score}});
    }
    return j;
}

nlohmann::json to_json(const ProtocolReport& r) {
    auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}}; };
    nlohmann::json j;
    j["protocol"] = to_string(r.protocol);
    j["folds"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.folds.size(); ++i) {
        nlohmann::json f = to_json(r.folds[i]);
        f["name"] = r.fold_names[i];
        j["folds"].push_back(f);
    }
    j["aggregate"] = {{"apcer", ms(r.apcer)}, {"bpcer", ms(r.bpcer)}, {"acer", ms(r.acer)}, {"eer", ms(r.eer)}};
    if (r.protocol == Protocol::cross_dataset) j["aggregate"]["hter"] = ms(r.hter);
    return j;
}

}  // namespace dsdg
