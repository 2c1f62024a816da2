#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsdg/data.hpp"
#include "dsdg/fas_train.hpp"

namespace dsdg {

// Higher score means more live.
struct ScoredSample {
    double score = 0.0;
    Label label = Label::live;
    std::optional<std::string> spoof_type;
    std::string source;
};

// Live is the positive class; score >= threshold predicts live.
struct Confusion {
    long tp = 0, tn = 0, fp = 0, fn = 0;

    long total() const { return tp + tn + fp + fn; }
};

struct ErrorRates {
    double apcer = 0.0;  // spoof accepted as live
    double bpcer = 0.0;  // live rejected as spoof
    double acer = 0.0;
};

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

struct EvalReport {
    double threshold = 0.0;
    Confusion counts;
    ErrorRates rates;
    double eer = 0.0;
    std::optional<double> hter;  // cross-dataset only
    std::vector<ScoredSample> scores;
};

// Mean of the inferred depth grid.
double score(const FasModel& model, const Image& image);
double score(const UncertainDepth& ud);

Confusion confusion(const std::vector<ScoredSample>& scores, double threshold);

// Warnings about zero denominators go to `warn` (stderr when empty); the
// affected rate is reported as 0.
using WarningSink = std::function<void(const std::string&)>;
ErrorRates metrics(const Confusion& c, const WarningSink& warn = {});

EerResult eer(const std::vector<ScoredSample>& scores);
// Error at the threshold of the development set's equal-error point.
double hter(const std::vector<ScoredSample>& dev, const std::vector<ScoredSample>& test);

EvalReport evaluate_at(const std::vector<ScoredSample>& scores, double threshold, const WarningSink& warn = {});

// --- protocols --------------------------------------------------------------

enum class Protocol { intra, cross_type_loo, cross_dataset };
std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& text);

struct Fold {
    std::string name;
    std::vector<SampleRecord> train;
    std::vector<SampleRecord> dev;   // threshold selection
    std::vector<SampleRecord> test;
};

// One fold per distinct spoof type: training keeps every live record and the
// other types' spoofs; testing sees every live record and the held-out type.
std::vector<Fold> leave_one_type_out(const std::vector<SampleRecord>& records);

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  // population
};
MeanStd mean_std(const std::vector<double>& values);

struct ProtocolReport {
    Protocol protocol = Protocol::intra;
    std::vector<std::string> fold_names;
    std::vector<EvalReport> folds;
    MeanStd apcer, bpcer, acer, eer, hter;
};

// Scores one fold's evaluation split; the model argument is per fold.
using FoldScorer = std::function<std::vector<ScoredSample>(const Fold& fold, const std::vector<SampleRecord>& split)>;

// intra: threshold at the dev equal-error point (test itself when dev is
// empty). cross_type_loo: EER and the rates at its threshold on each held-out
// fold. cross_dataset: dev threshold transferred to test, HTER reported.
ProtocolReport run_protocol(const std::vector<Fold>& folds, Protocol protocol, const FoldScorer& scorer,
                            const WarningSink& warn = {});
ProtocolReport aggregate(Protocol protocol, std::vector<std::string> names, std::vector<EvalReport> folds);

// One split under a protocol's threshold rule; `dev` may be empty except for
// cross_dataset.
EvalReport evaluate_split(const std::vector<ScoredSample>& test, const std::vector<ScoredSample>& dev, Protocol protocol,
                          const WarningSink& warn = {});
// Score-file evaluation: cross_type_loo groups the test scores by spoof type
// (one fold per type, every live sample in each fold).
ProtocolReport evaluate_scores(const std::vector<ScoredSample>& test, const std::vector<ScoredSample>& dev,
                               Protocol protocol, const WarningSink& warn = {});

// --- files ------------------------------------------------------------------

// path<TAB>label<TAB>score, optional fourth column spoof_type.
std::vector<ScoredSample> read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, const std::vector<ScoredSample>& scores);

nlohmann::json to_json(const EvalReport& r, bool include_scores = false);
nlohmann::json to_json(const ProtocolReport& r);

}  // namespace dsdg
