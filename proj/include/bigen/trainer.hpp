#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bigen/metrics.hpp"
#include "bigen/model.hpp"
#include "bigen/optim.hpp"
#include "bigen/vocab.hpp"

namespace bigen {

struct TrainConfig {
    ModelConfig model;
    int epochs = 30;
    int accumulation = 8;  // cases per optimizer step
    double lr = 1e-4;
    double weight_decay = 5e-5;
    int patience = 10;     // epochs without a validation BLEU-4 gain before stopping
    int val_beam = 1;      // decoding used for model selection
    std::uint64_t seed = 1;  // case order

    void validate() const;
};

// Summed NLL of targets under logits (N x vocab), PAD targets ignored.
template <class T>
Var<T> nll_loss(Var<T> logits, std::span<const int> targets);

struct TrainData {
    const Vocab* vocab = nullptr;
    const KnowledgeBank* bank = nullptr;  // required when kr is on
    std::vector<const Case*> train;
    std::vector<const Case*> val;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;  // mean NLL per target token
    double val_bleu4 = 0;
    bool improved = false;
    std::uint64_t steps = 0;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    int best_epoch = 0;
    double best_val_bleu4 = -1;
    std::vector<NamedTensor> best_state;
};

// Called after every epoch; used for logging.
using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in float. The returned best_state is also loaded back into `model`.
TrainResult train(BiGenModel<float>& model, const TrainConfig& config, const TrainData& data,
                  const EpochCallback& on_epoch = {});

void write_epoch_jsonl(std::ostream& out, const EpochRecord& r);

std::vector<std::string> generate_reports(const BiGenModel<float>& model, const std::vector<const Case*>& cases,
                                          const KnowledgeBank* bank, const Vocab& vocab, int beam);

// Fraction of target tokens (EOS included) whose teacher-forced argmax is correct.
double teacher_forced_accuracy(const BiGenModel<float>& model, const std::vector<const Case*>& cases,
                               const KnowledgeBank* bank, const Vocab& vocab);

metrics::MetricReport evaluate_model(const BiGenModel<float>& model, const std::vector<const Case*>& cases,
                                     const KnowledgeBank* bank, const Vocab& vocab, int beam,
                                     const std::vector<std::string>& dictionary);

// ---------------------------------------------------------------------------
// Component ablation and hyperparameter sweeps.

struct AblationConfig {
    TrainConfig base;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<int> rows{1, 2, 3, 4, 5, 6};
    int test_beam = 3;
};

struct AblationRow {
    int row = 0;
    EncoderConfig flags;
    std::vector<metrics::MetricReport> per_seed;
    std::array<double, 7> mean{};  // bleu1..4, meteor, rouge_l, fact_ent
    double avg_delta = 0;          // mean relative gain over row 1, 0 for row 1
};

struct ExperimentData {
    const Corpus* corpus = nullptr;
    const Splits* splits = nullptr;
    const Vocab* vocab = nullptr;
    const KnowledgeBank* bank = nullptr;
};

using ProgressCallback = std::function<void(const std::string&)>;

std::vector<AblationRow> run_ablation(const AblationConfig& config, const ExperimentData& data,
                                      const ProgressCallback& progress = {});
std::string ablation_table(const std::vector<AblationRow>& rows);

struct SweepPoint {
    double value = 0;
    metrics::MetricReport report;
};

// param is one of "k", "v", "m".
std::vector<SweepPoint> run_sweep(const TrainConfig& base, const std::string& param, const std::vector<double>& values,
                                  const ExperimentData& data, int test_beam, const ProgressCallback& progress = {});

// Seven table metrics of a report, in column order.
std::array<double, 7> table_metrics(const metrics::MetricReport& r);

}  // namespace bigen
