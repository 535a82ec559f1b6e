#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgs/dataset.hpp"
#include "fgs/model.hpp"

namespace fgs {

// Protocol problems are usage errors (bad input file), not runtime failures.
struct ProtocolError : Error {
    using Error::Error;
};

// key=value protocol file driving the repeated split/balance/train/eval loop.
struct ExperimentProtocol {
    std::string dataset;  // manifest path; tile paths used as stored
    std::vector<std::string> strategies;  // original|cds|rds|sam|gan
    int repetitions = 1;
    std::uint64_t seed = 0;

    int max_epochs = 3;
    int batch_size = 32;
    std::vector<int> filters = {8, 16, 32};
    float dropout = 0.5f;
    bool augment = false;
    // 0 = raise every minority class to the majority's training count.
    std::size_t balance_target = 0;
    int gan_steps = 100;
    int gan_latent = 64;
    int gan_batch = 8;

    void validate() const;
};

ExperimentProtocol load_protocol(const std::string& path);

struct RunResult {
    std::string strategy;
    int repetition = 0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    std::vector<double> per_class_recall;
    int epochs_ran = 0;
};

struct StrategySummary {
    std::string strategy;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    // Mean recall over every class except the first (majority) one.
    double mean_minority_recall = 0.0;
};

struct ExperimentReport {
    std::string labelset_id;
    std::vector<RunResult> runs;
    std::vector<StrategySummary> summary;

    std::string to_table() const;
    std::string to_json() const;
};

// Runs the protocol; synthetic tiles and per-run artifacts land in out_dir.
// Repetition r uses seed protocol.seed + r for every strategy, so strategies
// are compared on identical splits.
ExperimentReport run_experiment(const ExperimentProtocol& protocol, const std::string& out_dir);

}  // namespace fgs
