#pragma once

#include <string>
#include <vector>

#include "consense/errors.hpp"

namespace consense {

/// Lower-triangular accuracy matrix of a class-incremental run. Row m-1
/// holds per-task accuracies alpha[m][1..m] measured after training task m;
/// cumulative[m-1] is the accuracy over the union of all classes seen by
/// then.
struct MetricsRecord {
    std::vector<std::vector<double>> alpha;
    std::vector<double> cumulative;

    int sessions() const { return static_cast<int>(alpha.size()); }

    /// Appends one session's row; the row must have exactly one more entry
    /// than the previous row.
    void add_session(std::vector<double> per_task, double cumulative_acc);
};

/// Mean of the per-session cumulative accuracies. An empty or internally
/// inconsistent record is a protocol error.
double average_accuracy(const MetricsRecord& record);

/// Mean over tasks j = 1..N-1 of the largest accuracy drop
/// max_{m in j..N-1}(alpha[m][j] - alpha[N][j]). Needs N >= 2.
double average_forgetting(const MetricsRecord& record);

/// Header line plus one line per session: session id, cumulative accuracy,
/// then per-task accuracies (blank cells above the diagonal).
std::string alpha_csv(const MetricsRecord& record);

}  // namespace consense
