#include "consense/metrics.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace consense {

void MetricsRecord::add_session(std::vector<double> per_task, double cumulative_acc) {
    if (per_task.size() != alpha.size() + 1) {
        throw ProtocolError("session " + std::to_string(alpha.size() + 1) + " must report " +
                            std::to_string(alpha.size() + 1) + " per-task accuracies, got " +
                            std::to_string(per_task.size()));
    }
    alpha.push_back(std::move(per_task));
    cumulative.push_back(cumulative_acc);
}

double average_accuracy(const MetricsRecord& record) {
    if (record.cumulative.empty() || record.cumulative.size() != record.alpha.size()) {
        throw ProtocolError("incomplete metrics record: " + std::to_string(record.cumulative.size()) +
                            " cumulative entries for " + std::to_string(record.alpha.size()) + " sessions");
    }
    double acc = 0.0;
    for (double a : record.cumulative) acc += a;
    return acc / static_cast<double>(record.cumulative.size());
}

double average_forgetting(const MetricsRecord& record) {
    const int n = record.sessions();
    if (n < 2) throw ProtocolError("forgetting needs at least 2 sessions, have " + std::to_string(n));
    for (int m = 0; m < n; ++m) {
        if (record.alpha[static_cast<std::size_t>(m)].size() != static_cast<std::size_t>(m) + 1) {
            throw ProtocolError("metrics row " + std::to_string(m + 1) + " has " +
                                std::to_string(record.alpha[static_cast<std::size_t>(m)].size()) +
                                " entries, expected " + std::to_string(m + 1));
        }
    }
    double total = 0.0;
    for (int j = 1; j <= n - 1; ++j) {
        const double final_acc = record.alpha[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(j - 1)];
        double best_drop = -std::numeric_limits<double>::infinity();
        for (int m = j; m <= n - 1; ++m) {
            best_drop = std::max(
                best_drop,
                record.alpha[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j - 1)] - final_acc);
        }
        total += best_drop;
    }
    return total / static_cast<double>(n - 1);
}

std::string alpha_csv(const MetricsRecord& record) {
    std::ostringstream out;
    out << "session,cumulative";
    for (int j = 1; j <= record.sessions(); ++j) out << ",task" << j;
    out << "\n";
    for (int m = 0; m < record.sessions(); ++m) {
        out << (m + 1) << "," << record.cumulative[static_cast<std::size_t>(m)];
        for (int j = 0; j < record.sessions(); ++j) {
            out << ",";
            if (j < static_cast<int>(record.alpha[static_cast<std::size_t>(m)].size())) {
                out << record.alpha[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
            }
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace consense
