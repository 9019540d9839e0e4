/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#include "vgssl/costmodel.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace vgssl::cost {

void CostLedger::merge(const CostLedger& other) {
    extractions += other.extractions;
    comparisons += other.comparisons;
    skipped_queries += other.skipped_queries;
    peak_cached = std::max(peak_cached, other.peak_cached);
}

std::string_view preparation_mode_name(PreparationMode mode) {
    switch (mode) {
    case PreparationMode::FullHNM: return "FullHNM";
    case PreparationMode::PartialHNM: return "PartialHNM";
    case PreparationMode::Random: return "Random";
    case PreparationMode::PairOnly: return "PairOnly";
    }
    return "unknown";
}

PreparationMode parse_preparation_mode(std::string_view name) {
    for (auto m : {PreparationMode::FullHNM, PreparationMode::PartialHNM, PreparationMode::Random,
                   PreparationMode::PairOnly}) {
        if (name == preparation_mode_name(m)) {
            return m;
        }
    }
    throw std::invalid_argument("unknown preparation mode '" + std::string(name) +
                                "' (FullHNM, PartialHNM, Random or PairOnly)");
}

CostLedger predict_cost(PreparationMode mode, const CostInputs& in) {
    CostLedger out;
    if (in.n_q == 0) {
        return out;
    }
    switch (mode) {
    case PreparationMode::FullHNM:
        out.extractions = in.n_q + in.n_k;
        out.comparisons = in.n_q * std::min(in.n_kn, in.n_k);
        break;
    case PreparationMode::PartialHNM:
        out.extractions = in.n_q + in.pool + in.n_kp;
        out.comparisons = in.n_q * in.pool;
        break;
    case PreparationMode::Random:
        break;
    case PreparationMode::PairOnly:
        out.extractions = in.n_q + in.n_kp;
        out.comparisons = in.verify_positives ? in.n_q * in.n_kp : 0;
        break;
    }
    out.peak_cached = out.extractions;
    return out;
}

std::string LedgerReport::failures() const {
    std::ostringstream os;
    for (const auto& c : counters) {
        if (!c.pass) {
            os << c.counter << ": measured " << c.measured << ", predicted " << c.predicted << " (delta "
               << static_cast<long long>(c.measured) - static_cast<long long>(c.predicted) << ")\n";
        }
    }
    return os.str();
}

LedgerReport assert_ledger(const CostLedger& measured, const CostLedger& predicted, double slack) {
    if (!(slack >= 0.0)) {
        throw std::invalid_argument("slack must be non-negative");
    }
    LedgerReport report;
    const auto check = [&](const char* name, std::uint64_t m, std::uint64_t p) {
        const double lo = static_cast<double>(p) * (1.0 - slack);
        const double hi = static_cast<double>(p) * (1.0 + slack);
        const double v = static_cast<double>(m);
        CounterCheck c{name, m, p, v >= lo && v <= hi};
        report.pass = report.pass && c.pass;
        report.counters.push_back(c);
    };
    check("extractions", measured.extractions, predicted.extractions);
    check("comparisons", measured.comparisons, predicted.comparisons);
    check("peak_cached", measured.peak_cached, predicted.peak_cached);
    return report;
}

} // namespace vgssl::cost
