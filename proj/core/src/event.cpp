#include "cfpp/event.hpp"

#include <cmath>
#include <stdexcept>

namespace cfpp {

std::size_t Dataset::event_count() const {
    std::size_t n = 0;
    for (const auto& seq : sequences) {
        n += seq.events.size();
    }
    return n;
}

ValidationReport validate_sequence(const EventSequence& seq, int mark_count) {
    auto fail = [](std::size_t i, std::string msg) {
        return ValidationReport{false, i, std::move(msg) + " at index " + std::to_string(i)};
    };
    if (!(seq.horizon > 0.0) || !std::isfinite(seq.horizon)) {
        return {false, std::nullopt, "horizon must be finite and positive"};
    }
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const Event& e = seq.events[i];
        if (!std::isfinite(e.t) || e.t < 0.0) {
            return fail(i, "time outside [0, horizon)");
        }
        if (e.t >= seq.horizon) {
            return fail(i, "time at or beyond horizon");
        }
        if (i > 0 && !(e.t > seq.events[i - 1].t)) {
            return fail(i, "non-monotone");
        }
        if (e.m < 0 || e.m >= mark_count) {
            return fail(i, "mark out of range");
        }
    }
    return {};
}

void validate_dataset(const Dataset& data) {
    if (data.mark_count < 1) {
        throw std::invalid_argument("mark_count must be at least 1");
    }
    if (data.category_count < 0) {
        throw std::invalid_argument("category_count must be non-negative");
    }
    for (const auto& seq : data.sequences) {
        const auto report = validate_sequence(seq, data.mark_count);
        if (!report) {
            throw std::invalid_argument("sequence '" + seq.user_id + "': " + report.message);
        }
        if (seq.category && (*seq.category < 0 || *seq.category >= data.category_count)) {
            throw std::invalid_argument("sequence '" + seq.user_id + "': category out of range");
        }
    }
}

Dataset strip_categories(Dataset data) {
    for (auto& seq : data.sequences) {
        seq.category.reset();
    }
    return data;
}

Dataset filter_category(const Dataset& data, int category) {
    Dataset out;
    out.mark_count = data.mark_count;
    out.category_count = data.category_count;
    out.default_horizon = data.default_horizon;
    out.mark_labels = data.mark_labels;
    for (const auto& seq : data.sequences) {
        if (seq.category == category) {
            out.sequences.push_back(seq);
        }
    }
    return out;
}

double mean_interevent_time(const Dataset& data) {
    double span = 0.0;
    double horizon_sum = 0.0;
    std::size_t n = 0;
    for (const auto& seq : data.sequences) {
        horizon_sum += seq.horizon;
        if (!seq.events.empty()) {
            span += seq.events.back().t;
            n += seq.events.size();
        }
    }
    if (n == 0) {
        return data.sequences.empty() ? data.default_horizon
                                      : horizon_sum / static_cast<double>(data.sequences.size());
    }
    return span / static_cast<double>(n);
}

}  // namespace cfpp
