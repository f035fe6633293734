#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace cfpp {

inline constexpr double kDefaultHorizon = 100.0;

/// One observation (time, mark). Marks are dense indices into the dataset's mark space.
struct Event {
    double t{0.0};
    int m{0};

    friend bool operator==(const Event&, const Event&) = default;
};

/// Ordered events of one user. `category` is absent for new (test-time) users.
struct EventSequence {
    std::string user_id;
    std::optional<int> category;
    std::vector<Event> events;
    double horizon{kDefaultHorizon};

    [[nodiscard]] std::size_t size() const { return events.size(); }
    [[nodiscard]] bool empty() const { return events.empty(); }
    [[nodiscard]] double last_time() const { return events.empty() ? 0.0 : events.back().t; }

    friend bool operator==(const EventSequence&, const EventSequence&) = default;
};

struct Dataset {
    std::vector<EventSequence> sequences;
    int mark_count{1};
    int category_count{0};
    double default_horizon{kDefaultHorizon};
    std::vector<std::string> mark_labels;

    [[nodiscard]] std::size_t size() const { return sequences.size(); }
    [[nodiscard]] std::size_t event_count() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Outcome of validate_sequence. `index` points at the first offending event, when there is one.
struct ValidationReport {
    bool ok{true};
    std::optional<std::size_t> index;
    std::string message;

    explicit operator bool() const { return ok; }
};

[[nodiscard]] ValidationReport validate_sequence(const EventSequence& seq, int mark_count);

/// Validates every sequence plus the dataset-level category bound. Throws std::invalid_argument
/// naming the first offending user.
void validate_dataset(const Dataset& data);

/// Copy of the dataset with every category label removed.
[[nodiscard]] Dataset strip_categories(Dataset data);

/// Sequences restricted to one category.
[[nodiscard]] Dataset filter_category(const Dataset& data, int category);

/// Mean gap between consecutive events (first gap measured from 0), or the mean horizon if
/// the dataset holds no events.
[[nodiscard]] double mean_interevent_time(const Dataset& data);

}  // namespace cfpp
