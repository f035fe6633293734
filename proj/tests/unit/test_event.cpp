#include "cfpp/classical.hpp"
#include "cfpp/dataset_io.hpp"
#include "cfpp/event.hpp"
#include "cfpp/rng.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cfpp;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
    std::filesystem::create_directories(CFPP_TEST_TMP);
    return std::filesystem::path(CFPP_TEST_TMP) / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

EventSequence seq_of(std::vector<Event> ev, double horizon = 100.0) {
    EventSequence s;
    s.user_id = "u";
    s.events = std::move(ev);
    s.horizon = horizon;
    return s;
}

}  // namespace

TEST_SUITE("event") {

TEST_CASE("well formed sequence validates") {
    CHECK(validate_sequence(seq_of({{1.0, 0}, {2.0, 1}}), 2).ok);
    CHECK(validate_sequence(seq_of({}), 1).ok);
}

TEST_CASE("ordering, range and horizon violations") {
    auto r = validate_sequence(seq_of({{2.0, 0}, {1.0, 0}}), 1);
    CHECK_FALSE(r.ok);
    REQUIRE(r.index);
    CHECK(*r.index == 1);
    CHECK(r.message.find("non-monotone at index 1") != std::string::npos);

    r = validate_sequence(seq_of({{1.0, 5}}), 3);
    CHECK_FALSE(r.ok);
    CHECK(r.message.find("mark out of range") != std::string::npos);

    CHECK_FALSE(validate_sequence(seq_of({{1.0, 0}, {1.0, 0}}), 1).ok);
    CHECK_FALSE(validate_sequence(seq_of({{100.0, 0}}), 1).ok);
    CHECK_FALSE(validate_sequence(seq_of({{-0.5, 0}}), 1).ok);
    CHECK_FALSE(validate_sequence(seq_of({{1.0, -1}}), 1).ok);
}

TEST_CASE("single mutations are caught") {
    Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> ts(8);
        for (auto& t : ts) t = u(rng);
        std::sort(ts.begin(), ts.end());
        std::vector<Event> ev;
        for (double t : ts) ev.push_back({t, static_cast<int>(rng() % 3)});
        auto s = seq_of(ev);
        REQUIRE(validate_sequence(s, 3).ok);
        const auto i = 1 + rng() % 7;
        switch (trial % 3) {
            case 0: std::swap(s.events[i], s.events[i - 1]); break;
            case 1: s.events[i].m = 3 + static_cast<int>(rng() % 4); break;
            case 2: s.events.back().t = 100.0 + u(rng); break;
        }
        CHECK_FALSE(validate_sequence(s, 3).ok);
    }
}

TEST_CASE("dataset validation checks categories") {
    Dataset d;
    d.mark_count = 1;
    d.category_count = 2;
    d.sequences.push_back(seq_of({{1.0, 0}}));
    d.sequences.back().category = 1;
    CHECK_NOTHROW(validate_dataset(d));
    d.sequences.back().category = 2;
    CHECK_THROWS_AS(validate_dataset(d), std::invalid_argument);
}

TEST_CASE("empty input reads as an empty dataset") {
    std::istringstream in("");
    const auto d = read_dataset(in);
    CHECK(d.size() == 0);
}

TEST_CASE("minimal record") {
    std::istringstream in(R"({"user_id":"u1","category":0,"horizon":100.0,"events":[{"t":1.5,"m":2}]})");
    const auto d = read_dataset(in);
    REQUIRE(d.size() == 1);
    CHECK(d.sequences[0].user_id == "u1");
    CHECK(d.sequences[0].category == 0);
    REQUIRE(d.sequences[0].events.size() == 1);
    CHECK(d.sequences[0].events[0] == Event{1.5, 2});
    CHECK(d.mark_count >= 3);
}

TEST_CASE("null category and header") {
    std::istringstream in(
        "{\"mark_count\":4,\"category_count\":2,\"default_horizon\":50.0,\"mark_labels\":[\"a\",\"b\",\"c\",\"d\"]}\n"
        "{\"user_id\":\"x\",\"category\":null,\"horizon\":50.0,\"events\":[]}\n");
    const auto d = read_dataset(in);
    CHECK(d.mark_count == 4);
    CHECK(d.category_count == 2);
    CHECK(d.mark_labels.size() == 4);
    CHECK_FALSE(d.sequences[0].category.has_value());
}

TEST_CASE("parse errors carry the line number") {
    std::istringstream in("{\"user_id\":\"a\",\"events\":[]}\n{not json\n");
    try {
        (void)read_dataset(in);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    std::istringstream bad("{\"user_id\":\"a\",\"events\":[{\"t\":2,\"m\":0},{\"t\":1,\"m\":0}]}\n");
    CHECK_THROWS_WITH_AS((void)read_dataset(bad), doctest::Contains("non-monotone"), std::invalid_argument);
}

TEST_CASE("save then load then save is byte identical") {
    const ExpHawkesModel model({0.1, 0.5, 1.0});
    const auto pmf = MarkPmf::time_phased_three_marks();
    Dataset d;
    d.mark_count = 3;
    d.category_count = 3;
    d.mark_labels = {"a", "b", "c"};
    d.sequences = simulate_sequences(model, 1200, 100.0, &pmf, 5, 0, "user-");
    for (std::size_t i = 0; i < d.sequences.size(); ++i) {
        if (i % 4 != 3) d.sequences[i].category = static_cast<int>(i % 3);
    }
    const auto p1 = tmp_path("roundtrip1.jsonl");
    const auto p2 = tmp_path("roundtrip2.jsonl");
    save_dataset(d, p1);
    const auto loaded = load_dataset(p1);
    CHECK(loaded == d);
    save_dataset(loaded, p2);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("csv export has one row per event") {
    Dataset d;
    d.sequences.push_back(seq_of({{1.0, 0}, {2.5, 0}}));
    d.sequences.back().category = 1;
    d.sequences.push_back(seq_of({{3.0, 0}}));
    std::ostringstream out;
    write_dataset_csv(out, d);
    CHECK(out.str() == "user_id,t,m,category\nu,1,0,1\nu,2.5,0,1\nu,3,0,\n");
}

TEST_CASE("format_double round trips") {
    Rng rng(3);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng);
        CHECK(std::stod(format_double(v)) == v);
    }
}

TEST_CASE("atomic write leaves no temp file") {
    const auto p = tmp_path("atomic.txt");
    write_file_atomic(p, "hello\n");
    CHECK(slurp(p) == "hello\n");
    for (const auto& e : std::filesystem::directory_iterator(p.parent_path())) {
        CHECK(e.path().filename().string().find("atomic.txt.") == std::string::npos);
    }
}

TEST_CASE("category helpers") {
    Dataset d;
    d.category_count = 2;
    for (int i = 0; i < 4; ++i) {
        d.sequences.push_back(seq_of({{1.0 + i, 0}}));
        d.sequences.back().category = i % 2;
    }
    const auto only1 = filter_category(d, 1);
    CHECK(only1.size() == 2);
    for (const auto& s : strip_categories(d).sequences) CHECK_FALSE(s.category.has_value());
    CHECK(mean_interevent_time(d) == doctest::Approx(2.5));
}

}  // TEST_SUITE
