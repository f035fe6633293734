#include "cfpp/dataset_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace cfpp {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

bool is_header(const json& j) {
    return j.is_object() && j.contains("mark_count") && !j.contains("events");
}

EventSequence parse_sequence(const json& j, double default_horizon) {
    if (!j.is_object()) {
        throw std::invalid_argument("record is not an object");
    }
    EventSequence seq;
    seq.user_id = j.at("user_id").get<std::string>();
    if (j.contains("category") && !j.at("category").is_null()) {
        seq.category = j.at("category").get<int>();
    }
    seq.horizon = j.contains("horizon") ? j.at("horizon").get<double>() : default_horizon;
    const auto& events = j.at("events");
    if (!events.is_array()) {
        throw std::invalid_argument("'events' must be an array");
    }
    seq.events.reserve(events.size());
    for (const auto& e : events) {
        seq.events.push_back(Event{e.at("t").get<double>(), e.at("m").get<int>()});
    }
    return seq;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) {
        throw std::runtime_error("format_double failed");
    }
    return std::string(buf, ptr);
}

Dataset read_dataset(std::istream& in) {
    Dataset data;
    bool have_header = false;
    int max_mark = -1;
    int max_category = -1;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
        try {
            if (is_header(j)) {
                if (have_header || !data.sequences.empty()) {
                    throw std::invalid_argument("header must be the first record");
                }
                have_header = true;
                data.mark_count = j.at("mark_count").get<int>();
                data.category_count = j.value("category_count", 0);
                data.default_horizon = j.value("default_horizon", kDefaultHorizon);
                if (j.contains("mark_labels")) {
                    data.mark_labels = j.at("mark_labels").get<std::vector<std::string>>();
                }
                continue;
            }
            auto seq = parse_sequence(j, data.default_horizon);
            for (const auto& e : seq.events) {
                max_mark = std::max(max_mark, e.m);
            }
            if (seq.category) {
                max_category = std::max(max_category, *seq.category);
            }
            if (have_header) {
                const auto report = validate_sequence(seq, data.mark_count);
                if (!report) {
                    throw std::invalid_argument(report.message);
                }
            }
            data.sequences.push_back(std::move(seq));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
    if (!have_header) {
        data.mark_count = std::max(1, max_mark + 1);
        data.category_count = max_category + 1;
    }
    validate_dataset(data);
    return data;
}

void write_dataset(std::ostream& out, const Dataset& data) {
    ordered_json header;
    header["mark_count"] = data.mark_count;
    header["category_count"] = data.category_count;
    header["default_horizon"] = data.default_horizon;
    header["mark_labels"] = data.mark_labels;
    out << header.dump() << '\n';
    for (const auto& seq : data.sequences) {
        ordered_json j;
        j["user_id"] = seq.user_id;
        j["category"] = seq.category ? ordered_json(*seq.category) : ordered_json(nullptr);
        j["horizon"] = seq.horizon;
        auto events = ordered_json::array();
        for (const auto& e : seq.events) {
            ordered_json ej;
            ej["t"] = e.t;
            ej["m"] = e.m;
            events.push_back(std::move(ej));
        }
        j["events"] = std::move(events);
        out << j.dump() << '\n';
    }
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open dataset '" + path.string() + "'");
    }
    return read_dataset(in);
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    std::ostringstream out;
    write_dataset(out, data);
    write_file_atomic(path, out.str());
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << "user_id,t,m,category\n";
    for (const auto& seq : data.sequences) {
        const std::string cat = seq.category ? std::to_string(*seq.category) : std::string{};
        for (const auto& e : seq.events) {
            out << seq.user_id << ',' << format_double(e.t) << ',' << e.m << ',' << cat << '\n';
        }
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write '" + tmp.string() + "'");
        }
        out << contents;
        out.flush();
        if (!out) {
            throw std::runtime_error("write failed for '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, path);
}

}  // namespace cfpp
