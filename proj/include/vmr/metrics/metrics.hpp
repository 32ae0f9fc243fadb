#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "vmr/core/error.hpp"

namespace vmr {

using SpanS = std::pair<double, double>;

// Interval overlap over union; spans must be non-degenerate.
inline double temporal_iou(const SpanS& a, const SpanS& b) {
    if (!(a.first < a.second) || !(b.first < b.second))
        throw ValidationError("temporal_iou: degenerate span");
    double inter = std::min(a.second, b.second) - std::max(a.first, b.first);
    if (inter < 0.0) inter = 0.0;
    double uni = (a.second - a.first) + (b.second - b.first) - inter;
    return inter / uni;
}

// One query's ranked predictions (best first) and its ground truth.
struct QueryResult {
    std::string query_id;
    std::vector<SpanS> predictions;
    SpanS gt;
};

// Fraction of queries whose top-n predictions contain one with IoU
// strictly exceeding m. Queries with no predictions count as misses and
// are reported on stderr.
inline double recall_at(const std::vector<QueryResult>& queries, int n, double m) {
    if (n < 1) throw ValidationError("recall_at: n must be >= 1");
    if (queries.empty()) throw ValidationError("recall_at: no queries");
    int hits = 0;
    for (const auto& q : queries) {
        if (q.predictions.empty()) {
            std::cerr << "warning: query " << q.query_id << " has no predictions\n";
            continue;
        }
        int limit = std::min<int>(n, static_cast<int>(q.predictions.size()));
        for (int k = 0; k < limit; ++k) {
            if (temporal_iou(q.predictions[static_cast<size_t>(k)], q.gt) > m) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

struct RecallTable {
    std::map<std::string, double> entries;  // "R@n,IoU=m" -> value
    int n_q = 0;
};

inline std::string recall_key(int n, double m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "R@%d,IoU=%.2f", n, m);
    // trim a trailing zero so 0.5 prints as 0.5, 0.75 as 0.75
    std::string s(buf);
    if (s.size() > 1 && s.back() == '0') s.pop_back();
    return s;
}

inline RecallTable compute_recall_table(const std::vector<QueryResult>& queries,
                                        const std::vector<int>& n_set,
                                        const std::vector<double>& m_set) {
    RecallTable t;
    t.n_q = static_cast<int>(queries.size());
    for (int n : n_set)
        for (double m : m_set) t.entries[recall_key(n, m)] = recall_at(queries, n, m);
    return t;
}

inline nlohmann::json recall_table_to_json(const RecallTable& t) {
    nlohmann::json j;
    for (const auto& [k, v] : t.entries) j[k] = v;
    j["N_q"] = t.n_q;
    return j;
}

// Prediction dump: one JSON object per line,
// {"query_id": ..., "proposals": [[ts, te, score], ...]} ranked best
// first. Annotations are the corpus JSONL records.
inline std::vector<QueryResult> load_query_results(const std::string& prediction_path,
                                                   const std::string& annotation_path) {
    std::ifstream pf(prediction_path);
    if (!pf) throw IoError("cannot open predictions: " + prediction_path);
    std::unordered_map<std::string, std::vector<SpanS>> preds;
    std::string line;
    size_t line_no = 0;
    while (std::getline(pf, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(prediction_path + ":" + std::to_string(line_no) + ": bad JSON: " +
                              e.what());
        }
        if (!j.contains("query_id") || !j.contains("proposals"))
            throw FormatError(prediction_path + ":" + std::to_string(line_no) +
                              ": missing query_id or proposals");
        std::vector<SpanS> spans;
        for (const auto& p : j["proposals"]) {
            if (!p.is_array() || p.size() < 2)
                throw FormatError(prediction_path + ":" + std::to_string(line_no) +
                                  ": proposal must be [ts, te, score]");
            spans.emplace_back(p[0].get<double>(), p[1].get<double>());
        }
        preds[j["query_id"].get<std::string>()] = std::move(spans);
    }

    std::ifstream af(annotation_path);
    if (!af) throw IoError("cannot open annotations: " + annotation_path);
    std::vector<QueryResult> out;
    std::vector<std::string> missing;
    line_no = 0;
    while (std::getline(af, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(annotation_path + ":" + std::to_string(line_no) + ": bad JSON: " +
                              e.what());
        }
        QueryResult q;
        q.query_id = j.at("query_id").get<std::string>();
        auto span = j.at("span_s");
        q.gt = {span.at(0).get<double>(), span.at(1).get<double>()};
        auto it = preds.find(q.query_id);
        if (it == preds.end()) {
            missing.push_back(q.query_id);
            continue;
        }
        q.predictions = it->second;
        out.push_back(std::move(q));
    }
    if (!missing.empty()) {
        std::string msg = "predictions missing for query_id(s):";
        for (const auto& id : missing) msg += " " + id;
        throw ValidationError(msg);
    }
    return out;
}

inline RecallTable evaluate(const std::string& prediction_path, const std::string& annotation_path,
                            const std::vector<int>& n_set, const std::vector<double>& m_set) {
    return compute_recall_table(load_query_results(prediction_path, annotation_path), n_set, m_set);
}

}  // namespace vmr
