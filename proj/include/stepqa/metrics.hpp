#pragma once

// Answer, supporting-fact and joint EM/F1 following the official benchmark
// protocol: normalized token-multiset overlap for answers, set overlap for
// supporting facts, and per-example precision/recall products for the joint
// scores. Bucketed reporting aggregates the same fields per caller-supplied
// label.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/datamodel.hpp"
#include "stepqa/pipeline.hpp"
#include "stepqa/text.hpp"

namespace stepqa::metrics {

using datamodel::MultiHopExample;
using datamodel::SupportFact;

struct ScoreTuple {
    double em = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

inline ScoreTuple answer_scores(const std::string& pred, const std::string& gold) {
    const std::string np = text::normalize_answer(pred);
    const std::string ng = text::normalize_answer(gold);
    ScoreTuple out;
    out.em = np == ng ? 1.0 : 0.0;
    // yes/no (and no-answer) predictions only score on exact agreement.
    auto is_literal = [](const std::string& s) {
        return s == "yes" || s == "no" || s == "noanswer";
    };
    if ((is_literal(np) || is_literal(ng)) && np != ng) {
        return out;
    }
    const auto pt = text::normalized_answer_tokens(pred);
    const auto gt = text::normalized_answer_tokens(gold);
    std::map<std::string, int> gold_counts;
    for (const auto& t : gt) {
        ++gold_counts[t];
    }
    int common = 0;
    for (const auto& t : pt) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0 || pt.empty() || gt.empty()) {
        return out;
    }
    out.precision = static_cast<double>(common) / static_cast<double>(pt.size());
    out.recall = static_cast<double>(common) / static_cast<double>(gt.size());
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

inline ScoreTuple sup_scores(const std::set<SupportFact>& pred, const std::set<SupportFact>& gold) {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    for (const auto& fact : pred) {
        if (gold.count(fact)) {
            ++tp;
        } else {
            ++fp;
        }
    }
    for (const auto& fact : gold) {
        if (!pred.count(fact)) {
            ++fn;
        }
    }
    ScoreTuple out;
    out.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    out.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    out.f1 = out.precision + out.recall > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    out.em = fp + fn == 0 ? 1.0 : 0.0;
    return out;
}

// Joint precision/recall are the products of the answer and supporting-fact
// components; joint EM is their product as well.
inline ScoreTuple joint_scores(const ScoreTuple& ans, const ScoreTuple& sup) {
    ScoreTuple out;
    out.precision = ans.precision * sup.precision;
    out.recall = ans.recall * sup.recall;
    out.f1 = out.precision + out.recall > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    out.em = ans.em * sup.em;
    return out;
}

struct ReportFields {
    double answer_em = 0.0;
    double answer_f1 = 0.0;
    double sup_em = 0.0;
    double sup_f1 = 0.0;
    double joint_em = 0.0;
    double joint_f1 = 0.0;
    std::size_t n = 0;

    nlohmann::json to_json() const {
        return {{"answer_em", answer_em}, {"answer_f1", answer_f1}, {"sup_em", sup_em},
                {"sup_f1", sup_f1},       {"joint_em", joint_em},   {"joint_f1", joint_f1},
                {"n", n}};
    }
};

struct EvalReport : ReportFields {
    std::map<std::string, ReportFields> per_bucket;

    nlohmann::json to_json() const {
        nlohmann::json j = ReportFields::to_json();
        if (!per_bucket.empty()) {
            nlohmann::json buckets = nlohmann::json::object();
            for (const auto& [label, fields] : per_bucket) {
                buckets[label] = fields.to_json();
            }
            j["per_bucket"] = std::move(buckets);
        }
        return j;
    }
};

inline EvalReport evaluate(const pipeline::PredictionFile& predictions,
                           const std::vector<MultiHopExample>& gold,
                           const std::map<std::string, std::string>& buckets = {}) {
    std::set<std::string> seen;
    for (const auto& ex : gold) {
        if (!seen.insert(ex.id).second) {
            throw ValidationError("evaluate: duplicate gold id " + ex.id);
        }
    }
    struct Accumulator {
        ReportFields fields;
        void add(const ScoreTuple& ans, const ScoreTuple& sup, const ScoreTuple& joint) {
            fields.answer_em += ans.em;
            fields.answer_f1 += ans.f1;
            fields.sup_em += sup.em;
            fields.sup_f1 += sup.f1;
            fields.joint_em += joint.em;
            fields.joint_f1 += joint.f1;
            ++fields.n;
        }
        ReportFields mean() const {
            ReportFields out = fields;
            if (out.n > 0) {
                const double inv = 1.0 / static_cast<double>(out.n);
                out.answer_em *= inv;
                out.answer_f1 *= inv;
                out.sup_em *= inv;
                out.sup_f1 *= inv;
                out.joint_em *= inv;
                out.joint_f1 *= inv;
            }
            return out;
        }
    };
    Accumulator corpus;
    std::map<std::string, Accumulator> bucketed;
    // Accumulation runs in id order so the reduction is independent of the
    // input permutation.
    std::vector<const MultiHopExample*> ordered;
    ordered.reserve(gold.size());
    for (const auto& ex : gold) {
        ordered.push_back(&ex);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const MultiHopExample* a, const MultiHopExample* b) { return a->id < b->id; });
    for (const MultiHopExample* exp : ordered) {
        const auto& ex = *exp;
        ScoreTuple ans;
        ScoreTuple sup;
        auto ans_it = predictions.answer.find(ex.id);
        auto sp_it = predictions.sp.find(ex.id);
        if (ans_it == predictions.answer.end() && sp_it == predictions.sp.end()) {
            std::cerr << "[stepqa] warning: no prediction for example " << ex.id
                      << ", scoring zero\n";
        }
        if (ans_it != predictions.answer.end()) {
            ans = answer_scores(ans_it->second, ex.answer);
        }
        if (sp_it != predictions.sp.end()) {
            std::set<SupportFact> pred_sp(sp_it->second.begin(), sp_it->second.end());
            sup = sup_scores(pred_sp, ex.gold_supports);
        }
        const ScoreTuple joint = joint_scores(ans, sup);
        corpus.add(ans, sup, joint);
        auto bucket_it = buckets.find(ex.id);
        if (bucket_it != buckets.end()) {
            bucketed[bucket_it->second].add(ans, sup, joint);
        }
    }
    EvalReport report;
    static_cast<ReportFields&>(report) = corpus.mean();
    for (const auto& [label, acc] : bucketed) {
        report.per_bucket[label] = acc.mean();
    }
    return report;
}

inline std::string render_report(const EvalReport& report) {
    auto line = [](const std::string& label, const ReportFields& f) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-16s answer EM %.4f F1 %.4f | sup EM %.4f F1 %.4f | joint EM %.4f F1 "
                      "%.4f | n=%zu",
                      label.c_str(), f.answer_em, f.answer_f1, f.sup_em, f.sup_f1, f.joint_em,
                      f.joint_f1, f.n);
        return std::string(buf);
    };
    std::string out = line("overall", report) + "\n";
    for (const auto& [label, fields] : report.per_bucket) {
        out += line(label, fields) + "\n";
    }
    return out;
}

}  // namespace stepqa::metrics
