#include "revtune/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <stdexcept>

namespace revtune {

namespace {

constexpr const char* kEditOpen = "<edit>";
constexpr const char* kEditClose = "</edit>";

std::string strip_edit_tags(std::string text) {
    for (const char* tag : {kEditOpen, kEditClose}) {
        const std::size_t len = std::strlen(tag);
        std::string::size_type pos;
        while ((pos = text.find(tag)) != std::string::npos) text.erase(pos, len);
    }
    return text;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

using Counts = std::map<std::string, long long>;

Counts ngram_counts(const std::vector<std::string>& tokens, int n) {
    Counts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += tokens[i + j];
        }
        counts[key] += 1;
    }
    return counts;
}

Counts intersect(const Counts& a, const Counts& b) {
    Counts out;
    for (const auto& [key, count] : a) {
        auto it = b.find(key);
        if (it != b.end()) {
            long long m = std::min(count, it->second);
            if (m > 0) out[key] = m;
        }
    }
    return out;
}

Counts subtract(const Counts& a, const Counts& b) {
    Counts out;
    for (const auto& [key, count] : a) {
        auto it = b.find(key);
        long long rest = count - (it == b.end() ? 0 : it->second);
        if (rest > 0) out[key] = rest;
    }
    return out;
}

long long total(const Counts& c) {
    long long sum = 0;
    for (const auto& [key, count] : c) sum += count;
    return sum;
}

Counts scaled(const Counts& c, long long factor) {
    Counts out = c;
    for (auto& [key, count] : out) count *= factor;
    return out;
}

double f1(double precision, double recall) {
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

void require_references(const EvalTriple& triple, const char* op) {
    if (triple.references.empty()) {
        throw std::invalid_argument(std::string(op) + ": empty reference list");
    }
}

struct GleuTotals {
    double num[4] = {0.0, 0.0, 0.0, 0.0};
    double den[4] = {0.0, 0.0, 0.0, 0.0};
    long long hyp_len = 0;
    long long ref_len = 0;
};

void gleu_accumulate(const EvalTriple& triple, GleuTotals& totals) {
    require_references(triple, "gleu");
    auto src = metric_tokenize(triple.source);
    auto hyp = metric_tokenize(triple.hypothesis);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : triple.references) refs.push_back(metric_tokenize(r));

    totals.hyp_len += static_cast<long long>(hyp.size());
    long long closest = static_cast<long long>(refs.front().size());
    for (const auto& r : refs) {
        long long len = static_cast<long long>(r.size());
        long long hyp_size = static_cast<long long>(hyp.size());
        if (std::llabs(len - hyp_size) < std::llabs(closest - hyp_size) ||
            (std::llabs(len - hyp_size) == std::llabs(closest - hyp_size) && len < closest)) {
            closest = len;
        }
    }
    totals.ref_len += closest;

    for (int n = 1; n <= 4; ++n) {
        Counts h = ngram_counts(hyp, n);
        Counts s = ngram_counts(src, n);
        Counts rmax;
        for (const auto& r : refs) {
            for (const auto& [key, count] : ngram_counts(r, n)) {
                rmax[key] = std::max(rmax[key], count);
            }
        }
        long long match = total(intersect(h, rmax));
        long long penalty = 0;
        Counts kept_from_source = intersect(h, s);
        for (const auto& [key, count] : kept_from_source) {
            auto it = rmax.find(key);
            long long allowed = it == rmax.end() ? 0 : it->second;
            penalty += std::max(0LL, count - allowed);
        }
        totals.num[n - 1] += static_cast<double>(std::max(0LL, match - penalty));
        totals.den[n - 1] += static_cast<double>(total(h));
    }
}

double gleu_score(const GleuTotals& totals) {
    double log_sum = 0.0;
    int orders = 0;
    for (int n = 0; n < 4; ++n) {
        if (totals.den[n] == 0.0) continue;
        if (totals.num[n] == 0.0) return 0.0;
        log_sum += std::log(totals.num[n] / totals.den[n]);
        ++orders;
    }
    if (orders == 0 || totals.hyp_len == 0) return 0.0;
    double bp = 1.0;
    if (totals.hyp_len <= totals.ref_len) {
        bp = std::exp(1.0 - static_cast<double>(totals.ref_len) /
                                static_cast<double>(totals.hyp_len));
    }
    return 100.0 * bp * std::exp(log_sum / orders);
}

long long lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<long long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// Updated portion of one side: <edit> spans when tagged, otherwise the
// sentences absent verbatim from the source.
std::vector<std::string> updated_tokens(const std::string& text,
                                        const std::set<std::vector<std::string>>& src_sentences) {
    std::vector<std::string> out;
    auto spans = edit_spans(text);
    if (!spans.empty()) {
        for (const auto& span : spans) {
            auto toks = metric_tokenize(span);
            out.insert(out.end(), toks.begin(), toks.end());
        }
        return out;
    }
    for (const auto& sentence : split_sentences(text)) {
        auto toks = metric_tokenize(sentence);
        if (toks.empty()) continue;
        if (src_sentences.count(toks) == 0) {
            out.insert(out.end(), toks.begin(), toks.end());
        }
    }
    return out;
}

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
    std::string clean = strip_edit_tags(text);
    std::vector<std::string> out;
    std::string current;
    for (unsigned char raw : clean) {
        char c = static_cast<char>(std::tolower(raw));
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(c);
        } else {
            if (!current.empty()) {
                out.push_back(current);
                current.clear();
            }
            if (!std::isspace(static_cast<unsigned char>(c))) out.emplace_back(1, c);
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::string clean = strip_edit_tags(text);
    std::vector<std::string> out;
    std::string current;
    for (char c : clean) {
        current.push_back(c);
        if (c == '.' || c == '!' || c == '?') {
            std::string t = trim(current);
            if (!t.empty()) out.push_back(t);
            current.clear();
        }
    }
    std::string tail = trim(current);
    if (!tail.empty()) out.push_back(tail);
    return out;
}

std::vector<std::string> edit_spans(const std::string& text) {
    std::vector<std::string> spans;
    const std::size_t open_len = std::strlen(kEditOpen);
    std::size_t at = 0;
    while (true) {
        std::size_t open = text.find(kEditOpen, at);
        if (open == std::string::npos) break;
        std::size_t start = open + open_len;
        std::size_t close = text.find(kEditClose, start);
        if (close == std::string::npos) {
            spans.push_back(trim(text.substr(start)));
            break;
        }
        spans.push_back(trim(text.substr(start, close - start)));
        at = close + std::strlen(kEditClose);
    }
    return spans;
}

double sari(const EvalTriple& triple) {
    require_references(triple, "sari");
    auto src = metric_tokenize(triple.source);
    auto hyp = metric_tokenize(triple.hypothesis);
    const long long numref = static_cast<long long>(triple.references.size());
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : triple.references) refs.push_back(metric_tokenize(r));

    double keep_sum = 0.0, del_sum = 0.0, add_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        Counts s_rep = scaled(ngram_counts(src, n), numref);
        Counts c_rep = scaled(ngram_counts(hyp, n), numref);
        Counts r_all;
        for (const auto& r : refs) {
            for (const auto& [key, count] : ngram_counts(r, n)) r_all[key] += count;
        }

        Counts keep = intersect(s_rep, c_rep);
        Counts keep_good = intersect(keep, r_all);
        Counts keep_all = intersect(s_rep, r_all);
        double keep_p = 1.0, keep_r = 1.0;
        if (!keep.empty()) {
            double acc = 0.0;
            for (const auto& [key, count] : keep) {
                auto it = keep_good.find(key);
                acc += static_cast<double>(it == keep_good.end() ? 0 : it->second) /
                       static_cast<double>(count);
            }
            keep_p = acc / static_cast<double>(keep.size());
        }
        if (total(keep_all) > 0) {
            keep_r = static_cast<double>(total(keep_good)) / static_cast<double>(total(keep_all));
        }
        keep_sum += f1(keep_p, keep_r);

        Counts del = subtract(s_rep, c_rep);
        Counts del_good = subtract(del, r_all);
        double del_p = 1.0;
        if (!del.empty()) {
            double acc = 0.0;
            for (const auto& [key, count] : del) {
                auto it = del_good.find(key);
                acc += static_cast<double>(it == del_good.end() ? 0 : it->second) /
                       static_cast<double>(count);
            }
            del_p = acc / static_cast<double>(del.size());
        }
        del_sum += del_p;

        std::set<std::string> src_keys, hyp_keys, ref_keys;
        for (const auto& [key, count] : s_rep) src_keys.insert(key);
        for (const auto& [key, count] : c_rep) hyp_keys.insert(key);
        for (const auto& [key, count] : r_all) ref_keys.insert(key);
        std::set<std::string> added, added_good, added_all;
        std::set_difference(hyp_keys.begin(), hyp_keys.end(), src_keys.begin(), src_keys.end(),
                            std::inserter(added, added.end()));
        std::set_intersection(added.begin(), added.end(), ref_keys.begin(), ref_keys.end(),
                              std::inserter(added_good, added_good.end()));
        std::set_difference(ref_keys.begin(), ref_keys.end(), src_keys.begin(), src_keys.end(),
                            std::inserter(added_all, added_all.end()));
        double add_p = added.empty()
                           ? 1.0
                           : static_cast<double>(added_good.size()) /
                                 static_cast<double>(added.size());
        double add_r = added_all.empty()
                           ? 1.0
                           : static_cast<double>(added_good.size()) /
                                 static_cast<double>(added_all.size());
        add_sum += f1(add_p, add_r);
    }

    return 100.0 * (keep_sum / 4.0 + del_sum / 4.0 + add_sum / 4.0) / 3.0;
}

double gleu(const EvalTriple& triple) {
    GleuTotals totals;
    gleu_accumulate(triple, totals);
    return gleu_score(totals);
}

double update_rouge(const EvalTriple& triple) {
    require_references(triple, "update_rouge");
    std::set<std::vector<std::string>> src_sentences;
    for (const auto& sentence : split_sentences(triple.source)) {
        auto toks = metric_tokenize(sentence);
        if (!toks.empty()) src_sentences.insert(toks);
    }

    auto hyp_updated = updated_tokens(triple.hypothesis, src_sentences);
    double best = 0.0;
    bool any_scored = false;
    for (const auto& reference : triple.references) {
        auto ref_updated = updated_tokens(reference, src_sentences);
        double score;
        if (hyp_updated.empty() && ref_updated.empty()) {
            score = 100.0;
        } else if (hyp_updated.empty() || ref_updated.empty()) {
            score = 0.0;
        } else {
            double lcs = static_cast<double>(lcs_length(hyp_updated, ref_updated));
            double precision = lcs / static_cast<double>(hyp_updated.size());
            double recall = lcs / static_cast<double>(ref_updated.size());
            score = 100.0 * f1(precision, recall);
        }
        best = any_scored ? std::max(best, score) : score;
        any_scored = true;
    }
    return best;
}

MetricReport evaluate_corpus(const std::vector<EvalTriple>& triples) {
    if (triples.empty()) throw std::invalid_argument("evaluate_corpus: no triples");
    MetricReport report;
    GleuTotals totals;
    for (const auto& triple : triples) {
        report.sari += sari(triple);
        report.update_r += update_rouge(triple);
        gleu_accumulate(triple, totals);
    }
    report.sari /= static_cast<double>(triples.size());
    report.update_r /= static_cast<double>(triples.size());
    report.gleu = gleu_score(totals);
    report.average = (report.sari + report.gleu + report.update_r) / 3.0;
    return report;
}

}  // namespace revtune
