#pragma once

#include <string>
#include <vector>

namespace revtune {

// One evaluation unit: raw texts, tokenized on demand by the shared metric
// tokenizer so all three sides pass through the identical pipeline.
struct EvalTriple {
    std::string source;
    std::string hypothesis;
    std::vector<std::string> references;
    std::string intention;  // optional grouping key for per-intention reports
};

struct MetricReport {
    double sari = 0.0;
    double gleu = 0.0;
    double update_r = 0.0;
    double average = 0.0;
};

// Lowercases, strips <edit> tags, splits on whitespace and detaches
// punctuation into single-character tokens.
std::vector<std::string> metric_tokenize(const std::string& text);

// Splits on sentence-final punctuation (. ! ?), keeping the terminator
// attached. <edit> tags are removed from the returned sentences.
std::vector<std::string> split_sentences(const std::string& text);

// Spans wrapped in <edit>...</edit>. An unclosed opening tag extends to the
// end of the text.
std::vector<std::string> edit_spans(const std::string& text);

// Keep/add/delete n-gram score over n = 1..4, scaled to 0..100.
double sari(const EvalTriple& triple);

// Corpus-level GLEU restricted to a single example, scaled to 0..100.
double gleu(const EvalTriple& triple);

// ROUGE-L F1 over the updated sentences only, scaled to 0..100.
double update_rouge(const EvalTriple& triple);

// SARI and Update-R averaged per example, GLEU aggregated corpus-level.
MetricReport evaluate_corpus(const std::vector<EvalTriple>& triples);

}  // namespace revtune
