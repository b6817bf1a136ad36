#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emotrans/corpus.hpp"
#include "emotrans/llm_gateway.hpp"

namespace emotrans {

// ---------------------------------------------------------------------------
// Round-trip translation

struct RoundTrip {
  std::string sample_id;
  std::string original;
  Emotion original_emotion;
  Emotion pivot_emotion;
  std::string translated;
  std::string back_translated;
  std::string model_id;
  std::string forward_prompt;
  std::string back_prompt;
};

struct RoundTripFailure {
  std::string sample_id;
  std::string stage;  // "forward" or "back"
  std::string error;
};

struct RoundTripOutcome {
  std::optional<RoundTrip> trip;
  std::optional<RoundTripFailure> failure;
};

/// Translates `text` into `pivot` and back into `original_emotion` with two
/// gateway calls. A failed call yields a failure record instead of a trip.
/// Throws std::invalid_argument if the emotions are equal.
RoundTripOutcome round_trip(const std::string& sample_id, const std::string& text,
                            const Emotion& original_emotion, const Emotion& pivot,
                            Gateway& gateway, const std::string& model_id,
                            double temperature = 0.0);

/// Uniform draw from the closed label set minus `original`, keyed by
/// (seed, sample_id).
Emotion draw_pivot(const Emotion& original, std::uint64_t seed, const std::string& sample_id);

ordered_json to_record(const RoundTrip& trip);
RoundTrip round_trip_from_record(const json& j);

/// Human-authored text with an emotion label (CSV columns: text, emotion_label).
struct EmotionalText {
  std::string id;
  std::string text;
  Emotion emotion;
};

std::vector<EmotionalText> load_emotional_texts(const std::filesystem::path& csv_path);

/// Up to `per_emotion` texts per label, seeded. Labels with fewer texts
/// contribute all they have and log a warning.
std::vector<EmotionalText> sample_per_emotion(const std::vector<EmotionalText>& texts,
                                              std::size_t per_emotion, std::uint64_t seed);

// ---------------------------------------------------------------------------
// BLEU

enum class BleuSmoothing {
  kNone,    // zero-match precisions make the score 0
  kAddOne,  // zero-match precisions become 1 / (total + 1)
};

/// Sentence BLEU over token sequences: geometric mean of clipped n-gram
/// precisions for n = 1..max_n times the brevity penalty
/// min(1, exp(1 - r/c)), where r is the reference length closest to the
/// hypothesis length (shorter on ties). An empty hypothesis scores 0.
/// Throws std::invalid_argument on an empty reference list.
double sentence_bleu_tokens(const std::vector<std::string>& hypothesis,
                            const std::vector<std::vector<std::string>>& references,
                            int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::kAddOne);

/// Clipped precision for one order, as (matches, total).
std::pair<std::size_t, std::size_t> clipped_precision(
    const std::vector<std::string>& hypothesis,
    const std::vector<std::vector<std::string>>& references, int n);

/// sentence_bleu_tokens over tokenize()d strings.
double sentence_bleu(const std::string& hypothesis, const std::vector<std::string>& references,
                     int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::kAddOne);

struct SampleBleu {
  std::string sample_id;
  std::string emotion;
  double bleu = 0;
};

struct BleuReport {
  std::string label;
  std::vector<SampleBleu> samples;
  std::map<std::string, double> emotion_means;
  double mean = 0;
};

/// Scores back_translated against original (single reference) and averages
/// per original emotion and overall. Throws InputError when empty.
BleuReport bleu_report(const std::vector<RoundTrip>& trips, const std::string& label = "");

/// mean(a) / mean(b). Throws std::domain_error when b's mean is 0.
double bleu_multiplier(const BleuReport& a, const BleuReport& b);

/// Table in the shape "Average BLEU Score / Multiplier", percent scale.
std::string bleu_table(const BleuReport& baseline, const BleuReport& candidate);
ordered_json to_json(const BleuReport& report);

// ---------------------------------------------------------------------------
// Crowd rating tasks

enum class RatingKind { kEmotionVsOriginal, kEmotionVsBaseline, kFactVsBaseline };
enum class Choice { kLeft, kRight, kBothEqual };
enum class Verdict { kSubject, kOther, kBothEqual, kNoMajority };

std::string to_string(RatingKind kind);
RatingKind rating_kind_from_string(std::string_view s);
std::string to_string(Choice choice);
Choice choice_from_string(std::string_view s);
std::string to_string(Verdict verdict);

/// Two texts to compare. The subject is the system under evaluation (the
/// translator's output); `other` is the original or the baseline model.
struct ComparisonPair {
  std::string pair_id;
  Emotion emotion;
  std::string subject_text;
  std::string subject_source;
  std::string other_text;
  std::string other_source;
};

struct RatingTask {
  std::string task_id;
  RatingKind kind = RatingKind::kEmotionVsOriginal;
  Emotion emotion;
  std::string left_text;
  std::string right_text;
  std::string left_source;
  std::string right_source;
  bool subject_left = true;

  bool operator==(const RatingTask&) const = default;
};

struct RatingResult {
  std::string task_id;
  std::string worker_id;
  Choice choice = Choice::kLeft;
};

struct RatingTaskSet {
  std::vector<RatingTask> tasks;
  std::vector<std::string> warnings;  // emotions with fewer than requested pairs
};

/// Samples up to `per_emotion` pairs per emotion and randomizes left/right
/// per task, both keyed by `seed`.
RatingTaskSet build_rating_tasks(const std::vector<ComparisonPair>& pairs, RatingKind kind,
                                 std::uint64_t seed, std::size_t per_emotion = 150);

/// Platform file: task_id, kind, emotion, text_a, text_b.
void write_task_csv(const std::filesystem::path& path, const std::vector<RatingTask>& tasks);
/// Hidden key: task_id, orientation, left_source, right_source.
void write_key_csv(const std::filesystem::path& path, const std::vector<RatingTask>& tasks);
/// Rejoins the platform file with its key.
std::vector<RatingTask> load_rating_tasks(const std::filesystem::path& task_csv,
                                          const std::filesystem::path& key_csv);
/// Results CSV: task_id, worker_id, choice.
std::vector<RatingResult> load_rating_results(const std::filesystem::path& path);

/// Majority over three choices, mapped back through the task's orientation.
/// both_equal counts only for fact_vs_baseline tasks (else InputError).
Verdict majority_verdict(RatingKind kind, bool subject_left, const std::array<Choice, 3>& choices);

struct EmotionTally {
  std::size_t tasks = 0;
  std::size_t subject_wins = 0;
  std::size_t other_wins = 0;
  std::size_t both_equal = 0;
  std::size_t no_majority = 0;

  double win_rate() const { return tasks ? static_cast<double>(subject_wins) / tasks : 0.0; }
  bool operator==(const EmotionTally&) const = default;
};

struct RatingAggregate {
  std::map<std::string, EmotionTally> by_emotion;
  EmotionTally overall;
  std::map<std::string, Verdict> verdicts;  // per task id
};

/// Requires exactly three results per task; otherwise throws InputError
/// listing the offending task ids.
RatingAggregate aggregate_ratings(const std::vector<RatingResult>& results,
                                  const std::vector<RatingTask>& tasks);

std::string rating_table(const RatingAggregate& aggregate);
ordered_json to_json(const RatingAggregate& aggregate);

}  // namespace emotrans
