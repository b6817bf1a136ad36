#include "emotrans/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "emotrans/analysis.hpp"
#include "emotrans/error.hpp"
#include "emotrans/prompts.hpp"

namespace emotrans {

RoundTripOutcome round_trip(const std::string& sample_id, const std::string& text,
                            const Emotion& original_emotion, const Emotion& pivot,
                            Gateway& gateway, const std::string& model_id, double temperature) {
  if (original_emotion == pivot) {
    throw std::invalid_argument("round trip needs distinct emotions, got '" + pivot.name() + "' twice");
  }
  RoundTrip trip;
  trip.sample_id = sample_id;
  trip.original = text;
  trip.original_emotion = original_emotion;
  trip.pivot_emotion = pivot;
  trip.model_id = model_id;
  trip.forward_prompt = prompts::translate_user_prompt(original_emotion.name(), pivot.name(), text);

  RoundTripOutcome out;
  try {
    trip.translated = gateway.generate({model_id, "", trip.forward_prompt, temperature, {}}).text;
  } catch (const TransportError& e) {
    out.failure = RoundTripFailure{sample_id, "forward", e.what()};
    Log::warn("round_trip_failed", {{"sample_id", sample_id}, {"stage", "forward"}, {"error", e.what()}});
    return out;
  }
  trip.back_prompt =
      prompts::translate_user_prompt(pivot.name(), original_emotion.name(), trip.translated);
  try {
    trip.back_translated = gateway.generate({model_id, "", trip.back_prompt, temperature, {}}).text;
  } catch (const TransportError& e) {
    out.failure = RoundTripFailure{sample_id, "back", e.what()};
    Log::warn("round_trip_failed", {{"sample_id", sample_id}, {"stage", "back"}, {"error", e.what()}});
    return out;
  }
  out.trip = std::move(trip);
  return out;
}

Emotion draw_pivot(const Emotion& original, std::uint64_t seed, const std::string& sample_id) {
  std::vector<Emotion> choices;
  for (const auto& e : closed_set_labels()) {
    if (e != original) choices.push_back(e);
  }
  SeededRng rng(keyed_hash(seed, {"pivot", sample_id}));
  return choices[rng.uniform_index(choices.size())];
}

ordered_json to_record(const RoundTrip& t) {
  ordered_json j;
  j["sample_id"] = t.sample_id;
  j["original"] = t.original;
  j["original_emotion"] = t.original_emotion.name();
  j["pivot_emotion"] = t.pivot_emotion.name();
  j["translated"] = t.translated;
  j["back_translated"] = t.back_translated;
  j["model_id"] = t.model_id;
  j["forward_prompt"] = t.forward_prompt;
  j["back_prompt"] = t.back_prompt;
  return j;
}

RoundTrip round_trip_from_record(const json& j) {
  try {
    RoundTrip t;
    t.sample_id = j.at("sample_id");
    t.original = j.at("original");
    t.original_emotion = Emotion(j.at("original_emotion").get<std::string>());
    t.pivot_emotion = Emotion(j.at("pivot_emotion").get<std::string>());
    t.translated = j.at("translated");
    t.back_translated = j.at("back_translated");
    t.model_id = j.at("model_id");
    t.forward_prompt = j.value("forward_prompt", "");
    t.back_prompt = j.value("back_prompt", "");
    return t;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed round-trip record: ") + e.what());
  }
}

std::vector<EmotionalText> load_emotional_texts(const std::filesystem::path& csv_path) {
  auto table = read_csv(csv_path);
  auto text_col = table.column("text");
  auto label_col = table.column("emotion_label");
  std::optional<std::size_t> id_col;
  if (std::find(table.header.begin(), table.header.end(), "id") != table.header.end()) {
    id_col = table.column("id");
  }
  std::vector<EmotionalText> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    EmotionalText t;
    t.id = id_col ? row[*id_col] : "row" + std::to_string(r + 1);
    t.text = row[text_col];
    t.emotion = Emotion(row[label_col]);
    if (t.emotion.name().empty()) {
      throw InputError(csv_path.filename().string() + ": empty emotion_label on row " + std::to_string(r + 2));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<EmotionalText> sample_per_emotion(const std::vector<EmotionalText>& texts,
                                              std::size_t per_emotion, std::uint64_t seed) {
  std::map<std::string, std::vector<const EmotionalText*>> by_label;
  for (const auto& t : texts) by_label[t.emotion.name()].push_back(&t);
  std::vector<EmotionalText> out;
  for (auto& [label, items] : by_label) {
    if (items.size() < per_emotion) {
      Log::warn("too_few_samples", {{"emotion", label}, {"available", items.size()},
                                    {"requested", per_emotion}});
    }
    SeededRng rng(keyed_hash(seed, {"sample", label}));
    auto picked = rng.sample_indices(items.size(), per_emotion);
    std::sort(picked.begin(), picked.end());
    for (auto i : picked) out.push_back(*items[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::vector<std::string>, std::size_t> count_ngrams(const std::vector<std::string>& tokens,
                                                             int n) {
  std::map<std::vector<std::string>, std::size_t> out;
  const auto order = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(i + order))];
  }
  return out;
}

}  // namespace

std::pair<std::size_t, std::size_t> clipped_precision(
    const std::vector<std::string>& hypothesis,
    const std::vector<std::vector<std::string>>& references, int n) {
  auto hyp = count_ngrams(hypothesis, n);
  std::map<std::vector<std::string>, std::size_t> max_ref;
  for (const auto& ref : references) {
    for (const auto& [gram, c] : count_ngrams(ref, n)) {
      auto& slot = max_ref[gram];
      slot = std::max(slot, c);
    }
  }
  std::size_t matches = 0, total = 0;
  for (const auto& [gram, c] : hyp) {
    total += c;
    auto it = max_ref.find(gram);
    if (it != max_ref.end()) matches += std::min(c, it->second);
  }
  return {matches, total};
}

double sentence_bleu_tokens(const std::vector<std::string>& hypothesis,
                            const std::vector<std::vector<std::string>>& references, int max_n,
                            BleuSmoothing smoothing) {
  if (references.empty()) throw std::invalid_argument("BLEU needs at least one reference");
  if (max_n < 1) throw std::invalid_argument("BLEU order must be >= 1");
  if (hypothesis.empty()) return 0.0;

  double log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    auto [matches, total] = clipped_precision(hypothesis, references, n);
    double precision;
    if (matches == 0) {
      if (smoothing == BleuSmoothing::kNone) return 0.0;
      precision = 1.0 / static_cast<double>(total + 1);
    } else {
      precision = static_cast<double>(matches) / static_cast<double>(total);
    }
    log_sum += std::log(precision);
  }

  const auto c = hypothesis.size();
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    auto diff = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r)) r = ref.size();
  }
  double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  double score = bp * std::exp(log_sum / max_n);
  return std::clamp(score, 0.0, 1.0);
}

double sentence_bleu(const std::string& hypothesis, const std::vector<std::string>& references,
                     int max_n, BleuSmoothing smoothing) {
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(tokenize(r));
  return sentence_bleu_tokens(tokenize(hypothesis), refs, max_n, smoothing);
}

BleuReport bleu_report(const std::vector<RoundTrip>& trips, const std::string& label) {
  if (trips.empty()) throw InputError("BLEU report needs at least one scored round trip");
  BleuReport report;
  report.label = label;
  std::map<std::string, std::pair<double, std::size_t>> sums;
  double total = 0;
  for (const auto& t : trips) {
    double score = sentence_bleu(t.back_translated, {t.original});
    report.samples.push_back({t.sample_id, t.original_emotion.name(), score});
    auto& s = sums[t.original_emotion.name()];
    s.first += score;
    ++s.second;
    total += score;
  }
  for (const auto& [emotion, s] : sums) report.emotion_means[emotion] = s.first / static_cast<double>(s.second);
  report.mean = total / static_cast<double>(trips.size());
  return report;
}

double bleu_multiplier(const BleuReport& a, const BleuReport& b) {
  if (b.mean == 0) throw std::domain_error("baseline BLEU mean is zero");
  return a.mean / b.mean;
}

std::string bleu_table(const BleuReport& baseline, const BleuReport& candidate) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  const std::string a = baseline.label.empty() ? "baseline" : baseline.label;
  const std::string b = candidate.label.empty() ? "candidate" : candidate.label;
  out << std::left << std::setw(22) << "" << std::right << std::setw(16) << a << std::setw(16) << b << '\n';
  out << std::left << std::setw(22) << "Average BLEU Score" << std::right << std::setw(16)
      << baseline.mean * 100 << std::setw(16) << candidate.mean * 100 << '\n';
  std::ostringstream mult;
  mult << std::fixed << std::setprecision(2) << bleu_multiplier(candidate, baseline) << "x";
  out << std::left << std::setw(22) << "Multiplier" << std::right << std::setw(16) << "1x"
      << std::setw(16) << mult.str() << '\n';
  std::set<std::string> emotions;
  for (const auto& [e, m] : baseline.emotion_means) emotions.insert(e);
  for (const auto& [e, m] : candidate.emotion_means) emotions.insert(e);
  for (const auto& e : emotions) {
    auto get = [&](const BleuReport& r) {
      auto it = r.emotion_means.find(e);
      std::ostringstream s;
      if (it == r.emotion_means.end()) s << "-";
      else s << std::fixed << std::setprecision(2) << it->second * 100;
      return s.str();
    };
    out << std::left << std::setw(22) << ("  " + e) << std::right << std::setw(16) << get(baseline)
        << std::setw(16) << get(candidate) << '\n';
  }
  return out.str();
}

ordered_json to_json(const BleuReport& report) {
  ordered_json j;
  j["label"] = report.label;
  j["mean"] = report.mean;
  j["mean_percent"] = report.mean * 100;
  j["emotion_means"] = report.emotion_means;
  j["samples"] = ordered_json::array();
  for (const auto& s : report.samples) {
    j["samples"].push_back({{"sample_id", s.sample_id}, {"emotion", s.emotion}, {"bleu", s.bleu}});
  }
  return j;
}

// ---------------------------------------------------------------------------

std::string to_string(RatingKind kind) {
  switch (kind) {
    case RatingKind::kEmotionVsOriginal: return "emotion_vs_original";
    case RatingKind::kEmotionVsBaseline: return "emotion_vs_baseline";
    case RatingKind::kFactVsBaseline: return "fact_vs_baseline";
  }
  return "";
}

RatingKind rating_kind_from_string(std::string_view s) {
  if (s == "emotion_vs_original") return RatingKind::kEmotionVsOriginal;
  if (s == "emotion_vs_baseline") return RatingKind::kEmotionVsBaseline;
  if (s == "fact_vs_baseline") return RatingKind::kFactVsBaseline;
  throw InputError("unknown rating kind '" + std::string(s) + "'");
}

std::string to_string(Choice choice) {
  switch (choice) {
    case Choice::kLeft: return "left";
    case Choice::kRight: return "right";
    case Choice::kBothEqual: return "both_equal";
  }
  return "";
}

Choice choice_from_string(std::string_view s) {
  auto v = to_lower_ascii(trim(s));
  if (v == "left" || v == "a") return Choice::kLeft;
  if (v == "right" || v == "b") return Choice::kRight;
  if (v == "both_equal") return Choice::kBothEqual;
  throw InputError("unknown rating choice '" + std::string(s) + "'");
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kSubject: return "subject";
    case Verdict::kOther: return "other";
    case Verdict::kBothEqual: return "both_equal";
    case Verdict::kNoMajority: return "no_majority";
  }
  return "";
}

RatingTaskSet build_rating_tasks(const std::vector<ComparisonPair>& pairs, RatingKind kind,
                                 std::uint64_t seed, std::size_t per_emotion) {
  std::map<std::string, std::vector<const ComparisonPair*>> by_emotion;
  for (const auto& p : pairs) by_emotion[p.emotion.name()].push_back(&p);

  RatingTaskSet out;
  for (auto& [emotion, items] : by_emotion) {
    if (items.size() < per_emotion) {
      out.warnings.push_back(emotion + ": " + std::to_string(items.size()) + " of " +
                             std::to_string(per_emotion) + " requested pairs available");
      Log::warn("rating_tasks_short", {{"emotion", emotion}, {"available", items.size()},
                                       {"requested", per_emotion}});
    }
    SeededRng sampler(keyed_hash(seed, {"rating-sample", to_string(kind), emotion}));
    auto picked = sampler.sample_indices(items.size(), per_emotion);
    std::sort(picked.begin(), picked.end());
    for (auto i : picked) {
      const auto& p = *items[i];
      RatingTask t;
      t.task_id = to_string(kind) + ":" + emotion + ":" + p.pair_id;
      t.kind = kind;
      t.emotion = p.emotion;
      SeededRng orient(keyed_hash(seed, {"orientation", t.task_id}));
      t.subject_left = orient.bernoulli(0.5);
      if (t.subject_left) {
        t.left_text = p.subject_text;
        t.left_source = p.subject_source;
        t.right_text = p.other_text;
        t.right_source = p.other_source;
      } else {
        t.left_text = p.other_text;
        t.left_source = p.other_source;
        t.right_text = p.subject_text;
        t.right_source = p.subject_source;
      }
      out.tasks.push_back(std::move(t));
    }
  }
  return out;
}

void write_task_csv(const std::filesystem::path& path, const std::vector<RatingTask>& tasks) {
  std::ostringstream out;
  write_csv_row(out, {"task_id", "kind", "emotion", "text_a", "text_b"});
  for (const auto& t : tasks) {
    write_csv_row(out, {t.task_id, to_string(t.kind), t.emotion.name(), t.left_text, t.right_text});
  }
  atomic_write(path, out.str());
}

void write_key_csv(const std::filesystem::path& path, const std::vector<RatingTask>& tasks) {
  std::ostringstream out;
  write_csv_row(out, {"task_id", "orientation", "left_source", "right_source"});
  for (const auto& t : tasks) {
    write_csv_row(out, {t.task_id, t.subject_left ? "subject_left" : "subject_right", t.left_source,
                        t.right_source});
  }
  atomic_write(path, out.str());
}

std::vector<RatingTask> load_rating_tasks(const std::filesystem::path& task_csv,
                                          const std::filesystem::path& key_csv) {
  auto tasks = read_csv(task_csv);
  auto keys = read_csv(key_csv);
  std::map<std::string, std::vector<std::string>> key_rows;
  auto key_id = keys.column("task_id");
  for (auto& row : keys.rows) key_rows[row[key_id]] = row;
  const auto c_id = tasks.column("task_id"), c_kind = tasks.column("kind"),
             c_emotion = tasks.column("emotion"), c_a = tasks.column("text_a"),
             c_b = tasks.column("text_b");
  const auto k_orient = keys.column("orientation"), k_left = keys.column("left_source"),
             k_right = keys.column("right_source");
  std::vector<RatingTask> out;
  for (const auto& row : tasks.rows) {
    auto it = key_rows.find(row[c_id]);
    if (it == key_rows.end()) throw InputError("task '" + row[c_id] + "' is missing from the key file");
    RatingTask t;
    t.task_id = row[c_id];
    t.kind = rating_kind_from_string(row[c_kind]);
    t.emotion = Emotion(row[c_emotion]);
    t.left_text = row[c_a];
    t.right_text = row[c_b];
    const auto& orientation = it->second[k_orient];
    if (orientation != "subject_left" && orientation != "subject_right") {
      throw InputError("task '" + t.task_id + "' has orientation '" + orientation + "'");
    }
    t.subject_left = orientation == "subject_left";
    t.left_source = it->second[k_left];
    t.right_source = it->second[k_right];
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<RatingResult> load_rating_results(const std::filesystem::path& path) {
  auto table = read_csv(path);
  const auto c_id = table.column("task_id"), c_worker = table.column("worker_id"),
             c_choice = table.column("choice");
  std::vector<RatingResult> out;
  for (const auto& row : table.rows) {
    out.push_back({row[c_id], row[c_worker], choice_from_string(row[c_choice])});
  }
  return out;
}

Verdict majority_verdict(RatingKind kind, bool subject_left, const std::array<Choice, 3>& choices) {
  int subject = 0, other = 0, equal = 0;
  for (Choice c : choices) {
    switch (c) {
      case Choice::kLeft: (subject_left ? subject : other)++; break;
      case Choice::kRight: (subject_left ? other : subject)++; break;
      case Choice::kBothEqual:
        if (kind != RatingKind::kFactVsBaseline) {
          throw InputError("both_equal is only valid for fact_vs_baseline tasks");
        }
        ++equal;
        break;
    }
  }
  if (subject >= 2) return Verdict::kSubject;
  if (other >= 2) return Verdict::kOther;
  if (equal >= 2) return Verdict::kBothEqual;
  return Verdict::kNoMajority;
}

RatingAggregate aggregate_ratings(const std::vector<RatingResult>& results,
                                  const std::vector<RatingTask>& tasks) {
  std::map<std::string, std::vector<Choice>> by_task;
  std::set<std::string> known;
  for (const auto& t : tasks) known.insert(t.task_id);
  for (const auto& r : results) {
    if (!known.contains(r.task_id)) throw InputError("result for unknown task '" + r.task_id + "'");
    by_task[r.task_id].push_back(r.choice);
  }
  std::vector<std::string> bad;
  for (const auto& t : tasks) {
    auto it = by_task.find(t.task_id);
    if (it == by_task.end() || it->second.size() != 3) bad.push_back(t.task_id);
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& id : bad) list += (list.empty() ? "" : ", ") + id;
    throw InputError("tasks without exactly 3 results: " + list);
  }
  RatingAggregate agg;
  for (const auto& t : tasks) {
    const auto& c = by_task.at(t.task_id);
    Verdict v;
    try {
      v = majority_verdict(t.kind, t.subject_left, {c[0], c[1], c[2]});
    } catch (const InputError& e) {
      throw InputError("task '" + t.task_id + "': " + e.what());
    }
    agg.verdicts[t.task_id] = v;
    for (EmotionTally* tally : {&agg.by_emotion[t.emotion.name()], &agg.overall}) {
      ++tally->tasks;
      switch (v) {
        case Verdict::kSubject: ++tally->subject_wins; break;
        case Verdict::kOther: ++tally->other_wins; break;
        case Verdict::kBothEqual: ++tally->both_equal; break;
        case Verdict::kNoMajority: ++tally->no_majority; break;
      }
    }
  }
  return agg;
}

std::string rating_table(const RatingAggregate& aggregate) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << std::left << std::setw(16) << "emotion" << std::right << std::setw(8) << "tasks"
      << std::setw(10) << "win%" << std::setw(10) << "loss%" << std::setw(10) << "equal%"
      << std::setw(10) << "split%" << '\n';
  auto row = [&](const std::string& name, const EmotionTally& t) {
    auto pct = [&](std::size_t x) { return t.tasks ? 100.0 * static_cast<double>(x) / t.tasks : 0.0; };
    out << std::left << std::setw(16) << name << std::right << std::setw(8) << t.tasks
        << std::setw(10) << pct(t.subject_wins) << std::setw(10) << pct(t.other_wins)
        << std::setw(10) << pct(t.both_equal) << std::setw(10) << pct(t.no_majority) << '\n';
  };
  for (const auto& [e, t] : aggregate.by_emotion) row(e, t);
  row("overall", aggregate.overall);
  return out.str();
}

ordered_json to_json(const RatingAggregate& aggregate) {
  auto tally = [](const EmotionTally& t) {
    return ordered_json{{"tasks", t.tasks},           {"subject_wins", t.subject_wins},
                        {"other_wins", t.other_wins}, {"both_equal", t.both_equal},
                        {"no_majority", t.no_majority}, {"win_rate", t.win_rate()}};
  };
  ordered_json j;
  j["by_emotion"] = ordered_json::object();
  for (const auto& [e, t] : aggregate.by_emotion) j["by_emotion"][e] = tally(t);
  j["overall"] = tally(aggregate.overall);
  return j;
}

}  // namespace emotrans
