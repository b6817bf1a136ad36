#include "emotrans/trainprep.hpp"

#include <algorithm>

#include "emotrans/error.hpp"
#include "emotrans/prompts.hpp"

namespace emotrans {

namespace prompts {

std::string translate_instruction(std::string_view source, std::string_view target) {
  std::string out(kTranslate);
  auto replace = [&](std::string_view slot, std::string_view value) {
    auto pos = out.find(slot);
    out.replace(pos, slot.size(), value);
  };
  replace("{source}", source);
  replace("{target}", target);
  return out;
}

std::string translate_user_prompt(std::string_view source, std::string_view target,
                                  std::string_view passage) {
  std::string out = translate_instruction(source, target);
  out += "\n\n";
  out += passage;
  return out;
}

}  // namespace prompts

void validate(const MixtureSpec& spec) {
  if (spec.n_groups == 0) throw ConfigError("mixture n_groups must be > 0");
  if (spec.versions_per_group == 0) throw ConfigError("mixture versions_per_group must be > 0");
  if (spec.versions_per_group > closed_set_labels().size()) {
    throw ConfigError("mixture versions_per_group exceeds the " +
                      std::to_string(closed_set_labels().size()) + " available renderings");
  }
  if (!(spec.self_map_rate >= 0.0 && spec.self_map_rate <= 1.0)) {
    throw ConfigError("mixture self_map_rate must lie in [0, 1]");
  }
}

std::vector<FineTuneRecord> build_training_mixture(const std::vector<ParallelGroup>& groups,
                                                   const MixtureSpec& spec) {
  validate(spec);
  std::vector<const ParallelGroup*> complete;
  for (const auto& g : groups) {
    if (g.complete) complete.push_back(&g);
  }
  if (complete.size() < spec.n_groups) {
    throw InputError("mixture needs " + std::to_string(spec.n_groups) +
                     " complete groups but only " + std::to_string(complete.size()) +
                     " of " + std::to_string(groups.size()) + " are complete");
  }
  // Canonical order first so the sample does not depend on input order.
  std::sort(complete.begin(), complete.end(),
            [](const ParallelGroup* a, const ParallelGroup* b) { return a->passage_id < b->passage_id; });
  SeededRng group_rng(keyed_hash(spec.seed, {"group-sample"}));
  auto picked = group_rng.sample_indices(complete.size(), spec.n_groups);
  std::sort(picked.begin(), picked.end());

  const auto& labels = closed_set_labels();
  std::vector<FineTuneRecord> records;
  records.reserve(spec.n_groups * spec.versions_per_group);
  for (auto gi : picked) {
    const ParallelGroup& group = *complete[gi];
    SeededRng rng(keyed_hash(spec.seed, {"group", group.passage_id}));
    for (auto li : rng.sample_indices(labels.size(), spec.versions_per_group)) {
      const Emotion& source = labels[li];
      Emotion target = source;
      if (!rng.bernoulli(spec.self_map_rate)) {
        auto offset = rng.uniform_index(labels.size() - 1);
        target = labels[offset >= li ? offset + 1 : offset];
      }
      FineTuneRecord r;
      r.source_emotion = source;
      r.target_emotion = target;
      r.passage_id = group.passage_id;
      r.prompt = prompts::translate_instruction(source.name(), target.name());
      r.input_text = group.text_for(source);
      r.target_text = source == target ? r.input_text : group.text_for(target);
      records.push_back(std::move(r));
    }
  }
  return records;
}

ordered_json to_json(const TrainingManifest& m) {
  ordered_json j;
  j["base_model"] = m.base_model;
  j["lora_rank"] = m.lora_rank;
  j["lr"] = m.learning_rate;
  j["optimizer"] = m.optimizer;
  j["epochs"] = m.epochs;
  j["objective"] =
      "token-level cross-entropy on the output sequence given prompt and input; "
      "the model parameters and output length are determined by the training stack";
  j["mixture"] = {{"n_groups", m.mixture.n_groups},
                  {"versions_per_group", m.mixture.versions_per_group},
                  {"self_map_rate", m.mixture.self_map_rate},
                  {"seed", m.mixture.seed}};
  j["record_count"] = m.record_count;
  j["format"] = {{"fields", {"prompt", "input", "output"}}, {"encoding", "jsonl"}};
  return j;
}

ExportedExample to_exported(const FineTuneRecord& r) { return {r.prompt, r.input_text, r.target_text}; }

void export_finetune(const std::vector<FineTuneRecord>& records,
                     const std::filesystem::path& data_path,
                     const std::filesystem::path& manifest_path, TrainingManifest manifest) {
  if (records.empty()) throw InputError("no fine-tune records to export");
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["prompt"] = r.prompt;
    j["input"] = r.input_text;
    j["output"] = r.target_text;
    out += j.dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  atomic_write(data_path, out);
  manifest.record_count = records.size();
  atomic_write(manifest_path, to_json(manifest).dump(2) + "\n");
}

std::vector<ExportedExample> load_finetune(const std::filesystem::path& data_path) {
  std::vector<ExportedExample> out;
  for_each_jsonl(data_path, [&](const json& j, std::size_t line) {
    try {
      out.push_back({j.at("prompt"), j.at("input"), j.at("output")});
    } catch (const json::exception&) {
      throw InputError("finetune record missing fields @ line " + std::to_string(line));
    }
  });
  return out;
}

}  // namespace emotrans
