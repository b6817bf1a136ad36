#pragma once

#include <string>
#include <string_view>

namespace emotrans::prompts {

/// Translator instruction; shared by the exported training data and every
/// inference-time translation so the two never drift apart.
inline constexpr std::string_view kTranslate =
    "Translate the following passage from {source} to {target}, preserving all factual content.";

/// Source label used when the passage's tone is not known.
inline constexpr std::string_view kUnknownSource = "its current tone";

std::string translate_instruction(std::string_view source, std::string_view target);

/// Instruction followed by a blank line and the passage.
std::string translate_user_prompt(std::string_view source, std::string_view target,
                                  std::string_view passage);

inline constexpr std::string_view kTaggerSystem =
    "You classify the emotional tone of a passage. Answer with exactly one word from this list: "
    "anger, condescension, disgust, envy, excitement, fear, happiness, humor, sadness, sarcasm, "
    "surprise, neutral.";

inline constexpr std::string_view kTaggerInstruction = "Classify the tone of the passage below.";

inline constexpr int kReaderTemplateVersion = 1;

/// Default reader system prompt: tells the model that the context is
/// emotionally inflected internet text and how to use the intent tags.
inline constexpr std::string_view kReaderSystem =
    "You are answering a question using passages retrieved from the internet. These passages are "
    "written by people and may be emotionally inflected: some are sarcastic, angry, humorous or "
    "otherwise non-literal, and the literal wording may not reflect what the author means. Each "
    "passage is labelled with an intent tag describing its tone. Read each passage with its "
    "intended meaning in mind, weigh sarcastic or emotionally charged passages accordingly, and "
    "answer the question concisely.";

}  // namespace emotrans::prompts
