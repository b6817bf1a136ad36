"""Writes the small demo dataset used by the README walkthrough and the tests."""
import csv
import json
import pathlib

HERE = pathlib.Path(__file__).parent

TOPICS = [
    ("q1", "who painted the mona lisa", ["Leonardo da Vinci"], "Raphael", [
        "The Mona Lisa was painted by Leonardo da Vinci in the early sixteenth century.",
        "Leonardo da Vinci worked on the portrait of Lisa Gherardini, known as the Mona Lisa, for years.",
        "The Louvre in Paris displays the Mona Lisa behind bulletproof glass.",
        "Millions of visitors queue every year to see the famous painting in Paris.",
        "The painting was stolen from the museum in 1911 and recovered two years later.",
        "Renaissance portraits often used a technique called sfumato to soften outlines.",
    ]),
    ("q2", "what is the capital of australia", ["Canberra"], "Sydney", [
        "Canberra is the capital city of Australia and home to Parliament House.",
        "The federal government of Australia sits in Canberra, a planned city.",
        "Sydney is the most populous city in Australia and famous for its harbour.",
        "Melbourne hosted the Australian parliament until 1927.",
        "The Australian Capital Territory was created as a compromise between two rival cities.",
        "Walter Burley Griffin won the international design competition for the new city.",
    ]),
    ("q3", "when did the berlin wall fall", ["1989", "November 1989"], "1991", [
        "The Berlin Wall fell on 9 November 1989 after border crossings were opened.",
        "Crowds gathered at the wall in November 1989 and began to tear it down.",
        "The wall divided East and West Berlin for almost three decades.",
        "German reunification was formally completed in October 1990.",
        "Checkpoint Charlie was the best known crossing point between the two sides.",
        "Construction of the barrier began in August 1961.",
    ]),
    ("q4", "what is the largest planet in the solar system", ["Jupiter"], "Saturn", [
        "Jupiter is the largest planet in the solar system, more than twice as massive as all others combined.",
        "The gas giant Jupiter has a storm called the Great Red Spot.",
        "Saturn is famous for its bright ring system made of ice and rock.",
        "Mercury is the smallest planet and the closest to the Sun.",
        "The outer planets are gas giants or ice giants with many moons.",
        "Space probes such as Voyager flew past the outer planets in the 1970s and 1980s.",
    ]),
    ("q5", "who wrote pride and prejudice", ["Jane Austen"], "Charlotte Bronte", [
        "Pride and Prejudice is a novel by Jane Austen published in 1813.",
        "Jane Austen wrote about Elizabeth Bennet and Mr Darcy in Pride and Prejudice.",
        "The novel follows the Bennet family and their five daughters.",
        "Regency era novels often centred on marriage and social standing.",
        "The book has been adapted for film and television many times.",
        "Early editions of the novel were published anonymously.",
    ]),
]

EMOTIONAL_TEXTS = [
    ("Wow, another Monday. Just what I needed.", "sarcasm"),
    ("Oh great, the train is late again, what a surprise.", "sarcasm"),
    ("Sure, because waiting two hours on hold is my favourite hobby.", "sarcasm"),
    ("I can't believe they cancelled the concert without telling anyone!", "anger"),
    ("This is the third time my order arrived broken.", "anger"),
    ("Who approved this ridiculous policy?", "anger"),
    ("We finally got the keys to our new flat today!", "happiness"),
    ("My sister passed her exams and we are celebrating tonight.", "happiness"),
    ("The garden looks lovely after the rain.", "happiness"),
    ("I miss the way the house sounded when everyone was home.", "sadness"),
    ("The old bakery on the corner closed for good this week.", "sadness"),
    ("Nobody came to the farewell party.", "sadness"),
]


def main():
    queries, passages, variant_sets = [], [], []
    for qid, question, answers, wrong, texts in TOPICS:
        queries.append({"id": qid, "text": question, "answers": answers})
        for i, text in enumerate(texts):
            pid = f"{qid}-p{i + 1}"
            passages.append({"id": pid, "text": text, "source_query_id": None, "rank": None, "score": None})
            gold = any(a.lower() in text.lower() for a in answers)
            distorted = text
            for a in answers:
                distorted = distorted.replace(a, wrong)
            if distorted == text:
                distorted = text.replace(" the ", " supposedly the ", 1)
            variant_sets.append({
                "passage_id": pid,
                "original": text,
                "sarcastic_consistent": "Oh sure, as everyone obviously knows, " + text[0].lower() + text[1:],
                "sarcastic_distorted": "Oh yeah, totally, " + distorted[0].lower() + distorted[1:],
                "is_gold": gold,
            })

    def write_jsonl(name, rows):
        with open(HERE / name, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")

    write_jsonl("queries.jsonl", queries)
    write_jsonl("passages.jsonl", passages)
    write_jsonl("variant_sets.jsonl", variant_sets)
    with open(HERE / "emotional_texts.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "text", "emotion_label"])
        for i, (text, label) in enumerate(EMOTIONAL_TEXTS):
            w.writerow([f"t{i + 1}", text, label])


if __name__ == "__main__":
    main()
