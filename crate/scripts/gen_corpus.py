#!/usr/bin/env python3
"""Regenerate the bundled sample prompt corpora.

The corpora imitate the shape of community text-to-image prompts: a plain
subject description, optionally followed by a comma-separated list of
modifiers. Output is deterministic for a fixed seed.

    python3 scripts/gen_corpus.py
"""

import csv
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "crates" / "core" / "data"

SUBJECTS = [
    "a boy", "a girl", "an old man", "a young woman", "two women", "a knight",
    "a robot", "a cat", "a dog", "a dragon", "a fox", "an astronaut", "a wizard",
    "a samurai", "a princess", "a pirate ship", "a lighthouse", "a castle",
    "a cottage", "a city", "a village", "a forest", "a mountain", "a river",
    "a tropical beach", "a desert", "a spaceship", "a train", "a car",
    "a bowl of fruit", "a cup of coffee", "a portrait of a woman",
    "a portrait of a man", "a giant whale", "an owl", "a tiger", "a horse",
    "a library", "a garden", "a temple",
]

ACTIONS = [
    "on a horse", "with palm trees", "working in a kitchen", "in the rain",
    "at sunset", "under the stars", "in a forest", "on a hill", "by the sea",
    "in a snowy field", "reading a book", "flying over a city", "in space",
    "on the moon", "in a busy street", "near a waterfall", "in the fog",
    "at night", "in a field of flowers", "on a boat", "sitting on a bench",
    "walking in the park", "in an abandoned factory", "under a bridge",
    "in the desert", "surrounded by cats", "playing the piano",
    "holding a sword", "wearing a crown", "made of glass",
]

EXTRA_MODIFIERS = [
    "intricate", "sharp focus", "smooth", "matte painting",
    "volumetric lighting", "dramatic lighting", "soft light", "elegant pose",
    "golden hour", "global illumination", "depth of field", "rim light",
    "warm colors", "muted colors", "symmetrical", "centered", "highly ornate",
]


def load_keywords():
    with open(DATA / "keywords.csv", newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    return {name: sorted({r[i] for r in body}) for i, name in enumerate(header)}


def modifier(rng, keywords):
    roll = rng.random()
    if roll < 0.15:
        return "by " + rng.choice(keywords["Artist"])
    if roll < 0.40:
        return rng.choice(EXTRA_MODIFIERS)
    category = rng.choice(list(keywords))
    return rng.choice(keywords[category])


def prompt(rng, keywords, subject):
    # Plain prompts carry no modifiers; the overlap filter drops them.
    n = rng.choices([0, 1, 2, 3, 4, 5], weights=[1, 2, 3, 3, 2, 1])[0]
    mods = []
    while len(mods) < n:
        m = modifier(rng, keywords)
        if m not in mods:
            mods.append(m)
    return ", ".join([subject] + mods)


def main():
    rng = random.Random(20231117)
    keywords = load_keywords()
    subjects = [f"{s} {a}" for s in SUBJECTS for a in ACTIONS]
    rng.shuffle(subjects)
    train_subjects, eval_subjects = subjects[:900], subjects[900:1200]
    train = [prompt(rng, keywords, s) for s in train_subjects]
    evals = [prompt(rng, keywords, s) for s in eval_subjects]
    (DATA / "prompts_train.txt").write_text("\n".join(train) + "\n")
    (DATA / "prompts_eval.txt").write_text("\n".join(evals) + "\n")


if __name__ == "__main__":
    main()
