"""Seeded generator of short children's stories for desk-scale corpora.

The stories are template-driven but combinatorially varied (names, animals,
places, objects, feelings, dialogue), blank-line separated, and plain ASCII.
``fixed_prefix_fraction`` forces a share of stories to open with one fixed
phrase, which reproduces a dominant-opening corpus.
"""

from __future__ import annotations

import random
from pathlib import Path

NAMES = [
    "Lily", "Tom", "Mia", "Ben", "Sara", "Max", "Anna", "Sam", "Lucy", "Jack", "Ella", "Leo",
    "Zoe", "Finn", "Ruby", "Jake", "Nora", "Oscar", "Ivy", "Theo", "Amy", "Noah", "Kim", "Eli",
]
ANIMALS = [
    "cat", "dog", "bird", "bunny", "frog", "duck", "bear", "fox", "mouse", "owl", "turtle", "puppy",
    "kitten", "lamb", "pig", "horse", "fish", "squirrel",
]
PLACES = [
    "park", "garden", "forest", "beach", "house", "school", "farm", "pond", "hill", "store",
    "river", "yard", "zoo", "kitchen", "library", "meadow",
]
OBJECTS = [
    "ball", "kite", "box", "hat", "book", "toy car", "red balloon", "blue cup", "shiny rock",
    "big boat", "little drum", "teddy bear", "flower", "cookie", "blanket", "map", "key", "shell",
]
ADJECTIVES = [
    "little", "big", "happy", "sad", "kind", "shy", "brave", "funny", "sleepy", "curious", "tiny",
    "friendly", "grumpy", "clever", "gentle", "silly",
]
FEELINGS = ["happy", "sad", "scared", "excited", "proud", "angry", "tired", "surprised", "worried", "glad"]
VERBS = ["play", "run", "jump", "dance", "sing", "swim", "read", "draw", "hide", "climb", "build", "bake"]
WEATHER = ["sunny", "rainy", "windy", "cold", "warm", "snowy", "cloudy"]
TIMES = ["morning", "afternoon", "evening", "night"]
RELATIVES = ["mom", "dad", "grandma", "grandpa", "sister", "brother", "aunt", "teacher"]

FIXED_PREFIX = "Once upon a time, there"

OPENINGS = [
    "Once upon a time, there was a {adj} {animal} named {name}.",
    "One day, {name} went to the {place}.",
    "{name} was a {adj} {animal} who lived near the {place}.",
    "It was a {weather} {time} in the {place}.",
    "There was a {adj} girl named {name}.",
    "There was a {adj} boy named {name}.",
    "{name} and {name2} were best friends.",
    "Every {time}, {name} liked to {verb} in the {place}.",
    "In a small {place}, there lived a {adj} {animal}.",
    "Long ago, a {adj} {animal} found a {obj}.",
    "{name} woke up and looked outside. It was {weather}.",
    "\"Look!\" said {name}. \"A {obj}!\"",
    "The {animal} wanted to {verb} all day.",
    "Mom said, \"{name}, it is time to go to the {place}.\"",
]

MIDDLES = [
    "{name} saw a {obj} under a tree.",
    "{name} wanted to {verb} with the {animal}.",
    "The {animal} was {feeling} because it lost its {obj}.",
    "\"Can I {verb} with you?\" asked {name}.",
    "\"Yes, you can!\" said the {animal}.",
    "They went to the {place} together.",
    "{name} felt {feeling}.",
    "The {obj} was too high to reach.",
    "{name} asked {rel} for help.",
    "{rel} smiled and said, \"Let us {verb} together.\"",
    "Suddenly, the wind blew the {obj} away.",
    "{name} ran after it as fast as {pron} could.",
    "The {adj} {animal} jumped into the {place}.",
    "It started to rain, so they hid in the {place}.",
    "{name} shared the {obj} with {name2}.",
    "{name2} said, \"Thank you, {name}!\"",
    "They played until the sun went down.",
    "{name} found a {adj} {obj} in the {place}.",
    "The {animal} did not want to {verb}.",
    "\"Do not be {feeling},\" said {name}.",
    "{name} tried to {verb}, but it was hard.",
    "{name2} showed {name} how to {verb}.",
    "Then they saw a {adj} {animal2} by the {place}.",
    "The {animal2} had a {obj} too.",
]

ENDINGS = [
    "From that day on, {name} and the {animal} were best friends.",
    "{name} learned that sharing makes everyone {feeling2}.",
    "They all went home and had a nice dinner.",
    "{name} smiled. It was the best day ever.",
    "The end.",
    "That night, {name} slept with the {obj} and dreamed of the {place}.",
    "{name} was very {feeling2} and gave {rel} a big hug.",
    "And they played in the {place} every day after that.",
]


def story(rng: random.Random, fixed_prefix: bool = False) -> str:
    name, name2 = rng.sample(NAMES, 2)
    animal, animal2 = rng.sample(ANIMALS, 2)
    cast = {
        "name": name,
        "name2": name2,
        "animal": animal,
        "animal2": animal2,
        "place": rng.choice(PLACES),
        "obj": rng.choice(OBJECTS),
        "adj": rng.choice(ADJECTIVES),
        "feeling": rng.choice(FEELINGS),
        "feeling2": rng.choice(["happy", "glad", "proud"]),
        "verb": rng.choice(VERBS),
        "weather": rng.choice(WEATHER),
        "time": rng.choice(TIMES),
        "rel": rng.choice(RELATIVES),
        "pron": rng.choice(["she", "he"]),
    }
    if fixed_prefix:
        first = FIXED_PREFIX + " was a {adj} {animal} named {name}."
    else:
        first = rng.choice(OPENINGS)
    sentences = [first]
    sentences += rng.sample(MIDDLES, rng.randint(4, 9))
    sentences.append(rng.choice(ENDINGS))
    filled = (s.format(**cast) for s in sentences)
    return " ".join(f[0].upper() + f[1:] for f in filled)


def make_corpus(n_bytes: int, seed: int = 0, fixed_prefix_fraction: float = 0.0) -> str:
    """Blank-line separated stories totalling at least ``n_bytes`` characters."""
    rng = random.Random(seed)
    parts: list[str] = []
    size = 0
    while size < n_bytes:
        s = story(rng, fixed_prefix=rng.random() < fixed_prefix_fraction)
        parts.append(s)
        size += len(s) + 2
    return "\n\n".join(parts) + "\n"


# corpora used by the bundled configs: file name -> make_corpus arguments
CORPUS_PRESETS = {
    "desk_corpus.txt": dict(n_bytes=1_100_000, seed=0),
    "overfit_corpus.txt": dict(n_bytes=72_500, seed=11),
    "prefix_corpus.txt": dict(n_bytes=400_000, seed=7, fixed_prefix_fraction=0.95),
}


def ensure_corpus(path) -> bool:
    """Build a preset corpus at ``path`` if it is missing; True if written."""
    path = Path(path)
    if path.exists() or path.name not in CORPUS_PRESETS:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(make_corpus(**CORPUS_PRESETS[path.name]))
    return True
