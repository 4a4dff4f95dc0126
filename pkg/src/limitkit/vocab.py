"""Built-in word pools: LIMIT-style "likes" attributes, person names, atomic words."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

_MODIFIERS = """
Red Blue Green Yellow Purple Orange Black White Golden Silver Wild Tiny Giant
Spicy Sweet Sour Frozen Roasted Smoked Fresh Dried Vintage Modern Classic
Electric Acoustic Indoor Outdoor Mountain Ocean Desert Forest Arctic Tropical
Urban Rustic Royal Ancient Digital Paper Wooden Glass Velvet Striped
""".split()

_NOUNS = """
Apples Quokkas Bicycles Lanterns Puzzles Kites Pianos Tulips Otters Teapots
Sneakers Comics Cactuses Dolphins Guitars Pancakes Robots Scarves Telescopes
Volcanoes Waffles Zebras Blankets Candles Donuts Ferns Gliders Hammocks
Igloos Jellyfish Kayaks Lemons Marbles Notebooks Owls Parrots Quilts Rockets
Sandals Trains Umbrellas Violins Walnuts Yachts Beetles Chess Tacos Sushi
""".split()

FIRST_NAMES = """
Jon Ava Liam Mia Noah Emma Omar Zoe Ethan Lily Ravi Nora Hugo Iris Felix Maya
Leo Chloe Owen Ruby Adam Grace Ivan Hana Theo Luna Kai Sofia Eli Clara Marco
Aria Jonah Nina Tariq Elsa Pablo Vera Sami Ada
""".split()

LAST_NAMES = """
Durben Smith Okafor Lindqvist Moreau Tanaka Novak Silva Kowalski Haddad
Fischer Rossi Nguyen Petrov Larsen Castillo Mbeki Varga Oconnell Yilmaz Brandt
Alvarez Sato Dubois Kaur Weber Jensen Costa Ibrahim Horvat Quinn Berg Mendes
Park Eriksen Lopez Abbas Ferrari Walsh Ortiz
""".split()

# fixed permutation seed so the default vocabulary never depends on a dataset seed
_VOCAB_ORDER_SEED = 20240601


def default_attributes(count: int) -> list[str]:
    """First ``count`` attributes of the fixed modifier-noun vocabulary."""
    combos = [f"{m} {n}" for m in _MODIFIERS for n in _NOUNS]
    if count > len(combos):
        raise ValueError(f"built-in vocabulary has only {len(combos)} attributes, {count} requested")
    order = np.random.default_rng(_VOCAB_ORDER_SEED).permutation(len(combos))
    return [combos[i] for i in order[:count]]


@lru_cache(maxsize=1)
def atomic_words() -> tuple[str, ...]:
    """The shipped single-word replacement list, in file order."""
    text = resources.files("limitkit.data").joinpath("atomic_words.txt").read_text("utf-8")
    return tuple(w for w in text.split("\n") if w)
