"""Chain description files.

A chain file is JSON::

    {"states": ["a", "b", "c"],
     "rates": [[-1, 1, 0], [0, -1, 1], [1, 0, -1]],
     "initial": [1, 0, 0]}

``rates`` is either a dense matrix or ``{"triples": [[i, j, rate], ...]}``
with 0-based indices; missing diagonals are filled in.  ``initial`` is
optional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chain import Generator, check_probability, generator_from_triples, validate_generator
from .errors import ChainError


@dataclass(frozen=True, eq=False)
class ChainFile:
    generator: Generator
    initial: np.ndarray | None = None


def parse_chain(doc: dict) -> ChainFile:
    if not isinstance(doc, dict):
        raise ChainError("chain file must hold a JSON object")
    if "rates" not in doc:
        raise ChainError("chain file has no 'rates' entry")
    states = doc.get("states")
    rates = doc["rates"]
    if isinstance(rates, dict):
        if "triples" not in rates:
            raise ChainError("sparse 'rates' must be an object with a 'triples' list")
        if states is None:
            raise ChainError("sparse 'rates' need a 'states' list to fix the state count")
        triples = rates["triples"]
        for t in triples:
            if len(t) != 3:
                raise ChainError(f"triple {t!r} does not have three entries")
            i, j = t[0], t[1]
            if not (isinstance(i, int) and isinstance(j, int)) or not (0 <= i < len(states) and 0 <= j < len(states)):
                raise ChainError(f"triple {t!r} has an index outside 0..{len(states) - 1}")
        gen = generator_from_triples(len(states), triples, states)
    else:
        try:
            K = np.array(rates, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ChainError(f"dense 'rates' is not a numeric matrix: {exc}") from exc
        if states is not None and K.ndim == 2 and len(states) != K.shape[0]:
            raise ChainError(f"{len(states)} state labels for a {K.shape[0]}-state matrix")
        gen = validate_generator(K, states)
    initial = doc.get("initial")
    if initial is not None:
        initial = check_probability(initial, gen.n)
    return ChainFile(gen, initial)


def load_chain(path) -> ChainFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ChainError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChainError(f"{path} is not valid JSON: {exc}") from exc
    return parse_chain(doc)


def chain_to_dict(gen: Generator, initial=None, sparse: bool = False) -> dict:
    doc: dict = {"states": list(gen.names)}
    if sparse:
        i, j = gen.edges
        doc["rates"] = {"triples": [[int(a), int(b), float(gen.rates[a, b])] for a, b in zip(i, j)]}
    else:
        doc["rates"] = gen.rates.tolist()
    if initial is not None:
        doc["initial"] = [float(v) for v in initial]
    return doc
