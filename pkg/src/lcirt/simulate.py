"""Synthetic response data from known LC or 2PL parameters.

Draws use numpy's Philox4x64-10 counter-based generator keyed by the
64-bit seed. Every subject consumes ``J + 1`` consecutive uniforms (class
draw first, then one per item), so row ``i`` depends only on the seed and
``i``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from lcirt.data import DimensionPartition, ItemMeta, ResponseMatrix
from lcirt.lc import LcParams
from lcirt.twopl import TwoPlParams, implied_lambda


@dataclass(frozen=True)
class GeneratorSpec:
    params: Union[LcParams, TwoPlParams]
    n: int
    seed: int
    item_codes: tuple[str, ...] | None = None

    def __post_init__(self):
        if not isinstance(self.params, (LcParams, TwoPlParams)):
            raise TypeError("params must be LcParams or TwoPlParams")
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        J = self.params.J
        if self.item_codes is not None and len(self.item_codes) != J:
            raise ValueError(f"{len(self.item_codes)} item codes for {J} items")

    @property
    def kind(self) -> str:
        return "lc" if isinstance(self.params, LcParams) else "2pl"

    def success_probs(self) -> np.ndarray:
        if isinstance(self.params, LcParams):
            return np.asarray(self.params.success_probs)
        return implied_lambda(self.params)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    data: ResponseMatrix
    classes: np.ndarray


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def simulate(spec: GeneratorSpec) -> SimulatedData:
    """Draw a class per subject from the weights, then independent Bernoulli items."""
    lam = spec.success_probs()
    J, k = lam.shape
    u = philox(spec.seed).random((spec.n, J + 1))
    cum = np.cumsum(spec.params.weights)
    cum[-1] = 1.0
    classes = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), k - 1)
    values = (u[:, 1:] < lam[:, classes].T).astype(np.uint8)
    codes = spec.item_codes or tuple(f"Y{j + 1}" for j in range(J))
    groups = spec.params.partition.assignment if isinstance(spec.params, TwoPlParams) else (None,) * J
    items = tuple(ItemMeta(j + 1, codes[j], "", groups[j]) for j in range(J))
    return SimulatedData(ResponseMatrix(values, items), classes)


def pattern_table(data: ResponseMatrix | np.ndarray) -> dict[tuple[int, ...], int]:
    """Observed frequency of every distinct response pattern."""
    Y = data.values if isinstance(data, ResponseMatrix) else np.asarray(data)
    patterns, counts = np.unique(Y, axis=0, return_counts=True)
    return {tuple(int(v) for v in p): int(c) for p, c in zip(patterns, counts)}


def naive_pattern_counts(data: ResponseMatrix | np.ndarray) -> Counter:
    Y = data.values if isinstance(data, ResponseMatrix) else np.asarray(data)
    return Counter(tuple(int(v) for v in row) for row in Y)


def spec_from_dict(doc: dict) -> GeneratorSpec:
    """Build a spec from its JSON form.

    ``{"model": "lc", "n", "seed", "weights", "success_probs" (J x k)}`` or
    ``{"model": "2pl", "n", "seed", "weights", "gamma", "beta", "theta"
    (k x s), "assignment" (1-based group per item)}``; ``item_codes`` is
    optional for both.
    """
    try:
        model = str(doc["model"]).lower()
        n, seed = int(doc["n"]), int(doc["seed"])
        weights = np.asarray(doc["weights"], dtype=float)
        if model == "lc":
            params = LcParams(weights, np.asarray(doc["success_probs"], dtype=float))
        elif model == "2pl":
            partition = DimensionPartition(tuple(int(a) for a in doc["assignment"]))
            params = TwoPlParams(
                weights, np.asarray(doc["gamma"], dtype=float), np.asarray(doc["beta"], dtype=float),
                np.asarray(doc["theta"], dtype=float), partition,
            )
        else:
            raise ValueError(f"unknown model kind {model!r}; expected 'lc' or '2pl'")
    except KeyError as exc:
        raise ValueError(f"generator spec is missing field {exc.args[0]!r}") from None
    codes = doc.get("item_codes")
    return GeneratorSpec(params, n, seed, tuple(codes) if codes is not None else None)


def spec_to_dict(spec: GeneratorSpec) -> dict:
    p = spec.params
    doc = {"model": spec.kind, "n": int(spec.n), "seed": int(spec.seed), "weights": p.weights.tolist()}
    if isinstance(p, LcParams):
        doc["success_probs"] = p.success_probs.tolist()
    else:
        doc.update(
            gamma=p.gamma.tolist(), beta=p.beta.tolist(), theta=p.theta.tolist(),
            assignment=list(p.partition.assignment),
        )
    if spec.item_codes is not None:
        doc["item_codes"] = list(spec.item_codes)
    return doc


def load_spec(path: str | Path) -> GeneratorSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))
