"""Subgroup aggregation, ranking, detector-specificity and display rounding.

All rate arithmetic is exact: counts are integers and rates are Fractions.
Rounding to integer percent happens only at display time, half away from
zero (so 15/16 -> 94%, 2/16 -> 13%, 4/16 -> 25%).
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

from .errors import EmptySubgroup
from .model import (
    ATTRIBUTE_NAMES,
    AttributeVector,
    EvalOutcome,
    SubgroupResult,
    SubgroupSpec,
    canonical_value,
)
from .sweep import GridSpec, expand_grid

RateLike = Union[Fraction, float, int, str]


def to_fraction(x: RateLike) -> Fraction:
    """Exact Fraction from thresholds given as float/str/int.

    Floats go through their decimal string so a configured 0.9 means
    exactly 9/10, not the nearest binary double.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


def format_percent(rate: RateLike) -> str:
    """Integer percent with halves rounded away from zero, e.g. '94%'."""
    f = to_fraction(rate)
    if f < 0:
        raise ValueError("rates are nonnegative")
    pct = (200 * f.numerator + f.denominator) // (2 * f.denominator)
    return f"{pct}%"


class RecordSet:
    """Indexed snapshot of store records, built once per aggregation pass."""

    def __init__(self, records: Iterable[Mapping]):
        self.vectors: dict[str, AttributeVector] = {}
        # (attr_key, detector_id) -> {seed: outcome}
        self.outcomes: dict[tuple[str, str], dict[int, EvalOutcome]] = {}
        self.detector_ids: set[str] = set()
        self.n_records = 0
        for rec in records:
            self.n_records += 1
            self.detector_ids.add(rec["detector_id"])
            if rec.get("status", "ok") != "ok":
                continue
            key = rec["attr_key"]
            if key not in self.vectors:
                self.vectors[key] = AttributeVector.from_json(rec["attributes"])
            bucket = self.outcomes.setdefault((key, rec["detector_id"]), {})
            bucket[int(rec["seed"])] = EvalOutcome.from_json(rec["outcome"])

    def matching_keys(self, subgroup: SubgroupSpec) -> list[str]:
        fixed = [(name, canonical_value(v)) for name, v in subgroup.fixed]
        keys = []
        for key, vec in self.vectors.items():
            if all(canonical_value(vec.value_of(name)) == v for name, v in fixed):
                keys.append(key)
        return keys


def _as_recordset(records) -> RecordSet:
    return records if isinstance(records, RecordSet) else RecordSet(records)


def aggregate(records, subgroup: SubgroupSpec, detector_id: str) -> SubgroupResult:
    """Error statistics of one detector over all records matching the
    subgroup's fixed attributes (marginalized/unmentioned attributes match
    any value) and seed set.  Skipped records never count."""
    rs = _as_recordset(records)
    n_samples = 0
    n_errors = 0
    wrong: Counter[str] = Counter()
    seeds = set(subgroup.seeds)
    for key in rs.matching_keys(subgroup):
        bucket = rs.outcomes.get((key, detector_id))
        if not bucket:
            continue
        for seed, outcome in bucket.items():
            if seed not in seeds:
                continue
            n_samples += 1
            if outcome.is_error:
                n_errors += 1
                if outcome.kind == EvalOutcome.WRONG_CLASS:
                    wrong[outcome.label] += 1
    if n_samples == 0:
        raise EmptySubgroup(
            f"no evaluated records for {detector_id} in {subgroup.canonical_key()}"
        )
    top = None
    if wrong:
        # Modal wrong label; ties break toward the lexicographically smaller.
        best = min(wrong.items(), key=lambda kv: (-kv[1], kv[0]))
        top = (best[0], best[1])
    return SubgroupResult(
        subgroup=subgroup,
        detector_id=detector_id,
        n_samples=n_samples,
        n_errors=n_errors,
        top_wrong_class=top,
    )


def rank_subgroups(
    records,
    candidates: Sequence[SubgroupSpec],
    k: int,
    detector_id: str,
) -> list[SubgroupResult]:
    """Top-k subgroups by error rate (descending); ties break toward larger
    n_samples, then canonical attribute ordering.  Candidates matching no
    evaluated record are skipped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rs = _as_recordset(records)
    results = []
    for sub in candidates:
        try:
            results.append(aggregate(rs, sub, detector_id))
        except EmptySubgroup:
            continue
    results.sort(
        key=lambda r: (-r.error_rate, -r.n_samples, r.subgroup.canonical_key())
    )
    return results[:k]


def detector_specific(
    records,
    subgroup: SubgroupSpec,
    target_id: str,
    others: Sequence[str],
    tau_high: RateLike = Fraction(9, 10),
    tau_low: RateLike = Fraction(1, 2),
) -> bool:
    """True iff the target fails the subgroup at >= tau_high while every
    other detector stays at <= tau_low on the same subgroup."""
    th, tl = to_fraction(tau_high), to_fraction(tau_low)
    if not (0 <= tl < th <= 1):
        raise ValueError(f"need 0 <= tau_low < tau_high <= 1, got {tl}, {th}")
    rs = _as_recordset(records)
    if aggregate(rs, subgroup, target_id).error_rate < th:
        return False
    for other in others:
        if aggregate(rs, subgroup, other).error_rate > tl:
            return False
    return True


def average_error_rate(
    records, detector_id: str, subgroups: Sequence[SubgroupSpec]
) -> Fraction:
    """Unweighted mean error rate over an explicit subgroup list."""
    if not subgroups:
        raise EmptySubgroup("average over an empty subgroup list")
    rs = _as_recordset(records)
    total = Fraction(0)
    for sub in subgroups:
        total += aggregate(rs, sub, detector_id).error_rate
    return total / len(subgroups)


# ---------------------------------------------------------------------------
# Candidate universes


def cell_subgroup(attrs: AttributeVector, seeds: Sequence[int]) -> SubgroupSpec:
    return SubgroupSpec.of(
        {name: attrs.value_of(name) for name in ATTRIBUTE_NAMES}, seeds
    )


def marginalize(subgroup: SubgroupSpec, attr: str) -> SubgroupSpec:
    fixed = {k: v for k, v in subgroup.fixed if k != attr}
    return SubgroupSpec.of(
        fixed, subgroup.seeds, marginalized=set(subgroup.marginalized) | {attr}
    )


def build_universe(grid: GridSpec, mode: str = "cells+margin1") -> list[SubgroupSpec]:
    """Candidate subgroups for ranking and averages.

    "cells": every grid cell.  "cells+margin1" additionally marginalizes
    each multi-valued attribute one at a time; "cells+margin2" goes one
    level deeper (every pair of multi-valued attributes).  Single-valued
    attributes are never marginalized: doing so matches exactly the same
    records as the cell and would double-weight it in unweighted averages.
    """
    depth = {"cells": 0, "cells+margin1": 1, "cells+margin2": 2}.get(mode)
    if depth is None:
        raise ValueError(f"unknown universe mode {mode!r}")
    cells = [cell_subgroup(attrs, grid.seeds) for attrs in expand_grid(grid)]
    universe = list(cells)
    values = grid.value_lists()
    multi = [a for a in ATTRIBUTE_NAMES if len(values[a]) >= 2]
    groups: list[tuple[str, ...]] = []
    if depth >= 1:
        groups += [(a,) for a in multi]
    if depth >= 2:
        groups += [
            (a, b) for i, a in enumerate(multi) for b in multi[i + 1 :]
        ]
    seen = set()
    for attrs in groups:
        for cell in cells:
            marg = cell
            for attr in attrs:
                marg = marginalize(marg, attr)
            key = marg.canonical_key()
            if key not in seen:
                seen.add(key)
                universe.append(marg)
    return universe
