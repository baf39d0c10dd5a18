"""Search for minimal attribute changes that remove a systematic error.

Order-1 neighbors (one attribute changed) are tried before order-2 pairs,
in canonical attribute order, then step order; the first neighbor whose
re-evaluated error rate drops to the flip threshold wins.  "Minimal" is
therefore defined by search order, not global optimality.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

from .analysis import RateLike, aggregate, to_fraction
from .errors import ValidationError
from .model import (
    ATTRIBUTE_NAMES,
    AttributeVector,
    Outpaint,
    PlainColor,
    SubgroupSpec,
)
from .palette import BACKGROUND_COLORS, CAR_COLORS


@dataclass(frozen=True)
class PerturbationSpec:
    """Step rules: ordered offsets for numeric attributes, ordered
    substitute values for categorical ones."""

    numeric_steps: tuple[tuple[str, tuple[float, ...]], ...]
    categorical_subs: tuple[tuple[str, tuple], ...]

    @classmethod
    def of(
        cls,
        numeric_steps: Mapping[str, Sequence[float]] = (),
        categorical_subs: Mapping[str, Sequence] = (),
    ) -> "PerturbationSpec":
        num = tuple((k, tuple(float(s) for s in v)) for k, v in dict(numeric_steps).items())
        cat = tuple((k, tuple(v)) for k, v in dict(categorical_subs).items())
        for name, _ in num + cat:
            if name not in ATTRIBUTE_NAMES:
                raise ValidationError(name, "not an attribute name")
        return cls(num, cat)

    @property
    def numeric(self) -> dict[str, tuple[float, ...]]:
        return dict(self.numeric_steps)

    @property
    def categorical(self) -> dict[str, tuple]:
        return dict(self.categorical_subs)


def default_spec() -> PerturbationSpec:
    """Documented defaults: orientation +-10 degrees, scale +-0.5/1.0/2.0,
    colors over the full palette."""
    return PerturbationSpec.of(
        numeric_steps={
            "orientation_deg": (-10.0, 10.0),
            "scale_factor": (-0.5, 0.5, -1.0, 1.0, -2.0, 2.0),
        },
        categorical_subs={
            "object_color": CAR_COLORS,
            "background": tuple(PlainColor(c) for c in BACKGROUND_COLORS),
        },
    )


def _perturb_value(value, entry):
    if isinstance(value, (PlainColor, Outpaint)):
        return value.to_json()
    return value


def _changes(v: AttributeVector, attr: str, spec: PerturbationSpec) -> list[tuple]:
    """(new_value, perturbation entry) candidates for one attribute, in
    step order; no-ops and out-of-range values are discarded."""
    out = []
    current = v.value_of(attr)
    for step in spec.numeric.get(attr, ()):
        if step == 0:
            continue
        new = float(current) + step
        try:
            v.with_value(attr, new)
        except ValidationError:
            continue
        out.append((new, step))
    for sub in spec.categorical.get(attr, ()):
        if sub == current:
            continue
        try:
            v.with_value(attr, sub)
        except ValidationError:
            continue
        out.append((sub, _perturb_value(sub, sub)))
    return out


def neighbors_with_perturbations(
    v: AttributeVector, spec: PerturbationSpec, order: int
) -> list[tuple[AttributeVector, dict]]:
    if order not in (1, 2):
        raise ValidationError("order", f"{order} not in {{1, 2}}")
    found: list[tuple[AttributeVector, dict]] = []
    seen = {v.canonical_json()}
    if order == 1:
        for attr in ATTRIBUTE_NAMES:
            for new, entry in _changes(v, attr, spec):
                cand = v.with_value(attr, new)
                key = cand.canonical_json()
                if key not in seen:
                    seen.add(key)
                    found.append((cand, {attr: entry}))
        return found
    for i, attr_a in enumerate(ATTRIBUTE_NAMES):
        for attr_b in ATTRIBUTE_NAMES[i + 1 :]:
            for new_a, entry_a in _changes(v, attr_a, spec):
                for new_b, entry_b in _changes(v, attr_b, spec):
                    cand = v.with_value(attr_a, new_a).with_value(attr_b, new_b)
                    key = cand.canonical_json()
                    if key not in seen:
                        seen.add(key)
                        found.append((cand, {attr_a: entry_a, attr_b: entry_b}))
    return found


def neighbors(v: AttributeVector, spec: PerturbationSpec, order: int) -> list[AttributeVector]:
    """All distinct valid vectors differing from v in exactly `order`
    attributes, in deterministic (attribute, then step) order."""
    return [cand for cand, _ in neighbors_with_perturbations(v, spec, order)]


# ---------------------------------------------------------------------------
# Flip search


@dataclass(frozen=True)
class FlipFound:
    perturbation: dict
    attributes: AttributeVector
    n_errors: int
    n_samples: int

    @property
    def error_rate(self) -> Fraction:
        return Fraction(self.n_errors, self.n_samples)


@dataclass(frozen=True)
class FlipSearchResult:
    subgroup: SubgroupSpec
    detector_id: str
    before_n_errors: int
    before_n_samples: int
    flip: Optional[FlipFound]
    evaluated: int
    budget: int

    @property
    def before_rate(self) -> Fraction:
        return Fraction(self.before_n_errors, self.before_n_samples)

    def to_json(self) -> dict:
        out = {
            "subgroup": self.subgroup.to_json(),
            "detector_id": self.detector_id,
            "before": {
                "n_errors": self.before_n_errors,
                "n_samples": self.before_n_samples,
                "error_rate": f"{self.before_n_errors}/{self.before_n_samples}",
            },
            "evaluated": self.evaluated,
            "budget": self.budget,
            "flip": None,
        }
        if self.flip:
            out["flip"] = {
                "perturbation": self.flip.perturbation,
                "attributes": self.flip.attributes.to_json(),
                "n_errors": self.flip.n_errors,
                "n_samples": self.flip.n_samples,
                "error_rate": f"{self.flip.n_errors}/{self.flip.n_samples}",
            }
        return out


Evaluator = Callable[[AttributeVector, Sequence[int], str], list]


def find_flip(
    subgroup: SubgroupSpec,
    detector_id: str,
    spec: PerturbationSpec,
    flip_threshold: RateLike,
    budget: int,
    *,
    records,
    evaluate: Evaluator,
    tau_high: RateLike = Fraction(9, 10),
) -> FlipSearchResult:
    """First neighbor (order 1, then order 2) of a failing cell whose error
    rate over the subgroup's seeds drops to <= flip_threshold.

    `evaluate(attrs, seeds, detector_id)` must return per-seed outcomes
    (None for skipped ones) and is expected to append every evaluation to
    the results store; SweepRunner.evaluate_vector does exactly that.
    """
    thr = to_fraction(flip_threshold)
    if not (0 <= thr < 1):
        raise ValidationError("flip_threshold", f"{thr} outside [0, 1)")
    if budget < 1:
        raise ValidationError("budget", "must be >= 1")
    if not subgroup.is_cell():
        raise ValidationError(
            "subgroup", "flip search needs a fully-fixed subgroup (a cell)"
        )
    before = aggregate(records, subgroup, detector_id)
    if before.error_rate < to_fraction(tau_high):
        raise ValidationError(
            "subgroup",
            f"error rate {before.error_rate} below tau_high; nothing to flip",
        )
    source = AttributeVector(**subgroup.fixed_map)
    seeds = subgroup.seeds
    evaluated = 0
    for order in (1, 2):
        for cand, perturbation in neighbors_with_perturbations(source, spec, order):
            if evaluated >= budget:
                return FlipSearchResult(
                    subgroup, detector_id, before.n_errors, before.n_samples,
                    None, evaluated, budget,
                )
            outcomes = evaluate(cand, seeds, detector_id)
            evaluated += 1
            ok = [o for o in outcomes if o is not None]
            if not ok:
                continue
            n_errors = sum(1 for o in ok if o.is_error)
            if Fraction(n_errors, len(ok)) <= thr:
                return FlipSearchResult(
                    subgroup, detector_id, before.n_errors, before.n_samples,
                    FlipFound(perturbation, cand, n_errors, len(ok)),
                    evaluated, budget,
                )
    return FlipSearchResult(
        subgroup, detector_id, before.n_errors, before.n_samples, None, evaluated, budget
    )
