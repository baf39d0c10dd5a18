"""Grid expansion, the sweep engine and exact subgroup aggregation."""

from fractions import Fraction
from pathlib import Path

import pytest

from scenesweep.analysis import (
    aggregate,
    average_error_rate,
    build_universe,
    cell_subgroup,
    detector_specific,
    format_percent,
    marginalize,
    rank_subgroups,
)
from scenesweep.detectors import FailingDetector, ScriptedDetector
from scenesweep.errors import ConfigError, EmptySubgroup
from scenesweep.model import (
    ORIGINAL,
    AttributeVector,
    EvalOutcome,
    PlainColor,
    SubgroupSpec,
)
from scenesweep.pipeline import PipelineConfig
from scenesweep.store import CellResult, ResultsStore
from scenesweep.sweep import GridSpec, SweepRunner, expand_grid

FAST = PipelineConfig(canvas=(128, 128), glyph_canvas=(48, 36), upscale_factor=2)


def small_grid(**overrides):
    base = dict(
        object_types=("sports car",),
        object_colors=(ORIGINAL,),
        orientations_deg=(0.0,),
        scale_factors=(1.0, 4.0),
        locations=((0.5, 0.5),),
        backgrounds=(PlainColor("grey"), PlainColor("blue"), PlainColor("red")),
        seeds=(0, 1, 2, 3),
        detectors=("d1", "d2", "d3"),
    )
    base.update(overrides)
    return GridSpec(**base)


def _vec(**overrides):
    base = dict(
        object_type="sports car",
        object_color=ORIGINAL,
        orientation_deg=0.0,
        scale_factor=1.0,
        location=(0.5, 0.5),
        background=PlainColor("grey"),
    )
    base.update(overrides)
    return AttributeVector(**base)


def _record(attrs, seed, det, outcome):
    return CellResult(attrs, seed, det, outcome).to_json()


class TestExpandGrid:
    def test_product_count(self):
        grid = small_grid(
            object_colors=("red", "blue"),
            orientations_deg=(0.0, 10.0, 20.0),
            scale_factors=(1.0,),
            backgrounds=(PlainColor("grey"),),
        )
        cells = expand_grid(grid)
        assert len(cells) == 6

    def test_declaration_order(self):
        grid = small_grid(
            object_colors=("red", "blue"),
            orientations_deg=(0.0, 10.0),
            scale_factors=(1.0,),
            backgrounds=(PlainColor("grey"),),
        )
        cells = expand_grid(grid)
        got = [(c.object_color, c.orientation_deg) for c in cells]
        assert got == [("red", 0.0), ("red", 10.0), ("blue", 0.0), ("blue", 10.0)]

    def test_deterministic(self):
        grid = small_grid()
        assert expand_grid(grid) == expand_grid(grid)

    def test_paper_scale_grid(self):
        grid = small_grid(
            backgrounds=tuple(PlainColor(c) for c in (
                "grey", "white", "black", "blue", "red", "green",
                "yellow", "orange", "purple", "brown", "pink",
            )),
            scale_factors=(1.0,),
            seeds=tuple(range(16)),
        )
        assert grid.n_cells == 11
        assert len(expand_grid(grid)) == 11
        assert len(grid.seeds) == 16

    def test_empty_list_rejected(self):
        with pytest.raises(ConfigError):
            small_grid(backgrounds=())


class TestRunSweep:
    def _detectors(self):
        return {
            "d1": ScriptedDetector(
                "d1", rules=[{"when": {"scale_factor": {"gte": 4}}, "wrong_label": "airplane"}]
            ),
            "d2": ScriptedDetector("d2"),
            "d3": ScriptedDetector("d3"),
        }

    def test_record_count_formula(self, tmp_path):
        grid = small_grid()
        store = ResultsStore(tmp_path / "r.jsonl")
        runner = SweepRunner(self._detectors(), store, pipeline_cfg=FAST)
        totals = runner.run(grid)
        assert totals["cells"] == 6
        assert len(store) == 6 * 4 * 3
        assert totals["evaluated"] == 72 and totals["skipped"] == 0

    def test_resume_no_duplicates_and_identical_outcome(self, tmp_path):
        grid = small_grid()
        full_store = ResultsStore(tmp_path / "full.jsonl")
        SweepRunner(self._detectors(), full_store, pipeline_cfg=FAST).run(grid)
        lines = (tmp_path / "full.jsonl").read_text().splitlines()
        # simulate an interrupted sweep: keep the first 20 records only
        (tmp_path / "part.jsonl").write_text("\n".join(lines[:20]) + "\n")
        part_store = ResultsStore(tmp_path / "part.jsonl")
        totals = SweepRunner(self._detectors(), part_store, pipeline_cfg=FAST).run(grid)
        assert totals["reused"] == 20
        keys = [(r["attr_key"], r["seed"], r["detector_id"]) for r in part_store]
        assert len(keys) == len(set(keys)) == 72
        full_keys = {(r["attr_key"], r["seed"], r["detector_id"]) for r in full_store}
        assert set(keys) == full_keys
        # outcomes agree record by record
        by_key_full = {(r["attr_key"], r["seed"], r["detector_id"]): r["outcome"] for r in full_store}
        for r in part_store:
            assert r["outcome"] == by_key_full[(r["attr_key"], r["seed"], r["detector_id"])]

    def test_failing_detector_isolated(self, tmp_path):
        detectors = self._detectors()
        detectors["d3"] = FailingDetector("d3")
        grid = small_grid()
        store = ResultsStore(tmp_path / "r.jsonl")
        SweepRunner(detectors, store, pipeline_cfg=FAST).run(grid)
        records = store.records()
        d3 = [r for r in records if r["detector_id"] == "d3"]
        rest = [r for r in records if r["detector_id"] != "d3"]
        assert all(r["status"] == "skipped" and "d3" in r["reason"] for r in d3)
        assert all(r["status"] == "ok" for r in rest)
        assert len(d3) == 24

    def test_scene_persistence_and_reuse(self, tmp_path):
        grid = small_grid(seeds=(0,), detectors=("d2",), scale_factors=(1.0,))
        store = ResultsStore(tmp_path / "r.jsonl")
        runner = SweepRunner(
            {"d2": ScriptedDetector("d2")},
            store,
            pipeline_cfg=FAST,
            scene_dir=tmp_path / "scenes",
            save_scenes=True,
        )
        runner.run(grid)
        paths = [r["scene_path"] for r in store]
        assert all(p and Path(p).exists() for p in paths)

    def test_scene_rendered_once_per_cell_and_seed(self, tmp_path):
        grid = small_grid(seeds=(0, 1))
        store = ResultsStore(tmp_path / "r.jsonl")
        runner = SweepRunner(self._detectors(), store, pipeline_cfg=FAST)
        renders = []
        original = runner._render

        def counting_render(attrs, seed):
            renders.append((attrs.key(), seed))
            return original(attrs, seed)

        runner._render = counting_render
        runner.run(grid)
        # one render per (cell, seed), shared by all three detectors
        assert len(renders) == 6 * 2
        assert len(set(renders)) == len(renders)
        assert len(store) == 6 * 2 * 3

    def test_workers_match_serial(self, tmp_path):
        grid = small_grid(seeds=(0, 1))
        serial = ResultsStore(tmp_path / "serial.jsonl")
        SweepRunner(self._detectors(), serial, pipeline_cfg=FAST).run(grid)
        threaded = ResultsStore(tmp_path / "threaded.jsonl")
        SweepRunner(self._detectors(), threaded, pipeline_cfg=FAST, workers=4).run(grid)
        canon = lambda store: sorted(
            (r["attr_key"], r["seed"], r["detector_id"], str(r["outcome"])) for r in store
        )
        assert canon(serial) == canon(threaded)

    def test_detector_max_in_flight_respected(self, tmp_path):
        import threading
        import time

        class CountingDetector(ScriptedDetector):
            def __init__(self):
                super().__init__("counted")
                self.max_in_flight = 1
                self._lock = threading.Lock()
                self.active = 0
                self.peak = 0

            def detect(self, scene):
                with self._lock:
                    self.active += 1
                    self.peak = max(self.peak, self.active)
                time.sleep(0.002)
                with self._lock:
                    self.active -= 1
                return super().detect(scene)

        det = CountingDetector()
        grid = small_grid(detectors=("counted",), seeds=(0, 1))
        store = ResultsStore(tmp_path / "r.jsonl")
        SweepRunner({"counted": det}, store, pipeline_cfg=FAST, workers=4).run(grid)
        assert det.peak == 1

    def test_single_flight_backend_serializes_renders(self, tmp_path):
        import threading
        import time

        from scenesweep.pipeline import default_adapters
        from scenesweep.stages import StageAdapter, StageKind, register_backend
        from scenesweep.stages import ReferenceUpscaler

        state = {"active": 0, "peak": 0, "lock": threading.Lock()}

        @register_backend(StageKind.UPSCALE, "fragile-test")
        class FragileUpscaler(ReferenceUpscaler):
            single_flight = True

            def run(self, asset, factor, seed):
                with state["lock"]:
                    state["active"] += 1
                    state["peak"] = max(state["peak"], state["active"])
                time.sleep(0.002)
                out = super().run(asset, factor, seed)
                with state["lock"]:
                    state["active"] -= 1
                return out

        adapters = default_adapters()
        adapters[StageKind.UPSCALE] = StageAdapter.of(StageKind.UPSCALE, "fragile-test")
        grid = small_grid(detectors=("d2",), seeds=(0, 1))
        store = ResultsStore(tmp_path / "r.jsonl")
        SweepRunner(
            {"d2": ScriptedDetector("d2")},
            store,
            adapters=adapters,
            pipeline_cfg=FAST,
            workers=4,
        ).run(grid)
        assert state["peak"] == 1
        assert len(store) == 12

    def test_unregistered_detector_rejected(self, tmp_path):
        store = ResultsStore(tmp_path / "r.jsonl")
        with pytest.raises(ConfigError):
            SweepRunner({"d1": ScriptedDetector("d1")}, store, pipeline_cfg=FAST).run(small_grid())


class TestAggregate:
    def _records(self):
        # bg in {red, blue}; d1 errs 15/16 on red, 2/16 on blue
        records = []
        for i, bg in enumerate(("red", "blue")):
            attrs = _vec(background=PlainColor(bg))
            n_err = 15 if bg == "red" else 2
            for seed in range(16):
                out = EvalOutcome.wrong_class("truck") if seed < n_err else EvalOutcome.correct()
                records.append(_record(attrs, seed, "d1", out))
        return records

    def test_counts_and_display(self):
        records = self._records()
        red = SubgroupSpec.of({"background": PlainColor("red")}, range(16))
        res = aggregate(records, red, "d1")
        assert (res.n_samples, res.n_errors) == (16, 15)
        assert res.error_rate == Fraction(15, 16)
        assert format_percent(res.error_rate) == "94%"
        blue = SubgroupSpec.of({"background": PlainColor("blue")}, range(16))
        assert format_percent(aggregate(records, blue, "d1").error_rate) == "13%"

    def test_marginalized_rate_is_weighted_mean(self):
        records = self._records()
        marg = SubgroupSpec.of(
            {"object_type": "sports car"}, range(16), marginalized={"background"}
        )
        res = aggregate(records, marg, "d1")
        assert res.error_rate == Fraction(15 + 2, 32)
        # count-weighted mean of the two fixed-color subgroups, recomputed
        red = aggregate(records, SubgroupSpec.of({"background": PlainColor("red")}, range(16)), "d1")
        blue = aggregate(records, SubgroupSpec.of({"background": PlainColor("blue")}, range(16)), "d1")
        weighted = Fraction(
            red.n_errors + blue.n_errors, red.n_samples + blue.n_samples
        )
        assert res.error_rate == weighted

    def test_association_of_partial_counts(self):
        records = self._records()
        sub = SubgroupSpec.of({"background": PlainColor("red")}, range(16))
        # merge per-seed counts, then compute
        per_seed = []
        for seed in range(16):
            one = SubgroupSpec.of({"background": PlainColor("red")}, [seed])
            r = aggregate(records, one, "d1")
            per_seed.append((r.n_errors, r.n_samples))
        merged = Fraction(sum(e for e, _ in per_seed), sum(n for _, n in per_seed))
        assert merged == aggregate(records, sub, "d1").error_rate

    def test_top_wrong_class_modal(self):
        attrs = _vec()
        records = []
        labels = ["truck"] * 5 + ["boat"] * 3 + [None] * 2  # None -> false negative
        for seed, label in enumerate(labels):
            out = EvalOutcome.wrong_class(label) if label else EvalOutcome.false_negative()
            records.append(_record(attrs, seed, "d1", out))
        res = aggregate(records, cell_subgroup(attrs, range(10)), "d1")
        assert res.top_wrong_class == ("truck", 5)
        assert res.n_errors == 10

    def test_top_wrong_class_absent_for_fn_only(self):
        attrs = _vec()
        records = [
            _record(attrs, s, "d1", EvalOutcome.false_negative()) for s in range(4)
        ]
        res = aggregate(records, cell_subgroup(attrs, range(4)), "d1")
        assert res.top_wrong_class is None and res.n_errors == 4

    def test_empty_subgroup(self):
        records = self._records()
        ghost = SubgroupSpec.of({"background": PlainColor("green")}, range(16))
        with pytest.raises(EmptySubgroup):
            aggregate(records, ghost, "d1")

    def test_skipped_records_excluded(self):
        attrs = _vec()
        records = [_record(attrs, 0, "d1", EvalOutcome.correct())]
        records.append(
            CellResult(attrs, 1, "d1", None, status="skipped", reason="x").to_json()
        )
        res = aggregate(records, cell_subgroup(attrs, range(2)), "d1")
        assert res.n_samples == 1


class TestRankingAndFlags:
    def _records(self):
        records = []
        rates = {"red": 16, "blue": 16, "green": 4, "grey": 0}
        for bg, n_err in rates.items():
            attrs = _vec(background=PlainColor(bg))
            for seed in range(16):
                out = EvalOutcome.wrong_class("boat") if seed < n_err else EvalOutcome.correct()
                records.append(_record(attrs, seed, "d1", out))
                records.append(_record(attrs, seed, "d2", EvalOutcome.correct()))
        return records

    def _candidates(self):
        cells = [
            cell_subgroup(_vec(background=PlainColor(bg)), range(16))
            for bg in ("red", "blue", "green", "grey")
        ]
        return cells

    def test_dominant_subgroup_ranks_first(self):
        ranked = rank_subgroups(self._records(), self._candidates(), 4, "d1")
        assert ranked[0].error_rate == Fraction(1)
        assert ranked[-1].error_rate == Fraction(0)

    def test_tie_break_larger_n(self):
        records = self._records()
        cells = self._candidates()
        # red cell (n=16, 100%) vs red+blue under background marginalization
        # (n=32, also 100% once green/grey records are excluded)
        red = cells[0]
        merged = marginalize(red, "background")
        red_blue_only = [
            r
            for r in records
            if r["attributes"]["background"]["color"] in ("red", "blue")
        ]
        ranked = rank_subgroups(red_blue_only, [red, merged], 2, "d1")
        assert ranked[0].n_samples == 32 and ranked[0].error_rate == Fraction(1)
        assert ranked[1].n_samples == 16

    def test_rank_matches_bruteforce_argmax(self):
        records = self._records()
        cands = self._candidates()
        ranked = rank_subgroups(records, cands, 1, "d1")
        best = max(
            (aggregate(records, c, "d1") for c in cands),
            key=lambda r: (r.error_rate, r.n_samples),
        )
        assert ranked[0].error_rate == best.error_rate
        assert ranked[0].n_samples == best.n_samples

    def test_detector_specific_examples(self):
        # target 100%, others {13%, 0%} -> specific
        records = []
        attrs = _vec()
        for seed in range(16):
            records.append(_record(attrs, seed, "t", EvalOutcome.wrong_class("kite")))
            records.append(
                _record(attrs, seed, "o1", EvalOutcome.wrong_class("kite") if seed < 2 else EvalOutcome.correct())
            )
            records.append(_record(attrs, seed, "o2", EvalOutcome.correct()))
        sub = cell_subgroup(attrs, range(16))
        assert detector_specific(records, sub, "t", ["o1", "o2"], 0.9, 0.5) is True
        # one other at 94% -> not specific
        records94 = []
        for seed in range(16):
            records94.append(_record(attrs, seed, "t", EvalOutcome.wrong_class("kite")))
            records94.append(
                _record(attrs, seed, "o1", EvalOutcome.wrong_class("kite") if seed < 15 else EvalOutcome.correct())
            )
        assert detector_specific(records94, sub, "t", ["o1"], 0.9, 0.5) is False
        # everyone at 0% -> not specific
        clean = [
            _record(attrs, seed, d, EvalOutcome.correct())
            for seed in range(16)
            for d in ("t", "o1")
        ]
        assert detector_specific(clean, sub, "t", ["o1"], 0.9, 0.5) is False

    def test_average_error_rate(self):
        records = self._records()
        cells = self._candidates()
        # d1 over {100%, 100%, 25%, 0%}
        avg = average_error_rate(records, "d1", cells)
        assert avg == (Fraction(1) + 1 + Fraction(4, 16) + 0) / 4
        # all-correct detector
        assert average_error_rate(records, "d2", cells) == Fraction(0)

    def test_average_unweighted_mean_documented_divergence(self):
        # scripted rates {98%, 70%, 94%, 100%, 100%} -> 92.4% unweighted
        rates = [Fraction(98, 100), Fraction(70, 100), Fraction(94, 100), Fraction(1), Fraction(1)]
        mean = sum(rates, Fraction(0)) / len(rates)
        assert mean == Fraction(924, 1000)
        assert format_percent(mean) == "92%"


class TestPercentFormatting:
    @pytest.mark.parametrize(
        "num,den,text",
        [
            (15, 16, "94%"),
            (2, 16, "13%"),
            (4, 16, "25%"),
            (1, 2, "50%"),
            (0, 16, "0%"),
            (16, 16, "100%"),
            (1, 8, "13%"),   # 12.5 rounds away from zero
            (1, 40, "3%"),   # 2.5 rounds away from zero
        ],
    )
    def test_round_half_away_from_zero(self, num, den, text):
        assert format_percent(Fraction(num, den)) == text


class TestUniverse:
    def test_cells_plus_margin1(self):
        grid = small_grid()
        universe = build_universe(grid, "cells+margin1")
        # 6 cells + marginalizations over the two multi-valued attributes:
        # scale (3 bg groups) + background (2 scale groups)
        assert len(universe) == 6 + 3 + 2
        keys = [s.canonical_key() for s in universe]
        assert len(keys) == len(set(keys))

    def test_cells_only(self):
        grid = small_grid()
        assert len(build_universe(grid, "cells")) == 6

    def test_deeper_marginalization(self):
        grid = small_grid()
        universe = build_universe(grid, "cells+margin2")
        # margin1 (3 + 2) plus one scale+background double marginalization
        assert len(universe) == 6 + 5 + 1
        deepest = [s for s in universe if len(s.marginalized) == 2]
        assert len(deepest) == 1
        assert deepest[0].marginalized == {"scale_factor", "background"}

    def test_singleton_attributes_not_marginalized(self):
        grid = small_grid()
        universe = build_universe(grid, "cells+margin1")
        for sub in universe:
            assert not (sub.marginalized & {"object_type", "object_color", "location"})
