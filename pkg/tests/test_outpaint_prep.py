"""Outpainting fine-tune data prep: drop rule, masking, manifest, readers."""

import json

import numpy as np
import pytest
from PIL import Image

from scenesweep.corpus import (
    CocoReader,
    CorpusImage,
    InstanceMapReader,
    make_demo_corpus,
    open_corpus,
    polygons_to_mask,
    rle_to_mask,
)
from scenesweep.errors import ConfigError, SkipImage, ValidationError
from scenesweep.outpaint_prep import (
    BDD_RELEVANT,
    COCO_RELEVANT,
    OutpaintSample,
    ReferenceCaptioner,
    RelevantClassFilter,
    TrainConfig,
    build_mask,
    drop_decisions,
    emit_manifest,
    make_sample,
    prepare_dataset,
)

FILTER = RelevantClassFilter(COCO_RELEVANT)


def _rect_mask(shape, y0, y1, x0, x1):
    m = np.zeros(shape, bool)
    m[y0:y1, x0:x1] = True
    return m


class TestDropRule:
    SHAPE = (40, 40)  # area 1600

    def test_single_small_instance_never_dropped(self):
        inst = [("car", _rect_mask(self.SHAPE, 0, 8, 0, 10))]  # 5% cover
        for seed in range(200):
            assert drop_decisions(inst, FILTER, seed) == [False]
            assert np.array_equal(build_mask(inst, FILTER, seed), inst[0][1])

    def test_two_fifteen_percent_instances_drop_freq_half(self):
        # each instance covers 15%; the other's union >= 10% -> both eligible
        a = _rect_mask(self.SHAPE, 0, 12, 0, 20)    # 240 px = 15%
        b = _rect_mask(self.SHAPE, 20, 32, 0, 20)
        inst = [("car", a), ("truck", b)]
        counts = [0, 0]
        trials = 10_000
        for seed in range(trials):
            decisions = drop_decisions(inst, FILTER, seed)
            counts[0] += decisions[0]
            counts[1] += decisions[1]
        for c in counts:
            assert abs(c / trials - 0.5) <= 0.02

    def test_truck_and_traffic_light_eligibility(self):
        truck = _rect_mask(self.SHAPE, 0, 16, 0, 12)        # 192 px = 12%
        light = _rect_mask(self.SHAPE, 30, 34, 30, 34)      # 16 px = 1%
        inst = [("truck", truck), ("traffic light", light)]
        seen_light_drop = False
        for seed in range(500):
            truck_dropped, light_dropped = drop_decisions(inst, FILTER, seed)
            assert not truck_dropped  # others cover 1% < 10%
            seen_light_drop = seen_light_drop or light_dropped
        assert seen_light_drop  # light is eligible (others cover 12%)

    def test_all_dropped_restores_largest(self):
        a = _rect_mask(self.SHAPE, 0, 20, 0, 20)  # larger
        b = _rect_mask(self.SHAPE, 24, 36, 0, 20)
        inst = [("car", a), ("bus", b)]
        for seed in range(2000):
            if drop_decisions(inst, FILTER, seed) == [True, True]:
                mask = build_mask(inst, FILTER, seed)
                assert np.array_equal(mask, a)
                break
        else:
            pytest.fail("never saw the all-dropped case")

    def test_emitted_mask_never_empty(self):
        a = _rect_mask(self.SHAPE, 0, 12, 0, 20)
        b = _rect_mask(self.SHAPE, 20, 32, 0, 20)
        inst = [("car", a), ("bicycle", b)]
        for seed in range(300):
            assert build_mask(inst, FILTER, seed).any()

    def test_irrelevant_classes_skip_image(self):
        inst = [("sofa", _rect_mask(self.SHAPE, 0, 20, 0, 20))]
        with pytest.raises(SkipImage):
            build_mask(inst, FILTER, 0)

    def test_decisions_pure_function_of_seed(self):
        a = _rect_mask(self.SHAPE, 0, 12, 0, 20)
        b = _rect_mask(self.SHAPE, 20, 32, 0, 20)
        inst = [("car", a), ("truck", b)]
        assert drop_decisions(inst, FILTER, 123) == drop_decisions(inst, FILTER, 123)

    def test_class_lists(self):
        assert set(COCO_RELEVANT) == {
            "car", "person", "truck", "bus", "traffic light", "bicycle", "motorcycle"
        }
        assert set(BDD_RELEVANT) == {
            "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle"
        }
        with pytest.raises(ValidationError):
            RelevantClassFilter(())


class TestMakeSample:
    def _corpus_image(self):
        rng = np.random.default_rng(0)
        image = rng.integers(1, 255, (30, 30, 3)).astype(np.uint8)
        inst = (
            ("car", _rect_mask((30, 30), 2, 12, 2, 12)),
            ("truck", _rect_mask((30, 30), 15, 28, 14, 29)),
        )
        return CorpusImage("democorpus", "img1", image, inst)

    def test_masked_input_is_target_times_mask(self):
        ci = self._corpus_image()
        sample = make_sample(ci, FILTER, ReferenceCaptioner(), seed=1)
        expect = ci.image * sample.mask[:, :, None].astype(np.uint8)
        assert np.array_equal(sample.masked_input, expect)
        assert not sample.masked_input[~sample.mask].any()
        assert np.array_equal(sample.masked_input[sample.mask], ci.image[sample.mask])

    def test_reference_caption_template(self):
        ci = self._corpus_image()
        sample = make_sample(ci, FILTER, ReferenceCaptioner(), seed=1)
        assert sample.caption == "a photo of a car and a truck on a street"
        only_car = CorpusImage("c", "i", ci.image, (ci.instances[0],))
        assert (
            make_sample(only_car, FILTER, ReferenceCaptioner(), 0).caption
            == "a photo of a car on a street"
        )

    def test_captioner_failure_skips_with_reason(self):
        class Broken:
            def run(self, image, labels, seed):
                raise RuntimeError("caption model offline")

        with pytest.raises(SkipImage) as exc:
            make_sample(self._corpus_image(), FILTER, Broken(), 0)
        assert "caption model offline" in str(exc.value)

    def test_sample_invariant_enforced(self):
        ci = self._corpus_image()
        good = make_sample(ci, FILTER, ReferenceCaptioner(), 0)
        with pytest.raises(ValidationError):
            OutpaintSample(
                target_image=good.target_image,
                mask=good.mask,
                masked_input=good.target_image,  # not zeroed outside the mask
                caption=good.caption,
                source=good.source,
            )


class TestManifest:
    def _samples(self, n=3):
        rng = np.random.default_rng(5)
        out = []
        for i in range(n):
            image = rng.integers(1, 255, (16, 16, 3)).astype(np.uint8)
            mask = _rect_mask((16, 16), 2, 10, 3, 12)
            out.append(
                OutpaintSample(
                    target_image=image,
                    mask=mask,
                    masked_input=image * mask[:, :, None].astype(np.uint8),
                    caption="a photo of a car on a street",
                    source=("democorpus", f"img{i}"),
                )
            )
        return out

    def test_three_samples_three_lines_nine_images(self, tmp_path):
        manifest = emit_manifest(self._samples(3), tmp_path)
        lines = manifest.read_text().strip().splitlines()
        assert len(lines) == 3
        pngs = list((tmp_path / "images").glob("*.png"))
        assert len(pngs) == 9
        entry = json.loads(lines[0])
        assert set(entry) == {"input_path", "mask_path", "target_path", "caption", "source"}
        for key in ("input_path", "mask_path", "target_path"):
            assert (tmp_path / entry[key]).exists()

    def test_train_config_defaults(self, tmp_path):
        cfg = TrainConfig()
        assert (cfg.training_steps, cfg.lora_rank, cfg.batch_size, cfg.learning_rate) == (
            15000,
            32,
            8,
            1e-4,
        )
        emit_manifest(self._samples(1), tmp_path)
        written = json.loads((tmp_path / "train_config.json").read_text())
        assert written == {
            "training_steps": 15000,
            "lora_rank": 32,
            "batch_size": 8,
            "learning_rate": 1e-4,
        }

    def test_round_trip_files_pixel_exact(self, tmp_path):
        samples = self._samples(1)
        manifest = emit_manifest(samples, tmp_path)
        entry = json.loads(manifest.read_text().splitlines()[0])
        target = np.asarray(Image.open(tmp_path / entry["target_path"]))
        mask = np.asarray(Image.open(tmp_path / entry["mask_path"])) > 0
        masked = np.asarray(Image.open(tmp_path / entry["input_path"]))
        assert np.array_equal(masked, target * mask[:, :, None].astype(np.uint8))

    def test_empty_samples_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_manifest([], tmp_path)

    def test_positive_hyperparameters_enforced(self):
        with pytest.raises(ValidationError):
            TrainConfig(training_steps=0)


class TestCorpusReaders:
    def test_demo_corpus_prepares_deterministically(self, tmp_path):
        make_demo_corpus(tmp_path / "c", n_images=20, seed=0)
        reader = InstanceMapReader(tmp_path / "c", corpus_id="demo")
        images = list(reader)
        assert len(images) == 20
        samples, skipped = prepare_dataset(reader, FILTER, ReferenceCaptioner(), seed=3)
        samples2, _ = prepare_dataset(
            InstanceMapReader(tmp_path / "c", corpus_id="demo"), FILTER, ReferenceCaptioner(), 3
        )
        assert len(samples) + len(skipped) == 20
        assert [s.caption for s in samples] == [s.caption for s in samples2]
        for a, b in zip(samples, samples2):
            assert np.array_equal(a.mask, b.mask)
            assert np.array_equal(a.masked_input, b.masked_input)

    def test_coco_polygon_and_rle(self, tmp_path):
        root = tmp_path / "coco"
        (root / "images").mkdir(parents=True)
        img = np.full((20, 20, 3), 77, np.uint8)
        Image.fromarray(img).save(root / "images" / "a.png")
        # rectangle polygon x:[2,10), y:[3,9) and an RLE column stripe
        rle_mask = np.zeros((20, 20), bool)
        rle_mask[:, 5] = True  # column 5
        counts = [5 * 20, 20, (20 - 6) * 20]  # column-major runs
        ann = {
            "images": [{"id": 1, "file_name": "a.png", "height": 20, "width": 20}],
            "annotations": [
                {"image_id": 1, "category_id": 10, "segmentation": [[2, 3, 10, 3, 10, 9, 2, 9]]},
                {"image_id": 1, "category_id": 11, "segmentation": {"counts": counts, "size": [20, 20]}},
            ],
            "categories": [{"id": 10, "name": "car"}, {"id": 11, "name": "truck"}],
        }
        (root / "instances.json").write_text(json.dumps(ann))
        images = list(CocoReader(root))
        assert len(images) == 1
        inst = dict(images[0].instances)
        poly_expect = np.zeros((20, 20), bool)
        poly_expect[3:9, 2:10] = True
        assert np.array_equal(inst["car"], poly_expect)
        assert np.array_equal(inst["truck"], rle_mask)

    def test_compressed_rle_rejected(self):
        with pytest.raises(ConfigError):
            rle_to_mask({"counts": "compressedsoup", "size": [4, 4]})

    def test_missing_annotations_error_names_path(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            open_corpus(tmp_path / "nowhere", "coco")
        assert "instances.json" in str(exc.value)
        with pytest.raises(ConfigError) as exc2:
            open_corpus(tmp_path / "nowhere", "instmap")
        assert "annotations.json" in str(exc2.value)

    def test_polygon_rasterizer_matches_bruteforce_rectangle(self):
        mask = polygons_to_mask([[1, 1, 6, 1, 6, 5, 1, 5]], 8, 8)
        expect = np.zeros((8, 8), bool)
        expect[1:5, 1:6] = True
        assert np.array_equal(mask, expect)
