import io
import json
import xml.etree.ElementTree as ET

import pytest

from moto_helmet import (
    Box,
    GTObject,
    MatchResult,
    NoiseConfig,
    ObjectClass,
    PRPoint,
    SweepConfig,
    SweepTable,
    SyntheticBackend,
    class_exact_counts,
    emit_pr_csv,
    emit_pr_svg,
    evaluate_predictions,
    load_table,
    parse_annotations,
    parse_pr_csv,
    parse_predictions,
    replay_load,
    run_sweep,
    save_table,
)
from moto_helmet.sweep import (
    TASK_CASCADE,
    TASK_HELMET,
    TASK_MOTORCYCLE,
    TASK_PERSON,
    _checkpoint_path,
)

from _fixtures import E2E_GT, E2E_REPLAY, build_detection_fixture, e2e_backend, e2e_seats
from _oracles import trapezoid_area


def sweep_cfg(task=TASK_MOTORCYCLE, thresholds=(0.5,), **kw):
    return SweepConfig(task=task, thresholds=tuple(thresholds), **kw)


class TestSweepConfig:
    def test_thresholds_must_increase(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            sweep_cfg(thresholds=(0.5, 0.5))
        with pytest.raises(ValueError, match="strictly increasing"):
            sweep_cfg(thresholds=(0.7, 0.2))

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            sweep_cfg(thresholds=(0.5, 1.2))

    def test_unknown_task(self):
        with pytest.raises(ValueError, match="unknown task"):
            sweep_cfg(task="frisbee-detection")


class TestMotorcycleTask:
    def test_exact_counts_across_thresholds(self):
        gt_text, replay_text = build_detection_fixture(
            gt_scores=[0.9, 0.7, 0.7, 0.3, None], fp_scores=[0.8, 0.2])
        frames = parse_annotations(gt_text)
        cfg = sweep_cfg(thresholds=(0.1, 0.5, 0.75))
        table = run_sweep(cfg, frames, replay_load(replay_text))

        # t=0.1: tp=4 fp=2 fn=1; t=0.5: tp=3 fp=1 fn=2; t=0.75: tp=1 fp=1 fn=4
        assert [(p.precision, p.recall) for p in table.rows] == [
            (4 / 6, 4 / 5), (3 / 4, 3 / 5), (1 / 2, 1 / 5)]
        expected_ap = trapezoid_area([(4 / 5, 4 / 6), (3 / 5, 3 / 4), (1 / 5, 1 / 2)])
        assert table.ap == pytest.approx(expected_ap)

    def test_recall_non_increasing(self):
        gt_text, replay_text = build_detection_fixture(
            gt_scores=[0.95, 0.8, 0.6, 0.45, 0.2, None, 0.7], fp_scores=[0.5, 0.9, 0.1])
        frames = parse_annotations(gt_text)
        cfg = sweep_cfg(thresholds=tuple(i / 10 for i in range(1, 10)))
        table = run_sweep(cfg, frames, replay_load(replay_text))
        recalls = [p.recall for p in table.rows]
        assert all(b <= a for a, b in zip(recalls, recalls[1:]))

    def test_undefined_precision_above_all_scores(self):
        gt_text, replay_text = build_detection_fixture(gt_scores=[0.5], fp_scores=[])
        frames = parse_annotations(gt_text)
        table = run_sweep(sweep_cfg(thresholds=(0.4, 0.9)), frames, replay_load(replay_text))
        assert table.rows[1].precision is None
        assert table.rows[1].recall == 0.0

    def test_synthetic_perfect_detector(self):
        gt_text, _ = build_detection_fixture(gt_scores=[1.0] * 8, fp_scores=[])
        frames = parse_annotations(gt_text)
        backend = SyntheticBackend(frames, NoiseConfig(), input_size=None)
        table = run_sweep(sweep_cfg(thresholds=(0.2, 0.6, 1.0),
                                    cascade=_frame_space_cascade()), frames, backend)
        assert all((p.precision, p.recall) == (1.0, 1.0) for p in table.rows)

    def test_empty_thresholds_empty_table(self, caplog):
        gt_text, replay_text = build_detection_fixture(gt_scores=[0.5], fp_scores=[])
        frames = parse_annotations(gt_text)
        with caplog.at_level("WARNING"):
            table = run_sweep(sweep_cfg(thresholds=()), frames, replay_load(replay_text))
        assert table.rows == ()
        assert table.ap is None
        assert any("no defined" in r.message for r in caplog.records)


def _frame_space_cascade():
    from moto_helmet import CascadeConfig, FRAME_SIZE

    return CascadeConfig(model_input_size=FRAME_SIZE)


class TestPipelineTasks:
    def setup_method(self):
        self.frames = parse_annotations(E2E_GT)

    def test_person_task_counts(self):
        table = run_sweep(
            sweep_cfg(task=TASK_PERSON, thresholds=(0.5,)), self.frames, e2e_backend())
        assert (table.rows[0].precision, table.rows[0].recall) == (1.0, 1.0)

    def test_person_task_no_helmet_queries(self):
        backend = e2e_backend()
        run_sweep(sweep_cfg(task=TASK_PERSON, thresholds=(0.5,)), self.frames, backend)
        assert backend.miss_count == 0

    def test_helmet_task_thresholds(self):
        table = run_sweep(
            sweep_cfg(task=TASK_HELMET, thresholds=(0.1, 0.5)), self.frames, e2e_backend())
        # At 0.1 the 0.2-scored helmet on an unhelmeted rider becomes a fp.
        assert (table.rows[0].precision, table.rows[0].recall) == (0.5, 1.0)
        assert (table.rows[1].precision, table.rows[1].recall) == (1.0, 1.0)

    def test_cascade_full_perfect(self):
        table = run_sweep(
            sweep_cfg(task=TASK_CASCADE, thresholds=(0.5,)),
            self.frames, e2e_backend(), seat_classifier=e2e_seats())
        assert (table.rows[0].precision, table.rows[0].recall) == (1.0, 1.0)

    def test_cascade_full_is_class_exact(self):
        # Same boxes, but ground truth says the first rider is a passenger2;
        # the predicted driver class no longer matches it.
        gt = E2E_GT.replace("001,0,220,200,60,110,2", "001,0,220,200,60,110,6")
        table = run_sweep(
            sweep_cfg(task=TASK_CASCADE, thresholds=(0.5,)),
            parse_annotations(gt), e2e_backend(), seat_classifier=e2e_seats())
        assert table.rows[0].precision == pytest.approx(4 / 5)
        assert table.rows[0].recall == pytest.approx(4 / 5)

    def test_cascade_full_unclassified_riders_excluded(self):
        table = run_sweep(
            sweep_cfg(task=TASK_CASCADE, thresholds=(0.5,)), self.frames, e2e_backend())
        # Only the two motorcycles remain as predictions.
        assert table.rows[0].precision == 1.0
        assert table.rows[0].recall == pytest.approx(2 / 5)


class TestClassExactCounts:
    def test_partitions_by_class(self):
        gts = [GTObject(Box(0, 0, 10, 10), ObjectClass.from_id(2)),
               GTObject(Box(50, 0, 10, 10), ObjectClass.from_id(3))]
        preds = [(Box(0, 0, 10, 10), 3, 0.9), (Box(50, 0, 10, 10), 3, 0.8)]
        r = class_exact_counts(preds, gts)
        assert (r.tp, r.fp, r.fn) == (1, 1, 1)


class TestEvaluatePredictions:
    def test_identity_predictions_score_perfectly(self):
        frames = parse_annotations(E2E_GT)
        pred_text = "".join(
            f"{f.video_id},{f.frame_index},{int(o.box.x)},{int(o.box.y)},"
            f"{int(o.box.w)},{int(o.box.h)},{o.cls.id},0.900000\n"
            for f in frames for o in f.objects
        )
        counts = evaluate_predictions(parse_predictions(pred_text), frames)
        assert (counts.tp, counts.fp, counts.fn) == (5, 0, 0)

    def test_unannotated_frame_is_all_fp(self):
        frames = parse_annotations(E2E_GT)
        counts = evaluate_predictions(
            parse_predictions("zzz,9,0,0,10,10,1,0.500000\n"), frames)
        assert (counts.tp, counts.fp, counts.fn) == (0, 1, 5)

    def test_missing_predictions_are_fn(self):
        frames = parse_annotations(E2E_GT)
        counts = evaluate_predictions({}, frames)
        assert (counts.tp, counts.fp, counts.fn) == (0, 0, 5)


class TestCheckpoints:
    def _fixture(self):
        gt_text, replay_text = build_detection_fixture(
            gt_scores=[0.9, 0.6, None], fp_scores=[0.7])
        return parse_annotations(gt_text), replay_text

    def test_checkpoints_written_and_reused(self, tmp_path):
        frames, replay_text = self._fixture()
        cfg = sweep_cfg(thresholds=(0.5,), out_dir=str(tmp_path))
        first = run_sweep(cfg, frames, replay_load(replay_text))

        path = _checkpoint_path(str(tmp_path), TASK_MOTORCYCLE, 0.5, "v")
        assert path.is_file()
        data = json.loads(path.read_text())
        assert data == {"tp": 2, "fp": 1, "fn": 1}

        # Poison the checkpoint; a rerun must trust it rather than recompute.
        path.write_text('{"tp": 9, "fp": 0, "fn": 0}\n')
        second = run_sweep(cfg, frames, replay_load(replay_text))
        assert second.rows[0].precision == 1.0
        assert first.rows[0].precision == pytest.approx(2 / 3)

    def test_unreadable_checkpoint_recomputed(self, tmp_path, caplog):
        frames, replay_text = self._fixture()
        cfg = sweep_cfg(thresholds=(0.5,), out_dir=str(tmp_path))
        path = _checkpoint_path(str(tmp_path), TASK_MOTORCYCLE, 0.5, "v")
        path.parent.mkdir(parents=True)
        path.write_text("not json")
        with caplog.at_level("WARNING"):
            table = run_sweep(cfg, frames, replay_load(replay_text))
        assert table.rows[0].precision == pytest.approx(2 / 3)

    def test_failure_preserves_finished_videos(self, tmp_path):
        gt_a, replay_a = build_detection_fixture(gt_scores=[0.9], fp_scores=[], video="a")
        gt_b, _ = build_detection_fixture(gt_scores=[0.9], fp_scores=[], video="b")
        frames = parse_annotations(gt_a + gt_b)
        backend = replay_load(replay_a)

        class FailOnB:
            def detect(self, request):
                if request.image_key.startswith("b/"):
                    raise OSError("backend died")
                return backend.detect(request)

        cfg = sweep_cfg(thresholds=(0.5,), out_dir=str(tmp_path))
        with pytest.raises(OSError):
            run_sweep(cfg, frames, FailOnB())
        assert _checkpoint_path(str(tmp_path), TASK_MOTORCYCLE, 0.5, "a").is_file()
        assert not _checkpoint_path(str(tmp_path), TASK_MOTORCYCLE, 0.5, "b").exists()

    def test_jobs_parallel_same_result(self):
        gt_a, replay_a = build_detection_fixture(
            gt_scores=[0.9, 0.4], fp_scores=[0.6], video="a")
        gt_b, replay_b = build_detection_fixture(
            gt_scores=[0.8, None], fp_scores=[], video="b")
        frames = parse_annotations(gt_a + gt_b)
        backend = replay_load(replay_a + replay_b)
        serial = run_sweep(sweep_cfg(thresholds=(0.3, 0.7)), frames, backend)
        parallel = run_sweep(sweep_cfg(thresholds=(0.3, 0.7), jobs=4), frames, backend)
        assert serial.rows == parallel.rows


class TestManifest:
    def test_fields(self):
        gt_text, replay_text = build_detection_fixture(gt_scores=[0.9], fp_scores=[])
        frames = parse_annotations(gt_text)
        cfg = sweep_cfg(thresholds=(0.5,), backend="replay:dets.jsonl")
        table = run_sweep(cfg, frames, replay_load(replay_text))
        m = table.manifest
        assert set(m) == {"task", "thresholds", "iou_threshold", "backend",
                          "input_digest", "started_at"}
        assert m["task"] == TASK_MOTORCYCLE
        assert m["thresholds"] == [0.5]
        assert m["backend"] == "replay:dets.jsonl"
        assert m["input_digest"].startswith("sha256:")

    def test_identical_runs_identical_but_timestamp(self):
        gt_text, replay_text = build_detection_fixture(
            gt_scores=[0.9, 0.3], fp_scores=[0.5])
        frames = parse_annotations(gt_text)
        cfg = sweep_cfg(thresholds=(0.2, 0.6))
        a = run_sweep(cfg, frames, replay_load(replay_text))
        b = run_sweep(cfg, frames, replay_load(replay_text))
        assert a.rows == b.rows
        assert a.ap == b.ap
        ma = dict(a.manifest, started_at=None)
        mb = dict(b.manifest, started_at=None)
        assert ma == mb


SAMPLE_TABLE = SweepTable(
    task=TASK_MOTORCYCLE,
    rows=(PRPoint(0.2, 0.75, 0.9), PRPoint(0.5, None, 0.0), PRPoint(0.8, 1.0, 0.25)),
    ap=0.123456789,
    manifest={"task": TASK_MOTORCYCLE},
)


class TestCsvEmitter:
    def test_exact_bytes(self):
        buf = io.StringIO()
        written = emit_pr_csv(SAMPLE_TABLE, buf)
        expected = (
            "threshold,precision,recall\n"
            "0.2000,0.7500,0.9000\n"
            "0.5000,undefined,0.0000\n"
            "0.8000,1.0000,0.2500\n"
            "# ap=0.123457\n"
        )
        assert buf.getvalue() == expected
        assert written == len(expected)

    def test_single_trivial_row_three_lines(self):
        table = SweepTable(TASK_MOTORCYCLE, (PRPoint(0.5, 1.0, 1.0),), 0.0, {})
        buf = io.StringIO()
        emit_pr_csv(table, buf)
        assert buf.getvalue().splitlines() == [
            "threshold,precision,recall", "0.5000,1.0000,1.0000", "# ap=0.000000"]

    def test_undefined_ap(self):
        table = SweepTable(TASK_MOTORCYCLE, (), None, {})
        buf = io.StringIO()
        emit_pr_csv(table, buf)
        assert buf.getvalue().endswith("# ap=undefined\n")

    def test_deterministic(self):
        a, b = io.StringIO(), io.StringIO()
        emit_pr_csv(SAMPLE_TABLE, a)
        emit_pr_csv(SAMPLE_TABLE, b)
        assert a.getvalue() == b.getvalue()

    def test_parse_round_trip_ap_within_2e4(self):
        gt_text, replay_text = build_detection_fixture(
            gt_scores=[0.9, 0.7, 0.55, 0.3, None, 0.85], fp_scores=[0.65, 0.2, 0.4])
        frames = parse_annotations(gt_text)
        table = run_sweep(sweep_cfg(thresholds=(0.1, 0.35, 0.6, 0.8)),
                          frames, replay_load(replay_text))
        buf = io.StringIO()
        emit_pr_csv(table, buf)
        rows, ap = parse_pr_csv(buf.getvalue())
        recomputed = trapezoid_area([(p.recall, p.precision) for p in rows if p.defined])
        assert recomputed == pytest.approx(table.ap, abs=2e-4)
        assert ap == pytest.approx(table.ap, abs=1e-6)


class TestSvgEmitter:
    def test_valid_xml_with_title_and_markers(self):
        buf = io.StringIO()
        emit_pr_svg(SAMPLE_TABLE, buf)
        root = ET.fromstring(buf.getvalue())
        assert root.tag.endswith("svg")
        ns = {"s": "http://www.w3.org/2000/svg"}
        title = root.find("s:title", ns).text
        assert "AP=0.1235" in title
        circles = root.findall(".//s:circle", ns)
        assert len(circles) == 2  # only the defined points
        polylines = root.findall(".//s:polyline", ns)
        assert len(polylines) == 1

    def test_single_point_no_line(self):
        table = SweepTable(TASK_MOTORCYCLE, (PRPoint(0.5, 1.0, 1.0),), 0.0, {})
        buf = io.StringIO()
        emit_pr_svg(table, buf)
        root = ET.fromstring(buf.getvalue())
        ns = {"s": "http://www.w3.org/2000/svg"}
        assert len(root.findall(".//s:circle", ns)) == 1
        assert root.findall(".//s:polyline", ns) == []

    def test_no_defined_points_rejected(self):
        table = SweepTable(TASK_MOTORCYCLE, (PRPoint(0.5, None, None),), None, {})
        with pytest.raises(ValueError, match="no defined"):
            emit_pr_svg(table, io.StringIO())

    def test_deterministic(self):
        a, b = io.StringIO(), io.StringIO()
        emit_pr_svg(SAMPLE_TABLE, a)
        emit_pr_svg(SAMPLE_TABLE, b)
        assert a.getvalue() == b.getvalue()


class TestTablePersistence:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "table.json"
        save_table(SAMPLE_TABLE, path)
        loaded = load_table(path)
        assert loaded == SAMPLE_TABLE
