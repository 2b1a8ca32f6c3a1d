"""Metric arithmetic tests, pinned to the defining formulas."""

import numpy as np
import pytest

from rcfd.metrics import (
    DEFAULT_TH,
    ConfusionCounts,
    MetricsReport,
    accuracy,
    avg_f,
    confusion,
    f_measure,
    precision,
    read_summary,
    recall,
    success_rate,
    write_summary,
)


class TestConfusion:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(1)
        truth = (rng.random((10, 12)) < 0.3).astype(np.uint8)
        c = confusion(truth, truth)
        assert c.fp == 0 and c.fn == 0
        assert c.tp == int(truth.sum())
        assert c.total == truth.size

    def test_complement_prediction(self):
        rng = np.random.default_rng(2)
        truth = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        c = confusion(1 - truth, truth)
        assert c.tp == 0 and c.tn == 0

    def test_constructed_fixture(self):
        # 48x64 grid, 300 forged units; prediction hits 250, misses 50,
        # adds 40 false alarms
        truth = np.zeros((48, 64), dtype=np.uint8)
        forged = [(r, c) for r in range(48) for c in range(64)][:300]
        for r, c in forged:
            truth[r, c] = 1
        pred = truth.copy()
        for r, c in forged[250:]:
            pred[r, c] = 0
        authentic = [(r, c) for r in range(48) for c in range(64) if truth[r, c] == 0]
        for r, c in authentic[:40]:
            pred[r, c] = 1
        c = confusion(pred, truth)
        # verified by an independent per-unit loop
        tp = tn = fp = fn = 0
        for r in range(48):
            for col in range(64):
                if truth[r, col] and pred[r, col]:
                    tp += 1
                elif truth[r, col] and not pred[r, col]:
                    fn += 1
                elif not truth[r, col] and pred[r, col]:
                    fp += 1
                else:
                    tn += 1
        assert (c.tp, c.fn, c.fp, c.tn) == (tp, fn, fp, tn) == (250, 50, 40, 2732)

    def test_transposition_invariance(self):
        rng = np.random.default_rng(3)
        truth = (rng.random((6, 10)) < 0.4).astype(np.uint8)
        pred = (rng.random((6, 10)) < 0.4).astype(np.uint8)
        a = confusion(pred, truth)
        b = confusion(pred.T, truth.T)
        assert (a.tp, a.tn, a.fp, a.fn) == (b.tp, b.tn, b.fp, b.fn)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 3)), np.zeros((3, 2)))


class TestAccuracy:
    def test_worked_example(self):
        assert accuracy(ConfusionCounts(50, 30, 10, 10)) == pytest.approx(0.8)

    def test_extremes(self):
        assert accuracy(ConfusionCounts(5, 5, 0, 0)) == 1.0
        assert accuracy(ConfusionCounts(0, 0, 5, 5)) == 0.0

    def test_empty_error(self):
        with pytest.raises(ValueError):
            accuracy(ConfusionCounts(0, 0, 0, 0))


class TestFMeasure:
    def test_worked_example(self):
        c = ConfusionCounts(50, 30, 10, 10)
        assert precision(c) == pytest.approx(5 / 6)
        assert recall(c) == pytest.approx(5 / 6)
        assert f_measure(c) == pytest.approx(5 / 6, abs=1e-12)

    def test_degenerate_zero(self):
        assert f_measure(ConfusionCounts(0, 10, 3, 4)) == 0.0
        assert f_measure(ConfusionCounts(0, 10, 0, 0)) == 0.0

    def test_perfect(self):
        assert f_measure(ConfusionCounts(10, 10, 0, 0)) == 1.0

    def test_harmonic_mean_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            c = ConfusionCounts(*(int(v) for v in rng.integers(1, 100, size=4)))
            p, r, f = precision(c), recall(c), f_measure(c)
            assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12
            assert 0.0 <= f <= 1.0


class TestSuccessRate:
    def test_worked_example(self):
        assert success_rate([0.7, 0.5, 0.9], 2 / 3) == pytest.approx(2 / 3, abs=1e-12)

    def test_all_above(self):
        assert success_rate([0.9, 0.8, 0.7], 2 / 3) == 1.0

    def test_all_below(self):
        assert success_rate([0.1, 0.2], 2 / 3) == 0.0

    def test_threshold_is_inclusive(self):
        assert success_rate([2 / 3], 2 / 3) == 1.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(5)
        values = list(rng.random(30))
        rates = [success_rate(values, t) for t in np.linspace(0, 1, 21)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_default_threshold(self):
        assert DEFAULT_TH == pytest.approx(2 / 3, abs=1e-15)
        assert MetricsReport().t_h == pytest.approx(2 / 3, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            success_rate([], 0.5)
        with pytest.raises(ValueError):
            success_rate([0.5], 1.5)


class TestAvgF:
    def test_mean(self):
        assert avg_f([1.0, 0.0]) == 0.5
        assert avg_f([0.25] * 7) == pytest.approx(0.25)

    def test_twenty_values_hand_sum(self):
        rng = np.random.default_rng(6)
        values = list(rng.random(20))
        total = 0.0
        for v in values:
            total += v
        assert avg_f(values) == pytest.approx(total / 20, abs=1e-12)

    def test_empty_error(self):
        with pytest.raises(ValueError):
            avg_f([])


class TestReport:
    def test_report_files(self, tmp_path):
        report = MetricsReport()
        report.add("img0", ConfusionCounts(50, 30, 10, 10))
        report.add("img1", ConfusionCounts(10, 80, 0, 0))
        tsv = tmp_path / "report.tsv"
        report.write_tsv(tsv)
        lines = tsv.read_text().splitlines()
        assert lines[0] == "image\taccuracy\tprecision\trecall\tf_measure"
        assert len(lines) == 6  # header + 2 images + 3 summary rows
        assert lines[-1].startswith("t_h\t0.6667")

        summary_path = tmp_path / "summary.txt"
        write_summary(summary_path, report.summary())
        parsed = read_summary(summary_path)
        assert float(parsed["avg_f"]) == pytest.approx(report.avg_f)
        assert float(parsed["success_rate"]) == pytest.approx(report.success_rate)
