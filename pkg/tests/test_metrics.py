import pytest
from hypothesis import given
from hypothesis import strategies as st

from lissense.metrics import Confusion, f1_scores, metrics_row, precision_recall

counts = st.integers(min_value=0, max_value=500)


class TestPrecisionRecall:
    def test_perfect_classifier(self):
        c = Confusion(tp=10, fp=0, tn=10, fn=0)
        assert precision_recall(c) == (1.0, 1.0, 1.0, 1.0)
        assert f1_scores(c) == (1.0, 1.0)

    def test_coin_flip(self):
        c = Confusion(tp=5, fp=5, tn=5, fn=5)
        assert precision_recall(c) == (0.5, 0.5, 0.5, 0.5)

    def test_worked_example(self):
        c = Confusion(tp=8, fp=2, fn=4, tn=6)
        pp, pn, rp, rn = precision_recall(c)
        assert pp == pytest.approx(0.8)
        assert rp == pytest.approx(8 / 12)
        pf1, _ = f1_scores(c)
        assert pf1 == pytest.approx(2 * 0.8 * (8 / 12) / (0.8 + 8 / 12))
        assert pf1 == pytest.approx(0.72727272, rel=1e-6)

    def test_undefined_is_none_not_zero(self):
        c = Confusion(tp=0, fp=0, tn=5, fn=3)
        pp, pn, rp, rn = precision_recall(c)
        assert pp is None        # no positive predictions at all
        assert pn is not None

    def test_degenerate_f1_is_none(self):
        # positives exist but are never found: PP undefined, RP = 0
        c = Confusion(tp=0, fp=0, tn=5, fn=5)
        pf1, nf1 = f1_scores(c)
        assert pf1 is None
        # all-positive degenerate case: PP = RP = 0 leaves 0/0
        c = Confusion(tp=0, fp=5, tn=0, fn=5)
        assert f1_scores(c)[0] is None

    def test_empty_confusion_rejected(self):
        with pytest.raises(ValueError):
            precision_recall(Confusion())

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            Confusion(tp=-1)


class TestProperties:
    @given(tp=counts, fp=counts, tn=counts, fn=counts)
    def test_defined_metrics_stay_in_unit_interval(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        c = Confusion(tp=tp, fp=fp, tn=tn, fn=fn)
        values = [v for v in precision_recall(c) + f1_scores(c) if v is not None]
        assert all(0.0 <= v <= 1.0 for v in values)

    @given(tp=counts, fp=counts, tn=counts, fn=counts)
    def test_f1_bounded_by_max_component(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        c = Confusion(tp=tp, fp=fp, tn=tn, fn=fn)
        pp, _, rp, _ = precision_recall(c)
        pf1, _ = f1_scores(c)
        if pf1 is not None:
            assert pf1 <= max(pp, rp) + 1e-12

    @given(tp=counts, fp=counts, tn=counts, fn=counts)
    def test_swapping_classes_swaps_metric_families(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        c = Confusion(tp=tp, fp=fp, tn=tn, fn=fn)
        swapped = Confusion(tp=tn, fp=fn, tn=tp, fn=fp)
        pp, pn, rp, rn = precision_recall(c)
        pp2, pn2, rp2, rn2 = precision_recall(swapped)
        assert (pp, rp) == (pn2, rn2)
        assert (pn, rn) == (pp2, rp2)
        assert f1_scores(c) == tuple(reversed(f1_scores(swapped)))


class TestCsvRow:
    def test_row_fields_and_sentinel(self):
        row = metrics_row("cfg", 5.0, "glrt", Confusion(tp=1, fp=0, tn=2, fn=1))
        assert row["config_id"] == "cfg"
        assert row["detector"] == "glrt"
        assert row["pp"] == "1.0"
        row2 = metrics_row("cfg", 5.0, "raw", Confusion(tp=0, fp=0, tn=2, fn=1))
        assert row2["pp"] == ""  # undefined stays visibly empty

    def test_addition(self):
        total = Confusion(tp=1, fp=2, tn=3, fn=4) + Confusion(tp=10, fp=0, tn=0, fn=0)
        assert (total.tp, total.fp, total.tn, total.fn) == (11, 2, 3, 4)
