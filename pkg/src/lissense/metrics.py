"""Confusion-matrix bookkeeping with anomalous as the positive class.

Degenerate denominators yield None rather than a silent zero so that sweep
rows expose runs where a class never occurs.
"""

from __future__ import annotations

from dataclasses import dataclass

UNDEFINED = None

CSV_FIELDS = [
    "config_id", "snr_db", "detector",
    "tp", "fp", "tn", "fn",
    "pp", "pn", "rp", "rn", "pf1", "nf1",
]


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts cannot be negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else UNDEFINED


def precision_recall(c: Confusion):
    """(PP, PN, RP, RN); undefined ratios come back as None."""
    if c.total == 0:
        raise ValueError("cannot evaluate metrics on an empty confusion matrix")
    pp = _ratio(c.tp, c.tp + c.fp)
    pn = _ratio(c.tn, c.tn + c.fn)
    rp = _ratio(c.tp, c.tp + c.fn)
    rn = _ratio(c.tn, c.tn + c.fp)
    return pp, pn, rp, rn


def f1_scores(c: Confusion):
    """(positive F1, negative F1): harmonic means, None when degenerate."""
    pp, pn, rp, rn = precision_recall(c)
    pf1 = UNDEFINED
    if pp is not None and rp is not None and pp + rp > 0:
        pf1 = 2.0 * pp * rp / (pp + rp)
    nf1 = UNDEFINED
    if pn is not None and rn is not None and pn + rn > 0:
        nf1 = 2.0 * pn * rn / (pn + rn)
    return pf1, nf1


def metrics_row(config_id: str, snr_db: float, detector: str, c: Confusion) -> dict:
    """One sweep-results row following CSV_FIELDS; undefined metrics are ''."""
    pp, pn, rp, rn = precision_recall(c)
    pf1, nf1 = f1_scores(c)

    def fmt(value):
        return "" if value is None else repr(value)

    return {
        "config_id": config_id,
        "snr_db": repr(float(snr_db)),
        "detector": detector,
        "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
        "pp": fmt(pp), "pn": fmt(pn), "rp": fmt(rp), "rn": fmt(rn),
        "pf1": fmt(pf1), "nf1": fmt(nf1),
    }
