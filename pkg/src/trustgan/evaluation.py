"""Confidence metrics on in-distribution and out-of-distribution sets.

A prediction counts as "confident at C" when its renormalised confidence is
``>= C`` (ties included).  Rates are normalised by the full sample count, so
``tpr_at_confidence(s, 0)`` is the plain accuracy.
"""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, UndefinedMetricError, \
    UnattainableOperatingPointError
from .models import mc_dropout_forward, predict_proba
from .objectives import PROB_FLOOR, confidence_of

log = logging.getLogger(__name__)

METHODS = ("mcp", "mcdropout")
HIST_BINS = 50


@dataclass(frozen=True)
class ScoredSample:
    true_label: int | None
    predicted_label: int
    confidence: float
    tag: str = "ID"

    @property
    def correct(self):
        return self.true_label is not None and self.predicted_label == self.true_label


@dataclass
class MCDropoutParams:
    realizations: int = 10
    rate: float = 0.3
    seed: int = 0


def predict_scores(model, samples, method="mcp", mcd=None):
    if method == "mcp":
        return predict_proba(model, samples)
    if method == "mcdropout":
        mcd = mcd or MCDropoutParams()
        return mc_dropout_forward(model, samples, mcd.realizations, mcd.rate, mcd.seed)
    raise ConfigError(f"unknown scoring method {method!r}; expected one of {METHODS}")


def scored_from_scores(scores, labels=None, tag="ID"):
    conf = confidence_of(scores)
    return [
        ScoredSample(None if labels is None else int(labels[i]), int(conf.class_index[i]),
                     float(conf.confidence[i]), tag)
        for i in range(len(conf))
    ]


def score_dataset(model, dataset, method="mcp", mcd=None, tag=None):
    """One :class:`ScoredSample` per input; labels are carried when present."""
    if tag is None:
        tag = "ID" if dataset.labeled else "OoD"
    scores = predict_scores(model, dataset.samples, method, mcd)
    return scored_from_scores(scores, dataset.labels, tag)


# ----------------------------------------------------------------------
# threshold metrics


def _require(samples, what, labeled=False):
    if not samples:
        raise UndefinedMetricError(f"{what} is undefined on an empty sample set")
    if labeled and any(s.true_label is None for s in samples):
        raise InvalidInputError(f"{what} needs labeled in-distribution samples")


def tpr_at_confidence(id_samples, threshold):
    """Fraction of ID samples that are correct and confident at ``threshold``."""
    _require(id_samples, "TPR", labeled=True)
    hits = sum(1 for s in id_samples if s.correct and s.confidence >= threshold)
    return hits / len(id_samples)


def fpr_id_at_confidence(id_samples, threshold):
    """Fraction of ID samples that are wrong yet confident at ``threshold``."""
    _require(id_samples, "FPR_ID", labeled=True)
    hits = sum(1 for s in id_samples if not s.correct and s.confidence >= threshold)
    return hits / len(id_samples)


def fpr_ood_at_confidence(ood_samples, threshold):
    _require(ood_samples, "FPR_OoD")
    return sum(1 for s in ood_samples if s.confidence >= threshold) / len(ood_samples)


def threshold_at_tpr(id_samples, target_tpr):
    """Largest candidate threshold whose TPR still reaches ``target_tpr``.

    Candidates are 0, 1 and every observed confidence.
    """
    if not 0.0 < target_tpr <= 1.0:
        raise ConfigError(f"target TPR must lie in (0, 1], got {target_tpr}")
    _require(id_samples, "FPR@TPR", labeled=True)
    n = len(id_samples)
    correct = np.sort([s.confidence for s in id_samples if s.correct])
    candidates = np.unique(np.concatenate([[0.0, 1.0], [s.confidence for s in id_samples]]))
    # number of correct samples with confidence >= each candidate
    hits = len(correct) - np.searchsorted(correct, candidates, side="left")
    ok = np.flatnonzero(hits / n >= target_tpr)
    if ok.size:
        return float(candidates[ok[-1]])
    raise UnattainableOperatingPointError(
        f"accuracy {tpr_at_confidence(id_samples, 0.0):.4f} is below the target TPR {target_tpr}")


def fpr_at_tpr(id_samples, target_tpr, other_samples=None):
    """FPR at the operating point fixed by ``target_tpr`` on the ID set.

    Without ``other_samples`` this is the in-distribution FPR; otherwise the
    ID-derived threshold is applied to ``other_samples`` (OoD vs. ID).
    """
    c = threshold_at_tpr(id_samples, target_tpr)
    if other_samples is None:
        return fpr_id_at_confidence(id_samples, c)
    return fpr_ood_at_confidence(other_samples, c)


def histogram(samples, bins=HIST_BINS):
    edges = np.arange(bins + 1) / bins
    counts, _ = np.histogram([s.confidence for s in samples], bins=edges)
    return [int(c) for c in counts]


# ----------------------------------------------------------------------
# reports


def _key(threshold):
    return f"{threshold:.2f}"


@dataclass
class IdBlock:
    accuracy_id: float
    mean_loss_id: float
    tpr_at_conf: dict
    fpr_id_at_conf: dict
    fpr_id_at_tpr: dict
    histogram: list


@dataclass
class OodBlock:
    mean_conf_ood: float
    fpr_ood_at_conf: dict
    fpr_ood_at_tpr: dict
    histogram: list


@dataclass
class MethodBlock:
    id: IdBlock
    ood: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    id_name: str
    conf_thresholds: list
    tpr_targets: list
    methods: dict
    bins: int = HIST_BINS

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        methods = {}
        for name, block in d["methods"].items():
            methods[name] = MethodBlock(
                IdBlock(**block["id"]),
                {k: OodBlock(**v) for k, v in block["ood"].items()})
        return cls(d["id_name"], list(d["conf_thresholds"]), list(d["tpr_targets"]),
                   methods, d.get("bins", HIST_BINS))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def table_rows(self):
        """Flat summary rows, one per (ID-vs-OoD pair, method)."""
        c = _key(self.conf_thresholds[0])
        t = _key(self.tpr_targets[0])
        rows = []
        for method, block in self.methods.items():
            pairs = block.ood.items() if block.ood else [(None, None)]
            for ood_name, ood in pairs:
                rows.append({
                    "pair": self.id_name if ood_name is None else f"{self.id_name}-vs-{ood_name}",
                    "method": method,
                    "accuracy_id": block.id.accuracy_id,
                    "loss_id": block.id.mean_loss_id,
                    f"tpr_id@{c}C": block.id.tpr_at_conf[c],
                    f"fpr_id@{c}C": block.id.fpr_id_at_conf[c],
                    f"fpr_id@{t}TPR": block.id.fpr_id_at_tpr[t],
                    "confidence_ood": None if ood is None else ood.mean_conf_ood,
                    f"fpr_ood@{c}C": None if ood is None else ood.fpr_ood_at_conf[c],
                    f"fpr_ood@{t}TPR": None if ood is None else ood.fpr_ood_at_tpr[t],
                })
        return rows

    def to_csv(self):
        rows = self.table_rows()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})
        return buf.getvalue()

    def histogram_csvs(self):
        """``{(method, dataset): csv_text}`` with columns bin_left, bin_right, count."""
        out = {}
        for method, block in self.methods.items():
            named = [(self.id_name, block.id.histogram)]
            named += [(name, ood.histogram) for name, ood in block.ood.items()]
            for name, counts in named:
                buf = io.StringIO()
                writer = csv.writer(buf, lineterminator="\n")
                writer.writerow(["bin_left", "bin_right", "count"])
                for i, count in enumerate(counts):
                    writer.writerow([repr(i / self.bins), repr((i + 1) / self.bins), count])
                out[(method, name)] = buf.getvalue()
        return out


def _report_fpr_at_tpr(id_samples, target_tpr, other_samples=None):
    """Report cell for an @TPR metric: ``None`` when the operating point is unattainable."""
    try:
        return fpr_at_tpr(id_samples, target_tpr, other_samples)
    except UnattainableOperatingPointError as exc:
        log.warning("@%sTPR metric left empty: %s", target_tpr, exc)
        return None


def _id_block(scores, labels, conf_thresholds, tpr_targets):
    samples = scored_from_scores(scores, labels)
    picked = scores[np.arange(len(labels)), labels]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    return IdBlock(
        accuracy_id=tpr_at_confidence(samples, 0.0),
        mean_loss_id=loss,
        tpr_at_conf={_key(c): tpr_at_confidence(samples, c) for c in conf_thresholds},
        fpr_id_at_conf={_key(c): fpr_id_at_confidence(samples, c) for c in conf_thresholds},
        fpr_id_at_tpr={_key(t): _report_fpr_at_tpr(samples, t) for t in tpr_targets},
        histogram=histogram(samples),
    ), samples


def build_report(model, id_set, ood_sets=(), methods=METHODS, mcd=None,
                 conf_thresholds=(0.90,), tpr_targets=(0.90,)):
    """Full metric battery for each scoring method on ID and every OoD set."""
    if not id_set.labeled:
        raise InvalidInputError("the in-distribution set must be labeled")
    blocks = {}
    for method in methods:
        id_scores = predict_scores(model, id_set.samples, method, mcd)
        id_block, id_samples = _id_block(id_scores, id_set.labels, conf_thresholds, tpr_targets)
        ood_blocks = {}
        for ood in ood_sets:
            ood_samples = scored_from_scores(predict_scores(model, ood.samples, method, mcd),
                                             tag="OoD")
            _require(ood_samples, f"OoD metrics on {ood.name}")
            ood_blocks[ood.name] = OodBlock(
                mean_conf_ood=float(np.mean([s.confidence for s in ood_samples])),
                fpr_ood_at_conf={_key(c): fpr_ood_at_confidence(ood_samples, c)
                                 for c in conf_thresholds},
                fpr_ood_at_tpr={_key(t): _report_fpr_at_tpr(id_samples, t, ood_samples)
                                for t in tpr_targets},
                histogram=histogram(ood_samples),
            )
        blocks[method] = MethodBlock(id_block, ood_blocks)
    return EvalReport(id_set.name, list(conf_thresholds), list(tpr_targets), blocks)
