"""Noise-sweep report schema with deterministic JSON and TSV output."""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from typing_extensions import Self

from .errors import DataFormatError

logger = logging.getLogger(__name__)

PROTOCOL_NOTE = (
    "Best models are selected by per-epoch accuracy on the test set, reproducing the published "
    "protocol; this is optimistic and not a recommended model-selection practice."
)


class SweepEntry(BaseModel):
    """Accuracy statistics at one noise level."""

    sigma: float = Field(ge=0, description="AWGN standard deviation")
    mean: float = Field(ge=0, le=1, description="Mean accuracy over all runs and noise draws")
    std: float = Field(ge=0, description="Population standard deviation of the accuracies")
    accuracies: List[float] = Field(description="Every individual accuracy, in (repeat, draw) order")

    @field_validator("accuracies")
    @classmethod
    def _check_accuracies(cls, accuracies: List[float]) -> List[float]:
        if not accuracies:
            raise ValueError("a sweep entry needs at least one accuracy")
        if any(not 0.0 <= a <= 1.0 for a in accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        return accuracies

    @classmethod
    def from_accuracies(cls, sigma: float, accuracies: Sequence[float]) -> "SweepEntry":
        values = np.asarray(accuracies, dtype=np.float64)
        return cls(sigma=sigma, mean=float(values.mean()), std=float(values.std()), accuracies=list(map(float, values)))


class ModelRow(BaseModel):
    """Noise curve of one model."""

    model: str = Field(description="Model label, e.g. MDRBM(G)")
    entries: List[SweepEntry] = Field(default_factory=list)
    adr: Optional[float] = Field(None, description="Accuracy-degradation rate in percent")
    best_epochs: List[int] = Field(default_factory=list, description="Selected epoch of every training repeat")

    @model_validator(mode="after")
    def _check_clean_entry(self) -> Self:
        if self.entries and not any(e.sigma == 0.0 for e in self.entries):
            raise ValueError(f"row '{self.model}' has no sigma = 0 entry")
        return self

    def accuracy_map(self) -> Dict[float, float]:
        """Mean accuracy per noise level."""
        return {e.sigma: e.mean for e in self.entries}

    def merged(self, other: "ModelRow") -> "ModelRow":
        """Pool the accuracies of another repeat of the same model."""
        if [e.sigma for e in self.entries] != [e.sigma for e in other.entries]:
            raise ValueError(f"cannot merge rows of '{self.model}' over different noise grids")
        entries = [
            SweepEntry.from_accuracies(a.sigma, a.accuracies + b.accuracies)
            for a, b in zip(self.entries, other.entries)
        ]
        return ModelRow(model=self.model, entries=entries, best_epochs=self.best_epochs + other.best_epochs)


class ReportMetadata(BaseModel):
    config_hash: str
    seed: int
    data_seed: int
    repeats: int
    noise_repeats: int
    dataset: str
    n_train: int
    n_test: int
    s_infer: int
    noise_before_standardize: bool = False
    version: str = ""
    wall_time_seconds: Optional[float] = Field(None, description="Excluded from the content hash")


class NoiseSweepReport(BaseModel):
    """Per-model accuracy against noise level, with the configuration that produced it."""

    metadata: ReportMetadata
    config: Dict[str, Any] = Field(default_factory=dict, description="Full experiment configuration")
    rows: List[ModelRow] = Field(default_factory=list)
    status: Literal["complete", "incomplete"] = "incomplete"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    protocol_note: str = PROTOCOL_NOTE

    def row(self, model: str) -> ModelRow:
        for row in self.rows:
            if row.model == model:
                return row
        raise KeyError(model)

    def to_json(self) -> str:
        """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON with the wall time removed."""
        stable = self.model_copy(update={"metadata": self.metadata.model_copy(update={"wall_time_seconds": None})})
        return hashlib.sha256(stable.to_json().encode("utf-8")).hexdigest()

    def to_tsv(self) -> str:
        """One line per (model, sigma)."""
        lines = ["model\tsigma\tmean_accuracy\tstd_accuracy\tn\tadr"]
        for row in self.rows:
            adr = "" if row.adr is None else repr(row.adr)
            for e in row.entries:
                lines.append(f"{row.model}\t{e.sigma!r}\t{e.mean!r}\t{e.std!r}\t{len(e.accuracies)}\t{adr}")
        return "\n".join(lines) + "\n"

    def write(self, directory: Union[str, Path], stem: str = "report") -> Path:
        """Write ``<stem>.json`` and ``<stem>.tsv``; returns the JSON path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / f"{stem}.json"
        json_path.write_text(self.to_json(), encoding="utf-8")
        (directory / f"{stem}.tsv").write_text(self.to_tsv(), encoding="utf-8")
        logger.info(f"Wrote {self.status} report to {json_path}")
        return json_path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "NoiseSweepReport":
        path = Path(path)
        try:
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise DataFormatError(f"cannot read report {path}: {e}") from e
        except ValidationError as e:
            raise DataFormatError(f"{path} is not a valid noise-sweep report: {e}") from e


def render_table(report: NoiseSweepReport) -> str:
    """Models as rows, noise levels as columns, accuracies in percent, ADR last."""
    sigmas: List[float] = []
    for row in report.rows:
        for e in row.entries:
            if e.sigma not in sigmas:
                sigmas.append(e.sigma)
    sigmas.sort()
    width = max([len("model")] + [len(r.model) for r in report.rows])
    header = "model".ljust(width) + "".join(f"{'s=' + format(s, 'g'):>15}" for s in sigmas) + f"{'ADR':>8}"
    lines = [f"{report.metadata.dataset} ({report.status}, config {report.metadata.config_hash[:12]})", header]
    for row in report.rows:
        by_sigma = {e.sigma: e for e in row.entries}
        cells = []
        for s in sigmas:
            e = by_sigma.get(s)
            cells.append(f"{'-':>15}" if e is None else f"{100 * e.mean:>7.1f} +/-{100 * e.std:>4.1f}")
        adr = "-" if row.adr is None else f"{row.adr:.1f}"
        lines.append(row.model.ljust(width) + "".join(cells) + f"{adr:>8}")
    return "\n".join(lines)
