"""On-disk formats: JSON manifests plus one CSV file per matrix.

Matrices are written in decimal with 17 significant digits, which
round-trips IEEE-754 doubles exactly — reading a file back yields bitwise
the entries that were written.  Manifests are JSON with sorted keys and a
fixed layout, so identical objects serialize to identical bytes.  Non-finite
values are rejected on both paths.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .analyze import Classification, CriticalPointReport
from .harness import Trajectory, TrajectoryPoint
from .network import ConvexLoss, FactorChain, LogCoshLoss, QuadraticLoss
from .perturb import EscapeCertificate

__all__ = [
    "fmt_float",
    "save_matrix_csv",
    "load_matrix_csv",
    "save_instance",
    "load_instance",
    "load_chain",
    "save_certificate",
    "save_trajectory_csv",
    "load_trajectory_csv",
    "report_to_dict",
    "render_report_text",
    "certificate_to_dict",
]

INSTANCE_FORMAT = "dln-instance/1"
CERTIFICATE_FORMAT = "dln-certificate/1"
TRAJECTORY_HEADER = "step,loss,max_grad,rank_A,rank_B"


def fmt_float(x: float) -> str:
    """Decimal rendering that reconstructs the exact double on parse."""
    return format(float(x), ".17g")


def save_matrix_csv(path, m) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"can only store 2-D matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"refusing to store non-finite entries in {path}")
    lines = [",".join(fmt_float(v) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matrix_csv(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError(f"{path} holds no matrix rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path} has ragged rows")
    m = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{path} contains non-finite entries")
    return m


def _write_manifest(directory: Path, manifest: dict) -> None:
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _read_manifest(directory: Path) -> dict:
    path = directory / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json under {directory}")
    return json.loads(path.read_text(encoding="utf-8"))


def _factor_files(chain: FactorChain) -> list[str]:
    return [f"M{i}.csv" for i in range(1, chain.k + 1)]


def save_instance(
    directory,
    chain: FactorChain,
    loss: ConvexLoss,
    provenance: dict | None = None,
) -> Path:
    """Write chain + loss data + manifest into ``directory`` (created)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = _factor_files(chain)
    for name, m in zip(files, chain.factors):
        save_matrix_csv(directory / name, m)
    if isinstance(loss, QuadraticLoss):
        save_matrix_csv(directory / "X.csv", loss.inputs)
        save_matrix_csv(directory / "Y.csv", loss.targets)
        loss_block = {
            "kind": "quadratic",
            "files": {"inputs": "X.csv", "targets": "Y.csv"},
        }
    elif isinstance(loss, LogCoshLoss):
        save_matrix_csv(directory / "T.csv", loss.target)
        loss_block = {"kind": "logcosh", "files": {"target": "T.csv"}}
    else:
        raise ValueError(
            f"cannot serialize loss of type {type(loss).__name__}; only the "
            "built-in quadratic and logcosh losses have a file format"
        )
    manifest = {
        "format": INSTANCE_FORMAT,
        "k": chain.k,
        "dims": list(chain.dims.widths),
        "factors": files,
        "loss": loss_block,
    }
    if provenance:
        manifest["provenance"] = provenance
    _write_manifest(directory, manifest)
    return directory


def load_chain(directory) -> FactorChain:
    """Read just the factor chain from any manifest that lists factors."""
    directory = Path(directory)
    manifest = _read_manifest(directory)
    factors = [load_matrix_csv(directory / name) for name in manifest["factors"]]
    chain = FactorChain(tuple(factors))
    if list(chain.dims.widths) != list(manifest["dims"]):
        raise ValueError(
            f"manifest dims {manifest['dims']} disagree with stored factors "
            f"{list(chain.dims.widths)}"
        )
    return chain


def load_instance(directory) -> tuple[FactorChain, ConvexLoss, dict]:
    """Read chain, loss, and the raw manifest back from ``directory``."""
    directory = Path(directory)
    manifest = _read_manifest(directory)
    if manifest.get("format") != INSTANCE_FORMAT:
        raise ValueError(
            f"{directory} holds {manifest.get('format')!r}, not an instance"
        )
    chain = load_chain(directory)
    loss_block = manifest["loss"]
    kind = loss_block["kind"]
    if kind == "quadratic":
        loss: ConvexLoss = QuadraticLoss(
            load_matrix_csv(directory / loss_block["files"]["inputs"]),
            load_matrix_csv(directory / loss_block["files"]["targets"]),
        )
    elif kind == "logcosh":
        loss = LogCoshLoss(load_matrix_csv(directory / loss_block["files"]["target"]))
    else:
        raise ValueError(f"unknown loss kind {kind!r} in {directory}")
    return chain, loss, manifest


def certificate_to_dict(cert: EscapeCertificate) -> dict:
    """Metadata block of a certificate (everything except the matrices)."""
    return {
        "side": cert.side,
        "i_star": cert.containment_start,
        "witness_row": cert.witness_row,
        "delta": fmt_float(cert.delta),
        "super_gradient_norm": fmt_float(cert.super_gradient_norm),
        "loss_delta": fmt_float(cert.loss_delta),
        "original_loss": fmt_float(cert.original_loss),
    }


def save_certificate(directory, cert: EscapeCertificate) -> Path:
    """Write the perturbed chain plus the certificate metadata block."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    chain = cert.perturbed_chain
    files = _factor_files(chain)
    for name, m in zip(files, chain.factors):
        save_matrix_csv(directory / name, m)
    manifest = {
        "format": CERTIFICATE_FORMAT,
        "k": chain.k,
        "dims": list(chain.dims.widths),
        "factors": files,
        "metadata": certificate_to_dict(cert),
    }
    _write_manifest(directory, manifest)
    return directory


def save_trajectory_csv(path, trajectory: Trajectory) -> None:
    lines = [TRAJECTORY_HEADER]
    for p in trajectory.points:
        lines.append(
            f"{p.step},{fmt_float(p.loss)},{fmt_float(p.max_grad)},"
            f"{p.rank_above},{p.rank_below}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trajectory_csv(path) -> list[TrajectoryPoint]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != TRAJECTORY_HEADER:
        raise ValueError(f"{path} does not start with {TRAJECTORY_HEADER!r}")
    points = []
    for line in lines[1:]:
        step, loss, max_grad, ra, rb = line.split(",")
        points.append(
            TrajectoryPoint(int(step), float(loss), float(max_grad), int(ra), int(rb))
        )
    return points


def report_to_dict(report: CriticalPointReport) -> dict:
    """JSON-ready view of a report (floats as exact decimal strings)."""
    out: dict = {
        "label": report.label.value,
        "loss": fmt_float(report.loss),
        "convex_gradient_norm": fmt_float(report.convex_gradient_norm),
        "layer_gradient_norms": [fmt_float(g) for g in report.layer_gradient_norms],
        "split_index": report.split_index,
        "rank_above": report.rank_above,
        "rank_below": report.rank_below,
        "super_gradient_above_norm": (
            None
            if report.super_gradient_above_norm is None
            else fmt_float(report.super_gradient_above_norm)
        ),
        "super_gradient_below_norm": (
            None
            if report.super_gradient_below_norm is None
            else fmt_float(report.super_gradient_below_norm)
        ),
        "oracle_gap": None if report.oracle_gap is None else fmt_float(report.oracle_gap),
        "diagnostic": report.diagnostic,
        "has_reduction": report.reduction is not None,
    }
    out["escape"] = (
        None if report.escape is None else certificate_to_dict(report.escape)
    )
    return out


def render_report_text(report: CriticalPointReport) -> str:
    """Deterministic plain-text rendering (key: value per line)."""
    d = report_to_dict(report)
    lines = []
    for key in (
        "label",
        "loss",
        "convex_gradient_norm",
        "layer_gradient_norms",
        "split_index",
        "rank_above",
        "rank_below",
        "super_gradient_above_norm",
        "super_gradient_below_norm",
        "oracle_gap",
        "has_reduction",
        "diagnostic",
    ):
        value = d[key]
        if key == "layer_gradient_norms":
            value = ",".join(value)
        lines.append(f"{key}: {'none' if value is None else value}")
    if d["escape"] is None:
        lines.append("escape: none")
    else:
        for key, value in d["escape"].items():
            lines.append(f"escape.{key}: {value}")
    return "\n".join(lines) + "\n"


def _label_from_value(value: str) -> Classification:
    return Classification(value)
