"""Canonical JSON file formats for observations and estimation results.

Both documents are serialized with sorted keys, two-space indentation, and
shortest round-trip float formatting, so that identical content always
produces identical bytes and parsing followed by re-serialization is the
identity on files this package wrote.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError
from .estimator import EstimateResult, EstimateStatus
from .model import (
    AggregatePlan,
    ObservationSet,
    TransitionMatrix,
    TransportPlan,
    build_observation_set,
    recover_transition,
)

GENERATOR_VERSION = "0.1.0"


def canonical_dumps(document) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _matrix_to_lists(matrix: np.ndarray) -> list:
    return [[float(x) for x in row] for row in np.asarray(matrix, dtype=float)]


def write_observations(path, obs: ObservationSet, meta: dict | None = None) -> None:
    """Write an observation file: n, the pair list, and optional metadata."""
    document = {
        "n": obs.n,
        "pairs": [
            {
                "mu": [float(x) for x in pair.mu.weights],
                "nu": [float(x) for x in pair.nu.weights],
            }
            for pair in obs.pairs
        ],
    }
    if meta is not None:
        document["meta"] = meta
    with open(path, "w") as handle:
        handle.write(canonical_dumps(document))


def _expect(document: dict, key: str, kinds, where: str):
    if key not in document:
        raise FileFormatError(f"missing field {where}{key}")
    value = document[key]
    if kinds is not None and not isinstance(value, kinds):
        raise FileFormatError(f"field {where}{key} has the wrong type")
    return value


def _number_list(value, where: str) -> list[float]:
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) for x in value):
        raise FileFormatError(f"field {where} must be a list of numbers")
    return [float(x) for x in value]


def read_observations(path, normalize: bool = False) -> tuple[ObservationSet, dict]:
    """Parse and validate an observation file.

    Raises FileFormatError naming the offending field on malformed input.
    """
    try:
        with open(path) as handle:
            document = json.load(handle)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise FileFormatError("top-level document must be an object")
    n = _expect(document, "n", int, "")
    pairs_doc = _expect(document, "pairs", list, "")
    if not pairs_doc:
        raise FileFormatError("field pairs must not be empty")
    raw_pairs = []
    for k, entry in enumerate(pairs_doc):
        if not isinstance(entry, dict):
            raise FileFormatError(f"field pairs[{k}] must be an object")
        mu = _number_list(_expect(entry, "mu", list, f"pairs[{k}]."), f"pairs[{k}].mu")
        nu = _number_list(_expect(entry, "nu", list, f"pairs[{k}]."), f"pairs[{k}].nu")
        if len(mu) != n or len(nu) != n:
            raise FileFormatError(f"field pairs[{k}] vectors must have length n={n}")
        raw_pairs.append((mu, nu))
    meta = document.get("meta", {})
    if not isinstance(meta, dict):
        raise FileFormatError("field meta must be an object")
    try:
        obs = build_observation_set(raw_pairs, normalize=normalize)
    except Exception as exc:
        raise FileFormatError(f"field pairs is invalid: {exc}") from exc
    return obs, meta


def write_result(
    path,
    result: EstimateResult,
    diagnostics: dict | None = None,
    include_plans: bool = False,
) -> None:
    """Write a result file; plans are included only on request."""
    diagnostics = diagnostics or {}
    document = {
        "transition": _matrix_to_lists(result.transition.entries),
        "aggregate": _matrix_to_lists(result.aggregate.entries),
        "objective_history": [float(x) for x in result.objective_history],
        "status": result.status.value,
        "diagnostics": {
            "certified_unique": diagnostics.get("certified_unique"),
            "rank_u": diagnostics.get("rank_u"),
            "rank_v": diagnostics.get("rank_v"),
            "max_dual_constraint": diagnostics.get("max_dual_constraint"),
            "duality_gap": diagnostics.get("duality_gap"),
        },
    }
    if include_plans:
        document["plans"] = [_matrix_to_lists(p.entries) for p in result.plans]
    with open(path, "w") as handle:
        handle.write(canonical_dumps(document))


@dataclass(frozen=True, eq=False)
class ResultDocument:
    """Parsed result file contents."""

    transition: np.ndarray
    aggregate: np.ndarray
    plans: tuple[np.ndarray, ...] | None
    objective_history: tuple[float, ...]
    status: str
    diagnostics: dict


def _square_matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise FileFormatError(f"field {where} must be a non-empty matrix")
    n = len(value)
    rows = []
    for i, row in enumerate(value):
        row = _number_list(row, f"{where}[{i}]")
        if len(row) != n:
            raise FileFormatError(f"field {where} must be square")
        rows.append(row)
    return np.array(rows)


def read_result(path) -> ResultDocument:
    try:
        with open(path) as handle:
            document = json.load(handle)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise FileFormatError("top-level document must be an object")
    transition = _square_matrix(_expect(document, "transition", list, ""), "transition")
    aggregate = _square_matrix(_expect(document, "aggregate", list, ""), "aggregate")
    history = _number_list(
        _expect(document, "objective_history", list, ""), "objective_history"
    )
    status = _expect(document, "status", str, "")
    if status not in (s.value for s in EstimateStatus):
        raise FileFormatError(f"field status has unknown value {status!r}")
    diagnostics = document.get("diagnostics", {})
    if not isinstance(diagnostics, dict):
        raise FileFormatError("field diagnostics must be an object")
    plans = None
    if "plans" in document:
        plans_doc = document["plans"]
        if not isinstance(plans_doc, list):
            raise FileFormatError("field plans must be a list of matrices")
        plans = tuple(
            _square_matrix(p, f"plans[{k}]") for k, p in enumerate(plans_doc)
        )
        for k, p in enumerate(plans):
            if p.shape != aggregate.shape:
                raise FileFormatError(f"field plans[{k}] must match the aggregate shape")
    return ResultDocument(
        transition=transition,
        aggregate=aggregate,
        plans=plans,
        objective_history=tuple(history),
        status=status,
        diagnostics=diagnostics,
    )


def result_from_document(doc: ResultDocument) -> EstimateResult:
    """Rebuild an EstimateResult from a parsed file (plans required)."""
    if doc.plans is None:
        raise FileFormatError("result file lacks plans; re-run estimate with --emit-plans")
    transition, zero_rows = recover_transition(doc.aggregate, on_zero_row="uniform")
    return EstimateResult(
        plans=tuple(TransportPlan(p) for p in doc.plans),
        aggregate=AggregatePlan(doc.aggregate),
        transition=TransitionMatrix(doc.transition),
        objective_history=doc.objective_history,
        outer_iterations=len(doc.objective_history),
        status=EstimateStatus(doc.status),
        zero_row_flags=zero_rows,
    )
