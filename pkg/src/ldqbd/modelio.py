"""Reading and writing model files.

A model file is a JSON document with the level count, the per-level phase
counts, and either a named ``template`` (expanded through the matching
builder) or explicit ``blocks``; explicit models may add ``partials`` keyed
by parameter name with the same block layout.  All numbers are decimal
doubles.

Example of an explicit two-level model with one parameter::

    {
      "levels": 1,
      "phases": [1, 1],
      "blocks": {"diag": [[[-1.0]], [[-2.0]]],
                 "up":   [[[1.0]]],
                 "down": [[[2.0]]]},
      "partials": {"mu": {"diag": [[[0.0]], [[-1.0]]],
                          "up":   [[[0.0]]],
                          "down": [[[1.0]]]}}
    }
"""

from __future__ import annotations

import json

import numpy as np

from .errors import (
    DimensionMismatchError,
    ModelParseError,
    ModelValidationError,
    QbdError,
)
from .model import (
    BlockSet,
    ParamQbdModel,
    QbdModel,
    build_mmpp_queue,
    build_perturbed,
    build_two_class,
    validate,
)


def _field(doc: dict, name: str, where: str):
    if name not in doc:
        raise ModelParseError(f"missing field {name!r} in {where}")
    return doc[name]


def _matrix_list(raw, count: int, kind: str, where: str) -> list:
    if not isinstance(raw, list) or len(raw) != count:
        raise ModelParseError(
            f"{where}: field {kind!r} must list {count} matrices, got "
            f"{len(raw) if isinstance(raw, list) else type(raw).__name__}"
        )
    out = []
    for idx, rows in enumerate(raw):
        try:
            arr = np.array(rows, dtype=float)
        except (TypeError, ValueError) as err:
            raise ModelParseError(f"{where}: block {kind}[{idx}] is not numeric: {err}")
        if arr.ndim != 2:
            raise ModelParseError(
                f"{where}: block {kind}[{idx}] must be a matrix, got ndim={arr.ndim}"
            )
        out.append(arr)
    return out


def _parse_blockset(doc: dict, phases: list[int], where: str) -> BlockSet:
    n_levels = len(phases)
    diag = _matrix_list(_field(doc, "diag", where), n_levels, "diag", where)
    up = _matrix_list(_field(doc, "up", where), n_levels - 1, "up", where)
    down = _matrix_list(_field(doc, "down", where), n_levels - 1, "down", where)
    for kind, blocks, shapes in (
        ("diag", diag, [(p, p) for p in phases]),
        ("up", up, [(phases[n], phases[n + 1]) for n in range(n_levels - 1)]),
        ("down", down, [(phases[n + 1], phases[n]) for n in range(n_levels - 1)]),
    ):
        for idx, (blk, shape) in enumerate(zip(blocks, shapes)):
            if blk.shape != shape:
                raise ModelParseError(
                    f"{where}: block {kind}[{idx}] has shape {blk.shape}, "
                    f"expected {shape}"
                )
    return BlockSet(tuple(diag), tuple(up), tuple(down))


def _astuple(bs: BlockSet):
    return bs.diag, bs.up, bs.down


def _expand_template(tpl: dict, phases: list[int]):
    name = _field(tpl, "name", "template")
    try:
        if name == "mmpp-queue":
            return build_mmpp_queue(
                _field(tpl, "T", "template"),
                _field(tpl, "lambda", "template"),
                _field(tpl, "mu", "template"),
                int(_field(tpl, "N", "template")),
            )
        if name == "two-class":
            return build_two_class(
                _field(tpl, "lambda1", "template"),
                _field(tpl, "lambda2", "template"),
                _field(tpl, "mu1", "template"),
                _field(tpl, "mu2", "template"),
                int(_field(tpl, "N", "template")),
            )
        if name == "perturbed":
            base_doc = _field(tpl, "base", "template")
            base = QbdModel(
                tuple(phases),
                *_astuple(_parse_blockset(base_doc, phases, "template base")),
            )
            directions = []
            names = []
            for idx, d in enumerate(_field(tpl, "directions", "template")):
                names.append(str(d.get("name", f"eps{idx + 1}")))
                directions.append(_parse_blockset(d, phases, f"direction {idx}"))
            epsilon = _field(tpl, "epsilon", "template")
            return build_perturbed(base, directions, epsilon, names)
    except ModelParseError:
        raise
    except (DimensionMismatchError, ValueError) as err:
        raise ModelParseError(f"template {name!r}: {err}")
    except QbdError as err:
        raise ModelValidationError([f"template {name!r}: {err}"])
    raise ModelParseError(f"unknown template name {name!r}")


def parse_model(doc: dict):
    """Build a model from a decoded document; see the module docstring.

    Returns a plain model, or a parameterized one when the document names
    parameters (templates always do).
    """
    if not isinstance(doc, dict):
        raise ModelParseError(f"model document must be an object, got {type(doc).__name__}")
    levels = int(_field(doc, "levels", "model"))
    phases = [int(p) for p in _field(doc, "phases", "model")]
    if len(phases) != levels + 1:
        raise ModelParseError(
            f"phases lists {len(phases)} levels but levels={levels} implies {levels + 1}"
        )

    if "template" in doc:
        model = _expand_template(doc["template"], phases)
        base = model.base if isinstance(model, ParamQbdModel) else model
        if base.phase_counts != tuple(phases):
            raise ModelParseError(
                f"template expands to phase counts {list(base.phase_counts)}, "
                f"file declares {phases}"
            )
    elif "blocks" in doc:
        blocks = _parse_blockset(doc["blocks"], phases, "blocks")
        try:
            base = QbdModel(tuple(phases), *_astuple(blocks))
        except (DimensionMismatchError, ValueError) as err:
            raise ModelParseError(str(err))
        partials_doc = doc.get("partials", {})
        if partials_doc:
            names = tuple(partials_doc.keys())
            sets = tuple(
                _parse_blockset(partials_doc[name], phases, f"partials[{name}]")
                for name in names
            )
            model = ParamQbdModel(base, names, sets)
        else:
            model = base
    else:
        raise ModelParseError("model needs either a 'template' or explicit 'blocks'")

    base = model.base if isinstance(model, ParamQbdModel) else model
    issues = validate(base)
    if issues:
        raise ModelValidationError(issues)
    return model


def load_model(path):
    """Load and validate a model file.

    Raises
    ------
    ModelParseError
        On malformed JSON or schema violations (named field or block).
    ModelValidationError
        When the decoded generator breaks an invariant; carries the full
        diagnostics list.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ModelParseError(f"{path}: invalid JSON: {err}")
    return parse_model(doc)


def model_to_doc(model) -> dict:
    """Serialize a model to the explicit-blocks document form.

    Numbers pass through Python floats, so a dump/load round trip
    reproduces every entry bit for bit.
    """
    base = model.base if isinstance(model, ParamQbdModel) else model
    doc = {
        "levels": base.top_level,
        "phases": list(base.phase_counts),
        "blocks": {
            "diag": [b.tolist() for b in base.diag],
            "up": [b.tolist() for b in base.up],
            "down": [b.tolist() for b in base.down],
        },
    }
    if isinstance(model, ParamQbdModel):
        doc["partials"] = {
            name: {
                "diag": [b.tolist() for b in bs.diag],
                "up": [b.tolist() for b in bs.up],
                "down": [b.tolist() for b in bs.down],
            }
            for name, bs in zip(model.params, model.partials)
        }
    return doc


def save_model(model, path):
    """Write a model file in the explicit-blocks form."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_doc(model), fh, indent=1)
        fh.write("\n")
