"""Command-line front-end.

Subcommands: ``stationary``, ``passage``, ``transient``, ``sensitivity``,
``truncate``, and ``verify``.  Every command loads a JSON model file,
dispatches to the solver layer, and writes CSV (header always present,
``%.12g`` numbers) to ``--out`` or standard output.

Exit codes: 0 success, 1 validation failure, 2 numerical failure,
3 I/O or parse failure.  ``QBD_THREADS`` caps the worker threads used to
fan out independent time points.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import (
    InvalidPerturbationError,
    InvalidRateError,
    InvalidSubgeneratorError,
    InversionError,
    ModelParseError,
    ModelValidationError,
    NoConvergenceError,
    SingularMatrixError,
    SingularSystemError,
)
from .model import (
    ParamQbdModel,
    QbdModel,
    assemble_full_generator,
    build_mmpp_queue,
    build_two_class,
)
from .modelio import load_model
from .oracle import absorbing_passage, direct_stationary, uniformization
from .passage import TabooSet, passage_moment1, passage_sensitivity, passage_transform
from .stationary import (
    find_truncation_level,
    stationary_distribution,
    stationary_sensitivity,
)
from .transient import (
    InversionConfig,
    TransientQuery,
    transient_distribution,
    transient_sensitivity,
    transient_transform,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fmt(x) -> str:
    return "%.12g" % x


def _csv_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise _UsageError(f"{flag} expects comma-separated numbers, got {text!r}")


def _parse_taboo(text: str, top_level: int) -> TabooSet:
    if text == "all":
        return TabooSet.full(top_level)
    try:
        lo, hi = text.split(":")
        return TabooSet.span(int(lo), int(hi))
    except ValueError:
        raise _UsageError(f"--taboo expects 'all' or 'a:b', got {text!r}")


def _thread_count() -> int:
    env = os.environ.get("QBD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _fan_out(fn, items):
    """Apply ``fn`` over items on worker threads, keeping input order."""
    items = list(items)
    workers = min(_thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _emit(header: list[str], rows, out_path):
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _require_params(model) -> ParamQbdModel:
    if not isinstance(model, ParamQbdModel):
        raise ModelValidationError(
            ["model declares no parameters; sensitivity needs 'partials' or a template"]
        )
    return model


def _select_params(model: ParamQbdModel, choice: str) -> list[str]:
    if choice == "all":
        return list(model.params)
    if choice not in model.params:
        raise ModelValidationError(
            [f"unknown parameter {choice!r}; model has {list(model.params)}"]
        )
    return [choice]


def _base(model) -> QbdModel:
    return model.base if isinstance(model, ParamQbdModel) else model


def _inversion_config(args) -> InversionConfig:
    return InversionConfig(
        discount=args.inv_A, terms=args.inv_terms, euler_terms=args.inv_euler
    )


def _alpha_query(base: QbdModel, args, times) -> TransientQuery:
    n0 = args.n0
    if args.alpha is None:
        alpha = np.zeros(base.phase_counts[n0])
        alpha[0] = 1.0
    else:
        alpha = np.array(_csv_floats(args.alpha, "--alpha"))
    return TransientQuery(n0, alpha, tuple(times))


def _cmd_stationary(args) -> int:
    model = _base(load_model(args.model))
    pi = stationary_distribution(model)
    rows = []
    for n, seg in enumerate(pi.segments):
        for i, v in enumerate(seg):
            rows.append([str(n), str(i), _fmt(v)])
    _emit(["level", "phase", "pi"], rows, args.out)
    return EXIT_OK


def _cmd_passage(args) -> int:
    model = _base(load_model(args.model))
    taboo = _parse_taboo(args.taboo, model.top_level)
    if args.moment == 1:
        mat = passage_moment1(model, args.from_level, args.to_level, taboo)
        rows = [
            [str(i), str(j), _fmt(mat[i, j])]
            for i in range(mat.shape[0])
            for j in range(mat.shape[1])
        ]
        _emit(["from_phase", "to_phase", "value"], rows, args.out)
        return EXIT_OK
    s_values = _csv_floats(args.s, "--s")
    rows = []
    for s in s_values:
        res = passage_transform(model, args.from_level, args.to_level, taboo, s)
        for i in range(res.matrix.shape[0]):
            for j in range(res.matrix.shape[1]):
                rows.append([_fmt(s), str(i), str(j), _fmt(res.matrix[i, j].real)])
    _emit(["s", "from_phase", "to_phase", "value"], rows, args.out)
    return EXIT_OK


def _cmd_transient(args) -> int:
    model = _base(load_model(args.model))
    times = _csv_floats(args.t, "--t")
    config = _inversion_config(args)
    query = _alpha_query(model, args, times)

    def solve_one(t):
        one = TransientQuery(query.n0, query.alpha, (t,))
        return transient_distribution(model, one, config)[0]

    dists = _fan_out(solve_one, times)
    rows = []
    for t, dist in zip(times, dists):
        for n, seg in enumerate(dist.segments):
            for i, v in enumerate(seg):
                rows.append([_fmt(t), str(n), str(i), _fmt(v)])
    _emit(["t", "level", "phase", "prob"], rows, args.out)
    return EXIT_OK


def _cmd_sensitivity(args) -> int:
    model = _require_params(load_model(args.model))
    names = _select_params(model, args.param)
    if args.quantity == "stationary":
        bundle = stationary_sensitivity(model)
        rows = []
        for name in names:
            grad = bundle.partial(name)
            for n, seg in enumerate(grad.segments):
                for i, v in enumerate(seg):
                    rows.append([name, str(n), str(i), _fmt(v)])
        _emit(["param", "level", "phase", "dpi"], rows, args.out)
        return EXIT_OK

    if args.quantity == "passage":
        taboo = _parse_taboo(args.taboo, model.top_level)
        if args.moment == 1:
            bundle = passage_sensitivity(
                model, args.from_level, args.to_level, taboo, 0.0, moment=1
            )
            rows = []
            for name in names:
                mat = bundle.partial(name)
                for i in range(mat.shape[0]):
                    for j in range(mat.shape[1]):
                        rows.append([name, str(i), str(j), _fmt(mat[i, j])])
            _emit(["param", "from_phase", "to_phase", "value"], rows, args.out)
            return EXIT_OK
        rows = []
        for s in _csv_floats(args.s, "--s"):
            bundle = passage_sensitivity(
                model, args.from_level, args.to_level, taboo, s, moment=0
            )
            for name in names:
                mat = bundle.partial(name)
                for i in range(mat.shape[0]):
                    for j in range(mat.shape[1]):
                        rows.append(
                            [name, _fmt(s), str(i), str(j), _fmt(mat[i, j].real)]
                        )
        _emit(["param", "s", "from_phase", "to_phase", "value"], rows, args.out)
        return EXIT_OK

    # quantity == "transient"
    times = _csv_floats(args.t, "--t")
    config = _inversion_config(args)
    query = _alpha_query(model.base, args, times)

    def solve_one(t):
        one = TransientQuery(query.n0, query.alpha, (t,))
        return transient_sensitivity(model, one, config)[0]

    bundles = _fan_out(solve_one, times)
    rows = []
    for t, bundle in zip(times, bundles):
        for name in names:
            grad = bundle.partial(name)
            for n, seg in enumerate(grad.segments):
                for i, v in enumerate(seg):
                    rows.append([name, _fmt(t), str(n), str(i), _fmt(v)])
    _emit(["param", "t", "level", "phase", "dprob"], rows, args.out)
    return EXIT_OK


def _replicated_family(base: QbdModel):
    """Re-bound explicit blocks at any level.

    Above the original top, new interior levels copy the blocks of level
    ``N - 1`` and the boundary block moves to the new top (needs matching
    phase counts on the two topmost levels).  Below it, the model is cut and
    the lost up-rates fold back into the new boundary diagonal.
    """
    n_top = base.top_level
    if base.phase_counts[n_top] != base.phase_counts[n_top - 1]:
        raise ModelValidationError(
            ["cannot extend explicit blocks: the two topmost levels differ in phases"]
        )

    def family(level: int) -> QbdModel:
        if level < 1:
            raise ValueError(f"family needs level >= 1, got {level}")
        if level == n_top:
            return base
        if level < n_top:
            boundary = base.diag[level] + np.diag(base.up[level].sum(axis=1))
            return QbdModel(
                base.phase_counts[: level + 1],
                base.diag[:level] + (boundary,),
                base.up[:level],
                base.down[:level],
            )
        extra = level - n_top
        counts = base.phase_counts[:-1] + (base.phase_counts[-1],) * (extra + 1)
        diag = base.diag[:-1] + (base.diag[n_top - 1],) * extra + (base.diag[n_top],)
        up = base.up + (base.up[n_top - 1],) * extra
        down = base.down + (base.down[n_top - 1],) * extra
        return QbdModel(counts, diag, up, down)

    return family


def _truncation_family(model_path: str, model):
    """Level-indexed family for the truncation search.

    Template models rebuild through their builder at each bound; explicit
    models extend by replicating their last interior level.
    """
    with open(model_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    tpl = doc.get("template") or {}
    name = tpl.get("name")
    if name == "mmpp-queue":
        return lambda level: build_mmpp_queue(
            tpl["T"], tpl["lambda"], tpl["mu"], level
        ).base
    if name == "two-class":
        return lambda level: build_two_class(
            tpl["lambda1"], tpl["lambda2"], tpl["mu1"], tpl["mu2"], level
        ).base
    return _replicated_family(_base(model))


def _cmd_truncate(args) -> int:
    model = load_model(args.model)
    family = _truncation_family(args.model, model)
    probes = None
    if args.probes is not None:
        probes = [int(v) for v in _csv_floats(args.probes, "--probes")]
    result = find_truncation_level(family, args.eps, probes, args.lmax)
    _emit(["L", "gap"], [[str(result.level), _fmt(result.gap)]], args.out)
    return EXIT_OK


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(b))), 1e-10)
    return float(np.max(np.abs(a - b))) / scale


def _verify_checks(model) -> list[tuple[str, float, float]]:
    """All oracle cross-checks for one model: (name, discrepancy, tolerance)."""
    base = _base(model)
    q = assemble_full_generator(base)
    top = base.top_level
    checks = []

    pi = stationary_distribution(base)
    checks.append(
        ("stationary-vs-dense", float(np.max(np.abs(pi.flatten() - direct_stationary(q)))), 1e-9)
    )
    checks.append(
        ("stationary-balance", float(np.max(np.abs(pi.flatten() @ q))), 1e-10)
    )

    taboos = [TabooSet.full(top), TabooSet.span((top + 1) // 2, top), TabooSet.of([top])]
    worst_t = worst_m = 0.0
    for taboo in taboos:
        for frm, to in ((top, 0), (0, top)):
            for s in (0.0, 0.5, 2.0):
                got = passage_transform(base, frm, to, taboo, s).matrix
                ref = absorbing_passage(base, frm, to, taboo, s, moment=0)
                worst_t = max(worst_t, float(np.max(np.abs(got - ref))))
            got = passage_moment1(base, frm, to, taboo)
            ref = absorbing_passage(base, frm, to, taboo, moment=1)
            worst_m = max(worst_m, float(np.max(np.abs(got - ref))))
    checks.append(("passage-vs-dense", worst_t, 1e-9))
    checks.append(("moment-vs-dense", worst_m, 1e-9))

    alpha = np.zeros(base.phase_counts[0])
    alpha[0] = 1.0
    worst = 0.0
    for s in (0.3, 1.0, 5.0):
        ft = transient_transform(base, TransientQuery(0, alpha, (1.0,)), s)
        worst = max(worst, abs(s * ft.total() - 1.0))
    checks.append(("transform-normalization", float(worst), 1e-10))

    times = (0.1, 1.0, 5.0)
    dists = transient_distribution(base, TransientQuery(0, alpha, times))
    p0 = np.zeros(base.num_states)
    p0[0] = 1.0
    worst = max(
        float(np.max(np.abs(dist.flatten() - uniformization(q, p0, t))))
        for t, dist in zip(times, dists)
    )
    checks.append(("transient-vs-uniformization", worst, 1e-6))

    if isinstance(model, ParamQbdModel):
        h = 1e-5
        sens = stationary_sensitivity(model)
        worst = mass = 0.0
        for i, name in enumerate(model.params):
            hi = stationary_distribution(model.shifted(name, h)).flatten()
            lo = stationary_distribution(model.shifted(name, -h)).flatten()
            grad = sens.partials[i].flatten()
            worst = max(worst, _rel_err(grad, (hi - lo) / (2 * h)))
            mass = max(mass, abs(grad.sum()))
        checks.append(("stationary-gradient-fd", worst, 1e-4))
        checks.append(("stationary-gradient-mass", mass, 1e-10))

        taboo = TabooSet.full(top)
        bundle = passage_sensitivity(model, top, 0, taboo, 1.0)
        moment = passage_sensitivity(model, top, 0, taboo, 0.0, moment=1)
        worst_g = worst_e = 0.0
        for i, name in enumerate(model.params):
            hi_m = model.shifted(name, h)
            lo_m = model.shifted(name, -h)
            fd_g = (
                passage_transform(hi_m, top, 0, taboo, 1.0).matrix
                - passage_transform(lo_m, top, 0, taboo, 1.0).matrix
            ) / (2 * h)
            fd_e = (
                passage_moment1(hi_m, top, 0, taboo)
                - passage_moment1(lo_m, top, 0, taboo)
            ) / (2 * h)
            worst_g = max(worst_g, _rel_err(bundle.partials[i], fd_g))
            worst_e = max(worst_e, _rel_err(moment.partials[i], fd_e))
        checks.append(("passage-gradient-fd", worst_g, 1e-4))
        checks.append(("moment-gradient-fd", worst_e, 1e-4))

        query = TransientQuery(0, alpha, (1.0,))
        tsens = transient_sensitivity(model, query)[0]
        worst = mass = 0.0
        for i, name in enumerate(model.params):
            hi = transient_distribution(model.shifted(name, h), query)[0].flatten()
            lo = transient_distribution(model.shifted(name, -h), query)[0].flatten()
            grad = tsens.partials[i].flatten()
            worst = max(worst, _rel_err(grad, (hi - lo) / (2 * h)))
            mass = max(mass, abs(grad.sum()))
        checks.append(("transient-gradient-fd", worst, 1e-4))
        checks.append(("transient-gradient-mass", mass, 1e-6))

    return checks


def _cmd_verify(args) -> int:
    model = load_model(args.model)
    checks = _verify_checks(model)
    rows = []
    all_ok = True
    for name, value, tol in checks:
        ok = value < tol
        all_ok = all_ok and ok
        rows.append([name, _fmt(value), _fmt(tol), "pass" if ok else "FAIL"])
    _emit(["check", "max_error", "tolerance", "status"], rows, args.out)
    if not all_ok:
        print("verification failed; see report above", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="ldqbd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="model file (JSON)")
        p.add_argument("--out", default=None, help="output CSV path (default stdout)")
        p.add_argument("--format", default="csv", choices=["csv"])

    def inversion_flags(p):
        p.add_argument("--inv-A", type=float, default=18.4, dest="inv_A")
        p.add_argument("--inv-terms", type=int, default=15, dest="inv_terms")
        p.add_argument("--inv-euler", type=int, default=11, dest="inv_euler")

    p = sub.add_parser("stationary", help="long-run distribution")
    common(p)
    p.set_defaults(fn=_cmd_stationary)

    p = sub.add_parser("passage", help="first-passage transforms and moments")
    common(p)
    p.add_argument("--from", dest="from_level", type=int, required=True)
    p.add_argument("--to", dest="to_level", type=int, required=True)
    p.add_argument("--taboo", default="all", help="'all' or inclusive range 'a:b'")
    p.add_argument("--s", default="0", help="comma-separated transform points")
    p.add_argument("--moment", type=int, default=0, choices=[0, 1])
    p.set_defaults(fn=_cmd_passage)

    p = sub.add_parser("transient", help="distribution at given times")
    common(p)
    p.add_argument("--t", required=True, help="comma-separated times")
    p.add_argument("--n0", type=int, default=0, help="initial level")
    p.add_argument("--alpha", default=None, help="initial phase distribution")
    inversion_flags(p)
    p.set_defaults(fn=_cmd_transient)

    p = sub.add_parser("sensitivity", help="parameter derivatives of a quantity")
    common(p)
    p.add_argument(
        "--quantity", required=True, choices=["stationary", "passage", "transient"]
    )
    p.add_argument("--param", default="all", help="parameter name or 'all'")
    p.add_argument("--from", dest="from_level", type=int, default=None)
    p.add_argument("--to", dest="to_level", type=int, default=None)
    p.add_argument("--taboo", default="all")
    p.add_argument("--s", default="0")
    p.add_argument("--moment", type=int, default=0, choices=[0, 1])
    p.add_argument("--t", default=None)
    p.add_argument("--n0", type=int, default=0)
    p.add_argument("--alpha", default=None)
    inversion_flags(p)
    p.set_defaults(fn=_cmd_sensitivity)

    p = sub.add_parser("truncate", help="smallest stable truncation level")
    common(p)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--lmax", type=int, default=100)
    p.add_argument("--probes", default=None, help="comma-separated probe levels")
    p.set_defaults(fn=_cmd_truncate)

    p = sub.add_parser("verify", help="cross-check solvers against dense references")
    common(p)
    p.set_defaults(fn=_cmd_verify)

    return parser


def _check_option_combos(args):
    if getattr(args, "fn", None) is _cmd_sensitivity:
        if args.quantity == "passage" and (
            args.from_level is None or args.to_level is None
        ):
            raise _UsageError("sensitivity --quantity passage needs --from and --to")
        if args.quantity == "transient" and args.t is None:
            raise _UsageError("sensitivity --quantity transient needs --t")


def run(argv) -> int:
    """Execute one command line; returns the process exit code."""
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        _check_option_combos(args)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    try:
        return args.fn(args)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (
        ModelValidationError,
        InvalidRateError,
        InvalidSubgeneratorError,
        InvalidPerturbationError,
        ValueError,
    ) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (
        SingularMatrixError,
        NoConvergenceError,
        SingularSystemError,
        InversionError,
    ) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelParseError, OSError, json.JSONDecodeError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
