"""Command-line front end: scenario loading, option validation, orchestration.

    blab <action> --config <file|preset> [--out DIR] [--seed N] [--k-max N] [--trials N] [--depth N]

Exit status is 0 when every certification passed, 2 when a certification
failed and 1 on input errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .blender_verifier import BlenderError, default_orientation, verify_blender
from .covering_engine import CoveringError, build_covering_set, search_km, verify_covering
from .cycle_analysis import (
    SWEEP_COLUMNS, PreconditionError, compute_moduli, cycle_type, focus_sequences, regime_report,
    secondary_cycle_mu, sweep_mu, theta_prime_estimate,
)
from .cycle_model import CycleParams, MultiplierCase, validate_nondegeneracy
from .reports import (
    EXIT_INPUT_ERROR, STATUS_CERT_FAILED, STATUS_ERROR, STATUS_OK, ActionResult, combined_exit_code, csv_table,
    emit_report,
)

ACTIONS = ("classify", "covering", "verify-blender", "sweep-mu", "search", "report-all")
# execution order; sweep-mu and search do not depend on the others
PIPELINE = ("classify", "covering", "verify-blender", "sweep-mu", "search")
PRESET_DIR = Path(__file__).resolve().parent / "presets"


class ConfigError(ValueError):
    """Unreadable or invalid scenario input."""


# ---------------------------------------------------------------------------
# options


def _int(lo: int | None = None) -> Callable[[str, Any], int]:
    def check(name: str, v: Any) -> int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"option {name!r} must be an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(f"option {name!r} must be >= {lo}, got {v}")
        return v
    return check


def _float(lo: float | None = None, hi: float | None = None, open_lo: bool = True) -> Callable[[str, Any], float]:
    def check(name: str, v: Any) -> float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"option {name!r} must be a finite number, got {v!r}")
        v = float(v)
        if lo is not None and (v <= lo if open_lo else v < lo):
            raise ConfigError(f"option {name!r} must be {'>' if open_lo else '>='} {lo}, got {v}")
        if hi is not None and not v < hi:
            raise ConfigError(f"option {name!r} must be < {hi}, got {v}")
        return v
    return check


def _mu_range(name: str, v: Any) -> list[float]:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ConfigError(f"option {name!r} must be a pair [lo, hi]")
    lo, hi = (_any_float(name, x) for x in v)
    if not lo < hi:
        raise ConfigError(f"option {name!r} needs lo < hi, got [{lo}, {hi}]")
    return [lo, hi]


def _any_float(name: str, v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"option {name!r} must hold finite numbers, got {v!r}")
    return float(v)


def _optional(check: Callable[[str, Any], Any]) -> Callable[[str, Any], Any]:
    return lambda name, v: None if v is None else check(name, v)


OPTION_SPECS: dict[str, tuple[Any, Callable[[str, Any], Any]]] = {
    "seed": (0, _int(0)),
    "k_max": (None, _optional(_int(1))),
    "N": (10, _int(0)),
    "trials": (100, _int(1)),
    "depth": (30, _int(0)),
    "tol": (1e-10, _float(0.0)),
    "literal_checks": (0, _int(0)),
    "mu_range": ([-0.05, 0.05], _mu_range),
    "resolution": (401, _int(2)),
    "kappa": (0.1, _float(0.0, 1.0, open_lo=False)),
    "max_den": (10**6, _int(1)),
    "search_tol": (0.05, _float(0.0)),
    "m_star": (10, _int(1)),
    "bound": (10_000, _int(1)),
    "focus_tol": (0.05, _float(0.0)),
}
SEARCH_K_MAX = 1000


def validate_options(raw: Mapping[str, Any]) -> dict[str, Any]:
    unknown = sorted(set(raw) - set(OPTION_SPECS))
    if unknown:
        raise ConfigError(f"unknown option(s) {unknown}; expected a subset of {sorted(OPTION_SPECS)}")
    out = {}
    for name, (default, check) in OPTION_SPECS.items():
        out[name] = check(name, raw[name]) if name in raw else default
    return out


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    params: CycleParams
    actions: list[str]
    options: dict[str, Any]
    out_dir: Path
    name: str = ""
    source: str = ""
    warnings: list[str] = field(default_factory=list)


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_document(config: str) -> tuple[dict[str, Any], str]:
    """Parse a config file, or a bundled preset when no such file exists."""
    path = Path(config)
    if path.is_file():
        text, source = path.read_text(encoding="utf-8"), str(path)
    elif (PRESET_DIR / f"{config}.json").is_file():
        text, source = (PRESET_DIR / f"{config}.json").read_text(encoding="utf-8"), f"preset:{config}"
    else:
        raise ConfigError(f"config {config!r} is neither a readable file nor a preset {preset_names()}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: the top level must be a JSON object")
    return doc, source


def expand_actions(actions: Sequence[str], params: CycleParams) -> list[str]:
    for a in actions:
        if a not in ACTIONS:
            raise ConfigError(f"unknown action {a!r}; expected one of {list(ACTIONS)}")
    wanted = set(actions)
    if "report-all" in wanted:
        wanted.discard("report-all")
        wanted |= set(applicable_actions(params))
    return [a for a in PIPELINE if a in wanted]


def applicable_actions(params: CycleParams) -> list[str]:
    if params.case is not MultiplierCase.SADDLE:
        return ["classify", "search"]
    acts = ["classify", "sweep-mu", "search"]
    if abs(params.alpha) != 1.0 and math.isfinite(params.alpha):
        acts += ["covering", "verify-blender"]
    return [a for a in PIPELINE if a in acts]


def build_scenario(doc: Mapping[str, Any], source: str = "", action: str | None = None,
                   overrides: Mapping[str, Any] | None = None, out_dir: str | Path | None = None) -> Scenario:
    """Validate a config document (scenario or bare cycle parameters) into a Scenario."""
    if "params" in doc or "preset" in doc:
        extra = sorted(set(doc) - {"params", "preset", "actions", "options", "name", "description", "out"})
        if extra:
            raise ConfigError(f"{source}: unknown scenario field(s) {extra}")
        if "params" in doc:
            pdoc = doc["params"]
        else:
            pre, _ = load_document(str(doc["preset"]))
            pdoc = pre.get("params", pre)
        actions = doc.get("actions", [])
        opts = dict(doc.get("options", {}))
        name = str(doc.get("name", ""))
        default_out = doc.get("out")
    else:
        pdoc, actions, opts, name, default_out = doc, [], {}, "", None
    if not isinstance(pdoc, Mapping):
        raise ConfigError(f"{source}: field 'params' must be an object")
    try:
        params = CycleParams.from_dict(pdoc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: params: {exc}") from exc
    if not isinstance(actions, list):
        raise ConfigError(f"{source}: field 'actions' must be a list")
    if action is not None:
        actions = [action]
    opts.update({k: v for k, v in (overrides or {}).items() if v is not None})
    options = validate_options(opts)
    acts = expand_actions(actions, params)
    if not acts:
        raise ConfigError("no actions requested")
    _check_preconditions(params, acts, options)
    out = Path(out_dir if out_dir is not None else (default_out or "blab-out"))
    return Scenario(params, acts, options, out, name, source)


def _check_preconditions(params: CycleParams, actions: Sequence[str], options: Mapping[str, Any]) -> None:
    rep = validate_nondegeneracy(params)
    if not rep.passed:
        failed = [k for k, v in rep.conditions.items() if not v]
        raise ConfigError(f"params: non-degeneracy fails ({', '.join(failed)})")
    saddle = params.case is MultiplierCase.SADDLE
    for a in actions:
        if a in ("covering", "verify-blender", "sweep-mu") and not saddle:
            raise ConfigError(f"action {a!r} needs real central multipliers (case 'saddle')")
        if a in ("covering", "verify-blender") and not (math.isfinite(params.alpha) and abs(params.alpha) != 1.0):
            raise ConfigError(f"action {a!r} needs |alpha| != 1")
    if "verify-blender" in actions and options["tol"] >= 1.0:
        raise ConfigError("option 'tol' must be below 1 for verify-blender")


# ---------------------------------------------------------------------------
# actions


@dataclass
class _State:
    scenario: Scenario
    cover: Any = None
    cover_error: str = ""
    certificate: Any = None


def _covering_k_max(state: _State) -> int:
    k = state.scenario.options["k_max"]
    if k is not None:
        return k
    return 150 if default_orientation(state.scenario.params) == "cs" else 400


def _ensure_cover(state: _State) -> None:
    if state.cover is not None or state.cover_error:
        return
    p, o = state.scenario.params, state.scenario.options
    try:
        state.cover = build_covering_set(p, N=o["N"], k_max=_covering_k_max(state),
                                         orientation=default_orientation(p))
    except CoveringError as exc:
        state.cover_error = str(exc)


def _act_classify(state: _State) -> ActionResult:
    p, o = state.scenario.params, state.scenario.options
    theta, alpha, kind = compute_moduli(p)
    certified = state.certificate is not None and state.certificate.passed
    rep = regime_report(p, max_den=o["max_den"], certified=certified, kappa=o["kappa"])
    nd = validate_nondegeneracy(p)
    doc = {"regime": rep.to_dict(), "case": p.case.value,
           "nondegeneracy": {"passed": nd.passed, "conditions": nd.conditions, "notes": list(nd.notes)},
           "params": p.to_dict(), "seed": o["seed"]}
    return ActionResult("classify", STATUS_OK, {"regime.json": doc}, rep.label,
                        {"theta": theta, "alpha": alpha, "type": kind, "label": rep.label})


def _act_covering(state: _State) -> ActionResult:
    _ensure_cover(state)
    o = state.scenario.options
    if state.cover is None:
        doc = {"passed": False, "error": state.cover_error, "k_max": _covering_k_max(state), "seed": o["seed"]}
        return ActionResult("covering", STATUS_CERT_FAILED, {"covering.json": doc}, state.cover_error)
    rep = verify_covering(state.cover)
    doc = {"cover": state.cover.to_dict(), "verification": rep.to_dict(), "passed": rep.passed,
           "k_max": _covering_k_max(state), "N": o["N"], "seed": o["seed"]}
    status = STATUS_OK if rep.passed else STATUS_CERT_FAILED
    return ActionResult("covering", status, {"covering.json": doc}, rep.summary(),
                        {"n": state.cover.n, "passed": rep.passed})


def _act_verify(state: _State) -> ActionResult:
    _ensure_cover(state)
    o = state.scenario.options
    if state.cover is None:
        return ActionResult("verify-blender", STATUS_CERT_FAILED, {},
                            f"no covering family: {state.cover_error}")
    try:
        cert = verify_blender(state.scenario.params, cover=state.cover, trials=o["trials"], depth=o["depth"],
                              seed=o["seed"], tol=o["tol"], literal_checks=o["literal_checks"])
    except BlenderError as exc:
        return ActionResult("verify-blender", STATUS_CERT_FAILED, {}, str(exc))
    state.certificate = cert
    status = STATUS_OK if cert.passed else STATUS_CERT_FAILED
    first = next((r.failure for r in cert.records if not r.passed), "")
    msg = f"{cert.pass_count}/{len(cert.records)} trials passed" + (f"; first failure: {first}" if first else "")
    return ActionResult("verify-blender", status,
                        {"blender_certificate.json": cert.to_dict(), "diameters.csv": cert.diameters_csv()},
                        msg, {"passed": cert.passed, "pass_count": cert.pass_count, "trials": len(cert.records)})


def _act_sweep(state: _State) -> ActionResult:
    p, o = state.scenario.params, state.scenario.options
    certified = state.certificate is not None and state.certificate.passed
    lo, hi = o["mu_range"]
    rows = sweep_mu(p, (lo, hi), resolution=o["resolution"], kappa=o["kappa"], certified=certified,
                    max_den=o["max_den"])
    counts: dict[str, int] = {}
    for r in rows:
        counts[r.label] = counts.get(r.label, 0) + 1
    table = csv_table(SWEEP_COLUMNS, [(r.mu, r.hit_family, r.index, r.rescaled_value, r.label, r.theorem_side)
                                      for r in rows])
    doc = {"mu_range": [lo, hi], "resolution": o["resolution"], "kappa": o["kappa"], "label_counts": counts,
           "hits": sum(r.hit_family != "none" for r in rows), "seed": o["seed"]}
    return ActionResult("sweep-mu", STATUS_OK, {"sweep.json": doc, "sweep.csv": table},
                        f"{len(rows)} samples", {"label_counts": counts})


def _act_search(state: _State) -> ActionResult:
    p, o = state.scenario.params, state.scenario.options
    if p.case is not MultiplierCase.SADDLE:
        seq = focus_sequences(p, bound=o["bound"], tol=o["focus_tol"])
        doc = {"focus": seq.to_dict(), "seed": o["seed"]}
        table = csv_table(("index", "value"), list(zip(seq.indices, seq.values)))
        return ActionResult("search", STATUS_OK, {"search.json": doc, "sequence.csv": table},
                            seq.advisory or f"{len(seq.indices)} indices", {"count": len(seq.indices)})
    target_value = abs(p.alpha / (p.a * p.b))
    k_max = o["k_max"] if o["k_max"] is not None else SEARCH_K_MAX
    target = math.log(target_value) / math.log(abs(p.gamma))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pairs = search_km(p.theta, target, o["search_tol"], k_max, gamma=p.gamma)
    doc: dict[str, Any] = {
        "target_value": target_value, "target_exponent": target, "tol": o["search_tol"], "k_max": k_max,
        "pairs": [pr.to_dict() for pr in pairs], "advisory": pairs.advisory,
        "best": None if pairs.best is None else list(pairs.best), "seed": o["seed"],
    }
    notes = []
    if cycle_type(p) == "II":
        usable = []
        for pr in pairs:
            try:
                usable += secondary_cycle_mu(p, [pr])
            except PreconditionError as exc:
                notes.append(str(exc))
        doc["secondary_mu"] = [s.to_dict() for s in usable]
        try:
            doc["theta_prime"] = theta_prime_estimate(p, o["m_star"]).to_dict()
        except PreconditionError as exc:
            notes.append(str(exc))
    doc["notes"] = notes
    table = csv_table(("k", "m", "value", "exponent"), [(pr.k, pr.m, pr.value, pr.exponent) for pr in pairs])
    return ActionResult("search", STATUS_OK, {"search.json": doc, "km.csv": table}, f"{len(pairs)} pairs",
                        {"count": len(pairs)})


_RUNNERS = {"classify": _act_classify, "covering": _act_covering, "verify-blender": _act_verify,
            "sweep-mu": _act_sweep, "search": _act_search}


def run_scenario(scenario: Scenario, emit: bool = True) -> tuple[int, list[ActionResult]]:
    """Run the actions in pipeline order, write the reports and return the exit code."""
    state = _State(scenario)
    order = list(scenario.actions)
    # certification feeds the regime label, so classify is rendered after verify-blender
    if "classify" in order and "verify-blender" in order:
        order.remove("classify")
        order.insert(order.index("verify-blender") + 1, "classify")
    results: dict[str, ActionResult] = {}
    for action in order:
        try:
            results[action] = _RUNNERS[action](state)
        except (ValueError, ArithmeticError) as exc:
            results[action] = ActionResult(action, STATUS_ERROR, {}, f"action {action!r}: {exc}")
    ordered = [results[a] for a in scenario.actions]
    code = combined_exit_code(ordered)
    if emit:
        meta = {"seed": scenario.options["seed"], "source": scenario.source, "name": scenario.name,
                "options": scenario.options, "version": __version__}
        emit_report(ordered, scenario.out_dir, meta)
    return code, ordered


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blab", description="Cycle classification, covering families and "
                                 "blender certificates for model heterodimensional cycles.")
    ap.add_argument("action", nargs="?", choices=ACTIONS,
                    help="action to run; omitted means the actions listed in the config")
    ap.add_argument("--config", required=True, help=f"scenario JSON file or preset name ({', '.join(preset_names())})")
    ap.add_argument("--out", default=None, help="output directory (default: blab-out)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--k-max", dest="k_max", type=int, default=None)
    ap.add_argument("--trials", type=int, default=None)
    ap.add_argument("--depth", type=int, default=None)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "k_max": args.k_max, "trials": args.trials, "depth": args.depth}
    try:
        doc, source = load_document(args.config)
        scenario = build_scenario(doc, source, args.action, overrides, args.out)
    except ConfigError as exc:
        print(f"blab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    code, results = run_scenario(scenario)
    for r in results:
        print(f"{r.action}: {r.status}" + (f" ({r.message})" if r.message else ""))
    print(f"reports written to {scenario.out_dir} (exit {code})")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
