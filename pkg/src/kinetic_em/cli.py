"""Command line experiment runner.

Every run is determined by (config, seed, tool version): flags override the
config file, the effective configuration is hashed, outputs land in
<out>/<subcommand>-<hash>/ as CSV files, and a manifest.json with checksums
is written atomically once everything else is on disk.  The exit code is 0
iff every configured check passed.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from ._rng import ROLE_SIMULATE, stream_key
from .drifts import drift_from_name, mollify
from .errors import ConfigError, KineticEmError
from .integrator import SchemeConfig, integrate, trajectory_to_csv
from .kernel import (
    MixedExponent,
    PhaseState,
    covariance_form_error,
    kernel_density,
    kernel_mass,
    kernel_norm_exponent_fit,
    scaling_identity_error,
)
from .paths import GridSpec, coarsen, sample_path
from .rates import (
    default_test_functions,
    rate_report_summary,
    rate_report_to_csv,
    resolve_threads,
    strong_error,
    taming_demo,
    tv_proxy,
    weak_error,
)

SUBCOMMANDS = (
    "simulate", "strong-rate", "weak-rate", "taming-demo", "kernel-check", "tv-proxy",
)

_DRIFT_PARAM_KEYS = ("c", "gamma", "kappa", "beta", "table_path")


def _as_int(s):
    return int(str(s).strip())


def _as_float(s):
    return float(str(s).strip())


def _as_str(s):
    return str(s).strip()


def _as_bool(s):
    val = str(s).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _as_int_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(int(v) for v in s)
    return tuple(int(tok) for tok in str(s).split(",") if tok.strip())


def _as_float_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(v) for v in s)
    return tuple(float(tok) for tok in str(s).split(",") if tok.strip())


# key -> (parser, default); a None default means "not set"
_COMMON_SPEC = {
    "seed": (_as_int, 0),
    "threads": (_as_int, None),
    "out": (_as_str, "runs"),
}

_DRIFT_SPEC = {
    "drift": (_as_str, "zero"),
    "c": (_as_float_list, None),
    "gamma": (_as_float, None),
    "kappa": (_as_float, None),
    "beta": (_as_float, None),
    "table_path": (_as_str, None),
    "theta": (_as_float, 0.5),
}

_CONFIG_SPEC = {
    "simulate": {
        **_DRIFT_SPEC,
        "n": (_as_int, 8),
        "horizon": (_as_float, 1.0),
        "d": (_as_int, 1),
        "paths": (_as_int, 1),
        "sample_at": (_as_int, None),
        "initial_x": (_as_float_list, None),
        "initial_v": (_as_float_list, None),
        "quad_order": (_as_int, 8),
    },
    "strong-rate": {
        **_DRIFT_SPEC,
        "drift": (_as_str, "linear_friction"),
        "gamma": (_as_float, 1.0),
        "levels": (_as_int_list, (16, 32, 64, 128, 256, 512)),
        "n_ref": (_as_int, 512),
        "m": (_as_float, 2.0),
        "samples": (_as_int, 2000),
        "reference": (_as_str, "exact"),
        "horizon": (_as_float, 1.0),
        "d": (_as_int, 1),
        "initial_x": (_as_float_list, None),
        "initial_v": (_as_float_list, None),
        "quad_order": (_as_int, 8),
        "chunk": (_as_int, 256),
        "bootstrap": (_as_int, 200),
        "min_slope": (_as_float, None),
        "max_slope_se": (_as_float, None),
    },
    "weak-rate": {
        **_DRIFT_SPEC,
        "drift": (_as_str, "sign_velocity"),
        "levels": (_as_int_list, (16, 32, 64, 128, 256)),
        "n_ref": (_as_int, 1024),
        "t_eval": (_as_float_list, (1.0,)),
        "samples": (_as_int, 20000),
        "ref_samples": (_as_int, None),
        "horizon": (_as_float, 1.0),
        "d": (_as_int, 1),
        "initial_x": (_as_float_list, None),
        "initial_v": (_as_float_list, None),
        "quad_order": (_as_int, 8),
        "chunk": (_as_int, 512),
        "min_slope": (_as_float, None),
        "max_slope_se": (_as_float, None),
        "max_null_sigma": (_as_float, None),
    },
    "taming-demo": {
        "levels": (_as_int_list, (16, 32, 64, 128, 256, 512, 1024)),
        "samples": (_as_int, 100000),
        "horizon": (_as_float, 47.0 / 48.0),
        "d": (_as_int, 1),
        "min_i_slope": (_as_float, None),
        "max_i_slope": (_as_float, None),
        "min_j_slope": (_as_float, None),
        "check_gaps": (_as_bool, True),
    },
    "kernel-check": {
        "probes": (_as_int, 1000),
        "points": (_as_int, 257),
    },
    "tv-proxy": {
        **_DRIFT_SPEC,
        "drift": (_as_str, "sign_velocity"),
        "n": (_as_int, 16),
        "n_ref": (_as_int, 256),
        "t": (_as_float, 1.0),
        "bins": (_as_int, 24),
        "samples": (_as_int, 20000),
        "d": (_as_int, 1),
        "initial_x": (_as_float_list, None),
        "initial_v": (_as_float_list, None),
        "quad_order": (_as_int, 8),
        "chunk": (_as_int, 4096),
        "radius_sds": (_as_float, 4.0),
    },
}


def load_config(path: str, subcommand: str) -> dict:
    """Parse the INI-style config, honoring [common] plus the subcommand section."""
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    if parser.defaults():
        raise ConfigError("put shared keys under [common], not [DEFAULT]")
    known_sections = {"common", *SUBCOMMANDS}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown config section [{section}]")
    spec = _CONFIG_SPEC[subcommand]
    raw: dict[str, str] = {}
    for section in ("common", subcommand):
        if parser.has_section(section):
            raw.update(parser.items(section))
    values = {}
    for key, text in raw.items():
        if key in _COMMON_SPEC:
            parse = _COMMON_SPEC[key][0]
        elif key in spec:
            parse = spec[key][0]
        else:
            raise ConfigError(f"unknown config key {key!r} for subcommand {subcommand}")
        try:
            values[key] = parse(text)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from exc
    return values


def effective_config(subcommand: str, file_values: dict, flag_values: dict) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    cfg = {key: default for key, (_, default) in _COMMON_SPEC.items()}
    cfg.update({key: default for key, (_, default) in _CONFIG_SPEC[subcommand].items()})
    cfg.update(file_values)
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    return cfg


def _canon(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_canon(v) for v in value)
    return str(value)


def config_hash(cfg: dict) -> str:
    """12-hex digest of the effective configuration, minus execution knobs."""
    lines = sorted(
        f"{key}={_canon(val)}" for key, val in cfg.items()
        if key not in ("threads", "out")
    )
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]


def _drift_from_config(cfg: dict):
    params = {k: cfg[k] for k in _DRIFT_PARAM_KEYS if cfg.get(k) is not None}
    if "c" in params:
        c = params["c"]
        params["c"] = c[0] if len(c) == 1 else c
    return drift_from_name(cfg["drift"], **params)


def _initial_from_config(cfg: dict):
    x, v = cfg.get("initial_x"), cfg.get("initial_v")
    if x is None and v is None:
        return None
    d = cfg["d"]
    x = tuple(x) if x is not None else (0.0,) * d
    v = tuple(v) if v is not None else (0.0,) * d
    if len(x) != d or len(v) != d:
        raise ConfigError(f"initial_x/initial_v must have d={d} entries")
    return PhaseState(x=x, v=v)


class Check:
    """One named pass/fail verdict with a human-readable detail line."""

    def __init__(self, name: str, passed: bool, detail: str):
        self.name = name
        self.passed = bool(passed)
        self.detail = detail

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _slope_checks(report, min_slope, max_slope_se, prefix="") -> list[Check]:
    checks = []
    if min_slope is not None:
        if report.exact:
            checks.append(Check(f"{prefix}min_slope", True,
                                "errors at exact-reproduction scale; slope check vacuous"))
        else:
            checks.append(Check(
                f"{prefix}min_slope", report.slope >= min_slope,
                f"slope {report.slope:.4f} vs required >= {min_slope}"))
    if max_slope_se is not None and not report.exact:
        checks.append(Check(
            f"{prefix}max_slope_se", report.slope_se < max_slope_se,
            f"slope_se {report.slope_se:.4f} vs required < {max_slope_se}"))
    return checks


def cmd_simulate(cfg: dict, threads: int):
    drift = _drift_from_config(cfg)
    n, d, horizon = cfg["n"], cfg["d"], cfg["horizon"]
    grid = GridSpec(n=n, horizon=horizon, d=d)
    md = mollify(drift, n, cfg["theta"], d=d)
    scheme = SchemeConfig(grid=grid, theta=cfg["theta"], quad_order=cfg["quad_order"],
                          initial=_initial_from_config(cfg))
    sample_at = cfg.get("sample_at")
    if sample_at is not None and (sample_at < n or sample_at % n):
        raise ConfigError(f"sample_at={sample_at} must be a multiple of n={n}")
    outputs = {}
    for j in range(cfg["paths"]):
        stream = stream_key(ROLE_SIMULATE, j)
        if sample_at is None or sample_at == n:
            path = sample_path(grid, cfg["seed"], stream)
        else:
            fine = sample_path(GridSpec(n=sample_at, horizon=horizon, d=d),
                               cfg["seed"], stream)
            path = coarsen(fine, sample_at // n)
        traj = integrate(scheme, md, path)
        buf = io.StringIO()
        trajectory_to_csv(traj, buf)
        outputs[f"path_{j:04d}.csv"] = buf.getvalue()
    summary = {"paths": cfg["paths"], "n": n, "drift": drift.drift_id}
    return outputs, [], summary


def cmd_strong_rate(cfg: dict, threads: int):
    drift = _drift_from_config(cfg)
    report = strong_error(
        drift, cfg["theta"], cfg["levels"], cfg["n_ref"], m=cfg["m"],
        samples=cfg["samples"], seed=cfg["seed"], d=cfg["d"],
        horizon=cfg["horizon"], reference=cfg["reference"],
        initial=_initial_from_config(cfg), quad_order=cfg["quad_order"],
        threads=threads, chunk=cfg["chunk"], bootstrap=cfg["bootstrap"],
    )
    buf = io.StringIO()
    rate_report_to_csv(report, buf)
    checks = _slope_checks(report, cfg["min_slope"], cfg["max_slope_se"])
    return {"rates.csv": buf.getvalue()}, checks, rate_report_summary(report)


def cmd_weak_rate(cfg: dict, threads: int):
    drift = _drift_from_config(cfg)
    result = weak_error(
        drift, cfg["theta"], cfg["levels"], cfg["n_ref"],
        fset=default_test_functions(cfg["d"]), t_eval=cfg["t_eval"],
        samples=cfg["samples"], seed=cfg["seed"], ref_samples=cfg["ref_samples"],
        d=cfg["d"], horizon=cfg["horizon"], initial=_initial_from_config(cfg),
        quad_order=cfg["quad_order"], threads=threads, chunk=cfg["chunk"],
    )
    outputs = {}
    for idx, report in enumerate(result.reports):
        buf = io.StringIO()
        rate_report_to_csv(report, buf)
        name = "rates.csv" if len(result.reports) == 1 else f"rates_t{idx}.csv"
        outputs[name] = buf.getvalue()
    buf = io.StringIO()
    buf.write("t,level,f,mean_ref,se_ref,mean_level,se_level,err,se\n")
    for o in result.observations:
        buf.write(f"{o.t!r},{o.level},{o.name},{o.mean_ref!r},{o.se_ref!r},"
                  f"{o.mean_level!r},{o.se_level!r},{o.err!r},{o.se!r}\n")
    outputs["detail.csv"] = buf.getvalue()
    checks = _slope_checks(result.primary, cfg["min_slope"], cfg["max_slope_se"])
    if cfg["max_null_sigma"] is not None:
        sig = max(o.err / o.se for o in result.observations if o.se > 0)
        checks.append(Check("max_null_sigma", sig <= cfg["max_null_sigma"],
                            f"max |err|/se {sig:.3f} vs allowed <= {cfg['max_null_sigma']}"))
    summary = {
        "reports": [rate_report_summary(r) for r in result.reports],
        "tv_sq_proxy": list(result.tv_sq_proxy),
        "t_eval": list(result.t_eval),
    }
    return outputs, checks, summary


def cmd_taming_demo(cfg: dict, threads: int):
    demo = taming_demo(cfg["levels"], samples=cfg["samples"], seed=cfg["seed"],
                       horizon=cfg["horizon"], d=cfg["d"])
    outputs = {}
    for name, report in (("uncorrected.csv", demo.uncorrected),
                         ("shifted.csv", demo.shifted)):
        buf = io.StringIO()
        rate_report_to_csv(report, buf)
        outputs[name] = buf.getvalue()
    buf = io.StringIO()
    buf.write("n,gap,se\n")
    for n, g, s in zip(demo.uncorrected.levels, demo.gap_means, demo.gap_ses):
        buf.write(f"{n},{g!r},{s!r}\n")
    outputs["gaps.csv"] = buf.getvalue()
    checks = []
    if cfg["min_i_slope"] is not None:
        checks.append(Check("min_i_slope", demo.uncorrected.slope >= cfg["min_i_slope"],
                            f"I slope {demo.uncorrected.slope:.4f} vs >= {cfg['min_i_slope']}"))
    if cfg["max_i_slope"] is not None:
        checks.append(Check("max_i_slope", demo.uncorrected.slope <= cfg["max_i_slope"],
                            f"I slope {demo.uncorrected.slope:.4f} vs <= {cfg['max_i_slope']}"))
    if cfg["min_j_slope"] is not None:
        checks.append(Check("min_j_slope", demo.shifted.slope >= cfg["min_j_slope"],
                            f"J slope {demo.shifted.slope:.4f} vs >= {cfg['min_j_slope']}"))
    if cfg["check_gaps"]:
        ok = all(g >= -2.0 * s for g, s in zip(demo.gap_means, demo.gap_ses))
        worst = min(
            (g + 2.0 * s for g, s in zip(demo.gap_means, demo.gap_ses)), default=0.0)
        checks.append(Check("shift_no_worse", ok,
                            f"min over levels of gap+2se = {worst:.3g} (needs >= 0)"))
    summary = {
        "uncorrected": rate_report_summary(demo.uncorrected),
        "shifted": rate_report_summary(demo.shifted),
        "gap_means": list(demo.gap_means),
        "gap_ses": list(demo.gap_ses),
    }
    return outputs, checks, summary


def cmd_kernel_check(cfg: dict, threads: int):
    probes, points = cfg["probes"], cfg["points"]
    rng = np.random.default_rng(cfg["seed"])
    rows = []

    value = float(kernel_density(1.0, x=np.zeros(1), v=np.zeros(1)))
    target = math.sqrt(3.0) / math.pi
    rows.append(("density_origin_t1", abs(value - target), 1e-12))
    for t in (0.5, 1.0):
        rows.append((f"mass_d1_t{t}",
                     abs(float(kernel_mass(t, d=1, points=points)) - 1.0), 1e-8))
    rows.append(("mass_d2_t1", abs(float(kernel_mass(1.0, d=2, points=97)) - 1.0), 1e-8))

    worst_scaling = 0.0
    worst_cov = 0.0
    for _ in range(probes):
        t = float(rng.uniform(0.1, 2.0))
        z = PhaseState(x=rng.normal(size=1) * t**1.5, v=rng.normal(size=1) * t**0.5)
        worst_scaling = max(worst_scaling, float(scaling_identity_error(t, z)))
        worst_cov = max(worst_cov, float(covariance_form_error(t, z)))
    rows.append(("scaling_identity", worst_scaling, 1e-12))
    rows.append(("covariance_form", worst_cov, 1e-10))

    for px, pv in ((1.0, 1.0), (2.0, 2.0), (math.inf, math.inf)):
        fitted, expected, _ = kernel_norm_exponent_fit(
            MixedExponent(px, pv), points=points)
        tol = 0.05 * max(1.0, abs(expected))
        label = "inf" if math.isinf(px) else f"{px:g}"
        rows.append((f"norm_exponent_p{label}", abs(fitted - expected), tol))

    checks = [Check(name, err <= tol, f"error {err:.3g} vs tolerance {tol:.3g}")
              for name, err, tol in rows]
    buf = io.StringIO()
    buf.write("check,error,tolerance,passed\n")
    for (name, err, tol), chk in zip(rows, checks):
        buf.write(f"{name},{err!r},{tol!r},{str(chk.passed).lower()}\n")
    summary = {"checks": [c.as_dict() for c in checks]}
    return {"kernel_checks.csv": buf.getvalue()}, checks, summary


def cmd_tv_proxy(cfg: dict, threads: int):
    drift = _drift_from_config(cfg)
    report = tv_proxy(
        drift, cfg["theta"], cfg["n"], cfg["n_ref"], t=cfg["t"], bins=cfg["bins"],
        samples=cfg["samples"], seed=cfg["seed"], d=cfg["d"],
        initial=_initial_from_config(cfg), quad_order=cfg["quad_order"],
        threads=threads, chunk=cfg["chunk"], radius_sds=cfg["radius_sds"],
    )
    buf = io.StringIO()
    buf.write("n,n_ref,t,bins,estimate,diagnostic_2x,noise_floor\n")
    buf.write(f"{cfg['n']},{cfg['n_ref']},{cfg['t']!r},{report.bins},"
              f"{report.estimate!r},{report.diagnostic!r},{report.noise_floor!r}\n")
    summary = {
        "estimate": report.estimate,
        "diagnostic_2x": report.diagnostic,
        "noise_floor": report.noise_floor,
        "metadata": report.metadata,
    }
    return {"tv.csv": buf.getvalue()}, [], summary


_DISPATCH = {
    "simulate": cmd_simulate,
    "strong-rate": cmd_strong_rate,
    "weak-rate": cmd_weak_rate,
    "taming-demo": cmd_taming_demo,
    "kernel-check": cmd_kernel_check,
    "tv-proxy": cmd_tv_proxy,
}


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="kinetic-em",
        description="Experiment harness for the tamed transport-shifted scheme",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="INI config file ([common] + subcommand sections)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--threads", type=int,
                        help="worker threads (overrides config and KINETIC_EM_THREADS)")
    parser.add_argument("--out", help="output root directory (default: runs)")
    return parser.parse_args(argv)


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def main(argv=None) -> int:
    args = _parse_args(argv)
    sub = args.subcommand
    try:
        file_values = load_config(args.config, sub) if args.config else {}
        flags = {"seed": args.seed, "threads": args.threads, "out": args.out}
        cfg = effective_config(sub, file_values, flags)
        threads = resolve_threads(cfg.get("threads"))
        digest = config_hash(cfg)

        start = time.monotonic()
        outputs, checks, summary = _DISPATCH[sub](cfg, threads)
        wall = time.monotonic() - start

        outdir = os.path.join(cfg["out"], f"{sub}-{digest}")
        os.makedirs(outdir, exist_ok=True)
        checksums = {}
        for name, text in outputs.items():
            data = text.encode("utf-8")
            with open(os.path.join(outdir, name), "wb") as fh:
                fh.write(data)
            checksums[name] = hashlib.sha256(data).hexdigest()
        manifest = {
            "tool": "kinetic-em",
            "version": __version__,
            "subcommand": sub,
            "config_hash": digest,
            "seed": cfg["seed"],
            "wall_clock_s": wall,
            "outputs": checksums,
            "config": {k: _canon(v) for k, v in sorted(cfg.items())},
            "checks": [c.as_dict() for c in checks],
            "passed": all(c.passed for c in checks),
            "summary": summary,
        }
        _atomic_write(os.path.join(outdir, "manifest.json"),
                      json.dumps(manifest, indent=2).encode("utf-8"))
    except KineticEmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2

    for chk in checks:
        state = "PASS" if chk.passed else "FAIL"
        print(f"[check] {chk.name}: {state} ({chk.detail})")
    print(f"wrote {len(outputs) + 1} files to {outdir}")
    failures = [c for c in checks if not c.passed]
    for chk in failures:
        print(f"FAIL {chk.name}: {chk.detail}", file=sys.stderr)
    return 1 if failures else 0
