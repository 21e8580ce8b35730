"""Command-line front end.

Every quantity carries its unit, either in the flag name (``--tau-op-us 5``)
or as a value suffix (``--tau-op-range 0.1us:10ms``). Tables go to stdout as
CSV unless ``--out`` is given, in which case the file is written together with
``<out>.manifest.json`` recording argv, seed, output hash and library versions.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

import argparse
import hashlib
import io
import json
import math
from pathlib import Path
import platform
import re
import sys

import numpy as np
import scipy
import sklearn

from . import __version__, charge, estimation, metrics, montecarlo, photon, protocol, scc
from .io import HEADERS, fmt, load_experiment, load_profile, read_csv, read_histogram, write_csv
from ._validation import DegeneracyError, DomainError, NumericalError

__all__ = ["main", "parse_quantity", "parse_range", "build_parser"]


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ]+)\s*$")
_SCALE = {
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6), "µs": ("time", 1e-6),
    "ns": ("time", 1e-9),
    "W": ("power", 1.0), "mW": ("power", 1e-3), "uW": ("power", 1e-6), "µW": ("power", 1e-6),
    "nW": ("power", 1e-9),
}


def parse_quantity(text, target):
    """Parse ``'10ms'`` into a number expressed in ``target`` units."""
    m = _QUANTITY.match(text)
    if not m:
        raise InputError(f"'{text}' must be a number followed by a unit (e.g. 10us)")
    value, unit = float(m.group(1)), m.group(2)
    if unit not in _SCALE or _SCALE[unit][0] != _SCALE[target][0]:
        raise InputError(f"unit mismatch in '{text}': expected a {_SCALE[target][0]} unit")
    return value * _SCALE[unit][1] / _SCALE[target][1]


def parse_range(text, target):
    """Parse ``'lo:hi'`` where both ends carry units."""
    parts = text.split(":")
    if len(parts) != 2:
        raise InputError(f"range '{text}' must look like lo:hi")
    lo, hi = (parse_quantity(p, target) for p in parts)
    if not lo <= hi:
        raise InputError(f"range '{text}' has lo > hi")
    return lo, hi


def _sweep(lo, hi, points, log):
    if points < 1:
        raise InputError("--points must be >= 1")
    if points == 1:
        return np.array([lo])
    if log:
        if lo <= 0:
            raise InputError("logarithmic sweep needs a positive lower bound")
        return np.geomspace(lo, hi, points)
    return np.linspace(lo, hi, points)


class _Output:
    """Collects the artifact and warnings for one run."""

    def __init__(self):
        self.buffer = io.StringIO()
        self.warnings = []
        self.seed = None

    def table(self, header, rows):
        write_csv(self.buffer, header, rows)

    def json(self, obj):
        self.buffer.write(json.dumps(_clean(obj), indent=2, sort_keys=True))
        self.buffer.write("\n")

    def warn(self, msg):
        if msg not in self.warnings:
            self.warnings.append(msg)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt(x)) if math.isfinite(x) else None
    return obj


def _check_nir(out, r_values):
    lo, hi = charge.NIR_RANGE_MW
    if np.any(np.asarray(r_values) > hi) or np.any(np.asarray(r_values) < lo):
        out.warn(f"NIR power outside the fitted range {lo:g}-{hi:g} mW; values are extrapolated")


def _check_green(out, g):
    lo, hi = charge.VISIBLE_RANGE_UW
    if not lo <= g <= hi:
        out.warn(f"visible power outside the fitted range {lo:g}-{hi:g} uW; values are extrapolated")


def _profile(args):
    prof = load_profile(args.profile)
    form = getattr(args, "saturation_form", None)
    if form:
        from dataclasses import replace
        prof.count_rate_model = replace(prof.count_rate_model, saturation_form=form)
    return prof


def _efficiency(args, prof):
    if args.beta0 is not None or args.beta1 is not None:
        if args.beta0 is None or args.beta1 is None:
            raise InputError("--beta0 and --beta1 must be given together")
        return scc.SccEfficiency(args.beta0, args.beta1)
    try:
        return prof.efficiencies[args.efficiency]
    except KeyError:
        raise InputError(f"unknown efficiency set '{args.efficiency}'; "
                         f"choose from {sorted(prof.efficiencies)}") from None


# subcommands ---------------------------------------------------------------

def cmd_steady_state(args, out):
    prof = _profile(args)
    g = prof.green_power_uw if args.green_uw is None else args.green_uw
    _check_green(out, g)
    lo, hi = parse_range(args.r_range, "mW")
    r = _sweep(lo, hi, args.points, log=False)
    _check_nir(out, r)
    rows = [(ri, charge.steady_state(prof.rate_model, g, ri).p_minus) for ri in r]
    out.table(HEADERS["steady_state"], rows)


def cmd_nir_equilibrium(args, out):
    prof = _profile(args)
    lo, hi = parse_range(args.r_range, "mW")
    r = _sweep(lo, hi, args.points, log=False)
    _check_nir(out, r)
    t = prof.interaction_time_ms if args.interaction_ms is None else args.interaction_ms
    mid = charge.nir_equilibrium_curve(prof.nir_ionization, prof.nir_recombination, r,
                                       prof.destructivity, t)
    out.seed = args.seed
    low, _, up = charge.nir_equilibrium_band(
        prof.nir_ionization, prof.nir_recombination, prof.nir_ionization_sigma,
        prof.nir_recombination_sigma, r, prof.destructivity, t, level=0.95,
        n_draws=args.draws, seed=args.seed)
    out.table(HEADERS["nir_equilibrium"], zip(r, mid, low, up))


def cmd_histogram(args, out):
    prof = _profile(args)
    m = photon.PoissonMixture(
        prof.readout.eta_zero if args.eta0 is None else args.eta0,
        prof.readout.eta_minus if args.eta_minus is None else args.eta_minus,
        args.weight_minus)
    n_max = args.max_count if args.max_count is not None else photon.poisson_support(m.eta_minus)
    n = np.arange(n_max + 1)
    out.table(HEADERS["histogram_probability"], zip(n, photon.mixture_pmf(m, n)))


def cmd_fidelity(args, out):
    prof = _profile(args)
    m = photon.PoissonMixture(
        prof.readout.eta_zero if args.eta0 is None else args.eta0,
        prof.readout.eta_minus if args.eta_minus is None else args.eta_minus)
    threshold = args.threshold
    if threshold is None:
        threshold = photon.optimal_threshold(m, inclusive=args.inclusive)
    rep = photon.charge_fidelity(m, threshold, inclusive=args.inclusive)
    doc = {"threshold": rep.threshold, "eps_zero": rep.eps_zero, "eps_minus": rep.eps_minus,
           "fidelity": rep.fidelity, "convention": ">=" if args.inclusive else ">"}
    if args.verify_window_ms is not None:
        ps = prof.post_selection
        prior = charge.ChargePopulation.from_minus(ps["prior_p_minus"])
        doc["post_selection_purity"] = photon.post_selection_purity(
            m, args.verify_window_ms, prof.tau_read_ms, ps["ionization_prob"], prior)
    out.json(doc)


def cmd_scc(args, out):
    prof = _profile(args)
    params = prof.scc
    if args.p_sing is not None:
        params = params.replace(p_sing=args.p_sing)
    rows = []
    for n in range(args.max_cycles + 1):
        eff = scc.scc_efficiencies(params, n)
        rows.append((n, eff.beta0, eff.beta1, metrics.snr_threshold(eff),
                     metrics.spin_fidelity(eff)))
    out.table(("n_cycles", "beta0", "beta1", "snr_threshold", "spin_fidelity"), rows)


def cmd_metrics(args, out):
    prof = _profile(args)
    if args.comparison:
        rows = metrics.comparison_table(prof.techniques)
        out.table(("technique", "snr", "pl_snr", "gain", "saturation_kcps", "requirements"),
                  [(r.name, r.snr, r.pl_snr, r.gain, r.saturation_kcps, r.requirements)
                   for r in rows])
        return
    eff = _efficiency(args, prof)
    snr = metrics.snr_threshold(eff)
    out.json({
        "beta0": eff.beta0,
        "beta1": eff.beta1,
        "snr_threshold": snr,
        "spin_fidelity": metrics.spin_fidelity(eff),
        "sigma_r_equivalent": metrics.sigma_from_snr(snr),
        "sigma_r_half_pi": metrics.spin_readout_noise(eff, math.pi / 2),
        "snr_single_shot": metrics.snr_single_shot(eff, prof.readout.eta_zero,
                                                   prof.readout.eta_minus),
    })


def cmd_speedup(args, out):
    prof = _profile(args)
    eff = _efficiency(args, prof)
    if args.tau_op_us is not None:
        tau_ops = np.array([args.tau_op_us])
    else:
        lo, hi = parse_range(args.tau_op_range, "us")
        tau_ops = _sweep(lo, hi, args.points, log=True)
    pl = prof.pl_reference
    points = protocol.speedup_sweep(
        eff, prof.count_rate_model, tau_ops,
        pl_alpha0=pl["alpha0"], pl_alpha1=pl["alpha1"], pl_tau_read=pl["tau_read_us"],
        tau_init=pl["tau_init_us"])
    out.table(HEADERS["speedup"],
              [(p.tau_op, p.tau_read_opt, p.snr_ss, p.total_time, p.speedup) for p in points])


def _config(args):
    return montecarlo.TrajectoryConfig(seed=args.seed, shots=args.shots,
                                       block_size=args.block_size, workers=args.workers)


def cmd_simulate(args, out):
    prof = _profile(args)
    out.seed = args.seed
    config = _config(args)
    if args.kind == "histogram":
        tau = prof.tau_read_ms
        m = photon.PoissonMixture(prof.readout.eta_zero, prof.readout.eta_minus,
                                  args.weight_minus)
        h = montecarlo.simulate_charge_histogram(m, tau, config, gamma_ion=args.gamma_ion_khz,
                                                 gamma_rec=args.gamma_rec_khz)
        out.table(HEADERS["histogram_occurrences"], zip(np.arange(h.size), h))
    elif args.kind == "rate":
        if args.pulse_ms is None:
            raise InputError("simulate rate needs --pulse-ms")
        c = montecarlo.simulate_rate_experiment(args.gamma_ion_khz, args.gamma_rec_khz,
                                                args.pulse_ms, config,
                                                verify_flip=args.verify_flip)
        doc = {"counts": c.__dict__}
        for label, k, n in (("ionization", c.minus_transitions, c.minus_trials),
                            ("recombination", c.zero_transitions, c.zero_trials)):
            if n:
                est = estimation.rate_from_transitions(k, n, args.pulse_ms)
                doc[label] = {"rate_khz": est.rate, "error_khz": est.error,
                              "upper_bound_khz": est.upper_bound}
        out.json(doc)
    elif args.kind == "scc":
        s = montecarlo.simulate_scc(prof.scc, args.cycles, config)
        exact = scc.scc_efficiencies(prof.scc, args.cycles)
        out.json({"cycles": args.cycles, "beta0": s.beta0, "beta1": s.beta1,
                  "err0": s.err0, "err1": s.err1,
                  "transfer_matrix_beta0": exact.beta0, "transfer_matrix_beta1": exact.beta1})
    else:
        if args.experiment is None:
            raise InputError("simulate sequence needs --experiment FILE")
        segments, initial = load_experiment(args.experiment)
        rec = montecarlo.run_sequence(segments, initial, config)
        k = rec.photons.shape[1]
        header = ("shot", "initial_nv_minus", "final_nv_minus", "n_switches") + tuple(
            f"photons_{i}" for i in range(k))
        rows = (
            (i, rec.initial_charge[i], rec.final_charge[i], rec.n_switches[i], *rec.photons[i])
            for i in range(rec.initial_charge.size))
        out.table(header, rows)


def cmd_fit(args, out):
    header, data = read_csv(args.data)
    if args.kind == "mixture":
        res = estimation.fit_poisson_mixture(read_histogram(args.data))
    elif args.kind == "rate-polynomial":
        res = estimation.fit_rate_polynomial(data, include_quadratic=not args.no_quadratic)
    elif args.kind == "steady-state":
        res = estimation.fit_steady_state(data)
    elif args.kind == "exponential":
        res = estimation.fit_exponential(data)
    else:
        ms1 = read_csv(args.data_ms1)[1] if args.data_ms1 else None
        fixed = {"spin_init": args.fix_spin_init} if args.fix_spin_init is not None else None
        res = estimation.fit_scc_joint(data, ms1, n_shots=args.n_shots, fixed=fixed)
    out.json(res.to_dict())


def _versions():
    return {"nvreadout": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


def cmd_replay(args, out):
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest: {exc}") from None
    argv = manifest["argv"]
    parser = build_parser()
    ns = parser.parse_args(argv)
    replay_out = _Output()
    ns.func(ns, replay_out)
    digest = hashlib.sha256(replay_out.buffer.getvalue().encode()).hexdigest()
    same = digest == manifest["output_sha256"]
    out.json({"identical": same, "output_sha256": digest,
              "recorded_sha256": manifest["output_sha256"],
              "versions_match": manifest.get("versions") == _versions()})
    if not same:
        raise NumericalError("replayed output differs from the recorded artifact")


# parser --------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="nvreadout", description="NV charge and spin readout models")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--profile", help="device profile JSON (default: bundled profile)")
        sp.add_argument("--out", help="write the artifact here plus <out>.manifest.json")
        sp.set_defaults(func=func)
        return sp

    sp = add("steady-state", cmd_steady_state, "steady-state NV- population vs NIR power")
    sp.add_argument("--green-uw", type=float, help="visible power in uW")
    sp.add_argument("--r-range", default="0mW:100mW", help="NIR power range, e.g. 0mW:100mW")
    sp.add_argument("--points", type=int, default=101)

    sp = add("nir-equilibrium", cmd_nir_equilibrium, "NIR-only equilibrium under destructive readout")
    sp.add_argument("--r-range", default="0mW:100mW")
    sp.add_argument("--points", type=int, default=101)
    sp.add_argument("--interaction-ms", type=float)
    sp.add_argument("--draws", type=int, default=2000, help="Monte Carlo draws for the 95%% band")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("histogram", cmd_histogram, "analytic photon-count distribution")
    sp.add_argument("--eta0", type=float, help="mean NV0 counts (photons)")
    sp.add_argument("--eta-minus", type=float, help="mean NV- counts (photons)")
    sp.add_argument("--weight-minus", type=float, default=0.5)
    sp.add_argument("--max-count", type=int)

    sp = add("fidelity", cmd_fidelity, "threshold charge-readout fidelity")
    sp.add_argument("--eta0", type=float)
    sp.add_argument("--eta-minus", type=float)
    sp.add_argument("--threshold", type=int, help="default: optimal threshold")
    sp.add_argument("--inclusive", action="store_true", help="classify NV- when n >= threshold")
    sp.add_argument("--verify-window-ms", type=float,
                    help="also report post-selection purity for this verification window")

    sp = add("scc", cmd_scc, "SCC efficiencies vs number of cycles")
    sp.add_argument("--max-cycles", type=int, default=20)
    sp.add_argument("--p-sing", type=float, help="override the singlet ionization probability")

    def eff_flags(sp):
        sp.add_argument("--efficiency", default="demonstrated",
                        help="named efficiency set from the profile")
        sp.add_argument("--beta0", type=float)
        sp.add_argument("--beta1", type=float)

    sp = add("metrics", cmd_metrics, "spin-readout figures of merit")
    eff_flags(sp)
    sp.add_argument("--comparison", action="store_true", help="technique comparison table")

    sp = add("speedup", cmd_speedup, "integration-time speedup of SCC over PL")
    eff_flags(sp)
    sp.add_argument("--tau-op-range", default="0.1us:10ms")
    sp.add_argument("--tau-op-us", type=float, help="single operation time in us")
    sp.add_argument("--points", type=int, default=41)
    sp.add_argument("--saturation-form", choices=protocol.SATURATION_FORMS)

    sp = add("simulate", cmd_simulate, "seeded Monte Carlo experiments")
    sp.add_argument("kind", choices=("histogram", "rate", "scc", "sequence"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--shots", type=int, default=100000)
    sp.add_argument("--block-size", type=int, default=8192)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--weight-minus", type=float, default=0.5)
    sp.add_argument("--gamma-ion-khz", type=float, default=0.0)
    sp.add_argument("--gamma-rec-khz", type=float, default=0.0)
    sp.add_argument("--pulse-ms", type=float)
    sp.add_argument("--verify-flip", type=float, default=0.0)
    sp.add_argument("--cycles", type=int, default=10)
    sp.add_argument("--experiment", help="pulse-sequence JSON for kind=sequence")

    sp = add("fit", cmd_fit, "fit a model to CSV data")
    sp.add_argument("kind", choices=("rate-polynomial", "steady-state", "mixture",
                                     "exponential", "scc"))
    sp.add_argument("--data", required=True, help="CSV input")
    sp.add_argument("--data-ms1", help="ms=+-1 CSV for kind=scc")
    sp.add_argument("--no-quadratic", action="store_true")
    sp.add_argument("--n-shots", type=int, help="binomial weights for kind=scc")
    sp.add_argument("--fix-spin-init", type=float)

    sp = add("replay", cmd_replay, "re-run a manifest and compare outputs")
    sp.add_argument("manifest")
    return p


def _write_artifact(args, argv, out):
    text = out.buffer.getvalue()
    if not args.out:
        sys.stdout.write(text)
        return
    Path(args.out).write_text(text)
    manifest = {
        "argv": [a for a in _strip_out(argv)],
        "seed": out.seed,
        "output": str(args.out),
        "output_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "versions": _versions(),
        "warnings": out.warnings,
    }
    Path(f"{args.out}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _strip_out(argv):
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        yield a


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        out = _Output()
        args.func(args, out)
        for w in out.warnings:
            print(f"nvreadout: warning: {w}", file=sys.stderr)
        _write_artifact(args, argv, out)
        return 0
    except (InputError, DomainError, ValueError, TypeError, KeyError) as exc:
        _fail("input", exc)
        return 2
    except (DegeneracyError, NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _fail("numerical", exc)
        return 3
    except Exception as exc:  # keep the one-line error contract for unexpected failures
        _fail("internal", exc)
        return 3


def _fail(kind, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"nvreadout: error: {kind}: {msg}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
