"""``dicke-lab`` command-line interface.

Every subcommand writes its files atomically and records them, with SHA-256
checksums, in a ``manifest.json`` next to them. Failures print one JSON line
on stderr and exit with a code that identifies the error class.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import multiprocessing as mp
import os
import platform
import sys
from hashlib import sha256
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (AnalysisResult, G2Estimate, analyze_run, bin_label, combine_runs,
                       default_coupling_edges, default_nbar_edges)
from .closedsys import ground_state_fluctuations
from .errors import (ConfigError, ConvergenceError, DataError, DickeLabError, DomainError,
                     SingularityError, UnrealizableCovarianceError)
from .fitpipe import (X_FLAG, BinModel, FitResult, density_fluctuations_from_nbar,
                      fit_empirical_gamma, fit_gamma_zeta, fit_power_law)
from .meanfield import hp_renormalize, steady_state
from .params import TWO_PI, PhysicalParams, load_params
from .spectral import EffectiveModel, correlation_curve, dominant_frequency
from .svgplot import plot_csv, read_columns
from .synth import (CuspGammaProfile, SweepModelCache, SweepSchedule, _atomic_write_bytes,
                    read_trace, synthesize_stationary, synthesize_sweep, write_trace)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SINGULAR, EXIT_DATA = 0, 2, 3, 4, 5
THREADS_ENV = "DICKE_LAB_THREADS"
MANIFEST = "manifest.json"

log = logging.getLogger("dicke_lab")


# -- output helpers -------------------------------------------------------------------


def fmt(v) -> str:
    """Round-trip text for a CSV field: 17 significant digits for floats."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


class Outputs:
    """Files written by one command, relative to its output directory."""

    def __init__(self, root: Path, plot: bool = False, logx: bool = False, logy: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.plot, self.logx, self.logy = plot, logx, logy

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.root / name
        _atomic_write_bytes(path, data)
        self.files.append(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode())

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")

    def write_csv(self, name: str, header: list[str], columns: list, meta: dict | None = None) -> Path:
        """Columnar CSV; ``meta`` goes into leading ``# key=value`` lines."""
        n = len(columns[0]) if columns else 0
        lines = [f"# {k}={fmt(v)}" for k, v in (meta or {}).items()]
        lines.append(",".join(header))
        for i in range(n):
            lines.append(",".join(fmt(c[i]) for c in columns))
        path = self.write_text(name, "\n".join(lines) + "\n")
        if self.plot and n > 1:
            svg = plot_csv(path, logx=self.logx, logy=self.logy)
            self.write_text(Path(name).with_suffix(".svg").name, svg)
        return path


def write_manifest(out: Outputs, argv: list[str], config: dict, seed: int | None, extra: dict | None = None):
    """Create or extend the directory's single manifest."""
    path = out.root / MANIFEST
    old = {}
    if path.exists():
        try:
            old = json.loads(path.read_text())
        except json.JSONDecodeError:
            old = {}
    files = {f["path"]: f for f in old.get("outputs", [])}
    for f in out.files:
        data = f.read_bytes()
        rel = f.relative_to(out.root).as_posix()
        files[rel] = {"path": rel, "sha256": sha256(data).hexdigest(), "bytes": len(data)}
    commands = old.get("commands", []) + [{"argv": argv, "seed": seed, **(extra or {})}]
    manifest = {
        "toolchain": {"dicke_lab": __version__, "python": platform.python_version(),
                      "numpy": np.__version__},
        "config": config,
        "seed": seed,
        "commands": commands,
        "outputs": [files[k] for k in sorted(files)],
    }
    _atomic_write_bytes(path, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def _params(args) -> PhysicalParams:
    if getattr(args, "config", None):
        return load_params(args.config)
    return PhysicalParams()


def _sweep(text: str) -> np.ndarray:
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X0:X1:N, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("sweep needs N >= 1")
    return np.linspace(a, b, n)


def _range(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if not b > a:
        raise argparse.ArgumentTypeError("range needs LO < HI")
    return a, b


def workers(requested: int | None, tasks: int) -> int:
    """Worker count: the request (default all CPUs), capped by the environment and the task count."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, min(n, tasks))


def _pool_map(func, items, n: int):
    """Ordered map; forks workers so that module-level state set beforehand is shared."""
    items = list(items)
    if n <= 1 or len(items) <= 1 or "fork" not in mp.get_all_start_methods():
        return [func(i) for i in items]
    with mp.get_context("fork").Pool(n) as pool:
        return pool.map(func, items, chunksize=max(1, len(items) // (4 * n)))


# -- meanfield / spectrum / closed ------------------------------------------------------


def cmd_meanfield(args) -> int:
    p = _params(args)
    cols = {k: [] for k in ("x", "beta_over_N", "w_over_N", "re_alpha", "im_alpha", "photon_number",
                            "omega0_ratio", "lambda_ratio", "mu_over_omega0")}
    for x in args.sweep:
        lam = p.coupling(float(x))
        s = steady_state(p, lam, args.zeta)
        r = hp_renormalize(p, s, lam)
        for k, v in zip(cols, (x, s.beta / p.N, s.w / p.N, s.alpha.real, s.alpha.imag, s.photon_number,
                               r.omega0_t / p.omega0, r.lambda_t / lam if lam else 1.0, r.mu / p.omega0)):
            cols[k].append(v)
    out = Outputs(args.out, args.plot)
    out.write_csv("meanfield.csv", list(cols), list(cols.values()))
    write_manifest(out, sys.argv, p.to_config(), None, {"zeta": args.zeta})
    return EXIT_OK


def cmd_spectrum(args) -> int:
    p = _params(args)
    m = EffectiveModel.from_params(p, args.x, TWO_PI * args.gamma_hz, zeta=args.zeta, phi=args.phi,
                                   n_B=args.nb, pairing=args.pairing)
    tau_max = args.tau_max if args.tau_max else 10.0 / m.omega_s
    c = correlation_curve(m, tau_max, args.points, method=args.method)
    out = Outputs(args.out, args.plot)
    summary = {"x": m.x, "omega_s": m.omega_s, "photon_number": c.photon_number,
               "coherent_fraction": c.coherent_fraction, "n_B": m.n_B,
               "g2_dominant_frequency": dominant_frequency(c.tau, c.g2)}
    out.write_csv("spectrum.csv", ["tau_s", "re_g1", "im_g1", "g2"],
                  [c.tau, c.g1.real, c.g1.imag, c.g2], meta=summary)
    out.write_json("spectrum.json", summary)
    write_manifest(out, sys.argv, p.to_config(), None)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_closed(args) -> int:
    p = _params(args)
    xs = args.sweep
    res = [ground_state_fluctuations(p, float(x)) for x in xs]
    out = Outputs(args.out, args.plot)
    out.write_csv("closed.csv", ["x", "photon_variance", "quadrature_variance", "energy"],
                  [xs, [r.photon_variance for r in res], [r.quadrature_variance for r in res],
                   [r.energy for r in res]])
    fit = fit_power_law(xs, [r.quadrature_variance for r in res], args.range)
    out.write_json("closed_exponent.json", {"exponent": fit.exponent, "err": fit.err,
                                            "x_range": list(fit.x_range), "n_points": fit.n_points})
    write_manifest(out, sys.argv, p.to_config(), None)
    print(f"exponent {fit.exponent:.6f} +- {fit.err:.2g} on x in [{args.range[0]}, {args.range[1]}]")
    return EXIT_OK


# -- synthesis --------------------------------------------------------------------------


def _schedule(args, seed: int, run: int = 0) -> SweepSchedule:
    prof = CuspGammaProfile(peak=TWO_PI * args.gamma_peak_hz)
    return SweepSchedule(zeta=args.zeta, seed=seed, run=run, atom_loss=args.atom_loss,
                         gamma_profile=prof)


_STATE: dict = {}  # read by forked workers


def _synth_one(run: int):
    st = _STATE
    s = _schedule(st["args"], st["seed"], run)
    return synthesize_sweep(s, st["p"], st["cache"])


def _prime_cache(p: PhysicalParams, args, seed: int, runs: int) -> SweepModelCache:
    """Fill the kernel cache in the parent so forked workers share it."""
    base = _schedule(args, seed)
    cache = SweepModelCache(p, base)
    nblocks = int(math.ceil(base.t_critical / base.block_length))
    zetas = sorted({round(abs(base.zeta * math.cos(_schedule(args, seed, r).run_phi())), 12)
                    for r in range(runs)})
    for z in zetas:
        for b in range(nblocks):
            cache.kernel(b, z)
    return cache


def cmd_synth(args) -> int:
    p = _params(args)
    out = Outputs(args.out)
    ext = ".bin" if args.format == "bin" else ".csv"
    if args.stationary_x is not None:
        m = EffectiveModel.from_params(p, args.stationary_x, TWO_PI * args.gamma_hz, zeta=args.zeta,
                                       phi=args.phi, n_B=0.0)
        tr = synthesize_stationary(m, p, args.duration, args.seed)
        path = out.root / f"stationary{ext}"
        write_trace(tr, path, args.format)
        out.files += [path, path.with_name(path.name + ".json")]
    else:
        _STATE.update(args=args, seed=args.seed, p=p,
                      cache=_prime_cache(p, args, args.seed, args.runs))
        for r in range(args.runs):
            tr = _synth_one(r)
            path = out.root / f"run_{r:05d}{ext}"
            write_trace(tr, path, args.format)
            out.files += [path, path.with_name(path.name + ".json")]
            log.info("run %d: %d clicks", r, len(tr))
    write_manifest(out, sys.argv, p.to_config(), args.seed)
    return EXIT_OK


# -- analysis ---------------------------------------------------------------------------


def write_analysis(res: AnalysisResult, out: Outputs) -> dict:
    """nbar_vs_x.csv, one g2_x<bin>.csv per populated bin, transition.txt and bins.json."""
    nb = res.nbar
    out.write_csv("nbar_vs_x.csv", ["x", "rate", "nbar", "nbar_err"], [nb.x, nb.rate, nb.nbar, nb.nbar_err])
    bins = []
    for i in sorted(res.bins):
        e = res.bins[i]
        lo, hi = float(res.edges[i]), float(res.edges[i + 1])
        label = bin_label(lo, hi)
        name = f"g2_x{label}.csv"
        out.write_csv(name, ["tau_s", "g2", "g2_err"], [e.tau, e.g2, e.err])
        bins.append({"index": i, "label": label, "lo": lo, "hi": hi, "x": e.x, "file": name,
                     "n_runs": e.n_runs, "flagged": bool(res.flagged(i)),
                     "nodes": e.nodes.tolist() if e.nodes is not None else None})
    lines = ["# run t_cr_s slope_per_s duration_s atom_loss"]
    for r, ax in enumerate(res.axes):
        lines.append(" ".join([str(r), fmt(ax.t_cr), fmt(ax.slope), fmt(ax.duration), fmt(ax.atom_loss)]))
    out.write_text("transition.txt", "\n".join(lines) + "\n")
    meta = {"edges": [float(v) for v in res.edges], "bins": bins, "runs": len(res.axes),
            "skipped": res.skipped}
    out.write_json("bins.json", meta)
    return meta


def _analyze_one(item):
    st = _STATE
    tr = read_trace(item) if isinstance(item, (str, Path)) else _synth_one(item)
    loss = st["atom_loss"] if st["atom_loss"] is not None else float(tr.schedule.get("atom_loss", 0.0))
    return analyze_run(tr, st["edges"], st["nbar_edges"], max_lag=st["max_lag"], atom_loss=loss,
                       subtrace_kw=st["subtrace_kw"])


def _collect_traces(paths: list[str]) -> list[Path]:
    out: list[Path] = []
    for s in paths:
        path = Path(s)
        if path.is_dir():
            out += sorted(q for q in path.iterdir() if q.suffix in (".bin", ".clk", ".csv"))
        elif path.exists():
            out.append(path)
        else:
            raise DataError(f"trace not found: {path}")
    if not out:
        raise DataError("no trace files given")
    return out


def _edges(args):
    edges = default_coupling_edges(args.x_lo, args.coarse_width, args.fine_width)
    return edges, default_nbar_edges(args.x_lo, width=args.nbar_width)


def _analysis_state(args) -> dict:
    edges, nbar_edges = _edges(args)
    kw = {"min_length": args.subtrace_min, "max_length": args.subtrace_max, "ratio": args.subtrace_ratio}
    return dict(edges=edges, nbar_edges=nbar_edges, max_lag=args.max_lag, atom_loss=args.atom_loss,
                subtrace_kw=kw)


def cmd_analyze(args) -> int:
    p = _params(args)
    traces = _collect_traces(args.trace)
    _STATE.update(_analysis_state(args))
    runs = _pool_map(_analyze_one, traces, workers(args.parallel, len(traces)))
    res = combine_runs(runs, _STATE["edges"], _STATE["nbar_edges"], p)
    out = Outputs(args.out, args.plot)
    write_analysis(res, out)
    write_manifest(out, sys.argv, p.to_config(), None, {"traces": [t.name for t in traces]})
    return EXIT_OK


# -- fit --------------------------------------------------------------------------------


def read_g2_dir(path) -> tuple[list[G2Estimate], list[dict]]:
    """G2 estimates and bin records of an ``analyze`` output directory."""
    root = Path(path)
    meta_path = root / "bins.json"
    if meta_path.exists():
        bins = json.loads(meta_path.read_text())["bins"]
    else:
        files = sorted(root.glob("g2_x*.csv"))
        if not files:
            raise DataError(f"no g2_x*.csv files in {root}")
        log.warning("bins.json missing: each bin is modelled by one 50 ms subtrace at its label")
        bins = []
        for f in files:
            x = float(f.stem[4:])
            bins.append({"label": f.stem[4:], "x": x, "file": f.name, "n_runs": 1,
                         "flagged": x > X_FLAG, "nodes": [[x, 50e-3, 1.0]]})
    data = []
    for b in bins:
        header, arr = read_columns(root / b["file"])
        if header[:3] != ["tau_s", "g2", "g2_err"]:
            raise DataError(f"{b['file']}: expected columns tau_s,g2,g2_err")
        nodes = np.array(b["nodes"]) if b.get("nodes") else np.array([[b["x"], 50e-3, 1.0]])
        e = G2Estimate(tau=arr[:, 0], g2=arr[:, 1], err=arr[:, 2], x=float(b["x"]),
                       n_runs=int(b.get("n_runs", 1)), nodes=nodes)
        e.validate()
        if np.any(e.err <= 0):
            raise DataError(f"{b['file']}: g2 errors must be > 0")
        data.append(e)
    return data, bins


def _build_model(i: int) -> BinModel:
    d = _STATE["data"][i]
    return BinModel.build(_STATE["p"], d.nodes, d.tau)


def run_fit(data: list[G2Estimate], bins: list[dict], p: PhysicalParams, n_workers: int,
            fixed_zeta: float | None = None, n_starts: int = 5) -> dict:
    _STATE.update(data=data, p=p)
    models = _pool_map(_build_model, range(len(data)), n_workers)
    fr: FitResult = fit_gamma_zeta(data, p, models=models, n_starts=n_starts,
                                   flagged=[b["flagged"] for b in bins], fixed_zeta=fixed_zeta,
                                   labels=[b["label"] for b in bins])
    out = fr.to_dict()
    out["n_runs"] = [int(d.n_runs) for d in data]
    ok = ~fr.flagged
    try:
        emp = fit_empirical_gamma(fr.x[ok], fr.gamma[ok], fr.gamma_err[ok])
        out["empirical_gamma"] = {"c": emp.c.tolist(), "residual_rms": emp.residual_rms,
                                  "n_points": emp.n_points}
    except (DomainError, ConvergenceError) as exc:
        out["empirical_gamma"] = {"error": str(exc)}
    return out


def cmd_fit(args) -> int:
    p = _params(args)
    data, bins = read_g2_dir(args.g2dir)
    res = run_fit(data, bins, p, workers(args.parallel, len(data)), args.zeta, args.n_starts)
    target = Path(args.out)
    out = Outputs(target.parent)
    out.write_json(target.name, res)
    write_manifest(out, sys.argv, p.to_config(), None)
    print(f"zeta {res['zeta']:.4g} +- {res['zeta_err']:.2g}")
    return EXIT_OK


# -- exponent ---------------------------------------------------------------------------


def run_exponent(nbar_csv, p: PhysicalParams, zeta: float, zeta_err: float,
                 x_range: tuple[float, float], out: Outputs) -> dict:
    header, arr = read_columns(nbar_csv)
    for col in ("x", "nbar", "nbar_err"):
        if col not in header:
            raise DataError(f"{nbar_csv}: missing column {col}")
    x, nbar, nerr = (arr[:, header.index(c)] for c in ("x", "nbar", "nbar_err"))
    keep = (x > 0) & (x < 1)
    fl = density_fluctuations_from_nbar(x[keep], nbar[keep], p, zeta, zeta_err, nerr[keep])
    out.write_csv("fluctuations_vs_x.csv", ["x", "variance", "variance_err", "variance_err_stat"],
                  [fl.x, fl.variance, fl.err, fl.err_stat])
    fit = fit_power_law(fl.x, fl.variance, x_range)
    rep = {"exponent": fit.exponent, "err": fit.err, "x_range": list(fit.x_range),
           "n_points": fit.n_points, "prefactor": fit.prefactor, "zeta": zeta, "zeta_err": zeta_err}
    out.write_json("exponent.json", rep)
    return rep


def cmd_exponent(args) -> int:
    p = _params(args)
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"input not found: {src}")
    out = Outputs(args.out or src.parent, args.plot, logy=True)
    rep = run_exponent(src, p, args.zeta, args.zeta_err, args.range, out)
    write_manifest(out, sys.argv, p.to_config(), None)
    print(f"exponent {rep['exponent']:.4f} +- {rep['err']:.4f} ({rep['n_points']} points)")
    return EXIT_OK


# -- pipeline ---------------------------------------------------------------------------


def cmd_pipeline(args) -> int:
    p = _params(args)
    n = workers(args.parallel, args.runs)
    log.info("priming kernels for %d runs", args.runs)
    _STATE.update(_analysis_state(args))
    _STATE.update(args=args, seed=args.seed, p=p, cache=_prime_cache(p, args, args.seed, args.runs))
    edges, nbar_edges = _STATE["edges"], _STATE["nbar_edges"]
    log.info("synthesizing and analysing with %d worker(s)", n)
    runs = _pool_map(_analyze_one, range(args.runs), n)
    _STATE.pop("cache", None)
    res = combine_runs(runs, edges, nbar_edges, p)
    out = Outputs(args.out, args.plot)
    meta = write_analysis(res, out)
    log.info("fitting %d coupling bins", len(meta["bins"]))
    data = [res.bins[b["index"]] for b in meta["bins"]]
    fit = run_fit(data, meta["bins"], p, workers(args.parallel, len(data)), n_starts=args.n_starts)
    fit["truth"] = {"zeta": args.zeta, "gamma_profile": repr(CuspGammaProfile(peak=TWO_PI * args.gamma_peak_hz))}
    out.write_json("fit.json", fit)
    out.logy = True
    rep = run_exponent(out.root / "nbar_vs_x.csv", p, fit["zeta"], fit["zeta_err"], args.range, out)
    write_manifest(out, sys.argv, p.to_config(), args.seed, {"runs": args.runs})
    print(f"zeta {fit['zeta']:.4g} +- {fit['zeta_err']:.2g}; "
          f"exponent {rep['exponent']:.4f} +- {rep['err']:.4f}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dicke-lab", description="Driven-dissipative Dicke model toolchain.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None, out_required=False):
        sp.add_argument("--config", help="flat key = value parameter file")
        if out_required:
            sp.add_argument("--out", required=True)
        elif out_default is not None:
            sp.add_argument("--out", default=out_default)
        sp.add_argument("--plot", action="store_true", help="write an SVG next to every CSV")

    def sweep_opts(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--runs", type=int, default=372)
        sp.add_argument("--zeta", type=float, default=60.0)
        sp.add_argument("--atom-loss", type=float, default=0.0)
        sp.add_argument("--gamma-peak-hz", type=float, default=1000.0)
        sp.add_argument("--parallel", type=int, default=None)

    def analysis_opts(sp):
        sp.add_argument("--x-lo", type=float, default=0.55, help="lowest coupling analysed")
        sp.add_argument("--coarse-width", type=float, default=0.05, help="coupling-bin width below x = 0.9")
        sp.add_argument("--fine-width", type=float, default=0.01, help="coupling-bin width above x = 0.9")
        sp.add_argument("--nbar-width", type=float, default=0.005, help="x-bin width of nbar_vs_x.csv")
        sp.add_argument("--subtrace-min", type=float, default=4e-3, help="shortest subtrace (s)")
        sp.add_argument("--subtrace-max", type=float, default=50e-3, help="longest subtrace (s)")
        sp.add_argument("--subtrace-ratio", type=float, default=1.1, help="length ratio of neighbours")
        sp.add_argument("--max-lag", type=float, default=1e-3, help="largest g2 lag (s)")

    sp = sub.add_parser("meanfield", help="mean-field steady state and renormalized parameters")
    common(sp, ".")
    sp.add_argument("--zeta", type=float, default=0.0)
    sp.add_argument("--sweep", type=_sweep, default=_sweep("0:2:201"), help="X0:X1:N")
    sp.set_defaults(func=cmd_meanfield)

    sp = sub.add_parser("spectrum", help="g1 and g2 of the linearized model")
    common(sp, ".")
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--gamma-hz", type=float, default=250.0)
    sp.add_argument("--zeta", type=float, default=0.0)
    sp.add_argument("--phi", type=float, default=0.0)
    sp.add_argument("--nb", type=float, default=None, help="background photon number (default r_b/(2 kappa eta))")
    sp.add_argument("--tau-max", type=float, default=None, help="seconds (default 10/omega_s)")
    sp.add_argument("--points", type=int, default=2001)
    sp.add_argument("--method", choices=("fft", "quad"), default="fft")
    sp.add_argument("--pairing", choices=("consistent", "printed"), default="consistent")
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("closed", help="closed-system ground-state fluctuations")
    common(sp, ".")
    sp.add_argument("--sweep", type=_sweep, default=_sweep("0:0.999:1000"), help="X0:X1:N")
    sp.add_argument("--range", type=_range, default=(0.9, 0.999))
    sp.set_defaults(func=cmd_closed)

    sp = sub.add_parser("synth", help="synthetic click traces")
    common(sp, out_required=True)
    sweep_opts(sp)
    sp.add_argument("--format", choices=("bin", "csv"), default="bin")
    sp.add_argument("--stationary-x", type=float, default=None, help="one stationary block instead of sweeps")
    sp.add_argument("--gamma-hz", type=float, default=250.0)
    sp.add_argument("--phi", type=float, default=0.0)
    sp.add_argument("--duration", type=float, default=10.0)
    sp.set_defaults(func=cmd_synth, runs=1)

    sp = sub.add_parser("analyze", help="transition, photon number and binned g2 of click traces")
    common(sp, out_required=True)
    sp.add_argument("--trace", nargs="+", required=True, help="trace files or directories")
    analysis_opts(sp)
    sp.add_argument("--atom-loss", type=float, default=None, help="override the traces' metadata")
    sp.add_argument("--parallel", type=int, default=None)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("fit", help="gamma per bin and global zeta from an analyze directory")
    sp.add_argument("--config")
    sp.add_argument("--g2dir", required=True)
    sp.add_argument("--out", default="fit.json")
    sp.add_argument("--zeta", type=float, default=None, help="fix zeta instead of fitting it")
    sp.add_argument("--n-starts", type=int, default=5)
    sp.add_argument("--parallel", type=int, default=None)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("exponent", help="density fluctuations and power-law exponent")
    common(sp, None)
    sp.add_argument("--in", dest="input", required=True, help="nbar_vs_x.csv")
    sp.add_argument("--out", default=None, help="directory (default: next to the input)")
    sp.add_argument("--zeta", type=float, required=True)
    sp.add_argument("--zeta-err", type=float, default=0.0)
    sp.add_argument("--range", type=_range, default=(0.9, 0.99))
    sp.set_defaults(func=cmd_exponent)

    sp = sub.add_parser("pipeline", help="synth, analyze, fit and exponent end to end")
    common(sp, out_required=True)
    sweep_opts(sp)
    analysis_opts(sp)
    sp.add_argument("--n-starts", type=int, default=5)
    sp.add_argument("--range", type=_range, default=(0.9, 0.99))
    sp.set_defaults(func=cmd_pipeline)
    return ap


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (SingularityError, ConvergenceError, UnrealizableCovarianceError,
                        ZeroDivisionError, np.linalg.LinAlgError)):
        return EXIT_SINGULAR
    return EXIT_DATA


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    for name in ("points", "runs"):
        if getattr(args, name, 1) < 1:
            parser.error(f"--{name} must be >= 1")
    try:
        return args.func(args)
    except (DickeLabError, OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        code = _exit_code(exc)
        print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}),
              file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
