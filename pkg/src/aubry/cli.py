"""Command-line front end: parses the run configuration, orchestrates
the pipelines, and emits CSV/JSON artifacts, gnuplot scripts, and a
manifest with content hashes.

Exit codes: 0 all enabled checks passed; 2 configuration error;
3 unconverged computation; 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .action import ConfigGrid, build_kernel, kernel_to_csv
from .barrier import (UnconvergedError, aubry_momenta, mane_momenta, mane_set,
                      mather_set, peierls_barrier, static_classes,
                      triangle_defect, weak_kam_residual)
from .config import ConfigError, RunConfig, default_config_text, load_config
from .critical import criticality_class, min_mean_cycle
from .dynamics import make_model
from .symplectic import cosine_shift, invariance_report
from . import phase as ph

log = logging.getLogger("aubry")

COMMANDS = ("alpha", "barrier", "aubry", "mane", "mather", "phase-barrier",
            "phase-sets", "invariance", "all")


class InternalInvariantError(RuntimeError):
    pass


def _fmt(x):
    return f"{x:.17g}"


def _write_json(path, obj):
    def clean(v):
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in sorted(v.items(), key=lambda kv: str(kv[0]))}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.ndarray):
            return [clean(x) for x in v.tolist()]
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating, float)):
            v = float(v)
            return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else v)
        if isinstance(v, (np.bool_,)):
            return bool(v)
        return v
    with open(path, "w", newline="\n") as fh:
        json.dump(clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_matrix_csv(path, mat, header):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {header}\n")
        for row in np.atleast_2d(mat):
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Pipeline:
    """Shared state across the commands of one run; heavyweight objects
    (kernel, barrier table, phase graph) are computed once."""

    def __init__(self, cfg: RunConfig, outdir):
        self.cfg = cfg
        self.outdir = outdir
        self.model = make_model(cfg.model_name, **cfg.model_params)
        self.artifacts = {}
        self.timings = {}
        self.flags = {}
        self._kernel = None
        self._crit = None
        self._table = None
        self._graph = None
        self._tables = {}

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[name] = round(time.perf_counter() - t0, 3)
        return out

    def emit(self, name, writer):
        path = os.path.join(self.outdir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        writer(path)
        self.artifacts[name] = path
        return path

    # -- shared stages -------------------------------------------------
    @property
    def kernel(self):
        if self._kernel is None:
            cfg = self.cfg
            grid = ConfigGrid(cfg.n)
            self._kernel = self._timed("kernel", lambda: build_kernel(
                self.model, grid, K=cfg.substeps, refine=cfg.refine,
                threads=cfg.threads))
            self.emit("kernel.csv", lambda p: kernel_to_csv(self._kernel, p))
        return self._kernel

    @property
    def critical(self):
        if self._crit is None:
            self._crit = self._timed("alpha", lambda: min_mean_cycle(self.kernel))
        return self._crit

    @property
    def table(self):
        if self._table is None:
            cfg = self.cfg
            kern = self.kernel
            crit = self.critical
            self._table = self._timed("barrier", lambda: peierls_barrier(
                kern, crit.alpha,
                n_min=cfg.barrier_n_min or None,
                n_max=cfg.barrier_n_max or None,
                window=cfg.barrier_window, tol_fix=cfg.tol_fix,
                threads=cfg.threads))
            self.flags["barrier_converged"] = self._table.converged
            if not self._table.converged:
                raise UnconvergedError(
                    f"barrier unconverged after {self._table.iterations} iterations "
                    f"(last decrement {self._table.max_last_decrement:g})")
            self.emit("barrier.csv", self._write_barrier)
        return self._table

    def _write_barrier(self, path):
        t = self._table
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# n={t.n} alpha={_fmt(t.alpha_used)} iterations={t.iterations} "
                     f"converged={t.converged} tol_fix={_fmt(t.tol_fix)}\n")
            for row in t.h:
                fh.write(",".join(_fmt(x) for x in row) + "\n")

    @property
    def phase_graph(self):
        if self._graph is None:
            cfg = self.cfg
            grid = ph.PhaseGrid(cfg.nq, cfg.np_, cfg.p_max)
            alpha = self.critical.alpha
            self._graph = self._timed("phase_graph", lambda: ph.build_phase_graph(
                self.model, grid, alpha, K_sub=cfg.flow_substeps))
        return self._graph

    def phase_schedule(self):
        delta = self.phase_graph.grid.delta
        return [m * delta for m in self.cfg.eps_schedule]

    # -- commands -------------------------------------------------------
    def cmd_alpha(self):
        crit = self.critical
        cfg = self.cfg
        slope_checks = {}
        if cfg.slope_iters >= 0:
            n_it = cfg.slope_iters or min(10 * cfg.n, 1280)
            for name, shift in (("plus", crit.alpha + 0.5), ("minus", crit.alpha - 0.5)):
                res = criticality_class(self.kernel, shift, n_iters=n_it,
                                        tol_slope=cfg.tol_slope,
                                        threads=cfg.threads)
                slope_checks[name] = {"shift": res.shift, "slope": res.slope,
                                      "classification": res.classification}
        self.emit("alpha.json", lambda p: _write_json(p, {
            "alpha": crit.alpha,
            "cycle": crit.cycle,
            "mean_residual": crit.mean_residual,
            "min_mean": crit.min_mean,
            "trichotomy": slope_checks,
        }))
        return True

    def cmd_barrier(self):
        cfg = self.cfg
        table = self.table
        res = weak_kam_residual(table, self.kernel, threads=cfg.threads)
        tri = triangle_defect(table.h)
        diag_min = float(table.h.diagonal().min())
        self.flags["weak_kam_residual"] = res
        self.flags["triangle_defect"] = tri
        ok = res <= cfg.tol_fix and tri <= 1e-9 and abs(diag_min) <= cfg.resolved_tol_diag()
        if tri > 1e-9:
            raise InternalInvariantError(f"triangle inequality violated by {tri:g}")
        return ok

    def _sets(self):
        cfg = self.cfg
        table = self.table
        tol_diag = cfg.resolved_tol_diag()
        aubry = aubry_momenta(table, self.kernel, self.model, tol_diag)
        nodes, wits, defects = mane_set(table, cfg.tol_gap,
                                        aubry_nodes=aubry.projected)
        classes = static_classes(table, aubry.projected, cfg.tol_class)
        reps = [c[0] for c in classes.classes]
        momenta = mane_momenta(table, wits, sources=reps,
                               aubry_nodes=aubry.projected, tol_gap=cfg.tol_gap)
        mather = mather_set(table, self.critical, self.kernel, tol=tol_diag,
                            aubry_nodes=aubry.projected)
        return aubry, (nodes, wits, defects, momenta), classes, mather

    def cmd_sets(self):
        cfg = self.cfg
        aubry, mane, classes, mather = self._sets()
        nodes, wits, defects, momenta = mane
        n = self.table.n
        aset = set(int(x) for x in aubry.projected)
        mset = set(int(x) for x in mather)
        nset = set(int(x) for x in nodes)
        if not (mset <= aset <= nset):
            raise InternalInvariantError("set inclusions mather <= aubry <= mane violated")
        class_of = {}
        for ci, cls in enumerate(classes.classes):
            for node in cls:
                class_of[node] = ci
        records = []
        for j in sorted(nset):
            records.append({
                "node": j,
                "q": j / n,
                "momenta": momenta.get(j, []),
                "aubry": j in aset,
                "mather": j in mset,
                "class": class_of.get(j, -1),
                "witness": list(wits.get(j, ())),
                "defect": float(defects[j]),
            })
        self.emit("sets.json", lambda p: _write_json(p, {
            "alpha": self.critical.alpha,
            "tolerances": {"tol_diag": cfg.resolved_tol_diag(),
                           "tol_gap": cfg.tol_gap, "tol_class": cfg.tol_class},
            "aubry_momenta": {int(i): float(m) for i, m in
                              zip(aubry.projected, aubry.momenta)},
            "static_classes": classes.classes,
            "quotient_metric": classes.quotient_metric,
            "nodes": records,
        }))
        return True

    def cmd_phase_barrier(self):
        cfg = self.cfg
        g = self.phase_graph
        schedule = self.phase_schedule()
        tdp = cfg.resolved_tol_diag_phase(g.grid.delta)
        au = self._timed("phase_aubry", lambda: ph.symplectic_aubry_set(
            g, schedule[0], tdp, tol_energy=cfg.tol_energy,
            n_min=cfg.phase_n_min or None, window=cfg.phase_window))
        if au.size == 0:
            raise UnconvergedError("empty symplectic Aubry set; raise tol_diag_phase")
        qa, pa = g.grid.center(au)
        gradn = (np.abs(self.model.dH_dq(qa, pa, 0.0))
                 + np.abs(self.model.dH_dp(qa, pa, 0.0)))
        src = int(au[int(np.argmin(gradn))])
        values, eps_idx, per = self._timed("phase_barrier", lambda: ph.phase_barrier_all(
            g, schedule, src, n_min=cfg.phase_n_min or None,
            n_max=cfg.phase_n_max or None, window=cfg.phase_window,
            tol_fix=cfg.tol_fix, levels=cfg.budget_levels,
            trend_slack=cfg.trend_slack, tables=self._tables))
        rng = np.random.default_rng(cfg.seed)
        finite = np.flatnonzero(np.isfinite(values))
        take = rng.choice(finite, size=min(64, finite.size), replace=False)
        qs, ps = g.grid.center(take)
        self.emit("phase_barrier.json", lambda p: _write_json(p, {
            "source_cell": src,
            "source_center": list(g.grid.center(src)),
            "schedule": schedule,
            "delta": g.grid.delta,
            "finite_cells": int(finite.size),
            "escaped_cells": int(g.escaped.sum()),
            "samples": [{"cell": int(c), "q": float(q), "p": float(pp),
                         "value": float(values[c]),
                         "reported_eps": schedule[int(eps_idx[c])],
                         "per_eps": [float(x) for x in per[c]]}
                        for c, q, pp in zip(take, qs, ps)],
        }))
        return True

    def cmd_phase_sets(self):
        cfg = self.cfg
        g = self.phase_graph
        schedule = self.phase_schedule()
        eps_oper = schedule[0]
        tdp = cfg.resolved_tol_diag_phase(g.grid.delta)
        au = self._timed("phase_aubry", lambda: ph.symplectic_aubry_set(
            g, eps_oper, tdp, tol_energy=cfg.tol_energy,
            n_min=cfg.phase_n_min or None, window=cfg.phase_window))
        if au.size == 0:
            raise UnconvergedError("empty symplectic Aubry set")
        qa, pa = g.grid.center(au)
        gradn = (np.abs(self.model.dH_dq(qa, pa, 0.0))
                 + np.abs(self.model.dH_dp(qa, pa, 0.0)))
        reps = [int(au[int(np.argmin(gradn))])]
        cells, wits, defects = self._timed("phase_mane", lambda: ph.symplectic_mane_set(
            g, eps_oper, np.array(reps), cfg.tol_gap,
            n_min=cfg.phase_n_min or None, window=cfg.phase_window,
            tol_fix=cfg.tol_fix, levels=cfg.budget_levels, tables=self._tables))
        mather = ph.symplectic_mather_set(g, au)
        aset = set(int(x) for x in au)
        nset = set(int(x) for x in cells)
        # membership CSV over all involved cells
        rows = []
        for c in sorted(aset | nset):
            q, p = g.grid.center(c)
            rows.append((q, p, int(c in aset), int(c in nset),
                         int(c in set(int(x) for x in mather)),
                         float(defects[c]) if math.isfinite(defects[c]) else math.inf))
        def write_csv(path):
            with open(path, "w", newline="\n") as fh:
                fh.write("# q,p,aubry,mane,mather,defect\n")
                for q, p, a, nn, mm, d in rows:
                    fh.write(f"{_fmt(q)},{_fmt(p)},{a},{nn},{mm},{_fmt(d)}\n")
        self.emit("phase_sets.csv", write_csv)
        self.flags["phase_aubry_cells"] = int(au.size)
        self.flags["phase_mane_cells"] = int(cells.size)
        return True

    def cmd_invariance(self):
        cfg = self.cfg
        rep = self._timed("invariance", lambda: invariance_report(
            self.model, cosine_shift(cfg.shift_amplitude), n=cfg.n,
            K=cfg.substeps, nq=cfg.nq, p_max=cfg.p_max,
            flow_substeps=cfg.flow_substeps,
            eps_schedule_mult=cfg.eps_schedule, levels=cfg.budget_levels,
            tol_identity=cfg.tol_cross, tol_gap=cfg.tol_gap,
            tol_class=cfg.tol_class, seed=cfg.seed, threads=cfg.threads,
            barrier_window=cfg.barrier_window))
        self.emit("invariance.json", lambda p: _write_json(p, rep.as_dict()))
        if rep.inconclusive:
            raise UnconvergedError("invariance report inconclusive "
                                   "(unconverged barrier or unreachable cells)")
        return rep.passed

    def cmd_plots(self):
        plots = {
            "plots/barrier_heatmap.plt": _plot_barrier_heatmap,
            "plots/barrier_diagonal.plt": _plot_barrier_diagonal,
            "plots/phase_sets.plt": _plot_phase_sets,
        }
        for name, render in plots.items():
            needed = render.__needs__
            missing = [a for a in needed if a not in self.artifacts]
            if missing:
                raise FileNotFoundError(
                    f"plot {name} needs missing artifact(s): {', '.join(missing)}")
            self.emit(name, lambda p, r=render: r(p, self))
        return True

    def write_manifest(self, command, status):
        cfg = self.cfg
        listing = {}
        for name, path in sorted(self.artifacts.items()):
            listing[name] = {"sha256": _sha256(path),
                             "bytes": os.path.getsize(path)}
        _write_json(os.path.join(self.outdir, "manifest.json"), {
            "command": command,
            "status": status,
            "versions": {"aubry": __version__,
                         "numpy": np.__version__,
                         "kernels_backend": kernels.BACKEND,
                         "python": sys.version.split()[0]},
            "config": {
                "model": {"name": cfg.model_name, **cfg.model_params},
                "map": {"shift_amplitude": cfg.shift_amplitude},
                "grid": {"n": cfg.n, "substeps": cfg.substeps,
                         "refine": cfg.refine},
                "phase": {"nq": cfg.nq, "np": cfg.np_, "p_max": cfg.p_max,
                          "flow_substeps": cfg.flow_substeps,
                          "budget_levels": cfg.budget_levels,
                          "eps_schedule": list(cfg.eps_schedule)},
                "tolerances": {"tol_diag": cfg.resolved_tol_diag(),
                               "tol_gap": cfg.tol_gap,
                               "tol_class": cfg.tol_class,
                               "tol_energy": cfg.tol_energy,
                               "tol_fix": cfg.tol_fix,
                               "tol_cross": cfg.tol_cross},
                "run": {"seed": cfg.seed, "threads": cfg.threads},
            },
            "timings_s": self.timings,
            "flags": self.flags,
            "artifacts": listing,
        })


def _plot_barrier_heatmap(path, pipe):
    with open(path, "w", newline="\n") as fh:
        fh.write("""# barrier heatmap
set datafile separator ","
set datafile commentschars "#"
set title "Peierls barrier h(q_i, q_j)"
set xlabel "target node j"
set ylabel "source node i"
set view map
plot "../barrier.csv" matrix with image notitle
""")
_plot_barrier_heatmap.__needs__ = ("barrier.csv",)


def _plot_barrier_diagonal(path, pipe):
    n = pipe.cfg.n
    with open(path, "w", newline="\n") as fh:
        fh.write(f"""# diagonal profile h(q, q)
set datafile separator ","
set datafile commentschars "#"
set title "barrier diagonal h(q, q)"
set xlabel "q"
set ylabel "h"
plot "../barrier.csv" matrix every :::0::{n - 1} using (($1)/{n}.0):(($1 == $2) ? $3 : 1/0) with points pt 7 ps 0.5 notitle
""")
_plot_barrier_diagonal.__needs__ = ("barrier.csv",)


def _plot_phase_sets(path, pipe):
    model = pipe.model
    overlay = ""
    if model.separatrix_expr is not None and model.separatrix_expr != "0":
        expr = model.separatrix_expr
        overlay = (f", {expr} with lines lc rgb 'black' title 'critical level', "
                   f"-({expr}) with lines lc rgb 'black' notitle")
    elif model.separatrix_expr is None:
        overlay = ""  # no analytic level curve for this model
    with open(path, "w", newline="\n") as fh:
        fh.write(f"""# phase portrait with computed sets
set datafile separator ","
set datafile commentschars "#"
set title "symplectic Aubry/Mane cells"
set xlabel "q"
set ylabel "p"
plot "../phase_sets.csv" using 1:($4 == 1 ? $2 : 1/0) with points pt 5 ps 0.4 lc rgb 'orange' title 'Mane', \\
     "../phase_sets.csv" using 1:($3 == 1 ? $2 : 1/0) with points pt 7 ps 0.6 lc rgb 'red' title 'Aubry'{overlay}
""")
_plot_phase_sets.__needs__ = ("phase_sets.csv",)


def run(command, cfg: RunConfig, outdir):
    """Execute one pipeline command; returns process exit status."""
    os.makedirs(outdir, exist_ok=True)
    pipe = Pipeline(cfg, outdir)
    steps = {
        "alpha": [pipe.cmd_alpha],
        "barrier": [pipe.cmd_barrier],
        "aubry": [pipe.cmd_barrier, pipe.cmd_sets],
        "mane": [pipe.cmd_barrier, pipe.cmd_sets],
        "mather": [pipe.cmd_barrier, pipe.cmd_sets],
        "phase-barrier": [pipe.cmd_phase_barrier],
        "phase-sets": [pipe.cmd_phase_sets],
        "invariance": [pipe.cmd_invariance],
        "all": [pipe.cmd_alpha, pipe.cmd_barrier, pipe.cmd_sets,
                pipe.cmd_phase_barrier, pipe.cmd_phase_sets,
                pipe.cmd_invariance, pipe.cmd_plots],
    }[command]
    ok = True
    try:
        for step in steps:
            ok = bool(step()) and ok
    except UnconvergedError as exc:
        log.error("unconverged: %s", exc)
        pipe.write_manifest(command, "unconverged")
        return 3
    except InternalInvariantError as exc:
        log.error("internal invariant violation: %s", exc)
        pipe.write_manifest(command, "invariant-violation")
        return 4
    status = "passed" if ok else "check-failed"
    pipe.write_manifest(command, status)
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="aubry",
        description="Aubry-Mather objects and phase-space chain barriers "
                    "for time-periodic Hamiltonians on the circle.")
    parser.add_argument("--config", default=os.environ.get("AUBRY_CONFIG"),
                        help="path to the run configuration file")
    parser.add_argument("--out", default=os.environ.get("AUBRY_OUT"),
                        help="output directory (overrides config)")
    parser.add_argument("--command", default=os.environ.get("AUBRY_COMMAND", "all"),
                        choices=COMMANDS)
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("AUBRY_THREADS", "0")) or None)
    parser.add_argument("--verbose", action="store_true",
                        default=os.environ.get("AUBRY_VERBOSE", "") not in ("", "0"))
    parser.add_argument("--print-config", action="store_true",
                        help="print a template configuration and exit")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if args.print_config:
        print(default_config_text(), end="")
        return 0
    try:
        cfg = load_config(args.config) if args.config else RunConfig().validate()
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    if args.out:
        cfg.out = args.out
    if args.threads:
        cfg.threads = args.threads
    return run(args.command, cfg, cfg.out)


if __name__ == "__main__":
    sys.exit(main())
