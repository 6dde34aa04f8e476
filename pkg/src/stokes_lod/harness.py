"""Experiment drivers: basis decay, localization error and convergence.

Every experiment writes CSV files whose first line is a comment with the
SHA-256 of the canonical configuration and the seed, followed by a header
row.  Floats are written with 17 significant digits, so repeated runs with
the same configuration give identical bytes.
"""
import csv
import hashlib
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .coeffs import RandomCoefficientSpec, generate_multiscale_coefficient, inject_to_fine
from .cr_fem import assemble_operators, norms
from .exceptions import DomainError
from .lod_basis import (GLOBAL, compute_basis, default_threads, localization_error, measure_decay,
                        solve_basis)
from .mesh import MAX_LEVEL, build_hierarchy, face_patch_mask
from .solver import compute_errors, divergence_ratio, solve_fine_reference, solve_lod

logger = logging.getLogger(__name__)

EXPERIMENTS = ("decay", "localization", "convergence", "solve")

# keys that do not influence the numbers
_NOT_HASHED = {"out", "threads", "timings"}


def rotation_force(x, y):
    """The load ``f(x, y) = (-y, x)``."""
    return np.stack([-np.asarray(y, dtype=float), np.asarray(x, dtype=float)], axis=1)


@dataclass
class ExperimentConfig:
    """Parameters of one experiment run.

    Mesh sizes are given as levels: level ``k`` means ``2**-k``.  ``ell``
    entries are patch orders or ``None`` for global patches.
    """

    experiment: str
    coarse: list
    fine: int
    eps: int
    ell: list
    seed: int = 0
    out: str = "results"
    threads: int = None
    k_max: int = None
    low: float = 0.1
    high: float = 1.0
    inclusion_value: float = 10.0
    inclusion_width: float = 4.0
    timings: bool = False

    def validate(self):
        """Raise :class:`DomainError` for inconsistent parameters."""
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {self.experiment!r}")
        if not self.coarse:
            raise DomainError("at least one coarse level is required")
        if self.experiment == "solve" and (len(self.coarse) != 1 or len(self.ell) != 1):
            raise DomainError("solve takes exactly one coarse level and one ell")
        if not self.ell:
            raise DomainError("at least one ell is required")
        for e in self.ell:
            if e is not GLOBAL and e < 1:
                raise DomainError(f"ell must be >= 1 or 'global', got {e}")
        if self.fine > MAX_LEVEL:
            raise DomainError(f"fine level {self.fine} exceeds the limit {MAX_LEVEL}")
        if not self.fine >= self.eps >= max(self.coarse):
            raise DomainError(f"need fine ({self.fine}) >= eps ({self.eps}) >= coarse "
                              f"({max(self.coarse)}) levels")
        if min(self.coarse) < 0:
            raise DomainError("levels must be non-negative")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not 0 < self.low <= self.high:
            raise DomainError("need 0 < low <= high")
        return self

    @property
    def coefficient_spec(self):
        return RandomCoefficientSpec(self.eps, seed=self.seed, low=self.low, high=self.high,
                                     inclusion_value=self.inclusion_value,
                                     inclusion_width=self.inclusion_width)

    def canonical(self):
        """``key=value`` lines of everything that affects the results."""
        lines = []
        for f in fields(self):
            if f.name in _NOT_HASHED:
                continue
            lines.append(f"{f.name}={format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def sha256(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def default_config(experiment):
    """Desk-scale defaults: coefficient on ``2**-5``, fine mesh ``2**-7``."""
    if experiment == "convergence":
        return ExperimentConfig(experiment, coarse=[1, 2, 3, 4], fine=7, eps=5, ell=[1, 2, 3])
    if experiment == "solve":
        return ExperimentConfig(experiment, coarse=[3], fine=7, eps=5, ell=[3])
    return ExperimentConfig(experiment, coarse=[1, 2, 3], fine=7, eps=5, ell=[1, 2, 3])


def format_value(v):
    if v is None:
        return "global"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def parse_levels(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise DomainError(f"expected a comma separated list of integers, got {text!r}") from None


def parse_ells(text):
    out = []
    for t in str(text).split(","):
        t = t.strip()
        if not t:
            continue
        if t.lower() == "global":
            out.append(GLOBAL)
            continue
        try:
            out.append(int(t))
        except ValueError:
            raise DomainError(f"ell must be an integer or 'global', got {t!r}") from None
    return out


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise DomainError(f"expected a boolean, got {text!r}")


_PARSERS = {
    "coarse": parse_levels,
    "fine": int,
    "eps": int,
    "ell": parse_ells,
    "seed": int,
    "out": str,
    "threads": int,
    "k_max": int,
    "low": float,
    "high": float,
    "inclusion_value": float,
    "inclusion_width": float,
    "timings": _parse_bool,
}


def parse_setting(key, value):
    if key not in _PARSERS:
        raise DomainError(f"unknown configuration key {key!r}")
    try:
        return _PARSERS[key](value)
    except ValueError as exc:
        raise DomainError(f"bad value for {key}: {exc}") from None


def read_config_file(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    DomainError
        For malformed lines or unknown keys.
    """
    settings = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            settings[key] = parse_setting(key, value)
    return settings


def build_config(experiment, file_settings=None, overrides=None):
    """Defaults, then the config file, then explicit overrides."""
    cfg = default_config(experiment)
    for source in (file_settings or {}, overrides or {}):
        cfg = replace(cfg, **{k: v for k, v in source.items() if v is not None})
    return cfg.validate()


class _Writer:
    def __init__(self, path, cfg, header):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._fh.write(f"# config_sha256={cfg.sha256()} seed={cfg.seed}\n")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(header)
        self.path = path

    def row(self, values):
        self._csv.writerow([format_value(v) for v in values])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path):
    """Rows of a harness CSV as dictionaries of strings (comment line skipped)."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _threads(cfg):
    return cfg.threads if cfg.threads else default_threads()


def _operators(cfg, coarse_level, hier=None):
    hier = hier or build_hierarchy(min(cfg.coarse), cfg.fine)
    field_eps = generate_multiscale_coefficient(cfg.coefficient_spec, hier)
    nu = inject_to_fine(field_eps, hier)
    hier.coarse_level = coarse_level
    return assemble_operators(hier, nu)


def central_face(mesh):
    """Interior edge whose midpoint is closest to the centre (lowest index on ties)."""
    faces = mesh.interior_edges
    d = np.abs(mesh.edge_midpoints[faces] - 0.5).sum(axis=1)
    return int(faces[np.argmin(d)])


def run_decay(cfg):
    """Energy of prototypical basis functions outside growing patches.

    For each coarse level one file ``decay_H<k>.csv`` with columns
    ``face,component,k,energy_outside`` and one file ``modulus_H<k>.csv``
    holding the modulus of the basis function at each fine barycentre.

    Returns
    -------
    list of str
        Written paths.
    """
    paths = []
    hier = build_hierarchy(min(cfg.coarse), cfg.fine)
    for level in cfg.coarse:
        ops = _operators(cfg, level, hier)
        nrm = norms(ops.space)
        face = central_face(ops.coarse)
        k_max = cfg.k_max
        if k_max is None:
            k_max = 0
            while not face_patch_mask(ops.coarse, face, k_max).all():
                k_max += 1
        dpath = os.path.join(cfg.out, f"decay_H{level}.csv")
        mpath = os.path.join(cfg.out, f"modulus_H{level}.csv")
        with _Writer(dpath, cfg, ["face", "component", "k", "energy_outside"]) as dw, \
                _Writer(mpath, cfg, ["face", "component", "triangle", "x", "y", "modulus"]) as mw:
            for j in range(2):
                bf = solve_basis(ops, face, j, GLOBAL)
                for k in range(k_max + 1):
                    dw.row([face, j, k, measure_decay(bf, k, ops, nrm)])
                v = bf.velocity_vector(ops.space.n_dofs)
                mod = np.linalg.norm(ops.space.barycenter_values(v), axis=1)
                bary = ops.fine.barycenters
                for t in range(ops.fine.n_triangles):
                    mw.row([face, j, t, bary[t, 0], bary[t, 1], mod[t]])
        paths += [dpath, mpath]
    return paths


def run_localization(cfg, on_basis=None):
    """``errloc(H, ell)`` for the configured grid, written to ``localization.csv``.

    ``on_basis(basis)``, if given, is called for every computed basis.

    Returns
    -------
    list of (H, ell, errloc)
    """
    rows = []
    hier = build_hierarchy(min(cfg.coarse), cfg.fine)
    threads = _threads(cfg)
    path = os.path.join(cfg.out, "localization.csv")
    with _Writer(path, cfg, ["H", "ell", "errloc"]) as w:
        for level in cfg.coarse:
            ops = _operators(cfg, level, hier)
            nrm = norms(ops.space)
            glob = compute_basis(ops, GLOBAL, n_jobs=threads)
            if on_basis:
                on_basis(glob)
            for ell in cfg.ell:
                local = glob if ell is GLOBAL else compute_basis(ops, ell, n_jobs=threads)
                if on_basis and local is not glob:
                    on_basis(local)
                err = localization_error(glob, local, nrm)
                H = 2.0 ** -level
                w.row([H, ell, err])
                rows.append((H, ell, err))
                logger.info("H=2^-%d ell=%s errloc=%.3e", level, ell, err)
    return rows


@dataclass
class ErrorTable:
    """Errors per ``(H, ell)`` and observed orders between consecutive ``H``."""

    rows: list = field(default_factory=list)
    divergence: dict = field(default_factory=dict)

    METRICS = ("err_u_h1", "err_u_l2", "err_p_l2", "err_pih_p_l2")

    def add(self, H, ell, record, seconds, div_ratio):
        self.rows.append((H, ell, record, seconds))
        self.divergence[(H, _ell_key(ell))] = div_ratio

    def errors(self, ell, metric):
        """``{H: error}`` for one patch order."""
        return {H: getattr(rec, metric) for H, e, rec, _ in self.rows if e == ell}

    def orders(self, ell, metric):
        """List of ``(H_coarse, H_fine, log2(err(H_coarse) / err(H_fine)))``.

        Orders are only defined where both errors are positive.
        """
        errs = self.errors(ell, metric)
        out = []
        for H in sorted(errs, reverse=True):
            if H / 2 in errs and errs[H] > 0 and errs[H / 2] > 0:
                out.append((H, H / 2, math.log2(errs[H] / errs[H / 2])))
        return out


def _ell_key(ell):
    return -1 if ell is GLOBAL else ell


def run_convergence(cfg, on_basis=None):
    """Errors of the multiscale method against the fine reference.

    Writes ``convergence.csv`` with columns
    ``H,ell,err_u_h1,err_u_l2,err_p_l2,err_pih_p_l2,seconds`` and
    ``convergence_orders.csv`` with observed orders.  ``seconds`` is
    ``nan`` unless ``cfg.timings`` is set, which keeps files reproducible.
    ``on_basis(basis, solution)``, if given, is called after every solve.
    """
    hier = build_hierarchy(min(cfg.coarse), cfg.fine)
    threads = _threads(cfg)
    ops = _operators(cfg, min(cfg.coarse), hier)
    ref = solve_fine_reference(ops, rotation_force)
    table = ErrorTable()
    path = os.path.join(cfg.out, "convergence.csv")
    header = ["H", "ell", *ErrorTable.METRICS, "seconds"]
    with _Writer(path, cfg, header) as w:
        for level in cfg.coarse:
            ops = _operators(cfg, level, hier)
            for ell in cfg.ell:
                start = time.perf_counter()
                basis = compute_basis(ops, ell, n_jobs=threads)
                sol = solve_lod(basis, rotation_force)
                seconds = time.perf_counter() - start
                if on_basis:
                    on_basis(basis, sol)
                rec = compute_errors(ref, sol, ops)
                H = 2.0 ** -level
                table.add(H, ell, rec, seconds, divergence_ratio(sol.velocity, ops))
                w.row([H, ell, *rec.as_tuple(), seconds if cfg.timings else math.nan])
                logger.info("H=2^-%d ell=%s %s", level, ell, rec)
    opath = os.path.join(cfg.out, "convergence_orders.csv")
    with _Writer(opath, cfg, ["ell", "H_coarse", "H_fine", "metric", "order"]) as w:
        for ell in cfg.ell:
            for metric in ErrorTable.METRICS:
                for Hc, Hf, order in table.orders(ell, metric):
                    w.row([ell, Hc, Hf, metric, order])
    return table


def run_solve(cfg):
    """Single multiscale solve; exports the solution vectors as text.

    Files: ``velocity.txt`` (fine CR unknowns), ``pressure_coarse.txt``,
    ``pressure_pp.txt`` and ``errors.csv`` against the fine reference.
    """
    level, ell = cfg.coarse[0], cfg.ell[0]
    ops = _operators(cfg, level)
    basis = compute_basis(ops, ell, n_jobs=_threads(cfg))
    sol = solve_lod(basis, rotation_force)
    ref = solve_fine_reference(ops, rotation_force)
    os.makedirs(cfg.out, exist_ok=True)
    for name, vec in (("velocity", sol.velocity), ("pressure_coarse", sol.pressure),
                      ("pressure_pp", sol.pressure_pp)):
        with open(os.path.join(cfg.out, f"{name}.txt"), "w") as fh:
            fh.write(f"# config_sha256={cfg.sha256()} seed={cfg.seed}\n")
            fh.writelines(f"{v:.17g}\n" for v in vec)
    rec = compute_errors(ref, sol, ops)
    with _Writer(os.path.join(cfg.out, "errors.csv"), cfg,
                 ["H", "ell", *ErrorTable.METRICS, "divergence_ratio"]) as w:
        w.row([2.0 ** -level, ell, *rec.as_tuple(), divergence_ratio(sol.velocity, ops)])
    return sol, rec


RUNNERS = {
    "decay": run_decay,
    "localization": run_localization,
    "convergence": run_convergence,
    "solve": run_solve,
}


def run(cfg, **kwargs):
    cfg.validate()
    logger.info("running %s with %s", cfg.experiment, asdict(cfg))
    return RUNNERS[cfg.experiment](cfg, **kwargs)
