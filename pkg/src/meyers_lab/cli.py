"""Command-line entry point.

Exit codes: 0 success, 1 a reproduction row failed, 2 invalid arguments or
output path, 3 numerical failure (non-convergence, degenerate fit).  Errors are
printed to stderr as JSON ``{"code", "message", "context"}``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field as dc_field, fields
from pathlib import Path

import numpy as np

from . import analysis as an
from . import experiments as ex
from .coeff import CoefficientField, OracleSolution
from .mesh import build_disk_mesh, refine, write_mesh

COMMANDS = ("solve", "verify-oracle", "scan-meyers", "bmo", "threshold", "convergence", "reproduce")

log = logging.getLogger("meyers_lab")


class ValidationError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


@dataclass
class RunConfig:
    command: str
    mu: float | None = None
    field: str | None = None
    rings: int = 4
    sectors: int = 16
    grading: float = 1.0
    refine: int = 0
    rhs: str = "zero"
    bc: str = "zero"
    tol: float = 1e-10
    out: str | None = None
    mesh_out: str | None = None
    levels: int = 3
    p_min: float = 2.0
    p_max: float = 8.0
    p_step: float = 0.25
    csv: str | None = None
    grid: int = 21
    radii_min_exp: int = 6
    quad: int = 64
    mode: str = "lp"
    case: str = "manufactured"
    json: bool = False
    out_dir: str | None = None
    seed: int = 0
    extra: dict = dc_field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in vars(ns).items() if k in names and v is not None})

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.mu is not None and not 0.0 < self.mu < 1.0:
            raise ValidationError("--mu must lie in (0, 1)")
        if self.command == "solve":
            if (self.mu is None) == (self.field is None):
                raise ValidationError("solve needs exactly one of --mu or --field identity")
            if self.field not in (None, "identity"):
                raise ValidationError("--field only accepts 'identity'")
            if self.bc == "oracle" and self.mu is None:
                raise ValidationError("--bc oracle requires --mu")
            if self.bc not in ("zero", "oracle"):
                raise ValidationError("--bc must be zero or oracle")
            parse_rhs(self.rhs)
            if self.sectors % 4 or self.sectors < 8 or self.rings < 2:
                raise ValidationError("need --rings >= 2 and --sectors >= 8 divisible by 4")
            if self.grading < 1.0:
                raise ValidationError("--grading must be >= 1")
        if self.command in ("verify-oracle", "scan-meyers", "bmo", "threshold") and self.mu is None:
            raise ValidationError(f"{self.command} requires --mu")
        if self.command == "scan-meyers" and not (2.0 <= self.p_min < self.p_max and self.p_step > 0):
            raise ValidationError("need 2 <= --p-min < --p-max and --p-step > 0")
        if self.command == "bmo" and self.quad < 64:
            raise ValidationError("--quad must be at least 64")
        if self.command == "threshold" and self.mode not in ("lp", "holder"):
            raise ValidationError("--mode must be lp or holder")
        if self.command == "convergence" and self.case not in ("manufactured", "oracle"):
            raise ValidationError("--case must be manufactured or oracle")
        if self.command == "reproduce" and not self.out_dir:
            raise ValidationError("reproduce requires --out-dir")
        if self.levels < 1 or self.refine < 0:
            raise ValidationError("--levels must be >= 1 and --refine >= 0")


def parse_rhs(text: str):
    """``zero``, ``manufactured`` or ``const:fx,fy``."""
    if text in ("zero", "manufactured"):
        return text
    if text.startswith("const:"):
        try:
            fx, fy = (float(v) for v in text[6:].split(","))
        except ValueError:
            raise ValidationError(f"bad --rhs {text!r}, expected const:<fx>,<fy>") from None
        return (fx, fy)
    raise ValidationError(f"bad --rhs {text!r}")


def _new_file(path):
    """Open ``path`` for writing; refuse to overwrite an existing artifact."""
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise ValidationError(f"output directory {p.parent} does not exist")
    try:
        return open(p, "x", newline="")
    except FileExistsError:
        raise ValidationError(f"{p} already exists; artifacts are write-once") from None
    except OSError as exc:
        raise ValidationError(f"cannot write {p}: {exc}") from None


def _write_csv(path, header, rows):
    if path is None:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
        return
    with _new_file(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _emit(cfg, payload):
    if cfg.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")


# -- commands -----------------------------------------------------------------

def cmd_solve(cfg: RunConfig):
    field = CoefficientField.identity() if cfg.field == "identity" else CoefficientField.example(cfg.mu)
    mesh = build_disk_mesh(cfg.rings, cfg.sectors, cfg.grading)
    for _ in range(cfg.refine):
        mesh = refine(mesh)
    rhs = parse_rhs(cfg.rhs)
    if rhs == "zero":
        F = None
    elif rhs == "manufactured":
        F = ex.manufactured_case(field)[2]
    else:
        c = np.array(rhs)
        F = lambda x, y: np.broadcast_to(c, np.shape(x) + (2,))  # noqa: E731
    g = OracleSolution(cfg.mu).u if cfg.bc == "oracle" else None
    from .fem import solve_problem

    sol, rep = solve_problem(mesh, field, F, g, tol=cfg.tol)
    if not rep.converged:
        raise NumericalFailure("GMRES did not converge", iterations=rep.iterations,
                               relative_residual=rep.relative_residual)
    if cfg.mesh_out:
        _new_file(cfg.mesh_out).close()
        write_mesh(mesh, cfg.mesh_out)
    if cfg.out:
        with _new_file(cfg.out) as fh:
            fh.write("x,y,u\n")
            for (x, y), u in zip(mesh.points, sol.coeffs):
                fh.write(f"{x:.17g},{y:.17g},{u:.17g}\n")
    _emit(cfg, dict(n_vertices=mesh.n_vertices, n_triangles=mesh.n_triangles,
                    iterations=rep.iterations, relative_residual=rep.relative_residual))


def cmd_verify_oracle(cfg: RunConfig):
    res = ex.weak_residual_levels(cfg.mu, cfg.levels, cfg.grading)
    _write_csv(cfg.csv, ["level", "max_weak_residual"],
               [(k, f"{r:.17g}") for k, r in enumerate(res)])


def cmd_scan_meyers(cfg: RunConfig):
    p_grid = np.arange(cfg.p_min, cfg.p_max + 1e-9, cfg.p_step)
    if cfg.refine > 0:
        sol, rep = ex.oracle_fem_solution(cfg.mu, cfg.refine)
        if not rep.converged:
            raise NumericalFailure("GMRES did not converge", iterations=rep.iterations)
        g = sol.grad_norm
    else:
        g = OracleSolution(cfg.mu).grad_norm
    centers, radii = ex.dyadic_origin_balls()
    res = an.reverse_holder_scan(g, None, centers, radii, p_grid)
    rows = [(f"{p:.17g}", f"{m:.17g}", f"{c[0]:.17g}", f"{c[1]:.17g}", f"{r:.17g}")
            for p, m, c, r in zip(res.p_grid, res.max_ratio, res.argmax_center, res.argmax_radius)]
    _write_csv(cfg.csv, ["p", "max_ratio", "argmax_center_x", "argmax_center_y", "argmax_radius"], rows)


def cmd_bmo(cfg: RunConfig):
    est = ex.bmo_example(cfg.mu, cfg.grid, cfg.radii_min_exp, cfg.quad)
    _emit(cfg, dict(value=est.value, argmax_center=list(est.argmax_center),
                    argmax_radius=est.argmax_radius, n_balls=est.n_balls))


def cmd_threshold(cfg: RunConfig):
    if cfg.mode == "lp":
        p_star = an.integrability_threshold(None, cfg.mu, ex.threshold_grid(cfg.mu))
        _emit(cfg, dict(mode="lp", mu=cfg.mu, p_star=p_star, expected=ex.critical_p(cfg.mu)))
    else:
        alpha = an.holder_exponent(OracleSolution(cfg.mu), an.dyadic_radii(2, 12))
        _emit(cfg, dict(mode="holder", mu=cfg.mu, alpha_star=alpha, expected=cfg.mu))


def cmd_convergence(cfg: RunConfig):
    mu = 0.5 if cfg.mu is None else cfg.mu
    if cfg.case == "manufactured":
        rows = ex.manufactured_convergence(mu, cfg.levels)
    else:
        rows = ex.oracle_convergence(mu, cfg.levels)
    if not all(r["converged"] for r in rows):
        raise NumericalFailure("GMRES did not converge on every level")
    keys = ["level", "h", "n_vertices", "error", "rate", "iterations"]
    _write_csv(cfg.csv, keys, [[r[k] for k in keys] for r in rows])


def cmd_reproduce(cfg: RunConfig) -> int:
    from .report import reproduce_paper

    try:
        rows, path = reproduce_paper(cfg.out_dir, cfg.seed)
    except (PermissionError, OSError) as exc:
        raise ValidationError(str(exc)) from None
    failed = [f"{r.check}@mu={r.mu}" for r in rows if not r.passed]
    print(f"wrote {path}; {len(rows) - len(failed)}/{len(rows)} rows passed")
    if failed:
        print("failed rows: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


HANDLERS = {
    "solve": cmd_solve, "verify-oracle": cmd_verify_oracle, "scan-meyers": cmd_scan_meyers,
    "bmo": cmd_bmo, "threshold": cmd_threshold, "convergence": cmd_convergence,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meyers-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def mu_arg(p, required=False):
        p.add_argument("--mu", type=float, required=required, help="example parameter in (0, 1)")

    s = sub.add_parser("solve", help="assemble and solve one Dirichlet problem")
    mu_arg(s)
    s.add_argument("--field", choices=["identity"], help="use A = I instead of the example field")
    s.add_argument("--rings", type=int, default=4)
    s.add_argument("--sectors", type=int, default=16)
    s.add_argument("--grading", type=float, default=1.0)
    s.add_argument("--refine", type=int, default=0)
    s.add_argument("--rhs", default="zero", help="zero | const:<fx>,<fy> | manufactured")
    s.add_argument("--bc", default="zero", choices=["zero", "oracle"])
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--out", help="solution CSV (x,y,u)")
    s.add_argument("--mesh-out", help="ASCII mesh file")
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("verify-oracle", help="weak residual of the exact solution per level")
    mu_arg(s, True)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--grading", type=float, default=1.0)
    s.add_argument("--csv", help="output CSV (stdout if omitted)")

    s = sub.add_parser("scan-meyers", help="reverse-Hölder ratio scan over p")
    mu_arg(s, True)
    s.add_argument("--p-min", type=float, default=2.0)
    s.add_argument("--p-max", type=float, default=8.0)
    s.add_argument("--p-step", type=float, default=0.25)
    s.add_argument("--refine", type=int, default=0, help="0: exact solution; k: FEM on graded level k")
    s.add_argument("--csv")

    s = sub.add_parser("bmo", help="sampled BMO seminorm of the skew coefficient")
    mu_arg(s, True)
    s.add_argument("--grid", type=int, default=21)
    s.add_argument("--radii-min-exp", type=int, default=6)
    s.add_argument("--quad", type=int, default=64)
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("threshold", help="integrability or Hölder threshold of the exact solution")
    mu_arg(s, True)
    s.add_argument("--mode", choices=["lp", "holder"], default="lp")
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("convergence", help="error table over refinement levels")
    mu_arg(s)
    s.add_argument("--case", choices=["manufactured", "oracle"], default="manufactured")
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--csv")

    s = sub.add_parser("reproduce", help="write the full reproduction report")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    return parser


def _error(code: int, message: str, **context) -> int:
    print(json.dumps({"code": code, "message": message, "context": context}, sort_keys=True),
          file=sys.stderr)
    return code


def run(cfg: RunConfig) -> int:
    try:
        cfg.validate()
        status = HANDLERS[cfg.command](cfg)
        return 0 if status is None else status
    except ValidationError as exc:
        return _error(2, str(exc), command=cfg.command)
    except NumericalFailure as exc:
        return _error(3, str(exc), command=cfg.command, **exc.context)
    except an.DegenerateFitError as exc:
        return _error(3, f"degenerate fit: {exc}", command=cfg.command)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(RunConfig.from_args(ns))


if __name__ == "__main__":
    sys.exit(main())
