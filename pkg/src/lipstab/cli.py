"""Command-line pipeline: sector bounds, synthesis, certification, training, evaluation.

Exit codes: 0 success, 1 infeasible (reason printed as ``reason: ...``),
2 configuration error. ``LIPSTAB_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .certificate import StabilityCertificate, certify_multipliers, max_level, verify_certificate
from .config import ConfigError, RunConfig, load_config, parse_config
from .policy import Mlp, lipschitz_upper_bound, train
from .sector import compute_sector
from .sim import Controller, lqr_gain, monte_carlo_eval, stats_csv
from .synthesis import NotStabilizableError, SynthesisResult, init_nominal, synthesize
from .model import linearize

OUTPUT_ENV = "LIPSTAB_OUTPUT_DIR"
EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger(__name__)


class Infeasible(Exception):
    """Raised by a command when the problem has no certificate; carries the reason."""


def example_config_text() -> str:
    return resources.files("lipstab").joinpath("data/example.ini").read_text(encoding="utf-8")


class Workspace:
    """Output directory plus the parsed configuration shared by all commands."""

    def __init__(self, config: RunConfig, output_dir: Optional[str] = None):
        self.config = config
        out = output_dir or os.environ.get(OUTPUT_ENV) or config.output_dir
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.model = config.model()
        self.params = config.params()
        self.polytope = config.polytope()

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        return path

    def read(self, name: str) -> Optional[str]:
        path = self.out / name
        return path.read_text(encoding="utf-8") if path.exists() else None


def _matrix_csv(mat) -> str:
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in np.atleast_2d(mat))


# commands -------------------------------------------------------------------------


def cmd_bound_sector(ws: Workspace) -> None:
    cfg = ws.config.certify
    if cfg.K is not None:
        K = np.array(cfg.K)
    else:
        K, _ = _nominal(ws)
    X = ws.polytope.scaled(cfg.delta)
    sector = compute_sector(ws.model, K, cfg.L, X, ws.params, ws.config.synthesis.sector_tol)
    ws.write("sector.csv", sector.to_csv())
    print(f"sector bound written to {ws.out / 'sector.csv'} (all entries tight: {bool(np.all(sector.tight))})")


def _nominal(ws: Workspace):
    try:
        return init_nominal(ws.model, ws.params, ws.polytope, ws.config.synthesis.init_margin,
                            ws.config.synthesis.sector_tol)
    except NotStabilizableError as exc:
        raise Infeasible("not robustly stabilizable") from exc


def cmd_synthesize(ws: Workspace) -> SynthesisResult:
    try:
        result = synthesize(ws.model, ws.params, ws.polytope, ws.config.synthesis)
    except NotStabilizableError as exc:
        raise Infeasible("not robustly stabilizable") from exc
    ws.write("iterations.csv", result.log_csv())
    ws.write("initial_gain.csv", _matrix_csv(result.K0))
    if result.certificate is None:
        raise Infeasible("no feasible iteration")
    ws.write("certificate.txt", result.certificate.to_report())
    ws.write("sector.csv", result.sector.to_csv())
    print(f"L* = {result.L!r}  sigma* = {result.sigma!r}  iterations = {result.iterations}")
    return result


def cmd_certify(ws: Workspace) -> StabilityCertificate:
    cfg = ws.config.certify
    missing = [k for k in ("K", "P") if getattr(cfg, k) is None]
    if missing:
        raise ConfigError([f"[certify] missing key {k!r}" for k in missing])
    K, P = np.array(cfg.K), np.array(cfg.P)
    X = ws.polytope.scaled(cfg.delta)
    if np.min(np.linalg.eigvalsh(0.5 * (P + P.T))) <= 0:
        raise Infeasible("P not PD")
    sector = compute_sector(ws.model, K, cfg.L, X, ws.params, ws.config.synthesis.sector_tol)
    multipliers = certify_multipliers(ws.model, K, P, cfg.L, sector)
    if multipliers is None:
        raise Infeasible("LMI infeasible")
    sigma = cfg.sigma if cfg.sigma is not None else max_level(P, X)
    cert = StabilityCertificate(K, cfg.L, P, multipliers, sigma, X, cfg.delta)
    verdict = verify_certificate(ws.model, cert, sector)
    if not verdict:
        raise Infeasible(verdict.reason)
    ws.write("certificate.txt", cert.to_report())
    print(f"certificate valid: L = {cfg.L!r}  sigma = {sigma!r}  max LMI eigenvalue = {verdict.lmi_max_eig:.3e}")
    return cert


def _certificate(ws: Workspace) -> StabilityCertificate:
    text = ws.read("certificate.txt")
    if text is None:
        return cmd_synthesize(ws).certificate
    return StabilityCertificate.from_report(text)


def cmd_train(ws: Workspace) -> Mlp:
    cert = _certificate(ws)
    result = train(ws.model, cert.K, cert.L, cert.P, cert.sigma, ws.params, ws.config.train)
    ws.write("actor.txt", result.actor.to_text())
    ws.write("critic.txt", result.critic.to_text())
    ws.write("training_log.csv", result.log_csv())
    print(f"trained actor Lipschitz bound = {lipschitz_upper_bound(result.actor)!r} (cap {cert.L!r})")
    return result.actor


def cmd_evaluate(ws: Workspace) -> dict:
    cert = _certificate(ws)
    text = ws.read("actor.txt")
    actor = Mlp.from_text(text) if text is not None else cmd_train(ws)
    ev = ws.config.evaluate
    nom = linearize(ws.model)
    K_lqr, _ = lqr_gain(nom.A, nom.B, np.array(ev.lqr_q), np.array(ev.lqr_r))
    controllers = {
        "lqr": Controller(K_lqr),
        "nominal": Controller(cert.K),
        "trained": Controller(cert.K, actor),
    }
    stats = monte_carlo_eval(ws.model, controllers, ev.n_runs, cert.P, cert.sigma, ws.params, ev.n_steps,
                             ev.tau, ev.seed)
    ws.write("statistics.csv", stats_csv(stats))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", *[f"{name}{suffix}" for name in stats for suffix in ("", "_diverged")]])
    for i in range(ev.n_runs):
        w.writerow([i, *[v for st in stats.values() for v in (repr(float(st.values[i])), int(st.diverged[i]))]])
    ws.write("utilities.csv", buf.getvalue())
    ws.write("lqr_gain.csv", _matrix_csv(K_lqr))
    for name, st in stats.items():
        print(f"{name:8s} median utility = {st.median:.6f}")
    return stats


def cmd_reproduce(ws: Workspace) -> None:
    result = cmd_synthesize(ws)
    actor = cmd_train(ws)
    stats = cmd_evaluate(ws)
    lines = [
        f"L_star,{result.L!r}",
        f"sigma_star,{result.sigma!r}",
        f"iterations,{result.iterations}",
        f"actor_lipschitz,{lipschitz_upper_bound(actor)!r}",
        *[f"median_{name},{st.median!r}" for name, st in stats.items()],
    ]
    ws.write("summary.csv", "quantity,value\n" + "\n".join(lines) + "\n")


COMMANDS = {
    "bound-sector": cmd_bound_sector,
    "synthesize": cmd_synthesize,
    "certify": cmd_certify,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reproduce-example": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipstab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("-c", "--config", help="configuration file (default: shipped example)")
    parser.add_argument("-o", "--output-dir", help=f"output directory (overrides {OUTPUT_ENV} and config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config) if args.config else parse_config(example_config_text())
        if args.print_config:
            sys.stdout.write(config.to_text())
            return EXIT_OK
        ws = Workspace(config, args.output_dir)
        COMMANDS[args.command](ws)
    except ConfigError as exc:
        print("status: config-error", file=sys.stderr)
        for err in exc.errors:
            print(f"reason: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print("status: infeasible")
        print(f"reason: {exc}")
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
