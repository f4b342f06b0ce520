"""Experiment front end: data generation, single runs, the acceptance-vs-N grid.

Subcommands

    generate-data   simulate the AR(1)-plus-noise model, write `t,y` CSV + sidecar
    run             run one sampler, write records.csv and summary.json
    grid            run the (sampler, N, seed) grid in parallel, write grid.csv
                    and figure1.svg
    analyze         recompute a summary from an existing records.csv

Every command takes --config <path> (JSON) plus flag overrides; all outputs
are deterministic functions of (config, seed), independent of the process
pool's schedule.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .csmc import CsmcConfig, TERMINAL_STANDARD
from .diagnostics import summarize_chain
from .marginal import GaussianRandomWalkPair, MIXTURE_VARIANTS, POSTERIOR_MIXTURE
from .models import (
    LinearGaussianSSM,
    ThetaVector,
    load_observations,
    save_observations,
    simulate_lgssm,
)
from .report import (
    GridCell,
    GridResult,
    RECORDS_CSV_COLUMNS,
    render_figure_svg,
    write_grid_csv,
    write_records_csv,
)
from .rng import RngStream
from .samplers import (
    RandomWalkProposal,
    ideal_barker_kernel,
    ideal_mh_kernel,
    init_ideal_state,
    init_pmmh_state,
    init_trajectory_state,
    make_lg_log_posterior,
    mpgibbs_kernel,
    pgibbs_kernel,
    pmmh_kernel,
    run_chain,
)

SAMPLERS = ("pmmh", "pgibbs", "mpgibbs", "ideal-mh", "ideal-barker")
PAPER_ITERATIONS = 100_000
PAPER_BURN_IN = 10_000


@dataclass
class ExperimentConfig:
    # data generation
    t_count: int = 100
    true_rho: float = 0.9
    true_sigma_x: float = 0.1
    true_sigma2_y: float | None = None  # None: drawn from the IG(2, 2) prior at generation time
    # chains
    iterations: int = 20_000
    burn_in: int = 2_000
    sampler: str = "mpgibbs"
    samplers: tuple = ("pmmh", "mpgibbs")
    n_grid: tuple = (8, 16, 32, 64, 128, 256)
    n_particles: int = 32
    m_slots: int = 2
    seeds: tuple = (1, 2, 3)
    seed: int = 1
    tau: float = 0.0225  # 0.15^2
    variant: str = POSTERIOR_MIXTURE
    terminal_selection: str = TERMINAL_STANDARD
    backward_sampling: bool = True
    paper_scale: bool = False
    data: str | None = None
    out: str = "out"

    def __post_init__(self):
        if self.paper_scale:
            self.iterations = PAPER_ITERATIONS
            self.burn_in = PAPER_BURN_IN
        if min(self.t_count, self.iterations, self.n_particles, self.m_slots) < 1:
            raise ValueError("counts must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn-in must be smaller than the iteration count")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        for s in self.samplers:
            if s not in SAMPLERS:
                raise ValueError(f"unknown sampler {s!r}")
        if self.variant not in MIXTURE_VARIANTS:
            raise ValueError(f"unknown mixture variant {self.variant!r}")
        if self.true_sigma_x <= 0:
            raise ValueError("sigma_x must be positive")
        if not abs(self.true_rho) < 1:
            raise ValueError("data generation needs |rho| < 1")
        if self.true_sigma2_y is not None and self.true_sigma2_y <= 0:
            raise ValueError("sigma2_y must be positive")


def stream_id(*labels) -> int:
    """Stable 63-bit stream id from string labels (cell hashing)."""
    digest = hashlib.sha256("/".join(str(x) for x in labels).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------


def generate_data(config: ExperimentConfig, out_csv: str) -> tuple[np.ndarray, ThetaVector]:
    rng = RngStream(config.seed, stream_id("generate-data"))
    sigma2_y = config.true_sigma2_y
    if sigma2_y is None:
        sigma2_y = 2.0 / float(rng.child(0).gamma(2.0))  # one draw from the IG(2, 2) prior
    theta = ThetaVector(config.true_rho, config.true_sigma_x**2, float(sigma2_y))
    _, y = simulate_lgssm(theta, config.t_count, rng.child(1))
    save_observations(out_csv, y)
    sidecar = {
        "theta": {"rho": theta.rho, "sigma2_x": theta.sigma2_x, "sigma2_y": theta.sigma2_y},
        "seed": config.seed,
        "t_count": config.t_count,
    }
    with open(out_csv + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return y, theta


# ---------------------------------------------------------------------------
# Single-sampler runs
# ---------------------------------------------------------------------------


def _csmc_config(config: ExperimentConfig, n_particles: int) -> CsmcConfig:
    return CsmcConfig(
        n_particles=n_particles,
        backward_sampling=config.backward_sampling,
        terminal_selection=config.terminal_selection,
    )


def run_sampler(config: ExperimentConfig, y: np.ndarray, sampler: str | None = None, n_particles: int | None = None, seed: int | None = None):
    """Run one chain; returns (records, summary)."""
    sampler = sampler or config.sampler
    n = n_particles or config.n_particles
    seed = config.seed if seed is None else seed
    model = LinearGaussianSSM(y)
    proposal = RandomWalkProposal(config.tau)
    pair = GaussianRandomWalkPair(config.tau)
    root = RngStream(seed, stream_id("chain", sampler, n, config.m_slots))
    rng_init = root.child(0)
    chain_rng = root.child(1)
    theta0 = model.sample_prior_theta(rng_init)

    if sampler == "pmmh":
        state = init_pmmh_state(model, theta0, n, rng_init)
        kernel = lambda s, r: pmmh_kernel(s, model, proposal, n, r)
    elif sampler == "ideal-mh":
        log_target = make_lg_log_posterior(model)
        state = init_ideal_state(theta0, log_target)
        kernel = lambda s, r: ideal_mh_kernel(s, log_target, proposal, r)
    elif sampler == "ideal-barker":
        log_target = make_lg_log_posterior(model)
        state = init_ideal_state(theta0, log_target)
        kernel = lambda s, r: ideal_barker_kernel(s, log_target, proposal, r)
    elif sampler == "pgibbs":
        state = init_trajectory_state(model, theta0, n, rng_init)
        cfg = _csmc_config(config, n)
        kernel = lambda s, r: pgibbs_kernel(s, model, proposal, cfg, r)
    elif sampler == "mpgibbs":
        state = init_trajectory_state(model, theta0, n, rng_init)
        cfg = _csmc_config(config, n)
        kernel = lambda s, r: mpgibbs_kernel(s, model, pair, config.m_slots, cfg, r, config.variant)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    records, _ = run_chain(state, kernel, config.iterations, chain_rng)
    if sampler == "pgibbs":
        # the chain caches the path log-density, which is not a Z estimate
        records = [dataclasses.replace(r, log_lik=float("nan")) for r in records]
    summary = summarize_chain(records, config.burn_in)
    return records, summary


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


def _cell_worker(args) -> GridCell:
    config_dict, y_list, sampler, n, seed = args
    config = ExperimentConfig(**config_dict)
    y = np.asarray(y_list, dtype=float)
    start = time.perf_counter()
    try:
        _, summary = run_sampler(config, y, sampler=sampler, n_particles=max(n, 1), seed=seed)
    except Exception as exc:  # recorded per cell; the grid keeps going
        return GridCell(sampler, n, config.m_slots, seed, float("nan"), float("nan"), float("nan"), float("nan"), float("nan"), time.perf_counter() - start, error=repr(exc))
    return GridCell(
        sampler,
        n,
        config.m_slots if sampler == "mpgibbs" else 0,
        seed,
        summary.acceptance,
        summary.iact["rho"],
        summary.iact["sigma2_x"],
        summary.iact["sigma2_y"],
        summary.ess_min,
        time.perf_counter() - start,
    )


def run_grid(config: ExperimentConfig, y: np.ndarray, parallel: bool = True, include_ideal: bool = True) -> GridResult:
    """All (sampler, N, seed) cells plus idealized reference chains."""
    cells_spec = [
        (dataclasses.asdict(config), y.tolist(), sampler, n, seed)
        for sampler in config.samplers
        for n in config.n_grid
        for seed in config.seeds
    ]
    if include_ideal:
        for ideal in ("ideal-mh", "ideal-barker"):
            cells_spec.extend(
                (dataclasses.asdict(config), y.tolist(), ideal, 0, seed) for seed in config.seeds
            )
    if parallel and len(cells_spec) > 1:
        workers = max(1, min(os.cpu_count() or 1, len(cells_spec)))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_worker, cells_spec))
    else:
        cells = [_cell_worker(spec) for spec in cells_spec]
    failures = [c for c in cells if c.error]
    return GridResult(cells=[c for c in cells if not c.error], failures=failures)


def write_grid_outputs(result: GridResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_grid_csv(os.path.join(out_dir, "grid.csv"), result.cells + result.failures)
    by_sampler = {
        s: per_n
        for s, per_n in result.acceptance_by_sampler().items()
        if not s.startswith("ideal-")
    }
    def _ref(name):
        try:
            return result.reference_rate(name)
        except KeyError:
            return None
    svg = render_figure_svg(by_sampler, _ref("ideal-mh"), _ref("ideal-barker"))
    with open(os.path.join(out_dir, "figure1.svg"), "w") as fh:
        fh.write(svg)
    summary = {
        "acceptance": {
            s: {str(n): {"mean": m, "sd": sd} for n, (m, sd) in per_n.items()}
            for s, per_n in result.acceptance_by_sampler().items()
        },
        "failures": [dataclasses.asdict(c) for c in result.failures],
    }
    with open(os.path.join(out_dir, "grid_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory or file")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--burn-in", dest="burn_in", type=int)
    parser.add_argument("--sampler", choices=SAMPLERS)
    parser.add_argument("--n-particles", dest="n_particles", type=int)
    parser.add_argument("--m-params", dest="m_slots", type=int)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--variant", choices=MIXTURE_VARIANTS)
    parser.add_argument("--terminal-selection", dest="terminal_selection")
    parser.add_argument(
        "--backward-sampling", dest="backward_sampling", action=argparse.BooleanOptionalAction
    )
    parser.add_argument("--paper-scale", dest="paper_scale", action="store_true", default=None)
    parser.add_argument("--data", help="observations CSV (t,y)")


def build_config(args: argparse.Namespace, extra: dict | None = None) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values.update(json.load(fh))
    if extra:
        values.update(extra)
    field_names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for name in field_names:
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            values[name] = cli_val
    for key in ("samplers", "n_grid", "seeds"):
        if key in values:
            values[key] = tuple(values[key])
    unknown = set(values) - field_names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pmcmc", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate-data", help="simulate observations, write CSV + sidecar")
    _add_common(p_gen)
    p_gen.add_argument("--t", dest="horizon", type=int, help="last time index T; writes T+1 rows")
    p_gen.add_argument("--rho", dest="true_rho", type=float)
    p_gen.add_argument("--sigma-x", dest="true_sigma_x", type=float)
    p_gen.add_argument("--sigma2-y", dest="true_sigma2_y", type=float)

    for name in ("run", "grid", "analyze"):
        _add_common(sub.add_parser(name))

    args = parser.parse_args(argv)

    if args.command == "generate-data":
        extra = {"t_count": args.horizon + 1} if args.horizon is not None else None
        config = build_config(args, extra)
        out = args.out or "data.csv"
        _, theta = generate_data(config, out)
        print(f"wrote {out} (T={config.t_count}, rho={theta.rho}, sigma2_x={theta.sigma2_x:.6g}, sigma2_y={theta.sigma2_y:.6g})")
        return 0

    config = build_config(args)
    if args.command == "analyze":
        records_path = args.data or os.path.join(config.out, "records.csv")
        records = read_records_csv(records_path)
        summary = summarize_chain(records, config.burn_in if config.burn_in < len(records) else 0)
        print(json.dumps(summary.as_dict(), indent=2, sort_keys=True))
        return 0

    if not config.data:
        raise SystemExit("run/grid need --data pointing at an observations CSV")
    y = load_observations(config.data)

    if args.command == "run":
        os.makedirs(config.out, exist_ok=True)
        records, summary = run_sampler(config, y)
        write_records_csv(os.path.join(config.out, "records.csv"), records)
        with open(os.path.join(config.out, "summary.json"), "w") as fh:
            json.dump(summary.as_dict(), fh, indent=2, sort_keys=True)
        print(f"{config.sampler}: acceptance={summary.acceptance:.4f} ess_min={summary.ess_min:.1f}")
        return 0

    if args.command == "grid":
        result = run_grid(config, y)
        write_grid_outputs(result, config.out)
        for sampler, per_n in sorted(result.acceptance_by_sampler().items()):
            line = " ".join(f"N={n}:{mean:.3f}" for n, (mean, _) in per_n.items())
            print(f"{sampler}: {line}")
        if result.failures:
            print(f"{len(result.failures)} cell(s) failed; see grid.csv")
        return 0

    raise SystemExit(f"unknown command {args.command!r}")


def read_records_csv(path):
    """Load a records.csv back into ChainRecord-shaped rows."""
    import csv as _csv

    from .samplers import ChainRecord

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if tuple(header) != RECORDS_CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected records schema {header}")
        out = []
        for row in reader:
            out.append(
                ChainRecord(
                    iteration=int(row[0]),
                    rho=float(row[1]),
                    sigma2_x=float(row[2]),
                    sigma2_y=float(row[3]),
                    accepted=bool(int(row[4])),
                    index=int(row[5]),
                    log_lik=float(row[6]),
                )
            )
    return out


if __name__ == "__main__":
    raise SystemExit(main())
