"""Command-line entry point: ``dasswipt --experiment NAME --seeds 0..9 --out DIR``.

Exit codes: 0 when every seed succeeded, 2 when some seed was infeasible or
otherwise failed (see manifest.json), 1 on a structural error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import StructuralError
from .experiments import ALGORITHMS, EXPERIMENTS, ExperimentSpec, run_experiment
from .scenario import SystemParams, TopologyConfig, load_config

log = logging.getLogger("dasswipt")


def parse_seeds(text) -> tuple[int, ...]:
    """``"3"``, ``"0..9"`` (inclusive) or a comma list of either."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        try:
            if ".." in part:
                a, b = (int(x) for x in part.split(".."))
                if b < a:
                    raise StructuralError(f"empty seed range {part!r}")
                seeds.extend(range(a, b + 1))
            elif part:
                seeds.append(int(part))
        except ValueError as exc:
            raise StructuralError(f"bad seed spec {part!r}") from exc
    if not seeds:
        raise StructuralError("no seeds given")
    return tuple(seeds)


def _floats(text) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise StructuralError(f"bad number list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dasswipt", description="Run seeded beamforming and RRH-selection experiments.")
    p.add_argument("--config", help="JSON file with optional topology, system and run sections")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--seeds", help="seed list, e.g. 0..9 or 1,4,7 (default 0..4)")
    p.add_argument("--out", help="output directory (default results)")
    p.add_argument("--algo", help=f"comma list from {','.join(ALGORITHMS)} (default gbd,sca)")
    p.add_argument("--sweep", help="comma list of sweep values (default depends on the experiment)")
    p.add_argument("--kappa", type=float, help="GBD stopping gap, relative to the first upper bound")
    p.add_argument("--phi", type=float, help="SCA penalty factor (default 10 * max P_tx_max)")
    p.add_argument("--max-iter", type=int, help="iteration budget for GBD and SCA")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def spec_from_args(args) -> ExperimentSpec:
    topo, params, run = (TopologyConfig(), SystemParams(), {}) if not args.config else load_config(args.config)

    def pick(flag, key, default=None, conv=lambda x: x):
        if flag is not None:
            return conv(flag)
        if key in run:
            return conv(run[key])
        return default

    experiment = pick(args.experiment, "experiment")
    if experiment is None:
        raise StructuralError("no experiment given (use --experiment or the config run section)")
    algos = pick(args.algo, "algorithms", ("gbd", "sca"),
                 lambda a: tuple(x.strip() for x in a.split(",")) if isinstance(a, str) else tuple(a))
    return ExperimentSpec(
        experiment=experiment,
        seeds=pick(args.seeds, "seeds", (0, 1, 2, 3, 4), lambda s: parse_seeds(s) if isinstance(s, str) else tuple(s)),
        algorithms=algos,
        sweep_values=pick(args.sweep, "sweep_values", None, lambda s: _floats(s) if isinstance(s, str) else tuple(s)),
        output_dir=pick(args.out, "out", "results"),
        topology=topo, params=params,
        kappa=pick(args.kappa, "kappa", 1e-3, float),
        phi=pick(args.phi, "phi", None, float),
        max_iter=pick(args.max_iter, "max_iter", None, int),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        manifest = run_experiment(spec, plots=not args.no_plots)
    except (StructuralError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    n_fail = len(manifest["failures"])
    print(f"{spec.experiment}: {len(spec.seeds)} seeds x {len(spec.sweep_values)} points, "
          f"{n_fail} failed runs; outputs in {spec.output_dir}")
    return 2 if n_fail else 0


if __name__ == "__main__":
    sys.exit(main())
