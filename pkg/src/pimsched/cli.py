"""Command-line experiment runner.

Subcommands:
  train          train a policy on the configured system and write it out
  eval           sweep (scheduler, preference, admit rate, seed) and report
  validate       run the invariant suite plus fault-injection probes
  gen-workloads  write the configured model pool as DCG JSON files
  gen-topology   write a generated topology as a JSON file

Exit codes: 0 success, 1 configuration error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .arch import PimType, build_hexamesh, build_mesh, write_topology_file
from .config import ExperimentSpec, SchedulerSpec
from .engine import JobRecord, SimConfig, Simulator, _ExecState
from .errors import ConfigError, FormatError, InvariantError, PimschedError
from .policy import load_policy, save_policy
from .report import (
    TrainingCsvStream,
    plot_pareto,
    plot_throughput_curve,
    plot_training_curve,
    summarize_rows,
    write_eval_csv,
    write_job_csv,
    write_pareto_csv,
    write_summary_csv,
)
from .schedulers import PolicyScheduler, make_baseline
from .thermal import ThermalConfig, ThermalModel
from .training import train as run_training
from .workload import Job, synth_workload_stream, write_dcg_file
from .zoo import synthetic_pool

log = logging.getLogger(__name__)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except InvariantError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 2
    except PimschedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="experiment spec YAML")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the first configured seed")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (overrides the experiment file)")
    common.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="pimsched",
        description="Simulator and schedulers for heterogeneous PIM chiplet fabrics.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.set_defaults(config=None, seed=None, out=None, verbose=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", parents=[common], help="train a scheduling policy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="run the evaluation sweep")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", parents=[common],
                       help="invariant suite and fault-injection probes")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-workloads", parents=[common],
                       help="write the model pool as DCG JSON files")
    p.set_defaults(func=cmd_gen_workloads)

    p = sub.add_parser("gen-topology", parents=[common],
                       help="write a generated topology JSON file")
    p.add_argument("--kind", choices=("mesh", "hexamesh"), default="mesh")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--placement", default="standard:3,shared_adc:3,accumulator:2,adc_less:2",
                   help="comma list of pim_type:count")
    p.add_argument("--n-io", type=int, default=4)
    p.set_defaults(func=cmd_gen_topology)
    return parser


def _load_spec(args) -> ExperimentSpec:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    spec = ExperimentSpec.load(args.config)
    if args.out is not None:
        spec.out_dir = args.out
    if args.seed is not None:
        spec.seeds = [args.seed] + [s for s in spec.seeds if s != args.seed]
    return spec


def _out_dir(spec: ExperimentSpec) -> str:
    path = spec.out_dir
    if not os.path.isabs(path):
        path = os.path.join(os.getcwd(), path)
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(spec)
    system = spec.build_system()
    costs = spec.build_cost_model()
    thermal = spec.build_thermal_config()
    pool = spec.build_pool()
    seed = spec.seeds[0]

    curve_path = os.path.join(out, "training.csv")
    stream = TrainingCsvStream(curve_path)
    try:
        result = run_training(system, costs, pool, spec.ppo, seed,
                              thermal_config=thermal, sim_config=spec.sim,
                              progress=stream)
    finally:
        stream.close()

    policy_path = os.path.join(out, "policy.json")
    save_policy(
        policy_path, result.policy, result.value_net, result.scales,
        result.cluster_types,
        meta={
            "seed": seed,
            "system": spec.system,
            "preferences": [list(w) for w in spec.ppo.preferences],
            "total_steps": spec.ppo.total_steps,
        },
    )
    plot_training_curve(os.path.join(out, "training_curve.png"), result.history)
    final = result.history[-1]
    print(f"trained {final['steps']} steps over {final['update']} updates; "
          f"final value loss {final['value_loss']:.4g}")
    print(f"policy: {policy_path}")
    print(f"curve:  {curve_path}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _make_scheduler(sched: SchedulerSpec, spec: ExperimentSpec, out: str, seed: int):
    if sched.name != "thermos":
        return make_baseline(sched.name, seed)
    path = sched.policy_path
    candidates = [path] if os.path.isabs(path) else [
        os.path.join(out, path), os.path.join(spec.base_dir, path)
    ]
    for p in candidates:
        if os.path.exists(p):
            policy, _vnet, scales, cluster_types, _meta = load_policy(p)
            return PolicyScheduler(policy, scales, sched.preference,
                                   cluster_types, mode="argmax")
    raise ConfigError(
        f"policy file {path!r} not found (searched {', '.join(candidates)}); "
        "run `pimsched train` first or point the scheduler entry at a policy"
    )


def run_eval_point(system, costs, thermal, pool, spec: ExperimentSpec,
                   scheduler, admit_rate: float, seed: int):
    """One simulation run of the sweep; library-level entry used by the CLI.

    The stream seed depends only on the run seed, never on the admit rate,
    so a rate sweep replays the same job sequence with rescaled gaps and
    throughput curves are comparable point to point.
    """
    jobs = synth_workload_stream(
        seed=1_000_003 * seed + 12_289,
        count=spec.workload.count,
        frame_range=spec.workload.frame_range,
        model_pool=pool,
        admit_rate=admit_rate,
    )
    sim = Simulator(system, costs, scheduler, jobs, spec.sim, thermal)
    return sim.run()


def cmd_eval(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(spec)
    system = spec.build_system()
    costs = spec.build_cost_model()
    thermal = spec.build_thermal_config()
    pool = spec.build_pool()

    jobs_dir = os.path.join(out, "jobs")
    os.makedirs(jobs_dir, exist_ok=True)
    rows = []
    for sched_spec in spec.schedulers:
        for admit in spec.admit_rates:
            for seed in spec.seeds:
                scheduler = _make_scheduler(sched_spec, spec, out, seed)
                metrics = run_eval_point(system, costs, thermal, pool, spec,
                                         scheduler, admit, seed)
                row = {
                    "scheduler": sched_spec.name,
                    "omega_time": sched_spec.preference[0],
                    "omega_energy": sched_spec.preference[1],
                    "admit_rate": admit,
                    "seed": seed,
                }
                for col in (c for c in rows_columns() if c not in row):
                    row[col] = getattr(metrics, col)
                rows.append(row)
                tag = f"{sched_spec.label()}_a{admit:g}_s{seed}".replace("/", "-")
                write_job_csv(os.path.join(jobs_dir, f"{tag}.csv"), metrics)
                log.info("eval %s admit=%g seed=%d: throughput=%.3f/s edp=%.3g",
                         sched_spec.label(), admit, seed,
                         metrics.throughput_jobs_s, metrics.mean_edp_js)

    write_eval_csv(os.path.join(out, "eval.csv"), rows)
    summary = summarize_rows(rows)
    write_summary_csv(os.path.join(out, "summary.csv"), summary)
    sat = max(spec.admit_rates)
    pareto = write_pareto_csv(os.path.join(out, "pareto.csv"), summary, sat)
    plot_throughput_curve(os.path.join(out, "throughput.png"), summary)
    plot_pareto(os.path.join(out, "pareto.png"), pareto)

    print(f"wrote {len(rows)} sweep rows to {os.path.join(out, 'eval.csv')}")
    print(f"pareto table at admit rate {sat:g}:")
    print(f"  {'scheduler':<22} {'exec_s':>12} {'energy_j':>12} {'edp_js':>12} {'thr/s':>8}")
    for r in pareto:
        label = r["scheduler"]
        if label == "thermos":
            label = f"thermos[{r['omega_time']:g},{r['omega_energy']:g}]"
        print(f"  {label:<22} {r['mean_exec_s']:>12.5g} {r['mean_energy_j']:>12.5g} "
              f"{r['mean_edp_js']:>12.5g} {r['throughput_jobs_s']:>8.3f}")
    return 0


def rows_columns():
    from .report import SUMMARY_COLUMNS
    return SUMMARY_COLUMNS


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    if args.config is not None:
        spec = _load_spec(args)
    else:
        spec = ExperimentSpec()
        spec.workload.pool = "toy"
        spec.workload.count = 40
    system = spec.build_system()
    costs = spec.build_cost_model()
    thermal = spec.build_thermal_config()
    pool = spec.build_pool()
    seed = spec.seeds[0] if args.seed is None else args.seed

    failures = []

    def check(label, ok, detail=""):
        print(f"{'PASS' if ok else 'FAIL'}  {label}{': ' + detail if detail else ''}")
        if not ok:
            failures.append(label)

    # 1. clean scenario: the engine self-checks the energy ledger and exact
    # memory restoration at end of run and raises on violation.
    jobs = synth_workload_stream(seed=seed, count=spec.workload.count,
                                 frame_range=spec.workload.frame_range,
                                 model_pool=pool, admit_rate=2.0)
    sim = Simulator(system, costs, make_baseline("biglittle"), jobs,
                    SimConfig(warmup_s=0.0), thermal)
    try:
        metrics = sim.run()
        check("energy ledger closes", metrics.ledger_residual_rel <= 1e-9,
              f"residual {metrics.ledger_residual_rel:.2e}")
        check("memory restored after run", True)
        admit_order = [r.job_id for r in metrics.records if not r.rejected]
        sched_order = [r.job_id for r in sorted(metrics.records, key=lambda r: r.scheduled_s)
                       if not r.rejected]
        check("FIFO scheduling order", admit_order == sched_order)
    except InvariantError as e:
        check("clean scenario run", False, str(e))

    # 2. numerically non-dissipative thermal network must be rejected by
    # the spectral-radius guard.
    try:
        ThermalModel(system, ThermalConfig(g_ambient_per_mm2=1e-300, g_lateral=0.0))
        check("thermal stability guard", False, "unstable step matrix accepted")
    except InvariantError:
        check("thermal stability guard", True)

    # 3. nonsensical thermal step must be rejected at config level.
    try:
        ThermalConfig(dt_s=-0.1).validate()
        check("thermal config guard", False, "dt <= 0 accepted")
    except ConfigError:
        check("thermal config guard", True)

    # 4. fault injection: an allocator handing out more bits than a chiplet
    # has must trip the reservation guard.
    sim2 = Simulator(system, costs, make_baseline("simba"), jobs[:1],
                     SimConfig(warmup_s=0.0), thermal)
    victim = next(c for c in sim2.graph.chiplets if not c.is_io)
    job = jobs[0]
    st = _ExecState(
        job=job,
        record=JobRecord(job_id=job.id, model=job.graph.name,
                         frames=job.frames, arrival_s=job.arrival_s),
        assignment=[[] for _ in job.graph.layers],
    )
    st.cursor_remaining = victim.mem_cap + 1
    try:
        sim2._reserve(st, 0, [(victim.id, victim.mem_cap + 1)])
        check("over-allocation guard", False, "oversized reservation accepted")
    except InvariantError:
        check("over-allocation guard", True)

    if failures:
        raise InvariantError(f"{len(failures)} validation check(s) failed: {failures}")
    print("all validation checks passed")
    return 0


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def cmd_gen_workloads(args) -> int:
    spec = _load_spec(args) if args.config else ExperimentSpec()
    out = _out_dir(spec) if args.out is None else args.out
    os.makedirs(out, exist_ok=True)
    if args.seed is not None:
        spec.workload.pool_seed = args.seed
    pool = spec.build_pool()
    for g in pool:
        path = os.path.join(out, f"{g.name}.json")
        write_dcg_file(g, path)
        print(f"wrote {path} ({g.n_layers} layers, "
              f"{g.total_weight_bits() / 8 / 2**20:.2f} MiB weights)")
    return 0


def cmd_gen_topology(args) -> int:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    placement = []
    for part in args.placement.split(","):
        name, _, count = part.partition(":")
        try:
            placement.append((PimType(name.strip()), int(count)))
        except ValueError as e:
            raise ConfigError(f"bad placement entry {part!r}: {e}") from e
    if args.kind == "mesh":
        graph = build_mesh(args.rows, args.cols, placement, n_io=args.n_io)
    else:
        graph = build_hexamesh(args.rows, args.cols, placement, n_io=args.n_io)
    name = f"{args.kind}_{args.rows}x{args.cols}.json"
    path = os.path.join(out, name)
    write_topology_file(graph, path)
    n_compute = sum(1 for c in graph.chiplets if not c.is_io)
    print(f"wrote {path} ({n_compute} compute + "
          f"{len(graph.chiplets) - n_compute} I/O chiplets)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
