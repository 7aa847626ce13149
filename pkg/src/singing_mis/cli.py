"""Command line harness: ``singing-mis run | sweep | verify | coin | gen``.

Every subcommand accepts ``--config FILE``, an INI file whose ``[run]``,
``[sweep]``, ... section (or ``[DEFAULT]``) supplies values for any option;
flags on the command line win. Commands that write outputs also write the
fully resolved configuration as ``config.ini`` next to them.

Exit status: 0 when everything passed, 1 when a verification failed, 2 on a
usage or configuration error. ``SINGING_MIS_WORKERS`` sets the number of
worker processes used for trials (default 1).
"""

import argparse
import configparser
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from .analysis import (
    active_mask,
    async_window,
    check_async_contraction,
    check_dynamic_contraction,
    check_eligibility_probability,
    check_static_contraction,
    degeneration_mismatches,
    locality_violations,
    one_round_leader_check,
    settle_down_violations,
)
from .async_engine import (
    Fixed,
    SchedulePolicy,
    TimingParams,
    Uniform,
    _hearing_pairs,
    clean_stable_violations,
    in_in_overlaps,
    run_async,
    run_async_batch,
    stable_in_violations,
    two_round_hearing_violations,
)
from .coin import capped_win_probability, estimate_coin_bounds, exact_win_probability
from .generators import churn_script, generate, parse_generator
from .network import NetworkError, format_change_script, format_edge_list, read_change_script, read_edge_list
from .protocol import IN, OUT, UN, AgentState, ConfigError, HearingMode, ProtocolVariant
from .sync_engine import is_converged, run_sync, run_sync_batch
from ._topology import Topology
from .listings import compare_hearing, compare_transitions

WORKERS_ENV = "SINGING_MIS_WORKERS"
SUITES = ("transitions", "static-contraction", "dynamic-locality", "dynamic-contraction", "async-lemmas", "coin",
          "sj-eligibility")
STATE_NAMES = {OUT: "Out", IN: "In", UN: "Un"}


class UsageError(Exception):
    pass


# --- option plumbing ----------------------------------------------------------------


class _Options:
    """Collects option defaults so config files can sit between flags and defaults."""

    def __init__(self, parser):
        self.parser = parser
        self.defaults = {}
        self.types = {}

    def add(self, *flags, default=None, type=str, **kw):
        if not kw.get("action"):
            kw["type"] = type
        action = self.parser.add_argument(*flags, default=None, **kw)
        self.defaults[action.dest] = default
        self.types[action.dest] = type if "type" in kw else bool
        return action


def _int_list(text):
    """``1..16``, ``16,32,64`` or a mix such as ``1..4,8``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out += list(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list: {text!r}")
    return out


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _timing(text):
    try:
        t_min, t_max, delta = (int(x) for x in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"timing must be T_MIN,T_MAX,DELTA_MAX, got {text!r}") from None
    return t_min, t_max, delta


def _schedule(text):
    """``uniform`` or ``fixed:K``."""
    text = str(text).strip().lower()
    if text == "uniform":
        return Uniform()
    if text.startswith("fixed:"):
        return Fixed(int(text.split(":", 1)[1]))
    raise argparse.ArgumentTypeError(f"expected 'uniform' or 'fixed:K', got {text!r}")


def _resolve(opts, args, command):
    """Merge command line, config file and defaults into one namespace."""
    cfg = {}
    if getattr(args, "config", None):
        parser = configparser.ConfigParser()
        if not parser.read(args.config, encoding="utf-8"):
            raise UsageError(f"cannot read config file {args.config}")
        section = parser[command] if parser.has_section(command) else parser.defaults()
        cfg = {k.replace("-", "_"): v for k, v in section.items()}
        unknown = sorted(set(cfg) - set(opts.defaults) - {"suite"})
        if unknown:
            raise UsageError(f"unknown option(s) in config file: {', '.join(unknown)}")
    out = argparse.Namespace(command=command, config=getattr(args, "config", None))
    for dest, default in opts.defaults.items():
        value = getattr(args, dest)
        if value is None:
            if dest in cfg:
                raw = cfg[dest]
                kind = opts.types[dest]
                try:
                    if kind is bool:
                        value = raw.strip().lower() in ("1", "true", "yes", "on")
                    else:
                        value = kind(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"config option {dest}: {exc}") from None
            else:
                value = default
        setattr(out, dest, value)
    return out


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (Uniform, Fixed)):
        return "uniform" if isinstance(value, Uniform) else f"fixed:{value.value}"
    return "" if value is None else str(value)


def _write_config(cfg, out_dir):
    parser = configparser.ConfigParser()
    parser[cfg.command] = {k: _fmt(v) for k, v in sorted(vars(cfg).items())
                           if k not in ("command", "config", "out") and v is not None}
    with open(Path(out_dir) / "config.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_csv(path, header, rows):
    Path(path).write_text(_csv_text(header, rows), encoding="utf-8")


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _pool_map(fn, jobs):
    """Map over jobs in order, in worker processes when more than one is configured."""
    workers = min(_workers(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _chunks(seq, size):
    return [seq[i:i + size] for i in range(0, len(seq), size)]


# --- shared experiment setup -----------------------------------------------------------


def _add_protocol_options(o):
    o.add("--variant", default="singing", choices=[v.value for v in ProtocolVariant],
          help="protocol variant (default: singing)")
    o.add("--hearing", choices=[m.value for m in HearingMode],
          help="hearing mode (default: the variant's own)")
    o.add("--unsafe-pairing", action="store_true", help="allow a variant under the other hearing mode")
    o.add("--p", default=0.5, type=float, help="coin bias behind ell (default 0.5)")


def _add_engine_options(o):
    o.add("--engine", default="sync", choices=["sync", "async"])
    o.add("--timing", type=_timing, help="T_MIN,T_MAX,DELTA_MAX in ticks (required for --engine async)")
    o.add("--durations", default=Uniform(), type=_schedule, help="round durations: uniform | fixed:K")
    o.add("--delays", default=Uniform(), type=_schedule, help="delivery delays: uniform | fixed:K")
    o.add("--offsets", default=Fixed(0), type=_schedule, help="start offsets: uniform | fixed:K")
    o.add("--max-rounds", type=int, help="round budget (async: horizon = rounds * t_max)")


def _add_graph_options(o):
    o.add("--graph", help="edge-list file")
    o.add("--gen", help="generator, e.g. gnp:256,0.05, ring:100, grid:16x16, complete:64")
    o.add("--graph-seed", type=int, help="generator seed (default: --seed)")
    o.add("--init", default="un", choices=["un", "in", "out", "random"], help="initial states")


def _load_network(cfg):
    if bool(cfg.graph) == bool(cfg.gen):
        raise UsageError("give exactly one of --graph and --gen")
    if cfg.graph:
        return read_edge_list(cfg.graph)
    seed = cfg.seed if cfg.graph_seed is None else cfg.graph_seed
    return generate(parse_generator(cfg.gen), seed)


def _initial_states(net, how, seed):
    agents = net.sorted_agents()
    if how == "random":
        rng = np.random.default_rng(seed)
        return {u: AgentState(int(s)) for u, s in zip(agents, rng.integers(0, 3, size=len(agents)))}
    state = {"un": UN, "in": IN, "out": OUT}[how]
    return {u: state for u in agents}


def _timing_params(cfg):
    if cfg.timing is None:
        if cfg.engine == "async":
            raise UsageError("--engine async needs --timing T_MIN,T_MAX,DELTA_MAX")
        return None
    return TimingParams(*cfg.timing)


def _policy(cfg, params):
    policy = SchedulePolicy(cfg.durations, cfg.delays, cfg.offsets)
    policy.validate(params)
    return policy


# --- run ---------------------------------------------------------------------------------

SUMMARY_HEADER = ["seed", "converged", "rounds_or_ticks", "final_e", "mis_valid"]
TRACE_HEADER = ["round", "agent", "state", "ell", "heard0", "heardOwn", "next_state"]
ROUNDS_HEADER = ["round", "e_i", "|A_i|", "num_Un", "num_In", "num_Out"]
ASYNC_HEADER = ["agent", "round_index", "start_tick", "end_tick", "state", "ell", "next_state"]


def _sync_trace_files(trace):
    rows, summary = [], []
    for rec in trace.rounds:
        for a, s, ell, h0, hc, nx in zip(rec.agents, rec.state, rec.ell, rec.heard_zero, rec.heard_comp,
                                         rec.next_state):
            rows.append([rec.round, int(a), STATE_NAMES[s], int(ell), int(h0), int(hc), STATE_NAMES[nx]])
        counts = np.bincount(rec.state, minlength=3)
        summary.append([rec.round, rec.active_edges, len(rec.affected), counts[UN], counts[IN], counts[OUT]])
    return {
        f"trace_seed{trace.seed}.csv": _csv_text(TRACE_HEADER, rows),
        f"rounds_seed{trace.seed}.csv": _csv_text(ROUNDS_HEADER, summary),
    }


def _async_trace_file(trace, seed):
    R, ids = trace.rounds, trace.topo.ids
    rows = [[int(ids[p]), int(i), int(s), int(e), STATE_NAMES[st], int(ell), STATE_NAMES.get(nx, "")]
            for p, i, s, e, st, ell, nx in zip(R["pos"], R["idx"], R["start"], R["end"], R["state"], R["ell"],
                                               R["next_state"])]
    return {f"async_trace_seed{seed}.csv": _csv_text(ASYNC_HEADER, rows)}


def _run_job(job):
    """Run one chunk of trials; returns ``(summary rows, {file name: text})``."""
    cfg, net, init, script, seeds = job
    rows, files = [], {}
    variant, mode = cfg.variant, cfg.hearing
    if cfg.engine == "sync":
        if cfg.traces:
            for s in seeds:
                tr = run_sync(net, init, script=script, variant=variant, mode=mode, seed=s,
                              max_rounds=cfg.max_rounds, p=cfg.p, unsafe_pairing=cfg.unsafe_pairing)
                conv = tr.termination == "converged"
                valid = is_converged(tr.final_network, tr.final_states)
                rows.append([s, conv, tr.converged_round if conv else len(tr.rounds), tr.final_active_edges, valid])
                files.update(_sync_trace_files(tr))
        else:
            res = run_sync_batch(net, init, seeds, script=script, variant=variant, mode=mode,
                                 max_rounds=cfg.max_rounds, p=cfg.p, unsafe_pairing=cfg.unsafe_pairing)
            for k, s in enumerate(seeds):
                conv = bool(res.converged[k])
                rows.append([s, conv, int(res.converged_round[k]) if conv else res.rounds_run,
                             int(res.final_active_edges[k]), bool(res.mis_valid[k])])
        return rows, files
    params = TimingParams(*cfg.timing)
    policy = _policy(cfg, params)
    horizon = None if cfg.max_rounds is None else cfg.max_rounds * params.t_max
    if cfg.traces:
        for s in seeds:
            tr = run_async(net, init, params, policy, variant=variant, mode=mode, seed=s, horizon=horizon, p=cfg.p,
                           unsafe_pairing=cfg.unsafe_pairing)
            final = tr.states_at(tr.end_tick)
            _, e = active_mask(tr.topo, final)
            conv = bool(tr.converged_tick[0] >= 0)
            valid = is_converged(net, {int(a): AgentState(int(x)) for a, x in zip(tr.topo.ids, final[0])})
            rows.append([s, conv, int(tr.converged_tick[0]) if conv else int(tr.end_tick), int(e[0]), valid])
            files.update(_async_trace_file(tr, s))
    else:
        res = run_async_batch(net, init, params, seeds, policy=policy, variant=variant, mode=mode,
                              horizon=horizon, p=cfg.p, unsafe_pairing=cfg.unsafe_pairing)
        _, e = active_mask(Topology(net), res.final_states)
        for k, s in enumerate(seeds):
            conv = bool(res.converged[k])
            rows.append([s, conv, int(res.converged_tick[k]) if conv else int(res.end_tick), int(e[k]),
                         bool(res.mis_valid[k])])
    return rows, files


def cmd_run(cfg):
    if cfg.trials < 1:
        raise UsageError("--trials must be >= 1")
    params = _timing_params(cfg)
    if cfg.engine == "async":
        _policy(cfg, params)
    net = _load_network(cfg)
    init = _initial_states(net, cfg.init, cfg.seed)
    script = None
    if cfg.script and cfg.churn:
        raise UsageError("give at most one of --script and --churn")
    if cfg.script:
        script = read_change_script(cfg.script)
    elif cfg.churn:
        script = churn_script(net, cfg.churn_rounds, cfg.churn, seed=cfg.seed)
    if script is not None and cfg.engine == "async":
        raise UsageError("change scripts are only supported with --engine sync")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + t for t in range(cfg.trials)]
    size = 25 if cfg.traces else 250
    results = _pool_map(_run_job, [(cfg, net, init, script, chunk) for chunk in _chunks(seeds, size)])
    rows, files = [], {}
    for r, f in results:
        rows += r
        files.update(f)
    if files:
        (out / "traces").mkdir(exist_ok=True)
        for name in sorted(files):
            (out / "traces" / name).write_text(files[name], encoding="utf-8")
    _write_csv(out / "summary.csv", SUMMARY_HEADER, [[_fmt(x) for x in r] for r in rows])
    _write_config(cfg, out)
    ok = sum(1 for r in rows if r[1] and r[4])
    print(f"{ok}/{len(rows)} trials converged to a valid MIS; summary in {out / 'summary.csv'}")
    return 0


# --- sweep -------------------------------------------------------------------------------


def _sweep_spec(family, n, degree):
    if family == "gnp":
        return f"gnp:{n},{min(1.0, degree / n)!r}"
    if family == "grid":
        side = max(1, round(math.sqrt(n)))
        return f"grid:{side}x{side}"
    return f"{family}:{n}"


def _sweep_job(job):
    cfg, spec, trials = job
    params = TimingParams(*cfg.timing) if cfg.engine == "async" else None
    out = []
    for s in trials:
        net = generate(parse_generator(spec), s)
        init = {u: UN for u in net.agents}
        if cfg.engine == "sync":
            res = run_sync_batch(net, init, [s], variant=cfg.variant, mode=cfg.hearing, max_rounds=cfg.max_rounds,
                                 p=cfg.p, unsafe_pairing=cfg.unsafe_pairing)
            conv = bool(res.converged[0])
            out.append((conv, int(res.converged_round[0]) if conv else res.rounds_run))
        else:
            horizon = None if cfg.max_rounds is None else cfg.max_rounds * params.t_max
            res = run_async_batch(net, init, params, [s], policy=_policy(cfg, params), variant=cfg.variant,
                                  mode=cfg.hearing, horizon=horizon, p=cfg.p, unsafe_pairing=cfg.unsafe_pairing)
            conv = bool(res.converged[0])
            ticks = int(res.converged_tick[0]) if conv else int(res.end_tick)
            out.append((conv, ticks / params.t_max))
    return out


def cmd_sweep(cfg):
    params = _timing_params(cfg)
    if cfg.engine == "async":
        _policy(cfg, params)
    sizes = cfg.sizes
    if any(n < 2 for n in sizes):
        raise UsageError("sweep sizes must be >= 2")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    ratios = []
    for n in sizes:
        spec = _sweep_spec(cfg.family, n, cfg.degree)
        parse_generator(spec)
        seeds = [cfg.seed + t for t in range(cfg.trials)]
        res = [r for part in _pool_map(_sweep_job, [(cfg, spec, c) for c in _chunks(seeds, 50)]) for r in part]
        rounds = np.array([r for _, r in res], dtype=float)
        conv = np.mean([c for c, _ in res])
        med, p95 = float(np.median(rounds)), float(np.percentile(rounds, 95))
        lg = math.log2(n)
        ratios.append(med / lg)
        rows.append([n, _fmt(lg), _fmt(med), _fmt(p95), _fmt(med / lg), _fmt(float(conv))])
        print(f"n={n:6d}  median={med:7.2f}  p95={p95:7.2f}  median/log2n={med / lg:6.3f}  converged={conv:.3f}")
    header = ["n", "log2_n", "median_rounds", "p95_rounds", "median_over_log2_n", "converged_fraction"]
    _write_csv(out / "sweep.csv", header, rows)
    _write_config(cfg, out)
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    print(f"spread of median_rounds/log2(n): {spread:.3f}")
    return 0


# --- verify ---------------------------------------------------------------------------------


class _Verdicts:
    """Rows of (suite, check, measured, requirement, verdict)."""

    def __init__(self, suite):
        self.suite = suite
        self.rows = []
        self.extra = {}

    def add(self, check, measured, requirement, ok):
        verdict = "info" if ok is None else ("PASS" if ok else "FAIL")
        self.rows.append([self.suite, check, measured, requirement, verdict])

    @property
    def passed(self):
        return all(r[-1] != "FAIL" for r in self.rows)

    def print(self):
        widths = [max(len(str(r[i])) for r in self.rows + [self.header]) for i in range(5)]
        for r in [self.header] + self.rows:
            print("  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip())

    header = ["suite", "check", "measured", "requirement", "verdict"]


def _report_rows(v, report, label):
    v.add(label, f"{report.samples} configs, max se {report.max_se:.4f}, worst z {report.worst_margin:+.2f}",
          report.bound + " within 3 se", report.passed and report.samples > 0)
    v.extra[label] = report.csv_rows()


def _suite_transitions(cfg, v):
    cases, bad = compare_transitions(cfg.max_ell)
    v.add("round rules vs listings", f"{cases} cases, {len(bad)} mismatches", "0 mismatches", not bad)
    cases, bad = compare_hearing(min(cfg.max_ell, 5))
    v.add("hearing vs note sets", f"{cases} cases, {len(bad)} mismatches", "0 mismatches", not bad)


def _static_traces(cfg, variant, count):
    spec = parse_generator(cfg.gen or "gnp:64,0.1")
    out = []
    for k in range(count):
        net = generate(spec, cfg.seed + k)
        out.append(run_sync(net, {u: UN for u in net.agents}, variant=variant, seed=cfg.seed + k))
    return out


def _suite_static(cfg, v):
    traces = _static_traces(cfg, "singing", cfg.runs)
    rep = check_static_contraction(traces, branches=cfg.branches, seed=cfg.seed)
    _report_rows(v, rep, "static contraction")


def _churn_traces(cfg, variant):
    spec = parse_generator(cfg.gen or "gnp:128,0.05")
    out = []
    for k in range(cfg.runs):
        net = generate(spec, cfg.seed + k)
        script = churn_script(net, cfg.rounds, cfg.churn, seed=cfg.seed + k)
        out.append(run_sync(net, {u: UN for u in net.agents}, script=script, variant=variant, seed=cfg.seed + k,
                            max_rounds=cfg.rounds + 1, stop_on_convergence=False))
    return out


def _variants(cfg):
    return [cfg.variant] if cfg.variant else ["singing", "sj"]


def _suite_dynamic_locality(cfg, v):
    for variant in _variants(cfg):
        traces = _churn_traces(cfg, variant)
        loc = sum(len(locality_violations(t)) for t in traces)
        settle = sum(len(settle_down_violations(t)) for t in traces)
        v.add(f"{variant}: eliminated edges stay eliminated", f"{loc} violations", "0", loc == 0)
        v.add(f"{variant}: two-round settle-down", f"{settle} violations", "0", settle == 0)


def _suite_dynamic_contraction(cfg, v):
    for variant in _variants(cfg):
        traces = _churn_traces(cfg, variant)
        step = max(1, cfg.rounds // max(cfg.windows, 1))
        rep = check_dynamic_contraction(traces, branches=cfg.branches, windows=range(1, cfg.rounds, step),
                                        seed=cfg.seed)
        _report_rows(v, rep, f"{variant}: dynamic contraction")


def _suite_async(cfg, v):
    params = TimingParams(*(cfg.timing or (4, 8, 2)))
    graphs = [cfg.gen] if cfg.gen else ["gnp:64,0.1", "ring:30", "grid:6x6", "complete:12"]
    policies = {
        "uniform": SchedulePolicy(),
        "uniform+offsets": SchedulePolicy(offset=Uniform()),
        "fixed+offsets": SchedulePolicy(Fixed(params.t_min), Fixed(params.delta_max), Uniform()),
    }
    for variant in _variants(cfg):
        totals = dict(runs=0, ok=0, in_in=0, overlaps=0, hearing=0, clean=0, raw=0)
        for g, spec in enumerate(graphs):
            net = generate(parse_generator(spec), cfg.seed + g)
            init = {u: UN for u in net.agents}
            for name, policy in policies.items():
                res, tr = run_async_batch(net, init, params, np.arange(cfg.runs) + cfg.seed, policy=policy,
                                          variant=variant, record=True)
                pairs = _hearing_pairs(tr)
                totals["runs"] += cfg.runs
                totals["ok"] += int((res.converged & res.mis_valid).sum())
                totals["in_in"] += int(res.in_in_events.sum())
                totals["overlaps"] += in_in_overlaps(tr, pairs)
                totals["hearing"] += two_round_hearing_violations(tr, pairs)
                if variant == "sj":
                    totals["clean"] += sum(clean_stable_violations(tr, pairs))
                    totals["raw"] += sum(stable_in_violations(tr))
        v.add(f"{variant}: converged to a valid MIS", f"{totals['ok']}/{totals['runs']}", "all",
              totals["ok"] == totals["runs"])
        v.add(f"{variant}: two-round hearing", f"{totals['hearing']} violations", "0", totals["hearing"] == 0)
        if variant == "singing":
            v.add("singing: never both In", f"{totals['in_in']} events, {totals['overlaps']} overlapping rounds",
                  "0", totals["in_in"] == 0 and totals["overlaps"] == 0)
        else:
            v.add("sj: clean stable In is absorbing", f"{totals['clean']} violations", "0", totals["clean"] == 0)
            v.add("sj: stable In without the clean condition", f"{totals['raw']} counterexamples", "(reported)", None)
    bad = compared = 0
    rng = np.random.default_rng(cfg.seed)
    for k in range(cfg.degeneration):
        n = int(rng.integers(1, 33))
        net = generate(parse_generator(f"gnp:{n},{float(rng.uniform(0.05, 0.6))!r}"), cfg.seed + k)
        for variant in _variants(cfg):
            c, b = degeneration_mismatches(net, params, variant, seed=cfg.seed + k)
            compared += c
            bad += len(b)
    v.add("lock-step schedule equals sync engine", f"{compared} rounds, {bad} mismatches", "0", bad == 0)
    net = generate(parse_generator(cfg.window_graph), cfg.seed)
    for variant in _variants(cfg):
        windows = [async_window(params, variant)]
        if variant == "sj" and 40 not in windows:
            windows.append(40)
        rep = check_async_contraction(net, params, variant, trials=cfg.trials, ticks=(0,), t_diff=windows,
                                      seed=cfg.seed)
        for row in rep.rows:
            v.add(f"{variant}: window decrease (T={row['window']})",
                  f"mean decrease {row['mean_decrease']:.2f} vs {row['required']:.4f} (z {row['z']:+.1f})",
                  "decrease >= bound - 3 se", row["ok"])
        v.extra[f"{variant}: windows"] = rep.csv_rows()


def _coin_rows(cfg, v=None):
    rows = []
    for p in cfg.p_values:
        for est in estimate_coin_bounds(cfg.d, p=p, trials=cfg.trials, seed=cfg.seed, cap=cfg.cap):
            rows.append([est.d, _fmt(p), est.trials, _fmt(est.y_hat), _fmt(est.y_se), _fmt(est.bound), _fmt(est.y_ok),
                         _fmt(est.x_hat), _fmt(est.x_se), _fmt(1 / est.d), _fmt(est.x_ok), est.unresolved])
            if v is not None:
                v.add(f"y d={est.d} p={p}", f"{est.y_hat:.5f} (se {est.y_se:.5f})", f">= {est.bound:.5f}", est.y_ok)
                v.add(f"x d={est.d} p={p}", f"{est.x_hat:.5f} (se {est.x_se:.5f})", f"= {1 / est.d:.5f}", est.x_ok)
    exact = []
    for p in cfg.p_values:
        frac = Fraction(p).limit_denominator(1000)
        for d in (1, 2, 3):
            y = exact_win_probability(d, frac)
            lo, missing = capped_win_probability(d, frac, cfg.exact_cap)
            bound = 2 * frac / ((1 + frac) * d)
            ok = y >= bound and lo <= y <= lo + missing
            exact.append([d, _fmt(p), _fmt(float(y)), _fmt(float(bound)), _fmt(float(lo)), _fmt(float(lo + missing)),
                          _fmt(bool(ok))])
            if v is not None:
                v.add(f"exact y d={d} p={p}", f"{float(y):.6f} in [{float(lo):.6f}, {float(lo + missing):.6f}]",
                      f">= {float(bound):.6f}", ok)
    return rows, exact


COIN_HEADER = ["d", "p", "trials", "y_hat", "y_se", "y_bound", "y_ok", "x_hat", "x_se", "x_target", "x_ok",
               "unresolved"]
EXACT_HEADER = ["d", "p", "y_exact", "y_bound", "capped_low", "capped_high", "ok"]


def _suite_coin(cfg, v):
    rows, exact = _coin_rows(cfg, v)
    v.extra["coin"] = (COIN_HEADER, rows)
    v.extra["coin exact"] = (EXACT_HEADER, exact)


def _suite_eligibility(cfg, v):
    spec = parse_generator(cfg.gen or "gnp:16,0.3")
    traces = []
    for k in range(cfg.runs):
        net = generate(spec, cfg.seed + k)
        traces.append(run_sync(net, {u: UN for u in net.agents}, variant="sj", seed=cfg.seed + k))
    rep = check_eligibility_probability(traces, branches=cfg.branches, seed=cfg.seed)
    _report_rows(v, rep, "sj: elimination >= (1 - p_v)/2")
    checked, bad = one_round_leader_check(cfg.max_agents, "sj")
    v.add("sj: exact one-round outcomes on small graphs", f"{checked} cases, {len(bad)} violations", "0", not bad)
    for p in (Fraction(1, 4), Fraction(3, 4)):
        checked, bad = one_round_leader_check(min(cfg.max_agents, 3), "sj", p=p)
        worst = min((q / (1 - px) for *_, q, px in bad), default=None)
        v.add(f"sj: exact one-round outcomes at p={p}", f"{checked} cases, {len(bad)} below 1/2"
              + (f", worst ratio {worst}" if bad else ""), "none (the factor depends on p)", None)


SUITE_FNS = {
    "transitions": _suite_transitions,
    "static-contraction": _suite_static,
    "dynamic-locality": _suite_dynamic_locality,
    "dynamic-contraction": _suite_dynamic_contraction,
    "async-lemmas": _suite_async,
    "coin": _suite_coin,
    "sj-eligibility": _suite_eligibility,
}

# per-suite defaults for the shared knobs (trials, branches, runs, rounds)
SUITE_DEFAULTS = {
    "static-contraction": dict(runs=5, branches=10_000),
    "dynamic-locality": dict(runs=2, rounds=200, churn=0.02),
    "dynamic-contraction": dict(runs=1, rounds=200, churn=0.02, branches=10_000, windows=20),
    "async-lemmas": dict(runs=100, trials=2000),
    "coin": dict(trials=100_000),
    "sj-eligibility": dict(runs=3, branches=100_000),
}


def cmd_verify(cfg):
    if cfg.suite not in SUITE_FNS:
        raise UsageError(f"unknown suite {cfg.suite!r}; expected one of {', '.join(SUITES)}")
    for key, value in SUITE_DEFAULTS.get(cfg.suite, {}).items():
        if getattr(cfg, key) is None:
            setattr(cfg, key, value)
    v = _Verdicts(cfg.suite)
    SUITE_FNS[cfg.suite](cfg, v)
    v.print()
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / f"verify_{cfg.suite}.csv", _Verdicts.header, v.rows)
        for k, (name, (header, rows)) in enumerate(sorted(v.extra.items())):
            _write_csv(out / f"verify_{cfg.suite}_{k}.csv", ["table"] + list(header),
                       [[name] + [_fmt(x) for x in r] for r in rows])
        _write_config(cfg, out)
    print("all checks passed" if v.passed else "VERIFICATION FAILED")
    return 0 if v.passed else 1


# --- coin ---------------------------------------------------------------------------------


def cmd_coin(cfg):
    rows, exact = _coin_rows(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "coin.csv", COIN_HEADER, rows)
    _write_csv(out / "coin_exact.csv", EXACT_HEADER, exact)
    _write_config(cfg, out)
    failed = [r for r in rows if r[6] != "true" or r[10] != "true"] + [r for r in exact if r[-1] != "true"]
    for r in rows:
        print(f"d={r[0]:>3} p={r[1]:<5} y={float(r[3]):.5f} bound={float(r[5]):.5f} x={float(r[7]):.5f} "
              f"1/d={float(r[9]):.5f}")
    print(f"{len(rows) - len(failed)}/{len(rows)} estimates within bounds; exact rows in {out / 'coin_exact.csv'}"
          if not failed else f"{len(failed)} row(s) outside bounds")
    return 0 if not failed else 1


# --- gen --------------------------------------------------------------------------------------


def cmd_gen(cfg):
    if not cfg.gen:
        raise UsageError("gen needs --gen FAMILY:PARAMS")
    net = generate(parse_generator(cfg.gen), cfg.seed)
    text = format_edge_list(net)
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if cfg.churn:
        if not cfg.script_out:
            raise UsageError("--churn needs --script-out FILE")
        script = churn_script(net, cfg.churn_rounds, cfg.churn, seed=cfg.seed, fault_rate=cfg.fault_rate)
        Path(cfg.script_out).write_text(format_change_script(script), encoding="utf-8")
    return 0


# --- parser -------------------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="singing-mis", description="Singing-model MIS simulations and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    options = {}

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="INI file with defaults for this command")
        options[name] = o = _Options(p)
        return o

    o = command("run", "run seeded trials and write traces plus a summary")
    _add_graph_options(o)
    _add_protocol_options(o)
    _add_engine_options(o)
    o.add("--trials", default=1, type=int)
    o.add("--seed", default=0, type=int, help="trial t uses seed + t")
    o.add("--script", help="change-script file (sync engine only)")
    o.add("--churn", type=float, help="generate random edge churn with this rate")
    o.add("--churn-rounds", default=200, type=int)
    o.add("--traces", default=True, action=argparse.BooleanOptionalAction, help="write per-trial trace CSVs")
    o.add("--out", default="out", help="output directory")

    o = command("sweep", "convergence rounds against network size")
    _add_protocol_options(o)
    _add_engine_options(o)
    o.add("--family", default="gnp", choices=["gnp", "ring", "path", "grid", "complete", "star"])
    o.add("--sizes", default=[16, 32, 64, 128, 256, 512, 1024, 2048, 4096], type=_int_list)
    o.add("--degree", default=8.0, type=float, help="expected degree for gnp (p = degree / n)")
    o.add("--trials", default=200, type=int, help="trials per size, each on a freshly drawn graph")
    o.add("--seed", default=0, type=int)
    o.add("--out", default="out")

    o = command("verify", "run an invariant or bound suite")
    o.parser.add_argument("suite", help=", ".join(SUITES))
    o.add("--variant", choices=[v.value for v in ProtocolVariant], help="restrict to one variant")
    o.add("--gen", help="override the suite's network generator")
    o.add("--seed", default=0, type=int)
    o.add("--runs", type=int, help="traces or runs per setting")
    o.add("--trials", type=int, help="Monte Carlo trials")
    o.add("--branches", type=int, help="restart branches per frozen configuration")
    o.add("--rounds", type=int, help="rounds of churn")
    o.add("--churn", type=float, help="edge churn rate")
    o.add("--windows", type=int, help="sampled windows per dynamic trace")
    o.add("--timing", type=_timing, help="T_MIN,T_MAX,DELTA_MAX for async-lemmas (default 4,8,2)")
    o.add("--window-graph", default="gnp:64,0.1", help="network for the async window check")
    o.add("--degeneration", default=100, type=int, help="random graphs for the lock-step comparison")
    o.add("--max-ell", default=8, type=int)
    o.add("--max-agents", default=4, type=int)
    o.add("--d", default=list(range(1, 17)), type=_int_list)
    o.add("--p", dest="p_values", default=[0.25, 0.5, 0.75], type=_float_list)
    o.add("--cap", default=10_000, type=int, help="bit cap when comparing strings")
    o.add("--exact-cap", default=6, type=int, help="value cap of the enumerated exact check")
    o.add("--out", help="directory for CSV reports")

    o = command("coin", "estimate the coin competition probabilities")
    o.add("--d", default=list(range(1, 17)), type=_int_list)
    o.add("--p", dest="p_values", default=[0.25, 0.5, 0.75], type=_float_list)
    o.add("--trials", default=100_000, type=int)
    o.add("--seed", default=0, type=int)
    o.add("--cap", default=10_000, type=int)
    o.add("--exact-cap", default=6, type=int)
    o.add("--out", default="out")

    o = command("gen", "write a generated network (and optionally a churn script)")
    o.add("--gen", help="generator, e.g. gnp:256,0.05")
    o.add("--seed", default=0, type=int)
    o.add("--out", help="edge-list file (default: stdout)")
    o.add("--churn", type=float)
    o.add("--churn-rounds", default=200, type=int)
    o.add("--fault-rate", default=0.0, type=float)
    o.add("--script-out")
    return parser, options


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "coin": cmd_coin, "gen": cmd_gen}


def main(argv=None):
    parser, options = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(options[args.command], args, args.command)
        if args.command == "verify":
            cfg.suite = args.suite
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError, NetworkError, OSError) as exc:
        print(f"singing-mis: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
