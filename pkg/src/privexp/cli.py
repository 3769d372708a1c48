"""Command-line interface.

Subcommands:

* ``exponent``: one solve of phi, nu or nu_tau, written as JSON;
* ``sweep``: an exponent over a grid of equal budgets, written as CSV;
* ``simulate``: exact adversary oracles, exponent trends, two-phase policy
  audits and memoryless-policy Monte Carlo;
* ``trace``: shape a smart-meter demand trace with the optimal policy.

Outputs depend only on the arguments (including ``--seed``), so identical
invocations produce identical bytes. Exit codes: 0 ok, 2 input error,
3 infeasible budgets, 4 resource cap, 5 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import adversary, policies, smartmeter
from .distributions import Alphabet, SourceModel, chernoff, kl, policy_to_json, source_from_json
from .exponents import (
    ConstraintSet,
    DistortionSpec,
    format_float,
    solve_nu,
    solve_nu_tau,
    solve_phi,
    sweep_exponent,
    sweep_to_csv,
)
from .optim import InfeasibleError

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_CAP, EXIT_NONCONVERGED = 0, 2, 3, 4, 5
NATS_PER_BIT = math.log(2.0)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument helpers


def parse_grid(text: str, integer: bool = False) -> list:
    """``a,b,c`` lists values; ``start:stop:step`` is an inclusive arithmetic range."""
    conv = int if integer else float
    try:
        if ":" in text:
            start, stop, step = (conv(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [conv(start + i * step) if integer else start + i * step for i in range(count)]
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad grid {text!r}; use a,b,c or start:stop:step") from None


def parse_pmf(text: str) -> np.ndarray:
    try:
        p = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise CliError(f"bad pmf {text!r}") from None
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise CliError(f"pmf {text!r} must be nonnegative and sum to 1")
    return p


def load_model(path: str, strict: bool = True) -> SourceModel:
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read model {path!r}: {exc}") from None
    try:
        return source_from_json(data, strict=strict)
    except (KeyError, ValueError) as exc:
        raise CliError(f"invalid model {path!r}: {exc}") from None


def load_demand(path: str) -> smartmeter.DemandModel:
    try:
        return smartmeter.load_demand_model(path)
    except OSError as exc:
        raise CliError(f"cannot read model {path!r}: {exc}") from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid model {path!r}: {exc}") from None


def distortion_for(source: SourceModel, args) -> DistortionSpec:
    ya = Alphabet(parse_grid(args.y_alphabet)) if getattr(args, "y_alphabet", None) else None
    if args.distortion == "energy":
        return DistortionSpec.energy(source.x_alphabet, ya)
    if ya is not None:
        raise CliError("--y-alphabet applies to the energy distortion only")
    return DistortionSpec.hamming(source.x_alphabet)


def thread_count(args) -> int:
    value = args.threads if args.threads is not None else os.environ.get("PRIVEXP_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"bad thread count {value!r}") from None
    if n < 1:
        raise CliError("thread count must be positive")
    return n


def emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _num(x):
    """JSON-safe float: non-finite values become strings."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else format_float(x)


# ---------------------------------------------------------------------------
# exponent / sweep


def cmd_exponent(args) -> int:
    source = load_model(args.model, strict=not args.allow_degenerate)
    dist = distortion_for(source, args)
    s_tilde = args.s if args.s_tilde is None else args.s_tilde
    try:
        cons = ConstraintSet(dist, args.s, s_tilde)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if args.which == "phi":
        res = solve_phi(source, cons, tol=args.tol)
    elif args.which == "nu":
        res = solve_nu(source, cons, tol=args.tol)
    else:
        if args.tau is None:
            raise CliError("nu-tau needs --tau")
        res = solve_nu_tau(source, cons, args.tau, tol=args.tol)
    out = {
        "schema": "privexp-v1",
        "kind": "exponent_result",
        "exponent": args.which,
        "budgets": [cons.s_bar, cons.s_tilde],
        "value_nats": _num(res.value),
        "tau_star": _num(res.tau_star),
        "distortions": [_num(d) for d in res.distortions],
        "iterations": res.iterations,
        "duality_gap": _num(res.duality_gap),
        "converged": res.converged,
        "method": res.method,
        "marginals": [m.probs.tolist() for m in res.marginals],
        "policy": policy_to_json(res.policy),
    }
    if args.bits:
        out["value_bits"] = _num(res.value / NATS_PER_BIT)
    emit(dumps(out), args.output)
    if not res.converged and not args.allow_nonconverged:
        print(f"solver did not certify convergence (gap {res.duality_gap:.3g})", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    source = load_model(args.model, strict=not args.allow_degenerate)
    dist = distortion_for(source, args)
    grid = parse_grid(args.s_grid)
    which = args.which.replace("-", "_")
    if which == "nu_tau" and args.tau is None:
        raise CliError("nu-tau needs --tau")
    threads = thread_count(args)
    try:
        table = sweep_exponent(source, dist, grid, which, tau=args.tau, tol=args.tol,
                               warm_start=not args.no_warm_start, threads=threads)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    text = sweep_to_csv(table)
    if args.bits:
        lines = text.splitlines()
        lines[0] += ",value_bits"
        for i, r in enumerate(table.rows, start=1):
            lines[i] += "," + format_float(r.value / NATS_PER_BIT)
        text = "\n".join(lines) + "\n"
    emit(text, args.output)
    print(f"audit: monotone={str(table.monotone).lower()} convex={str(table.convex).lower()}", file=sys.stderr)
    errors = [r for r in table.rows if r.error]
    if errors and all("infeasible" in r.error for r in errors):
        return EXIT_INFEASIBLE
    if errors:
        return EXIT_INPUT
    if not all(r.converged for r in table.rows) and not args.allow_nonconverged:
        return EXIT_NONCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _pmf_pair(args) -> tuple[np.ndarray, np.ndarray]:
    p0, p1 = parse_pmf(args.p0), parse_pmf(args.p1)
    if p0.size != p1.size:
        raise CliError("--p0 and --p1 need the same length")
    return p0, p1


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < 1.0:
        raise CliError(f"epsilon={eps} outside (0, 1)")


def sim_np_exact(args) -> str:
    _check_eps(args.epsilon)
    p0, p1 = _pmf_pair(args)
    lines = ["n,epsilon,type1,type2,threshold_llr,randomization,exponent_nats"]
    for n in parse_grid(args.n, integer=True):
        r = adversary.np_exact(adversary.TestSpec(n, p0, p1, epsilon=args.epsilon))
        lines.append(",".join([str(n), format_float(args.epsilon), format_float(r.type1), format_float(r.type2),
                               format_float(r.threshold), format_float(r.randomization),
                               format_float(-r.log_error / n)]))
    return "\n".join(lines) + "\n"


def sim_bayes_exact(args) -> str:
    p0, p1 = _pmf_pair(args)
    prior0 = args.prior_h0
    lines = ["n,prior_h0,bayes_error,type1,type2,exponent_nats"]
    for n in parse_grid(args.n, integer=True):
        r = adversary.bayes_exact(adversary.TestSpec(n, p0, p1, mode="bayes"), prior0, 1 - prior0)
        lines.append(",".join([str(n), format_float(prior0), format_float(r.bayes_error), format_float(r.type1),
                               format_float(r.type2), format_float(-r.log_error / n)]))
    return "\n".join(lines) + "\n"


def sim_threshold(args) -> str:
    p0, p1 = _pmf_pair(args)
    lines = ["n,delta_prime,threshold,type1,type2,bound,bound_holds"]
    for n in parse_grid(args.n, integer=True):
        r = adversary.np_threshold_test(adversary.TestSpec(n, p0, p1), args.delta_prime)
        lines.append(",".join([str(n), format_float(args.delta_prime), format_float(r.threshold),
                               format_float(r.type1), format_float(r.type2), format_float(math.exp(-n * r.threshold)),
                               str(r.bound_holds).lower()]))
    return "\n".join(lines) + "\n"


def _trend_pmfs(args) -> tuple[np.ndarray, np.ndarray]:
    if args.model is None:
        return _pmf_pair(args)
    source = load_model(args.model)
    cons = ConstraintSet(DistortionSpec.energy(source.x_alphabet), args.s, args.s)
    res = solve_phi(source, cons) if args.mode == "np" else solve_nu(source, cons)
    return res.marginals[0].probs, res.marginals[1].probs


def sim_trend(args) -> str:
    mode = {"np": "neyman_pearson", "bayes": "bayes"}[args.mode]
    if mode == "neyman_pearson":
        _check_eps(args.epsilon)
    p0, p1 = _trend_pmfs(args)
    ns = parse_grid(args.n, integer=True)
    threads = thread_count(args)

    def one(n):
        return adversary.exponent_trend(p0, p1, [n], mode, args.epsilon, args.prior_h0, 1 - args.prior_h0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, ns))
    else:
        parts = [one(n) for n in ns]
    table = adversary.TrendTable(mode, [p.rows[0] for p in parts], parts[0].limit if parts else math.nan)
    text = table.to_csv()
    lines = text.splitlines()
    lines[0] += ",gap_nats"
    for i, (_, _, ex) in enumerate(table.rows, start=1):
        lines[i] += "," + format_float(abs(ex - table.limit))
    if args.bits:
        lines[0] += ",exponent_bits"
        for i, (_, _, ex) in enumerate(table.rows, start=1):
            lines[i] += "," + format_float(ex / NATS_PER_BIT)
    print(f"limit_nats={format_float(table.limit)} approaching={str(table.approaching).lower()}", file=sys.stderr)
    return "\n".join(lines) + "\n"


def _two_phase_setup(args):
    model = load_demand(args.model) if args.model else smartmeter.fixture("binary_075_020")
    source, dist = model.source, model.distortion
    variant = "np_rho_p" if args.variant == "np" else "bayes_rho_q"
    delta, omega = args.delta * args.s, args.omega * args.s
    xi = args.xi
    if xi is None and args.epsilon_prime is None:
        xi = 0.5 * min(source.divergence, delta / dist.d_max)
    try:
        cfg = policies.TwoPhaseConfig.for_source(args.n, args.s, source, dist, delta, omega, xi=xi,
                                                 epsilon_prime=args.epsilon_prime, variant=variant)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return cfg, source, dist


def sim_twophase(args) -> tuple[str, int]:
    cfg, source, dist = _two_phase_setup(args)
    if args.trace is not None:
        h = int(args.trace[1])
        seeds = np.random.SeedSequence(args.seed).spawn(2)
        x = policies.draw_source(source, h, cfg.n, seeds[0])
        trace = policies.two_phase_apply(cfg, source, dist, h, x, seeds[1])
        return trace.to_csv(), EXIT_OK
    audit = policies.two_phase_audit(cfg, source, dist, args.traces, args.seed)
    h0 = audit.per_hypothesis[0]
    budget_ok = all(a.within_budget for a in audit.per_hypothesis)
    phase1_ok = all(a.phase1_constant for a in audit.per_hypothesis)
    print(f"distortion audit: {'PASS' if budget_ok else 'FAIL'}; phase-1 constant: {'PASS' if phase1_ok else 'FAIL'}; "
          f"h0 learning error {format_float(h0.learning_error)} vs xi {format_float(cfg.xi)}: "
          f"{'PASS' if audit.learning_ok else 'FAIL'}", file=sys.stderr)
    return audit.to_csv(), EXIT_OK


def sim_montecarlo(args) -> str:
    """Empirical supply marginals of the memoryless optimizer vs the solver's marginals."""
    model = load_demand(args.model) if args.model else smartmeter.fixture("binary_075_020")
    if args.s <= 0:
        raise CliError("--s must be positive")
    cons = smartmeter.build_energy_constraint(model, args.s)
    res = solve_phi(model.source, cons) if args.variant == "np" else solve_nu(model.source, cons)
    seeds = np.random.SeedSequence(args.seed).spawn(4)
    ys = model.x_alphabet.symbols
    lines = ["hypothesis,y,solver_prob,empirical_prob,sigma,within_3sigma"]
    for h in (0, 1):
        x = policies.draw_source(model.source, h, args.samples, seeds[2 * h])
        y = policies.memoryless_policy_apply(res.policy, h, x, seeds[2 * h + 1])
        for j, sym in enumerate(ys):
            p = float(res.marginals[h].probs[j])
            emp = float(np.mean(y == sym))
            sigma = math.sqrt(p * (1 - p) / args.samples)
            ok = abs(emp - p) <= 3 * sigma + 1e-12
            lines.append(f"h{h},{format_float(sym)},{format_float(p)},{format_float(emp)},{format_float(sigma)},"
                         f"{str(ok).lower()}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    mode = args.sim
    if mode == "twophase":
        text, code = sim_twophase(args)
    else:
        text = {
            "np-exact": sim_np_exact,
            "bayes-exact": sim_bayes_exact,
            "threshold": sim_threshold,
            "trend": sim_trend,
            "montecarlo": sim_montecarlo,
        }[mode](args)
        code = EXIT_OK
    emit(text, args.output)
    return code


# ---------------------------------------------------------------------------
# smart-meter trace


def cmd_trace(args) -> int:
    model = load_demand(args.model) if args.model else smartmeter.fixture("table1_dishwasher")
    seeds = np.random.SeedSequence(args.seed).spawn(2)
    if args.input:
        try:
            demand = smartmeter.read_trace_csv(args.input)
        except (OSError, ValueError, IndexError) as exc:
            raise CliError(f"cannot read trace {args.input!r}: {exc}") from None
    else:
        demand = smartmeter.synthetic_trace(model, args.hypothesis, args.n, seeds[0])
    try:
        result = smartmeter.apply_to_trace(model, args.s, demand, args.variant, seeds[1], args.hypothesis)
    except KeyError as exc:
        raise CliError(f"trace symbol outside the demand alphabet: {exc}") from None
    emit(result.to_csv(), args.output)
    print(f"average renewable {format_float(result.average_renewable)} W vs s={format_float(args.s)} W: "
          f"{'PASS' if result.within_budget else 'FAIL'}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p, threads=False):
    p.add_argument("--output", "-o", help="write to this file instead of stdout")
    p.add_argument("--bits", action="store_true", help="also report values in bits (display only)")
    if threads:
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $PRIVEXP_THREADS or 1); output order is unaffected")


def _add_model(p, required=True):
    p.add_argument("--model", required=required, help="privexp-v1 source or demand-model JSON")
    p.add_argument("--distortion", choices=("energy", "hamming"), default="energy",
                   help="energy: d = x - y with supply above demand forbidden (default); hamming: d = [x != y]")
    p.add_argument("--y-alphabet", help="supply alphabet for the energy distortion (default: data alphabet)")
    p.add_argument("--tol", type=float, default=1e-8, help="Frank-Wolfe duality-gap tolerance")
    p.add_argument("--allow-nonconverged", action="store_true", help="exit 0 even without a certified optimum")
    p.add_argument("--allow-degenerate", action="store_true",
                   help="accept sources with zero divergence between hypotheses")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privexp",
        description="Privacy exponents against hypothesis-testing adversaries under distortion budgets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exponent", help="solve one single-letter privacy exponent",
                       description="Single-letter exponents over memoryless policy pairs: phi = min KL of the "
                                   "output marginals (Neyman-Pearson adversary), nu = min Chernoff information "
                                   "(Bayesian adversary), nu-tau = min Chernoff coefficient at fixed tau.")
    p.add_argument("which", choices=("phi", "nu", "nu-tau"))
    _add_model(p)
    p.add_argument("--s", type=float, required=True, help="distortion budget under h0 (and h1 unless --s-tilde)")
    p.add_argument("--s-tilde", type=float, help="distortion budget under h1")
    p.add_argument("--tau", type=float, help="tau in [0, 1] for nu-tau")
    _add_common(p)
    p.set_defaults(func=cmd_exponent)

    p = sub.add_parser("sweep", help="exponent curve over equal budgets s",
                       description="phi(s, s), nu(s, s) or nu_tau(s, s) over a grid of budgets, warm-started "
                                   "along the grid, with monotonicity and convexity audit flags.")
    p.add_argument("which", choices=("phi", "nu", "nu-tau"))
    _add_model(p)
    p.add_argument("--s-grid", required=True, help="budgets as a,b,c or start:stop:step")
    p.add_argument("--tau", type=float, help="tau for nu-tau")
    p.add_argument("--no-warm-start", action="store_true", help="solve grid points independently (parallel)")
    _add_common(p, threads=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="adversary oracles and policy simulations")
    sims = p.add_subparsers(dest="sim", required=True)

    def pmf_args(q):
        q.add_argument("--p0", default="0.75,0.25", help="per-slot observation pmf under h0")
        q.add_argument("--p1", default="0.2,0.8", help="per-slot observation pmf under h1")
        q.add_argument("--n", default="10", help="horizon(s): n, a,b,c or start:stop:step")

    q = sims.add_parser("np-exact", help="randomized Neyman-Pearson test: minimal type-II error",
                        description="Exact minimal type-II error under a type-I cap epsilon for i.i.d. "
                                    "observations, by type-class enumeration with boundary randomization.")
    pmf_args(q)
    q.add_argument("--epsilon", type=float, required=True, help="type-I error cap in (0, 1)")
    _add_common(q)

    q = sims.add_parser("bayes-exact", help="Bayesian likelihood-ratio test: minimal error probability",
                        description="Exact minimal prior-weighted error sum min(p0 P_h0, p1 P_h1) over type classes.")
    pmf_args(q)
    q.add_argument("--prior-h0", type=float, default=0.5)
    _add_common(q)

    q = sims.add_parser("threshold", help="deterministic threshold test and its type-II bound",
                        description="Accept h0 when (1/n) log LR >= D - delta'/n; checks type2 <= exp(-n t(n)).")
    pmf_args(q)
    q.add_argument("--delta-prime", type=float, default=0.1)
    _add_common(q)

    q = sims.add_parser("trend", help="finite-n error exponents approaching KL or Chernoff information",
                        description="Exact -(1/n) log error per horizon; the gap column is the distance to the "
                                    "KL divergence (np) or Chernoff information (bayes) of the per-slot laws.")
    pmf_args(q)
    q.add_argument("--mode", choices=("np", "bayes"), default="bayes")
    q.add_argument("--epsilon", type=float, default=0.99, help="type-I cap for np mode")
    q.add_argument("--prior-h0", type=float, default=0.5)
    q.add_argument("--model", help="use the optimizer marginals of this model at --s instead of --p0/--p1")
    q.add_argument("--s", type=float, default=0.5, help="budget for --model")
    _add_common(q, threads=True)

    q = sims.add_parser("twophase", help="two-phase hypothesis-unaware policy: Monte Carlo distortion audit",
                        description="Learning phase of floor(ln n) slots emitting min(Y) with a typical-set "
                                    "decision, then the single-letter optimizer at budgets (s - delta, s - omega). "
                                    "Audits the average distortion under both hypotheses.")
    q.add_argument("--model", help="demand-model JSON (default: bundled binary model)")
    q.add_argument("--n", type=int, default=100000)
    q.add_argument("--s", type=float, default=1.0)
    q.add_argument("--delta", type=float, default=0.1, help="delta as a fraction of s")
    q.add_argument("--omega", type=float, default=0.1, help="omega as a fraction of s")
    q.add_argument("--xi", type=float, help="learning-band width (default: half its upper limit)")
    q.add_argument("--epsilon-prime", type=float, help="np variant: xi = 1 - epsilon_prime")
    q.add_argument("--variant", choices=("np", "bayes"), default="np")
    q.add_argument("--traces", type=int, default=10000)
    q.add_argument("--trace", choices=("h0", "h1"), help="emit one slot-level trace instead of the audit")
    q.add_argument("--seed", type=int, required=True)
    _add_common(q)

    q = sims.add_parser("montecarlo", help="memoryless optimizer: empirical vs solver supply marginals",
                        description="Applies the optimal memoryless policy to synthetic i.i.d. demand and "
                                    "compares the empirical supply frequencies with the solver's marginals.")
    q.add_argument("--model", help="demand-model JSON (default: bundled binary model)")
    q.add_argument("--s", type=float, default=0.5)
    q.add_argument("--variant", choices=("np", "bayes"), default="np")
    q.add_argument("--samples", type=int, default=100000)
    q.add_argument("--seed", type=int, required=True)
    _add_common(q)
    for q in sims.choices.values():
        q.set_defaults(func=cmd_simulate)

    p = sub.add_parser("trace", help="smart-meter supply trace under the optimal memoryless policy",
                       description="Shapes a demand trace (CSV or synthetic i.i.d.) with the optimal policy at "
                                   "renewable rate s; writes slot,demand_w,supply_w,renewable_w.")
    p.add_argument("--model", help="demand-model JSON (default: bundled dishwasher model)")
    p.add_argument("--s", type=float, required=True, help="renewable generation rate in watts (0 allowed)")
    p.add_argument("--variant", choices=("phi", "nu"), default="phi")
    p.add_argument("--hypothesis", type=int, choices=(0, 1), default=0)
    p.add_argument("--input", help="demand trace CSV (demand_w column)")
    p.add_argument("--n", type=int, default=1000, help="synthetic trace length when no --input")
    p.add_argument("--seed", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except adversary.ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
