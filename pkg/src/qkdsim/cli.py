"""Command-line surface: security calculator, r-vs-n curves, end-to-end
runs, the one-time-pad demo, and LDPC benchmarking.

All randomness is seeded; when no seed is given one is drawn from OS
entropy and recorded in the output so every run can be replayed.
"""

from __future__ import annotations

import argparse
import secrets
import sys
from pathlib import Path

import numpy as np

from . import finite_key, ldpc, session
from .bits import BitString, SeededRng, random_bits, xor
from .config import RunConfig, load_run_config, parse_run_config
from .link import SocketTransport
from .session import (REPORT_HEADER, ProtocolAbort, SessionConfig,
                      config_digest, run_alice, run_bob, run_session)
from .source import SourceModel


def _budget_from_args(args) -> finite_key.SecurityBudget:
    return finite_key.SecurityBudget(
        eps_total=args.eps, eps_smooth=args.eps_smooth, eps_pa=args.eps_pa,
        eps_ec=args.eps_ec, eps_pe=args.eps_pe)


def cmd_calc(args) -> int:
    budget = _budget_from_args(args)
    params = finite_key.FiniteKeyParams(
        n=args.n, m=args.m, q_observed=args.q, code_rate=args.rate,
        a_correction=args.A)
    x = finite_key.xi(params.m, budget.eps_pe, params.d_outcomes)
    q_u = finite_key.qber_upper(params.q_observed, x)
    delta = finite_key.delta_penalty(params.n, budget.eps_smooth,
                                     budget.eps_pa, budget.eps_ec)
    r_raw, r = finite_key.secret_fraction(params, budget)
    key_len = finite_key.secret_key_length(params.n, r)
    f_e = (finite_key.reconciliation_efficiency(params.code_rate, params.q_observed)
           if params.q_observed > 0 else float("nan"))
    print(f"n               = {params.n}")
    print(f"m               = {params.m}")
    print(f"Q               = {params.q_observed:.6g}")
    print(f"xi              = {x:.7g}")
    print(f"Q_u             = {q_u:.7g}")
    print(f"Delta(n)        = {delta:.7g}")
    print(f"f_E             = {f_e:.6g}")
    print(f"r_raw           = {r_raw:.6g}")
    print(f"r               = {r:.6g}")
    print(f"secret_key_len  = {key_len}")
    return 0


def cmd_curve(args) -> int:
    q_values = [float(s) for s in args.q.split(",") if s]
    if args.n_points < 1 or args.n_max < args.n_min:
        raise ValueError("empty n range")
    n_values = sorted({int(round(x)) for x in np.logspace(
        np.log10(args.n_min), np.log10(args.n_max), args.n_points)})
    budget = _budget_from_args(args)
    points = finite_key.r_vs_n_curve(q_values, n_values, budget,
                                     code_rate=args.rate,
                                     a_correction=args.A)
    text = finite_key.curve_csv(points)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _load_or_default_config(args) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config)
    else:
        cfg = parse_run_config({})
    if args.seed is not None:
        cfg = RunConfig(model=cfg.model, session=cfg.session, seed=args.seed,
                        session_id=cfg.session_id, raw=cfg.raw)
    return cfg


def _write_run_outputs(outdir: Path, cfg: RunConfig, outcome, role: str):
    outdir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg.session, cfg.model)
    report_path = outdir / f"report_{role}.csv"
    with open(report_path, "w") as fh:
        fh.write(f"# seed={cfg.seed} rng=pcg64 config={digest}\n")
        fh.write(REPORT_HEADER + "\n")
        fh.write(outcome.report.csv_row() + "\n")
    (outdir / f"{role}_key.bin").write_bytes(outcome.key.serialize())
    with open(outdir / f"audit_{role}.txt", "w") as fh:
        for k, v in outcome.audit.items():
            fh.write(f"{k}={v}\n")
    print(f"[{role}] secret key length {len(outcome.key)}, "
          f"QBER {outcome.report.qber:.4f}, outputs in {outdir}")


def cmd_run(args) -> int:
    cfg = _load_or_default_config(args)
    if args.seed is None and "seed" not in cfg.raw:
        # no explicit seed anywhere: draw one and record it in the report
        cfg = RunConfig(model=cfg.model, session=cfg.session,
                        seed=secrets.randbits(48), session_id=cfg.session_id,
                        raw=cfg.raw)
    outdir = Path(args.out or "qkd_run")
    corrupt = args.corrupt_bit

    try:
        if args.listen:
            host, port = args.listen.rsplit(":", 1)
            transport = SocketTransport.listen(host, int(port))
            try:
                outcome = run_bob(transport, cfg.session, cfg.model, cfg.seed,
                                  cfg.session_id)
            finally:
                transport.close()
            _write_run_outputs(outdir, cfg, outcome, "bob")
        elif args.connect:
            host, port = args.connect.rsplit(":", 1)
            transport = SocketTransport.connect(host, int(port))
            try:
                outcome = run_alice(transport, cfg.session, cfg.model,
                                    cfg.seed, cfg.session_id,
                                    _corrupt_reconciled_bit=corrupt)
            finally:
                transport.close()
            _write_run_outputs(outdir, cfg, outcome, "alice")
        else:
            key_a, key_b, report = run_session(
                cfg.session, cfg.model, cfg.seed, cfg.session_id,
                _corrupt_reconciled_bit=corrupt)
            if key_a != key_b:
                print("error: keys differ after verification", file=sys.stderr)
                return 2
            outdir.mkdir(parents=True, exist_ok=True)
            digest = config_digest(cfg.session, cfg.model)
            with open(outdir / "report.csv", "w") as fh:
                fh.write(f"# seed={cfg.seed} rng=pcg64 config={digest}\n")
                fh.write(REPORT_HEADER + "\n")
                fh.write(report.csv_row() + "\n")
            (outdir / "alice_key.bin").write_bytes(key_a.serialize())
            (outdir / "bob_key.bin").write_bytes(key_b.serialize())
            print(f"secret key length {len(key_a)}, QBER "
                  f"{report.qber:.4f}, outputs in {outdir}")
    except ProtocolAbort as exc:
        print(f"session aborted: {exc}", file=sys.stderr)
        return 3
    return 0


def cmd_otp(args) -> int:
    key = BitString.deserialize(Path(args.key).read_bytes())
    data = Path(args.infile).read_bytes()
    n_bits = 8 * len(data)
    if len(key) < n_bits:
        print(f"error: key has {len(key)} bits, input needs {n_bits}",
              file=sys.stderr)
        return 1
    msg = BitString.from_bytes(data, n_bits)
    out = xor(msg, key[:n_bits])
    Path(args.outfile).write_bytes(out.to_bytes())
    return 0


def cmd_ldpc_bench(args) -> int:
    rng = SeededRng(args.seed if args.seed is not None else secrets.randbits(48))
    dist = ldpc.DegreeDistribution.from_text(args.dist)
    h = ldpc.peg_construct(args.n_block, args.rate, dist, rng)
    q_values = [float(s) for s in args.q.split(",") if s]
    lines = ["q,trials,success_rate,mean_iterations"]
    for q in q_values:
        successes = 0
        iters = []
        for _ in range(args.trials):
            reference = random_bits(args.n_block, rng)
            flips = rng.generator.random(args.n_block) < q
            noisy = xor(reference, BitString(flips.astype(np.uint8)))
            target = ldpc.syndrome(h, reference)
            res = ldpc.decode_bp_serial(h, noisy, target, max(q, 1e-3),
                                        max_iters=args.max_iters)
            if res.converged:
                successes += 1
                iters.append(res.iterations)
        mean_it = float(np.mean(iters)) if iters else float("nan")
        lines.append(f"{q:g},{args.trials},{successes / args.trials:g},"
                     f"{mean_it:g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdsim",
        description="BB84 QKD simulator and finite-key security toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_eps_flags(p):
        p.add_argument("--eps", type=float, default=1e-10,
                       help="total failure probability")
        p.add_argument("--eps-smooth", type=float, default=None)
        p.add_argument("--eps-pa", type=float, default=None)
        p.add_argument("--eps-ec", type=float, default=None)
        p.add_argument("--eps-pe", type=float, default=None)

    p = sub.add_parser("calc", help="evaluate the secret fraction")
    p.add_argument("--n", type=int, default=10**6)
    p.add_argument("--m", type=int, default=10**6)
    p.add_argument("--q", type=float, default=0.06)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--A", type=float, default=0.985)
    add_eps_flags(p)
    p.set_defaults(fn=cmd_calc)

    p = sub.add_parser("curve", help="emit r vs n CSV over a (q, n) grid")
    p.add_argument("--q", default="0.02,0.05,0.08",
                   help="comma-separated QBER values")
    p.add_argument("--n-min", type=float, default=1e3)
    p.add_argument("--n-max", type=float, default=1e8)
    p.add_argument("--n-points", type=int, default=50)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--A", type=float, default=0.985)
    add_eps_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_curve)

    p = sub.add_parser("run", help="run a full session")
    p.add_argument("--config", default=None, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--listen", default=None, metavar="HOST:PORT",
                   help="run Bob's side, waiting for a peer")
    p.add_argument("--connect", default=None, metavar="HOST:PORT",
                   help="run Alice's side, connecting to a peer")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--corrupt-bit", type=int, default=None,
                   help=argparse.SUPPRESS)  # test hook: flip a reconciled bit
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("otp", help="one-time-pad encrypt/decrypt a file")
    p.add_argument("direction", choices=["encrypt", "decrypt"])
    p.add_argument("--key", required=True, help="key file (serialized bits)")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(fn=cmd_otp)

    p = sub.add_parser("ldpc-bench", help="frame success rate benchmark")
    p.add_argument("--n-block", type=int, default=10**4)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--dist", default="3:1;6:1")
    p.add_argument("--q", default="0.02,0.04,0.06,0.08")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--max-iters", type=int, default=ldpc.DEFAULT_MAX_ITERS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ldpc_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
