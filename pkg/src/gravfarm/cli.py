"""``gravfarm`` command line: bench, agent, server, verify, plot."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

DEFAULT_AGENT = "127.0.0.1:7070"


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(",", " ").split()]


def _str_list(text: str) -> list[str]:
    return [x for x in str(text).replace(",", " ").split()]


def cmd_agent(args) -> int:
    from .rpc.agent import run_agent

    def ready(address):
        print(f"gravfarm agent listening on {address}", flush=True)

    try:
        run_agent(args.listen, ready=ready, heartbeat_interval=args.heartbeat,
                  max_attempts=args.max_attempts)
    except KeyboardInterrupt:
        pass
    return 0


def cmd_server(args) -> int:
    from .rpc.server import run_server
    try:
        run_server(args.agent, args.capacity, args.listen, heartbeat_interval=args.heartbeat,
                   fail_after=args.fail_after)
    except KeyboardInterrupt:
        pass
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchSpec, read_spec_file, run_bench
    values = read_spec_file(args.spec) if args.spec else {}
    for key in ("n", "modes", "workers", "steps", "reps", "seed", "dist", "out", "self_host",
                "theta", "chunks", "rank_threads", "agent"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    spec = BenchSpec.from_mapping(values, paper_matrix=args.paper_matrix)
    out = values.get("out", "results.csv")
    rows = run_bench(spec, out=out, self_host=values.get("self_host"), agent=values.get("agent"),
                     progress=not args.quiet)
    failed = [r for r in rows if r.get("status", "ok") != "ok"]
    print(f"wrote {len(rows)} rows to {out}" + (f" ({len(failed)} failed)" if failed else ""))
    return 1 if failed else 0


def cmd_plot(args) -> int:
    from .bench import emit_plot_script
    path = emit_plot_script(args.csv, args.out)
    print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    import pytest
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print(f"test suite not found at {tests}", file=sys.stderr)
        return 2
    extra = ["-q"] + (["-k", args.k] if args.k else [])
    if args.acceptance:
        return pytest.main([str(tests / "test_acceptance.py"), "-s"] + extra)
    return pytest.main([str(tests)] + extra)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gravfarm", description="Barnes-Hut treecode with "
                                "sequential, shared, ORB-rank and GridRPC-style strategies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run the benchmark matrix and write a CSV")
    b.add_argument("--spec", help="flat key = value file; keys match the long flags")
    b.add_argument("--n", type=_int_list)
    b.add_argument("--modes", type=_str_list)
    b.add_argument("--workers", type=_int_list)
    b.add_argument("--steps", type=int)
    b.add_argument("--reps", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--dist", choices=["uniform", "plummer"])
    b.add_argument("--theta", type=float)
    b.add_argument("--chunks", type=int, help="gridrpc chunk count (default 4 x server slots)")
    b.add_argument("--rank-threads", dest="rank_threads", type=int)
    b.add_argument("--out")
    b.add_argument("--self-host", dest="self_host", type=int, metavar="K",
                   help="launch an agent and K local servers for gridrpc cells")
    b.add_argument("--agent", help="existing agent for gridrpc cells (default $GRAVFARM_AGENT)")
    b.add_argument("--paper-matrix", action="store_true",
                   help="n 10000 50000 100000, workers 1 2 4 8 16 24")
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("agent", help="run the agent daemon")
    a.add_argument("--listen", default=os.environ.get("GRAVFARM_AGENT", DEFAULT_AGENT))
    a.add_argument("--heartbeat", type=float, default=2.0, help="heartbeat interval, seconds")
    a.add_argument("--max-attempts", dest="max_attempts", type=int, default=3)
    a.set_defaults(func=cmd_agent)

    s = sub.add_parser("server", help="run a compute server")
    s.add_argument("--agent", default=os.environ.get("GRAVFARM_AGENT", DEFAULT_AGENT))
    s.add_argument("--capacity", type=int, default=int(os.environ.get("GRAVFARM_CAPACITY", "1")))
    s.add_argument("--listen", help="address to register under (default: the local socket address)")
    s.add_argument("--heartbeat", type=float, default=2.0)
    s.add_argument("--fail-after", dest="fail_after", type=int,
                   help="fault injection: exit abruptly when task N+1 arrives")
    s.set_defaults(func=cmd_server)

    v = sub.add_parser("verify", help="run the oracle and property test suite")
    v.add_argument("--acceptance", action="store_true", help="only the acceptance criteria")
    v.add_argument("-k", help="pytest -k expression")
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="emit a matplotlib script from a results CSV")
    pl.add_argument("csv")
    pl.add_argument("--out", help="script path (default: <csv stem>_plot.py)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
