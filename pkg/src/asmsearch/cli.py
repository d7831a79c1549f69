"""Command-line entry point: optimize, check, run, bench."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import random
import sys

from . import __version__
from .checker import Verdict, check_equivalence
from .codegen import DEFAULT_REGISTERS
from .ir import IrError, interpret_ir, parse_ir
from .machine import (CallingConvention, MachineError, UnsupportedOpcode, parse_asm,
                      render_function, run_function)
from .measure import (MeasureConfig, NativeTimer, Objective, SimCostModel, SimTimer,
                      calibrate_batch_size, measure_pair)
from .search import Evaluator, SearchConfig, bet_and_run

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

# option name -> default, used when neither the flag nor the config file sets it
DEFAULTS = {
    "seed": 0, "budget": 20_000, "bets": 10, "bet_budget": 200, "cost_model": None,
    "registers": len(DEFAULT_REGISTERS), "paranoid": False, "timer": "sim",
    "cyclegoal": 10_000, "nob": 31, "out_dir": ".", "layout": None,
}


class UsageError(Exception):
    pass


def _read(path):
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from e


def _settings(args):
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = tomllib.loads(_read(args.config))
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"{args.config}: {e}") from e
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
    out = {}
    for k, d in DEFAULTS.items():
        v = getattr(args, k, None)
        out[k] = v if v is not None else cfg.get(k, d)
    return out


def _layout(s, prog):
    if s["layout"] is None:
        return CallingConvention.for_program(prog)
    sizes = [int(x) for x in str(s["layout"]).split(",")]
    return CallingConvention.for_program(prog, sizes)


def _timer(s, cc):
    if s["timer"] == "hw":
        return NativeTimer(cc)
    model = SimCostModel.from_file(s["cost_model"]) if s["cost_model"] else SimCostModel()
    return SimTimer(model)


def _registers(n):
    if not 3 <= n <= len(DEFAULT_REGISTERS):
        raise UsageError(f"--registers must be between 3 and {len(DEFAULT_REGISTERS)}")
    if n == 3:
        return ("r8", "r9", "rdx")
    return DEFAULT_REGISTERS[:n]


def _search_config(s):
    total, bets, per = s["budget"], s["bets"], s["bet_budget"]
    if bets * per > total:
        # a small total budget shrinks the bet phase rather than failing
        per = total // bets
        if per == 0:
            bets = 1
    return SearchConfig(total_budget=total, bet_runs=bets, bet_budget=per, seed=s["seed"],
                        paranoid=bool(s["paranoid"]), registers=_registers(s["registers"]),
                        measure=MeasureConfig(s["cyclegoal"], s["nob"], s["seed"]))


def cmd_optimize(args) -> int:
    s = _settings(args)
    text = _read(args.ir)
    try:
        prog = parse_ir(text)
    except IrError as e:
        print(f"{args.ir}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    cc = _layout(s, prog)
    conf = _search_config(s)
    ev = Evaluator(prog, cc, Objective(_timer(s, cc), conf.measure), conf.registers)
    result = bet_and_run(prog, conf, ev)

    stem = os.path.splitext(os.path.basename(args.ir))[0]
    os.makedirs(s["out_dir"], exist_ok=True)
    paths = {k: os.path.join(s["out_dir"], f"{stem}{ext}")
             for k, ext in (("asm", ".s"), ("trace", ".trace.csv"), ("manifest", ".manifest.json"))}
    with open(paths["asm"], "w") as f:
        f.write(render_function(result.asm, prog.name))
    with open(paths["trace"], "w") as f:
        f.write(result.trace.to_csv())
    manifest = {
        "tool": "asmsearch", "version": __version__,
        "config": {"seed": conf.seed, "total_budget": conf.total_budget, "bet_runs": conf.bet_runs,
                   "bet_budget": conf.bet_budget, "registers": list(conf.registers),
                   "paranoid": conf.paranoid, "timer": s["timer"], "cost_model": s["cost_model"],
                   "cyclegoal": conf.measure.cyclegoal, "nob": conf.measure.nob,
                   "layout": list(cc.input_sizes)},
        "seed": conf.seed,
        "inputs": {os.path.basename(args.ir): hashlib.sha256(text.encode()).hexdigest()},
        "initial_cost": result.initial_cost, "final_cost": result.final_cost,
        "bet_costs": result.bet_costs, "best_bet": result.best_bet,
        "candidate": {"schedule": list(result.candidate.schedule),
                      "templates": list(result.candidate.templates),
                      "decisions": [list(d) for d in result.candidate.decisions]},
        "verdict": result.verdict.to_dict(timing=False),
        "artifacts": {k: os.path.basename(p) for k, p in paths.items()},
    }
    with open(paths["manifest"], "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{prog.name}: cost {result.initial_cost:g} -> {result.final_cost:g} "
          f"({len(result.asm)} instructions), verdict {result.verdict.status}")
    print(f"wrote {paths['asm']}, {paths['trace']}, {paths['manifest']}")
    return 0 if result.verdict.accepted else 2


def cmd_check(args) -> int:
    s = _settings(args)
    try:
        prog = parse_ir(_read(args.ir))
    except IrError as e:
        print(f"{args.ir}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    cc = _layout(s, prog)
    try:
        asm = parse_asm(_read(args.asm))
    except UnsupportedOpcode as e:
        v = Verdict(False, f"UnsupportedOpcode: {e}", "Unknown")
        print(v.to_json())
        return 3
    except MachineError as e:
        print(f"{args.asm}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    v = check_equivalence(prog, asm, cc, seed=s["seed"])
    print(v.to_json())
    return 0 if v.accepted else 3


def _ints(xs):
    try:
        return [int(x, 0) for x in xs]
    except ValueError as e:
        raise UsageError(f"bad input value: {e}") from e


def cmd_run(args) -> int:
    s = _settings(args)
    vals = _ints(args.inputs)
    try:
        if args.file.endswith(".s"):
            asm = parse_asm(_read(args.file))
            if args.ir:
                cc = _layout(s, parse_ir(_read(args.ir)))
            else:
                cc = CallingConvention((len(vals),) if vals else (), args.outputs)
            out = run_function(asm, cc, vals)
        else:
            out = [v.bits for v in interpret_ir(parse_ir(_read(args.file)), vals)]
    except (IrError, MachineError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    for v in out:
        print(f"{v:#x}")
    return 0


def cmd_bench(args) -> int:
    s = _settings(args)
    try:
        a, b = parse_asm(_read(args.a)), parse_asm(_read(args.b))
        cc = _layout(s, parse_ir(_read(args.ir))) if args.ir else CallingConvention((args.inputs,), args.outputs)
    except (IrError, MachineError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    timer = _timer(s, cc)
    ha, hb = timer.load(a), timer.load(b)
    bs = calibrate_batch_size(timer, ha, s["cyclegoal"])
    pa, pb = measure_pair(timer, ha, hb, bs, s["nob"], random.Random(s["seed"]))
    print(json.dumps({"batch_size": bs, "PA": pa, "PB": pb,
                      "per_call_A": pa / bs, "per_call_B": pb / bs}, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="asmsearch", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value settings file; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--layout", help="words per input array, e.g. 2,2")

    o = sub.add_parser("optimize", help="search for fast assembly for an IR function")
    o.add_argument("ir")
    common(o)
    o.add_argument("--budget", type=int, help="total mutations")
    o.add_argument("--bets", type=int)
    o.add_argument("--bet-budget", dest="bet_budget", type=int)
    o.add_argument("--cost-model", dest="cost_model")
    o.add_argument("--registers", type=int, help="size of the register file (3 uses r8, r9, rdx)")
    o.add_argument("--paranoid", action="store_true", default=None)
    o.add_argument("--timer", choices=("sim", "hw"))
    o.add_argument("--out-dir", dest="out_dir")
    o.set_defaults(fn=cmd_optimize)

    c = sub.add_parser("check", help="check an assembly file against an IR function")
    c.add_argument("ir")
    c.add_argument("asm")
    common(c)
    c.set_defaults(fn=cmd_check)

    r = sub.add_parser("run", help="interpret an IR or assembly file on concrete inputs")
    r.add_argument("file")
    r.add_argument("inputs", nargs="*")
    common(r)
    r.add_argument("--ir", help="IR file giving the calling convention for a .s file")
    r.add_argument("--outputs", type=int, default=1)
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="compare two assembly files with a timer")
    b.add_argument("a")
    b.add_argument("b")
    common(b)
    b.add_argument("--ir")
    b.add_argument("--inputs", type=int, default=1, help="input words when no IR is given")
    b.add_argument("--outputs", type=int, default=1)
    b.add_argument("--timer", choices=("sim", "hw"))
    b.add_argument("--cost-model", dest="cost_model")
    b.add_argument("--nob", type=int)
    b.add_argument("--cyclegoal", type=int)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
