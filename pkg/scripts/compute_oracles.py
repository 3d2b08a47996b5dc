"""Recompute the stored reference controls and costs of the benchmark registry.

Usage: python3 scripts/compute_oracles.py [--out PATH] [--only NAME ...]

Each entry records the seeds, path counts and mesh that produced it, so the
numbers can be regenerated exactly.  Runs in roughly half an hour.
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from jumpsmp import benchmarks as bm
from jumpsmp.noise import sample_batch
from jumpsmp.problem import LinearFeedback, ThresholdFeedback

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "jumpsmp" / "data" / "oracles.json"
BASE_STEPS = 512
SEARCH_PATHS = 20_000
REFERENCE_PATHS = 100_000


def lq_entry() -> dict:
    problem, ms, p = bm.lq_problem()
    batch = sample_batch(101, ms, p["T"], BASE_STEPS, SEARCH_PATHS)
    t0 = time.time()
    found = bm.search_linear_gains(problem, batch)
    cov = bm.gain_covariance(problem, batch, found["gain"], found["jump_gain"])
    ref = LinearFeedback(found["gain"], jump_gain=found["jump_gain"])
    cost, se = bm.chunked_cost(problem, ref, ms, p["T"], BASE_STEPS, 202, REFERENCE_PATHS)
    return {
        "params": p, "gain": found["gain"], "jump_gain": found["jump_gain"],
        "gain_se": float(np.sqrt(cov[0, 0])), "jump_gain_se": float(np.sqrt(cov[1, 1])),
        "gain_cov": cov.tolist(), "search_seed": 101, "search_paths": SEARCH_PATHS,
        "search_evaluations": found["evaluations"], "search_seconds": round(time.time() - t0, 1),
        "reference_cost": cost, "reference_cost_se": se, "reference_seed": 202,
        "reference_paths": REFERENCE_PATHS, "base_steps": BASE_STEPS,
        "provenance": ("nested bounded Brent searches over time-constant (gain, jump gain) on one "
                       f"{SEARCH_PATHS}-path ensemble (seed 101, common random numbers); gain standard "
                       "errors by the delta method on the same ensemble; reference cost from "
                       f"{REFERENCE_PATHS} fresh paths (seed 202)"),
    }


def bangbang_entry() -> dict:
    problem, ms, p = bm.bangbang_problem()
    batch = sample_batch(103, ms, p["T"], BASE_STEPS, SEARCH_PATHS)
    found = bm.search_threshold(problem, batch)
    ref = ThresholdFeedback(found["theta"])
    cost, se = bm.chunked_cost(problem, ref, ms, p["T"], BASE_STEPS, 203, REFERENCE_PATHS)
    flipped = bm.chunked_cost(problem, ThresholdFeedback(found["theta"], 1.0, -1.0), ms, p["T"],
                              BASE_STEPS, 203, 20_000)
    return {
        "params": p, "theta": found["theta"], "scan": found["scan"], "search_seed": 103,
        "search_paths": SEARCH_PATHS, "reference_cost": cost, "reference_cost_se": se,
        "reference_seed": 203, "reference_paths": REFERENCE_PATHS, "base_steps": BASE_STEPS,
        "flipped_cost": flipped[0], "flipped_cost_se": flipped[1],
        "provenance": ("threshold scan on 21 points of [-0.5, 0.5] then a bounded Brent polish, "
                       f"{SEARCH_PATHS} paths (seed 103, common random numbers); reference cost from "
                       f"{REFERENCE_PATHS} fresh paths (seed 203)"),
    }


def nonlinear_entry() -> dict:
    problem = bm.nonlinear_problem()
    ref = LinearFeedback(0.8, jump_gain=0.4)
    from jumpsmp.noise import MarkSpace
    cost, se = bm.chunked_cost(problem, ref, MarkSpace((1.0, 2.5)), 1.0, BASE_STEPS, 204, REFERENCE_PATHS)
    return {
        "gain": 0.8, "jump_gain": 0.4, "reference_cost": cost, "reference_cost_se": se,
        "reference_seed": 204, "reference_paths": REFERENCE_PATHS, "base_steps": BASE_STEPS,
        "provenance": f"fixed feedback, not optimized; cost from {REFERENCE_PATHS} paths (seed 204)",
    }


BUILDERS = {"lq_jump": lq_entry, "bangbang": bangbang_entry, "nonlinear_jump": nonlinear_entry}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--only", nargs="*", choices=sorted(BUILDERS))
    args = ap.parse_args(argv)
    data = json.loads(args.out.read_text()) if args.out.exists() else {}
    for name in args.only or sorted(BUILDERS):
        t0 = time.time()
        data[name] = _plain(BUILDERS[name]())
        print(f"{name}: done in {time.time() - t0:.0f}s", flush=True)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
