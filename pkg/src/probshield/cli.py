"""Command-line front end: ``probshield {solve,train,verify,sweep} [config] [flags]``.

Configs are ``key = value`` lines grouped under ``[env]``, ``[critic]``,
``[run]``, ``[train]`` and ``[sweep]``; every key is optional. Flags override
config keys. Exit status: 0 success, 1 a verification check failed, 2 the
configuration did not parse or validate.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .augment import RULES, augment, risk_bound
from .cmdp import Cmdp, _parse_value, env_factory, parse_env_section, validate
from .critic import CostLearnConfig, QTable, cost_value_iteration, perturb, q_learning_cost
from .oracle import brute_force_oracle
from .policies import Shielded, UniformProposer, Unshielded
from .train import TrainConfig, candidate_ladder, shielded_q_train, training_log_csv
from .verify import (REPORT_HEADER, CheckReport, check_noise, check_optimality, check_preservation,
                     check_safety, conservative_x0, mc_estimate, summary_table)

SCHEMA_VERSION = 1
SWEEP_COLUMNS = ("delta_b", "x0", "xi", "seed", "measured_delta", "bound", "cost_mean", "cost_ci95",
                 "reward_mean", "reward_ci95", "clamp_events", "safety_pass", "noise_slack",
                 "noise_pass")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    env_name: str = "m1"
    env_seed: int | None = None
    env_params: tuple = ()
    gamma_c: float | None = None
    critic: str = "exact"
    delta_b: float = 0.0
    critic_episodes: int = 20_000
    rule: str = "q_relative"
    budget: float | None = None
    x0: float | None = None
    margin: float | None = None
    seeds: tuple[int, ...] = (0,)
    out: str = "out"
    n_rollouts: int = 10_000
    xi: float = 0.1
    tol: float = 0.02
    train: dict = field(default_factory=dict)
    sweep_delta_b: tuple[float, ...] = (0.0,)
    sweep_x0: tuple[float, ...] = ()
    sweep_xi: tuple[float, ...] = (0.0,)
    jobs: int = 1

    def build_cmdp(self) -> Cmdp:
        cmdp = env_factory(self.env_name, seed=self.env_seed, **dict(self.env_params))
        if self.gamma_c is not None:
            cmdp = replace(cmdp, gamma_c=float(self.gamma_c))
        if self.budget is not None:
            cmdp = cmdp.with_budget(float(self.budget))
        problems = validate(cmdp)
        if problems:
            raise ConfigError("; ".join(problems))
        return cmdp

    def train_config(self, x0: float) -> TrainConfig:
        return TrainConfig(**{**self.train, "x0": x0})


def _tuple(v) -> tuple:
    if v is None:
        return ()
    return tuple(v) if isinstance(v, list) else (v,)


_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"env_name", "env_seed", "env_params", "train"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"x0"}


def parse_config(text: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    out: dict = {}
    if "env" in cp:
        name, seed, params = parse_env_section(cp["env"].items())
        out.update(env_name=name, env_seed=seed, env_params=tuple(sorted(params.items())))
    for section in ("critic", "run"):
        if section in cp:
            for k, v in cp[section].items():
                key = k.replace("-", "_")
                key = {"mode": "critic", "episodes": "critic_episodes"}.get(key, key) \
                    if section == "critic" else key
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key {k!r} in [{section}]")
                out[key] = _parse_value(v)
    if "train" in cp:
        train = {}
        for k, v in cp["train"].items():
            key = k.replace("-", "_")
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown key {k!r} in [train]")
            train[key] = _parse_value(v)
        out["train"] = train
    if "sweep" in cp:
        for k, v in cp["sweep"].items():
            key = "sweep_" + k.replace("-", "_")
            if key not in _RUN_KEYS:
                raise ConfigError(f"unknown key {k!r} in [sweep]")
            out[key] = _tuple(_parse_value(v))
    return out


def _critic_mode(raw) -> tuple[str, float | None]:
    text = str(raw).strip().lower()
    if text.startswith("perturbed(") and text.endswith(")"):
        return "perturbed", float(text[len("perturbed("):-1])
    if text not in ("exact", "learned", "perturbed"):
        raise ConfigError(f"critic mode must be exact, learned or perturbed(delta), got {raw!r}")
    return text, None


def build_run_config(values: dict) -> RunConfig:
    values = dict(values)
    if "seeds" in values:
        values["seeds"] = tuple(int(s) for s in _tuple(values["seeds"]))
    mode, delta = _critic_mode(values.get("critic", "exact"))
    values["critic"] = mode
    if delta is not None:
        values["delta_b"] = delta
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.rule not in RULES:
        raise ConfigError(f"rule must be one of {RULES}")
    if cfg.delta_b < 0:
        raise ConfigError("delta_b must be non-negative")
    if cfg.n_rollouts < 2:
        raise ConfigError("n_rollouts must be at least 2")
    if not 0.0 <= cfg.xi <= 1.0:
        raise ConfigError("xi must lie in [0, 1]")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not cfg.seeds:
        raise ConfigError("need at least one seed")
    try:
        cfg.train_config(0.0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}") from exc
    return cfg


# --------------------------------------------------------------------------
# shared pipeline pieces


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def make_critic(cfg: RunConfig, cmdp: Cmdp, seed: int, delta_b: float | None = None) -> tuple[QTable, QTable]:
    """``(critic, exact)``; the critic is exact, learned or perturbed by ``delta_b``."""
    exact = cost_value_iteration(cmdp)
    delta = cfg.delta_b if delta_b is None else delta_b
    if cfg.critic == "learned":
        q = q_learning_cost(cmdp, CostLearnConfig(episodes=cfg.critic_episodes), _rng(seed, 1), exact)
    elif cfg.critic == "perturbed" or delta > 0:
        q = perturb(exact, delta, _rng(seed, 1))
    else:
        q = exact
    return q, exact


def initial_risk(cfg: RunConfig, cmdp: Cmdp, measured: float, bound: float, x0=None) -> float:
    """Explicit ``x0``, else ``gamma_c (d - margin)``, else the conservative
    start whose safety bound equals ``d``; lower-clipped to the risk range."""
    x0 = cfg.x0 if x0 is None else x0
    if x0 is not None:
        x0 = float(x0)
        if abs(x0) > bound:
            raise ConfigError(f"x0={x0:g} outside the admissible range [-{bound:g}, {bound:g}]")
        return x0
    if cfg.margin is not None:
        x0 = cmdp.gamma_c * (cmdp.budget_d - float(cfg.margin))
    else:
        x0 = conservative_x0(cmdp.budget_d, measured, cmdp.gamma_c)
    return float(np.clip(x0, -bound, bound))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _manifest(out: Path, files: dict) -> None:
    _write(out / "manifest.json", json.dumps({"schema_version": SCHEMA_VERSION, "files": files},
                                              indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    cmdp = cfg.build_cmdp()
    q = cost_value_iteration(cmdp)
    res = brute_force_oracle(cmdp, cmdp.budget_d)
    cols = ("d", "r_star", "c_star", "alpha", "pi1", "pi2")
    row = (cmdp.budget_d, res.r_star, res.c_star, res.alpha, "-".join(map(str, res.pi1)),
           "-".join(map(str, res.pi2)))
    _write(out / "oracle.csv", _csv(cols, [row]))
    _write(out / "q_exact.csv", q.to_csv())
    _manifest(out, {"oracle.csv": list(cols), "q_exact.csv": ["s", "a", "value"]})
    print(f"R*={res.r_star:.6g} at C={res.c_star:.6g} (alpha={res.alpha:.6g})")
    return 0


def _train_one(cfg: RunConfig, cmdp: Cmdp, seed: int):
    q, exact = make_critic(cfg, cmdp, seed)
    env = augment(cmdp, q, cfg.rule)
    measured = q.sup_distance(exact)
    x0 = initial_risk(cfg, cmdp, measured, env.c_max_bound)
    policy = shielded_q_train(env, q, cfg.train_config(x0), _rng(seed, 2))
    return env, q, measured, x0, policy


def cmd_train(cfg: RunConfig, out: Path) -> int:
    cmdp = cfg.build_cmdp()
    files = {}
    for seed in cfg.seeds:
        _, _, _, _, policy = _train_one(cfg, cmdp, seed)
        _write(out / f"policy_seed{seed}.csv", policy.to_csv())
        _write(out / f"trainlog_seed{seed}.csv", training_log_csv(policy.log))
        files[f"policy_seed{seed}.csv"] = ["s", "vertex", "a", "y", "value"]
        files[f"trainlog_seed{seed}.csv"] = list(training_log_csv([]).strip().split(","))
        last = policy.log[-min(100, len(policy.log)):] if policy.log else []
        if last:
            print(f"seed {seed}: mean reward {np.mean([r[2] for r in last]):.4f}, "
                  f"mean cost {np.mean([r[3] for r in last]):.4f} over the last {len(last)} episodes")
    _manifest(out, files)
    return 0


def _noise_sampler(q: QTable, env) -> Unshielded:
    ladder = candidate_ladder(q, env.c_max_bound, 3, None)
    return Unshielded(UniformProposer(ladder))


def verify_reports(cfg: RunConfig, cmdp: Cmdp, seed: int) -> list[CheckReport]:
    env, q, measured, x0, policy = _train_one(cfg, cmdp, seed)
    sampler = Shielded(policy, q)
    n = cfg.n_rollouts
    reports = [check_safety(env, sampler, x0, n, _rng(seed, 3), measured),
               check_preservation(env, sampler, x0, n, _rng(seed, 4)),
               check_noise(env, sampler, _noise_sampler(q, env), cfg.xi, x0, n, _rng(seed, 5))]
    if cmdp.is_deterministic:
        try:
            reports.append(check_optimality(env, sampler, cmdp.budget_d, measured, x0, n,
                                            _rng(seed, 6), cfg.tol))
        except ValueError as exc:
            print(f"optimality check skipped: {exc}", file=sys.stderr)
    for r in reports:
        r.params["seed"] = seed
    return reports


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    cmdp = cfg.build_cmdp()
    reports = [r for seed in cfg.seeds for r in verify_reports(cfg, cmdp, seed)]
    _write(out / "checks.jsonl", REPORT_HEADER + "\n" + "".join(r.to_json() + "\n" for r in reports))
    table = summary_table(reports)
    _write(out / "summary.txt", table + "\n")
    _manifest(out, {"checks.jsonl": json.loads(REPORT_HEADER)["columns"], "summary.txt": []})
    print(table)
    return 0 if all(r.passed for r in reports) else 1


def sweep_cell(cfg: RunConfig, delta: float, x0, xi: float, seed: int) -> tuple:
    cmdp = cfg.build_cmdp()
    q, exact = make_critic(cfg, cmdp, seed, delta)
    env = augment(cmdp, q, cfg.rule)
    measured = q.sup_distance(exact)
    x0 = initial_risk(cfg, cmdp, measured, env.c_max_bound, x0)
    policy = shielded_q_train(env, q, cfg.train_config(x0), _rng(seed, 2))
    sampler = Shielded(policy, q)
    safety = check_safety(env, sampler, x0, cfg.n_rollouts, _rng(seed, 3), measured)
    noise = check_noise(env, sampler, _noise_sampler(q, env), xi, x0, cfg.n_rollouts, _rng(seed, 5))
    est = safety.estimate
    _, rew = mc_estimate(env, sampler, cfg.n_rollouts, None, _rng(seed, 3), x0)
    clamps = sum(row[4] for row in policy.log)
    return (delta, x0, xi, seed, measured, safety.bound, est.mean, est.ci95, rew.mean, rew.ci95,
            clamps, safety.passed, noise.params["slack"], noise.passed)


def _run_cell(args):
    return sweep_cell(*args)


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    x0s = cfg.sweep_x0 or (None,)
    cells = [(cfg, float(d), x, float(xi), seed)
             for d in cfg.sweep_delta_b for x in x0s for xi in cfg.sweep_xi for seed in cfg.seeds]
    cfg.build_cmdp()  # validate before spawning workers
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    rows = [tuple("inf" if isinstance(v, float) and math.isinf(v) else v for v in r) for r in rows]
    _write(out / "sweep.csv", _csv(SWEEP_COLUMNS, rows))
    _manifest(out, {"sweep.csv": list(SWEEP_COLUMNS)})
    print(f"{len(rows)} cells written to {out / 'sweep.csv'}")
    return 0


COMMANDS = {"solve": cmd_solve, "train": cmd_train, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probshield", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", nargs="?", help="key = value config file with [section] headers")
    p.add_argument("--env", dest="env_name")
    p.add_argument("--gamma-c", type=float)
    p.add_argument("--budget", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--delta-b", type=float)
    p.add_argument("--critic")
    p.add_argument("--rule", choices=RULES)
    p.add_argument("--episodes", type=int, help="training episodes")
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="repeatable; overrides the configured seed list")
    p.add_argument("--n-rollouts", type=int)
    p.add_argument("--xi", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        values = {}
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            values = parse_config(text)
        for key in ("env_name", "gamma_c", "budget", "x0", "margin", "delta_b", "critic", "rule",
                    "seeds", "n_rollouts", "xi", "jobs", "out"):
            val = getattr(args, key)
            if val is not None:
                values[key] = val
        if args.delta_b is not None and "critic" not in values:
            values["critic"] = "perturbed"
        if args.episodes is not None:
            values["train"] = {**values.get("train", {}), "episodes": args.episodes}
        cfg = build_run_config(values)
        bound = risk_bound(cfg.build_cmdp())
        for x0 in (cfg.x0, *cfg.sweep_x0):
            if x0 is not None and abs(float(x0)) > bound:
                raise ConfigError(f"x0={x0:g} outside the admissible range [-{bound:g}, {bound:g}]")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, Path(cfg.out))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
