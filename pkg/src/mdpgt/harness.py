"""Run configuration, CLI entry point, metrics output and sweeps.

Config sources are layered: built-in defaults, then a flat key-value file
(``key = value`` lines, ``#`` comments), then command-line flags.  Every
run writes a ``records.csv`` with one row per (iteration, agent) and a
``config.json`` sidecar carrying the fully resolved configuration and the
derived theory constants, so a run is reconstructible from its output
directory alone.

Subcommands: ``run``, ``sweep`` and ``theory``.  Exit codes: 0 on success,
2 on configuration/validation faults (including unwritable output paths,
checked before the run starts), 3 on runtime faults such as divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import decentral, envsim, theory, topology
from .decentral import LoopConfig, RunRecord
from .envsim import EnvConfig
from .policy import LinearGaussianSpec, MlpCategoricalSpec, PolicySpec

__all__ = [
    "ConfigError",
    "RunConfig",
    "read_config_file",
    "parse_config",
    "with_override",
    "build_loop_config",
    "constants_table",
    "emit_records",
    "read_records_csv",
    "smooth",
    "final_window_mean",
    "run_one",
    "sweep",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration input."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration (all defaults filled in)."""

    algo: str
    env: str = "lineworld"
    agents: int = 5
    world_size: int = 5
    horizon: int = 50
    gamma: float = 0.99
    collision_penalty: float = -1.0
    topology: str | tuple[tuple[int, int], ...] = "full"
    policy: str = "mlp_categorical"
    hidden: tuple[int, int] = (64, 64)
    xi: float = 1.0
    action_clip: float = 1.0
    feature_clip: float = 1.0
    x_max: float = 1.0
    eta: float = 0.001
    beta: float = 0.5
    batch_init: int = 1
    episodes: int = 2000
    estimator: str = "pgt"
    schedule: str = "manual"
    seeds: tuple[int, ...] = (0,)
    out: str | None = None
    m_bound: float = 1.0
    cg: float | None = None
    ch: float | None = None

    def to_items(self) -> dict[str, Any]:
        """JSON-safe mapping using the config-file key names."""
        topo: Any = self.topology
        if not isinstance(topo, str):
            topo = [list(e) for e in topo]
        return {
            "algo": self.algo,
            "env": self.env,
            "agents": self.agents,
            "world-size": self.world_size,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "collision-penalty": self.collision_penalty,
            "topology": topo,
            "policy": self.policy,
            "hidden": list(self.hidden),
            "xi": self.xi,
            "action-clip": self.action_clip,
            "feature-clip": self.feature_clip,
            "x-max": self.x_max,
            "eta": self.eta,
            "beta": self.beta,
            "batch-init": self.batch_init,
            "episodes": self.episodes,
            "estimator": self.estimator,
            "schedule": self.schedule,
            "seed": list(self.seeds),
            "out": self.out,
            "m-bound": self.m_bound,
            "cg": self.cg,
            "ch": self.ch,
        }

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            env=self.env,
            n_agents=self.agents,
            world_size=self.world_size,
            horizon=self.horizon,
            gamma=self.gamma,
            collision_penalty=self.collision_penalty,
        )


# --------------------------------------------------------------------------
# coercion and validation, one entry per accepted key


def _as_int(raw: Any, key: str, minimum: int | None = None) -> int:
    try:
        value = int(str(raw))
    except ValueError:
        raise ConfigError(f"value for key '{key}' is not an integer: {raw!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"value for key '{key}' out of range: {value} < {minimum}")
    return value


def _as_float(raw: Any, key: str) -> float:
    try:
        value = float(str(raw))
    except ValueError:
        raise ConfigError(f"value for key '{key}' is not a number: {raw!r}") from None
    if not np.isfinite(value):
        raise ConfigError(f"value for key '{key}' out of range: must be finite")
    return value


def _as_choice(raw: Any, key: str, choices: tuple[str, ...]) -> str:
    value = str(raw)
    if value not in choices:
        raise ConfigError(f"value for key '{key}' out of range: {value!r} not in {choices}")
    return value


def _as_int_list(raw: Any, key: str) -> tuple[int, ...]:
    if isinstance(raw, (list, tuple)):
        parts = list(raw)
    else:
        parts = [p for p in str(raw).replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError(f"value for key '{key}' out of range: empty list")
    return tuple(_as_int(p, key) for p in parts)


def _as_topology(raw: Any, key: str = "topology"):
    if isinstance(raw, (list, tuple)):
        edges = raw
    else:
        text = str(raw).strip()
        if not text.startswith("["):
            return _as_choice(text, key, ("full", "ring", "bipartite"))
        try:
            edges = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"value for key '{key}' is not a valid edge list: {exc}") from None
    try:
        return tuple(sorted((min(int(i), int(j)), max(int(i), int(j))) for i, j in edges))
    except (TypeError, ValueError):
        raise ConfigError(f"value for key '{key}' is not a valid edge list: {raw!r}") from None


_KNOWN_KEYS = (
    "algo", "env", "agents", "world-size", "horizon", "gamma", "collision-penalty",
    "topology", "policy", "hidden", "xi", "action-clip", "feature-clip", "x-max",
    "eta", "beta", "batch-init", "episodes", "estimator", "schedule", "seed", "out",
    "m-bound", "cg", "ch",
)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse the flat ``key = value`` grammar (``#`` starts a comment)."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        items[key.strip()] = value.strip()
    return items


def parse_config(items: Mapping[str, Any] | str | Path) -> RunConfig:
    """Validate a key-value mapping (or config file path) into a RunConfig.

    Unknown keys, out-of-range values and missing required keys each fail
    with their own message.  When a schedule is requested, the step size,
    momentum and initialization batch are resolved here.
    """
    if isinstance(items, (str, Path)):
        items = read_config_file(items)
    for key in items:
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key '{key}'")
    if items.get("algo") in (None, ""):
        raise ConfigError("missing required key: algo")

    def has(key: str) -> bool:
        return items.get(key) not in (None, "")

    env = _as_choice(items["env"], "env", ("lineworld", "gridworld")) if has("env") else "lineworld"
    world_size = (
        _as_int(items["world-size"], "world-size", 1)
        if has("world-size")
        else (5 if env == "lineworld" else 10)
    )
    gamma = _as_float(items["gamma"], "gamma") if has("gamma") else 0.99
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"value for key 'gamma' out of range: {gamma} not in (0, 1)")
    beta = _as_float(items["beta"], "beta") if has("beta") else 0.5
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"value for key 'beta' out of range: {beta} not in (0, 1]")
    eta = _as_float(items["eta"], "eta") if has("eta") else 0.001
    if eta <= 0:
        raise ConfigError(f"value for key 'eta' out of range: {eta} <= 0")
    hidden = _as_int_list(items["hidden"], "hidden") if has("hidden") else (64, 64)
    if len(hidden) != 2:
        raise ConfigError("value for key 'hidden' out of range: need exactly two widths")

    cfg = RunConfig(
        algo=_as_choice(items["algo"], "algo", decentral.ALGORITHMS),
        env=env,
        agents=_as_int(items["agents"], "agents", 1) if has("agents") else 5,
        world_size=world_size,
        horizon=_as_int(items["horizon"], "horizon", 1) if has("horizon") else 50,
        gamma=gamma,
        collision_penalty=(
            _as_float(items["collision-penalty"], "collision-penalty")
            if has("collision-penalty")
            else -1.0
        ),
        topology=_as_topology(items["topology"]) if has("topology") else "full",
        policy=(
            _as_choice(items["policy"], "policy", ("mlp_categorical", "linear_gaussian"))
            if has("policy")
            else "mlp_categorical"
        ),
        hidden=hidden,  # type: ignore[arg-type]
        xi=_as_float(items["xi"], "xi") if has("xi") else 1.0,
        action_clip=_as_float(items["action-clip"], "action-clip") if has("action-clip") else 1.0,
        feature_clip=_as_float(items["feature-clip"], "feature-clip") if has("feature-clip") else 1.0,
        x_max=_as_float(items["x-max"], "x-max") if has("x-max") else 1.0,
        eta=eta,
        beta=beta,
        batch_init=_as_int(items["batch-init"], "batch-init", 1) if has("batch-init") else 1,
        episodes=_as_int(items["episodes"], "episodes", 2) if has("episodes") else 2000,
        estimator=(
            _as_choice(items["estimator"], "estimator", ("reinforce", "pgt"))
            if has("estimator")
            else "pgt"
        ),
        schedule=(
            _as_choice(items["schedule"], "schedule", ("manual", "corollary1", "corollary2"))
            if has("schedule")
            else "manual"
        ),
        seeds=_as_int_list(items["seed"], "seed") if has("seed") else (0,),
        out=str(items["out"]) if has("out") else None,
        m_bound=_as_float(items["m-bound"], "m-bound") if has("m-bound") else 1.0,
        cg=_as_float(items["cg"], "cg") if has("cg") else None,
        ch=_as_float(items["ch"], "ch") if has("ch") else None,
    )
    for key, value in (("xi", cfg.xi), ("action-clip", cfg.action_clip), ("feature-clip", cfg.feature_clip)):
        if value <= 0:
            raise ConfigError(f"value for key '{key}' out of range: {value} <= 0")
    if cfg.x_max < 0 or cfg.m_bound < 0:
        raise ConfigError("values for keys 'x-max' and 'm-bound' must be nonnegative")
    # fail early on incompatible policy/env pairs
    build_policy_spec(cfg)
    return _resolve_schedule(cfg)


def with_override(cfg: RunConfig, key: str, value: Any) -> RunConfig:
    """New config with one key replaced, re-resolving any schedule."""
    items = cfg.to_items()
    if key not in items:
        raise ConfigError(f"unknown key '{key}'")
    items[key] = value
    return parse_config({k: v for k, v in items.items() if v is not None})


def build_graph_for(cfg: RunConfig) -> topology.Graph:
    try:
        if isinstance(cfg.topology, str):
            return topology.build_graph(cfg.topology, cfg.agents)
        return topology.build_graph("custom", cfg.agents, edges=cfg.topology)
    except ValueError as exc:
        raise ConfigError(f"value for key 'topology' out of range: {exc}") from exc


def build_policy_spec(cfg: RunConfig) -> PolicySpec:
    env_cfg = cfg.env_config()
    if cfg.policy == "mlp_categorical":
        return MlpCategoricalSpec(
            obs_dim=envsim.obs_dim(env_cfg),
            n_actions=envsim.n_actions(env_cfg),
            hidden=cfg.hidden,
        )
    if cfg.env != "lineworld":
        raise ConfigError(
            "value for key 'policy' out of range: linear_gaussian needs the "
            "scalar-action lineworld env"
        )
    return LinearGaussianSpec(
        feature_dim=envsim.obs_dim(env_cfg),
        xi=cfg.xi,
        feature_clip=cfg.feature_clip,
        action_clip=cfg.action_clip,
    )


def _problem_constants(cfg: RunConfig, lam: float) -> theory.ProblemConstants | None:
    env_cfg = cfg.env_config()
    r_max = envsim.reward_bound(env_cfg)
    if cfg.policy == "linear_gaussian":
        spec = build_policy_spec(cfg)
        assert isinstance(spec, LinearGaussianSpec)
        return theory.gaussian_constants(
            spec, cfg.x_max, r_max, cfg.gamma, cfg.horizon, cfg.m_bound, cfg.agents, lam
        )
    if cfg.cg is not None and cfg.ch is not None:
        return theory.ProblemConstants(
            c_g=cfg.cg, c_h=cfg.ch, r_max=r_max, gamma=cfg.gamma,
            horizon=cfg.horizon, m_bound=cfg.m_bound, n_agents=cfg.agents, lam=lam,
        )
    return None


def _resolve_schedule(cfg: RunConfig) -> RunConfig:
    if cfg.schedule == "manual":
        return cfg
    mix = topology.metropolis_weights(build_graph_for(cfg))
    pc = _problem_constants(cfg, mix.lam)
    if pc is None:
        raise ConfigError(
            "missing required key: cg/ch (schedules with an mlp_categorical "
            "policy need explicit score bounds)"
        )
    dc = theory.derive_constants(pc)
    if cfg.schedule == "corollary1":
        sched = theory.minibatch_schedule(dc, cfg.agents, cfg.episodes, mix.lam)
        return dataclasses.replace(cfg, eta=sched.eta, beta=sched.beta, batch_init=sched.batch)
    sched = theory.single_trajectory_schedule(dc, cfg.agents, cfg.episodes, mix.lam)
    return dataclasses.replace(cfg, eta=sched.eta, beta=sched.beta, batch_init=1)


def build_loop_config(cfg: RunConfig) -> LoopConfig:
    mix = topology.metropolis_weights(build_graph_for(cfg))
    try:
        return LoopConfig(
            env=cfg.env_config(),
            policy=build_policy_spec(cfg),
            mixing=mix,
            eta=cfg.eta,
            beta=cfg.beta,
            batch_init=cfg.batch_init,
            estimator=cfg.estimator,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def constants_table(cfg: RunConfig) -> dict[str, Any]:
    """Constant/schedule table for the ``theory`` subcommand."""
    mix = topology.metropolis_weights(build_graph_for(cfg))
    pc = _problem_constants(cfg, mix.lam)
    if pc is None:
        raise ConfigError(
            "missing required key: cg/ch (the constant table for an "
            "mlp_categorical policy needs explicit score bounds)"
        )
    dc = theory.derive_constants(pc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", theory.ScheduleWarning)
        eta_max = theory.max_step_size(dc, pc.lam, pc.n_agents)
        beta_for_eta = theory.beta_from_eta(dc, cfg.eta, pc.n_agents)
        sched1 = theory.minibatch_schedule(dc, pc.n_agents, cfg.episodes, pc.lam)
        sched2 = theory.single_trajectory_schedule(dc, pc.n_agents, cfg.episodes, pc.lam)
    table = {
        "lam": pc.lam,
        "problem": dataclasses.asdict(pc),
        "derived": dataclasses.asdict(dc),
        "eta_max": eta_max,
        "beta_for_eta": beta_for_eta,
        "schedules": {
            "corollary1": dataclasses.asdict(sched1),
            "corollary2": dataclasses.asdict(sched2),
        },
        "steady_state_error": theory.steady_state_error(dc, cfg.beta, pc.lam, pc.n_agents),
    }
    if cfg.policy == "linear_gaussian":
        spec = build_policy_spec(cfg)
        assert isinstance(spec, LinearGaussianSpec)
        table["gaussian_variance_bound"] = theory.gaussian_variance_bound(
            spec, pc.r_max, cfg.gamma, cfg.horizon
        )
    return table


# --------------------------------------------------------------------------
# record persistence


def _fmt(x: float) -> str:
    return repr(float(x))


def preflight(out_dir: str | Path) -> Path:
    """Ensure the output directory is writable before any work happens."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name in ("records.csv", "config.json"):
            with open(out / name, "a", encoding="utf-8"):
                pass
    except OSError as exc:
        raise ConfigError(f"output path {out} is not writable: {exc}") from exc
    return out


def emit_records(
    records: Iterable[RunRecord],
    out_dir: str | Path,
    *,
    config: RunConfig | None = None,
    seed: int | None = None,
    failure: str | None = None,
) -> Path:
    """Write ``records.csv`` plus the ``config.json`` sidecar.

    CSV schema: ``k,agent,reward,mean_reward,consensus_err,tracking_resid,
    u_norm,clamps`` -- one row per (iteration, agent), UTF-8, LF endings,
    floats as shortest round-trip decimals.
    """
    out = preflight(out_dir)
    with open(out / "records.csv", "w", encoding="utf-8", newline="") as f:
        f.write("k,agent,reward,mean_reward,consensus_err,tracking_resid,u_norm,clamps\n")
        for rec in records:
            shared = (
                f"{_fmt(rec.mean_reward)},{_fmt(rec.consensus_err)},"
                f"{_fmt(rec.tracking_resid)},{_fmt(rec.u_norm)},{rec.clamps}"
            )
            for agent, reward in enumerate(rec.rewards):
                f.write(f"{rec.k},{agent},{_fmt(reward)},{shared}\n")
    sidecar: dict[str, Any] = {"seed": seed, "failure": failure}
    if config is not None:
        sidecar["config"] = config.to_items()
        mix = topology.metropolis_weights(build_graph_for(config))
        sidecar["lam"] = mix.lam
        try:
            sidecar["constants"] = constants_table(config)
        except ConfigError:
            sidecar["constants"] = None
    with open(out / "config.json", "w", encoding="utf-8", newline="") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def read_records_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Load a records CSV back into column arrays."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    columns: dict[str, list[float]] = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            columns[name].append(float(cell))
    return {name: np.asarray(vals) for name, vals in columns.items()}


def smooth(series: np.ndarray, window: int = 100) -> np.ndarray:
    """Moving average used for analysis-time curve comparison; raw records
    are never smoothed on disk."""
    series = np.asarray(series, dtype=float)
    if window <= 1 or series.size < window:
        return series.copy()
    return np.convolve(series, np.full(window, 1.0 / window), mode="valid")


def final_window_mean(mean_rewards: np.ndarray, window: int = 500) -> float:
    arr = np.asarray(mean_rewards, dtype=float)
    return float(arr[-min(window, arr.size):].mean())


# --------------------------------------------------------------------------
# execution


def run_one(cfg: RunConfig, seed: int, out_dir: str | Path | None = None) -> decentral.RunResult:
    """Execute one seeded run; persist records when a directory is given."""
    loop = build_loop_config(cfg)
    if out_dir is not None:
        preflight(out_dir)
    result = decentral.run(cfg.algo, loop, cfg.episodes, seed)
    if out_dir is not None:
        emit_records(result.records, out_dir, config=cfg, seed=seed, failure=result.failure)
    return result


def _effective_out(cfg: RunConfig) -> Path:
    return Path(cfg.out) if cfg.out else Path("runs") / f"{cfg.algo}-{cfg.env}"


def _sanitize(value: Any) -> str:
    text = str(value)
    return "".join(c if (c.isalnum() or c in "._-") else "-" for c in text)


def sweep(
    cfg: RunConfig,
    axis: str,
    values: Sequence[Any],
    *,
    out_dir: str | Path | None = None,
    summary_window: int = 500,
) -> list[tuple[Any, int, float, str | None]]:
    """One run per axis value (times seeds), plus a summary CSV.

    Each value writes under ``<out>/<axis>-<value>/seed<seed>/`` with
    exactly the files a standalone run would produce; the harness adds a
    ``sweep-summary.csv`` with the final-window mean rewards.
    """
    base = Path(out_dir) if out_dir is not None else _effective_out(cfg)
    rows: list[tuple[Any, int, float, str | None]] = []
    for value in values:
        sub = with_override(cfg, axis, value)
        for seed in sub.seeds:
            run_dir = base / f"{axis}-{_sanitize(value)}" / f"seed{seed}"
            result = run_one(sub, seed, run_dir)
            final = final_window_mean(
                np.array([r.mean_reward for r in result.records]), summary_window
            )
            rows.append((value, seed, final, result.failure))
    preflight(base)
    with open(base / "sweep-summary.csv", "w", encoding="utf-8", newline="") as f:
        f.write(f"{axis},seed,final_mean,failure\n")
        for value, seed, final, failure in rows:
            f.write(f"{_sanitize(value)},{seed},{_fmt(final)},{failure or ''}\n")
    return rows


# --------------------------------------------------------------------------
# CLI


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for key in _KNOWN_KEYS:
        parser.add_argument(f"--{key}", dest=f"key_{key.replace('-', '_')}")


def _items_from_args(args: argparse.Namespace) -> dict[str, str]:
    items: dict[str, str] = {}
    if args.config:
        items.update(read_config_file(args.config))
    for key in _KNOWN_KEYS:
        value = getattr(args, f"key_{key.replace('-', '_')}")
        if value is not None:
            items[key] = value
    return items


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdpgt",
        description="Decentralized policy-gradient training on cooperative navigation tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("run", "train with the configured algorithm, one run per seed"),
        ("sweep", "repeat the run across values of one config key"),
        ("theory", "print the constant and schedule table as JSON"),
    ):
        p = sub.add_parser(name, help=descr)
        _add_config_flags(p)
        if name == "sweep":
            p.add_argument("--axis", required=True, help="config key to vary")
            p.add_argument("--values", required=True, help="comma-separated values")
            p.add_argument("--summary-window", type=int, default=500)
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(_items_from_args(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "theory":
        try:
            print(json.dumps(constants_table(cfg), indent=2, sort_keys=True))
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    if args.command == "run":
        base = _effective_out(cfg)
        failed = False
        try:
            for seed in cfg.seeds:
                run_dir = base / f"seed{seed}"
                result = run_one(cfg, seed, run_dir)
                final = final_window_mean(np.array([r.mean_reward for r in result.records]))
                status = f"failed ({result.failure})" if result.failure else "ok"
                print(
                    f"seed {seed}: {len(result.records)} records, "
                    f"final-window mean reward {final:.4f}, {status} -> {run_dir}"
                )
                failed = failed or result.failure is not None
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_RUNTIME if failed else EXIT_OK

    # sweep
    try:
        values = [v for v in args.values.split(",") if v != ""]
        if not values:
            raise ConfigError("sweep needs at least one value")
        rows = sweep(cfg, args.axis, values, summary_window=args.summary_window)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for value, seed, final, failure in rows:
        status = f"failed ({failure})" if failure else "ok"
        print(f"{args.axis}={value} seed={seed}: final-window mean {final:.4f}, {status}")
    return EXIT_RUNTIME if any(r[3] for r in rows) else EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
