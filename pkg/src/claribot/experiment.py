"""Training and evaluation protocol: multi-seed runs with periodic greedy
evaluation, learning-curve metrics, paired qualitative comparison, random
hyperparameter search, and CSV/transcript export.

Everything is deterministic given the experiment seed: user, channel, agent,
and evaluation rng streams are derived from it by fixed sub-seeding.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig, NluModel, calibrate, train_nlu
from .core import (
    ActKind,
    BotMove,
    Dialog,
    EpisodeLog,
    Hypothesis,
    IntentToken,
    MoveKind,
    RewardTable,
    SlotFill,
    Turn,
    TurnRecord,
    UserAct,
    discounted_return,
)
from .corpus import Corpus, IntentVocab, split
from .corpus import generate_synthetic_corpus
from .domain import Domain, default_domain
from .env import DialogEnv, Transition, run_episode
from .lm import LmHyper, RnnLm, sequences_from_corpus, train_rnn_lm
from .policies import (
    ACTIONS,
    AgentConfig,
    DqnAgent,
    Thresholds,
    ThresholdPolicy,
    ddqn_config,
    dqn_config,
    epsilon,
    tune_thresholds,
)
from .usersim import UserSimulator

METRIC_FIELDS = (
    "avg_reward_per_turn",
    "avg_discounted_return",
    "avg_turns_per_dialog",
    "execution_success_rate",
    "unsuccessful_execution_rate",
    "clarification_mix",
)


@dataclass
class EvalMetrics:
    avg_reward_per_turn: float
    avg_discounted_return: float
    avg_turns_per_dialog: float
    execution_success_rate: float | None
    unsuccessful_execution_rate: float | None
    turns_to_execute_histogram: dict[int, int]
    clarification_mix: float | None


def compute_metrics(episodes: list[EpisodeLog], gamma: float) -> EvalMetrics:
    """Derive every evaluation metric from raw episode transcripts."""
    if not episodes:
        raise ValueError("no episodes to evaluate")
    total_reward = 0.0
    total_turns = 0
    returns = []
    histogram: dict[int, int] = {}
    executes = correct_executes = 0
    confirms = elicits = 0
    for log in episodes:
        rewards = log.rewards()
        returns.append(discounted_return(rewards, gamma))
        total_reward += sum(rewards)
        total_turns += len(log.turns)
        since_request = 0
        for turn in log.turns:
            since_request += 1
            if turn.bot.kind is MoveKind.EXECUTE:
                executes += 1
                correct_executes += turn.correct
                histogram[since_request] = histogram.get(since_request, 0) + 1
                since_request = 0
            elif turn.bot.kind is MoveKind.CONFIRM:
                confirms += 1
            else:
                elicits += 1
    clarifications = confirms + elicits
    return EvalMetrics(
        avg_reward_per_turn=total_reward / total_turns,
        avg_discounted_return=float(np.mean(returns)),
        avg_turns_per_dialog=total_turns / len(episodes),
        execution_success_rate=(correct_executes / executes) if executes else None,
        unsuccessful_execution_rate=(1.0 - correct_executes / executes) if executes else None,
        turns_to_execute_histogram=dict(sorted(histogram.items())),
        clarification_mix=(elicits / clarifications) if clarifications else None,
    )


def evaluate(
    policy,
    env_factory,
    seeds: list[tuple[int, int]],
    gamma: float,
) -> tuple[EvalMetrics, list[EpisodeLog]]:
    """Greedy rollouts over the given (user, channel) seed pairs."""
    episodes = []
    for user_seed, channel_seed in seeds:
        env = env_factory()
        episodes.append(run_episode(env, policy, user_seed, channel_seed))
    return compute_metrics(episodes, gamma), episodes


# ---------------------------------------------------------------------------
# Experiment configuration. Field defaults are the published protocol values;
# desk_config() is the reduced profile sized for a workstation run.
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    # Ground-truth corpus.
    n_dialogs: int = 966
    corpus_seed: int = 7
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 7
    # Intent LM (defaults are the tuned vanilla-RNN values).
    lm_cell: str = "rnn"
    lm_hidden: int = 30
    lm_embed: int = 50
    lm_epochs: int = 100
    lm_lr: float = 0.001
    lm_condition_response: bool = False
    lm_seed: int = 0
    # Channel and NLU.
    target_wer: float = 0.45
    wer_tol: float = 0.01
    calibration_seed: int = 0
    nlu_samples: int = 4000
    nlu_seed: int = 0
    # Environment.
    repeat_budget: int = 5
    max_agent_turns: int = 40
    gamma: float = 0.97
    rewards: RewardTable = field(default_factory=RewardTable)
    # Fixed-policy thresholds and tuning grid.
    thresholds: Thresholds = field(default_factory=lambda: Thresholds(0.34, 0.56, 0.06))
    tune_grid: dict = field(
        default_factory=lambda: {
            "asr_exec": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            "nlu_exec": [0.0, 0.2, 0.4, 0.6, 0.8],
            "asr_elicit": [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
        }
    )
    tune_episodes: int = 80
    tune_seed: int = 97
    # Training protocol.
    steps: int = 150_000
    eval_interval: int = 10_000
    eval_episodes: int = 30
    # Agents.
    dqn: AgentConfig = field(default_factory=dqn_config)
    ddqn: AgentConfig = field(default_factory=ddqn_config)

    def agent_config(self, algorithm: str) -> AgentConfig:
        if algorithm == "dqn":
            return self.dqn
        if algorithm == "dueling-ddqn":
            return self.ddqn
        raise ValueError(f"unknown algorithm {algorithm!r}")

    def lm_hyper(self) -> LmHyper:
        return LmHyper(
            cell=self.lm_cell,
            hidden=self.lm_hidden,
            embed=self.lm_embed,
            epochs=self.lm_epochs,
            lr=self.lm_lr,
            condition_response=self.lm_condition_response,
            seed=self.lm_seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        if "rewards" in data and isinstance(data["rewards"], dict):
            data["rewards"] = RewardTable(**data["rewards"])
        if "thresholds" in data and isinstance(data["thresholds"], dict):
            data["thresholds"] = Thresholds(**data["thresholds"])
        for key in ("dqn", "ddqn"):
            if key in data and isinstance(data[key], dict):
                data[key] = AgentConfig(**data[key])
        if "split_ratios" in data:
            data["split_ratios"] = tuple(data["split_ratios"])
        return cls(**data)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def desk_config(**overrides) -> ExperimentConfig:
    """Workstation-scale profile: 5 seeds x 50k steps, eval every 5k steps.

    The exploration schedule is shortened proportionally so the run reaches
    its end epsilon; the published schedule stays in the full-scale defaults.
    The LM epoch budget is trimmed since best-epoch selection saturates early
    on the synthetic corpus.
    """
    base = dict(
        steps=50_000,
        eval_interval=5_000,
        lm_epochs=15,
        dqn=dqn_config(eps_decay_steps=40_000),
        ddqn=ddqn_config(eps_decay_steps=40_000),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# Shared immutable component stack.
# ---------------------------------------------------------------------------


@dataclass
class Stack:
    config: ExperimentConfig
    domain: Domain
    vocab: IntentVocab
    lm: RnnLm
    channel_cfg: ChannelConfig
    nlu: NluModel
    calibration_report: str

    def env_factory(self, window_size: int):
        sim = UserSimulator(
            self.lm, self.domain.templates, self.domain.lexicon,
            repeat_budget=self.config.repeat_budget,
        )

        def make() -> DialogEnv:
            return DialogEnv(
                sim=sim,
                nlu=self.nlu,
                channel_cfg=self.channel_cfg,
                domain=self.domain,
                window_size=window_size,
                max_agent_turns=self.config.max_agent_turns,
                rewards=self.config.rewards,
            )

        return make


def prepare_stack(cfg: ExperimentConfig, log=None) -> Stack:
    """Build everything the runs share: corpus, LM, calibrated channel, NLU."""

    def say(msg: str) -> None:
        if log:
            log(msg)

    dom = default_domain()
    say(f"generating corpus ({cfg.n_dialogs} dialogs, seed {cfg.corpus_seed})")
    corpus_all = generate_synthetic_corpus(dom, cfg.n_dialogs, cfg.corpus_seed)
    train_c, dev_c, _ = split(corpus_all, cfg.split_ratios, cfg.split_seed)
    say("training intent LM")
    model = train_rnn_lm(
        sequences_from_corpus(train_c),
        sequences_from_corpus(dev_c),
        IntentVocab.from_intents(dom.generator.tokens),
        cfg.lm_hyper(),
    )
    say(f"calibrating channel to WER {cfg.target_wer}")
    base_cfg = ChannelConfig.for_domain(dom)
    sample = [
        tuple(t.text.lower().split())
        for d in corpus_all.dialogs
        for t in d.user_turns()
        if t.intent not in ("AMAZON.StopIntent", "AMAZON.CancelIntent")
    ]
    result = calibrate(cfg.target_wer, sample, base_cfg, tol=cfg.wer_tol, seed=cfg.calibration_seed)
    channel_cfg = base_cfg.with_sigma(result.sigma)
    say(f"calibration: {result.report()}")
    say("training NLU")
    nlu = train_nlu(dom, channel_cfg, n_samples=cfg.nlu_samples, seed=cfg.nlu_seed)
    return Stack(
        config=cfg,
        domain=dom,
        vocab=dom.vocab(),
        lm=model,
        channel_cfg=channel_cfg,
        nlu=nlu,
        calibration_report=result.report(),
    )


def eval_seeds_for(run_seed: int, checkpoint: int, n_episodes: int) -> list[tuple[int, int]]:
    """Evaluation seed pairs; identical across algorithms for the same run seed."""
    rng = np.random.default_rng(np.random.SeedSequence([run_seed, 7777, checkpoint]))
    return [(int(rng.integers(2**31)), int(rng.integers(2**31))) for _ in range(n_episodes)]


@dataclass
class RunArtifacts:
    algorithm: str
    seed: int
    config: dict
    series: list[tuple[int, EvalMetrics]]
    final_episodes: list[EpisodeLog]
    agent: DqnAgent | None = None

    @property
    def final_metrics(self) -> EvalMetrics:
        return self.series[-1][1]


def checkpoint_steps(steps: int, eval_interval: int) -> list[int]:
    marks = [s for s in range(eval_interval, steps + 1, eval_interval)]
    if not marks or marks[-1] != steps:
        marks.append(steps)
    return marks


def run_training(
    stack: Stack,
    algorithm: str,
    seed: int,
    steps: int | None = None,
    log=None,
) -> RunArtifacts:
    """One training run: epsilon-greedy environment steps with periodic
    greedy evaluation checkpoints."""
    cfg = stack.config
    agent_cfg = cfg.agent_config(algorithm)
    total_steps = steps if steps is not None else cfg.steps
    marks = checkpoint_steps(total_steps, cfg.eval_interval)

    env_factory = stack.env_factory(agent_cfg.window)
    env = env_factory()
    agent = DqnAgent(agent_cfg, env.n_intent_rows, len(stack.domain.slot_types), seed=seed)
    episode_rng = np.random.default_rng(np.random.SeedSequence([seed, 1234]))
    schedule = agent_cfg.schedule
    marks_set = set(marks)

    series: list[tuple[int, EvalMetrics]] = []
    final_episodes: list[EpisodeLog] = []
    step = 0
    window = env.reset(int(episode_rng.integers(2**31)), int(episode_rng.integers(2**31)), seed)
    while step < total_steps:
        eps = epsilon(step, schedule)
        action_index = agent.act_index(window, eps)
        result = env.step(env.move_for(ACTIONS[action_index]))
        agent.observe(
            Transition(window, action_index, result.reward, result.window, result.terminal)
        )
        step += 1
        if result.terminal:
            window = env.reset(
                int(episode_rng.integers(2**31)), int(episode_rng.integers(2**31)), seed
            )
        else:
            window = result.window
        if step in marks_set:
            metrics, episodes = evaluate(
                agent.policy(),
                env_factory,
                eval_seeds_for(seed, step, cfg.eval_episodes),
                cfg.gamma,
            )
            series.append((step, metrics))
            final_episodes = episodes
            if log:
                log(
                    f"[{algorithm} seed {seed}] step {step}: "
                    f"reward/turn {metrics.avg_reward_per_turn:.3f}, "
                    f"success {metrics.execution_success_rate}"
                )
    return RunArtifacts(
        algorithm=algorithm,
        seed=seed,
        config={"experiment": cfg.to_dict(), "agent": agent_cfg.to_dict()},
        series=series,
        final_episodes=final_episodes,
        agent=agent,
    )


def fixed_policy_series(
    stack: Stack,
    policy,
    seed: int,
    steps: int | None = None,
) -> RunArtifacts:
    """Evaluate a fixed policy on the same checkpoint grid and seeds as a
    learning run, so the curves are directly comparable."""
    cfg = stack.config
    total_steps = steps if steps is not None else cfg.steps
    env_factory = stack.env_factory(window_size=2)
    series = []
    final_episodes: list[EpisodeLog] = []
    for mark in checkpoint_steps(total_steps, cfg.eval_interval):
        metrics, episodes = evaluate(
            policy, env_factory, eval_seeds_for(seed, mark, cfg.eval_episodes), cfg.gamma
        )
        series.append((mark, metrics))
        final_episodes = episodes
    return RunArtifacts(
        algorithm=getattr(policy, "name", "fixed"),
        seed=seed,
        config={"experiment": cfg.to_dict()},
        series=series,
        final_episodes=final_episodes,
    )


def tuned_threshold_policy(stack: Stack, log=None) -> tuple[ThresholdPolicy, list]:
    cfg = stack.config
    best, table = tune_thresholds(
        stack.env_factory(window_size=2), cfg.tune_grid, cfg.tune_episodes, cfg.tune_seed
    )
    if log:
        log(f"tuned thresholds: {best}")
    return ThresholdPolicy(best), table


# ---------------------------------------------------------------------------
# Aggregation.
# ---------------------------------------------------------------------------


@dataclass
class AggregateRow:
    step: int
    n_runs: int
    means: dict[str, float | None]
    sems: dict[str, float | None]


def aggregate(runs: list[RunArtifacts]) -> list[AggregateRow]:
    """Per-checkpoint mean and standard error over runs (SEM 0 when n=1)."""
    if not runs:
        raise ValueError("no runs to aggregate")
    grids = [[step for step, _ in run.series] for run in runs]
    if any(g != grids[0] for g in grids):
        raise ValueError("runs have mismatched checkpoint grids")
    rows = []
    for i, step in enumerate(grids[0]):
        means: dict[str, float | None] = {}
        sems: dict[str, float | None] = {}
        for name in METRIC_FIELDS:
            values = [getattr(run.series[i][1], name) for run in runs]
            present = [v for v in values if v is not None]
            if not present:
                means[name], sems[name] = None, None
                continue
            means[name] = float(np.mean(present))
            if len(present) > 1:
                sems[name] = float(np.std(present, ddof=1) / math.sqrt(len(present)))
            else:
                sems[name] = 0.0
        rows.append(AggregateRow(step=step, n_runs=len(runs), means=means, sems=sems))
    return rows


def combined_final_histogram(runs: list[RunArtifacts]) -> dict[int, int]:
    out: dict[int, int] = {}
    for run in runs:
        for k, v in run.final_metrics.turns_to_execute_histogram.items():
            out[k] = out.get(k, 0) + v
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# Paired qualitative comparison.
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    name_a: str
    name_b: str
    n_dialogs: int
    identical_fraction: float
    metrics_a: EvalMetrics
    metrics_b: EvalMetrics
    divergent: list[dict]


def _hyps_equal(a: Hypothesis, b: Hypothesis) -> bool:
    return a == b


def paired_compare(
    policy_a,
    policy_b,
    env_factory,
    n_dialogs: int,
    seed: int,
    gamma: float,
    max_divergent: int = 10,
) -> ComparisonReport:
    """Roll both policies against identical user/channel randomness and count
    dialogs with identical action-kind sequences and hypotheses."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 555]))
    seeds = [(int(rng.integers(2**31)), int(rng.integers(2**31))) for _ in range(n_dialogs)]
    logs_a, logs_b = [], []
    identical = 0
    divergent: list[dict] = []
    for user_seed, channel_seed in seeds:
        log_a = run_episode(env_factory(), policy_a, user_seed, channel_seed)
        log_b = run_episode(env_factory(), policy_b, user_seed, channel_seed)
        logs_a.append(log_a)
        logs_b.append(log_b)
        same = len(log_a.turns) == len(log_b.turns) and all(
            ta.bot.kind is tb.bot.kind and _hyps_equal(ta.hyp, tb.hyp)
            for ta, tb in zip(log_a.turns, log_b.turns)
        )
        if same:
            identical += 1
        elif len(divergent) < max_divergent:
            divergent.append(
                {
                    "seeds": [user_seed, channel_seed],
                    "a": episode_to_obj(log_a),
                    "b": episode_to_obj(log_b),
                }
            )
    return ComparisonReport(
        name_a=getattr(policy_a, "name", "a"),
        name_b=getattr(policy_b, "name", "b"),
        n_dialogs=n_dialogs,
        identical_fraction=identical / n_dialogs,
        metrics_a=compute_metrics(logs_a, gamma),
        metrics_b=compute_metrics(logs_b, gamma),
        divergent=divergent,
    )


# ---------------------------------------------------------------------------
# Random hyperparameter search (uniform; learning rate log-uniform).
# ---------------------------------------------------------------------------


DEFAULT_SEARCH_SPACE: dict = {
    "lr": (1e-5, 1e-3),
    "hidden_layers": [1, 2, 3],
    "hidden_nodes": [32, 64, 128],
    "embedding_size": [5, 10, 30],
    "dropout": [0.0, 0.25, 0.5],
    "window": [2, 4, 8],
}


def sample_agent_config(
    space: dict, algorithm: str, rng: np.random.Generator
) -> AgentConfig:
    base = dqn_config() if algorithm == "dqn" else ddqn_config()
    values: dict = {}
    for name, spec in space.items():
        if name == "lr":
            lo, hi = spec
            values["lr"] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        else:
            values[name] = spec[int(rng.integers(len(spec)))]
    return dataclasses.replace(base, **values)


def random_search(
    stack: Stack,
    algorithm: str,
    budget: int,
    master_seed: int,
    steps_per_trial: int = 10_000,
    space: dict | None = None,
    log=None,
) -> tuple[AgentConfig, list[tuple[AgentConfig, float]]]:
    """Uniform random search over agent settings; the objective is the final
    checkpoint's average discounted return at reduced step count."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = space or DEFAULT_SEARCH_SPACE
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 31337]))
    leaderboard: list[tuple[AgentConfig, float]] = []
    base_cfg = stack.config
    for trial in range(budget):
        candidate = sample_agent_config(space, algorithm, rng)
        trial_stack = Stack(
            config=dataclasses.replace(
                base_cfg,
                dqn=candidate if algorithm == "dqn" else base_cfg.dqn,
                ddqn=candidate if algorithm == "dueling-ddqn" else base_cfg.ddqn,
            ),
            domain=stack.domain,
            vocab=stack.vocab,
            lm=stack.lm,
            channel_cfg=stack.channel_cfg,
            nlu=stack.nlu,
            calibration_report=stack.calibration_report,
        )
        artifacts = run_training(trial_stack, algorithm, seed=master_seed + trial, steps=steps_per_trial)
        objective = artifacts.final_metrics.avg_discounted_return
        leaderboard.append((candidate, objective))
        if log:
            log(f"trial {trial}: objective {objective:.3f} ({candidate})")
    leaderboard.sort(key=lambda item: item[1], reverse=True)
    return leaderboard[0][0], leaderboard


# ---------------------------------------------------------------------------
# Export: metrics CSVs, transcripts, blind-study bundles.
# ---------------------------------------------------------------------------


def _metric_cell(value) -> str:
    return "" if value is None else repr(value)


def write_run_csv(artifacts: RunArtifacts, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step",) + METRIC_FIELDS + ("turns_to_execute_histogram",))
        for step, m in artifacts.series:
            writer.writerow(
                [step]
                + [_metric_cell(getattr(m, name)) for name in METRIC_FIELDS]
                + [json.dumps(m.turns_to_execute_histogram, sort_keys=True)]
            )


def write_aggregate_csv(rows: list[AggregateRow], path: str) -> None:
    header = ["step", "n_runs"]
    for name in METRIC_FIELDS:
        header += [f"{name}_mean", f"{name}_sem"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            out = [row.step, row.n_runs]
            for name in METRIC_FIELDS:
                out += [_metric_cell(row.means[name]), _metric_cell(row.sems[name])]
            writer.writerow(out)


def write_histogram_csv(histograms: dict[str, dict[int, int]], path: str) -> None:
    """Turns-to-execute distribution per policy, long format."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "turns_to_execute", "count"])
        for policy_name in sorted(histograms):
            for turns, count in sorted(histograms[policy_name].items()):
                writer.writerow([policy_name, turns, count])


def _slots_obj(slots: tuple[SlotFill, ...]) -> list[dict]:
    return [{"type": s.slot_type, "value": s.value} for s in slots]


def _slots_from(obj: list[dict]) -> tuple[SlotFill, ...]:
    return tuple(SlotFill(s["type"], s["value"]) for s in obj)


def turn_to_obj(turn: TurnRecord) -> dict:
    return {
        "user": {
            "speaker": "user",
            "text": " ".join(turn.user.words),
            "intent": turn.user.intent.canonical(),
            "slots": _slots_obj(turn.user.slots),
            "act_kind": turn.user.act_kind.value,
        },
        "hyp": {
            "words": list(turn.hyp.words),
            "intent": turn.hyp.intent.canonical() if turn.hyp.intent else None,
            "slots": _slots_obj(turn.hyp.slots),
            "asr_score": turn.hyp.asr_score,
            "nlu_intent_score": turn.hyp.nlu_intent_score,
            "nlu_slot_score": turn.hyp.nlu_slot_score,
        },
        "action": turn.bot.kind.value,
        "reward": turn.reward,
        "correct": turn.correct,
    }


def episode_to_obj(log: EpisodeLog) -> dict:
    return {
        "seeds": list(log.seed_triplet),
        "terminal_bonus": log.terminal_bonus,
        "turns": [turn_to_obj(t) for t in log.turns],
    }


def episode_from_obj(obj: dict) -> EpisodeLog:
    turns = []
    for t in obj["turns"]:
        user = UserAct(
            intent=IntentToken.parse(t["user"]["intent"]),
            slots=_slots_from(t["user"]["slots"]),
            words=tuple(t["user"]["text"].split()),
            act_kind=ActKind(t["user"]["act_kind"]),
        )
        hyp = Hypothesis(
            words=tuple(t["hyp"]["words"]),
            intent=IntentToken.parse(t["hyp"]["intent"]) if t["hyp"]["intent"] else None,
            slots=_slots_from(t["hyp"]["slots"]),
            asr_score=t["hyp"]["asr_score"],
            nlu_intent_score=t["hyp"]["nlu_intent_score"],
            nlu_slot_score=t["hyp"]["nlu_slot_score"],
        )
        kind = MoveKind(t["action"])
        move = BotMove(kind) if kind is MoveKind.ELICIT else BotMove(kind, hyp)
        turns.append(TurnRecord(user=user, hyp=hyp, bot=move, reward=t["reward"], correct=t["correct"]))
    return EpisodeLog(
        turns=turns,
        terminal_bonus=obj["terminal_bonus"],
        seed_triplet=tuple(obj["seeds"]),
    )


def write_transcripts(episodes: list[EpisodeLog], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in episodes:
            fh.write(json.dumps(episode_to_obj(log), sort_keys=True) + "\n")


def read_transcripts(path: str) -> list[EpisodeLog]:
    episodes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                episodes.append(episode_from_obj(json.loads(line)))
    return episodes


def export_run(artifacts: RunArtifacts, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(artifacts.config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_csv(artifacts, os.path.join(out_dir, "metrics.csv"))
    write_histogram_csv(
        {artifacts.algorithm: artifacts.final_metrics.turns_to_execute_histogram},
        os.path.join(out_dir, "histogram.csv"),
    )
    write_transcripts(artifacts.final_episodes, os.path.join(out_dir, "transcripts.jsonl"))
    if artifacts.agent is not None:
        artifacts.agent.save(os.path.join(out_dir, "agent.ckpt.json"))


# ---------------------------------------------------------------------------
# Simulator dialog sampling and blind-study export.
# ---------------------------------------------------------------------------


def sample_dialogs(
    model,
    domain: Domain,
    n: int,
    seed: int,
    max_turns: int = 20,
) -> Corpus:
    """Dialogs rolled from a trained intent LM with clean bot responses
    (no agent in the loop; every request is answered directly)."""
    sim = UserSimulator(model, domain.templates, domain.lexicon)
    dialogs = []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 424242]))
    for _ in range(n):
        state = sim.new_state(int(rng.integers(2**31)))
        turns: list[Turn] = []
        move = None
        for _ in range(max_turns):
            act = sim.next_user_act(state, move)
            if act.act_kind is ActKind.TERMINATE:
                break
            response = domain.bot_response_text(act.intent, act.slots)
            turns.append(Turn("user", " ".join(act.words), intent=act.intent.name, slots=act.slots))
            turns.append(Turn("bot", response))
            sim.observe_response(state, response)
            hyp = Hypothesis(
                words=act.words,
                intent=act.intent,
                slots=act.slots,
                asr_score=1.0,
                nlu_intent_score=1.0,
                nlu_slot_score=1.0,
            )
            move = BotMove(MoveKind.EXECUTE, hyp)
        stop = domain.stop_utterances[int(rng.integers(len(domain.stop_utterances)))]
        turns.append(Turn("user", stop, intent=domain.generator.stop_intent))
        turns.append(Turn("bot", domain.farewell))
        dialogs.append(Dialog(turns))
    return Corpus(dialogs, name=f"sampled-{seed}")


def export_study(
    human_corpus: Corpus,
    model,
    domain: Domain,
    n_each: int,
    seed: int,
    out_dir: str,
) -> None:
    """Blind-study bundle: speaker-tagged dialogs with provenance held in a
    separate key file, so an indistinguishability study could be run."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    picks = rng.choice(len(human_corpus.dialogs), size=min(n_each, len(human_corpus.dialogs)), replace=False)
    entries: list[tuple[str, Dialog]] = [("human", human_corpus.dialogs[int(i)]) for i in picks]
    simulated = sample_dialogs(model, domain, n_each, seed)
    entries += [("simulator", d) for d in simulated.dialogs]
    order = rng.permutation(len(entries))
    key: dict[str, str] = {}
    with open(os.path.join(out_dir, "study_dialogs.txt"), "w", encoding="utf-8") as fh:
        for rank, index in enumerate(order):
            provenance, dialog = entries[int(index)]
            name = f"dialog-{rank:03d}"
            key[name] = provenance
            fh.write(f"== {name} ==\n")
            for turn in dialog.turns:
                fh.write(f"{turn.speaker.upper()}: {turn.text}\n")
            fh.write("\n")
    with open(os.path.join(out_dir, "study_key.json"), "w", encoding="utf-8") as fh:
        json.dump(key, fh, indent=2, sort_keys=True)
        fh.write("\n")
