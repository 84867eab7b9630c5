"""Command-line surface. Every verb is a thin composition of module
operations; stdout carries primary results, stderr carries progress logs.

Exit codes: 0 success, 2 usage, 3 missing file, 4 validation/format error,
5 calibration error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import channel as channel_mod
from . import experiment as exp
from . import lm as lm_mod
from . import policies as pol
from . import report as report_mod
from .chat import ChatSession
from .core import CorpusFormatError, ProtocolError
from .corpus import ConfigurationError, build_vocab, load_corpus, save_corpus, split
from .corpus import generate_synthetic_corpus
from .domain import default_domain
from . import nn

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_VALIDATION = 4
EXIT_CALIBRATION = 5
EXIT_OTHER = 1


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(args) -> exp.ExperimentConfig:
    if getattr(args, "config", None):
        cfg = exp.ExperimentConfig.load(args.config)
    elif getattr(args, "profile", "desk") == "paper":
        cfg = exp.ExperimentConfig()
    else:
        cfg = exp.desk_config()
    return cfg


def _parse_policy_spec(spec: str, stack: exp.Stack | None):
    """Policy specs: 'execute-only', 'fixed', 'fixed:ASR,NLU,ELICIT',
    'tuned', or a path to an agent checkpoint."""
    if spec == "execute-only":
        return pol.ExecuteOnlyPolicy()
    if spec == "fixed":
        return pol.ThresholdPolicy()
    if spec.startswith("fixed:"):
        parts = [float(x) for x in spec[len("fixed:") :].split(",")]
        if len(parts) != 3:
            raise ValueError("fixed:ASR,NLU,ELICIT needs three values")
        return pol.ThresholdPolicy(pol.Thresholds(*parts))
    if spec == "tuned":
        if stack is None:
            raise ValueError("'tuned' policy needs an experiment stack")
        policy, _ = exp.tuned_threshold_policy(stack, log=log)
        return policy
    if not os.path.exists(spec):
        raise FileNotFoundError(spec)
    return pol.GreedyAgentPolicy(pol.DqnAgent.load(spec))


# ---------------------------------------------------------------------------
# Verb handlers.
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    domain = default_domain()
    corpus = generate_synthetic_corpus(domain, args.n, args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n_dialogs} dialogs ({corpus.n_user_turns} user turns) to {args.out}")
    return EXIT_OK


def cmd_train_lm(args) -> int:
    corpus = load_corpus(args.corpus)
    vocab = build_vocab(corpus)
    sequences = lm_mod.sequences_from_corpus(corpus)
    if args.model == "bigram":
        model = lm_mod.train_bigram(sequences, vocab, smoothing=args.smoothing)
        model.save(args.out)
    else:
        train_c, dev_c, _ = split(corpus, (0.9, 0.1, 0.0), args.seed, allow_empty=True)
        hyper = lm_mod.LmHyper(
            cell=args.model,
            hidden=args.hidden,
            embed=args.embed,
            epochs=args.epochs,
            lr=args.lr,
            condition_response=args.condition_response,
            seed=args.seed,
        )
        model = lm_mod.train_rnn_lm(
            lm_mod.sequences_from_corpus(train_c),
            lm_mod.sequences_from_corpus(dev_c),
            vocab,
            hyper,
        )
        model.save(args.out)
    print(f"saved {args.model} model to {args.out}")
    return EXIT_OK


def cmd_eval_lm(args) -> int:
    model = lm_mod.load_model(args.model)
    corpus = load_corpus(args.corpus)
    value = lm_mod.perplexity(model, lm_mod.sequences_from_corpus(corpus))
    print(f"{value:.6f}")
    return EXIT_OK


def cmd_sample_dialogs(args) -> int:
    model = lm_mod.load_model(args.model)
    corpus = exp.sample_dialogs(model, default_domain(), args.n, args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n_dialogs} sampled dialogs to {args.out}")
    return EXIT_OK


def cmd_calibrate_noise(args) -> int:
    domain = default_domain()
    cfg = channel_mod.ChannelConfig.for_domain(domain)
    if args.corpus:
        corpus = load_corpus(args.corpus)
        sample = [
            tuple(t.text.lower().split())
            for d in corpus.dialogs
            for t in d.user_turns()
            if t.intent not in ("AMAZON.StopIntent", "AMAZON.CancelIntent")
        ]
    else:
        sample = channel_mod.sample_utterances(domain, 2000, args.seed)
    result = channel_mod.calibrate(args.target, sample, cfg, tol=args.tol, seed=args.seed)
    print(result.report())
    return EXIT_OK


def cmd_train_nlu(args) -> int:
    domain = default_domain()
    cfg = channel_mod.ChannelConfig.for_domain(domain, sigma=args.sigma)
    model = channel_mod.train_nlu(domain, cfg, n_samples=args.samples, seed=args.seed)
    model.save(args.out)
    print(f"saved nlu model to {args.out}")
    return EXIT_OK


def cmd_tune_fixed(args) -> int:
    cfg = _load_config(args)
    stack = exp.prepare_stack(cfg, log=log)
    policy, table = exp.tuned_threshold_policy(stack, log=log)
    th = policy.thresholds
    best_return = max(value for _, value in table)
    print(
        json.dumps(
            {
                "asr_exec": th.asr_exec,
                "nlu_exec": th.nlu_exec,
                "asr_elicit": th.asr_elicit,
                "mean_return": best_return,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def _metrics_obj(m: exp.EvalMetrics) -> dict:
    obj = {name: getattr(m, name) for name in exp.METRIC_FIELDS}
    obj["turns_to_execute_histogram"] = m.turns_to_execute_histogram
    return obj


def cmd_train_rl(args) -> int:
    cfg = _load_config(args)
    if args.steps:
        cfg.steps = args.steps
    algorithm = {"dqn": "dqn", "ddqn": "dueling-ddqn"}[args.algo]
    stack = exp.prepare_stack(cfg, log=log)
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.outdir, exist_ok=True)
    runs = []
    for seed in seeds:
        log(f"training {algorithm} with seed {seed}")
        artifacts = exp.run_training(stack, algorithm, seed, log=log)
        exp.export_run(artifacts, os.path.join(args.outdir, f"{args.algo}-seed{seed}"))
        runs.append(artifacts)
    rows = exp.aggregate(runs)
    exp.write_aggregate_csv(rows, os.path.join(args.outdir, f"{args.algo}_aggregate.csv"))
    histograms = {args.algo: exp.combined_final_histogram(runs)}

    if args.baselines:
        log("evaluating fixed baselines on the same checkpoints")
        tuned, _ = exp.tuned_threshold_policy(stack, log=log)
        for name, policy in (("tuned-fixed", tuned), ("execute-only", pol.ExecuteOnlyPolicy())):
            base_runs = [exp.fixed_policy_series(stack, policy, seed) for seed in seeds]
            exp.write_aggregate_csv(
                exp.aggregate(base_runs), os.path.join(args.outdir, f"{name}_aggregate.csv")
            )
            histograms[name] = exp.combined_final_histogram(base_runs)

    exp.write_histogram_csv(histograms, os.path.join(args.outdir, "turns_to_execute.csv"))
    if args.figures:
        for path in report_mod.render_run_directory(args.outdir):
            log(f"rendered {path}")
    final = exp.aggregate(runs)[-1]
    print(json.dumps({"algorithm": algorithm, "final": final.means}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    stack = exp.prepare_stack(cfg, log=log)
    policy = _parse_policy_spec(args.policy, stack)
    window = getattr(getattr(policy, "agent", None), "cfg", None)
    window_size = window.window if window else 2
    seeds = exp.eval_seeds_for(args.seed, 0, args.episodes)
    metrics, episodes = exp.evaluate(policy, stack.env_factory(window_size), seeds, cfg.gamma)
    if args.transcripts:
        exp.write_transcripts(episodes, args.transcripts)
        log(f"wrote transcripts to {args.transcripts}")
    print(json.dumps(_metrics_obj(metrics), sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    stack = exp.prepare_stack(cfg, log=log)
    policy_a = _parse_policy_spec(args.policy_a, stack)
    policy_b = _parse_policy_spec(args.policy_b, stack)
    window_size = max(
        getattr(getattr(p, "agent", None), "cfg", pol.dqn_config()).window
        for p in (policy_a, policy_b)
    )
    report = exp.paired_compare(
        policy_a, policy_b, stack.env_factory(window_size), args.n, args.seed, cfg.gamma
    )
    obj = {
        "a": report.name_a,
        "b": report.name_b,
        "n_dialogs": report.n_dialogs,
        "identical_fraction": report.identical_fraction,
        "metrics_a": _metrics_obj(report.metrics_a),
        "metrics_b": _metrics_obj(report.metrics_b),
    }
    if args.out:
        obj_full = dict(obj)
        obj_full["divergent"] = report.divergent
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(obj_full, fh, indent=2, sort_keys=True)
            fh.write("\n")
        log(f"wrote comparison report to {args.out}")
    print(json.dumps(obj, sort_keys=True))
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _load_config(args)
    stack = exp.prepare_stack(cfg, log=log)
    algorithm = {"dqn": "dqn", "ddqn": "dueling-ddqn"}[args.algo]
    best, leaderboard = exp.random_search(
        stack, algorithm, args.budget, args.seed, steps_per_trial=args.steps_per_trial, log=log
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("rank,objective,config\n")
            for rank, (candidate, objective) in enumerate(leaderboard):
                fh.write(f"{rank},{objective!r},{json.dumps(candidate.to_dict(), sort_keys=True)!r}\n")
        log(f"wrote leaderboard to {args.out}")
    print(json.dumps({"best": best.to_dict(), "objective": leaderboard[0][1]}, sort_keys=True))
    return EXIT_OK


def cmd_chat(args) -> int:
    domain = default_domain()
    cfg = channel_mod.ChannelConfig.for_domain(domain, sigma=args.sigma)
    if args.nlu and os.path.exists(args.nlu):
        nlu = channel_mod.NluModel.load(args.nlu)
    else:
        log("training nlu for the chat session")
        nlu = channel_mod.train_nlu(domain, cfg, seed=args.seed)
    policy = _parse_policy_spec(args.policy, None)
    session = ChatSession(
        policy,
        nlu,
        cfg,
        domain,
        channel_seed=args.seed,
        debug=args.debug,
    )
    episode = session.run()
    if args.transcript:
        exp.write_transcripts([episode], args.transcript)
        log(f"wrote transcript to {args.transcript}")
    return EXIT_OK


def cmd_export_study(args) -> int:
    corpus = load_corpus(args.corpus)
    model = lm_mod.load_model(args.model)
    exp.export_study(corpus, model, default_domain(), args.n, args.seed, args.outdir)
    print(f"wrote study bundle to {args.outdir}")
    return EXIT_OK


def cmd_report(args) -> int:
    written = report_mod.render_run_directory(args.rundir)
    if not written:
        raise ValueError(f"no renderable CSVs found in {args.rundir}")
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claribot",
        description="Error-recovery dialog policy workbench",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "generate a synthetic ground-truth corpus")
    p.add_argument("--n", type=int, default=966)
    p.add_argument("--out", required=True)

    p = add("train-lm", cmd_train_lm, "train an intent language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", choices=("bigram", "rnn", "gru"), default="rnn")
    p.add_argument("--out", required=True)
    p.add_argument("--smoothing", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=30)
    p.add_argument("--embed", type=int, default=50)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--condition-response", action="store_true")

    p = add("eval-lm", cmd_eval_lm, "print perplexity of a model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)

    p = add("sample-dialogs", cmd_sample_dialogs, "sample dialogs from a trained LM")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("calibrate-noise", cmd_calibrate_noise, "find sigma for a target WER")
    p.add_argument("--target", type=float, default=0.15)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--corpus", default=None)

    p = add("train-nlu", cmd_train_nlu, "train the channel's intent classifier")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=4000)
    p.add_argument("--out", required=True)

    p = add("tune-fixed", cmd_tune_fixed, "grid-search fixed-policy thresholds")
    p.add_argument("--config", default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")

    p = add("train-rl", cmd_train_rl, "train RL agents and export metrics")
    p.add_argument("--algo", choices=("dqn", "ddqn"), default="ddqn")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--baselines", action="store_true")
    p.add_argument("--figures", action="store_true")

    p = add("eval", cmd_eval, "evaluate a policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--config", default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--transcripts", default=None)

    p = add("compare", cmd_compare, "paired comparison of two policies")
    p.add_argument("--policy-a", required=True)
    p.add_argument("--policy-b", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--config", default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", default=None)

    p = add("search", cmd_search, "random hyperparameter search")
    p.add_argument("--algo", choices=("dqn", "ddqn"), default="dqn")
    p.add_argument("--budget", type=int, default=10)
    p.add_argument("--steps-per-trial", type=int, default=10_000)
    p.add_argument("--config", default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", default=None)

    p = add("chat", cmd_chat, "interactive chat against a policy")
    p.add_argument("--policy", default="fixed")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--nlu", default=None)
    p.add_argument("--debug", action="store_true")
    p.add_argument("--transcript", default=None)

    p = add("export-study", cmd_export_study, "export a blind-study bundle")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--outdir", required=True)

    p = add("report", cmd_report, "render figures from exported CSVs")
    p.add_argument("--rundir", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        log(f"error: missing-file: {exc}")
        return EXIT_MISSING_FILE
    except channel_mod.CalibrationError as exc:
        log(f"error: calibration: {exc}")
        return EXIT_CALIBRATION
    except (CorpusFormatError, ConfigurationError, ValueError) as exc:
        log(f"error: validation: {exc}")
        return EXIT_VALIDATION
    except (ProtocolError, nn.TrainingError) as exc:
        log(f"error: runtime: {exc}")
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
