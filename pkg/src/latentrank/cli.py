"""Command line: synth, learn, eval, predict, ingest, bound.

Every command writes a ``<out>.manifest.json`` holding the fully resolved
configuration; ``--config <manifest>`` re-runs it. Flags override the config
file, which overrides built-in defaults.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import _rng
from .detection import DEFAULT_ZETA, DIRECTION_LAWS
from .evaluation import kendall_tau_error, rmse, write_metrics_csv
from .exceptions import InsufficientClustersError, RecoveryError, ValidationError
from .formats import (
    dump_json,
    load_json,
    read_dataset,
    read_model,
    write_dataset,
    write_manifest,
    write_model,
)
from .inference import (
    fit_dirichlet,
    heldout_loglik,
    infer_theta,
    infer_thetas,
    predict_rating,
    write_predictions_csv,
)
from .ingest import (
    SELECTIONS,
    TIE_POLICIES,
    ConversionPolicy,
    build_split,
    parse_ratings,
    parse_split,
    ratings_to_comparisons,
    split_ratings,
    top_q_filter,
)
from .model import (
    DirichletPrior,
    GroundTruthModel,
    PairDistribution,
    PairIndex,
    RankingMatrix,
    permutation_from_scores,
    random_permutations,
    sample_dataset,
)
from .recovery import LearnParams, learn_rankings, read_estimate, theory_bounds, write_estimate
from .regression import DEFAULT_EPSILON

log = logging.getLogger("latentrank")

DEFAULTS = {
    "synth": dict(q=None, k=None, m=None, n=None, alpha0=None, mu="uniform", from_scores=None,
                  model=None, seed=None, out=None),
    "learn": dict(input=None, k=None, projections=None, zeta=DEFAULT_ZETA, epsilon=DEFAULT_EPSILON,
                  direction="gaussian", seed=None, threads=1, out=None, diagnostics=None),
    "eval": dict(input=None, truth=None, out=None),
    "predict": dict(mode="comparisons", estimate=None, input=None, train=None, samples=512, seed=None,
                    format="dat", q=None, selection="full", ties="ignore", split="new-comparison:0.8",
                    out=None),
    "ingest": dict(input=None, format="dat", q=None, selection="full", ties="ignore", split=None,
                   seed=None, out=None),
    "bound": dict(model=None, delta=0.05, n=None, direction="gaussian", projections=1_000_000,
                  seed=None, out=None),
}
RANDOMIZED = {"synth", "learn", "predict", "ingest", "bound"}
REQUIRED = {
    "synth": ("k", "m", "n", "alpha0", "out"),
    "learn": ("input", "k", "out"),
    "eval": ("input", "truth", "out"),
    "predict": ("estimate", "input", "out"),
    "ingest": ("input", "q", "out"),
    "bound": ("model", "n", "out"),
}


def _parser():
    p = argparse.ArgumentParser(prog="latentrank", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def cmd(name, help):
        c = sub.add_parser(name, help=help, argument_default=S)
        c.add_argument("--config", help="JSON config or manifest to start from")
        c.add_argument("--out")
        return c

    c = cmd("synth", "sample a ground-truth model and a comparison dataset")
    c.add_argument("--q", type=int)
    c.add_argument("--k", type=int)
    c.add_argument("--m", type=int)
    c.add_argument("--n", type=int)
    c.add_argument("--alpha0", type=float)
    c.add_argument("--mu", help="'uniform' or a JSON file with one weight per unordered pair")
    c.add_argument("--from-scores", dest="from_scores", help="Q x K whitespace score matrix")
    c.add_argument("--model", help="reuse the rankings of an existing model JSON")
    c.add_argument("--seed", type=int)

    c = cmd("learn", "recover K rankings from a comparison dataset")
    c.add_argument("--in", dest="input")
    c.add_argument("--k", type=int)
    c.add_argument("--projections", type=int)
    c.add_argument("--zeta", type=float)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--direction", choices=DIRECTION_LAWS)
    c.add_argument("--seed", type=int)
    c.add_argument("--threads", type=int)
    c.add_argument("--diagnostics", help="also write per-row solid angles as JSON")

    c = cmd("eval", "matched Kendall tau error of estimates against a truth")
    c.add_argument("--in", dest="input", nargs="+")
    c.add_argument("--truth", help="model JSON or estimate JSON holding the reference rankings")

    c = cmd("predict", "held-out likelihood or rating prediction")
    c.add_argument("--mode", choices=("comparisons", "ratings"))
    c.add_argument("--estimate")
    c.add_argument("--in", dest="input", help="test dataset (comparisons) or ratings file (ratings)")
    c.add_argument("--train", help="training dataset for new-comparison likelihoods")
    c.add_argument("--samples", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--format", choices=("dat", "csv"))
    c.add_argument("--q", type=int)
    c.add_argument("--selection", choices=SELECTIONS)
    c.add_argument("--ties", choices=TIE_POLICIES)
    c.add_argument("--split")

    c = cmd("ingest", "convert star ratings into a comparison dataset")
    c.add_argument("--in", dest="input")
    c.add_argument("--format", choices=("dat", "csv"))
    c.add_argument("--q", type=int)
    c.add_argument("--selection", choices=SELECTIONS)
    c.add_argument("--ties", choices=TIE_POLICIES)
    c.add_argument("--split")
    c.add_argument("--seed", type=int)

    c = cmd("bound", "sample-complexity constants and bounds of a model")
    c.add_argument("--model")
    c.add_argument("--delta", type=float)
    c.add_argument("--n", type=int)
    c.add_argument("--direction", choices=DIRECTION_LAWS)
    c.add_argument("--projections", type=int, help="Monte Carlo draws for the minimum solid angle")
    c.add_argument("--seed", type=int)
    return p


def resolve(command, flags):
    """Materialise every setting: flags > config file > defaults."""
    flags = dict(flags)
    config = {}
    path = flags.pop("config", None)
    if path:
        doc = load_json(path)
        config = doc["config"] if "command" in doc and "config" in doc else doc
        if doc.get("command", command) != command:
            raise ValidationError(f"config was written by '{doc['command']}', not '{command}'")
    cfg = dict(DEFAULTS[command])
    unknown = set(config) - set(cfg)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    cfg.update({k: v for k, v in config.items() if v is not None})
    cfg.update(flags)
    if command in RANDOMIZED and cfg.get("seed") is None:
        cfg["seed"] = _rng.fresh_seed()
        print(f"seed: {cfg['seed']}", file=sys.stderr)
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise ValidationError(f"missing required setting(s): {', '.join('--' + m for m in missing)}")
    return cfg


# ---------------------------------------------------------------- commands


def _read_scores(path):
    S = np.loadtxt(path, ndmin=2)
    return RankingMatrix.from_permutations([permutation_from_scores(S[:, k]) for k in range(S.shape[1])])


def cmd_synth(cfg):
    seed = cfg["seed"]
    if cfg["from_scores"]:
        sigma = _read_scores(cfg["from_scores"])
    elif cfg["model"]:
        sigma = read_model(cfg["model"]).sigma
    else:
        if cfg["q"] is None:
            raise ValidationError("--q is required unless rankings come from --from-scores or --model")
        sigma = RankingMatrix.from_permutations(random_permutations(cfg["q"], cfg["k"], _rng.stream(seed, "rankings")))
    if sigma.K != cfg["k"]:
        raise ValidationError(f"rankings have K={sigma.K}, but --k {cfg['k']}")
    if cfg["q"] is not None and sigma.Q != cfg["q"]:
        raise ValidationError(f"rankings have Q={sigma.Q}, but --q {cfg['q']}")
    cfg["q"] = sigma.Q
    if cfg["mu"] == "uniform":
        mu = PairDistribution.uniform(sigma.Q)
    else:
        mu = PairDistribution(np.asarray(load_json(cfg["mu"]), dtype=float), sigma.Q)
    if not cfg["alpha0"] > 0:
        raise ValidationError("--alpha0 must be positive")
    # the mean of the prior is uniform on the simplex
    a = _rng.stream(seed, "mean").dirichlet(np.ones(sigma.K))
    model = GroundTruthModel(sigma, mu, DirichletPrior.from_mean(a, cfg["alpha0"]))
    data = sample_dataset(model, cfg["m"], cfg["n"], seed)
    os.makedirs(cfg["out"], exist_ok=True)
    model_path = os.path.join(cfg["out"], "model.json")
    data_path = os.path.join(cfg["out"], "data.txt")
    write_model(model_path, model)
    write_dataset(data_path, data)
    write_manifest(os.path.join(cfg["out"], "synth"), "synth", cfg, [model_path, data_path])


def cmd_learn(cfg):
    data = read_dataset(cfg["input"])
    params = LearnParams(cfg["projections"], cfg["zeta"], cfg["epsilon"], cfg["direction"], cfg["seed"], cfg["threads"])
    params = params.resolved(cfg["k"])
    cfg["projections"] = params.P
    est = learn_rankings(data, cfg["k"], params)
    N = np.unique(data.N_m)
    run = {"M": data.M, "N": int(N[0]) if len(N) == 1 else float(data.N_m.mean()), "Q": data.Q, "seed": cfg["seed"]}
    write_estimate(cfg["out"], est, {"run": run})
    outputs = [cfg["out"]]
    if cfg["diagnostics"]:
        idx = PairIndex(data.Q)
        dump_json(cfg["diagnostics"], {
            "q_hat": est.diagnostics["q_hat"],
            "selected": [list(map(int, idx.pair(w))) for w in est.novel_pairs.I],
            "rejections": est.novel_pairs.rejections,
        })
        outputs.append(cfg["diagnostics"])
    write_manifest(cfg["out"], "learn", cfg, outputs)
    log.info("learn finished in %.3f s", est.diagnostics["timings"]["total"])


def _truth_sigma(path):
    doc = load_json(path)
    if "sigma" in doc:
        return read_model(path).sigma
    return read_estimate(path).sigma_hat


def cmd_eval(cfg):
    inputs = [cfg["input"]] if isinstance(cfg["input"], str) else list(cfg["input"])
    truth = _truth_sigma(cfg["truth"])
    rows = []
    for path in inputs:
        doc = load_json(path)
        sigma = _truth_sigma(path)
        err = kendall_tau_error(truth, sigma)
        run = doc.get("run", {})
        rows.append({
            "run_id": os.path.splitext(os.path.basename(path))[0],
            "M": run.get("M", ""), "N": run.get("N", ""), "K": sigma.K, "Q": sigma.Q,
            "seed": run.get("seed", ""), "mean_error": err.mean_error, "per_column_errors": err.per_column_error,
        })
    write_metrics_csv(cfg["out"], rows)
    write_manifest(cfg["out"], "eval", cfg, [cfg["out"]])


def _predict_comparisons(cfg, est):
    """New-comparison when train and test list the same users, else new-user."""
    if not cfg["train"]:
        raise ValidationError("comparison prediction needs --train to fit the prior")
    test, train = read_dataset(cfg["input"]), read_dataset(cfg["train"])
    idx = PairIndex(est.Q)
    thetas = infer_thetas(train, est.B_hat)
    prior = fit_dirichlet(thetas)
    same_users = train.M == test.M
    if not same_users:
        thetas = np.tile(prior.a, (test.M, 1))
    report = heldout_loglik(test, est.B_hat, prior, cfg["samples"], cfg["seed"],
                            condition_on=train if same_users else None)
    rows = []
    for m in range(test.M):
        for w in test.user(m):
            i, j = idx.pair(int(w))
            p = est.B_hat[w] @ thetas[m]
            q = est.B_hat[idx.flip(int(w))] @ thetas[m]
            rows.append({"user": m, "item": f"{i}>{j}", "predicted": int(p >= q),
                         "score": p / (p + q) if p + q > 0 else 0.5})
    summary = {k: v for k, v in asdict(report).items() if k != "per_user"}
    summary["prior_alpha"] = [float(x) for x in prior.alpha]
    return rows, summary


def _predict_ratings(cfg, est):
    if cfg["q"] is None:
        raise ValidationError("rating prediction needs --q")
    table = top_q_filter(parse_ratings(cfg["input"], cfg["format"]), cfg["q"])
    kind, ratio = parse_split(cfg["split"])
    if kind != "new-comparison":
        raise ValidationError("rating prediction uses a new-comparison split")
    policy = ConversionPolicy(cfg["selection"], cfg["ties"], seed=cfg["seed"])
    train_r, test_r = split_ratings(table, ratio, cfg["seed"])
    train = ratings_to_comparisons(train_r, policy, "-train")
    rows, preds, truths, skipped = [], [], [], 0
    for m in range(table.n_users):
        history = train_r.user_ratings(m)
        targets = test_r.user_ratings(m)
        if not targets:
            continue
        theta = infer_theta(train.user(m), est.B_hat).theta_hat
        for item, stars in sorted(targets.items()):
            try:
                s, scores = predict_rating(history, item, est.B_hat, theta, return_scores=True)
            except ValidationError:
                skipped += 1
                continue
            preds.append(s)
            truths.append(stars)
            rows.append({"user": int(table.user_ids[m]), "item": int(table.item_ids[item]),
                         "predicted": s, "score": max(scores)})
    if not preds:
        raise ValidationError("no test rating had a usable history")
    return rows, {"rmse": rmse(preds, truths), "num_predictions": len(preds), "skipped": skipped}


def cmd_predict(cfg):
    est = read_estimate(cfg["estimate"])
    if cfg["mode"] == "comparisons":
        rows, summary = _predict_comparisons(cfg, est)
    else:
        rows, summary = _predict_ratings(cfg, est)
    write_predictions_csv(cfg["out"], rows)
    report = cfg["out"] + ".report.json"
    dump_json(report, summary)
    write_manifest(cfg["out"], "predict", cfg, [cfg["out"], report])
    print(" ".join(f"{k}={v}" for k, v in summary.items() if not isinstance(v, list)))


def cmd_ingest(cfg):
    raw = parse_ratings(cfg["input"], cfg["format"])
    table = top_q_filter(raw, cfg["q"])
    policy = ConversionPolicy(cfg["selection"], cfg["ties"], seed=cfg["seed"])
    base = cfg["out"]
    remap = base + ".ids.json"
    dump_json(remap, {"users": table.user_ids.tolist(), "items": table.item_ids.tolist()})
    counts = {"lines_malformed": raw.malformed, "duplicates_dropped": raw.duplicates,
              "ratings": len(table), "users": table.n_users, "items": table.n_items}
    if cfg["split"]:
        train, test = build_split(table, cfg["split"], policy)
        paths = [base + ".train.txt", base + ".test.txt"]
        write_dataset(paths[0], train)
        write_dataset(paths[1], test)
        counts.update(train_comparisons=len(train.pairs), test_comparisons=len(test.pairs))
    else:
        data = ratings_to_comparisons(table, policy)
        paths = [base]
        write_dataset(base, data)
        counts["comparisons"] = len(data.pairs)
    write_manifest(base, "ingest", cfg, paths + [remap], {"counts": counts, "policy": asdict(policy)})


def cmd_bound(cfg):
    model = read_model(cfg["model"])
    rep = theory_bounds(model, cfg["delta"], cfg["n"], cfg["direction"], cfg["projections"], cfg["seed"])
    dump_json(cfg["out"], rep.to_dict())
    write_manifest(cfg["out"], "bound", cfg, [cfg["out"]])


COMMANDS = {"synth": cmd_synth, "learn": cmd_learn, "eval": cmd_eval,
            "predict": cmd_predict, "ingest": cmd_ingest, "bound": cmd_bound}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve(args.command, flags)
        COMMANDS[args.command](cfg)
    except (ValidationError, InsufficientClustersError, RecoveryError) as exc:
        cause = exc.__cause__
        if isinstance(cause, OSError):
            print(f"latentrank {args.command}: I/O error: {cause}", file=sys.stderr)
            return 2
        print(f"latentrank {args.command}: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"latentrank {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
