"""Command-line entry point: ``slotfilter <command> [options]``.

Every command writes line-delimited JSON records (to ``--out`` or stdout),
starting with a ``config`` record that echoes the resolved configuration and
seed. ``--pretty`` renders the same records as aligned text instead. Errors
print ``error[<category>]: <message>`` on stderr and exit with the category's
code (2 usage, 3 format, 4 numeric, 5 data, 6 statistics).
"""
import json
import logging
import sys
from contextlib import contextmanager

import click

from . import __version__
from ._backend import BACKEND
from .config import ABLATIONS, load_config
from .data import SynthConfig, generate_synthetic, load_store, save_store
from .errors import SlotFilterError, UsageError
from .export import export_attention
from .filtering import MASK_MODES
from .model import ModelParams
from .stats import aggregate_seeds, mcnemar, mcnemar_from_counts
from .training import GRADCHECK_CFG, evaluate, grad_check, train

log = logging.getLogger("slotfilter")


class Sink:
    def __init__(self, fh, pretty=False):
        self.fh = fh
        self.pretty = pretty

    def __call__(self, record):
        if self.pretty:
            line = "  ".join(f"{k}={_short(v)}" for k, v in record.items())
        else:
            line = json.dumps(record)
        self.fh.write(line + "\n")
        self.fh.flush()


def _short(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, str) and len(v) > 40:
        return v[:37] + "..."
    return v


@contextmanager
def _sink(out, pretty):
    if out is None or out == "-":
        yield Sink(sys.stdout, pretty)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            yield Sink(fh, pretty)


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def run_options(f):
    """Options shared by every command that trains or evaluates."""
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False)),
        click.option("--seed", type=int),
        click.option("--store", type=click.Path(exists=True, dir_okay=False)),
        click.option("--out", type=click.Path(dir_okay=False)),
        click.option("--n-way", type=int),
        click.option("--k-shot", type=int),
        click.option("--queries", type=int, help="query images per class"),
        click.option("--episodes", type=int, help="training episodes"),
        click.option("--eval-episodes", type=int),
        click.option("--slots", type=int),
        click.option("--iters", type=int),
        click.option("--mask-mode", type=click.Choice(MASK_MODES)),
        click.option("--lambda", "lam", type=float),
        click.option("--threshold", type=float),
        click.option("--ablation", type=click.Choice(ABLATIONS)),
        click.option("--pretty", is_flag=True, help="aligned text instead of JSON lines"),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _resolve(kw):
    return load_config(kw.get("config_path"), seed=kw.get("seed"), n_way=kw.get("n_way"),
                       k_shot=kw.get("k_shot"), q_per_class=kw.get("queries"),
                       episodes_train=kw.get("episodes"),
                       episodes_eval=kw.get("eval_episodes"), n_slots=kw.get("slots"),
                       n_iters=kw.get("iters"), mask_mode=kw.get("mask_mode"),
                       lam=kw.get("lam"), threshold=kw.get("threshold"),
                       ablation=kw.get("ablation"))


def _need_store(kw):
    if not kw.get("store"):
        raise UsageError("--store is required")
    return load_store(kw["store"])


def _config_record(cfg, **extra):
    rec = {"record": "config", "backend": BACKEND, "version": __version__}
    rec.update(cfg.to_dict())
    rec.update(extra)
    return rec


def _train_or_load(store, cfg, params_path, emit=None):
    if params_path:
        return ModelParams.load(params_path), None
    cb = None
    if emit is not None:
        def cb(step, loss):
            emit({"record": "step", "index": step, "loss": loss})
    return train(store, cfg, on_step=cb)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Slot-attention patch filtering for few-shot classification."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(message)s")


@main.command("synth-gen")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--classes", type=int, default=25, show_default=True)
@click.option("--images", type=int, default=30, show_default=True, help="images per class")
@click.option("--patches", type=int, default=16, show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--rho", type=float, default=0.3, show_default=True, help="relevant patch fraction")
@click.option("--signal-noise", type=float, default=0.1, show_default=True)
@click.option("--background-noise", type=float, default=None,
              help="defaults to twice the signal noise")
@click.option("--n-val", type=int, default=0, show_default=True)
@click.option("--n-test", type=int, default=5, show_default=True)
def synth_gen(out, seed, classes, images, patches, dim, rho, signal_noise, background_noise,
              n_val, n_test):
    """Write a synthetic feature store (and its .splits file)."""
    bg = 2.0 * signal_noise if background_noise is None else background_noise
    cfg = SynthConfig(n_classes=classes, images_per_class=images, n_patches=patches, dim=dim,
                      relevant_fraction=rho, signal_noise=signal_noise, background_noise=bg,
                      seed=seed, n_val=n_val, n_test=n_test)
    store = generate_synthetic(cfg)
    save_store(store, out)
    emit = Sink(sys.stdout)
    emit({"record": "config", **cfg.__dict__})
    emit({"record": "store", "path": out, "images": len(store), "classes": classes,
          "splits": {k: len(v) for k, v in store.splits.items()}})


@main.command("train")
@run_options
@click.option("--params-out", type=click.Path(dir_okay=False), help="where to save parameters")
def train_cmd(params_out, **kw):
    """Train on the store's train split; emits one loss record per step."""
    cfg = _resolve(kw)
    store = _need_store(kw)
    with _sink(kw["out"], kw["pretty"]) as emit:
        emit(_config_record(cfg, store=kw["store"]))
        params, losses = _train_or_load(store, cfg, None, emit)
        if params_out:
            params.save(params_out)
        first = losses[: min(100, len(losses))]
        last = losses[-min(100, len(losses)):]
        emit({"record": "summary", "steps": len(losses),
              "loss_first": sum(first) / max(len(first), 1),
              "loss_last": sum(last) / max(len(last), 1), "params": params_out})


@main.command("eval")
@run_options
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False),
              help="trained parameters; trains from scratch when omitted")
@click.option("--eval-seed", type=int)
def eval_cmd(params_path, eval_seed, **kw):
    """Evaluate on the test split: per-episode records, then accuracy, CI and bitmap."""
    cfg = _resolve(kw)
    if eval_seed is not None:
        cfg = cfg.with_(eval_seed=eval_seed)
    store = _need_store(kw)
    with _sink(kw["out"], kw["pretty"]) as emit:
        emit(_config_record(cfg, store=kw["store"], params=params_path))
        params, _ = _train_or_load(store, cfg, params_path)
        for rec in evaluate(store, params, cfg).records():
            emit(rec)


@main.command("sweep")
@run_options
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False),
              help="evaluate one trained model at every grid point instead of retraining")
@click.option("--slot-grid", default="3,5,10", show_default=True)
@click.option("--iter-grid", default="3,5,10", show_default=True)
def sweep(params_path, slot_grid, iter_grid, **kw):
    """Accuracy over a grid of slot counts and iteration counts."""
    base = _resolve(kw)
    store = _need_store(kw)
    slots, iters = _int_list(slot_grid), _int_list(iter_grid)
    with _sink(kw["out"], kw["pretty"]) as emit:
        emit(_config_record(base, store=kw["store"], slot_grid=slots, iter_grid=iters,
                            params=params_path))
        fixed = ModelParams.load(params_path) if params_path else None
        for n in slots:
            for t in iters:
                cfg = base.with_(n_slots=n, n_iters=t)
                params = fixed if fixed is not None else train(store, cfg)[0]
                rep = evaluate(store, params, cfg)
                emit({"record": "row", "slots": n, "iters": t, "accuracy": rep.accuracy,
                      "ci95": rep.ci95})


@main.command("compare-masks")
@run_options
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
def compare_masks(params_path, **kw):
    """Binary vs weighted masking on the same evaluation episodes."""
    base = _resolve(kw)
    store = _need_store(kw)
    with _sink(kw["out"], kw["pretty"]) as emit:
        emit(_config_record(base, store=kw["store"], params=params_path))
        fixed = ModelParams.load(params_path) if params_path else None
        reports = {}
        for mode in ("binary", "weighted"):
            cfg = base.with_(mask_mode=mode)
            params = fixed if fixed is not None else train(store, cfg)[0]
            reports[mode] = evaluate(store, params, cfg)
            emit({"record": "row", "mask_mode": mode, "accuracy": reports[mode].accuracy,
                  "ci95": reports[mode].ci95, "eval_seed": cfg.evaluation_seed})
        try:
            chi2, p = mcnemar(reports["binary"].correct, reports["weighted"].correct)
            emit({"record": "mcnemar", "chi2": chi2, "p_value": p})
        except SlotFilterError as exc:
            emit({"record": "mcnemar", "chi2": None, "p_value": None, "note": str(exc)})


def _bitmap(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line) if line.strip() else {}
            if rec.get("record") == "summary" and "correct" in rec:
                return [c == "1" for c in rec["correct"]], rec.get("seed")
    raise UsageError(f"{path} has no summary record with a correctness bitmap")


@main.command("mcnemar")
@click.option("--a", "path_a", type=click.Path(exists=True, dir_okay=False),
              help="eval output of model A")
@click.option("--b", "path_b", type=click.Path(exists=True, dir_okay=False),
              help="eval output of model B")
@click.option("--b-count", type=int, help="A right, B wrong (instead of files)")
@click.option("--c-count", type=int, help="A wrong, B right (instead of files)")
@click.option("--no-correction", is_flag=True)
@click.option("--pretty", is_flag=True)
def mcnemar_cmd(path_a, path_b, b_count, c_count, no_correction, pretty):
    """McNemar's test on paired per-query correctness."""
    emit = Sink(sys.stdout, pretty)
    corr = not no_correction
    if b_count is not None or c_count is not None:
        if b_count is None or c_count is None:
            raise UsageError("give both --b-count and --c-count")
        b, c = b_count, c_count
        src = {}
    else:
        if not (path_a and path_b):
            raise UsageError("give --a and --b eval outputs, or --b-count and --c-count")
        bits_a, seed_a = _bitmap(path_a)
        bits_b, seed_b = _bitmap(path_b)
        if seed_a != seed_b:
            raise UsageError(f"evaluations used different episode seeds ({seed_a} vs {seed_b})")
        b = sum(x and not y for x, y in zip(bits_a, bits_b))
        c = sum(y and not x for x, y in zip(bits_a, bits_b))
        if len(bits_a) != len(bits_b):
            raise UsageError("bitmaps differ in length")
        src = {"a": path_a, "b": path_b, "seed": seed_a, "queries": len(bits_a)}
    chi2, p = mcnemar_from_counts(b, c, correction=corr)
    emit({"record": "config", "correction": corr, **src})
    emit({"record": "mcnemar", "b": b, "c": c, "chi2": chi2, "p_value": p})


@main.command("seeds")
@run_options
@click.option("--seed-list", default="0,1,2", show_default=True)
@click.option("--acc", "accs", type=float, multiple=True,
              help="aggregate these accuracies instead of running")
def seeds(seed_list, accs, **kw):
    """Median, mean and std of test accuracy over several training seeds."""
    with _sink(kw["out"], kw["pretty"]) as emit:
        if accs:
            values = list(accs)
            emit({"record": "config", "accuracies": values})
        else:
            base = _resolve(kw)
            store = _need_store(kw)
            seeds_ = _int_list(seed_list)
            emit(_config_record(base, store=kw["store"], seeds=seeds_))
            values = []
            for s in seeds_:
                cfg = base.with_(seed=s)
                rep = evaluate(store, train(store, cfg)[0], cfg)
                values.append(rep.accuracy)
                emit({"record": "run", "seed": s, "accuracy": rep.accuracy, "ci95": rep.ci95})
        med, mean, std = aggregate_seeds(values)
        emit({"record": "summary", "runs": len(values), "median": med, "mean": mean, "std": std})


@main.command("export-attn")
@run_options
@click.option("--params", "params_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ids", required=True, help="comma-separated image ids (store order)")
def export_attn(params_path, ids, **kw):
    """Dump per-iteration slot attention and the final mask for chosen images."""
    cfg = _resolve(kw)
    if not kw["out"]:
        raise UsageError("--out is required")
    store = _need_store(kw)
    n = export_attention(store, ModelParams.load(params_path), cfg, _int_list(ids), kw["out"],
                         seed=cfg.seed)
    emit = Sink(sys.stdout, kw["pretty"])
    emit(_config_record(cfg, store=kw["store"], params=params_path))
    emit({"record": "export", "path": kw["out"], "records": n})


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--patches", type=int, default=6, show_default=True)
@click.option("--dim", type=int, default=8, show_default=True)
@click.option("--slot-noise", type=float, default=None)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--pretty", is_flag=True)
def gradcheck(seed, patches, dim, slot_noise, tol, pretty):
    """Finite-difference check of every parameter gradient on a tiny episode."""
    emit = Sink(sys.stdout, pretty)
    cfg = GRADCHECK_CFG if slot_noise is None else GRADCHECK_CFG.with_(slot_noise=slot_noise)
    emit(_config_record(cfg, patches=patches, dim=dim, gradcheck_seed=seed, tol=tol))
    res = grad_check(cfg, n_patches=patches, dim=dim, seed=seed)
    for name, err in res.errors.items():
        emit({"record": "group", "param": name, "rel_error": err})
    emit({"record": "summary", "max_rel_error": res.max_error, "seconds": res.seconds,
          "passed": res.passed(tol)})
    if not res.passed(tol):
        sys.exit(1)


def run():
    try:
        main.main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except SlotFilterError as exc:
        click.echo(f"error[{exc.category}]: {exc}", err=True)
        sys.exit(exc.exit_code)
    except OSError as exc:
        click.echo(f"error[io]: {exc}", err=True)
        sys.exit(7)


if __name__ == "__main__":
    run()
