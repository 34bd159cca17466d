"""Command-line interface: load data, assign roles, estimate, test, invert."""

import json
import sys

import click
import numpy as np
import pandas as pd

from ivinfer import __version__
from ivinfer.confsets import bounded_empty_predicates, invert_closed_form, invert_grid
from ivinfer.data import (
    CARD_COLSPEC,
    absorb_exogenous,
    assemble_dataset,
    build_card_dataset,
    read_fixed_width,
)
from ivinfer.diagnostics import j_test, rank_test
from ivinfer.exceptions import ConfigError, ConvergenceError, IVInferError, RankDeficiencyError
from ivinfer.inference import ar_test, clr_test, lm_test, lr_test, wald_test
from ivinfer.kclass import fit_kclass

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_TESTS = {
    "ar": ar_test,
    "lr": lr_test,
    "clr": clr_test,
    "lm": lm_test,
}


def _columns(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _load(input_path, data_format, y, x, w, c, d, z, intercept, absorb):
    if data_format == "card":
        table = read_fixed_width(input_path, CARD_COLSPEC)
        ds = build_card_dataset(
            table,
            x=_columns(x) or None,
            w=_columns(w) or None,
            d=_columns(d) or None,
        )
    else:
        table = pd.read_csv(input_path)
        if not y:
            raise ConfigError("--y is required for csv input.")
        ds = assemble_dataset(
            table,
            y=y,
            x=_columns(x),
            w=_columns(w),
            c=_columns(c),
            d=_columns(d),
            z=_columns(z),
            intercept=intercept,
        )
    if absorb:
        ds = absorb_exogenous(ds)
    return ds


def _echo_result(payload, as_json, text):
    if as_json:
        click.echo(json.dumps(payload, indent=2, default=_jsonify))
    else:
        click.echo(text)


def _jsonify(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _format_p(p):
    return f"{p:.4f}" if p >= 1e-4 else f"{p:.3g}"


def _run(fn):
    try:
        fn()
    except (ConfigError, click.UsageError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (RankDeficiencyError, ConvergenceError, IVInferError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


def _io_options(fn):
    options = [
        click.option("--input", "input_path", required=True, type=click.Path(exists=True)),
        click.option("--format", "data_format", type=click.Choice(["card", "csv"]), default="card"),
        click.option("--y", default=""),
        click.option("--x", default=""),
        click.option("--w", default=""),
        click.option("--c", default=""),
        click.option("--d", default=""),
        click.option("--z", default=""),
        click.option("--intercept/--no-intercept", default=True),
        click.option(
            "--absorb-c/--no-absorb-c",
            "absorb",
            default=True,
            help="Absorb exogenous nuisance covariates into the blocks before "
            "estimating; degrees of freedom then count only the intercept.",
        ),
        click.option("--json", "as_json", is_flag=True, default=False),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__)
def main():
    """Instrumental-variables estimation, weak-instrument-robust tests, and
    confidence sets."""


@main.command("fit")
@_io_options
@click.option("--estimator", default="tsls", help="ols | tsls | liml | fuller:A | kappa:K")
def cmd_fit(input_path, data_format, y, x, w, c, d, z, intercept, absorb, as_json, estimator):
    """Fit a k-class estimator and print named coefficients."""

    def run():
        ds = _load(input_path, data_format, y, x, w, c, d, z, intercept, absorb)
        fit = fit_kclass(ds, estimator)
        named = fit.named_coef()
        order = (["intercept"] if "intercept" in named else []) + [
            n for n in fit.names if n != "intercept"
        ]
        lines = [f"{name:<12} {named[name]:9.6f}" for name in order]
        lines.append(f"kappa        {fit.kappa:9.6f}")
        lines.append(f"sigma2_wald  {fit.sigma2_wald:9.6f}")
        lines.append(f"sigma2_resid {fit.sigma2_resid:9.6f}")
        payload = {
            "command": "fit",
            "config": {"input": input_path, "estimator": estimator, "absorb_c": absorb},
            "results": [
                {
                    "coefficients": {k: float(v) for k, v in named.items()},
                    "kappa": fit.kappa,
                    "sigma2_wald": fit.sigma2_wald,
                    "sigma2_resid": fit.sigma2_resid,
                }
            ],
            "versions": {"ivinfer": __version__},
        }
        _echo_result(payload, as_json, "\n".join(lines))

    _run(run)


@main.command("test")
@_io_options
@click.option("--name", "names", default="ar", help="Comma list: wald | ar | lr | clr | lm")
@click.option("--beta", default="0", help="Comma list of null values for [X, D].")
@click.option("--estimator", default="tsls", help="Estimator for the Wald test.")
def cmd_test(input_path, data_format, y, x, w, c, d, z, intercept, absorb, as_json,
             names, beta, estimator):
    """Run hypothesis tests at a null value of the coefficients of interest."""

    def run():
        ds = _load(input_path, data_format, y, x, w, c, d, z, intercept, absorb)
        try:
            beta_vec = np.array([float(v) for v in beta.split(",")])
        except ValueError:
            raise ConfigError(f"cannot parse --beta {beta!r}.") from None
        requested = _columns(names)
        rows, results = [], []
        for name in requested:
            if name.startswith("wald"):
                est = name.split(":", 1)[1] if ":" in name else estimator
                res = wald_test(ds, beta_vec, estimator=est)
            elif name in _TESTS:
                res = _TESTS[name](ds, beta_vec)
            else:
                raise ConfigError(f"unknown test {name!r}.")
            text = f"statistic={res.statistic:5.2f}, p-value={_format_p(res.p_value)}"
            rows.append(f"{name:<11}: {text}" if len(requested) > 1 else text)
            results.append(
                {"test": res.name, "statistic": res.statistic, "p_value": res.p_value,
                 "df": res.df, "beta": beta_vec, **res.details}
            )
        payload = {
            "command": "test",
            "config": {"input": input_path, "names": requested, "beta": beta_vec,
                       "absorb_c": absorb},
            "results": results,
            "versions": {"ivinfer": __version__},
        }
        _echo_result(payload, as_json, "\n".join(rows))

    _run(run)


@main.command("confset")
@_io_options
@click.option("--name", "names", default="ar", help="Comma list: wald | ar | lr | clr | lm")
@click.option("--alpha", default=0.05, type=float)
@click.option("--estimator", default="tsls", help="Estimator for the Wald set.")
@click.option("--grid-out", default=None, type=click.Path(),
              help="Write the (beta, p) evaluation grid of grid-inverted sets to a CSV.")
def cmd_confset(input_path, data_format, y, x, w, c, d, z, intercept, absorb, as_json,
                names, alpha, estimator, grid_out):
    """Invert tests into confidence sets for the coefficient of interest."""

    def run():
        ds = _load(input_path, data_format, y, x, w, c, d, z, intercept, absorb)
        requested = _columns(names)
        rows, results = [], []
        for name in requested:
            key = f"wald:{estimator}" if name == "wald" else name
            if key.split(":")[0] in ("wald", "ar", "lr"):
                cs = invert_closed_form(ds, key, alpha)
            else:
                cs = invert_grid(ds, key, alpha)
            rows.append(f"{name:<11}: {cs}" if len(requested) > 1 else str(cs))
            results.append(
                {"test": name, "level": cs.level, "kind": cs.kind,
                 "intervals": [list(iv) for iv in cs.intervals]}
            )
            if grid_out and key.split(":")[0] in ("clr", "lm"):
                _write_grid(ds, key, alpha, grid_out)
        payload = {
            "command": "confset",
            "config": {"input": input_path, "names": requested, "alpha": alpha,
                       "absorb_c": absorb},
            "results": results,
            "versions": {"ivinfer": __version__},
        }
        _echo_result(payload, as_json, "\n".join(rows))

    _run(run)


def _write_grid(ds, test, alpha, path):
    from ivinfer.confsets import _GramEvaluator

    evaluator = _GramEvaluator(ds)
    ar_set = invert_closed_form(ds, "ar", alpha)
    if ar_set.kind == "intervals" and ar_set.is_bounded():
        lo = min(a for a, _ in ar_set.intervals)
        hi = max(b for _, b in ar_set.intervals)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        lo, hi = mid - 5 * half, mid + 5 * half
    else:
        lo, hi = -10.0, 10.0
    grid = np.linspace(lo, hi, 201)
    ps = [evaluator.p_value(test, np.array([b]), ds=ds, warm=True) for b in grid]
    pd.DataFrame({"beta": grid, "p_value": ps}).to_csv(path, index=False)


@main.command("diagnose")
@_io_options
@click.option("--alpha", default=0.05, type=float)
def cmd_diagnose(input_path, data_format, y, x, w, c, d, z, intercept, absorb, as_json, alpha):
    """Overidentification and rank diagnostics plus confidence-set predicates."""

    def run():
        ds = _load(input_path, data_format, y, x, w, c, d, z, intercept, absorb)
        j_tsls = j_test(ds, "tsls")
        j_liml = j_test(ds, "liml")
        rank = rank_test(ds)
        pred = bounded_empty_predicates(ds, alpha)
        rows = [
            f"J (TSLS)      : statistic={j_tsls.statistic:6.3f}, p-value={_format_p(j_tsls.p_value)}",
            f"J (LIML)      : statistic={j_liml.statistic:6.3f}, p-value={_format_p(j_liml.p_value)}",
            f"rank          : statistic={rank.statistic:6.3f}, p-value={_format_p(rank.p_value)}",
            f"AR set (alpha={alpha:g}): nonempty={pred.ar_nonempty}, bounded={pred.ar_bounded}",
            f"LR set (alpha={alpha:g}): bounded={pred.lr_bounded}",
            f"alpha_max={pred.thresholds['alpha_max']:.6f}, alpha_min={pred.thresholds['alpha_min']:.6f}",
        ]
        payload = {
            "command": "diagnose",
            "config": {"input": input_path, "alpha": alpha, "absorb_c": absorb},
            "results": [
                {"test": "j-tsls", "statistic": j_tsls.statistic, "p_value": j_tsls.p_value},
                {"test": "j-liml", "statistic": j_liml.statistic, "p_value": j_liml.p_value},
                {"test": "rank", "statistic": rank.statistic, "p_value": rank.p_value},
                {"predicates": {"ar_nonempty": pred.ar_nonempty, "ar_bounded": pred.ar_bounded,
                                "lr_bounded": pred.lr_bounded, **pred.thresholds}},
            ],
            "versions": {"ivinfer": __version__},
        }
        _echo_result(payload, as_json, "\n".join(rows))

    _run(run)


if __name__ == "__main__":
    main()
