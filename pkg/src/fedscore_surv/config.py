"""Run configuration: INI file, command-line overrides and defaults.

The file has up to three sections::

    [run]
    seed = 2024
    test_fraction = 0.4

    [generator]
    n = 700, 700, 400, 800, 1200, 1600
    shape = 1.2, 1.2, 0.8, 0.8, 0.8, 0.8
    scale = 200, 200, 350, 350, 350, 350
    censoring = 0.88, 0.88, 0.84, 0.84, 0.84, 0.84
    t_max = 30
    coef.age = 0.05

    [pipeline]
    weights = sample-size          ; or a comma list, normalised
    percentiles = 20, 40, 60, 80
    s_max = 100
    D = 10
    delta = 0.01
    cv_folds = 5
    n_bootstrap = 200
    n_trees = 500
    merge_epsilon = none

Precedence is flags, then file, then built-in defaults.  The per-site lists
in ``[generator]`` must all have one entry per site; when only ``n`` is
given for a different number of sites, the other lists repeat the first
default value.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .federation import GeneratorConfig
from .pipeline import PipelineConfig

_PIPELINE_KEYS = {f.name.lower(): f.name for f in fields(PipelineConfig) if f.name != "seed"}
_GENERATOR_LISTS = ("n", "shape", "scale", "censoring")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 2024
    test_fraction: float = 0.4
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        # one master seed drives everything
        object.__setattr__(self, "generator", replace(self.generator, seed=self.seed))
        object.__setattr__(self, "pipeline", replace(self.pipeline, seed=self.seed))

    def to_dict(self) -> dict:
        g = self.generator
        p = self.pipeline
        pipe = {f.name: getattr(p, f.name) for f in fields(PipelineConfig) if f.name != "seed"}
        pipe["weights"] = "sample-size" if p.weights is None else list(p.weights)
        pipe["percentiles"] = list(p.percentiles)
        return {
            "run": {"seed": self.seed, "test_fraction": self.test_fraction,
                    "split": "test:train = %g:%g" % (self.test_fraction, 1 - self.test_fraction)},
            "generator": {"n": list(g.n), "shape": list(g.shape), "scale": list(g.scale),
                          "censoring": list(g.censoring), "t_max": g.t_max,
                          "coef": {v.name: v.coef for v in g.variables}},
            "pipeline": pipe,
        }


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _none_or(conv):
    def f(s):
        return None if str(s).strip().lower() in ("", "none", "null") else conv(s)
    return f


def _bool(s) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _weights(s):
    v = str(s).strip().lower()
    if v in ("", "sample-size", "sample_size", "none"):
        return None
    return _floats(s)


_PIPELINE_CONV = {
    "percentiles": _floats, "s_max": int, "D": int, "delta": float, "cv_folds": int,
    "n_bootstrap": int, "level": float, "weights": _weights, "n_trees": int,
    "mtry": _none_or(int), "min_node_events": int, "min_node_size": int, "min_leaf_size": int,
    "max_cuts": int, "merge_epsilon": _none_or(float), "min_category_events": int,
    "collinearity_threshold": float, "iauc_weighting": str, "method": str,
}


def _read(path) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keys are case-sensitive (D)
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    unknown = set(cp.sections()) - {"run", "generator", "pipeline"}
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    return {s: dict(cp[s]) for s in cp.sections()}


def build_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, an optional INI file and ``{"section.key": value}`` overrides."""
    raw = _read(path)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        sec, _, k = key.partition(".")
        raw.setdefault(sec, {})[k] = value if isinstance(value, str) else _fmt(value)

    run = raw.get("run", {})
    unknown = set(run) - {"seed", "test_fraction"}
    if unknown:
        raise ValueError(f"unknown [run] key(s): {sorted(unknown)}")
    seed = int(run.get("seed", RunConfig.seed))
    test_fraction = float(run.get("test_fraction", RunConfig.test_fraction))

    pipe_kw = {}
    for k, v in raw.get("pipeline", {}).items():
        name = _PIPELINE_KEYS.get(k.lower())
        if name is None:
            raise ValueError(f"unknown [pipeline] key {k!r}")
        pipe_kw[name] = _PIPELINE_CONV[name](v)
    pipeline = PipelineConfig(**pipe_kw)

    generator = _generator(raw.get("generator", {}))
    return RunConfig(seed, test_fraction, generator, pipeline)


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in value)
    return repr(value) if isinstance(value, float) else str(value)


def _generator(sec: dict) -> GeneratorConfig:
    default = GeneratorConfig()
    kw = {}
    coefs = {}
    for k, v in sec.items():
        if k.startswith("coef."):
            coefs[k[len("coef."):]] = float(v)
        elif k in _GENERATOR_LISTS:
            vals = _floats(v)
            kw[k] = tuple(int(x) for x in vals) if k == "n" else vals
        elif k == "t_max":
            kw[k] = float(v)
        else:
            raise ValueError(f"unknown [generator] key {k!r}")
    K = len(kw.get("n", default.n))
    for k in ("shape", "scale", "censoring"):
        vals = kw.get(k, getattr(default, k))
        if len(vals) == 1:
            vals = vals * K
        elif len(vals) != K:
            if k in kw:
                raise ValueError(f"[generator] {k} has {len(vals)} values for {K} sites")
            vals = (vals[0],) * K
        kw[k] = tuple(vals)
    variables = []
    names = {v.name for v in default.variables}
    for k in coefs:
        if k not in names:
            raise ValueError(f"unknown generator variable {k!r}")
    for v in default.variables:
        mean = tuple(v.mean[j % len(v.mean)] for j in range(K))
        sd = tuple(v.sd[j % len(v.sd)] for j in range(K)) if v.sd else ()
        variables.append(replace(v, coef=coefs.get(v.name, v.coef), mean=mean, sd=sd))
    kw["variables"] = tuple(variables)
    return GeneratorConfig(**kw)
