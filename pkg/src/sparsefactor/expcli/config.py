"""Strict JSON experiment configuration.

Every section is a dataclass; unknown keys, wrong types and out-of-range
values raise ConfigError with the dotted path of the offending field.
"""
import json
import math
import os
import typing
from dataclasses import asdict, dataclass, field, fields

KINDS = ("rates-frobenius", "rates-operator", "testfns", "conclab", "geweke")
EPS_TAGS = {
    # sqrt(p^9 (log n)^3 / n): dense-loadings rate, too large to be informative at desk scale
    "frobenius": lambda n, p: math.sqrt(p**9 * math.log(n) ** 3 / n),
    # sqrt((log p)^5 / n): sparse-loadings operator-norm rate
    "operator": lambda n, p: math.sqrt(math.log(p) ** 5 / n),
}
REGIMES = ("ps", "pl1", "p0")
CONCLAB_TASKS = ("smallball", "suppdim", "l1", "quadform", "ftau", "de-smallball", "frob-prior-conc", "euler")


class ConfigError(ValueError):
    pass


def eps_n(tag, n, p):
    if tag not in EPS_TAGS:
        raise ConfigError(f"unknown eps_n formula tag {tag!r}; allowed: {sorted(EPS_TAGS)}")
    return EPS_TAGS[tag](n, p)


@dataclass(frozen=True)
class PriorConfig:
    alpha: float = 0.5
    a_tau: float | None = None
    b_tau: float | None = None
    kappa: float = 1.0
    slab: str = "laplace"
    df: float = 1.0
    sigma2_a: float = 1.0
    sigma2_b: float = 1.0
    sigma2_upper: float = 10.0


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 4000
    burnin: int = 1000
    thin: int = 1
    init: str = "pca"


@dataclass(frozen=True)
class TruthConfig:
    sigma2: float = 1.0
    a3_constant: float = 3.0
    max_retries: int = 20000


@dataclass(frozen=True)
class RatesConfig:
    """Cells are the product regimes x n x p with k fixed; s defaults to ceil(log p)."""

    regimes: list = field(default_factory=lambda: ["ps", "pl1"])
    n: list = field(default_factory=lambda: [100, 200, 400, 800])
    p: list = field(default_factory=lambda: [200])
    k: int = 3
    s: int | None = None
    replicates: int = 10
    eps_tag: str = "operator"
    m_grid: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    chain: ChainConfig = field(default_factory=ChainConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)


@dataclass(frozen=True)
class TestfnsConfig:
    """Both tests share one truth: sparse loadings with disjoint column supports and L'L = c I.

    The projection alternative adds a spike of size j * sqrt((log p)^3 / n_ref)
    inside the loadings' span; the Frobenius alternative raises the scalar
    part so that ||Sigma1 - Sigma0||_F = j * frob_eps.
    """

    p: int = 200
    k: int = 3
    s: int = 6
    c: float = 4.0
    sigma2: float = 0.3
    j: float = 8.0
    n_ref: int = 500
    n: list = field(default_factory=lambda: [200, 400, 500, 800])
    replicates: int = 1000
    frob_eps: float = 0.01
    tests: list = field(default_factory=lambda: ["frobenius", "projection"])


@dataclass(frozen=True)
class ConclabConfig:
    tasks: list = field(default_factory=lambda: list(CONCLAB_TASKS))
    smallball_p: int = 200
    smallball_theta0: list = field(default_factory=lambda: [1.0, 0.1, 0.1, 0.1, 0.1])
    smallball_eps: float = 0.5
    smallball_replicates: int = 20000
    tail_p: list = field(default_factory=lambda: [50, 100, 200, 400])
    tail_a: float = 8.0
    tail_eps: float = 0.5
    tail_replicates: int = 100000
    quadform_p: int = 20
    quadform_n: int = 50
    quadform_t: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 3.0])
    quadform_replicates: int = 200000
    ftau_p: list = field(default_factory=lambda: [100, 1000, 10000])
    de_psi_bounds: list = field(default_factory=lambda: [0.5, 2.0])
    de_s: int = 3
    de_delta: float = 1.0
    de_replicates: int = 200000
    frob_p: int = 4
    frob_k: int = 1
    frob_eps: float = 0.9
    frob_kappa2: float = 2.0
    frob_replicates: int = 1000000
    euler_points: int = 100


@dataclass(frozen=True)
class GewekeConfig:
    regimes: list = field(default_factory=lambda: list(REGIMES))
    p: int = 4
    k: int = 2
    n: int = 10
    iterations: int = 50000
    mutation: bool = True
    prior: PriorConfig = field(default_factory=PriorConfig)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 0
    out_dir: str = "results"
    rates: RatesConfig = field(default_factory=RatesConfig)
    testfns: TestfnsConfig = field(default_factory=TestfnsConfig)
    conclab: ConclabConfig = field(default_factory=ConclabConfig)
    geweke: GewekeConfig = field(default_factory=GewekeConfig)

    def snapshot(self):
        return asdict(self)


# ---------------------------------------------------------------- parsing


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _check_scalar(path, value, annotation):
    """Validate one scalar against a field annotation like int, float, str, bool or 'X | None'."""
    args = typing.get_args(annotation)
    if args and type(None) in args:
        if value is None:
            return None
        annotation = next(a for a in args if a is not type(None))
    if annotation is int and _is_int(value):
        return value
    if annotation is float and _is_num(value):
        return float(value)
    if annotation is str and isinstance(value, str):
        return value
    if annotation is bool and isinstance(value, bool):
        return value
    raise ConfigError(f"{path}: expected {getattr(annotation, '__name__', annotation)}, got {value!r}")


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key(s) {', '.join(where + u for u in unknown)}; allowed: {sorted(known)}")
    kwargs = {}
    for name, value in raw.items():
        sub = f"{path}.{name}" if path else name
        hint = hints[name]
        if hint is list:
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{sub}: expected a nonempty list")
            for i, v in enumerate(value):
                if not (_is_num(v) or isinstance(v, str)):
                    raise ConfigError(f"{sub}[{i}]: expected a number or string, got {v!r}")
            kwargs[name] = list(value)
        elif isinstance(hint, type) and hasattr(hint, "__dataclass_fields__"):
            kwargs[name] = _build(hint, value, sub)
        else:
            kwargs[name] = _check_scalar(sub, value, hint)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from None


def _positive_ints(path, values):
    for i, v in enumerate(values):
        if not (_is_int(v) and v > 0):
            raise ConfigError(f"{path}[{i}]: expected a positive integer, got {v!r}")


def _positive(path, v):
    if not (v is not None and v > 0):
        raise ConfigError(f"{path}: must be > 0, got {v!r}")


def _choices(path, values, allowed):
    for i, v in enumerate(values):
        if v not in allowed:
            raise ConfigError(f"{path}[{i}]: {v!r} not in {sorted(allowed)}")


def validate(cfg):
    if cfg.kind not in KINDS:
        raise ConfigError(f"kind: {cfg.kind!r} not in {list(KINDS)}")
    if not (0 <= cfg.seed < 2**64):
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    r = cfg.rates
    _choices("rates.regimes", r.regimes, REGIMES)
    _positive_ints("rates.n", r.n)
    _positive_ints("rates.p", r.p)
    for name in ("k", "replicates"):
        _positive(f"rates.{name}", getattr(r, name))
    if r.s is not None:
        _positive("rates.s", r.s)
    if r.eps_tag not in EPS_TAGS:
        raise ConfigError(f"rates.eps_tag: unknown formula tag {r.eps_tag!r}; allowed: {sorted(EPS_TAGS)}")
    for i, m in enumerate(r.m_grid):
        _positive(f"rates.m_grid[{i}]", m)
    c = r.chain
    if not (c.iterations > c.burnin >= 0 and c.thin >= 1 and (c.iterations - c.burnin) % c.thin == 0):
        raise ConfigError("rates.chain: need iterations > burnin >= 0 and thin dividing iterations - burnin")
    if c.init not in ("pca", "prior"):
        raise ConfigError(f"rates.chain.init: {c.init!r} not in ['pca', 'prior']")
    for sec in ("rates.prior", "geweke.prior"):
        pr = r.prior if sec == "rates.prior" else cfg.geweke.prior
        if pr.slab not in ("laplace", "student_t"):
            raise ConfigError(f"{sec}.slab: {pr.slab!r} not in ['laplace', 'student_t']")
        for name in ("alpha", "kappa", "df", "sigma2_a", "sigma2_b", "sigma2_upper"):
            _positive(f"{sec}.{name}", getattr(pr, name))
    t = cfg.testfns
    for name in ("p", "k", "s", "c", "sigma2", "j", "n_ref", "replicates", "frob_eps"):
        _positive(f"testfns.{name}", getattr(t, name))
    _positive_ints("testfns.n", t.n)
    _choices("testfns.tests", t.tests, ("frobenius", "projection"))
    if t.replicates < 100:
        raise ConfigError("testfns.replicates: must be >= 100")
    if t.s * t.k > t.p:
        raise ConfigError("testfns: need s * k <= p")
    cl = cfg.conclab
    _choices("conclab.tasks", cl.tasks, CONCLAB_TASKS)
    _positive_ints("conclab.tail_p", cl.tail_p)
    _positive_ints("conclab.ftau_p", cl.ftau_p)
    if not 0 < cl.smallball_eps < 1:
        raise ConfigError("conclab.smallball_eps: must lie in (0, 1)")
    if len(cl.de_psi_bounds) != 2 or not 0 < cl.de_psi_bounds[0] <= cl.de_psi_bounds[1]:
        raise ConfigError("conclab.de_psi_bounds: need [a, b] with 0 < a <= b")
    g = cfg.geweke
    _choices("geweke.regimes", g.regimes, REGIMES)
    for name in ("p", "k", "n", "iterations"):
        _positive(f"geweke.{name}", getattr(g, name))
    return cfg


def parse_config_text(text, source="<string>"):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError(f"{source}: top level must be an object with a 'kind' field")
    return validate(_build(ExperimentConfig, raw, ""))


def parse_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path)
