"""Experiment definitions: built-in channel banks and the INI config format.

A config file looks like::

    [experiment]
    name = table3-mu4
    seeds = 1-10
    output_dir = out

    [bandit]
    algorithm = UCB
    N = 10000
    numeric = 11

    [channels]
    builtin = mu4
    noise_n0 = 0.01

    [policy]
    channel = bandit
    modulation = adaptive
    mod_threshold = 0.8

Explicit banks use ``mu = ...`` and ``sigma2 = ...`` (comma separated) in
place of ``builtin``. ``K`` defaults to the number of channels.
"""

from __future__ import annotations

import configparser
import io
import re
from pathlib import Path

from .. import bandit as bd
from .. import link as lk
from ..channel import DEFAULT_N0, ChannelSpec
from ..errors import ConfigError, ParseError

# Variance used for the banks that are given by their means only.
MEANS_ONLY_SIGMA2 = 0.015

_MEANS_ONLY = {
    "mu5": (0.3, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55),
    "mu6": (0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65),
    "mu7": (0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75),
    "mu8": (0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6),
}

BUILTIN_DISTRIBUTIONS: dict[str, tuple[tuple[float, float], ...]] = {
    "mu1": ((0.5, 0.01), (0.8, 0.02), (0.61, 0.08), (0.45, 0.06), (0.9, 0.07)),
    "mu2": ((0.55, 0.04), (0.48, 0.14), (0.8, 0.2), (0.72, 0.3), (0.61, 0.2)),
    "mu3": ((0.4, 0.01), (0.45, 0.02), (0.35, 0.08), (0.33, 0.06), (0.37, 0.07), (0.46, 0.2), (0.38, 0.1)),
    "mu4": ((0.95, 0.03), (0.92, 0.08), (0.88, 0.1), (0.87, 0.15), (0.9, 0.1), (0.98, 0.01), (0.82, 0.1)),
    **{k: tuple((m, MEANS_ONLY_SIGMA2) for m in v) for k, v in _MEANS_ONLY.items()},
}

# Best arm of each bank (0-based), used by the acceptance checks.
OPTIMAL_ARM = {k: max(range(len(v)), key=lambda i, v=v: (v[i][0], -i)) for k, v in BUILTIN_DISTRIBUTIONS.items()}


def builtin_channels(name: str, noise_n0: float = DEFAULT_N0, sigma2: float | None = None) -> ChannelSpec:
    """Channel bank by id; ``sigma2`` overrides the variance of the means-only banks."""
    key = name.strip().lower()
    if key not in BUILTIN_DISTRIBUTIONS:
        raise ConfigError(f"unknown builtin distribution {name!r}; choose from {sorted(BUILTIN_DISTRIBUTIONS)}")
    pairs = BUILTIN_DISTRIBUTIONS[key]
    if sigma2 is not None and key in _MEANS_ONLY:
        pairs = tuple((m, sigma2) for m, _ in pairs)
    return ChannelSpec(tuple(m for m, _ in pairs), tuple(v for _, v in pairs), noise_n0)


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def parse_seed_list(text: str) -> tuple[int, ...]:
    """``"1-10"``, ``"1,2,5"`` or a mix such as ``"1-3,7"``."""
    seeds: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return tuple(seeds)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class _Source:
    """Raw text of a config file, used to point errors at a line."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, section: str, key: str | None = None) -> int | None:
        current = None
        for no, raw in enumerate(self.lines, 1):
            s = raw.strip()
            m = re.fullmatch(r"\[(.+)\]", s)
            if m:
                current = m.group(1).strip().lower()
                if key is None and current == section:
                    return no
                continue
            if key is not None and current == section:
                k = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                if k == key.lower():
                    return no
        return None


_SECTIONS = {
    "experiment": {"name", "seeds", "n_runs", "output_dir", "equalizer", "retransmissions", "identity_channel"},
    "bandit": {"algorithm", "k", "k_max", "n", "alpha", "alpha1", "alpha2", "numeric", "ucbt_classical"},
    "channels": {"builtin", "mu", "sigma2", "noise_n0"},
    "policy": {"channel", "modulation", "mod_threshold", "adaptive_scope"},
    "model": {"base_rate_qpsk", "base_rate_qam", "feedback_fraction", "ber_target", "max_transmissions"},
}


def loads_config(text: str) -> lk.ExperimentConfig:
    """Parse config text; every problem is reported as :class:`ParseError`."""
    src = _Source(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"malformed config: {exc}", getattr(exc, "lineno", None)) from exc

    for section in cp.sections():
        known = _SECTIONS.get(section.lower())
        if known is None:
            raise ParseError(f"unknown section [{section}]", src.line_of(section.lower()))
        for key in cp[section]:
            if key not in known:
                raise ParseError("unknown key", src.line_of(section.lower(), key), f"{section}.{key}")

    def get(section: str, key: str, conv, default=None, required: bool = False):
        if not cp.has_section(section) or key not in cp[section]:
            if required:
                raise ParseError("missing required value", src.line_of(section), f"{section}.{key}")
            return default
        raw = cp[section][key]
        try:
            return conv(raw)
        except (ValueError, ConfigError) as exc:
            raise ParseError(str(exc), src.line_of(section, key), f"{section}.{key}") from exc

    name = get("experiment", "name", str.strip, default="experiment")
    seeds = get("experiment", "seeds", parse_seed_list, required=True)
    n_runs = get("experiment", "n_runs", int, default=None)

    builtin = get("channels", "builtin", str.strip)
    n0 = get("channels", "noise_n0", float, default=DEFAULT_N0)
    try:
        if builtin:
            if cp.has_option("channels", "mu"):
                raise ParseError("give either builtin or mu/sigma2", src.line_of("channels", "mu"), "channels.mu")
            channels = builtin_channels(builtin, n0)
        else:
            mu = get("channels", "mu", _floats, required=True)
            sigma2 = get("channels", "sigma2", _floats, required=True)
            channels = ChannelSpec(mu, sigma2, n0)
    except ParseError:
        raise
    except ConfigError as exc:
        raise ParseError(str(exc), src.line_of("channels"), "channels") from exc

    try:
        bandit = bd.BanditConfig(
            K=get("bandit", "k", int, default=channels.K),
            K_max=get("bandit", "k_max", int, default=8),
            N=get("bandit", "n", int, default=10_000),
            algorithm=get("bandit", "algorithm", lambda s: bd.Algorithm.parse(s), default=bd.Algorithm.UCB),
            alpha=get("bandit", "alpha", float, default=2.0),
            alpha1=get("bandit", "alpha1", float, default=1.0),
            alpha2=get("bandit", "alpha2", float, default=1.0),
            numeric_mode=get("bandit", "numeric", bd.NumericMode.parse, default=bd.NumericMode()),
            ucbt_classical=get("bandit", "ucbt_classical", _bool, default=False),
        )
        policy = lk.LinkPolicy(
            channel=get("policy", "channel", str.strip, default="bandit"),
            modulation=get("policy", "modulation", str.strip, default="adaptive"),
            mod_threshold=get("policy", "mod_threshold", float, default=lk.DEFAULT_MOD_THRESHOLD),
            adaptive_scope=get("policy", "adaptive_scope", str.strip, default="slot"),
        )
        model = lk.ThroughputModel(
            base_rate_qpsk=get("model", "base_rate_qpsk", float, default=50.0),
            base_rate_qam=get("model", "base_rate_qam", float, default=100.0),
            feedback_fraction=get("model", "feedback_fraction", float, default=0.30),
            ber_target=get("model", "ber_target", float, default=0.01),
            max_transmissions=get("model", "max_transmissions", int, default=50),
        )
        return lk.ExperimentConfig(
            name=name,
            bandit=bandit,
            channels=channels,
            policy=policy,
            model=model,
            seeds=seeds,
            n_runs=n_runs,
            equalizer=get("experiment", "equalizer", str.strip, default=lk.DEFAULT_EQUALIZER),
            retransmissions=get("experiment", "retransmissions", _bool, default=True),
            identity_channel=get("experiment", "identity_channel", _bool, default=False),
            output_dir=get("experiment", "output_dir", str.strip, default="out"),
        )
    except ParseError:
        raise
    except (ConfigError, ValueError) as exc:
        raise ParseError(str(exc)) from exc


def load_config(path) -> lk.ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"config file not found: {p}")
    return loads_config(p.read_text(encoding="utf-8"))


def _fmt_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def dumps_config(cfg: lk.ExperimentConfig) -> str:
    """Serialise a config so that :func:`loads_config` returns an equal object."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["experiment"] = {
        "name": cfg.name,
        "seeds": ", ".join(str(s) for s in cfg.seeds),
        "n_runs": str(cfg.n_runs),
        "output_dir": cfg.output_dir,
        "equalizer": cfg.equalizer,
        "retransmissions": str(cfg.retransmissions).lower(),
        "identity_channel": str(cfg.identity_channel).lower(),
    }
    b = cfg.bandit
    cp["bandit"] = {
        "algorithm": b.algorithm.value,
        "K": str(b.K),
        "K_max": str(b.K_max),
        "N": str(b.N),
        "alpha": repr(b.alpha),
        "alpha1": repr(b.alpha1),
        "alpha2": repr(b.alpha2),
        "numeric": str(b.numeric_mode),
        "ucbt_classical": str(b.ucbt_classical).lower(),
    }
    cp["channels"] = {
        "mu": _fmt_floats(cfg.channels.mu),
        "sigma2": _fmt_floats(cfg.channels.sigma2),
        "noise_n0": repr(cfg.channels.noise_n0),
    }
    cp["policy"] = {
        "channel": cfg.policy.channel.value,
        "modulation": cfg.policy.modulation.value,
        "mod_threshold": repr(cfg.policy.mod_threshold),
        "adaptive_scope": cfg.policy.adaptive_scope,
    }
    m = cfg.model
    cp["model"] = {
        "base_rate_qpsk": repr(m.base_rate_qpsk),
        "base_rate_qam": repr(m.base_rate_qam),
        "feedback_fraction": repr(m.feedback_fraction),
        "ber_target": repr(m.ber_target),
        "max_transmissions": str(m.max_transmissions),
    }

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_config(cfg: lk.ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg), encoding="utf-8")
