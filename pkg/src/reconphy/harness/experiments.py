"""The named experiments: channel selection per word-length, error rates, throughput,
and a reconfiguration walk-through.

Every command returns its table as plain Python data and, when ``out_dir``
is given, writes one CSV whose first row lists the knobs used.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import bandit as bd
from .. import link as lk
from ..channel import DEFAULT_N0, ChannelSpec
from .config import MEANS_ONLY_SIGMA2, OPTIMAL_ARM, builtin_channels

DEFAULT_SEEDS = tuple(range(1, 11))
DEFAULT_WL = ("float", 27, 11, 6)
PHY_DISTRIBUTIONS = ("mu3", "mu4", "mu5", "mu6", "mu7", "mu8")


@dataclass(frozen=True)
class Knobs:
    """Settings shared by the experiment commands."""

    seeds: tuple[int, ...] = DEFAULT_SEEDS
    N: int = 10_000
    alpha: float = 2.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    int_bits: int = bd.QF_INT_BITS
    mod_threshold: float = lk.DEFAULT_MOD_THRESHOLD
    noise_n0: float = DEFAULT_N0
    sigma2_means_only: float = MEANS_ONLY_SIGMA2
    equalizer: str = lk.DEFAULT_EQUALIZER
    phy_numeric: str = "11"
    identity_channel: bool = False

    def replace(self, **changes) -> "Knobs":
        return replace(self, **changes)

    def numeric(self, wl) -> bd.NumericMode:
        if str(wl).lower() in ("float", "float32", "float64", "double"):
            return bd.NumericMode.parse(str(wl))
        return bd.NumericMode.word_length(int(str(wl).lower().removeprefix("wl")), self.int_bits)

    def bandit(self, K: int, wl=None, algorithm=bd.Algorithm.UCB) -> bd.BanditConfig:
        return bd.BanditConfig(
            K=K,
            N=self.N,
            algorithm=algorithm,
            alpha=self.alpha,
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            numeric_mode=self.numeric(self.phy_numeric if wl is None else wl),
        )

    def channels(self, name: str) -> ChannelSpec:
        return builtin_channels(name, self.noise_n0, self.sigma2_means_only)

    def header(self) -> list[str]:
        d = asdict(self)
        d["seeds"] = " ".join(str(s) for s in self.seeds)
        d["wl_split"] = f"{self.int_bits} integer bits"
        return ["knobs"] + [f"{k}={v}" for k, v in d.items()]


def _write_csv(out_dir, filename: str, knobs: Knobs, header: Sequence[str], rows: Iterable[Sequence]) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    path = path / filename
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(knobs.header())
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def _wl_label(wl) -> str:
    s = str(wl).lower()
    return "float" if s.startswith("float") or s == "double" else f"WL{int(s.removeprefix('wl'))}"


# ---------------------------------------------------------------------------
# channel selection versus word-length
# ---------------------------------------------------------------------------

@dataclass
class SelectionTable:
    """Mean pull counts per arm for every (distribution, word-length)."""

    distributions: tuple[str, ...]
    wl_labels: tuple[str, ...]
    pulls: dict = field(default_factory=dict)  # (dist, wl_label) -> mean pulls (K,)
    share: dict = field(default_factory=dict)  # (dist, wl_label) -> mean pull share (K,)

    def best(self, dist: str, wl_label: str) -> int:
        return int(np.argmax(self.pulls[(dist, wl_label)]))


def channel_selection_table(
    distributions: Sequence[str],
    wl_list: Sequence = DEFAULT_WL,
    knobs: Knobs = Knobs(),
    algorithm=bd.Algorithm.UCB,
) -> SelectionTable:
    table = SelectionTable(tuple(distributions), tuple(_wl_label(w) for w in wl_list))
    for dist in distributions:
        spec = knobs.channels(dist)
        for wl in wl_list:
            res, _ = lk.run_channel_selection(knobs.bandit(spec.K, wl, algorithm), spec, knobs.seeds)
            table.pulls[(dist, _wl_label(wl))] = res.mean_pulls
            table.share[(dist, _wl_label(wl))] = res.pull_share
    return table


def _selection_csv(table: SelectionTable, out_dir, filename: str, knobs: Knobs):
    rows = []
    for dist in table.distributions:
        K = len(table.pulls[(dist, table.wl_labels[0])])
        for k in range(K):
            rows.append([dist, k + 1] + [f"{table.pulls[(dist, w)][k]:.1f}" for w in table.wl_labels])
    return _write_csv(out_dir, filename, knobs, ["distribution", "arm"] + list(table.wl_labels), rows)


def cmd_fig9(wl_list: Sequence = DEFAULT_WL, knobs: Knobs = Knobs(), out_dir=None) -> SelectionTable:
    """UCB channel selection on the five-arm banks mu1 and mu2 for each word-length."""
    table = channel_selection_table(("mu1", "mu2"), wl_list, knobs)
    _selection_csv(table, out_dir, "fig9.csv", knobs)
    return table


def cmd_fig10(wl_list: Sequence = DEFAULT_WL, knobs: Knobs = Knobs(), out_dir=None) -> SelectionTable:
    """UCB channel selection on the seven-arm banks mu3 and mu4 for each word-length."""
    table = channel_selection_table(("mu3", "mu4"), wl_list, knobs)
    _selection_csv(table, out_dir, "fig10.csv", knobs)
    return table


# ---------------------------------------------------------------------------
# link-level experiments
# ---------------------------------------------------------------------------

def link_configs(
    policies: Sequence[lk.LinkPolicy],
    distributions: Sequence[str] = PHY_DISTRIBUTIONS,
    knobs: Knobs = Knobs(),
    retransmissions: bool = False,
) -> list[lk.ExperimentConfig]:
    cfgs = []
    for dist in distributions:
        spec = knobs.channels(dist)
        for pol in policies:
            cfgs.append(
                lk.ExperimentConfig(
                    name=f"{dist}/{pol.name}",
                    bandit=knobs.bandit(spec.K),
                    channels=spec,
                    policy=pol,
                    seeds=knobs.seeds,
                    equalizer=knobs.equalizer,
                    retransmissions=retransmissions,
                    identity_channel=knobs.identity_channel,
                )
            )
    return cfgs


@dataclass
class PolicyTable:
    """A metric per (distribution, policy label), plus the experiment results."""

    distributions: tuple[str, ...]
    labels: tuple[str, ...]
    value: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)

    def mean(self, label: str) -> float:
        return float(np.mean([self.value[(d, label)] for d in self.distributions]))


def _policy_table(labels, policies, knobs, distributions, retransmissions, metric) -> PolicyTable:
    cfgs = link_configs(policies, distributions, knobs, retransmissions)
    results = lk.run_experiments(cfgs)
    table = PolicyTable(tuple(distributions), tuple(labels))
    it = iter(results)
    for dist in distributions:
        for label in labels:
            res = next(it)
            table.results[(dist, label)] = res
            table.value[(dist, label)] = metric(res)
    return table


def _error_csv(table: PolicyTable, out_dir, filename: str, knobs: Knobs):
    rows = [[d] + [f"{table.value[(d, l)]:.3f}" for l in table.labels] for d in table.distributions]
    rows.append(["average"] + [f"{table.mean(l):.3f}" for l in table.labels])
    return _write_csv(out_dir, filename, knobs, ["distribution"] + [f"{l}_error_pct" for l in table.labels], rows)


def cmd_fig11(knobs: Knobs = Knobs(), out_dir=None, distributions=PHY_DISTRIBUTIONS) -> PolicyTable:
    """Bit-error percentage for oracle, random and bandit channel selection (adaptive modulation)."""
    labels = ("Oracle", "Random", "Bandit")
    policies = [lk.LinkPolicy(c, "adaptive", knobs.mod_threshold) for c in ("oracle", "random", "bandit")]
    table = _policy_table(labels, policies, knobs, distributions, False, lambda r: r.error_pct)
    _error_csv(table, out_dir, "fig11.csv", knobs)
    return table


def cmd_fig12(knobs: Knobs = Knobs(), out_dir=None, distributions=PHY_DISTRIBUTIONS) -> PolicyTable:
    """Bit-error percentage for fixed 16-QAM, fixed QPSK and adaptive modulation (bandit channels)."""
    labels = ("FixedQAM", "FixedQPSK", "Adaptive")
    policies = [lk.LinkPolicy("bandit", m, knobs.mod_threshold) for m in ("qam16", "qpsk", "adaptive")]
    table = _policy_table(labels, policies, knobs, distributions, False, lambda r: r.error_pct)
    _error_csv(table, out_dir, "fig12.csv", knobs)
    return table


@dataclass
class ThroughputTable(PolicyTable):
    transmissions: dict = field(default_factory=dict)

    def mean_transmissions(self, label: str) -> float:
        return float(np.mean([self.transmissions[(d, label)] for d in self.distributions]))


def cmd_table3(knobs: Knobs = Knobs(), out_dir=None, distributions=PHY_DISTRIBUTIONS) -> ThroughputTable:
    """Throughput (Mbps) and average transmissions per slot for the three modulation policies."""
    labels = ("QPSK", "QAM", "Adaptive")
    policies = [lk.LinkPolicy("bandit", m, knobs.mod_threshold) for m in ("qpsk", "qam16", "adaptive")]
    base = _policy_table(labels, policies, knobs, distributions, True, lambda r: r.throughput)
    table = ThroughputTable(base.distributions, base.labels, base.value, base.results)
    for key, res in base.results.items():
        table.transmissions[key] = res.avg_transmissions
    rows = []
    for label in labels:
        cells = [f"{table.value[(d, label)]:.2f} ({table.transmissions[(d, label)]:.2f})" for d in distributions]
        cells.append(f"{table.mean(label):.2f} ({table.mean_transmissions(label):.2f})")
        rows.append([label] + cells)
    _write_csv(out_dir, "table3.csv", knobs, ["policy"] + list(distributions) + ["average"], rows)
    return table


# ---------------------------------------------------------------------------
# reconfiguration walk-through
# ---------------------------------------------------------------------------

# Two arms with equal means and very different spreads next to a slightly
# better low-variance arm: variance-aware quality factors explore differently.
DEMO_CHANNELS = ChannelSpec((0.5, 0.5, 0.55, 0.3, 0.2), (0.01, 0.3, 0.002, 0.2, 0.05))


@dataclass
class ReconfigDemo:
    transcript: list[str]
    total_reward: dict  # algorithm -> mean total reward over seeds
    pulls: dict  # algorithm -> mean pulls per arm


def cmd_reconfig_demo(knobs: Knobs = Knobs(), out_dir=None, n_slots: int | None = None) -> ReconfigDemo:
    """Switch algorithm and arm count on the fly, then compare the three algorithms."""
    n_slots = n_slots or knobs.N
    spec = DEMO_CHANNELS
    lines: list[str] = []
    seeds = knobs.seeds

    cfg = knobs.bandit(spec.K, "float", bd.Algorithm.UCB).replace(N=n_slots)
    half = n_slots // 2
    res1, state = lk.run_channel_selection(cfg, spec, seeds, n_slots=half)
    lines.append(f"[UCB] K={spec.K} slots 1..{half}: pulls {np.round(res1.mean_pulls, 1).tolist()}")
    before = state.T.copy()
    state = bd.reconfigure(state, bd.Algorithm.UCB_T)
    lines.append(
        f"switch UCB -> UCB_T at n={state.n}: counters preserved = {bool(np.array_equal(before, state.T))}"
    )
    res2, state = lk.run_channel_selection(state.cfg, spec, seeds, state=state, n_slots=n_slots - half)
    lines.append(f"[UCB_T] slots {half + 1}..{n_slots}: pulls {np.round(res2.mean_pulls, 1).tolist()}")

    small = ChannelSpec(spec.mu[:3], spec.sigma2[:3], spec.noise_n0)
    state = bd.reconfigure(state, K=3)
    lines.append(f"switch K {spec.K} -> 3: mode {state.mode.name}, n={state.n}, counters zero = {not state.T.any()}")
    res3, state = lk.run_channel_selection(state.cfg, small, seeds, state=state, n_slots=small.K)
    lines.append(f"first {small.K} slots after the switch pull each arm once: {res3.pulls.tolist()}")

    totals, pulls = {}, {}
    for alg in bd.Algorithm:
        c = knobs.bandit(spec.K, "float", alg).replace(N=n_slots)
        r, _ = lk.run_channel_selection(c, spec, seeds)
        totals[alg.value] = float(r.total_reward.mean())
        pulls[alg.value] = r.mean_pulls
        lines.append(f"[{alg.value}] total reward {totals[alg.value]:.1f}, pulls {np.round(r.mean_pulls, 1).tolist()}")

    rows = [[a, f"{totals[a]:.3f}"] + [f"{p:.1f}" for p in pulls[a]] for a in totals]
    _write_csv(out_dir, "reconfig_demo.csv", knobs, ["algorithm", "total_reward"] + [f"arm{k + 1}" for k in range(spec.K)], rows)
    if out_dir is not None:
        (Path(out_dir) / "reconfig_demo.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ReconfigDemo(lines, totals, pulls)


def optimal_arm(dist: str) -> int:
    return OPTIMAL_ARM[dist]
