"""Numerical verification of the routing-update theory.

Implements the KL-trust-region surrogate objective over the simplex, its
closed-form mirror-descent minimizer, an independent brute-force argmin
(simplex grid enumeration plus local refinement), the entropy-sharpening
check, and the soft top-k threshold formula.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import DomainError
from .rng import RngState


@dataclass
class RoutingInstance:
    base: np.ndarray  # pi^t, strictly positive, sums to 1
    gains: np.ndarray  # u
    step: float  # eta > 0
    coeff: float  # lambda >= 0

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.base.shape != self.gains.shape or self.base.ndim != 1:
            raise ValueError("base and gains must be 1-D vectors of equal length")
        if self.base.shape[0] < 2:
            raise ValueError("need at least two experts")
        if np.any(self.base <= 0) or abs(self.base.sum() - 1.0) > 1e-9:
            raise ValueError("base must be strictly positive and sum to 1")
        if self.step <= 0:
            raise DomainError("step size must be positive")

    @property
    def m(self) -> int:
        return self.base.shape[0]


@dataclass
class SimplexGrid:
    m: int
    resolution: int


@lru_cache(maxsize=8)
def _grid_points(m: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates k/resolution."""
    combos = np.array(list(itertools.combinations(range(resolution + m - 1), m - 1)),
                      dtype=np.int64)
    if combos.size == 0:
        combos = combos.reshape(0, m - 1)
    bounds = np.concatenate(
        [np.full((combos.shape[0], 1), -1, dtype=np.int64), combos,
         np.full((combos.shape[0], 1), resolution + m - 1, dtype=np.int64)], axis=1)
    parts = np.diff(bounds, axis=1) - 1
    return parts / resolution


def surrogate_value(pi: np.ndarray, inst: RoutingInstance) -> float:
    """J(pi) = -<u, pi> - lambda * sum pi log pi + (1/eta) * KL(pi || base).

    Zero entries contribute 0 to both logarithmic terms (limit convention);
    mass placed where the base is zero makes the KL term +inf.
    """
    return float(_surrogate_batch(np.asarray(pi, dtype=np.float64)[None, :], inst)[0])


def _surrogate_batch(pis: np.ndarray, inst: RoutingInstance) -> np.ndarray:
    pos = pis > 0
    logpi = np.where(pos, np.log(np.where(pos, pis, 1.0)), 0.0)
    entropy_term = (pis * logpi).sum(axis=1)
    # the base is strictly positive by construction, so KL is always finite
    kl = (pis * (logpi - np.log(inst.base))).sum(axis=1)
    return -(pis @ inst.gains) - inst.coeff * entropy_term + kl / inst.step


def mirror_descent_update(inst: RoutingInstance) -> np.ndarray:
    """Closed-form minimizer: softmax((log base + eta*u) / (1 - eta*lambda))."""
    el = inst.step * inst.coeff
    if el >= 1.0:
        raise DomainError("closed form requires eta * lambda < 1")
    logits = (np.log(inst.base) + inst.step * inst.gains) / (1.0 - el)
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def brute_force_argmin(inst: RoutingInstance, grid: SimplexGrid) -> np.ndarray:
    """Grid enumeration followed by pairwise coordinate descent on the
    simplex with step halving; independent of the closed form."""
    points = _grid_points(grid.m, grid.resolution)
    values = _surrogate_batch(points, inst)
    pi = points[int(np.argmin(values))].copy()
    best = surrogate_value(pi, inst)
    step = 1.0 / grid.resolution
    pairs = [(i, j) for i in range(grid.m) for j in range(grid.m) if i != j]
    while step > 1e-10:
        improved = False
        for i, j in pairs:
            if pi[j] < step:
                continue
            cand = pi.copy()
            cand[i] += step
            cand[j] -= step
            val = surrogate_value(cand, inst)
            if val < best - 1e-15:
                pi, best = cand, val
                improved = True
        if not improved:
            step *= 0.5
    return pi


def tail_mass(pi: np.ndarray, gains: np.ndarray, k: int) -> float:
    """Probability mass outside the top-k gains (ties to the lower index)."""
    pi = np.asarray(pi, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    m = gains.shape[0]
    if not 1 <= k <= m:
        raise ValueError("k must lie in [1, m]")
    order = np.argsort(-gains, kind="stable")
    return float(pi[order[k:]].sum())


def gain_gap(gains: np.ndarray, k: int) -> float:
    """delta_k = u_(k) - u_(k+1) over the sorted gains."""
    s = np.sort(np.asarray(gains, dtype=np.float64))[::-1]
    if not 1 <= k < s.shape[0]:
        raise ValueError("gain gap defined for 1 <= k < m")
    return float(s[k - 1] - s[k])


def epsilon_topk_threshold(m: int, k: int, eps: float, eta: float,
                           delta_k: float) -> float:
    """theta = 1/eta + delta_k / log(k * eps / (m - k))."""
    if not 1 <= k < m:
        raise ValueError("need 1 <= k < m")
    ratio = k * eps / (m - k)
    if ratio >= 1.0:
        raise ValueError("need k * eps / (m - k) < 1")
    if delta_k <= 0:
        raise ValueError("delta_k must be positive")
    if eta <= 0:
        raise DomainError("eta must be positive")
    return 1.0 / eta + delta_k / np.log(ratio)


def _entropy(p: np.ndarray) -> float:
    pos = p > 0
    return float(-(p[pos] * np.log(p[pos])).sum())


@dataclass
class SharpeningReport:
    coeffs: list
    entropies: list
    argmaxes: list
    skipped: bool
    monotone: bool
    argmax_constant: bool

    @property
    def ok(self) -> bool:
        return self.skipped or (self.monotone and self.argmax_constant)


def verify_sharpening(base: np.ndarray, gains: np.ndarray, eta: float,
                      coeff_grid) -> SharpeningReport:
    """Entropy of the closed-form update must strictly decrease, with a
    constant argmax, as lambda grows (for non-constant score vectors)."""
    base = np.asarray(base, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    s = np.log(base) + eta * gains
    if np.ptp(s) < 1e-12:
        return SharpeningReport(list(coeff_grid), [], [], skipped=True,
                                monotone=True, argmax_constant=True)
    entropies, argmaxes = [], []
    for lam in coeff_grid:
        pi = mirror_descent_update(RoutingInstance(base, gains, eta, lam))
        entropies.append(_entropy(pi))
        argmaxes.append(int(pi.argmax()))
    monotone = all(b < a for a, b in zip(entropies, entropies[1:]))
    return SharpeningReport(list(coeff_grid), entropies, argmaxes,
                            skipped=False, monotone=monotone,
                            argmax_constant=len(set(argmaxes)) == 1)


def run_suite(instances: int = 100, seed: int = 0, resolution: int = 100,
              corollary_instances: int = 50, m: int = 4) -> dict:
    """Full oracle suite: closed form vs brute force, sharpening, and the
    soft top-k threshold sweep. Returns a JSON-serializable report."""
    rng = RngState(seed)
    grid = SimplexGrid(m, resolution)

    gaps = []
    for _ in range(instances):
        inst = random_instance(rng, m=m, coeff_frac_range=(1e-6, 0.9))
        closed = mirror_descent_update(inst)
        brute = brute_force_argmin(inst, grid)
        gaps.append(float(np.abs(closed - brute).sum()))
    closed_form = {
        "instances": instances,
        "max_l1_gap": max(gaps),
        "gaps": gaps,
        "passes": sum(g <= 1e-3 for g in gaps),
    }

    sharp_fail = 0
    sharp_skipped = 0
    for _ in range(instances):
        inst = random_instance(rng, m=m, coeff_frac_range=(0.0, 0.0))
        lam_grid = np.linspace(0.0, 0.9, 5) / inst.step
        rep = verify_sharpening(inst.base, inst.gains, inst.step, lam_grid)
        if rep.skipped:
            sharp_skipped += 1
        elif not rep.ok:
            sharp_fail += 1
    sharpening = {"instances": instances, "failures": sharp_fail,
                  "skipped": sharp_skipped}

    corollary_violations = 0
    corollary_checked = 0
    failing = []
    for i in range(corollary_instances):
        k = 1 + (i % 2)
        eps = 0.05 if i % 4 < 2 else 0.1
        eta = float(0.1 + 0.8 * rng.uniform(()))
        gains = np.sort(rng.normal(m, scale=3.0))[::-1]
        # lift the whole top-k group so that delta_k >= 1
        want = gains[k] + 1.0 + float(rng.uniform(()))
        if gains[k - 1] < want:
            gains[:k] += want - gains[k - 1]
        delta = gain_gap(gains, k)
        theta = epsilon_topk_threshold(m, k, eps, eta, delta)
        base = np.full(m, 1.0 / m)
        for lam in np.linspace(max(theta, 0.0), (1.0 - 1e-9) / eta, 20,
                               endpoint=False):
            pi = mirror_descent_update(RoutingInstance(base, gains, eta, lam))
            corollary_checked += 1
            if tail_mass(pi, gains, k) > eps:
                corollary_violations += 1
                failing.append({"k": k, "eps": eps, "eta": eta,
                                "lambda": float(lam), "gains": gains.tolist()})
    corollary = {"instances": corollary_instances, "checked": corollary_checked,
                 "violations": corollary_violations, "failures": failing}

    ok = (closed_form["passes"] == instances and sharp_fail == 0
          and corollary_violations == 0)
    return {"closed_form": closed_form, "sharpening": sharpening,
            "corollary": corollary, "ok": ok,
            "seed": seed, "grid_resolution": resolution}


def random_instance(rng: RngState, m: int = 4, eta_range=(0.1, 0.9),
                    coeff_frac_range=(0.0, 0.9), uniform_base: bool = False,
                    gain_scale: float = 2.0) -> RoutingInstance:
    """Random instance with eta*lambda < coeff_frac_range[1] < 1."""
    eta = float(eta_range[0] + (eta_range[1] - eta_range[0]) * rng.uniform(()))
    frac = float(coeff_frac_range[0]
                 + (coeff_frac_range[1] - coeff_frac_range[0]) * rng.uniform(()))
    lam = frac / eta
    if uniform_base:
        base = np.full(m, 1.0 / m)
    else:
        raw = rng.uniform(m) + 0.05
        base = raw / raw.sum()
    gains = rng.normal(m, scale=gain_scale)
    return RoutingInstance(base, gains, eta, lam)
