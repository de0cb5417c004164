"""Non-Markovian quantum-jump unraveling of the segment generators.

The ensemble is stored as occupation counts over a registry of propagating
kets. Each segment contributes its L eigenstates; at a segment boundary the
old eigenstates become superposition entries of the new basis. Registry kets
are kept as coefficient vectors in the eigenbasis of the current segment, so
the non-Hermitian step is a diagonal exponential.

Per step, a member of entry a jumps to eigenstate k with probability
q_k ~ dt * sum_k' R_kk' |<e_k'|psi_a>|^2 (see :func:`jump_probabilities` for
the exact frozen-rate form). A negative q_k, which only occurs with negative
rates, is realized as a reverse jump: with probability |q_k| a member of
entry a fires a trigger that returns one member of eigenstate k to a. In
expectation this is the occupation-ratio rule (N_a / N_k) |q_k| per member
of k. When eigenstate k has no member to return, the ``policy`` of
:func:`run_ensemble` either creates a signed member pair or drops the trigger.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .constants import CM_TO_RAD_PER_FS
from .dynamics import DensityTrajectory, Problem
from .exciton import frame_transform, transform_kets

#: superposition entries this close to an eigenstate are treated as that eigenstate
SELF_JUMP_TOL = 1e-12
KIND_SUPERPOSITION = 0
KIND_EIGEN = 1


class StepSizeError(RuntimeError):
    """A jump probability exceeded one; dt must be reduced."""


class SignProblemError(RuntimeError):
    """Signed member pairs outgrew ``max_members``; see :func:`run_ensemble`."""


class CollapseError(RuntimeError):
    """A registry ket lost its norm under the non-Hermitian step."""


class TrajectoryStreams:
    """Counter-based uniforms u(seed, i, step) independent of scheduling.

    Member ``i`` owns the Philox stream with key ``seed * 2**64 + i``; block
    ``b`` of ``block`` steps starts at counter word 1 = b, so any step can be
    drawn without touching other members or earlier blocks.
    """

    def __init__(self, seed: int, block: int = 256):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be in [0, 2**64)")
        self.seed = int(seed)
        self.block = int(block)
        self._b = -1
        self._table = np.empty((0, self.block))

    def _rows(self, b, lo, hi):
        out = np.empty((hi - lo, self.block))
        base = self.seed << 64
        for j, i in enumerate(range(lo, hi)):
            bg = np.random.Philox(key=base + i, counter=[0, b, 0, 0])
            out[j] = np.random.Generator(bg).random(self.block)
        return out

    def prepare(self, step: int, n: int):
        """Make draws of members 0..n-1 for ``step`` available."""
        b = step // self.block
        if b != self._b:
            self._b = b
            self._table = self._rows(b, 0, n)
        elif n > self._table.shape[0]:
            self._table = np.vstack([self._table, self._rows(b, self._table.shape[0], n)])

    def uniforms(self, step: int, lo: int, hi: int) -> np.ndarray:
        """u for members lo..hi-1 at ``step``; call :meth:`prepare` first."""
        self.prepare(step, hi)
        return self._table[lo:hi, step % self.block]


@dataclass
class StateRegistry:
    """Registered kets (eigen coordinates of the current segment) and their labels."""

    kets: np.ndarray
    kinds: np.ndarray
    eigen_entries: np.ndarray
    vectors: np.ndarray
    carrier: float = 0.0
    history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.kets.shape[0]

    def site_kets(self) -> np.ndarray:
        """Kets over the site-basis levels in the current frame, shape (size, L)."""
        return self.kets @ self.vectors


def _new_registry(psi0_site, vectors, carrier):
    n = vectors.shape[0]
    c0 = np.conj(vectors) @ psi0_site
    kets = np.vstack([c0[None, :], np.eye(n, dtype=complex)])
    kinds = np.array([KIND_SUPERPOSITION] + [KIND_EIGEN] * n)
    return StateRegistry(kets, kinds, np.arange(1, n + 1), vectors, carrier, [kets.shape[0]])


def segment_boundary_expand(registry: StateRegistry, new_vectors, new_carrier, t):
    """Re-express all kets in the next segment and append its eigenstates.

    Old eigenstate entries turn into superposition entries and keep their
    counts; the new eigenstates start empty. Nothing is ever removed, since
    reverse jumps may repopulate any entry.
    """
    site = registry.site_kets()
    if registry.carrier != new_carrier:
        transform_kets(site, registry.carrier, t, "to_lab")
        transform_kets(site, new_carrier, t, "to_rotating")
    n = new_vectors.shape[0]
    kets = site @ np.conj(new_vectors).T
    registry.kets = np.vstack([kets, np.eye(n, dtype=complex)])
    registry.kinds = np.concatenate([np.full(site.shape[0], KIND_SUPERPOSITION), np.full(n, KIND_EIGEN)])
    registry.eigen_entries = np.arange(site.shape[0], site.shape[0] + n)
    registry.vectors = np.asarray(new_vectors)
    registry.carrier = float(new_carrier)
    registry.history.append(registry.size)
    return registry


def step_propagator(rates, dt) -> tuple:
    """Exact frozen-rate population propagator and no-jump survival factors.

    Returns:
        (P, s) with P = expm(W dt) for the population generator
        W = R_offdiag - diag(sum_j R_jk) and s_k = exp(-D_k dt), where D_k
        includes the dephasing rate Gamma_k.
    """
    w = np.array(rates, dtype=float)
    np.fill_diagonal(w, 0.0)
    w -= np.diag(w.sum(axis=0))
    decay = np.asarray(rates).sum(axis=0)
    return linalg.expm(w * dt), np.exp(-decay * dt)


def jump_probabilities(registry: StateRegistry, rates, dt):
    """Per-member forward and reverse-trigger probabilities of every entry.

    For a ket with eigenstate weights pi, the frozen-rate map over one step
    sends |psi><psi| to the normalized no-jump ket (weight sum pi * s) plus
    the diagonal remainder q = P pi - s * pi. Positive q_k is the probability
    of a jump to eigenstate k; negative q_k is realized by reverse jumps that
    pull members back from eigenstate k. To first order in dt,
    q_k = dt sum_k' R_kk' pi_k'. Jumps of an eigenstate onto itself are no-ops.

    Returns:
        (fwd, rev), each of shape (size, L), both non-negative.
    """
    prop, survive = step_propagator(rates, dt)
    pop = np.abs(registry.kets) ** 2
    q = pop @ prop.T - pop * survive[None, :]
    q[pop > 1.0 - SELF_JUMP_TOL] = 0.0
    return np.clip(q, 0.0, None), np.clip(-q, 0.0, None)


def transition_matrix(registry: StateRegistry, counts, rates, dt) -> np.ndarray:
    """Expected per-member transfer probabilities T[a, b] between entries.

    Reverse jumps are written in the occupation-ratio form: a member of
    eigenstate k returns to entry a with probability (N_a / N_k) rev[a, k].
    Used for diagnostics and tests; the sampler works with triggers.
    """
    size = registry.size
    fwd, rev = jump_probabilities(registry, rates, dt)
    eig = registry.eigen_entries
    trans = np.zeros((size, size))
    trans[:, eig] += fwd
    n_eig = np.asarray(counts, dtype=float)[eig]
    ratio = np.divide(
        np.asarray(counts, dtype=float)[:, None], n_eig[None, :], out=np.zeros(rev.shape), where=n_eig[None, :] > 0
    )
    trans[eig, :] += (ratio * rev).T
    trans[np.arange(size), np.arange(size)] = 0.0
    return trans


def _sample(assign, u, cum, occupied):
    """Outcome index per member: k < L forward, L <= k < 2L trigger, 2L none."""
    out = np.full(assign.size, cum.shape[1], dtype=np.int64)
    for a in occupied:
        members = np.flatnonzero(assign == a)
        if members.size:
            out[members] = np.searchsorted(cum[a], u[members], side="right")
    return out


def deterministic_step(registry: StateRegistry, energies, decay, dt):
    """Normalized exp(-i H dt) with H = diag(K e_k - i D_k / 2) in the eigenbasis."""
    factor = np.exp(-1j * CM_TO_RAD_PER_FS * energies * dt - 0.5 * decay * dt)
    kets = registry.kets * factor[None, :]
    norms = np.linalg.norm(kets, axis=1)
    if np.any(norms < 1e-12):
        raise CollapseError(f"registry ket norm underflow ({norms.min():.3g})")
    registry.kets = kets / norms[:, None]


def reconstruct_density_matrix(registry: StateRegistry, counts, t=None, frame="lab") -> np.ndarray:
    """rho = sum_a (N_a / N) |psi_a><psi_a| over the site-basis levels.

    With ``frame="lab"`` the result is rotated out of the segment frame at time ``t``.
    """
    counts = np.asarray(counts)
    total = counts.sum()
    live = np.flatnonzero(counts)
    site = registry.site_kets()[live]
    w = counts[live] / total
    rho = (site.T * w) @ site.conj()
    if frame == "lab" and registry.carrier != 0.0:
        rho = frame_transform(rho, registry.carrier, t, "to_lab")
    return rho


@dataclass(frozen=True)
class EnsembleResult(DensityTrajectory):
    """Jump-ensemble density matrices plus bookkeeping.

    ``counts`` holds the signed occupation of every registry entry at each
    output time (when recorded); ``num_members`` is the final number of
    ensemble members including any signed pairs.
    """

    counts: tuple = ()
    registry_sizes: tuple = ()
    num_trajectories: int = 0
    num_members: int = 0
    pairs_created: int = 0
    triggers_dropped: int = 0
    min_count: int = 0


def default_workers() -> int:
    env = os.environ.get("CMRTQJ_WORKERS")
    return max(1, int(env)) if env else 1


POLICIES = ("signed", "switch_off")


def _resolve_triggers(assign, sign, outcome, start_assign, eig, policy):
    """Apply reverse-jump triggers in member order; return new members and drop count.

    Each trigger by a member of entry a with sign s moves s units of
    occupation from eigenstate k back to a. A same-sign member of k that did
    not jump this step is moved when available (the standard reverse jump);
    otherwise ``policy`` decides: ``"signed"`` creates a (+s at a, -s at k)
    member pair, ``"switch_off"`` drops the trigger.
    """
    n_levels = eig.size
    triggers = np.flatnonzero((outcome >= n_levels) & (outcome < 2 * n_levels))
    new_assign, new_sign = [], []
    dropped = 0
    if triggers.size == 0:
        return new_assign, new_sign, dropped
    idle = outcome == 2 * n_levels
    pools = {}
    cursor = {}
    for i in triggers:
        k = int(outcome[i] - n_levels)
        s = int(sign[i])
        key = (k, s)
        if key not in pools:
            pools[key] = np.flatnonzero(idle & (start_assign == eig[k]) & (sign == s))
            cursor[key] = 0
        target = int(start_assign[i])
        if cursor[key] < pools[key].size:
            assign[pools[key][cursor[key]]] = target
            cursor[key] += 1
        elif policy == "signed":
            new_assign += [target, int(eig[k])]
            new_sign += [s, -s]
        else:
            dropped += 1
    return new_assign, new_sign, dropped


def _annihilate(assign, sign):
    """Keep-mask that cancels opposite-sign members sharing an entry.

    Per entry, min(n+, n-) members of each sign are removed, latest member
    index first, so counts are unchanged and the choice is deterministic.
    """
    keep = np.ones(assign.size, dtype=bool)
    size = int(assign.max()) + 1
    pos, neg = sign > 0, sign < 0
    cancel = np.minimum(np.bincount(assign[pos], minlength=size), np.bincount(assign[neg], minlength=size))
    if not cancel.any():
        return keep
    for mask in (pos, neg):
        idx = np.flatnonzero(mask & (cancel[assign] > 0))[::-1]
        order = idx[np.argsort(assign[idx], kind="stable")]
        grp = assign[order]
        first = np.searchsorted(grp, grp, side="left")
        rank = np.arange(order.size) - first
        keep[order[rank < cancel[grp]]] = False
    return keep


def run_ensemble(
    problem: Problem,
    num_trajectories: int,
    seed: int = 0,
    stride: int = 1,
    workers: int | None = None,
    record_counts: bool = False,
    policy: str = "signed",
    max_members: int | None = None,
) -> EnsembleResult:
    """Propagate ``num_trajectories`` members through every segment.

    The result depends only on (problem, N, seed): each member draws from its
    own random stream, worker threads only partition the members, and
    reverse-jump triggers are resolved in member order.

    Opposite-sign members that share an entry annihilate after every step.
    Schedules that re-diagonalize every step (discretized Gaussian pulses)
    leave no pool for reverse jumps, so under ``"signed"`` the member count can
    grow geometrically; past ``max_members`` (default 16 N) a
    :class:`SignProblemError` is raised. ``"switch_off"`` never adds members.
    """
    if num_trajectories < 1:
        raise ValueError("need at least one trajectory")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    workers = default_workers() if workers is None else max(1, int(workers))
    max_members = 16 * num_trajectories if max_members is None else int(max_members)
    streams = TrajectoryStreams(seed)

    first = problem.segments[0].generator
    registry = _new_registry(problem.initial_state, first.vectors, first.carrier)
    assign = np.zeros(num_trajectories, dtype=np.int64)
    sign = np.ones(num_trajectories, dtype=np.int64)
    times = problem.times
    keep = np.arange(0, times.size, stride)
    out = np.empty((keep.size, problem.num_levels, problem.num_levels), dtype=complex)
    history = []
    pairs = dropped = 0
    min_count = 0

    def occupation():
        return np.bincount(assign, weights=sign, minlength=registry.size).round().astype(np.int64)

    def record(i, counts):
        if i % stride == 0:
            out[i // stride] = reconstruct_density_matrix(registry, counts, times[i])
            if record_counts:
                history.append(counts.copy())

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        counts = occupation()
        record(0, counts)
        for s_idx, plan in enumerate(problem.segments):
            gen = plan.generator
            if s_idx > 0:
                segment_boundary_expand(registry, gen.vectors, gen.carrier, times[plan.start])
                counts = occupation()
            eig = registry.eigen_entries
            for j in range(gen.num_steps):
                step = plan.start + j
                dt = times[step + 1] - times[step]
                fwd, rev = jump_probabilities(registry, gen.rates[j], dt)
                probs = np.hstack([fwd, rev])
                occupied = np.flatnonzero(np.bincount(assign, minlength=registry.size))
                total = probs[occupied].sum(axis=1)
                if np.any(total > 1.0):
                    raise StepSizeError(
                        f"jump probability {total.max():.3g} > 1 at t={times[step]} fs; reduce dt"
                    )
                cum = np.cumsum(probs, axis=1)
                n = assign.size
                streams.prepare(step, n)
                if pool is None:
                    outcome = _sample(assign, streams.uniforms(step, 0, n), cum, occupied)
                else:
                    edges = np.linspace(0, n, workers + 1).astype(int)
                    parts = pool.map(
                        lambda lo_hi: _sample(assign[lo_hi[0] : lo_hi[1]], streams.uniforms(step, *lo_hi), cum, occupied),
                        list(zip(edges[:-1], edges[1:])),
                    )
                    outcome = np.concatenate(list(parts))

                start_assign = assign.copy()
                jumped = outcome < eig.size
                assign[jumped] = eig[outcome[jumped]]
                extra_a, extra_s, lost = _resolve_triggers(assign, sign, outcome, start_assign, eig, policy)
                dropped += lost
                if extra_a:
                    assign = np.concatenate([assign, np.array(extra_a, dtype=np.int64)])
                    sign = np.concatenate([sign, np.array(extra_s, dtype=np.int64)])
                    pairs += len(extra_a) // 2
                if pairs:
                    live = _annihilate(assign, sign)
                    if not live.all():
                        assign, sign = assign[live], sign[live]
                    if assign.size > max_members:
                        raise SignProblemError(
                            f"{assign.size} signed members at t={times[step + 1]} fs exceed max_members={max_members}; "
                            "reverse jumps find no target members in this schedule, use policy='switch_off'"
                        )

                deterministic_step(registry, gen.energies, gen.decay(j), dt)
                counts = occupation()
                min_count = min(min_count, int(counts.min()))
                record(step + 1, counts)
    finally:
        if pool is not None:
            pool.shutdown()

    return EnsembleResult(
        times=times[keep],
        rho=out,
        counts=tuple(history),
        registry_sizes=tuple(registry.history),
        num_trajectories=num_trajectories,
        num_members=int(assign.size),
        pairs_created=pairs,
        triggers_dropped=dropped,
        min_count=min_count,
    )
