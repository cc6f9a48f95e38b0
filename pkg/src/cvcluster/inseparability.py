"""van Loock-Furusawa inseparability witnesses for the 8-mode unit cell.

Cell modes are numbered 1..8 as (A,k), (B,k), (A,k+1), (B,k+1), (A,k+N),
(B,k+N), (A,k+N+1), (B,k+N+1).  A bipartition ID is read LSB-first: bit
``j`` set puts mode ``j + 1`` in ``S1``.  Mode 8 is therefore always in
``S2`` and IDs 1..127 list every unordered split exactly once.

Witnesses are integer combinations of nullifiers placed at symbolic offsets
``(a, b)``, meaning the nullifier with base index ``k + a N + b``.  For a
witness with ``X = sum c_i n^x_i`` and ``P = sum d_j n^p_j`` the
criterion reads

    <dX^2> + <dP^2> >= |sum_{S1} h g| + |sum_{S2} h g| = f

and, since nullifiers at different offsets are uncorrelated, the left side
is ``sum c_i^2 v_x + sum d_j^2 v_p``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .circuit import CircuitParams
from .exceptions import DataShapeError, InvalidParameter, WitnessIntegrityError
from .nullifiers import CELL_OFFSETS, SIGNS, analytic_variance, make_nullifier, nullifier_samples

N_CELL = 8
N_BIPARTITIONS = 2 ** (N_CELL - 1) - 1
VIOLATION_SLACK = 1e-9
WITNESS_VERSION = 1
WITNESS_FILE = "witnesses_v1.json"

# symbolic cell coordinates (channel, a, b) -> mode number 1..8
CELL_MODES = {(ch, a, b): j + 1 for j, (ch, a, b) in enumerate(CELL_OFFSETS)}
NULLIFIER_OFFSETS = tuple(itertools.product((-1, 0, 1), repeat=2))
COEFFICIENTS = (-2, -1, 1, 2)
MAX_NULLIFIERS = 6

# worked example witnesses, pinned as regression anchors
PINNED = {
    51: {"x": [(1, 0, 0)], "p": [(1, 0, 0)]},
    15: {"x": [(1, 0, 0)], "p": [(1, 0, 1)]},
    20: {"x": [(-1, 0, 0), (1, 1, 0)], "p": [(1, 0, -1), (1, 1, 0), (1, 1, 1), (1, 1, -1)]},
}


@dataclass(frozen=True)
class Bipartition:
    id: int
    s1: frozenset
    s2: frozenset

    @classmethod
    def from_id(cls, bid: int) -> "Bipartition":
        if not 1 <= bid <= N_BIPARTITIONS:
            raise InvalidParameter(f"bipartition id must be in 1..{N_BIPARTITIONS}, got {bid}")
        s1 = frozenset(j + 1 for j in range(N_CELL) if bid >> j & 1)
        return cls(bid, s1, frozenset(range(1, N_CELL + 1)) - s1)

    @property
    def mask(self) -> np.ndarray:
        """0/1 indicator of ``S1`` over modes 1..8."""
        return np.array([1.0 if j in self.s1 else 0.0 for j in range(1, N_CELL + 1)])


def enumerate_bipartitions() -> list:
    return [Bipartition.from_id(i) for i in range(1, N_BIPARTITIONS + 1)]


def _mode_coefficients(kind: str, combo) -> dict:
    """Net coefficient on every symbolic mode ``(channel, a, b)``."""
    out = {}
    for coeff, a, b in combo:
        for (ch, da, db), sign in zip(CELL_OFFSETS, SIGNS[kind]):
            key = (ch, a + da, b + db)
            out[key] = out.get(key, 0) + coeff * sign
    return {key: v for key, v in out.items() if v != 0}


@dataclass(frozen=True)
class VlfWitness:
    """``X`` and ``P`` as ``((coefficient, a, b), ...)`` nullifier combinations."""

    x_combo: tuple
    p_combo: tuple

    def __post_init__(self):
        object.__setattr__(self, "x_combo", tuple(tuple(int(v) for v in t) for t in self.x_combo))
        object.__setattr__(self, "p_combo", tuple(tuple(int(v) for v in t) for t in self.p_combo))

    def _cell_vector(self, kind):
        coeffs = _mode_coefficients(kind, self.x_combo if kind == "x" else self.p_combo)
        vec = np.zeros(N_CELL)
        for key, j in CELL_MODES.items():
            vec[j - 1] = coeffs.get(key, 0)
        return vec

    @property
    def h(self) -> np.ndarray:
        return self._cell_vector("x")

    @property
    def g(self) -> np.ndarray:
        return self._cell_vector("p")

    def extra_modes(self, kind: str) -> set:
        coeffs = _mode_coefficients(kind, self.x_combo if kind == "x" else self.p_combo)
        return {key for key in coeffs if key not in CELL_MODES}

    @property
    def weight_x(self) -> int:
        return sum(c * c for c, _, _ in self.x_combo)

    @property
    def weight_p(self) -> int:
        return sum(c * c for c, _, _ in self.p_combo)

    @property
    def weight(self) -> int:
        return self.weight_x + self.weight_p

    def required_variance(self, bp: Bipartition) -> float:
        """Common per-nullifier variance below which the criterion is violated."""
        return vlf_rhs(bp, self) / self.weight

    def required_db(self, bp: Bipartition) -> float:
        return 10.0 * math.log10(self.required_variance(bp) / 4.0)

    def nullifiers(self, kind: str, k: int, n: int) -> list:
        combo = self.x_combo if kind == "x" else self.p_combo
        return [(c, make_nullifier(kind, k + a * n + b, n)) for c, a, b in combo]

    def validate(self) -> None:
        for combo in (self.x_combo, self.p_combo):
            if not combo:
                raise WitnessIntegrityError("X and P must each hold at least one nullifier")
            offsets = [(a, b) for _, a, b in combo]
            if len(set(offsets)) != len(offsets):
                raise WitnessIntegrityError("repeated nullifier offset in a combination")
            if any(c == 0 for c, _, _ in combo):
                raise WitnessIntegrityError("zero coefficient in a combination")
        shared = self.extra_modes("x") & self.extra_modes("p")
        if shared:
            raise WitnessIntegrityError(f"X and P share extra modes {sorted(shared)}")

    def to_dict(self) -> dict:
        return {"x": [list(t) for t in self.x_combo], "p": [list(t) for t in self.p_combo]}


def vlf_rhs(bp: Bipartition, witness: VlfWitness) -> float:
    hg = witness.h * witness.g
    s1 = float(hg @ bp.mask)
    return abs(s1) + abs(float(hg.sum()) - s1)


def _combo_variance(kind, combo, source, k, n):
    """Variance of ``sum c_i n_i`` for an analytic or dataset source."""
    if isinstance(source, dict):
        if kind not in source:
            raise DataShapeError(f"source holds no {kind}-basis dataset")
        data = source[kind]
        samples = sum(c * nullifier_samples(make_nullifier(kind, k + a * n + b, n), data) for c, a, b in combo)
        return float(np.var(samples, ddof=1)) * (0.5 / data.calibration)
    if isinstance(source, CircuitParams):
        v = analytic_variance(make_nullifier(kind, 0, n), source).variance
    else:
        v = source[0] if kind == "x" else source[1]
    return float(sum(c * c for c, _, _ in combo)) * v


def vlf_lhs(witness: VlfWitness, source, k: int | None = None, n: int | None = None) -> float:
    """``<dX^2> + <dP^2>`` for ``witness``.

    ``source`` is one of:

    * ``(v_x, v_p)``: per-nullifier variances (analytic, cross terms zero);
    * a ``CircuitParams``: variances from ``analytic_variance``;
    * ``{"x": dataset, "p": dataset}``: direct sample variance of the
      assembled ``X`` and ``P`` at base index ``k`` with circumference ``n``.
    """
    if isinstance(source, dict):
        if n is None:
            n = source["x"].params.n_circumference
        if k is None:
            k = n + 1
    elif isinstance(source, CircuitParams):
        n = source.n_circumference
        k = n + 1
    else:
        source = (float(source[0]), float(source[1]))
    return (_combo_variance("x", witness.x_combo, source, k, n)
            + _combo_variance("p", witness.p_combo, source, k, n))


@dataclass(frozen=True)
class AuditRow:
    id: int
    s1: tuple
    lhs: float
    rhs: float

    @property
    def violated(self) -> bool:
        return self.lhs < self.rhs - VIOLATION_SLACK

    def to_dict(self) -> dict:
        return {"id": self.id, "s1": list(self.s1), "lhs": self.lhs, "rhs": self.rhs, "violated": self.violated}


@dataclass(frozen=True)
class AuditReport:
    rows: tuple

    @property
    def n_violated(self) -> int:
        return sum(row.violated for row in self.rows)

    @property
    def completely_inseparable(self) -> bool:
        return self.n_violated == len(self.rows) == N_BIPARTITIONS

    def to_json(self) -> str:
        return json.dumps({"violated": self.n_violated, "total": len(self.rows),
                           "completely_inseparable": self.completely_inseparable,
                           "rows": [row.to_dict() for row in self.rows]}, indent=1)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "s1", "lhs", "rhs", "violated"])
            for row in self.rows:
                writer.writerow([row.id, " ".join(map(str, row.s1)), repr(row.lhs), repr(row.rhs),
                                 int(row.violated)])


def load_witnesses(path=None) -> dict:
    """Witness table ``{id: VlfWitness}``, validated on load."""
    if path is None:
        text = resources.files("cvcluster").joinpath("data", WITNESS_FILE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    if doc.get("version") != WITNESS_VERSION:
        raise WitnessIntegrityError(f"unsupported witness table version {doc.get('version')}")
    table = {int(e["id"]): VlfWitness(e["x"], e["p"]) for e in doc["witnesses"]}
    check_witness_table(table)
    return table


def check_witness_table(table: dict) -> None:
    if sorted(table) != list(range(1, N_BIPARTITIONS + 1)):
        raise WitnessIntegrityError("witness table must cover ids 1..127 exactly once")
    for bid, witness in table.items():
        witness.validate()
        f = vlf_rhs(Bipartition.from_id(bid), witness)
        if not f > 0:
            raise WitnessIntegrityError(f"witness for id {bid} has f = 0")
        if f < 2 * witness.weight:
            raise WitnessIntegrityError(f"witness for id {bid} cannot be violated at 3 dB")


def full_audit(source, table: dict | None = None, k: int | None = None, n: int | None = None) -> AuditReport:
    table = load_witnesses() if table is None else table
    check_witness_table(table)
    rows = []
    for bp in enumerate_bipartitions():
        w = table[bp.id]
        rows.append(AuditRow(bp.id, tuple(sorted(bp.s1)), vlf_lhs(w, source, k, n), vlf_rhs(bp, w)))
    return AuditReport(tuple(rows))


def _candidate_combos(kind: str, max_terms: int):
    """All sign-canonical combinations with up to ``max_terms`` nullifiers."""
    extra_index = {}
    combos, vecs, masks, weights = [], [], [], []
    for m in range(1, max_terms + 1):
        for offsets in itertools.combinations(NULLIFIER_OFFSETS, m):
            for coeffs in itertools.product(COEFFICIENTS, repeat=m):
                if coeffs[0] < 0:
                    continue
                combo = tuple((c, a, b) for c, (a, b) in zip(coeffs, offsets))
                modes = _mode_coefficients(kind, combo)
                vec = [modes.get(key, 0) for key in CELL_MODES]
                if not any(vec):
                    continue
                mask = 0
                for key in modes:
                    if key not in CELL_MODES:
                        mask |= 1 << extra_index.setdefault(key, len(extra_index))
                combos.append(combo)
                vecs.append(vec)
                masks.append(mask)
                weights.append(sum(c * c for c in coeffs))
    return combos, np.array(vecs, float), masks, np.array(weights), extra_index


def _blocks(xi, step_x, pi, step_p):
    for i in range(0, xi.size, step_x):
        for j in range(0, pi.size, step_p):
            yield xi[i:i + step_x], pi[j:j + step_p]


def search_witnesses(max_nullifiers: int = MAX_NULLIFIERS, pinned: dict | None = None) -> dict:
    """Bounded search for a 3 dB-feasible witness for every bipartition.

    Combinations are scanned in order of increasing total weight
    ``W = sum c^2``; for each open bipartition the first weight level with
    a witness satisfying ``f >= 2 W`` and disjoint extra modes is used, and
    within that level the largest ``f`` wins (earliest in scan order on
    ties).  Entries in ``pinned`` are kept as given.
    """
    pinned = PINNED if pinned is None else pinned
    table = {bid: VlfWitness(w["x"], w["p"]) for bid, w in pinned.items()}
    open_ids = [bid for bid in range(1, N_BIPARTITIONS + 1) if bid not in table]
    x_combos, hx, x_masks, wx, x_index = _candidate_combos("x", max_nullifiers - 1)
    p_combos, gp, p_masks, wp, p_index = _candidate_combos("p", max_nullifiers - 1)
    # extra-mode bit positions must agree between the two tables
    p_remap = {p_index[key]: x_index.setdefault(key, len(x_index)) for key in p_index}
    p_masks = [sum(1 << p_remap[i] for i in range(len(p_index)) if m >> i & 1) for m in p_masks]
    x_masks = np.array(x_masks, dtype=np.uint64)
    p_masks = np.array(p_masks, dtype=np.uint64)
    x_len = np.array([len(c) for c in x_combos])
    p_len = np.array([len(c) for c in p_combos])
    bmask = np.array([Bipartition.from_id(i).mask for i in open_ids])

    for total in range(2, 4 * max_nullifiers + 1):
        if not open_ids:
            break
        best = {}
        for w1 in range(1, total):
            xi = np.flatnonzero(wx == w1)
            pi = np.flatnonzero(wp == total - w1)
            if xi.size == 0 or pi.size == 0:
                continue
            step_p = min(pi.size, 4096)
            step_x = max(1, 16384 // step_p)
            for xs, ps in _blocks(xi, step_x, pi, step_p):
                ok = (x_masks[xs][:, None] & p_masks[ps][None, :]) == 0
                ok &= (x_len[xs][:, None] + p_len[ps][None, :]) <= max_nullifiers
                if not ok.any():
                    continue
                hg = hx[xs][:, None, :] * gp[ps][None, :, :]
                s1 = hg @ bmask.T
                f = np.abs(s1) + np.abs(hg.sum(axis=2)[..., None] - s1)
                f[~ok] = -1.0
                flat = f.reshape(-1, len(open_ids))
                arg = np.argmax(flat, axis=0)
                for col, bid in enumerate(open_ids):
                    value = flat[arg[col], col]
                    if value < 2 * total:
                        continue
                    if bid not in best or value > best[bid][0]:
                        i, j = divmod(int(arg[col]), ps.size)
                        best[bid] = (value, x_combos[xs[i]], p_combos[ps[j]])
        for bid, (_, xc, pc) in best.items():
            table[bid] = VlfWitness(xc, pc)
        keep = [c for c, bid in enumerate(open_ids) if bid not in best]
        open_ids = [open_ids[c] for c in keep]
        bmask = bmask[keep]
    if open_ids:
        raise WitnessIntegrityError(f"no witness found for ids {open_ids}")
    return dict(sorted(table.items()))


def witness_table_json(table: dict) -> str:
    entries = []
    for bid, w in sorted(table.items()):
        bp = Bipartition.from_id(bid)
        entry = {"id": bid, "s1": sorted(bp.s1)}
        entry.update(w.to_dict())
        entry["f"] = vlf_rhs(bp, w)
        entry["weight"] = w.weight
        entries.append(entry)
    search = {"offsets": [list(o) for o in NULLIFIER_OFFSETS], "coefficients": list(COEFFICIENTS),
              "max_nullifiers": MAX_NULLIFIERS, "pinned": sorted(PINNED)}
    lines = ",\n  ".join(json.dumps(e) for e in entries)
    return (f'{{"version": {WITNESS_VERSION},\n "search": {json.dumps(search)},\n'
            f' "witnesses": [\n  {lines}\n ]\n}}\n')
