"""Rate-R_c LDPC information reconciliation.

Parity-check matrices are built with the Progressive Edge Growth algorithm
from a configurable degree distribution (regular (3,6) by default), and
syndrome decoding runs a serial-scheduled belief-propagation decoder for a
binary symmetric channel with crossover ``q``. Sub-blocks of ``n_block``
bits are reconciled independently, up to ``workers`` at a time.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bits import BitString, SeededRng, xor

DEFAULT_MAX_ITERS = 100
DEFAULT_LLR_CLIP = 25.0
DEFAULT_WORKERS = 8


class ReconciliationError(Exception):
    """One or more sub-blocks failed to converge."""

    def __init__(self, failed_blocks):
        self.failed_blocks = list(failed_blocks)
        super().__init__(f"decoding failed for sub-blocks {self.failed_blocks}")


@dataclass(frozen=True)
class DegreeDistribution:
    """Edge-perspective degree profile of an LDPC ensemble.

    ``variable_degrees`` and ``check_degrees`` list (degree, fraction of
    edges) pairs; each fraction list must sum to 1.
    """

    variable_degrees: tuple[tuple[int, float], ...]
    check_degrees: tuple[tuple[int, float], ...]

    def __post_init__(self):
        for name, side in (("variable", self.variable_degrees),
                           ("check", self.check_degrees)):
            if not side:
                raise ValueError(f"empty {name} degree list")
            total = sum(f for _, f in side)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"{name} edge fractions sum to {total}, not 1")
            if any(d < 1 or f < 0 for d, f in side):
                raise ValueError(f"invalid entry in {name} degree list")

    @classmethod
    def regular(cls, var_degree: int = 3, check_degree: int = 6):
        return cls(((var_degree, 1.0),), ((check_degree, 1.0),))

    @property
    def implied_rate(self) -> float:
        sv = sum(f / d for d, f in self.variable_degrees)
        sc = sum(f / d for d, f in self.check_degrees)
        return 1.0 - sc / sv

    def _node_counts(self, side, n_nodes: int) -> list[int]:
        # Largest-remainder rounding of edge-perspective fractions into
        # node counts summing exactly to n_nodes.
        s = sum(f / d for d, f in side)
        raw = [n_nodes * (f / d) / s for d, f in side]
        counts = [int(math.floor(x)) for x in raw]
        remainders = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i],
                            reverse=True)
        for i in remainders[: n_nodes - sum(counts)]:
            counts[i] += 1
        return counts

    def variable_degree_list(self, n_cols: int) -> np.ndarray:
        """Per-variable degrees (ascending), summing to the edge total."""
        counts = self._node_counts(self.variable_degrees, n_cols)
        out = []
        for (d, _), c in zip(self.variable_degrees, counts):
            out.extend([d] * c)
        return np.sort(np.asarray(out, dtype=np.int64))

    def check_capacity_list(self, n_rows: int, n_edges: int) -> np.ndarray:
        """Per-check target degrees summing exactly to ``n_edges``.

        Remainder rule: after largest-remainder rounding of node counts,
        any residual edges are absorbed one at a time by the last checks
        (incremented if short, decremented if long, never below 1).
        """
        counts = self._node_counts(self.check_degrees, n_rows)
        caps = []
        for (d, _), c in zip(self.check_degrees, counts):
            caps.extend([d] * c)
        caps = np.asarray(sorted(caps), dtype=np.int64)
        diff = n_edges - int(caps.sum())
        i = n_rows - 1
        while diff != 0:
            if diff > 0:
                caps[i] += 1
                diff -= 1
            elif caps[i] > 1:
                caps[i] -= 1
                diff += 1
            i = (i - 1) % n_rows
        return caps

    def as_text(self) -> str:
        fmt = lambda side: ",".join(f"{d}:{f:g}" for d, f in side)
        return f"{fmt(self.variable_degrees)};{fmt(self.check_degrees)}"

    @classmethod
    def from_text(cls, text: str) -> "DegreeDistribution":
        var_part, chk_part = text.split(";")
        parse = lambda part: tuple(
            (int(e.split(":")[0]), float(e.split(":")[1]))
            for e in part.split(","))
        return cls(parse(var_part), parse(chk_part))


class SparseParityMatrix:
    """Parity-check matrix H in sparse row-adjacency (CSR) form."""

    def __init__(self, n_cols: int, rows, code_rate: float,
                 distribution: DegreeDistribution | None = None,
                 seed: int | None = None):
        self.n_cols = int(n_cols)
        self.rows = [np.sort(np.asarray(r, dtype=np.int64)) for r in rows]
        self.n_rows = len(self.rows)
        self.code_rate = float(code_rate)
        self.distribution = distribution
        self.seed = seed
        for r in self.rows:
            if r.size and (r[0] < 0 or r[-1] >= self.n_cols):
                raise ValueError("column index out of range")
            if np.unique(r).size != r.size:
                raise ValueError("duplicate column index within a row "
                                 "(parallel edge)")
        self.row_ptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        np.cumsum([r.size for r in self.rows], out=self.row_ptr[1:])
        self.col_idx = (np.concatenate(self.rows) if self.rows
                        else np.empty(0, dtype=np.int64))

    @property
    def n_edges(self) -> int:
        return int(self.col_idx.size)

    def column_weights(self) -> np.ndarray:
        return np.bincount(self.col_idx, minlength=self.n_cols)

    def row_weights(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    # ---- file format: text header then one line of sorted column ------
    # indices per row (alist-style).

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write("# qkdsim-ldpc v1\n")
        buf.write(f"n_cols={self.n_cols}\n")
        buf.write(f"n_rows={self.n_rows}\n")
        buf.write(f"code_rate={self.code_rate:g}\n")
        buf.write(f"seed={self.seed if self.seed is not None else ''}\n")
        dist = self.distribution.as_text() if self.distribution else ""
        buf.write(f"distribution={dist}\n")
        for r in self.rows:
            buf.write(" ".join(map(str, r.tolist())) + "\n")
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> "SparseParityMatrix":
        with open(path) as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, text: str) -> "SparseParityMatrix":
        lines = text.strip().splitlines()
        if not lines or not lines[0].startswith("# qkdsim-ldpc"):
            raise ValueError("not a qkdsim LDPC matrix file")
        header = {}
        body_at = 1
        for i, line in enumerate(lines[1:], start=1):
            if "=" not in line:
                body_at = i
                break
            key, _, val = line.partition("=")
            header[key] = val
            body_at = i + 1
        n_rows = int(header["n_rows"])
        rows = [np.array(line.split(), dtype=np.int64)
                if line.strip() else np.empty(0, dtype=np.int64)
                for line in lines[body_at:body_at + n_rows]]
        dist = (DegreeDistribution.from_text(header["distribution"])
                if header.get("distribution") else None)
        seed = int(header["seed"]) if header.get("seed") else None
        return cls(int(header["n_cols"]), rows, float(header["code_rate"]),
                   distribution=dist, seed=seed)


@dataclass(frozen=True)
class DecodeResult:
    corrected: BitString
    converged: bool
    iterations: int
    syndrome_matched: bool


@njit(cache=True)
def _peg_kernel(proc_order, var_degrees, chk_cap, var_adj, chk_adj,
                var_deg_cur, chk_deg_cur):  # pragma: no cover - jitted
    n = var_degrees.size
    m = chk_cap.size
    depth = np.empty(m, np.int64)
    visited_var = np.zeros(n, np.uint8)
    queue = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    is_neighbor = np.zeros(m, np.uint8)

    for oi in range(n):
        v = proc_order[oi]
        for k in range(var_degrees[v]):
            # BFS from v over the current Tanner graph; depth[c] is the
            # level at which check c is first reached (-1 = unreached).
            for c in range(m):
                depth[c] = -1
            for u in range(n):
                visited_var[u] = 0
            visited_var[v] = 1
            queue[0] = v
            qlen = 1
            level = 0
            while qlen > 0:
                level += 1
                nlen = 0
                for qi in range(qlen):
                    u = queue[qi]
                    for kk in range(var_deg_cur[u]):
                        c = var_adj[u, kk]
                        if depth[c] == -1:
                            depth[c] = level
                            for jj in range(chk_deg_cur[c]):
                                w = chk_adj[c, jj]
                                if visited_var[w] == 0:
                                    visited_var[w] = 1
                                    nxt[nlen] = w
                                    nlen += 1
                tmp = queue
                queue = nxt
                nxt = tmp
                qlen = nlen

            for kk in range(var_deg_cur[v]):
                is_neighbor[var_adj[v, kk]] = 1

            # prefer an unreached check with spare capacity; otherwise the
            # deepest reached non-neighbor; ties by lowest current degree,
            # then lowest index.
            best = -1
            best_depth = -2
            best_deg = 1 << 30
            for c in range(m):
                if chk_deg_cur[c] >= chk_cap[c] or is_neighbor[c] == 1:
                    continue
                d = depth[c]
                key_depth = (1 << 30) if d == -1 else d
                if best == -1:
                    better = True
                elif key_depth != best_depth:
                    better = key_depth > best_depth
                elif chk_deg_cur[c] != best_deg:
                    better = chk_deg_cur[c] < best_deg
                else:
                    better = False
                if better:
                    best = c
                    best_depth = key_depth
                    best_deg = chk_deg_cur[c]

            for kk in range(var_deg_cur[v]):
                is_neighbor[var_adj[v, kk]] = 0

            if best == -1:
                return False
            var_adj[v, var_deg_cur[v]] = best
            var_deg_cur[v] += 1
            chk_adj[best, chk_deg_cur[best]] = v
            chk_deg_cur[best] += 1
    return True


def peg_construct(n_block: int, code_rate: float,
                  dist: DegreeDistribution | None = None,
                  rng: SeededRng | None = None) -> SparseParityMatrix:
    """Build an n_block-column parity-check matrix by Progressive Edge Growth.

    Variables are processed in increasing degree order; each new edge goes
    to the check node at maximal depth in the subgraph expanded from the
    variable (unreached checks first), subject to per-check degree
    capacities derived from the distribution, with ties broken by lowest
    current check degree then lowest index. Fully deterministic given the
    distribution and node ordering; ``rng`` only shuffles which variable
    gets which degree in irregular profiles.
    """
    if n_block < 4:
        raise ValueError("n_block must be >= 4")
    if not 0 < code_rate < 1:
        raise ValueError("code_rate must be in (0, 1)")
    dist = dist or DegreeDistribution.regular()
    if abs(dist.implied_rate - code_rate) > 1e-3:
        raise ValueError(f"distribution implies rate {dist.implied_rate:.4f}, "
                         f"declared {code_rate}")
    n_rows = round(n_block * (1 - code_rate))
    degrees_sorted = dist.variable_degree_list(n_block)
    n_edges = int(degrees_sorted.sum())
    chk_cap = dist.check_capacity_list(n_rows, n_edges)
    if n_edges > int(chk_cap.sum()):
        raise ValueError("distribution infeasible: more edges than check "
                         "capacity")

    # assign degrees to column indices; irregular profiles get a seeded
    # shuffle so the degree pattern is not tied to column position
    var_degrees = degrees_sorted.copy()
    if rng is not None and np.unique(var_degrees).size > 1:
        perm = rng.generator.permutation(n_block)
        var_degrees = var_degrees[perm]
    proc_order = np.argsort(var_degrees, kind="stable").astype(np.int64)

    var_adj = np.zeros((n_block, int(var_degrees.max())), dtype=np.int64)
    chk_adj = np.zeros((n_rows, int(chk_cap.max())), dtype=np.int64)
    var_deg_cur = np.zeros(n_block, dtype=np.int64)
    chk_deg_cur = np.zeros(n_rows, dtype=np.int64)

    ok = _peg_kernel(proc_order, var_degrees, chk_cap, var_adj, chk_adj,
                     var_deg_cur, chk_deg_cur)
    if not ok:
        raise ValueError("PEG construction failed: no admissible check node")

    rows = [chk_adj[c, : chk_deg_cur[c]] for c in range(n_rows)]
    seed = rng.seed if rng is not None else None
    return SparseParityMatrix(n_block, rows, code_rate, distribution=dist,
                              seed=seed)


def syndrome(h: SparseParityMatrix, x: BitString) -> BitString:
    """H @ x over GF(2)."""
    if len(x) != h.n_cols:
        raise ValueError(f"input length {len(x)} != n_cols {h.n_cols}")
    bits = x.asarray()
    if h.n_edges == 0:
        return BitString.zeros(h.n_rows)
    sums = np.add.reduceat(bits[h.col_idx].astype(np.int64), h.row_ptr[:-1])
    sums[h.row_weights() == 0] = 0
    return BitString((sums & 1).astype(np.uint8))


@njit(cache=True, nogil=True)
def _bp_serial_kernel(row_ptr, col_idx, llr0, syn, max_iters,
                      clip):  # pragma: no cover - jitted
    n_rows = row_ptr.size - 1
    n_edges = col_idx.size
    posterior = llr0.copy()
    r_msg = np.zeros(n_edges)
    t = np.empty(32, np.float64)  # scratch per check; grown if needed
    th = np.empty(32, np.float64)

    # 0-iteration convergence check
    ok = True
    for c in range(n_rows):
        p = 0
        for e in range(row_ptr[c], row_ptr[c + 1]):
            if llr0[col_idx[e]] < 0.0:
                p ^= 1
        if p != syn[c]:
            ok = False
            break
    if ok:
        hard = np.empty(llr0.size, np.uint8)
        for v in range(llr0.size):
            hard[v] = 1 if llr0[v] < 0.0 else 0
        return hard, True, 0

    max_deg = 0
    for c in range(n_rows):
        d = row_ptr[c + 1] - row_ptr[c]
        if d > max_deg:
            max_deg = d
    if max_deg > t.size:
        t = np.empty(max_deg, np.float64)
        th = np.empty(max_deg, np.float64)

    for it in range(1, max_iters + 1):
        for c in range(n_rows):
            lo = row_ptr[c]
            deg = row_ptr[c + 1] - lo
            if deg == 0:
                continue
            sign = -1.0 if syn[c] == 1 else 1.0
            for k in range(deg):
                e = lo + k
                t[k] = posterior[col_idx[e]] - r_msg[e]
                th[k] = math.tanh(0.5 * t[k])
            # leave-one-out products via prefix/suffix
            for k in range(deg):
                prod = sign
                for j in range(deg):
                    if j != k:
                        prod *= th[j]
                if prod > 0.9999999999999:
                    prod = 0.9999999999999
                elif prod < -0.9999999999999:
                    prod = -0.9999999999999
                new_r = 2.0 * math.atanh(prod)
                if new_r > clip:
                    new_r = clip
                elif new_r < -clip:
                    new_r = -clip
                e = lo + k
                posterior[col_idx[e]] += new_r - r_msg[e]
                r_msg[e] = new_r
        # hard decision and syndrome check after the serial sweep
        ok = True
        for c in range(n_rows):
            p = 0
            for e in range(row_ptr[c], row_ptr[c + 1]):
                if posterior[col_idx[e]] < 0.0:
                    p ^= 1
            if p != syn[c]:
                ok = False
                break
        if ok:
            hard = np.empty(llr0.size, np.uint8)
            for v in range(llr0.size):
                hard[v] = 1 if posterior[v] < 0.0 else 0
            return hard, True, it

    hard = np.empty(llr0.size, np.uint8)
    for v in range(llr0.size):
        hard[v] = 1 if posterior[v] < 0.0 else 0
    return hard, False, max_iters


def decode_bp_serial(h: SparseParityMatrix, received: BitString,
                     target_syndrome: BitString, q: float,
                     max_iters: int = DEFAULT_MAX_ITERS,
                     llr_clip: float = DEFAULT_LLR_CLIP) -> DecodeResult:
    """Serial-scheduled BP syndrome decoding on a BSC with crossover ``q``.

    Check nodes are updated one at a time, each update immediately folded
    into the variable posteriors, which converges in noticeably fewer
    sweeps than flooding. Stops as soon as the hard decision reproduces
    ``target_syndrome``.
    """
    if len(received) != h.n_cols:
        raise ValueError("received length != n_cols")
    if len(target_syndrome) != h.n_rows:
        raise ValueError("target syndrome length != n_rows")
    if not 0.0 < q < 0.5:
        raise ValueError("q must be in (0, 0.5)")
    llr0 = (1.0 - 2.0 * received.asarray().astype(np.float64)) \
        * math.log((1.0 - q) / q)
    syn = target_syndrome.asarray()
    hard, converged, iters = _bp_serial_kernel(
        h.row_ptr, h.col_idx, llr0, syn, max_iters, llr_clip)
    corrected = BitString(hard)
    matched = syndrome(h, corrected) == target_syndrome
    return DecodeResult(corrected=corrected, converged=bool(converged),
                        iterations=int(iters), syndrome_matched=bool(matched))


def block_syndromes(h: SparseParityMatrix, key: BitString) -> list[BitString]:
    """Bob's side of reconciliation: syndromes of each n_block sub-block.

    The final block, if short, is padded with publicly known zero bits.
    """
    n_block = h.n_cols
    bits = key.asarray()
    out = []
    for start in range(0, len(key), n_block):
        chunk = bits[start:start + n_block]
        if chunk.size < n_block:
            chunk = np.concatenate(
                [chunk, np.zeros(n_block - chunk.size, dtype=np.uint8)])
        out.append(syndrome(h, BitString(chunk)))
    return out


def reconcile(alice_key: BitString, syndromes: list[BitString],
              h: SparseParityMatrix, q: float,
              workers: int = DEFAULT_WORKERS,
              max_iters: int = DEFAULT_MAX_ITERS) -> BitString:
    """Alice's side: steer each sub-block onto Bob's syndrome.

    Sub-blocks decode concurrently (at most ``workers`` at a time) and are
    reassembled in order; zero padding added to the final block is stripped
    again. Raises :class:`ReconciliationError` if any block fails.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n_block = h.n_cols
    n = len(alice_key)
    n_blocks = (n + n_block - 1) // n_block
    if len(syndromes) != n_blocks:
        raise ValueError(f"expected {n_blocks} syndromes, got {len(syndromes)}")
    bits = alice_key.asarray()

    def job(i: int) -> DecodeResult:
        chunk = bits[i * n_block:(i + 1) * n_block]
        if chunk.size < n_block:
            chunk = np.concatenate(
                [chunk, np.zeros(n_block - chunk.size, dtype=np.uint8)])
        return decode_bp_serial(h, BitString(chunk), syndromes[i], q,
                                max_iters=max_iters)

    if workers == 1 or n_blocks == 1:
        results = [job(i) for i in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(n_blocks)))

    failed = [i for i, res in enumerate(results) if not res.converged]
    if failed:
        raise ReconciliationError(failed)
    out = np.concatenate([res.corrected.asarray() for res in results])
    return BitString(out[:n])


def leakage_fraction(code_rate: float) -> float:
    """Fraction of the block disclosed as syndrome bits, 1 - R_c."""
    if not 0.0 < code_rate < 1.0:
        raise ValueError("code_rate must be in (0, 1)")
    return 1.0 - code_rate
