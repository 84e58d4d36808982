"""Rank topology, transports and the distributed Paralpha loop.

Ranks form an ``n_step x n_coll`` grid.  Rank ``s * n_coll + c`` owns step slot
``s`` and, with ``n_coll = M``, stage ``c`` of it (with ``n_coll = 1`` the whole
M x N block).  Row groups share ``c`` and carry the FFT butterflies; column
groups share ``s`` and carry the stage sums.

Rank programs are generators.  A receive is written ``x = yield from
comm.recv(src, tag)``: the loopback transport suspends the generator while the
message is missing and runs the other ranks round-robin, the socket transport
simply blocks.  All arithmetic goes through the same butterfly and tree-sum
primitives as the serial code, so loopback runs reproduce it bitwise.
"""

from __future__ import annotations

import logging
import os
import queue
import socket
import struct
import subprocess
import sys
import threading
import time
import warnings
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collocation import CollocationTableau
from .core import (
    ALPHA_MARGIN,
    MAX_ALPHA_RETRIES,
    InnerSolveError,
    IterationRecord,
    SolveResult,
    SolverContext,
    guard_alpha,
    make_alpha_source,
    step_factor_table,
)
from .krylov import ShiftedOperator, gmres
from .problems import LinearIVP, composite_rhs
from .schedule import EPS_DEFAULT, ScheduleConfig, StagnationRisk
from .spectral import (
    NotDiagonalizable,
    diagonalize_circulant,
    dif_butterfly,
    dif_stage_params,
    dit_butterfly,
    dit_stage_params,
    is_power_of_two,
)

log = logging.getLogger(__name__)

HEADER = struct.Struct("<qq")  # tag, payload length in bytes
HELLO = struct.Struct("<q")

# message kinds; the wire tag is kind * 1000 + stage
TAG_FORWARD = 1
TAG_INVERSE = 2
TAG_REDUCE = 3
TAG_SCATTER = 4
TAG_LAST_COL = 5
TAG_LAST_STEP = 6
TAG_ALLREDUCE = 7
TAG_BCAST = 8
TAG_GATHER = 9
TAG_NAMES = {
    TAG_FORWARD: "butterfly",
    TAG_INVERSE: "butterfly",
    TAG_REDUCE: "stage_reduce",
    TAG_SCATTER: "stage_reduce",
    TAG_LAST_COL: "last_step",
    TAG_LAST_STEP: "last_step",
    TAG_ALLREDUCE: "collective",
    TAG_BCAST: "collective",
    TAG_GATHER: "gather",
}


def make_tag(kind: int, stage: int = 0) -> int:
    return kind * 1000 + stage


class TransportError(RuntimeError):
    pass


class Deadlock(TransportError):
    def __init__(self, waits: dict):
        graph = ", ".join(f"{r}<-{src}(tag {tag})" for r, (src, tag) in sorted(waits.items()))
        super().__init__(f"all live ranks blocked on receive: {graph}")
        self.waits = waits


class RankFailure(RuntimeError):
    def __init__(self, rank: int, exc: BaseException):
        super().__init__(f"rank {rank}: {type(exc).__name__}: {exc}")
        self.rank = rank
        self.cause = exc


@dataclass(frozen=True)
class RankTopology:
    n_step: int
    n_coll: int
    rank: int = 0

    def __post_init__(self):
        if self.n_step < 1 or self.n_coll < 1:
            raise ValueError("n_step and n_coll must be positive")
        if not 0 <= self.rank < self.size:
            raise ValueError(f"rank {self.rank} outside 0..{self.size - 1}")

    @property
    def size(self) -> int:
        return self.n_step * self.n_coll

    @property
    def step_index(self) -> int:
        return self.rank // self.n_coll

    @property
    def node_index(self) -> int:
        return self.rank % self.n_coll

    def rank_of(self, step: int, node: int) -> int:
        return step * self.n_coll + node

    @property
    def row_group(self) -> list[int]:
        """Ranks with the same node index, ordered by step."""
        return [self.rank_of(s, self.node_index) for s in range(self.n_step)]

    @property
    def col_group(self) -> list[int]:
        """Ranks with the same step index, ordered by node."""
        return [self.rank_of(self.step_index, c) for c in range(self.n_coll)]

    def with_rank(self, rank: int) -> "RankTopology":
        return RankTopology(self.n_step, self.n_coll, rank)


# ------------------------------------------------------------- transports


def _wire(payload) -> np.ndarray:
    return np.ascontiguousarray(payload, dtype="<c16").ravel().copy()


class LoopbackComm:
    """Per-rank endpoint of :class:`LoopbackTransport`."""

    def __init__(self, hub: "LoopbackTransport", rank: int):
        self.hub = hub
        self.rank = rank
        self.comm_time = 0.0

    def send(self, dest: int, tag: int, payload) -> None:
        self.hub._deliver(self.rank, dest, tag, _wire(payload))

    def recv(self, src: int, tag: int):
        box = self.hub.boxes[(src, self.rank, tag)]
        while not box:
            self.hub.waiting[self.rank] = (src, tag)
            yield
        self.hub.waiting.pop(self.rank, None)
        self.hub.progress += 1
        return box.popleft()


class LoopbackTransport:
    """All ranks in one thread, advanced round-robin until each blocks or finishes."""

    def __init__(self, size: int):
        self.size = size
        self.boxes: dict = defaultdict(deque)
        self.waiting: dict = {}
        self.counts: Counter = Counter()  # (src, kind name) -> sends
        self.bytes_sent = 0
        self.progress = 0

    def comm(self, rank: int) -> LoopbackComm:
        return LoopbackComm(self, rank)

    def _deliver(self, src: int, dest: int, tag: int, data: np.ndarray) -> None:
        if not 0 <= dest < self.size:
            raise TransportError(f"rank {src} sent to nonexistent rank {dest}")
        self.boxes[(src, dest, tag)].append(data)
        self.counts[(src, TAG_NAMES.get(tag // 1000, str(tag)))] += 1
        self.bytes_sent += data.nbytes
        self.progress += 1

    def sends(self, kind: str, rank: Optional[int] = None) -> int:
        return sum(n for (src, name), n in self.counts.items() if name == kind and (rank is None or src == rank))

    def run(self, programs: list) -> list:
        """Drive one generator per rank; returns their return values."""
        results = [None] * len(programs)
        live = dict(enumerate(programs))
        while live:
            before = self.progress
            finished = False
            for rank in list(live):
                gen = live[rank]
                try:
                    next(gen)
                except StopIteration as stop:
                    results[rank] = stop.value
                    del live[rank]
                    finished = True
                    continue
                except Exception as exc:
                    raise RankFailure(rank, exc) from exc
            if live and not finished and self.progress == before:
                raise Deadlock({r: self.waiting[r] for r in live if r in self.waiting})
        return results


class SocketComm:
    """One OS process per rank; TCP links opened lazily, one reader thread per peer.

    Frames are a little-endian ``(tag, nbytes)`` int64 header followed by
    complex128 payload.  Rank ``i`` listens on ``port_base + i``.
    """

    def __init__(self, rank: int, size: int, host: str, port_base: int, timeout: float = 120.0):
        self.rank = rank
        self.size = size
        self.host = host
        self.port_base = port_base
        self.timeout = timeout
        self.comm_time = 0.0
        self._out: dict[int, socket.socket] = {}
        self._boxes: dict = defaultdict(queue.Queue)
        self._lock = threading.Lock()
        self._listener = socket.create_server((host, port_base + rank), reuse_port=False)
        self._listener.settimeout(0.5)
        self._closed = False
        self._errors: list = []
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    @classmethod
    def from_env(cls) -> "SocketComm":
        try:
            rank = int(os.environ["PARALPHA_RANK"])
            size = int(os.environ["PARALPHA_SIZE"])
            host, port = os.environ["PARALPHA_ADDR"].rsplit(":", 1)
        except (KeyError, ValueError) as exc:
            raise TransportError(
                "socket transport needs PARALPHA_RANK, PARALPHA_SIZE and PARALPHA_ADDR=host:port"
            ) from exc
        return cls(rank, size, host, int(port))

    def _box(self, src: int, tag: int) -> queue.Queue:
        with self._lock:
            return self._boxes[(src, tag)]

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _read_exact(self, conn: socket.socket, n: int) -> Optional[bytes]:
        buf = bytearray()
        while len(buf) < n:
            chunk = conn.recv(n - len(buf))
            if not chunk:
                return None
            buf.extend(chunk)
        return bytes(buf)

    def _reader(self, conn: socket.socket):
        with conn:
            hello = self._read_exact(conn, HELLO.size)
            if hello is None:
                return
            (src,) = HELLO.unpack(hello)
            while True:
                head = self._read_exact(conn, HEADER.size)
                if head is None:
                    return
                tag, nbytes = HEADER.unpack(head)
                body = self._read_exact(conn, nbytes) if nbytes else b""
                if body is None:
                    self._errors.append(f"truncated frame from rank {src}")
                    return
                self._box(src, tag).put(np.frombuffer(body, dtype="<c16").copy())

    def _link(self, dest: int) -> socket.socket:
        sock = self._out.get(dest)
        if sock is not None:
            return sock
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                sock = socket.create_connection((self.host, self.port_base + dest), timeout=self.timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank} could not reach rank {dest}")
                time.sleep(0.05)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.sendall(HELLO.pack(self.rank))
        self._out[dest] = sock
        return sock

    def send(self, dest: int, tag: int, payload) -> None:
        data = _wire(payload)
        if dest == self.rank:
            self._box(self.rank, tag).put(data)
            return
        self._link(dest).sendall(HEADER.pack(tag, data.nbytes) + data.tobytes())

    def recv(self, src: int, tag: int):
        try:
            return self._box(src, tag).get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"rank {self.rank} timed out waiting for rank {src}, tag {tag}") from None
        yield  # pragma: no cover - marks this as a generator

    def close(self):
        self._closed = True
        for sock in self._out.values():
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            sock.close()
        self._listener.close()


def run_blocking(program):
    """Drive a rank generator whose receives never suspend (socket transport)."""
    try:
        while True:
            next(program)
    except StopIteration as stop:
        return stop.value


# ------------------------------------------------------ communication ops


def _timed_recv(comm, src, tag):
    t0 = time.perf_counter()
    data = yield from comm.recv(src, tag)
    comm.comm_time += time.perf_counter() - t0
    return data


def butterfly_exchange(topo: RankTopology, comm, local: np.ndarray, stage: int, direction: str):
    """One radix-2 stage across the row group; returns the new local block."""
    n = topo.n_step
    if n == 1:
        return local
    s = topo.step_index
    if direction == "forward":
        partner, upper, w = dif_stage_params(s, n, stage)
        kind, combine = TAG_FORWARD, dif_butterfly
    elif direction == "inverse":
        partner, upper, w = dit_stage_params(s, n, stage)
        kind, combine = TAG_INVERSE, dit_butterfly
    else:
        raise ValueError(f"direction must be forward or inverse, got {direction!r}")
    dest = topo.rank_of(partner, topo.node_index)
    tag = make_tag(kind, stage)
    try:
        comm.send(dest, tag, local)
        theirs = yield from _timed_recv(comm, dest, tag)
    except TransportError as exc:
        raise TransportError(f"rank {topo.rank}, stage {stage}, {direction}: {exc}") from exc
    return combine(upper, local, theirs.reshape(local.shape), w)


def stage_reduce(topo: RankTopology, comm, mat: np.ndarray, local: np.ndarray, stage_tag: int = 0):
    """``out[m] = sum_j mat[m, j] x_j`` with stage j held by node rank j.

    Contributions are summed along a binary tree toward node 0 in
    rank-ascending order (the :func:`tree_sum` shape), then row m is sent
    to node rank m.  With ``n_coll = 1`` the local block holds every stage.
    """
    if topo.n_coll == 1:
        from .spectral import stage_combine

        return stage_combine(mat, local)
    m = mat.shape[0]
    if topo.n_coll != m:
        raise ValueError("node-parallel layout needs n_coll == M")
    c = topo.node_index
    acc = mat[:, c, None] * local[None, :]
    tag_r, tag_s = make_tag(TAG_REDUCE, stage_tag), make_tag(TAG_SCATTER, stage_tag)
    stride = 1
    while stride < m:
        if c % (2 * stride) == 0:
            if c + stride < m:
                other = yield from _timed_recv(comm, topo.rank_of(topo.step_index, c + stride), tag_r)
                acc = acc + other.reshape(acc.shape)
        elif c % (2 * stride) == stride:
            comm.send(topo.rank_of(topo.step_index, c - stride), tag_r, acc)
            break
        stride *= 2
    root = topo.rank_of(topo.step_index, 0)
    if c == 0:
        for j in range(1, m):
            comm.send(topo.rank_of(topo.step_index, j), tag_s, acc[j])
        return acc[0]
    row = yield from _timed_recv(comm, root, tag_s)
    return row


def last_step_broadcast(topo: RankTopology, comm, last_stage: Optional[np.ndarray]):
    """Deliver the final stage of the last step to every rank of step group 0.

    The owner (last step, last node) first shares it within its column; each
    node rank of the last step group then sends one message to its
    counterpart in step group 0.  Returns the vector on step-group-0 ranks.
    """
    s, c = topo.step_index, topo.node_index
    last = topo.n_step - 1
    owner_node = topo.n_coll - 1
    vec = None
    if s == last:
        tag = make_tag(TAG_LAST_COL)
        if c == owner_node:
            vec = last_stage
            for j in range(topo.n_coll - 1):
                comm.send(topo.rank_of(last, j), tag, vec)
        else:
            vec = yield from _timed_recv(comm, topo.rank_of(last, owner_node), tag)
        if last != 0:
            comm.send(topo.rank_of(0, c), make_tag(TAG_LAST_STEP), vec)
    if s == 0 and last != 0:
        vec = yield from _timed_recv(comm, topo.rank_of(last, c), make_tag(TAG_LAST_STEP))
    return vec


COMBINE = {"max": max, "sum": lambda a, b: a + b}


def allreduce(topo: RankTopology, comm, values, ops: list[str], seq: int = 0):
    """Reduce a short real vector to rank 0 in rank order, then broadcast it."""
    vals = np.asarray(values, dtype=float)
    tag_r, tag_b = make_tag(TAG_ALLREDUCE, seq % 1000), make_tag(TAG_BCAST, seq % 1000)
    if topo.rank == 0:
        acc = vals.copy()
        for src in range(1, topo.size):
            other = (yield from _timed_recv(comm, src, tag_r)).real
            acc = np.array([COMBINE[op](a, b) for op, a, b in zip(ops, acc, other)])
        for dest in range(1, topo.size):
            comm.send(dest, tag_b, acc)
        return acc
    comm.send(0, tag_r, vals)
    out = yield from _timed_recv(comm, 0, tag_b)
    return out.real


# ------------------------------------------------------------ rank program


@dataclass
class ParallelSetup:
    """Read-only data every rank derives identically."""

    ctx: SolverContext
    w: np.ndarray  # (L, M, N); ranks only read their own slot
    tol: float
    alpha_mode: str = "adaptive"
    m0: Optional[float] = None
    alpha: Optional[float] = None
    sequence: Optional[list] = None
    eps: float = EPS_DEFAULT
    max_iter: int = 50
    reference: Optional[np.ndarray] = None  # last step block of the composite solution


def _local_stages(topo: RankTopology, block: np.ndarray) -> np.ndarray:
    return block if topo.n_coll == 1 else block[topo.node_index]


def _last_stage(topo: RankTopology, local: np.ndarray) -> np.ndarray:
    return local[-1] if topo.n_coll == 1 else local


def _inner_solve_local(topo, comm, sf, local, setup: ParallelSetup):
    ctx = setup.ctx
    x1 = yield from stage_reduce(topo, comm, sf.s_inverse, local, 0)
    iters = 0
    if topo.n_coll == 1:
        x2 = np.empty_like(x1)
        nodes = enumerate(sf.d_inner)
    else:
        nodes = [(topo.node_index, sf.d_inner[topo.node_index])]
    t0 = time.perf_counter()
    for m, lam in nodes:
        rhs = x1[m] if topo.n_coll == 1 else x1
        sol, stats = gmres(ShiftedOperator(ctx.ivp.operator, lam * ctx.dt), rhs, tol=ctx.tau, restart=ctx.restart)
        iters += stats.iterations
        if not stats.converged:
            raise InnerSolveError(sf.l_index, m, stats.residual, stats.iterations)
        if topo.n_coll == 1:
            x2[m] = sol
        else:
            x2 = sol
    t_solve = time.perf_counter() - t0
    z = yield from stage_reduce(topo, comm, sf.s_matrix, x2, 1)
    y = yield from stage_reduce(topo, comm, sf.g_inverse, z, 2)
    return y, iters, t_solve


def rank_program(topo: RankTopology, comm, setup: ParallelSetup):
    """Adaptive Paralpha on one rank; rank 0 returns the gathered result."""
    ctx = setup.ctx
    L, m_nodes, n = ctx.L, ctx.tableau.m_nodes, ctx.ivp.dim
    s, c = topo.step_index, topo.node_index
    stages = int(np.log2(L))

    w_local = _local_stages(topo, setup.w[s])
    w_norm = (yield from allreduce(topo, comm, [np.max(np.abs(w_local))], ["max"], seq=999))[0]
    gamma = None
    if setup.alpha_mode == "adaptive":
        gamma = ScheduleConfig(tau=ctx.tau, L=L, w_norm=w_norm, m0=setup.m0, tol=setup.tol, eps=setup.eps).gamma
    source = make_alpha_source(setup.alpha_mode, gamma=gamma, m0=setup.m0, tol=setup.tol,
                               alpha=setup.alpha, sequence=setup.sequence)

    u_local = np.broadcast_to(ctx.ivp.initial.astype(complex), (m_nodes, n)).copy()
    u_local = _local_stages(topo, u_local).copy()
    owns_last_stage = c == topo.n_coll - 1
    ref_local = None
    if setup.reference is not None and s == L - 1:
        ref_local = _local_stages(topo, setup.reference)
    exact_end = None
    if ctx.ivp.exact is not None and s == L - 1 and owns_last_stage:
        exact_end = ctx.ivp.exact(ctx.ivp.grid.t_end)

    records = []
    timings = {"transform": 0.0, "solve": 0.0, "comm": 0.0}
    converged, reason = False, "max_iter"
    k = 0
    while k < setup.max_iter:
        if source.exhausted:
            converged, reason = True, "m_k"
            break
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StagnationRisk)
            a_k, m_next = source.next_alpha(guard=lambda a: guard_alpha(a, ctx.forbidden))
        t_start = time.perf_counter()
        comm_before = comm.comm_time

        # every rank factors every slot, so a rejected alpha is seen everywhere
        for attempt in range(MAX_ALPHA_RETRIES + 1):
            try:
                circ = diagonalize_circulant(L, a_k)
                table = step_factor_table(ctx, circ)
                break
            except NotDiagonalizable:
                if attempt == MAX_ALPHA_RETRIES:
                    raise
                bumped = a_k * (1.0 + ALPHA_MARGIN)
                source.adjustments.append((source.k, a_k, bumped))
                source.alpha_seq[-1] = bumped
                a_k = bumped

        last_vec = _last_stage(topo, u_local) if (s == L - 1 and owns_last_stage) else None
        u_l_last = yield from last_step_broadcast(topo, comm, last_vec)
        r = w_local.copy()
        if s == 0:
            r -= a_k * u_l_last  # every stage of the first block

        t0 = time.perf_counter()
        cur = r * circ.forward_scale(s)
        for stage in range(stages):
            cur = yield from butterfly_exchange(topo, comm, cur, stage, "forward")
        t_tr = time.perf_counter() - t0

        y, iters, t_solve = yield from _inner_solve_local(topo, comm, table[s], cur, setup)

        t0 = time.perf_counter()
        for stage in range(stages):
            y = yield from butterfly_exchange(topo, comm, y, stage, "inverse")
        u_new = y * circ.inverse_scale(s)
        t_tr += time.perf_counter() - t0

        diff = float(np.max(np.abs(u_new - u_local))) if s == L - 1 else 0.0
        true_err = float(np.max(np.abs(u_new - ref_local))) if ref_local is not None else 0.0
        exact_err = float(np.max(np.abs(_last_stage(topo, u_new) - exact_end))) if exact_end is not None else 0.0
        u_local = u_new
        k += 1
        diff, true_err, exact_err, iters_all = (
            yield from allreduce(topo, comm, [diff, true_err, exact_err, iters], ["max", "max", "max", "sum"], seq=k)
        )
        t_comm = comm.comm_time - comm_before
        timings["transform"] += t_tr
        timings["solve"] += t_solve
        timings["comm"] += t_comm
        records.append(IterationRecord(
            k, a_k, m_next, float(diff),
            float(true_err) if setup.reference is not None else None,
            float(exact_err) if ctx.ivp.exact is not None else None,
            int(round(iters_all)), time.perf_counter() - t_start,
        ))
        if diff <= setup.tol:
            converged, reason = True, "consec_diff"
            break

    # gather the trajectory on rank 0, slot by slot in rank order
    tag = make_tag(TAG_GATHER)
    if topo.rank != 0:
        comm.send(0, tag, u_local)
        return None
    u = np.empty((L, m_nodes, n), dtype=complex)
    for rank in range(topo.size):
        other = topo.with_rank(rank)
        data = u_local if rank == 0 else (yield from comm.recv(rank, tag))
        if topo.n_coll == 1:
            u[other.step_index] = np.reshape(data, (m_nodes, n))
        else:
            u[other.step_index, other.node_index] = data
    return SolveResult(u=u, records=records, converged=converged, reason=reason, gamma=gamma,
                       alpha_adjustments=list(source.adjustments), timings=timings)


def make_setup(ivp: LinearIVP, tableau: CollocationTableau, *, tol: float, tau: float, restart: int = 50,
               alpha_mode="adaptive", m0=None, alpha=None, sequence=None, eps=EPS_DEFAULT, max_iter=50,
               reference=None) -> ParallelSetup:
    ctx = SolverContext(ivp, tableau, tau=tau, restart=restart)
    w = composite_rhs(ivp, ivp.grid, tableau)
    return ParallelSetup(ctx=ctx, w=w, tol=tol, alpha_mode=alpha_mode, m0=m0, alpha=alpha, sequence=sequence,
                         eps=eps, max_iter=max_iter, reference=reference)


def check_topology(topo: RankTopology, setup: ParallelSetup) -> None:
    L, m = setup.ctx.L, setup.ctx.tableau.m_nodes
    if topo.n_step != L:
        raise ValueError(f"n_step={topo.n_step} must equal L={L}")
    if not is_power_of_two(topo.n_step):
        raise ValueError(f"n_step={topo.n_step} must be a power of two")
    if topo.n_coll not in (1, m):
        raise ValueError(f"n_coll must be 1 or M={m}, got {topo.n_coll}")


def run_parallel(setup: ParallelSetup, n_step: int, n_coll: int = 1,
                 transport: Optional[LoopbackTransport] = None) -> tuple[SolveResult, LoopbackTransport]:
    """All ranks under the loopback transport; returns rank 0's result and the transport."""
    topo = RankTopology(n_step, n_coll)
    check_topology(topo, setup)
    hub = transport or LoopbackTransport(topo.size)
    comms = [hub.comm(r) for r in range(topo.size)]
    programs = [rank_program(topo.with_rank(r), comms[r], setup) for r in range(topo.size)]
    results = hub.run(programs)
    return results[0], hub


def run_socket_rank(setup: ParallelSetup, n_step: int, n_coll: int = 1,
                    comm: Optional[SocketComm] = None) -> Optional[SolveResult]:
    """This process's share of a multi-process run (rank from the environment)."""
    comm = comm or SocketComm.from_env()
    topo = RankTopology(n_step, n_coll, comm.rank)
    if comm.size != topo.size:
        raise TransportError(f"PARALPHA_SIZE={comm.size} but topology needs {topo.size} ranks")
    check_topology(topo, setup)
    try:
        return run_blocking(rank_program(topo, comm, setup))
    except Exception as exc:
        raise RankFailure(comm.rank, exc) from exc
    finally:
        comm.close()


def launch_local(args: list[str], size: int, host: str = "127.0.0.1", port_base: Optional[int] = None,
                 timeout: float = 600.0) -> list[subprocess.CompletedProcess]:
    """Start ``size`` copies of ``python -m paralpha.cli <args>`` with the rank bootstrap set."""
    if port_base is None:
        with socket.socket() as probe:
            probe.bind((host, 0))
            port_base = probe.getsockname()[1]
        port_base = max(20000, min(port_base, 60000 - size))
    procs = []
    for rank in range(size):
        env = dict(os.environ, PARALPHA_RANK=str(rank), PARALPHA_SIZE=str(size),
                   PARALPHA_ADDR=f"{host}:{port_base}")
        procs.append(subprocess.Popen([sys.executable, "-m", "paralpha.cli", *args], env=env,
                                      stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True))
    out = []
    for p in procs:
        stdout, stderr = p.communicate(timeout=timeout)
        out.append(subprocess.CompletedProcess(p.args, p.returncode, stdout, stderr))
    return out
