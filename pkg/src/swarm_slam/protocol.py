"""Token-ring communication and ranging protocol as a discrete-event simulation.

One token circulates in increasing id order.  On every token turn a drone

1. ranges with every higher-id drone (each exchange also carries both
   positions, and the record is kept at both ends),
2. matches buffered external scans against its own (delegated to the app),
3. sends its newest scan to every higher-id drone (per-peer unicast, acked),
4. runs pose-graph optimisation when the cascade asks for it,
5. sends the optimised shared scan poses to the higher-id drones,

then hands the token on.  Fail-safes: every data message is retried up to
``retry_limit`` times, a silent successor is skipped, a drone that has not
held the token for ``reclaim_base * (i + 1)`` seconds reclaims it, and a
holder that hears stage traffic from a lower-id holder drops its token
(this covers the random listening window after every acquisition).

The simulator is agnostic of the SLAM payloads: an :class:`App` supplies
positions, ranges, scans and the optimisation hooks.  The default app
produces synthetic scans with a fixed probability per turn, which is what
the loop-time and liveness studies use.
"""

from __future__ import annotations

import heapq
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2

TOKEN_PASS = "TokenPass"
RANGE_REQUEST = "RangeRequest"
RANGE_REPLY = "RangeReply"
SCAN = "ScanBroadcast"
POSE_UPDATE = "PoseUpdate"
PGO_NOTIFY = "PgoNotify"
ACK = "Ack"

# header bytes per message kind (payload excluded)
HEADER_BYTES = 8
POSE_BYTES = 12
RANGE_PAYLOAD = 12  # sender position, 3 x float32

# nominal link rates in bit/s
LINK_CAPACITY = {"BLE": 1.0e6, "UWB": 6.8e6, "WiFi": 25.0e6}


@dataclass
class ProtocolConfig:
    n_drones: int = 3
    t_range: float = 0.004
    retry_limit: int = 3
    listen_window_max: float = 0.020
    reclaim_base: float = 2.0
    pgo_loop_closures: int = 3
    pgo_period: float = 60.0
    t_token: float = 0.002
    t_scan_tx: float = 0.010
    t_pose_tx: float = 0.001
    t_ack_timeout: float = 0.002
    inbox_cap: int = 8
    scan_bytes: int = 2048
    scans_per_min: float = 5.0

    def __post_init__(self):
        if self.n_drones < 1:
            raise ValueError("n_drones must be at least 1")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be at least 1")
        if self.inbox_cap < 1 or self.pgo_loop_closures < 1:
            raise ValueError("inbox_cap and pgo_loop_closures must be at least 1")
        positives = (self.t_range, self.listen_window_max, self.reclaim_base, self.pgo_period,
                     self.t_token, self.t_scan_tx, self.t_pose_tx, self.t_ack_timeout,
                     self.scan_bytes, self.scans_per_min)
        if any(not v > 0 for v in positives):
            raise ValueError("protocol times, sizes and rates must be positive")

    def reclaim_timeout(self, drone: int) -> float:
        return self.reclaim_base * (drone + 1)


@dataclass(frozen=True)
class RangingRecord:
    peer: int
    distance: float
    peer_position: Pose2
    timestamp: float

    def __post_init__(self):
        if not self.distance >= 0:
            raise ValueError("ranging distance must be non-negative")


@dataclass(frozen=True)
class Message:
    kind: str
    src: int
    dst: int | None
    size: int
    seq: int
    payload: object = field(default=None, compare=False, repr=False)


# --------------------------------------------------------------------------
# pose update payload


def encode_pose_update(poses) -> bytes:
    """12 bytes per pose: x, y, psi as little-endian float32."""
    return b"".join(struct.pack("<fff", p.x, p.y, p.psi) for p in poses)


def decode_pose_update(buf: bytes) -> list[Pose2]:
    if len(buf) % POSE_BYTES:
        raise ValueError(f"pose update length {len(buf)} is not a multiple of {POSE_BYTES}")
    return [Pose2(*struct.unpack_from("<fff", buf, k)) for k in range(0, len(buf), POSE_BYTES)]


# --------------------------------------------------------------------------
# application hooks


class App:
    """SLAM-side hooks called by the protocol; the defaults model a payload-free swarm."""

    def position(self, drone: int) -> Pose2:
        return Pose2()

    def measure_range(self, a: int, b: int) -> float | None:
        return 1.0

    def take_new_scan(self, drone: int):
        """Newest own scan not yet sent, or ``None``."""
        return None

    def scan_size(self, scan) -> int:
        return 0

    def process_inbox(self, drone: int, scans: list) -> tuple[int, int]:
        """Match buffered external scans; returns ``(new inter edges, failed matches)``."""
        return 0, 0

    def loop_closures_since_pgo(self, drone: int) -> int:
        return 0

    def optimize(self, drone: int, now: float) -> tuple[dict, bool]:
        """Run the optimisation; returns ``({dst: [(pose_id, Pose2)]}, converged)``."""
        return {}, True

    def receive_pose_update(self, drone: int, src: int, pose_ids: list, poses: list[Pose2]) -> None:
        pass


class SyntheticApp(App):
    """Produces an opaque scan on a token turn with probability ``scan_fraction``."""

    def __init__(self, rng: np.random.Generator, scan_fraction: float = 0.0, scan_bytes: int = 2048):
        self.rng, self.scan_fraction, self.scan_bytes = rng, scan_fraction, scan_bytes
        self.counter = 0
        self.received: dict[int, list] = {}

    def take_new_scan(self, drone):
        if self.scan_fraction and self.rng.random() < self.scan_fraction:
            self.counter += 1
            return (drone, self.counter)
        return None

    def scan_size(self, scan):
        return self.scan_bytes

    def process_inbox(self, drone, scans):
        self.received.setdefault(drone, []).extend(scans)
        return 0, 0


# --------------------------------------------------------------------------
# per-drone state


@dataclass
class DroneProtocol:
    drone: int
    alive: bool = True
    holder: bool = False
    phase: str = "idle"  # idle | listen | active | passing
    last_held: float = 0.0
    pending_pgo: bool = False
    last_pgo: float = 0.0
    scan_inbox: deque = field(default_factory=deque)
    ranges: dict = field(default_factory=dict)
    seen: set = field(default_factory=set)
    version: int = 0
    process: object = None
    stats: dict = field(default_factory=lambda: {
        "turns": 0, "discards": 0, "reclaims": 0, "rangings": 0, "ranging_failures": 0,
        "scans_sent": 0, "scan_deliveries": 0, "scan_drops": 0, "evictions": 0,
        "inter_edges": 0, "icp_failures": 0, "pgo_runs": 0, "pgo_nonconverged": 0,
        "pose_updates_sent": 0, "token_skips": 0, "lone_turns": 0,
    })


class ProtocolSim:
    """Event-driven token protocol for ``cfg.n_drones`` drones.

    ``msg_loss`` drops every individual frame (data or ack) independently.
    ``trace`` collects one tuple per frame when given a list.
    """

    def __init__(self, cfg: ProtocolConfig, rng: np.random.Generator, app: App | None = None,
                 msg_loss: float = 0.0, trace: list | None = None, first_holder: int = 0):
        if not 0 <= msg_loss <= 1:
            raise ValueError("msg_loss must lie in [0, 1]")
        self.cfg, self.rng, self.app = cfg, rng, app or App()
        self.msg_loss, self.trace = msg_loss, trace
        self.now = 0.0
        self.drones = [DroneProtocol(i) for i in range(cfg.n_drones)]
        self._events: list = []
        self._seq = 0
        self._msg_seq = 0
        self.isolated: set[int] = set()
        self.turn_log: list[tuple[float, int, int]] = []  # (time, drone, rangings this turn)
        self.claims: list[tuple[float, int, str]] = []  # (time, drone, "pass" | "reclaim")
        self.holder_log: list[tuple[float, int]] = []  # (time, number of token holders)
        self.scan_fate: dict = {}  # (src, scan key, dst) -> "delivered" / "dropped"
        for d in self.drones:
            self._schedule_reclaim(d)
        self._acquire(first_holder, "initial")

    # ---------------------------------------------------------------- events

    def _push(self, t: float, fn, *args):
        self._seq += 1
        heapq.heappush(self._events, (t, self._seq, fn, args))

    def run_until(self, t_end: float) -> None:
        while self._events and self._events[0][0] <= t_end:
            t, _, fn, args = heapq.heappop(self._events)
            self.now = t
            fn(*args)
        self.now = max(self.now, t_end)

    def at(self, t: float, fn, *args) -> None:
        """Schedule an external action (kill, isolate, ...) at time ``t``."""
        self._push(t, fn, *args)

    # ------------------------------------------------------------ topology

    def claim(self, drone: int) -> None:
        """Make ``drone`` take a token now, as a reclaim would."""
        self._acquire(drone, "reclaim")

    def kill(self, drone: int) -> None:
        d = self.drones[drone]
        d.alive = False
        self._drop_token(d)

    def revive(self, drone: int) -> None:
        d = self.drones[drone]
        d.alive = True
        d.last_held = self.now
        self._schedule_reclaim(d)

    def isolate(self, drone: int) -> None:
        self.isolated.add(drone)

    def rejoin(self, drone: int) -> None:
        self.isolated.discard(drone)

    def reachable(self, a: int, b: int) -> bool:
        if a == b:
            return True
        if not (self.drones[a].alive and self.drones[b].alive):
            return False
        return a not in self.isolated and b not in self.isolated

    def holders(self) -> list[int]:
        return [d.drone for d in self.drones if d.holder and d.phase in ("listen", "active")]

    # ------------------------------------------------------------ token life

    def _record_holders(self):
        n = len(self.holders())
        if not self.holder_log or self.holder_log[-1][1] != n:
            self.holder_log.append((self.now, n))

    def _schedule_reclaim(self, d: DroneProtocol):
        self._push(d.last_held + self.cfg.reclaim_timeout(d.drone) + 1e-9, self._reclaim_check,
                   d.drone, d.last_held)

    def _reclaim_check(self, drone: int, stamp: float):
        d = self.drones[drone]
        if not d.alive or d.last_held != stamp:
            return
        if d.holder:
            d.last_held = self.now
            self._schedule_reclaim(d)
            return
        d.stats["reclaims"] += 1
        self._acquire(drone, "reclaim")

    def _acquire(self, drone: int, how: str):
        d = self.drones[drone]
        d.holder = True
        d.last_held = self.now
        self._schedule_reclaim(d)
        self.claims.append((self.now, drone, how))
        d.version += 1
        d.process = self._turn(d)
        self._resume(d, d.version)

    def _drop_token(self, d: DroneProtocol):
        if d.process is not None:
            d.process.close()
            d.process = None
        d.version += 1
        d.holder = False
        d.phase = "idle"
        self._record_holders()

    def _resume(self, d: DroneProtocol, version: int):
        if d.version != version or d.process is None:
            return
        gen = d.process
        try:
            delay = next(gen)
        except StopIteration:
            if d.process is gen:
                d.process = None
            return
        self._push(self.now + delay, self._resume, d, version)

    # ------------------------------------------------------------ radio

    def _next_seq(self) -> int:
        self._msg_seq += 1
        return self._msg_seq

    def _log(self, msg: Message, ok: bool):
        if self.trace is not None:
            self.trace.append((self.now, msg.kind, msg.src, msg.dst, msg.size, msg.seq, ok))

    def _carrier(self, src: int, exempt: int | None = None):
        """Holder traffic from ``src`` makes every higher-id holder in earshot drop its token.

        ``exempt`` is the addressee of a repeated token pass, which may already hold it.
        """
        for d in self.drones:
            if d.drone > src and d.drone != exempt and d.holder and self.reachable(src, d.drone):
                d.stats["discards"] += 1
                self._drop_token(d)

    def _frame(self, msg: Message) -> bool:
        """Send one frame; returns whether ``msg.dst`` received it."""
        ok = (msg.dst is not None and self.reachable(msg.src, msg.dst)
              and self.rng.random() >= self.msg_loss)
        self._log(msg, ok)
        return ok

    def _ack(self, src: int, dst: int) -> bool:
        return self._frame(Message(ACK, src, dst, HEADER_BYTES, self._next_seq()))

    # ------------------------------------------------------------ the turn

    def _turn(self, d: DroneProtocol):
        cfg, i, app = self.cfg, d.drone, self.app
        d.phase = "listen"
        self._record_holders()
        yield float(self.rng.uniform(0.0, cfg.listen_window_max))
        d.phase = "active"
        self._record_holders()
        d.stats["turns"] += 1
        n = cfg.n_drones

        # Stage 1: ranging with every higher id
        rangings = 0
        for j in range(i + 1, n):
            rangings += 1
            d.stats["rangings"] += 1
            done = False
            for _ in range(cfg.retry_limit):
                self._carrier(i)
                pos_i = app.position(i)
                req = Message(RANGE_REQUEST, i, j, HEADER_BYTES + RANGE_PAYLOAD, self._next_seq(), pos_i)
                if self._frame(req):
                    pos_j = app.position(j)
                    rep = Message(RANGE_REPLY, j, i, HEADER_BYTES + RANGE_PAYLOAD, self._next_seq(), pos_j)
                    if self._frame(rep):
                        dist = app.measure_range(i, j)
                        if dist is not None:
                            d.ranges[j] = RangingRecord(j, dist, pos_j, self.now)
                            self.drones[j].ranges[i] = RangingRecord(i, dist, pos_i, self.now)
                            done = True
                yield cfg.t_range if done else cfg.t_range + cfg.t_ack_timeout
                if done:
                    break
            if not done:
                d.stats["ranging_failures"] += 1
        self.turn_log.append((self.now, i, rangings))

        # Stage 2: match buffered external scans
        if d.scan_inbox:
            scans = list(d.scan_inbox)
            d.scan_inbox.clear()
            edges, failures = app.process_inbox(i, scans)
            d.stats["inter_edges"] += edges
            d.stats["icp_failures"] += failures

        # Stage 3: newest scan to every higher id
        scan = app.take_new_scan(i)
        if scan is not None:
            d.stats["scans_sent"] += 1
            size = HEADER_BYTES + app.scan_size(scan)
            key = self._next_seq()
            for j in range(i + 1, n):
                delivered = False
                for _ in range(cfg.retry_limit):
                    self._carrier(i)
                    msg = Message(SCAN, i, j, size, self._next_seq(), scan)
                    got = self._frame(msg)
                    if got:
                        self._deliver_scan(j, i, key, scan)
                    acked = got and self._ack(j, i)
                    yield cfg.t_scan_tx if acked else cfg.t_scan_tx + cfg.t_ack_timeout
                    if acked:
                        delivered = True
                        break
                if delivered:
                    d.stats["scan_deliveries"] += 1
                else:
                    d.stats["scan_drops"] += 1
                    self.scan_fate.setdefault((i, key, j), "dropped")

        # Stage 4: cascaded optimisation
        if i == 0 and not d.pending_pgo:
            if (app.loop_closures_since_pgo(0) >= cfg.pgo_loop_closures
                    or self.now - d.last_pgo >= cfg.pgo_period):
                d.pending_pgo = True
        notify = False
        if d.pending_pgo:
            d.pending_pgo = False
            d.last_pgo = self.now
            d.stats["pgo_runs"] += 1
            updates, converged = app.optimize(i, self.now)
            if not converged:
                d.stats["pgo_nonconverged"] += 1
            notify = True

            # Stage 5: optimised shared poses to higher ids
            for j, items in sorted(updates.items()):
                if j <= i or not items:
                    continue
                ids = [pid for pid, _ in items]
                payload = encode_pose_update([p for _, p in items])
                key = self._next_seq()
                for _ in range(cfg.retry_limit):
                    self._carrier(i)
                    msg = Message(POSE_UPDATE, i, j, HEADER_BYTES + len(payload), self._next_seq(),
                                  (key, ids, payload))
                    got = self._frame(msg)
                    if got:
                        self._deliver_pose_update(j, i, msg)
                    acked = got and self._ack(j, i)
                    yield cfg.t_pose_tx if acked else cfg.t_pose_tx + cfg.t_ack_timeout
                    if acked:
                        d.stats["pose_updates_sent"] += 1
                        break

        # hand the token on, skipping silent drones
        d.phase = "passing"
        self._record_holders()
        for step in range(1, n):
            j = (i + step) % n
            forward = notify and j > i
            for _ in range(cfg.retry_limit):
                self._carrier(i, exempt=j)
                yield cfg.t_token
                msg = Message(TOKEN_PASS, i, j, HEADER_BYTES + (1 if forward else 0), self._next_seq())
                got = self._frame(msg)
                if got and forward:
                    self._log(Message(PGO_NOTIFY, i, j, 1, self._next_seq()), True)
                if got and self._ack(j, i):
                    # release before the successor starts its turn
                    d.holder = False
                    d.phase = "idle"
                    d.process = None
                    self._record_holders()
                    self._receive_token(j, forward)
                    return
                if got:  # ack lost: the successor holds the token anyway
                    self._receive_token(j, forward)
                yield cfg.t_ack_timeout
            d.stats["token_skips"] += 1
        # nobody answered: keep the token and run another turn alone
        d.stats["lone_turns"] += 1
        d.last_held = self.now
        self._schedule_reclaim(d)
        self.claims.append((self.now, i, "lone"))
        d.version += 1
        d.process = self._turn(d)
        self._push(self.now, self._resume, d, d.version)

    # ------------------------------------------------------------ receivers

    def _receive_token(self, j: int, notify: bool):
        r = self.drones[j]
        if notify:
            r.pending_pgo = True
        if not r.holder:  # a duplicate pass merges into the token already held
            self._acquire(j, "pass")

    def _deliver_scan(self, j: int, src: int, key: int, scan):
        if src >= j:
            raise AssertionError("scans only flow from lower to higher ids")
        self.scan_fate[(src, key, j)] = "delivered"
        r = self.drones[j]
        if any(k == (src, key) for k, _ in r.scan_inbox) or (src, key) in r.seen:
            return
        r.seen.add((src, key))
        if len(r.scan_inbox) >= self.cfg.inbox_cap:
            r.scan_inbox.popleft()
            r.stats["evictions"] += 1
        r.scan_inbox.append(((src, key), scan))

    def _deliver_pose_update(self, j: int, src: int, msg: Message):
        if src >= j:
            raise AssertionError("pose updates only flow from lower to higher ids")
        r = self.drones[j]
        key, ids, payload = msg.payload
        if (src, key) in r.seen:
            return
        r.seen.add((src, key))
        self.app.receive_pose_update(j, src, ids, decode_pose_update(payload))

    # ------------------------------------------------------------ summaries

    def rounds(self) -> list[int]:
        """Ranging exchanges per round; a round ends when the turn order wraps."""
        out, cur, last = [], 0, None
        for _, drone, count in self.turn_log:
            if last is not None and drone <= last:
                out.append(cur)
                cur = 0
            cur += count
            last = drone
        if last is not None:
            out.append(cur)
        return out

    def loop_times(self, drone: int = 0) -> np.ndarray:
        """Time between consecutive kept turns of ``drone``."""
        t = [ti for ti, di, _ in self.turn_log if di == drone]
        return np.diff(t)

    def stats(self) -> dict:
        total: dict = {}
        for d in self.drones:
            for k, v in d.stats.items():
                total[k] = total.get(k, 0) + v
        return total


def inbox_scans(entries) -> list:
    """Scan payloads of ``(key, scan)`` inbox entries."""
    return [scan for _, scan in entries]


# --------------------------------------------------------------------------
# analytic scalability models


def ranging_exchanges(n: int) -> int:
    return n * (n - 1) // 2


def predict_loop_time(n: int, cfg: ProtocolConfig | None = None, scan_fraction: float = 0.0) -> float:
    """Expected time for the token to visit ``n`` drones once, without losses.

    Ranging ``n(n-1)/2 * t_range``, per-turn overhead ``n * (t_token + mean
    listen window)``, and scans: a fraction of the drones sends one scan to
    every higher id, ``(n - 1) / 2`` receivers on average.
    """
    cfg = cfg or ProtocolConfig()
    if n < 2:
        raise ValueError("loop time needs at least 2 drones")
    if not 0 <= scan_fraction <= 1:
        raise ValueError("scan_fraction must lie in [0, 1]")
    overhead = cfg.t_token + cfg.listen_window_max / 2
    return (ranging_exchanges(n) * cfg.t_range + n * overhead
            + scan_fraction * ranging_exchanges(n) * cfg.t_scan_tx)


@dataclass(frozen=True)
class Bandwidth:
    scan_production: float  # B/s of new scans in the swarm
    scan_traffic: float  # B/s on air, each scan delivered to every higher id
    position_traffic: float  # B/s of ranging/position frames
    drone0: float  # B/s sent by drone 0, the busiest sender

    @property
    def swarm_total(self) -> float:
        return self.scan_traffic + self.position_traffic


def predict_bandwidth(n: int, scans_per_min: float = 5.0, scan_size: int = 2048,
                      cfg: ProtocolConfig | None = None) -> Bandwidth:
    """Radio traffic model in bytes per second.

    Scans go to every higher id, so a swarm of ``n`` carries
    ``n(n-1)/2`` scan copies per scan period.  Position traffic is the two
    ranging frames per exchange repeated once per loop.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if n == 1:
        return Bandwidth(0.0, 0.0, 0.0, 0.0)
    cfg = cfg or ProtocolConfig()
    rate = scans_per_min / 60.0
    production = n * rate * scan_size
    scan_traffic = ranging_exchanges(n) * rate * scan_size
    loop = predict_loop_time(n, cfg)
    position = ranging_exchanges(n) * 2 * (HEADER_BYTES + RANGE_PAYLOAD) / loop
    drone0 = (n - 1) * rate * scan_size + (n - 1) * 2 * (HEADER_BYTES + RANGE_PAYLOAD) / loop
    return Bandwidth(production, scan_traffic, position, drone0)


def supported_swarm_size(capacity_bps: float, scans_per_min: float = 5.0, scan_size: int = 2048,
                         cfg: ProtocolConfig | None = None, n_max: int = 1000) -> int:
    """Largest swarm whose total traffic fits a shared link of ``capacity_bps`` bit/s."""
    best = 1
    for n in range(2, n_max + 1):
        if 8 * predict_bandwidth(n, scans_per_min, scan_size, cfg).swarm_total > capacity_bps:
            break
        best = n
    return best
