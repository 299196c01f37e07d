"""Non-storing RPL: DODAG formation, root-side source routes, route lifetimes.

Parent selection only ever considers candidates whose advertised rank is
below the lowest rank this node has advertised in the current DODAG
version. Descendants always advertise ranks above that floor, so a node can
never choose one of them and the parent graph stays acyclic even when ranks
grow after a parent is lost.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .kernel import SEC, seconds

RANK_INFINITE = 0xFFFF
ROOT_RANK = 0


class NoRoute(LookupError):
    """No unexpired downward route exists to the requested destination."""


@dataclass
class RplConfig:
    objective: str = "hop"
    rank_increment: int = 256
    route_lifetime: int = seconds(300)
    trickle_imin: int = seconds(4)
    trickle_imax: int = seconds(1048)
    trickle_k: int = 10
    dis_interval: int = seconds(10)
    dao_refresh: int = seconds(150)
    # etx only: a new parent must beat the current path cost by this much
    switch_threshold: int = 128

    def validate(self) -> list[str]:
        errors = []
        if self.objective not in ("hop", "etx"):
            errors.append("rpl.objective must be 'hop' or 'etx'")
        if self.rank_increment <= 0:
            errors.append("rpl.rank_increment must be > 0")
        if self.route_lifetime < 0:
            errors.append("rpl.route_lifetime must be >= 0")
        if not 0 < self.trickle_imin <= self.trickle_imax:
            errors.append("rpl.trickle_imin must be > 0 and <= trickle_imax")
        if self.trickle_k < 1:
            errors.append("rpl.trickle_k must be >= 1")
        if self.switch_threshold < 0:
            errors.append("rpl.switch_threshold must be >= 0")
        return errors


@dataclass
class DodagState:
    rank: int = RANK_INFINITE
    preferred_parent: int | None = None
    dodag_version: int = 0
    joined: bool = False


@dataclass(frozen=True)
class DioMessage:
    sender: int
    rank: int
    version: int = 0
    metric: float = 1.0
    objective_function: str = "hop"


@dataclass(frozen=True)
class DaoMessage:
    sender: int
    parent: int
    lifetime: int = seconds(300)
    needs_conf: bool = False


class RootRouteTable:
    """Downward parent pointers held by the root (non-storing mode)."""

    def __init__(self, root: int):
        self.root = root
        self.entries: dict[int, tuple[int, int]] = {}
        self.rejected = 0

    def _parent(self, node: int, now: int) -> int | None:
        entry = self.entries.get(node)
        if entry is None:
            return None
        if now > entry[1]:
            del self.entries[node]
            return None
        return entry[0]

    def root_register_dao(self, dao: DaoMessage, now: int) -> bool:
        """Refresh ``sender -> parent``; a registration that closes a cycle is refused."""
        if dao.sender == self.root or dao.parent == dao.sender:
            self.rejected += 1
            return False
        hop = dao.parent
        seen = set()
        while hop is not None and hop != self.root:
            if hop == dao.sender or hop in seen:
                self.rejected += 1
                return False
            seen.add(hop)
            hop = self._parent(hop, now)
        self.entries[dao.sender] = (dao.parent, now + dao.lifetime)
        return True

    register = root_register_dao

    def lookup(self, node: int, now: int) -> int | None:
        return self._parent(node, now)

    def build_source_route(self, dest: int, now: int) -> list[int]:
        """Hop list ``[root, ..., dest]`` obtained by reversing parent pointers."""
        if dest == self.root:
            return [self.root]
        path = [dest]
        hop = dest
        while hop != self.root:
            parent = self._parent(hop, now)
            if parent is None or parent in path:
                raise NoRoute(dest)
            path.append(parent)
            hop = parent
        path.reverse()
        return path

    def known(self, now: int) -> list[int]:
        return sorted(n for n in list(self.entries) if self._parent(n, now) is not None)


def build_source_route(table: RootRouteTable, dest: int, now: int) -> list[int]:
    return table.build_source_route(dest, now)


class Trickle:
    """Simplified Trickle timer driving DIO emission."""

    def __init__(self, sim, rng, imin: int, imax: int, k: int, fire: Callable[[], None], target=None):
        self.sim = sim
        self.rng = rng
        self.imin = imin
        self.imax = imax
        self.k = k
        self.fire = fire
        self.target = target
        self.interval = imin
        self.counter = 0
        self._fire_ev = None
        self._end_ev = None
        self.running = False

    def start(self) -> None:
        self.running = True
        self.interval = self.imin
        self._begin()

    def stop(self) -> None:
        self.running = False
        for ev in (self._fire_ev, self._end_ev):
            if ev is not None:
                self.sim.cancel(ev)

    def reset(self) -> None:
        if not self.running:
            self.start()
            return
        if self.interval == self.imin:
            return
        self.stop()
        self.start()

    def heard_consistent(self) -> None:
        self.counter += 1

    def _begin(self) -> None:
        self.counter = 0
        half = self.interval // 2
        t = half + self.rng.randrange(max(1, self.interval - half))
        self._fire_ev = self.sim.schedule_in(t, self._on_fire, target=self.target)
        self._end_ev = self.sim.schedule_in(self.interval, self._on_end, target=self.target)

    def _on_fire(self) -> None:
        if self.counter < self.k:
            self.fire()

    def _on_end(self) -> None:
        self.interval = min(self.interval * 2, self.imax)
        self._begin()


class RplAgent:
    """Per-node RPL logic, transport-agnostic.

    The owner supplies callbacks to emit DIO/DAO/DIS and to read the local
    link-quality estimate of a neighbour.
    """

    def __init__(self, node_id: int, sim, rng, cfg: RplConfig, *, is_root: bool,
                 send_dio: Callable[[DioMessage], None],
                 send_dao: Callable[[DaoMessage], None],
                 send_dis: Callable[[], None],
                 link_quality: Callable[[int], float],
                 needs_conf: Callable[[], bool] = lambda: False,
                 on_parent_change: Callable[[int | None, int | None], None] | None = None):
        self.id = node_id
        self.sim = sim
        self.rng = rng
        self.cfg = cfg
        self.is_root = is_root
        self.state = DodagState()
        self.candidates: dict[int, int] = {}
        self.min_rank = RANK_INFINITE
        self._send_dio = send_dio
        self._send_dao = send_dao
        self._send_dis = send_dis
        self.link_quality = link_quality
        self.needs_conf = needs_conf
        self.on_parent_change = on_parent_change
        self.trickle = Trickle(sim, rng, cfg.trickle_imin, cfg.trickle_imax, cfg.trickle_k,
                               self.emit_dio, target=node_id)
        self.parent_changes = 0
        self.dio_sent = 0
        self.dao_sent = 0
        self.dis_sent = 0
        self._dis_ev = None
        self._dao_ev = None
        self.table = RootRouteTable(node_id) if is_root else None

    # -- lifecycle ------------------------------------------------------------
    def boot(self) -> None:
        if self.is_root:
            self.state = DodagState(rank=ROOT_RANK, preferred_parent=None, joined=True)
            self.min_rank = ROOT_RANK
            self.trickle.start()
        else:
            self._schedule_dis(self.rng.randrange(SEC))

    def _schedule_dis(self, delay: int) -> None:
        self._dis_ev = self.sim.schedule_in(delay, self._dis_tick, target=self.id)

    def _dis_tick(self) -> None:
        if self.state.joined:
            return
        self.dis_sent += 1
        self._send_dis()
        self._schedule_dis(self.cfg.dis_interval)

    # -- objective function ---------------------------------------------------
    def cost(self, neighbor: int, rank: int) -> int:
        if rank >= RANK_INFINITE:
            return RANK_INFINITE
        inc = self.cfg.rank_increment
        if self.cfg.objective == "etx":
            q = self.link_quality(neighbor)
            if q <= 0:
                return RANK_INFINITE
            inc = int(round(inc / q))
        return min(RANK_INFINITE, rank + inc)

    def _best(self) -> tuple[int, int] | None:
        best = None
        for cand, rank in self.candidates.items():
            if rank >= self.min_rank:
                continue
            c = self.cost(cand, rank)
            if c >= RANK_INFINITE:
                continue
            key = (c, cand)
            if best is None or key < best:
                best = key
        return best

    # -- messages -------------------------------------------------------------
    def emit_dio(self) -> None:
        if not self.state.joined:
            return
        self.dio_sent += 1
        self._send_dio(DioMessage(self.id, self.state.rank, self.state.dodag_version,
                                  objective_function=self.cfg.objective))

    def on_dio(self, dio: DioMessage) -> tuple[int | None, int | None] | None:
        """Process a DIO; returns ``(old_parent, new_parent)`` when the parent changes."""
        if self.is_root:
            return None
        if dio.version < self.state.dodag_version:
            return None
        if dio.rank >= RANK_INFINITE:
            self.candidates.pop(dio.sender, None)
            if dio.sender == self.state.preferred_parent:
                return self.parent_lost(dio.sender)
            return None
        self.candidates[dio.sender] = dio.rank
        if self.state.joined and dio.sender != self.state.preferred_parent and dio.rank >= self.state.rank:
            self.trickle.heard_consistent()
        return self._reselect()

    def on_dis(self, sender: int | None = None) -> bool:
        """A DIS resets the Trickle timer, which brings the next DIO forward."""
        if not self.state.joined:
            return False
        self.trickle.reset()
        return True

    def parent_lost(self, parent: int) -> tuple[int | None, int | None] | None:
        self.candidates.pop(parent, None)
        if self.state.preferred_parent != parent:
            return None
        return self._reselect(force=True)

    def _reselect(self, force: bool = False):
        st = self.state
        old = st.preferred_parent
        best = self._best()
        if best is None:
            if force or old is None:
                if old is None and not st.joined:
                    return None
                return self._detach(old)
            # current parent no longer eligible by floor but still present: keep it
            rank = self.candidates.get(old)
            if rank is not None:
                st.rank = self.cost(old, rank)
            return None
        cost, cand = best
        if old is not None and not force and old in self.candidates:
            cur = self.cost(old, self.candidates[old])
            margin = self.cfg.switch_threshold if self.cfg.objective == "etx" else 0
            if cand != old and cur < RANK_INFINITE and (cost + margin, cand) >= (cur, old):
                if cur != st.rank:
                    st.rank = cur
                return None
            if cand == old:
                st.rank = cost
                self.min_rank = min(self.min_rank, cost)
                return None
        st.preferred_parent = cand
        st.rank = cost
        self.min_rank = min(self.min_rank, cost)
        was_joined = st.joined
        st.joined = True
        if cand == old:
            return None
        self.parent_changes += 1
        if not was_joined and self._dis_ev is not None:
            self.sim.cancel(self._dis_ev)
        self.trickle.reset()
        self.schedule_dao(0)
        if self.on_parent_change is not None:
            self.on_parent_change(old, cand)
        return old, cand

    def _detach(self, old):
        st = self.state
        st.preferred_parent = None
        st.rank = RANK_INFINITE
        st.joined = False
        self.parent_changes += 1
        self.trickle.stop()
        self.dio_sent += 1
        self._send_dio(DioMessage(self.id, RANK_INFINITE, st.dodag_version))
        self._schedule_dis(self.cfg.dis_interval // 2)
        if self.on_parent_change is not None:
            self.on_parent_change(old, None)
        return old, None

    def schedule_dao(self, delay: int) -> None:
        if self._dao_ev is not None:
            self.sim.cancel(self._dao_ev)
        self._dao_ev = self.sim.schedule_in(delay, self._dao_tick, target=self.id)

    def _dao_tick(self) -> None:
        self._dao_ev = None
        st = self.state
        if not st.joined or st.preferred_parent is None:
            return
        self.dao_sent += 1
        self._send_dao(DaoMessage(self.id, st.preferred_parent, self.cfg.route_lifetime, self.needs_conf()))
        self._dao_ev = self.sim.schedule_in(self.cfg.dao_refresh, self._dao_tick, target=self.id)


def on_dio(agent: RplAgent, dio: DioMessage):
    return agent.on_dio(dio)


def on_dis(agent: RplAgent):
    return agent.on_dis()


def root_register_dao(table: RootRouteTable, dao: DaoMessage, now: int) -> bool:
    return table.root_register_dao(dao, now)


def parents_acyclic(parents: dict[int, int | None]) -> bool:
    """True when following ``parents`` from every node terminates."""
    for start in parents:
        seen = set()
        node = start
        while node is not None:
            if node in seen:
                return False
            seen.add(node)
            node = parents.get(node)
    return True
