"""Fixed-step envelope simulation of the closed loop with runtime observers.

Every step: scenario events are applied, generator EMFs relax towards
their set point (nominal when available, zero otherwise), opening
contactors' residual currents decay exponentially, the controller runs on
its own clock, due contactor commands are applied and the resistive
network is solved. Observers then run over the recorded waveforms.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import NO_EVENT, TICK, BpcuFsm, Observation
from .discrete import BPCU, EventTrace, Scenario, TraceEvent
from .errors import InstabilityError, LivelockError, ValidationError
from .network import NetworkCache
from .requirements import DEFAULT_BANDS
from .topology import Status, Topology


@dataclass(frozen=True)
class SimConfig:
    step_size: float = 1e-5
    duration: float = 2.0
    rms_window: int = 1  # cycles
    regulator_time_constant: float = 20e-3
    controller_period: float = 1e-3
    powered_fraction: float = 0.10
    ready_fraction: float = 0.99
    settling_time: float = 0.1
    threshold_fraction: float | None = None  # None: take it from the controller
    extinguish_fraction: float = 1e-6

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValidationError("step size must be > 0")
        if self.duration < self.step_size:
            raise ValidationError("duration must be at least one step")
        if self.controller_period < self.step_size:
            raise ValidationError("controller period must be at least one step")

    @property
    def n_steps(self):
        return int(round(self.duration / self.step_size))

    @property
    def controller_steps(self):
        return max(1, int(round(self.controller_period / self.step_size)))


# -- waveforms ------------------------------------------------------------------

class WaveformSet:
    """Sampled signals on a common time base.

    Signal names: ``V:<bus>`` bus voltage envelope, ``I:<contactor>``
    contactor current envelope, ``E:<source>`` generator EMF and
    ``K:<contactor>`` conduction flag (1 while closed or while an opening
    contactor still carries more than the threshold current).
    """

    def __init__(self, time, signals: dict):
        self.time = np.asarray(time, dtype=float)
        self.signals = {k: np.asarray(v) for k, v in signals.items()}
        for k, v in self.signals.items():
            if len(v) != len(self.time):
                raise ValidationError(f"signal {k!r} has {len(v)} samples, expected {len(self.time)}")

    @property
    def step(self):
        return float(self.time[1] - self.time[0]) if len(self.time) > 1 else 0.0

    def __getitem__(self, name):
        return self.signals[name]

    def __contains__(self, name):
        return name in self.signals

    def names(self):
        return list(self.signals)

    def instantaneous(self, name, frequency=400.0):
        """Sinusoid with this envelope as its RMS value."""
        return math.sqrt(2.0) * self.signals[name] * np.sin(2 * np.pi * frequency * self.time)

    def windowed_rms(self, name, frequency=400.0, cycles=1):
        """RMS of the reconstructed waveform over trailing windows of whole cycles."""
        v = self.instantaneous(name, frequency) ** 2
        n = max(1, int(round(cycles / frequency / self.step)))
        c = np.concatenate(([0.0], np.cumsum(v)))
        out = np.full(len(v), np.nan)
        out[n - 1:] = np.sqrt((c[n:] - c[:-n]) / n)
        return out

    def to_csv(self, path=None):
        cols = ["time"] + self.names()
        data = np.column_stack([self.time] + [self.signals[k].astype(float) for k in self.names()])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        np.savetxt(buf, data, fmt="%.9g", delimiter=",")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source):
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        header, _, body = text.partition("\n")
        cols = header.split(",")
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        return cls(data[:, 0], {c: data[:, i] for i, c in enumerate(cols) if i})


# -- observer report -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    requirement: str
    start: float
    end: float
    signal: str
    detail: str = ""

    def to_dict(self):
        return {"requirement": self.requirement, "start": self.start, "end": self.end,
                "signal": self.signal, "detail": self.detail}


@dataclass
class ObserverReport:
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def empty(self):
        return not self.violations

    def by_requirement(self, rid):
        return [v for v in self.violations if v.requirement == rid]

    def to_dict(self):
        grouped = {}
        for v in self.violations:
            grouped.setdefault(v.requirement, []).append(v.to_dict())
        return {"violations": grouped, "notes": list(self.notes)}

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _intervals(mask):
    """(start index, end index exclusive) of the runs of True in ``mask``."""
    m = np.asarray(mask, dtype=np.int8)
    if not m.any():
        return []
    d = np.diff(np.concatenate(([0], m, [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def _bus_nominal(topology, bus, bands):
    return bands[topology[bus].bus_class].nominal


def observe_voltage_bands(w: WaveformSet, bands, settling_time, topology: Topology | None = None,
                          powered_fraction=0.10, bus_classes=None):
    """Band violations of powered buses after ``settling_time``.

    ``bus_classes`` maps bus id to "AC"/"DC"; without it the class comes
    from ``topology``.
    """
    if settling_time >= w.time[-1] + w.step:
        raise ValidationError("settling time must be shorter than the run")
    bands = bands or DEFAULT_BANDS
    out = []
    late = w.time >= settling_time - 1e-12
    for name in w.names():
        if not name.startswith("V:"):
            continue
        bus = name[2:]
        cls = (bus_classes or {}).get(bus) or topology[bus].bus_class
        band = bands[cls]
        v = w[name]
        powered = v >= powered_fraction * band.nominal
        bad = late & powered & ((v < band.low) | (v > band.high))
        for s, e in _intervals(bad):
            seg = v[s:e]
            out.append(Violation("R2", float(w.time[s]), float(w.time[e - 1] + w.step), name,
                                 f"{cls} band {band.low:g}..{band.high:g} V left "
                                 f"(min {seg.min():.6g}, max {seg.max():.6g})"))
    return out


def observe_tmax(w: WaveformSet, topology: Topology, bands=None, powered_fraction=0.10):
    """Unpowered intervals on essential buses longer than their ``tMax``."""
    bands = bands or DEFAULT_BANDS
    out = []
    for bus in topology.essential_buses:
        t_max = topology[bus].t_max
        if t_max is None:
            raise ValidationError(f"essential bus {bus!r} has no tMax", bus)
        v = w[f"V:{bus}"]
        unpowered = v < powered_fraction * _bus_nominal(topology, bus, bands)
        for s, e in _intervals(unpowered):
            length = (e - s) * w.step
            if length > t_max + 1e-12:
                out.append(Violation("TMAX", float(w.time[s]), float(w.time[s] + length),
                                     f"V:{bus}",
                                     f"unpowered for {length * 1e3:.6g} ms > tMax {t_max * 1e3:g} ms"))
    return out


def observe_paralleling(w: WaveformSet, topology: Topology, powered_fraction=0.10):
    """R1 in transient form: two energised sources conducting onto one AC bus.

    A source is energised while its EMF exceeds ``powered_fraction`` of its
    rating; a contactor conducts while its ``K:`` flag is set. Overlapping
    bus-level violations form a single interval.
    """
    contactors = topology.contactors
    sources = [s for s in topology.sources if topology[s].is_ac]
    k = np.column_stack([w[f"K:{c}"] > 0.5 for c in contactors]) if contactors else \
        np.zeros((len(w.time), 0), bool)
    e = np.column_stack([w[f"E:{s}"] >= powered_fraction * topology[s].rated_voltage
                         for s in sources])
    pattern = np.concatenate([k, e], axis=1)
    change = np.ones(len(w.time), bool)
    change[1:] = np.any(pattern[1:] != pattern[:-1], axis=1)
    starts = np.flatnonzero(change)
    bad = np.zeros(len(w.time), bool)
    details = {}
    paths = {b: topology.enumerate_paths(b) for b in topology.ac_buses}
    for i, s in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else len(w.time)
        conducting = {c for c, on in zip(contactors, k[s]) if on}
        energised = {src for src, on in zip(sources, e[s]) if on}
        hits = []
        for bus, ps in paths.items():
            fed = sorted({p.source for p in ps
                          if p.source in energised and p.contactors <= conducting})
            if len(fed) >= 2:
                hits.append((bus, fed))
        if hits:
            bad[s:end] = True
            details[s] = hits
    out = []
    for s, e_ in _intervals(bad):
        hits = details.get(s) or next(v for k_, v in sorted(details.items()) if k_ >= s)
        buses = ",".join(b for b, _ in hits)
        srcs = "+".join(sorted({x for _, fed in hits for x in fed}))
        out.append(Violation("R1", float(w.time[s]), float(w.time[e_ - 1] + w.step),
                             buses, f"sources {srcs} paralleled"))
    return out


# -- simulator ---------------------------------------------------------------------

@dataclass
class _Switch:
    state: str = "open"  # open | closed | opening
    t_open: int = 0
    i0: float = 0.0
    safe: bool = True
    stuck: bool = False


@dataclass
class HybridResult:
    waveforms: WaveformSet
    report: ObserverReport
    trace: EventTrace


def run_hybrid(topology: Topology, fsm: BpcuFsm, scenario: Scenario, cfg: SimConfig | None = None,
               bands=None, quiesce_bound=64) -> HybridResult:
    cfg = cfg or SimConfig()
    bands = bands or DEFAULT_BANDS
    scenario.validate(topology)
    fsm.validate(topology)
    frac = cfg.threshold_fraction
    if frac is None:
        frac = fsm.refinement.current_threshold_fraction if fsm.refinement else 0.10

    dt = cfg.step_size
    n_steps = cfg.n_steps
    period = cfg.controller_steps
    sources = list(topology.sources)
    contactors = list(topology.contactors)
    buses = list(topology.buses)
    rated = [topology[s].rated_voltage for s in sources]
    alpha = -math.expm1(-dt / cfg.regulator_time_constant)
    decay_tau = {c: topology[c].decay_time_constant for c in contactors}
    delay_steps = {(v, c): int(round(getattr(topology[c], f"{v}_delay") / dt))
                   for c in contactors for v in ("open", "close")}

    status = scenario.status_map(topology)
    emf = [rated[i] if status[s] is Status.AVAILABLE else 0.0 for i, s in enumerate(sources)]
    switches = {c: _Switch() for c in contactors}
    shed: set = set()
    loc = fsm.initial
    pending: list = []
    trace = [TraceEvent(0, s, st.value, "initial") for s, st in sorted(status.items())]
    events = sorted(scenario.events)
    ev_steps = [max(0, math.ceil(ev.time / dt - 1e-9)) for ev in events]
    ev_pos = 0
    report = ObserverReport()
    unfired = [ev for ev, k in zip(events, ev_steps) if k >= n_steps]
    for ev in unfired:
        report.notes.append(f"event {ev.label()} at t={ev.time:g} s lies beyond the "
                            f"{cfg.duration:g} s run and never fired")

    cache = NetworkCache(topology, bands)
    names = ([f"V:{b}" for b in buses] + [f"I:{c}" for c in contactors]
             + [f"E:{s}" for s in sources] + [f"K:{c}" for c in contactors])
    data = np.zeros((n_steps, len(names)))
    nb, nc, ns = len(buses), len(contactors), len(sources)
    last_current = {c: 0.0 for c in contactors}
    net = None
    net_key = None
    contactor_set = tuple(contactors)

    def record(k, actor, event, payload=""):
        trace.append(TraceEvent(k, actor, event, payload))

    for n in range(n_steps):
        # 1. scenario events
        while ev_pos < len(events) and ev_steps[ev_pos] <= n:
            ev = events[ev_pos]
            ev_pos += 1
            if ev.component in switches:
                switches[ev.component].stuck = True
            else:
                status[ev.component] = ev.status
            record(n, ev.component, ev.status.value)
        # 2. regulation
        if n:
            for i, s in enumerate(sources):
                target = rated[i] if status[s] is Status.AVAILABLE else 0.0
                emf[i] += (target - emf[i]) * alpha
        # 3. residual current of opening contactors
        for c, sw in switches.items():
            if sw.state == "opening":
                i_now = sw.i0 * math.exp(-(n - sw.t_open) * dt / decay_tau[c])
                if not sw.safe and i_now <= frac * sw.i0:
                    sw.safe = True
                    record(n, c, "current-below-threshold")
                if i_now <= cfg.extinguish_fraction * sw.i0:
                    sw.state = "open"
        # 4. controller
        if n % period == 0:
            seen = {}
            for i, s in enumerate(sources):
                st = status[s]
                if st is Status.AVAILABLE and emf[i] < cfg.ready_fraction * rated[i]:
                    st = Status.OFF
                seen[s] = st
            closed_now = frozenset(c for c, sw in switches.items() if sw.state == "closed")
            safe_now = frozenset(c for c, sw in switches.items()
                                 if sw.state == "open" or (sw.state == "opening" and sw.safe))
            obs = Observation(tuple(sorted(seen.items())), contactor_set, closed_now, safe_now)
            event = TICK
            for _ in range(quiesce_bound):
                nxt, actions = fsm.step(loc, event, obs)
                if nxt == loc and not actions and event != TICK:
                    break
                if nxt != loc:
                    record(n, BPCU, "transition", f"{loc}->{nxt}")
                for a in actions:
                    record(n, BPCU, str(a))
                    if a.verb in ("open", "close"):
                        pending.append((n + delay_steps[(a.verb, a.target)], a.verb, a.target))
                    elif a.verb == "shed" and a.target not in shed:
                        shed.add(a.target)
                        record(n, a.target, "shed")
                    elif a.verb == "restore" and a.target in shed:
                        shed.discard(a.target)
                        record(n, a.target, "restored")
                loc = nxt
                event = NO_EVENT
            else:
                raise LivelockError(f"controller did not quiesce at t={n * dt:g} s",
                                    EventTrace(trace))
        # 5. due commands
        if pending:
            keep = []
            for due, verb, c in pending:
                if due > n:
                    keep.append((due, verb, c))
                    continue
                sw = switches[c]
                if verb == "close" and sw.state != "closed" and not sw.stuck:
                    sw.state, sw.safe = "closed", False
                    record(n, c, "closed")
                elif verb == "open" and sw.state == "closed":
                    sw.state, sw.t_open, sw.i0 = "opening", n, abs(last_current[c])
                    sw.safe = sw.i0 == 0.0
                    record(n, c, "opened")
            pending = keep
        for c, sw in switches.items():
            if sw.stuck and sw.state == "closed":
                sw.state, sw.t_open, sw.i0 = "opening", n, abs(last_current[c])
                sw.safe = sw.i0 == 0.0
                record(n, c, "opened", "failed")
        # 6. network
        closed = frozenset(c for c, sw in switches.items() if sw.state == "closed")
        key = (closed, frozenset(shed))
        if key != net_key:
            net = cache.get(*key)
            net_key = key
            A = net.linear_map()
            bus_rows = [net.node_index.get(b) for b in buses]
            edge_rows = {e.contactor: len(net.nodes) + j for j, e in enumerate(net.live_edges)}
        x = A @ emf
        row = data[n]
        for j, r in enumerate(bus_rows):
            row[j] = x[r] if r is not None else 0.0
        for j, c in enumerate(contactors):
            sw = switches[c]
            if sw.state == "closed":
                r = edge_rows.get(c)
                cur = abs(x[r]) if r is not None else 0.0
                last_current[c] = cur
                row[nb + j] = cur
                row[nb + nc + ns + j] = 1.0
            elif sw.state == "opening":
                cur = sw.i0 * math.exp(-(n - sw.t_open) * dt / decay_tau[c])
                last_current[c] = 0.0
                row[nb + j] = cur
                row[nb + nc + ns + j] = 0.0 if sw.safe else 1.0
            else:
                last_current[c] = 0.0
        row[nb + nc:nb + nc + ns] = emf
        if not np.isfinite(row).all():
            raise InstabilityError(f"non-finite value at t={n * dt:g} s", n * dt)

    time_axis = np.arange(n_steps) * dt
    waves = WaveformSet(time_axis, {name: data[:, j] for j, name in enumerate(names)})
    classes = {b: topology[b].bus_class for b in buses}
    report.violations.extend(observe_paralleling(waves, topology, cfg.powered_fraction))
    if cfg.settling_time < cfg.duration:
        report.violations.extend(observe_voltage_bands(waves, bands, cfg.settling_time, topology,
                                                       cfg.powered_fraction, classes))
    report.violations.extend(observe_tmax(waves, topology, bands, cfg.powered_fraction))
    report.violations.sort(key=lambda v: (v.start, v.requirement, v.signal))
    return HybridResult(waves, report, EventTrace(trace))


def crossing_times(trace: EventTrace, contactor, dt):
    """(open step time, below-threshold time) pairs for ``contactor``."""
    out, opened = [], None
    for e in trace:
        if e.actor == contactor and e.event == "opened":
            opened = e.time
        elif e.actor == contactor and e.event == "current-below-threshold" and opened is not None:
            out.append((opened * dt, e.time * dt))
            opened = None
    return out
