"""EPC Gen 2 link timing and the inventory-round state machine.

Reader commands are PIE encoded: a data-0 lasts one Tari, a data-1 lasts
``data1_tari`` Tari. A Query is led by the full preamble (delimiter, data-0,
RTcal, TRcal); every other command by the frame-sync (delimiter, data-0,
RTcal). Tag replies last (preamble symbols + bits + dummy bit) * M / BLF.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import Pose2D
from .rflink import EncodingScheme, LinkSample, snr_to_bit_error_rate

LinkFn = Callable[[float], LinkSample]


class Command(str, enum.Enum):
    Query = "Query"
    QueryRep = "QueryRep"
    QueryAdjust = "QueryAdjust"
    ACK = "ACK"
    NAK = "NAK"
    ReqRN = "ReqRN"
    Read = "Read"


class Session(str, enum.Enum):
    S0 = "S0"
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"


class TargetMode(str, enum.Enum):
    single_target = "single_target"
    dual_target = "dual_target"


class Flag(str, enum.Enum):
    A = "A"
    B = "B"

    def flipped(self) -> "Flag":
        return Flag.B if self is Flag.A else Flag.A


class Result(str, enum.Enum):
    success = "success"
    collision = "collision"
    idle_slot = "idle_slot"
    link_margin_failure = "link_margin_failure"
    truncated_by_exit = "truncated_by_exit"
    ack_timeout = "ack_timeout"


@dataclass(frozen=True)
class Gen2Params:
    tari_s: float = 12.5e-6
    data1_tari: float = 2.0
    blf_Hz: float = 320e3
    dr: float = 64.0 / 3.0
    encoding: EncodingScheme = EncodingScheme.FM0
    # None: pilot tone on for Miller, off for FM0
    trext: bool | None = None
    q_init: int = 4
    q_c: float = 0.3
    q_adapt: bool = True
    session: Session = Session.S0
    target_mode: TargetMode = TargetMode.dual_target
    # None: nominal values max(RTcal, 10/BLF), 10/BLF and 10/BLF
    t1_s: float | None = None
    t2_s: float | None = None
    t3_s: float | None = None
    delimiter_s: float = 12.5e-6
    # PC + 96-bit EPC + CRC-16
    epc_reply_bits: int = 128
    rn16_bits: int = 16
    persistence_s: float = 2.0

    def __post_init__(self):
        tol = 1e-12
        if not 6.25e-6 - tol <= self.tari_s <= 25e-6 + tol:
            raise ValueError("tari_s must lie in [6.25, 25] us")
        if not 1.5 - tol <= self.data1_tari <= 2.0 + tol:
            raise ValueError("data1_tari must lie in [1.5, 2]")
        if not (abs(self.dr - 8.0) < 1e-9 or abs(self.dr - 64.0 / 3.0) < 1e-9):
            raise ValueError("dr must be 8 or 64/3")
        if not 40e3 - 1e-6 <= self.blf_Hz <= 640e3 + 1e-6:
            raise ValueError("blf_Hz must lie in [40, 640] kHz")
        if not 1.1 * self.rtcal_s - tol <= self.trcal_s <= 3.0 * self.rtcal_s + tol:
            raise ValueError("trcal (dr/blf) must lie in [1.1, 3] x rtcal")
        if not 0 <= self.q_init <= 15:
            raise ValueError("q_init must lie in 0..15")
        if not 0.0 < self.q_c <= 0.5:
            raise ValueError("q_c must lie in (0, 0.5]")
        nominal_t1 = max(self.rtcal_s, 10.0 / self.blf_Hz)
        if not 0.75 * nominal_t1 - 2e-6 <= self.t1 <= 1.25 * nominal_t1 + 2e-6:
            raise ValueError("t1_s is outside the tolerance around max(RTcal, 10/BLF)")
        if not 3.0 / self.blf_Hz - tol <= self.t2 <= 20.0 / self.blf_Hz + tol:
            raise ValueError("t2_s must lie in [3, 20] / BLF")
        if self.t3 < 0 or self.delimiter_s <= 0:
            raise ValueError("t3_s must be >= 0 and delimiter_s > 0")
        if self.epc_reply_bits <= 0 or self.rn16_bits <= 0:
            raise ValueError("reply bit counts must be > 0")

    @property
    def data0_s(self) -> float:
        return self.tari_s

    @property
    def data1_s(self) -> float:
        return self.data1_tari * self.tari_s

    @property
    def rtcal_s(self) -> float:
        return self.data0_s + self.data1_s

    @property
    def trcal_s(self) -> float:
        return self.dr / self.blf_Hz

    @property
    def tpri_s(self) -> float:
        return 1.0 / self.blf_Hz

    @property
    def t1(self) -> float:
        return self.t1_s if self.t1_s is not None else max(self.rtcal_s, 10.0 / self.blf_Hz)

    @property
    def t2(self) -> float:
        return self.t2_s if self.t2_s is not None else 10.0 / self.blf_Hz

    @property
    def t3(self) -> float:
        return self.t3_s if self.t3_s is not None else 10.0 / self.blf_Hz

    @property
    def pilot_tone(self) -> bool:
        if self.trext is None:
            return self.encoding is not EncodingScheme.FM0
        return self.trext


# --- bit-level command construction ------------------------------------------


def crc5(bits: str) -> str:
    """CRC-5 (x^5 + x^3 + 1, preset 01001) as used by Query."""
    reg = 0b01001
    for b in bits:
        msb = (reg >> 4) & 1
        reg = (reg << 1) & 0x1F
        if msb ^ (b == "1"):
            reg ^= 0b01001
    return format(reg, "05b")


def crc16(bits: str) -> str:
    """CRC-16/CCITT (preset 0xFFFF), transmitted ones-complemented."""
    reg = 0xFFFF
    for b in bits:
        msb = (reg >> 15) & 1
        reg = (reg << 1) & 0xFFFF
        if msb ^ (b == "1"):
            reg ^= 0x1021
    return format(reg ^ 0xFFFF, "016b")


def _ebv(value: int) -> str:
    groups = []
    while True:
        groups.append(value & 0x7F)
        value >>= 7
        if not value:
            break
    groups.reverse()
    return "".join(("1" if i < len(groups) - 1 else "0") + format(g, "07b") for i, g in enumerate(groups))


_M_BITS = {EncodingScheme.FM0: "00", EncodingScheme.Miller2: "01", EncodingScheme.Miller4: "10",
           EncodingScheme.Miller8: "11"}
_SESSION_BITS = {Session.S0: "00", Session.S1: "01", Session.S2: "10", Session.S3: "11"}
_UPDN_BITS = {0: "000", 1: "110", -1: "011"}


def command_bits(
    command: Command,
    p: Gen2Params,
    *,
    q: int | None = None,
    target: Flag = Flag.A,
    rn16: int = 0,
    updn: int = 0,
    membank: int = 3,
    word_ptr: int = 0,
    word_count: int = 1,
) -> str:
    command = Command(command)
    sess = _SESSION_BITS[p.session]
    if command is Command.Query:
        qv = p.q_init if q is None else q
        body = ("1000" + ("1" if p.dr > 8 else "0") + _M_BITS[p.encoding]
                + ("1" if p.pilot_tone else "0") + "00" + sess
                + ("0" if target is Flag.A else "1") + format(qv, "04b"))
        return body + crc5(body)
    if command is Command.QueryRep:
        return "00" + sess
    if command is Command.QueryAdjust:
        return "1001" + sess + _UPDN_BITS[updn]
    if command is Command.ACK:
        return "01" + format(rn16, "016b")
    if command is Command.NAK:
        return "11000000"
    if command is Command.ReqRN:
        body = "11000001" + format(rn16, "016b")
        return body + crc16(body)
    if command is Command.Read:
        body = ("11000010" + format(membank, "02b") + _ebv(word_ptr) + format(word_count, "08b")
                + format(rn16, "016b"))
        return body + crc16(body)
    raise ValueError(f"unknown command {command}")


def framing_duration(command: Command, p: Gen2Params) -> float:
    base = p.delimiter_s + p.data0_s + p.rtcal_s
    return base + p.trcal_s if Command(command) is Command.Query else base


def command_duration(command: Command, p: Gen2Params, bits: str | None = None, **fields) -> float:
    """Air time of a reader command; ``bits`` overrides the encoded payload."""
    if bits is None:
        bits = command_bits(command, p, **fields)
    ones = bits.count("1")
    return framing_duration(command, p) + ones * p.data1_s + (len(bits) - ones) * p.data0_s


def tag_preamble_symbols(p: Gen2Params) -> int:
    if p.encoding is EncodingScheme.FM0:
        return 18 if p.pilot_tone else 6
    return 22 if p.pilot_tone else 10


def tag_reply_duration(bits: int, p: Gen2Params, dummy: bool = True) -> float:
    if bits <= 0:
        raise ValueError("bits must be > 0")
    return (tag_preamble_symbols(p) + bits + (1 if dummy else 0)) * p.encoding.M / p.blf_Hz


def read_reply_bits(word_count: int) -> int:
    # header bit, data words, handle, CRC-16
    return 1 + 16 * word_count + 16 + 16


HANDLE_REPLY_BITS = 32


def reply_success_probability(snr_dB: float, bits: int, encoding: EncodingScheme) -> float:
    if snr_dB == math.inf:
        return 1.0
    if snr_dB == -math.inf:
        return 0.0
    ber = snr_to_bit_error_rate(snr_dB, encoding)
    return (1.0 - ber) ** bits


# --- state and outcomes --------------------------------------------------------


@dataclass
class TagSessionState:
    inventoried_flag: Flag = Flag.A
    powered: bool = False
    in_round: bool = False
    slot_counter: int = -1
    flag_set_time: float = -math.inf
    power_lost_time: float = -math.inf


@dataclass
class InventoryOutcome:
    result: Result
    t_start: float
    t_end: float
    commands_exchanged: list[tuple[str, float]] = field(default_factory=list)
    snr_dB: float | None = None
    rn16: int | None = None

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ReadEvent:
    t: float
    tag_id: str
    epc: str
    round_index: int
    snr_at_read_dB: float
    vehicle_pose_at_read: Pose2D | None = None


class _Exchange:
    """Runs a fixed sequence of reader/tag steps against a link, stopping at the first failure."""

    def __init__(self, p: Gen2Params, link: LinkFn, t: float, rng: np.random.Generator):
        self.p = p
        self.link = link
        self.t0 = t
        self.t = t
        self.rng = rng
        self.log: list[tuple[str, float]] = []
        self.failure: Result | None = None
        self.last_snr: float | None = None
        self._checkpoints = getattr(link, "checkpoints", None)
        self._last = None

    def _sample(self, t: float) -> LinkSample:
        if self._last is not None and self._last.t == t:
            return self._last
        s = self.link(t)
        self._last = s
        return s

    def _powered_over(self, t0: float, t1: float) -> Result | None:
        times = [t0]
        if self._checkpoints is not None:
            times.extend(self._checkpoints(t0, t1))
        times.append(t1)
        for tt in times:
            s = self._sample(tt)
            if not s.tag_powered:
                return Result.link_margin_failure if s.in_beam else Result.truncated_by_exit
        return None

    def _step(self, name: str, dur: float) -> bool:
        if self.failure is not None:
            return False
        fail = self._powered_over(self.t, self.t + dur)
        self.log.append((name, dur))
        self.t += dur
        if fail is not None:
            self.failure = fail
            self._close()
            return False
        return True

    def _close(self):
        self.log.append(("T2", self.p.t2))
        self.t += self.p.t2

    def reader(self, command: Command, **fields) -> bool:
        return self._step(Command(command).value, command_duration(command, self.p, **fields))

    def gap(self, name: str, dur: float) -> bool:
        return self._step(name, dur)

    def reply(self, name: str, bits: int, decode_failure: Result) -> bool:
        if self.failure is not None:
            return False
        dur = tag_reply_duration(bits, self.p)
        t_mid = self.t + 0.5 * dur
        if not self._step(name, dur):
            return False
        mid = self.link(t_mid)
        self.last_snr = mid.snr_dB
        ok = mid.reader_detects and self.rng.random() < reply_success_probability(
            mid.snr_dB, bits, self.p.encoding)
        if not ok:
            self.failure = decode_failure
            self._close()
        return ok

    def outcome(self, rn16: int | None = None) -> InventoryOutcome:
        return InventoryOutcome(self.failure or Result.success, self.t0, self.t, self.log, self.last_snr, rn16)


def _singulate(ex: _Exchange, first: Command, q: int, target: Flag, rn16: int, updn: int = 0) -> bool:
    p = ex.p
    if first is Command.Query:
        ok = ex.reader(first, q=q, target=target)
    elif first is Command.QueryAdjust:
        ok = ex.reader(first, updn=updn)
    else:
        ok = ex.reader(first)
    return (ok
            and ex.gap("T1", p.t1)
            and ex.reply("RN16", p.rn16_bits, Result.ack_timeout)
            and ex.gap("T2", p.t2)
            and ex.reader(Command.ACK, rn16=rn16)
            and ex.gap("T1", p.t1)
            and ex.reply("EPC", p.epc_reply_bits, Result.link_margin_failure))


def _after_attempt(state: TagSessionState, p: Gen2Params, result: Result, t: float) -> TagSessionState:
    if result is Result.success:
        return replace(state, inventoried_flag=state.inventoried_flag.flipped(), in_round=False,
                       slot_counter=-1, flag_set_time=t, powered=True)
    if result in (Result.link_margin_failure, Result.truncated_by_exit) and state.powered:
        return _power_loss(state, p, t)
    # the tag keeps its flag and waits for the next Query/QueryAdjust
    return replace(state, slot_counter=-1)


def _power_loss(state: TagSessionState, p: Gen2Params, t: float) -> TagSessionState:
    flag = Flag.A if p.session is Session.S0 else state.inventoried_flag
    return replace(state, powered=False, in_round=False, slot_counter=-1, inventoried_flag=flag,
                   power_lost_time=t)


def singulation_attempt(
    tag_state: TagSessionState,
    p: Gen2Params,
    link_quality_fn: LinkFn,
    t_now: float,
    rng: np.random.Generator,
    first_command: Command = Command.Query,
    q: int | None = None,
    target: Flag | None = None,
    rn16: int | None = None,
) -> tuple[InventoryOutcome, TagSessionState]:
    """One slot in which this tag is the only responder.

    Query/QueryRep -> T1 -> RN16 -> T2 -> ACK -> T1 -> EPC -> T2. Each tag
    reply decodes with probability (1 - BER)^bits at the SNR of its
    midpoint. Losing power (in beam) gives link_margin_failure; leaving the
    beam gives truncated_by_exit.
    """
    if rn16 is None:
        rn16 = int(rng.integers(0, 1 << 16))
    ex = _Exchange(p, link_quality_fn, t_now, rng)
    tgt = tag_state.inventoried_flag if target is None else target
    if _singulate(ex, Command(first_command), p.q_init if q is None else q, tgt, rn16):
        ex.gap("T2", p.t2)
    out = ex.outcome(rn16)
    return out, _after_attempt(tag_state, p, out.result, out.t_end)


def singulation_oracle_duration(p: Gen2Params, q: int, target: Flag, rn16: int) -> float:
    """Noiseless Query-led singulation time from the command/reply tables."""
    return (command_duration(Command.Query, p, q=q, target=target) + p.t1
            + tag_reply_duration(p.rn16_bits, p) + p.t2
            + command_duration(Command.ACK, p, rn16=rn16) + p.t1
            + tag_reply_duration(p.epc_reply_bits, p) + p.t2)


# --- inventory -------------------------------------------------------------------


@dataclass
class TagStreams:
    """Independent random streams owned by one tag."""

    slots: np.random.Generator
    bits: np.random.Generator
    rn16: np.random.Generator


def _spawn_streams(rng, n: int) -> list[TagStreams]:
    if isinstance(rng, (int, np.integer)):
        ss = np.random.SeedSequence(int(rng))
    elif isinstance(rng, np.random.SeedSequence):
        ss = rng
    else:
        ss = np.random.SeedSequence(int(rng.integers(0, 2**63)))
    out = []
    for child in ss.spawn(n):
        a, b, c = child.spawn(3)
        out.append(TagStreams(np.random.default_rng(a), np.random.default_rng(b), np.random.default_rng(c)))
    return out


class Inventory:
    """Reader running back-to-back Q-algorithm inventory rounds.

    ``active_fn(t)`` may restrict which tags are worth sampling at time t
    (tags outside it are treated as out of beam). ``idle_until(t)`` may
    return the next time any tag can respond; the reader then fast-forwards
    through identical empty rounds.
    """

    def __init__(
        self,
        p: Gen2Params,
        links: Sequence[LinkFn],
        streams: Sequence[TagStreams],
        tag_ids: Sequence[str] | None = None,
        epcs: Sequence[str] | None = None,
        active_fn: Callable[[float], Sequence[int]] | None = None,
        idle_until: Callable[[float], float] | None = None,
    ):
        self.p = p
        self.links = list(links)
        self.streams = list(streams)
        n = len(self.links)
        self.tag_ids = list(tag_ids) if tag_ids is not None else [f"tag{i}" for i in range(n)]
        self.epcs = list(epcs) if epcs is not None else [""] * n
        self.states = [TagSessionState() for _ in range(n)]
        self.active_fn = active_fn
        self.idle_until = idle_until
        self.qfp = float(p.q_init)
        self.target = Flag.A
        self.round_index = 0
        self.events: list[ReadEvent] = []
        self.outcomes: list[InventoryOutcome] = []
        self.histogram: dict[str, int] = {r.value: 0 for r in Result}
        self.round_starts: list[float] = []
        self._all = list(range(n))
        # tags whose state can change while out of view
        self._watch: set[int] = set()
        self._query_cache: dict = {}

    # durations
    def _query(self, q: int, target: Flag) -> float:
        key = (q, target)
        if key not in self._query_cache:
            self._query_cache[key] = command_duration(Command.Query, self.p, q=q, target=target)
        return self._query_cache[key]

    def _cmd(self, command: Command, q: int, updn: int) -> float:
        if command is Command.Query:
            return self._query(q, self.target)
        return command_duration(command, self.p, updn=updn)

    def _active(self, t: float) -> Sequence[int]:
        return self.active_fn(t) if self.active_fn is not None else self._all

    def _refresh(self, t: float, active: Sequence[int]):
        """Update power and flag persistence for tags in view or with pending state."""
        p = self.p
        act = set(active)
        for i in sorted(act | self._watch):
            st = self.states[i]
            powered = i in act and self.links[i](t).tag_powered
            if st.powered and not powered:
                st = _power_loss(st, p, t)
            elif not st.powered and powered:
                st = replace(st, powered=True)
            if st.inventoried_flag is Flag.B:
                if p.session is Session.S1 and t - st.flag_set_time > p.persistence_s:
                    st = replace(st, inventoried_flag=Flag.A)
                elif (p.session in (Session.S2, Session.S3) and not st.powered
                      and t - st.power_lost_time > p.persistence_s):
                    st = replace(st, inventoried_flag=Flag.A)
            self.states[i] = st
            if st.powered or st.inventoried_flag is Flag.B:
                self._watch.add(i)
            else:
                self._watch.discard(i)

    def _record(self, outcome: InventoryOutcome):
        self.histogram[outcome.result.value] += 1

    def _fast_forward(self, t: float, t_stop: float) -> float:
        """Step through empty Q=0 rounds without sampling links while no tag can respond."""
        if self.idle_until is None or self.qfp != 0.0:
            return t
        t_next = min(self.idle_until(t), t_stop)
        p = self.p
        while t < t_next:
            self.round_index += 1
            self.round_starts.append(t)
            d = self._query(0, self.target)
            out = InventoryOutcome(Result.idle_slot, t, t + d + p.t1 + p.t3,
                                   [(Command.Query.value, d), ("T1", p.t1), ("T3", p.t3)])
            self._record(out)
            self.outcomes.append(out)
            t = out.t_end
            if p.target_mode is TargetMode.dual_target:
                self.target = self.target.flipped()
        return t

    def run(self, t_start: float, t_stop: float) -> list[ReadEvent]:
        """Run rounds until ``t_stop``; the round in progress at t_stop completes."""
        t = t_start
        while t < t_stop:
            t = self._fast_forward(t, t_stop)
            if t >= t_stop:
                break
            t = self._round(t, t_stop)
        self.t_end = t
        return self.events

    def _round(self, t: float, t_stop: float) -> float:
        p = self.p
        self.round_index += 1
        self.round_starts.append(t)
        target = self.target
        active = self._active(t)
        self._refresh(t, active)
        q = int(round(self.qfp))
        participants = [i for i in active
                        if self.states[i].powered and self.states[i].inventoried_flag is target]
        for i in participants:
            self.states[i] = replace(self.states[i], in_round=True,
                                     slot_counter=int(self.streams[i].slots.integers(0, 1 << q)))
        first = Command.Query
        updn = 0
        successes = 0
        busy = False
        slot = 0
        while slot < (1 << q):
            responders = [i for i in participants
                          if self.states[i].in_round and self.states[i].slot_counter == 0]
            if not responders:
                d = self._cmd(first, q, updn)
                out = InventoryOutcome(Result.idle_slot, t, t + d + p.t1 + p.t3,
                                       [(first.value, d), ("T1", p.t1), ("T3", p.t3)])
                if p.q_adapt:
                    self.qfp = max(0.0, self.qfp - p.q_c)
            elif len(responders) > 1:
                d = self._cmd(first, q, updn)
                r = tag_reply_duration(p.rn16_bits, p)
                out = InventoryOutcome(Result.collision, t, t + d + p.t1 + r + p.t2,
                                       [(first.value, d), ("T1", p.t1), ("RN16", r), ("T2", p.t2)])
                for i in responders:
                    self.states[i] = replace(self.states[i], slot_counter=-1)
                if p.q_adapt:
                    self.qfp = min(15.0, self.qfp + p.q_c)
                busy = True
            else:
                i = responders[0]
                s = self.streams[i]
                rn16 = int(s.rn16.integers(0, 1 << 16))
                ex = _Exchange(p, self.links[i], t, s.bits)
                if _singulate(ex, first, q, target, rn16, updn):
                    ex.gap("T2", p.t2)
                out = ex.outcome(rn16)
                self.states[i] = _after_attempt(self.states[i], p, out.result, out.t_end)
                busy = True
                if out.result is Result.success:
                    successes += 1
                    self.events.append(ReadEvent(out.t_end, self.tag_ids[i], self.epcs[i],
                                                 self.round_index, out.snr_dB))
            self._record(out)
            self.outcomes.append(out)
            t = out.t_end
            # QueryRep decrements every in-round counter
            for j in participants:
                st = self.states[j]
                if st.in_round and st.slot_counter > 0:
                    self.states[j] = replace(st, slot_counter=st.slot_counter - 1)
            slot += 1
            self._refresh(t, self._active(t))
            if t >= t_stop:
                break
            new_q = int(round(self.qfp))
            if p.q_adapt and new_q != q and slot < (1 << q):
                updn = 1 if new_q > q else -1
                q = new_q
                first = Command.QueryAdjust
                slot = 0
                for j in participants:
                    st = self.states[j]
                    if st.in_round and st.powered and st.inventoried_flag is target:
                        self.states[j] = replace(st, slot_counter=int(self.streams[j].slots.integers(0, 1 << q)))
                continue
            first = Command.QueryRep
            updn = 0
        for j in participants:
            self.states[j] = replace(self.states[j], in_round=False, slot_counter=-1)
        if p.target_mode is TargetMode.dual_target and (successes > 0 or not busy):
            self.target = target.flipped()
        return t


def run_inventory(
    tags: Sequence,
    p: Gen2Params,
    links: Sequence[LinkFn],
    t_window: tuple[float, float],
    rng,
) -> list[ReadEvent]:
    """Inventory ``tags`` over ``t_window``; ``tags`` holds tag ids or objects with ``tag_id``."""
    ids = [getattr(t, "tag_id", t) for t in tags]
    epcs = [getattr(t, "epc_hex", "") for t in tags]
    inv = Inventory(p, links, _spawn_streams(rng, len(ids)), ids, epcs)
    return inv.run(*t_window)


# --- access (user memory) ---------------------------------------------------------


@dataclass
class AccessResult:
    duration: float
    success: bool
    attempts: int
    outcomes: list[InventoryOutcome] = field(default_factory=list)


def access_exchange(
    p: Gen2Params,
    link: LinkFn,
    t: float,
    rng: np.random.Generator,
    word_count: int,
    delays: Sequence[tuple[str, float]] = (),
) -> InventoryOutcome:
    """Singulate a lone tag (Q=0), then ReqRN, Read and the data reply.

    ``delays`` are extra tag-side intervals (sensor activation, MCU
    transfer) inserted between the Read command and the data reply; the
    tag must stay powered through them.
    """
    rn16 = int(rng.integers(0, 1 << 16))
    handle = int(rng.integers(0, 1 << 16))
    ex = _Exchange(p, link, t, rng)
    ok = (_singulate(ex, Command.Query, 0, Flag.A, rn16)
          and ex.gap("T2", p.t2)
          and ex.reader(Command.ReqRN, rn16=rn16)
          and ex.gap("T1", p.t1)
          and ex.reply("handle", HANDLE_REPLY_BITS, Result.ack_timeout)
          and ex.gap("T2", p.t2)
          and ex.reader(Command.Read, rn16=handle, word_count=word_count)
          and ex.gap("T1", p.t1))
    for name, d in delays:
        ok = ok and ex.gap(name, d)
    if ok and ex.reply("data", read_reply_bits(word_count), Result.link_margin_failure):
        ex.gap("T2", p.t2)
    return ex.outcome(rn16)


def access_cycle(
    p: Gen2Params,
    link: LinkFn,
    rng: np.random.Generator,
    word_count: int,
    t0: float = 0.0,
    delays: Sequence[tuple[str, float]] = (),
    max_attempts: int = 50,
    max_time_s: float = 60.0,
) -> AccessResult:
    """Repeat full access exchanges from scratch until one completes.

    While the tag is unpowered the reader keeps issuing empty Q=0 rounds;
    that waiting time is charged but does not count as an attempt.
    """
    if word_count <= 0:
        raise ValueError("word_count must be > 0")
    idle = command_duration(Command.Query, p, q=0) + p.t1 + p.t3
    next_change = getattr(link, "next_change", None)
    t = t0
    attempts = 0
    outcomes: list[InventoryOutcome] = []
    while t - t0 < max_time_s:
        if not link(t).tag_powered:
            if next_change is not None:
                t_c = next_change(t)
                k = max(1, math.ceil((min(t_c, t0 + max_time_s) - t) / idle))
            else:
                k = 1
            t += k * idle
            continue
        attempts += 1
        out = access_exchange(p, link, t, rng, word_count, delays)
        outcomes.append(out)
        t = out.t_end
        if out.result is Result.success:
            return AccessResult(t - t0, True, attempts, outcomes)
        if attempts >= max_attempts:
            break
    return AccessResult(t - t0, False, attempts, outcomes)


def read_user_memory(
    tag,
    word_count: int,
    p: Gen2Params,
    link_quality_fn: LinkFn,
    rng: np.random.Generator,
    t0: float = 0.0,
    max_attempts: int = 50,
) -> tuple[float, bool]:
    """Time to read ``word_count`` user-memory words, restarting on any failure."""
    res = access_cycle(p, link_quality_fn, rng, word_count, t0, max_attempts=max_attempts)
    return res.duration, res.success
