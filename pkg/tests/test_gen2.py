import binascii
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reisim.gen2 import (
    Command,
    Flag,
    Gen2Params,
    Inventory,
    Result,
    Session,
    TagSessionState,
    _power_loss,
    _spawn_streams,
    access_cycle,
    access_exchange,
    command_bits,
    command_duration,
    crc5,
    crc16,
    read_reply_bits,
    read_user_memory,
    run_inventory,
    singulation_attempt,
    singulation_oracle_duration,
    tag_preamble_symbols,
    tag_reply_duration,
)
from reisim.rflink import ConstantLink, EncodingScheme, LinkSample

from support import draw_gen2, single_round

DEFAULT = Gen2Params()


def _bits(data: bytes) -> str:
    return "".join(format(b, "08b") for b in data)


@given(data=st.binary(min_size=1, max_size=16))
def test_crc16_matches_ccitt_oracle(data):
    # binascii.crc_hqx is CRC-16/CCITT without the final complement
    assert int(crc16(_bits(data)), 2) == binascii.crc_hqx(data, 0xFFFF) ^ 0xFFFF


@given(bits=st.text(alphabet="01", min_size=1, max_size=40))
def test_crc_residues(bits):
    assert crc5(bits + crc5(bits)) == "00000"
    # ones-complemented CRC-16 leaves the fixed residue 0x1D0F
    assert int(crc16(bits + crc16(bits)), 2) ^ 0xFFFF == 0x1D0F


@pytest.mark.parametrize("cmd, n", [
    (Command.Query, 22), (Command.QueryRep, 4), (Command.QueryAdjust, 9), (Command.ACK, 18),
    (Command.NAK, 8), (Command.ReqRN, 40), (Command.Read, 58),
])
def test_command_bit_lengths(cmd, n):
    assert len(command_bits(cmd, DEFAULT)) == n


@pytest.mark.parametrize("cmd, us", [
    (Command.Query, 466.6667), (Command.QueryRep, 112.5), (Command.QueryAdjust, 200.0), (Command.ACK, 300.0),
    (Command.NAK, 187.5), (Command.ReqRN, 662.5), (Command.Read, 962.5),
])
def test_default_command_durations(cmd, us):
    assert command_duration(cmd, DEFAULT) * 1e6 == pytest.approx(us, abs=1e-3)


def test_pie_timing_oracle():
    # frame-sync = delimiter + data0 + RTcal; each '1' costs data1, each '0' data0
    bits = command_bits(Command.ACK, DEFAULT, rn16=0xBEEF)
    ones = bits.count("1")
    expect = 12.5e-6 + 12.5e-6 + 37.5e-6 + ones * 25e-6 + (len(bits) - ones) * 12.5e-6
    assert command_duration(Command.ACK, DEFAULT, rn16=0xBEEF) == pytest.approx(expect)
    assert bits == "01" + format(0xBEEF, "016b")


def test_query_fields_and_crc():
    bits = command_bits(Command.Query, Gen2Params(encoding=EncodingScheme.Miller4), q=7, target=Flag.B)
    assert bits[:4] == "1000"
    assert bits[5:7] == "10"
    assert bits[13:17] == format(7, "04b")
    assert crc5(bits[:-5]) == bits[-5:]


def test_read_carries_crc16():
    bits = command_bits(Command.Read, DEFAULT, rn16=0x1234, word_count=4)
    assert crc16(bits[:-16]) == bits[-16:]


@pytest.mark.parametrize("enc, trext, symbols", [
    (EncodingScheme.FM0, None, 6), (EncodingScheme.FM0, True, 18),
    (EncodingScheme.Miller2, None, 22), (EncodingScheme.Miller4, False, 10),
])
def test_preamble_symbols(enc, trext, symbols):
    assert tag_preamble_symbols(Gen2Params(encoding=enc, trext=trext)) == symbols


@given(bits=st.integers(1, 512), enc=st.sampled_from(list(EncodingScheme)))
def test_reply_duration_formula(bits, enc):
    p = Gen2Params(encoding=enc)
    assert tag_reply_duration(bits, p) == pytest.approx((tag_preamble_symbols(p) + bits + 1) * enc.M / p.blf_Hz)


def test_link_timings_default():
    assert DEFAULT.t1 == pytest.approx(max(DEFAULT.rtcal_s, 10 / DEFAULT.blf_Hz))
    assert DEFAULT.t2 == pytest.approx(10 / DEFAULT.blf_Hz)
    assert DEFAULT.trcal_s == pytest.approx(DEFAULT.dr / DEFAULT.blf_Hz)
    assert read_reply_bits(4) == 1 + 64 + 32


@pytest.mark.parametrize("kwargs", [
    {"tari_s": 30e-6}, {"dr": 5.0}, {"blf_Hz": 700e3}, {"blf_Hz": 100e3}, {"q_init": 16},
    {"t2_s": 1e-6}, {"t1_s": 1e-3}, {"data1_tari": 2.5},
])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        Gen2Params(**kwargs)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_noiseless_round_equals_oracle(seed):
    p = draw_gen2(np.random.default_rng(seed))
    dur, out = single_round(p, seed)
    assert out.result is Result.success
    assert abs(dur - singulation_oracle_duration(p, 0, Flag.A, out.rn16)) < 1e-6


def test_singulation_attempt_success_and_flag_flip():
    rng = np.random.default_rng(0)
    out, st_ = singulation_attempt(TagSessionState(powered=True), DEFAULT, ConstantLink(math.inf), 0.0, rng, q=0)
    assert out.result is Result.success
    assert st_.inventoried_flag is Flag.B
    names = [n for n, _ in out.commands_exchanged]
    assert names == ["Query", "T1", "RN16", "T2", "ACK", "T1", "EPC", "T2"]
    assert out.duration == pytest.approx(singulation_oracle_duration(DEFAULT, 0, Flag.A, out.rn16))


def test_unpowered_tag_fails_and_s0_flag_resets():
    rng = np.random.default_rng(0)
    state = TagSessionState(powered=True, inventoried_flag=Flag.B)
    out, new = singulation_attempt(state, DEFAULT, ConstantLink(math.inf, powered=False), 0.0, rng,
                                   target=Flag.B)
    assert out.result is Result.link_margin_failure
    assert new.inventoried_flag is Flag.A and not new.powered


@pytest.mark.parametrize("session, keeps", [(Session.S0, False), (Session.S1, True), (Session.S2, True)])
def test_power_loss_flag_rules(session, keeps):
    p = Gen2Params(session=session)
    st_ = _power_loss(TagSessionState(powered=True, inventoried_flag=Flag.B), p, 1.0)
    assert (st_.inventoried_flag is Flag.B) == keeps


def test_low_snr_gives_ack_timeout():
    rng = np.random.default_rng(1)
    out, _ = singulation_attempt(TagSessionState(powered=True), DEFAULT, ConstantLink(-30.0), 0.0, rng, q=0)
    assert out.result is Result.ack_timeout


class _DropAt:
    """Powered until ``t_off``; lets a step that straddles t_off see the loss via checkpoints."""

    def __init__(self, t_off):
        self.t_off = t_off

    def __call__(self, t):
        on = t < self.t_off
        return LinkSample(t, 0.0, 0.0, True, on, on, math.inf)

    def checkpoints(self, t0, t1):
        return [self.t_off] if t0 < self.t_off < t1 else []


def test_power_dip_mid_epc_is_link_margin_failure():
    p = DEFAULT
    t_epc = singulation_oracle_duration(p, 0, Flag.A, 0) - p.t2 - tag_reply_duration(p.epc_reply_bits, p) / 2
    out, _ = singulation_attempt(TagSessionState(powered=True), p, _DropAt(t_epc), 0.0,
                                 np.random.default_rng(0), q=0, rn16=0)
    assert out.result is Result.link_margin_failure


def _inventory(n, q_init=4, seed=3, snr=math.inf, **kw):
    p = Gen2Params(q_init=q_init, **kw)
    inv = Inventory(p, [ConstantLink(snr)] * n, _spawn_streams(seed, n))
    return inv


@pytest.mark.parametrize("n", [1, 5, 20])
def test_inventory_reads_every_tag(n):
    inv = _inventory(n)
    inv.run(0.0, 0.5)
    assert {e.tag_id for e in inv.events} == {f"tag{i}" for i in range(n)}
    assert sum(inv.histogram.values()) == len(inv.outcomes)
    assert all(b >= a for a, b in zip(inv.round_starts, inv.round_starts[1:]))


def test_dual_target_reads_a_lone_tag_every_round():
    inv = _inventory(1, q_init=0, q_adapt=False)
    inv.run(0.0, 0.1)
    assert [e.round_index for e in inv.events] == list(range(1, len(inv.round_starts) + 1))


def test_single_target_reads_once():
    from reisim.gen2 import TargetMode

    inv = _inventory(3, target_mode=TargetMode.single_target)
    inv.run(0.0, 0.2)
    assert len(inv.events) == 3


def test_q_adapts_up_under_collisions():
    inv = _inventory(40, q_init=0)
    inv.run(0.0, 0.005)
    assert inv.qfp > 0.0
    assert inv.histogram["collision"] > 0


def test_inventory_deterministic():
    a = _inventory(10, snr=6.0)
    b = _inventory(10, snr=6.0)
    assert a.run(0.0, 0.2) == b.run(0.0, 0.2)


def test_run_inventory_wrapper():
    ev = run_inventory(["x", "y"], DEFAULT, [ConstantLink(math.inf)] * 2, (0.0, 0.05), 7)
    assert {e.tag_id for e in ev} == {"x", "y"}


def test_access_exchange_sequence():
    out = access_exchange(DEFAULT, ConstantLink(math.inf), 0.0, np.random.default_rng(0), 4, [("act", 1e-3)])
    assert out.result is Result.success
    names = [n for n, _ in out.commands_exchanged]
    assert names[-5:] == ["Read", "T1", "act", "data", "T2"]
    assert names.index("ReqRN") < names.index("Read")


def test_read_user_memory_gives_up():
    dur, ok = read_user_memory(None, 2, DEFAULT, ConstantLink(-40.0), np.random.default_rng(0), max_attempts=5)
    assert not ok and dur > 0


def test_access_cycle_waits_while_unpowered():
    res = access_cycle(DEFAULT, ConstantLink(math.inf, powered=False), np.random.default_rng(0), 1, max_time_s=0.1)
    assert not res.success and res.attempts == 0
    assert res.duration >= 0.1
    with pytest.raises(ValueError):
        access_cycle(DEFAULT, ConstantLink(math.inf), np.random.default_rng(0), 0)
