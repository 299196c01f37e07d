"""CSMA/CA, duty-cycled radio and energy ledger."""
import pytest
from hypothesis import given, strategies as st

from sdnmesh.kernel import SEC, Simulator, seconds
from sdnmesh.mac import (ACCEPTED, QUEUE_FULL, EnergyLedger, Frame, Mac, MacConfig, RdcConfig,
                         account_listen, delivery_probability, energy_mJ, rdc_listen_time)
from sdnmesh.medium import Medium, MediumConfig


class Rig:
    """A few MACs on a line, recording deliveries and completions."""

    def __init__(self, positions, q=1.0, rdc=None, mac=None, seed=1, collisions=True):
        self.sim = Simulator(seed=seed)
        self.medium = Medium(positions, MediumConfig(link_quality=q, distance_loss=False,
                                                     collisions=collisions), self.sim.rng(1_000_000))
        self.macs = []
        self.delivered = []
        self.done = []
        rdc = rdc or RdcConfig(enabled=False)
        for i in range(len(positions)):
            self.macs.append(Mac(i, self.sim, self.medium, mac or MacConfig(), rdc, EnergyLedger(),
                                 self.sim.rng(i), self.macs,
                                 lambda f, r: self.delivered.append((f, r)),
                                 lambda f, ok: self.done.append((f, ok))))

    def send(self, src, dst, size=60):
        frame = Frame(None, src, dst, size)
        return frame, self.macs[src].mac_send(frame)


def test_idle_deterministic_channel_delivers_first_time():
    rig = Rig([[0, 0], [30, 0]])
    frame, status = rig.send(0, 1)
    assert status == ACCEPTED
    rig.sim.run_until(SEC)
    assert rig.done == [(frame, True)]
    assert frame.retries == 0
    assert rig.delivered == [(frame, 1)]


def test_persistent_collision_gives_link_drop_after_max_retries():
    # node 2 jams the receiver but is out of the sender's carrier-sense range
    rig = Rig([[0, 0], [40, 0], [85, 0]])
    rig.medium.begin(2, 0, 10 * SEC, ())
    frame, _ = rig.send(0, 1)
    rig.sim.run_until(5 * SEC)
    assert rig.done == [(frame, False)]
    assert frame.noacks == 4 and frame.retries == 4
    assert rig.macs[0].link_drops == 1
    assert rig.macs[0].attempts == 4


def test_queue_full_is_reported():
    rig = Rig([[0, 0], [30, 0]], mac=MacConfig(queue_capacity=2))
    statuses = [rig.send(0, 1)[1] for _ in range(3)]
    assert statuses == [ACCEPTED, ACCEPTED, QUEUE_FULL]
    assert rig.macs[0].queue_drops == 1


def test_analytic_delivery_probability():
    assert delivery_probability(0.9, 3) == pytest.approx(0.9999)
    assert delivery_probability(0.0, 5) == 0.0
    assert delivery_probability(1.0, 0) == 1.0


def test_monte_carlo_delivery_matches_geometric_model():
    p, r, trials = 0.9, 3, 10_000
    rig = Rig([[0, 0], [30, 0]], q=p, mac=MacConfig(max_retries=r, queue_capacity=trials), seed=5)
    for _ in range(trials):
        rig.send(0, 1)
    rig.sim.run_until(10_000 * SEC)
    ok = sum(1 for _, good in rig.done if good)
    assert len(rig.done) == trials
    assert ok / trials == pytest.approx(delivery_probability(p, r), abs=0.02)
    # attempts per frame follow a truncated geometric distribution
    expected_attempts = sum((1 - p) ** k for k in range(r + 1))
    assert rig.macs[0].attempts / trials == pytest.approx(expected_attempts, rel=0.02)


def test_listen_time_for_idle_second():
    rdc = RdcConfig(channel_check_rate=8, listen_window=2000)
    assert rdc_listen_time(SEC, rdc) == 16_000
    led = EnergyLedger()
    account_listen(led, SEC, rdc)
    assert led.listen_time == 16_000


def test_strobe_bounded_by_wake_interval():
    rdc = RdcConfig()
    rig = Rig([[0, 0], [30, 0]], q=0.0, rdc=rdc, mac=MacConfig(max_retries=0))
    rig.send(0, 1)
    rig.sim.run_until(2 * SEC)
    assert rig.done and rig.done[0][1] is False
    assert 0 < rig.macs[0].ledger.tx_time <= rdc.wake_interval == 125_000


def test_always_on_listen_identity():
    rig = Rig([[0, 0], [30, 0]])
    for _ in range(5):
        rig.send(0, 1)
    rig.sim.run_until(SEC)
    off = RdcConfig(enabled=False)
    for mac in rig.macs:
        led = mac.ledger
        account_listen(led, SEC, off)
        assert led.listen_time == SEC - led.tx_time - led.rx_time


def test_energy_examples():
    assert energy_mJ(EnergyLedger()) == 0.0
    assert energy_mJ(EnergyLedger(tx_time=SEC)) == pytest.approx(52.2)


@given(st.integers(0, 10**8), st.integers(0, 10**8), st.integers(0, 10**8))
def test_energy_is_linear(tx, rx, listen):
    one = energy_mJ(EnergyLedger(tx_time=tx, rx_time=rx, listen_time=listen))
    two = energy_mJ(EnergyLedger(tx_time=2 * tx, rx_time=2 * rx, listen_time=2 * listen))
    assert two == pytest.approx(2 * one)


@given(st.integers(1, 4), st.integers(0, 10), st.booleans())
def test_radio_time_within_elapsed(nodes, frames, rdc_on):
    rdc = RdcConfig(enabled=rdc_on)
    rig = Rig([[20 * i, 0] for i in range(nodes + 1)], q=0.8, rdc=rdc, seed=frames)
    for k in range(frames):
        rig.send(k % nodes, (k % nodes) + 1)
    horizon = seconds(10)
    rig.sim.run_until(horizon)
    for mac in rig.macs:
        account_listen(mac.ledger, horizon, rdc)
        assert mac.ledger.radio_time() <= horizon


def test_config_validation():
    assert MacConfig().validate() == []
    assert len(MacConfig(max_retries=-1, queue_capacity=0).validate()) == 2
    assert RdcConfig(channel_check_rate=0).validate()
