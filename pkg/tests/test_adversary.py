import math
from itertools import product

import numpy as np
import pytest

from polarqkd.adversary import (
    EveStrategy,
    IntensityMonitor,
    apply_siphon,
    intercept_resend,
    monitor,
    window_alarms,
)
from polarqkd.noise import LinkNoise
from polarqkd.polarization import Basis, Pulse, PolarizationState, encode_bit
from polarqkd.protocols import ChannelModel, qber, run_bb84, run_three_stage
from polarqkd.rng import RandomStream


def cos2(a):
    return math.cos(a) ** 2


def intercept_resend_qber_enumerated():
    """Sifted error rate under full intercept-resend, by enumerating every branch."""
    err = 0.0
    for bit, basis, eve_basis in product((0, 1), Basis, Basis):
        sent = basis.angle(bit)
        for eve_bit in (0, 1):
            p_eve = cos2(sent - eve_basis.angle(eve_bit))
            p_wrong = cos2(eve_basis.angle(eve_bit) - basis.angle(1 - bit))
            err += 0.25 * 0.5 * p_eve * p_wrong
    return err


def test_enumerated_expectation_is_quarter():
    assert intercept_resend_qber_enumerated() == pytest.approx(0.25)


def test_intercept_resend_scalar():
    rng = RandomStream(0)
    pulse = Pulse(encode_bit(1, Basis.RECTILINEAR), 3)
    fwd, bit, basis = intercept_resend(pulse, rng, Basis.RECTILINEAR)
    assert bit == 1 and basis is Basis.RECTILINEAR and fwd.photon_count == 3
    fwd, bit, basis = intercept_resend(pulse, rng)
    assert fwd.state.isclose(encode_bit(bit, basis))


def test_intercept_resend_vacuum_passes():
    vac = Pulse(PolarizationState(0.2), 0)
    assert intercept_resend(vac, RandomStream(0)) == (vac, None, None)


def test_full_intercept_on_bb84():
    ch = ChannelModel(LinkNoise(0.0), EveStrategy("intercept_resend"))
    a, b, t = run_bb84(10**6, ch, rng=RandomStream(1))
    q = qber(a, b)
    assert abs(q - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / len(a))
    assert 0.24 <= q <= 0.26
    assert t[0].eve_basis is not None


def test_intercept_with_sender_basis_is_transparent():
    ch = ChannelModel(LinkNoise(0.0), EveStrategy("intercept_resend", eve_basis="sender"))
    a, b, _ = run_bb84(10**5, ch, rng=RandomStream(2))
    assert qber(a, b) == 0.0


def test_no_eve_baseline():
    a, b, _ = run_bb84(10**5, ChannelModel(LinkNoise(0.0)), rng=RandomStream(3))
    assert qber(a, b) == 0.0


def test_intercept_leaves_alice_draws_untouched():
    clean = run_bb84(5000, ChannelModel(LinkNoise(0.1)), rng=RandomStream(4))[2]
    tapped = run_bb84(5000, ChannelModel(LinkNoise(0.1), EveStrategy("intercept_resend")), rng=RandomStream(4))[2]
    for col in ("data_bit", "alice_basis", "bob_basis", "link_errors", "draw"):
        np.testing.assert_array_equal(clean.columns[col], tapped.columns[col])


class TestSiphon:
    def test_t_zero(self):
        pulse = Pulse(PolarizationState(0.4), 7)
        fwd, stolen = apply_siphon(pulse, EveStrategy("siphon", 0.0), 0, RandomStream(0))
        assert fwd == pulse and stolen.photon_count == 0

    def test_untapped_stage(self):
        pulse = Pulse(PolarizationState(0.4), 7)
        strat = EveStrategy("siphon", 0.5, stages_tapped=(1,))
        assert apply_siphon(pulse, strat, 0, RandomStream(0))[0] == pulse

    @pytest.mark.parametrize("count, taken", [(0, 0), (1, 0), (2, 1), (5, 1)])
    def test_pns(self, count, taken):
        pulse = Pulse(PolarizationState(0.4), count)
        fwd, stolen = apply_siphon(pulse, EveStrategy("siphon", pns_mode=True), 0, RandomStream(0))
        assert stolen.photon_count == taken
        assert fwd.photon_count + stolen.photon_count == count

    def test_conservation_plain(self):
        rng = RandomStream(5)
        strat = EveStrategy("siphon", 0.3)
        for count in range(0, 50):
            fwd, stolen = apply_siphon(Pulse(PolarizationState(1.0), count), strat, 0, rng)
            assert fwd.photon_count + stolen.photon_count == count
            assert fwd.state == stolen.state

    def test_invalid_strategies(self):
        with pytest.raises(ValueError):
            EveStrategy("siphon", stages_tapped=())
        with pytest.raises(ValueError):
            EveStrategy("tamper")
        with pytest.raises(ValueError):
            EveStrategy("siphon", 1.5)

    def test_three_stage_retention(self):
        ch = ChannelModel(LinkNoise(0.0), EveStrategy("siphon", 0.2))
        n = 10**6
        _, _, t = run_three_stage(n, ch, RandomStream(6))
        p = 0.8**3
        assert p == pytest.approx(0.512)
        mean = t.columns["received_count"].mean()
        assert abs(mean - p) <= 3 * math.sqrt(p * (1 - p) / n)
        np.testing.assert_array_equal(t.columns["received_count"] + t.columns["stolen_count"], 1)

    def test_pns_bb84_intensity_loss(self):
        mu = 0.1
        tail = 1 - math.exp(-mu) - mu * math.exp(-mu)
        assert tail == pytest.approx(0.0046788, abs=1e-7)
        ch = ChannelModel(LinkNoise(0.0), EveStrategy("siphon", pns_mode=True))
        n = 10**6
        _, _, t = run_bb84(n, ch, source_mean_photons=mu, rng=RandomStream(7))
        stolen = t.columns["stolen_count"].mean()
        assert abs(stolen - tail) <= 3 * math.sqrt(tail * (1 - tail) / n)
        assert tail / mu < 0.05


class TestMonitor:
    def test_alarm_on_tapped_three_stage(self):
        assert monitor([0.512], IntensityMonitor(1.0, 0.9))

    def test_no_alarm_at_nominal(self):
        assert not monitor([1, 1, 1, 1], IntensityMonitor(1.0, 0.9))

    def test_pns_reduction_below_threshold(self):
        mu = 0.1
        mean = mu - (1 - math.exp(-mu) - mu * math.exp(-mu))
        assert not monitor([mean], IntensityMonitor(mu, 0.9))

    def test_empty_window(self):
        with pytest.raises(ValueError):
            monitor([], IntensityMonitor(1.0))

    def test_bad_params(self):
        with pytest.raises(ValueError):
            IntensityMonitor(1.0, 0.0)
        with pytest.raises(ValueError):
            IntensityMonitor(0.0)

    def test_windows(self):
        counts = np.r_[np.ones(10), np.zeros(10), np.ones(5)]
        np.testing.assert_array_equal(window_alarms(counts, 10, IntensityMonitor(1.0)), [False, True])
        with pytest.raises(ValueError):
            window_alarms([1, 1], 10, IntensityMonitor(1.0))
