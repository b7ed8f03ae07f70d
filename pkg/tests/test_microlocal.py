import numpy as np
import pytest

from scalarforge import spectral_core as sc
from scalarforge.errors import BandUnresolved
from scalarforge.microlocal import (GaussianKernel, PhaseSnapshot, WavePacket, apply_operator,
                                    decay_study, expand_exact)
from scalarforge.multipliers import builtin_symbol


def _packet(n=64, lam=4, eps=0.1):
    X = sc.grid(n).X
    ph = PhaseSnapshot.from_function((1.0, 0.0), n, lambda x, y: eps * np.sin(y))
    amp = 1 + 0.3 * np.cos(X[0]) + 0.2 * np.sin(X[0] + X[1])
    return WavePacket(ph, amp, lam)


@pytest.mark.parametrize("op", [builtin_symbol("sqg"), builtin_symbol("ipm2d"),
                                sc.BandSpec.ball((4, 0), 2.0)])
def test_reconstruction(op):
    pk = _packet()
    ex = expand_exact(op, pk)
    direct = apply_operator(op, pk.values())
    assert np.abs(ex.reconstruct() - direct).max() <= 1e-12 * np.abs(direct).max()


def test_conjugate_symmetry():
    pk = _packet()
    sym = builtin_symbol("ipm2d")
    a = expand_exact(sym, pk)
    b = expand_exact(sym, pk.conjugate())
    assert np.abs(b.error - np.conj(a.error)).max() < 1e-12


def test_plateau_leading_is_amplitude():
    # phase gradient inside the plateau -> leading factor is exactly 1
    pk = _packet(lam=8, eps=0.05)
    band = sc.BandSpec.wave(8, (1, 0))
    ex = expand_exact(band, pk)
    assert np.abs(ex.leading - pk.amplitude).max() == 0


def test_linear_phase_constant_amplitude_is_exact():
    n = 32
    pk = WavePacket(PhaseSnapshot.linear((1.0, 1.0), n), np.ones((n, n)), 3)
    ex = expand_exact(builtin_symbol("ipm2d"), pk)
    assert np.abs(ex.error).max() < 1e-13


def test_packet_needs_integer_frequency():
    with pytest.raises(ValueError):
        WavePacket(PhaseSnapshot.linear((1.0, 0.0), 16), np.ones((16, 16)), 2.5)
    with pytest.raises(ValueError):
        WavePacket(PhaseSnapshot.linear((0.5, 0.0), 16), np.ones((16, 16)), 1).values()


def test_unresolved_band():
    pk = _packet(n=16, lam=4)
    with pytest.raises(BandUnresolved):
        apply_operator(sc.BandSpec.ball((40, 0), 20), pk.values())


def test_gaussian_kernel_transform_pair():
    # symbol and spatial kernel are a Fourier pair (checked by direct 2D sum)
    k = GaussianKernel((1.0, -0.5), 2.0)
    h = np.linspace(-12, 12, 601)
    H = np.meshgrid(h, h, indexing="ij")
    dh = h[1] - h[0]
    xi = np.array([0.7, 0.2])
    val = (k.spatial(H) * np.exp(-1j * (xi[0] * H[0] + xi[1] * H[1]))).sum() * dh * dh
    assert val == pytest.approx(k.symbol(xi), abs=1e-10)


def test_decay_study_linear_phase_exact(tmp_path):
    n = 64
    ph = PhaseSnapshot.linear((1.0, 0.0), n)
    res = decay_study(ph, np.ones((n, n)), [2, 4, 6], csv_path=tmp_path / "d.csv")
    assert res["slope"] == "exact"
    assert (tmp_path / "d.csv").read_text().startswith("lambda,")
    with pytest.raises(ValueError):
        decay_study(ph, np.ones((n, n)), [2, 4])
