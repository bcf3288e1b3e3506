import struct

import numpy as np
import pytest

from phasewave.core import DensityField, NumericalError, WaveField, make_grid
from phasewave.io import (
    ConfigErrors,
    FormatError,
    MAGIC,
    csv_text,
    decode_snapshot,
    encode_field,
    load_config,
    parse_config,
    parse_config_with_defaults,
    read_field,
    read_snapshot,
    read_wavefunction_csv,
    serialize_config,
    write_field,
    write_wavefunction_csv,
)
from phasewave.transforms import gaussian_wavefunction

MINIMAL = """\
[grid]
nx = 256
np = 256
x_min = -10
x_max = 10
p_min = -16
p_max = 16

[params]
gamma = 10

[potential]
base = harmonic(1)

[evolve]
dt = 1e-3
t_final = 1
"""


def test_minimal_config_echoes_defaults():
    cfg, defaulted = parse_config_with_defaults(MINIMAL)
    assert cfg.params.gamma == 10.0
    assert cfg.params.include_rest_phase is False
    assert "params.include_rest_phase" in defaulted
    text = serialize_config(cfg, defaulted)
    assert "include_rest_phase = false  # default" in text


def test_negative_gamma_single_located_error():
    with pytest.raises(ConfigErrors) as exc:
        parse_config(MINIMAL.replace("gamma = 10", "gamma = -1"))
    (err,) = exc.value.errors
    assert err.key == "gamma" and err.line == 10
    assert "gamma must be >= 0" in err.reason


def test_stray_key_named_with_line():
    with pytest.raises(ConfigErrors) as exc:
        parse_config(MINIMAL.replace("gamma = 10", "gama = 10"))
    (err,) = exc.value.errors
    assert err.key == "gama" and err.line == 10
    assert "unknown key" in err.reason and "gamma" in err.reason


def test_missing_required_and_unknown_section():
    text = MINIMAL.replace("nx = 256\n", "") + "\n[extra]\nfoo = 1\n"
    with pytest.raises(ConfigErrors) as exc:
        parse_config(text)
    reasons = [(e.section, e.key) for e in exc.value.errors]
    assert ("grid", "nx") in reasons and ("extra", None) in reasons


def test_serialize_is_a_fixed_point():
    cfg, defaulted = parse_config_with_defaults(MINIMAL + "\n[initial]\nkind = superposition\ncomponents = 0: 1, 1: 0.5\n")
    text = serialize_config(cfg, defaulted)
    again, d2 = parse_config_with_defaults(text)
    assert again == cfg and d2 == []
    # the reparsed document has every key explicit, so only the markers go
    assert serialize_config(again) == serialize_config(cfg)


def test_tabulated_potential_from_file(tmp_path):
    np.savetxt(tmp_path / "v.txt", np.zeros(256))
    (tmp_path / "c.ini").write_text(MINIMAL.replace("harmonic(1)", "tabulated(v.txt)"))
    cfg, _ = load_config(tmp_path / "c.ini")
    assert cfg.potential.base.kind == "tabulated"


def test_wave_snapshot_round_trip_is_bitwise(tmp_path):
    g = make_grid(16, 8, (-2, 2), (-1, 1))
    v = np.random.default_rng(0).normal(size=g.shape) + 1j * np.random.default_rng(1).normal(size=g.shape)
    f = WaveField(g, v, 0.375)
    write_field(tmp_path / "a.pswf", f)
    back = read_field(tmp_path / "a.pswf")
    assert isinstance(back, WaveField)
    assert back.values.tobytes() == f.values.tobytes()
    assert back.grid == g and back.time == 0.375


def test_density_snapshot_round_trip(tmp_path):
    g = make_grid(8, 16, (-2, 2), (-1, 1))
    d = DensityField(g, np.random.default_rng(2).random(g.shape))
    write_field(tmp_path / "d.pswf", d)
    back = read_field(tmp_path / "d.pswf")
    assert isinstance(back, DensityField)
    assert back.values.tobytes() == d.values.tobytes()


def _blob():
    g = make_grid(8, 8, (-1, 1), (-1, 1))
    return encode_field(WaveField(g, np.ones(g.shape)))


def test_bad_magic():
    data = b"XXXX" + _blob()[4:]
    with pytest.raises(FormatError, match="magic"):
        decode_snapshot(data)
    assert _blob()[:4] == MAGIC


def test_version_mismatch():
    data = bytearray(_blob())
    struct.pack_into("<I", data, 4, 99)
    with pytest.raises(FormatError, match="version"):
        decode_snapshot(bytes(data))


def test_truncated_reports_expected_and_actual():
    data = _blob()
    with pytest.raises(FormatError, match=f"expected {len(data)} bytes, got {len(data) - 5}"):
        decode_snapshot(data[:-5])


def test_nan_payload_is_flagged(tmp_path):
    data = bytearray(_blob())
    struct.pack_into("<d", data, len(data) - 16, float("nan"))
    (tmp_path / "n.pswf").write_bytes(bytes(data))
    snap = read_snapshot(tmp_path / "n.pswf")
    assert snap.flags == ["nonfinite_payload"]
    with pytest.raises(NumericalError):
        snap.to_field()


def test_csv_header_and_full_precision():
    text = csv_text(["t", "norm"], [(0.1, 1 / 3), (0.2, 2 / 3)])
    lines = text.splitlines()
    assert lines[0] == "t,norm"
    assert float(lines[1].split(",")[1]) == 1 / 3


def test_wavefunction_csv_round_trip(tmp_path):
    g = make_grid(32, 8, (-4, 4), (-1, 1))
    psi = gaussian_wavefunction(g, 0.5, 1.0, 0.7)
    write_wavefunction_csv(tmp_path / "psi.csv", psi)
    back = read_wavefunction_csv(tmp_path / "psi.csv", g)
    assert np.array_equal(back.values, psi.values)


@pytest.mark.parametrize("text", ["none", "zero"])
def test_absent_potential_is_zero(text):
    cfg = parse_config(MINIMAL.replace("harmonic(1)", text))
    assert cfg.potential.is_zero
    assert "base = zero" in serialize_config(cfg)
