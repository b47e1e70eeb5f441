import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from melidar import tensor_io
from melidar.errors import ConfigError, FormatError, ParseError, TruncationError, UnsupportedDtype
from melidar.model import (
    MultiEchoFrame,
    OrientedBox3D,
    SimConfig,
    frames_equal,
    unit_direction,
    validate_frame,
    wrap_angle,
)


def beam_frame(refl, pts):
    """1x1 frame with the given echoes on the +x beam."""
    k = len(refl)
    return MultiEchoFrame(
        points=np.asarray(pts, dtype=np.float64).reshape(1, 1, k, 3),
        reflectance=np.asarray(refl, dtype=np.float64).reshape(1, 1, k),
        valid=np.ones((1, 1, k), dtype=bool),
        ambient=np.zeros((1, 1)),
        bin_width=0.1,
        directions=np.array([[[1.0, 0.0, 0.0]]]),
    )


class TestValidateFrame:
    def test_sorted_frame_is_clean(self):
        assert validate_frame(beam_frame([2.0, 1.0], [[5, 0, 0], [9, 0, 0]])) == []

    def test_ordering_violation(self):
        out = validate_frame(beam_frame([1.0, 2.0], [[5, 0, 0], [9, 0, 0]]))
        assert len(out) == 1 and "stronger" in out[0]

    def test_off_ray_echo(self):
        # second echo displaced perpendicular to the beam by 1e-3 rad
        r = 9.0
        out = validate_frame(beam_frame([2.0, 1.0], [[5, 0, 0], [r * math.cos(1e-3), r * math.sin(1e-3), 0]]))
        assert len(out) == 1 and "off-beam" in out[0]

    def test_without_directions_uses_first_echo(self):
        f = beam_frame([2.0, 1.0], [[5, 0, 0], [9, 0.01, 0]])
        f2 = MultiEchoFrame(f.points, f.reflectance, f.valid, f.ambient, f.bin_width)
        assert len(validate_frame(f2)) == 1

    def test_simulator_output_is_clean(self, toy_result):
        assert validate_frame(toy_result.frame) == []

    def test_image_channels(self, toy_result):
        assert toy_result.image.data.shape[-1] == 1 + toy_result.frame.max_echoes


class TestFrame:
    def test_readonly(self, toy_result):
        with pytest.raises(ValueError):
            toy_result.frame.points[0, 0, 0, 0] = 1.0

    def test_cloud_roundtrip(self, toy_result):
        f = toy_result.frame
        g = MultiEchoFrame.from_cloud_tensor(f.to_cloud_tensor(), f.ambient, f.bin_width)
        assert np.array_equal(g.valid, f.valid)
        assert np.allclose(g.points, f.points, atol=1e-4)

    def test_missing_echo_zero_reflectance(self, toy_result):
        img = toy_result.image
        assert np.all(img.reflectance[~toy_result.frame.valid] == 0)
        assert np.all(img.data >= 0)

    def test_frames_equal(self, toy_result):
        f = toy_result.frame
        assert frames_equal(f, f)
        other = MultiEchoFrame(f.points, f.reflectance * 2, f.valid, f.ambient, f.bin_width, f.bins)
        assert not frames_equal(f, other)


class TestBox:
    def test_yaw_wrapped(self):
        assert OrientedBox3D(0, 0, 0, 1, 1, 1, math.pi).yaw == pytest.approx(-math.pi)
        assert -math.pi <= wrap_angle(7.0) < math.pi

    def test_bad_size(self):
        with pytest.raises(ConfigError):
            OrientedBox3D(0, 0, 0, 0, 1, 1, 0)

    def test_contains_face(self):
        b = OrientedBox3D(0, 0, 0, 2, 2, 4, 0.3)
        face = b.center + np.array([2 * math.cos(0.3), 2 * math.sin(0.3), 0])
        assert b.contains(face)[0]

    def test_unit_direction(self):
        assert np.allclose(unit_direction(0, 0), [1, 0, 0])
        assert np.allclose(unit_direction(0, math.pi / 2), [0, 1, 0])
        assert np.allclose(unit_direction(math.pi / 2, 0), [0, 0, 1])


class TestSimConfig:
    def test_defaults(self):
        c = SimConfig()
        assert (c.bins, c.depth_range, c.kernel_size, c.k) == (10240, 1000.0, 5, 3)
        assert c.bin_width == pytest.approx(1000 / 10240)

    @pytest.mark.parametrize("kw", [{"bins": 0}, {"kernel_size": 4}, {"tau": -1.0}, {"k": 0}, {"sbr": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SimConfig(**kw)

    def test_dict_roundtrip(self, toy):
        d = json.loads(json.dumps(toy.config.to_dict()))
        c = SimConfig.from_dict(d)
        assert c.to_dict() == toy.config.to_dict()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            SimConfig.from_dict({"binz": 3})

    def test_flags_override(self):
        c = SimConfig.from_dict({"sbr": 3.0}).updated(sbr=5.0, bins=None)
        assert c.sbr == 5.0 and c.bins == 10240


class TestTensorContainer:
    def test_zero_roundtrip(self, tmp_path):
        p = tmp_path / "z.melt"
        tensor_io.write_tensor(p, np.zeros((2, 3), dtype=np.float32), {"unit": "m"})
        arr, meta = tensor_io.read_tensor(p)
        assert arr.dtype == np.float32 and arr.shape == (2, 3) and not arr.any()
        assert meta == {"unit": "m"}

    def test_layout(self):
        buf = tensor_io.encode_tensor(np.arange(3, dtype=np.uint8), {})
        assert buf[:4] == b"MELT"
        assert struct.unpack_from("<II", buf, 4) == (1, 1)
        assert struct.unpack_from("<Q", buf, 12) == (3,)
        assert struct.unpack_from("<IQ", buf, 20) == (3, 2)
        assert buf[32:34] == b"{}" and buf[34:] == b"\x00\x01\x02"

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.melt"
        p.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(FormatError):
            tensor_io.read_tensor(p)

    def test_truncated_payload(self):
        head = tensor_io.encode_tensor(np.zeros((0,), dtype=np.float32))
        buf = bytearray(b"MELT" + struct.pack("<II", 1, 3) + struct.pack("<3Q", 96, 600, 4) + struct.pack("<IQ", 1, 0))
        buf += bytes(10)
        with pytest.raises(TruncationError, match=str(96 * 600 * 4 * 4)):
            tensor_io.decode_tensor(bytes(buf))
        assert head[:4] == b"MELT"

    def test_unknown_dtype(self):
        buf = b"MELT" + struct.pack("<II", 1, 1) + struct.pack("<Q", 1) + struct.pack("<IQ", 9, 0) + bytes(4)
        with pytest.raises(UnsupportedDtype):
            tensor_io.decode_tensor(buf)

    def test_unsupported_write_dtype(self):
        with pytest.raises(UnsupportedDtype):
            tensor_io.encode_tensor(np.zeros(2, dtype=np.complex64))

    def test_deterministic_bytes(self, tmp_path):
        a = np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 4)
        tensor_io.write_tensor(tmp_path / "a", a, {"b": 1, "a": 2})
        tensor_io.write_tensor(tmp_path / "b", a, {"a": 2, "b": 1})
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(st.sampled_from([np.float32, np.uint32, np.uint8]), hnp.array_shapes(min_dims=0, max_dims=4, max_side=5)))
    def test_bit_exact(self, arr):
        back, _ = tensor_io.decode_tensor(tensor_io.encode_tensor(arr))
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


class TestLabels:
    def test_empty(self, tmp_path):
        p = tmp_path / "l.jsonl"
        p.write_text("")
        assert tensor_io.read_labels(p) == []

    def test_one_car(self, tmp_path):
        p = tmp_path / "l.jsonl"
        p.write_text(json.dumps({"class": "Car", "cx": 1, "cy": 2, "cz": 0, "h": 1.5, "w": 1.6, "l": 3.9, "yaw": 0.1}) + "\n")
        (box,) = tensor_io.read_labels(p)
        assert box.label == "Car" and box.cy == 2

    def test_missing_yaw(self, tmp_path):
        p = tmp_path / "l.jsonl"
        p.write_text(json.dumps({"class": "Car", "cx": 1, "cy": 2, "cz": 0, "h": 1.5, "w": 1.6, "l": 3.9}) + "\n")
        with pytest.raises(ParseError) as e:
            tensor_io.read_labels(p)
        assert e.value.line == 1

    def test_bad_json_line_number(self, tmp_path):
        p = tmp_path / "l.jsonl"
        good = json.dumps({"class": "Car", "cx": 1, "cy": 2, "cz": 0, "h": 1.5, "w": 1.6, "l": 3.9, "yaw": 0})
        p.write_text(good + "\n" + good + "\n{oops\n")
        with pytest.raises(ParseError, match="line 3"):
            tensor_io.read_labels(p)

    def test_full_precision_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        boxes = [OrientedBox3D(*rng.normal(size=3), *rng.uniform(0.1, 5, 3), rng.uniform(-3, 3), "Person",
                               score=float(rng.uniform()), height_px=33.5, occlusion=1, truncation=0.2) for _ in range(5)]
        p = tmp_path / "l.jsonl"
        tensor_io.write_labels(p, boxes, frames=[0, 0, 1, 1, 2])
        back, frames = tensor_io.read_labels(p, with_frames=True)
        assert back == boxes and frames == [0, 0, 1, 1, 2]
