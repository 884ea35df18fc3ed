import hashlib
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynabench.flow import (
    FlowCache,
    FlowCacheKey,
    FlowField,
    FlowParams,
    decode_payload,
    default_cache_dir,
    dense_flow,
    encode_payload,
    flow_history,
    flow_to_rgb,
)
from scenes import disc_scene, interior, static


def epe(field, dx, dy):
    return float(np.mean(np.hypot(interior(field.u) - dx, interior(field.v) - dy)))


def uniform(c, d=0.0, shape=(32, 32)):
    return FlowField(np.full(shape, c, np.float32), np.full(shape, d, np.float32))


def test_zero_motion():
    f = dense_flow(disc_scene(), disc_scene())
    assert np.max(np.hypot(f.u, f.v)) < 0.05


@pytest.mark.parametrize("dx,dy", [(2, 0), (-1, 3)])
def test_translation_recovered(dx, dy):
    f = dense_flow(disc_scene(), disc_scene(dx, dy))
    assert f.shape == (64, 64) and f.u.dtype == np.float32
    assert epe(f, dx, dy) <= 0.5


def test_linearity_smoke():
    one = dense_flow(disc_scene(), disc_scene(1.0, 0.0))
    two = dense_flow(disc_scene(), disc_scene(2.0, 0.0))
    ratio = np.mean(interior(two.u)) / np.mean(interior(one.u))
    assert 1.6 <= ratio <= 2.4


def test_antisymmetry():
    a, b = disc_scene(), disc_scene(1.5, -1.0)
    fwd, bwd = dense_flow(a, b), dense_flow(b, a)
    s = np.stack([interior(fwd.u + bwd.u), interior(fwd.v + bwd.v)])
    assert np.linalg.norm(s.reshape(2, -1).mean(axis=1)) <= 0.5


def test_input_validation():
    with pytest.raises(ValueError):
        dense_flow(np.zeros((32, 32)), np.zeros((32, 30)))
    with pytest.raises(ValueError):
        dense_flow(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        FlowParams(mag_percentile=0)
    with pytest.raises(ValueError):
        FlowParams(window=0)


def test_rgb_of_zero_field_is_black():
    assert not flow_to_rgb(uniform(0.0)).any()


def test_uniform_flow_single_colour():
    rgb = flow_to_rgb(uniform(0.7))
    assert np.all(rgb == rgb[0, 0]) and rgb.max() == 255
    np.testing.assert_array_equal(rgb[0, 0], (255, 0, 0))  # hue 0 is red


def test_below_threshold_zeroed():
    assert not flow_to_rgb(uniform(0.01)).any()


def test_hue_quadrants():
    assert tuple(flow_to_rgb(uniform(0.0, 1.0))[0, 0]) == (128, 255, 0)  # 90 degrees
    assert tuple(flow_to_rgb(uniform(-1.0, 0.0))[0, 0]) == (0, 255, 255)  # 180 degrees


@given(scale=st.floats(1.0, 50.0), seed=st.integers(0, 1000))
def test_rgb_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(24, 24)).astype(np.float32)
    v = rng.normal(size=(24, 24)).astype(np.float32)
    base = flow_to_rgb(FlowField(u, v))
    scaled = flow_to_rgb(FlowField(u * np.float32(2.0), v * np.float32(2.0)))
    np.testing.assert_array_equal(base, scaled)
    # general positive scales may move pixels across u8 rounding boundaries only through float error
    other = flow_to_rgb(FlowField(u * scale, v * scale))
    assert np.max(np.abs(other.astype(int) - base.astype(int))) <= 1


def test_history_pairs_are_consecutive():
    frames = [disc_scene(k, 0) for k in range(3)]
    maps = flow_history(frames[:2])
    assert len(maps) == 1
    np.testing.assert_array_equal(maps[0], flow_to_rgb(dense_flow(frames[0], frames[1])))
    assert len(flow_history(frames)) == 2
    with pytest.raises(ValueError):
        flow_history(frames[:1])


def test_history_constant_scene_black():
    maps = flow_history([disc_scene()] * 4)
    assert len(maps) == 3 and not any(m.any() for m in maps)


def test_history_constant_velocity_shares_hue():
    import colorsys

    from dynabench import world as W

    task = W.TaskSpec()
    s = W.reset(task, static((0.0, 0.0)), 0)
    s.ee = np.array([[9.0, 9.0]])
    px = (task.fov[2] - task.fov[0]) / task.resolution[0]
    start = W.pixel_to_world(task, (24.0, 30.0))
    frames = []
    for k in range(5):
        s.obj = start + k * np.array([2 * px, -px])  # two pixels right, one up per frame
        frames.append(W.render(s, task))
    hues = []
    for i, m in enumerate(flow_history(frames)):
        sel = (frames[i] > 0) | (frames[i + 1] > 0)
        hsv = np.array([colorsys.rgb_to_hsv(*c) for c in m[sel] / 255.0])
        ang = 2 * np.pi * hsv[:, 0]
        hues.append(np.degrees(np.arctan2((hsv[:, 2] * np.sin(ang)).sum(), (hsv[:, 2] * np.cos(ang)).sum())))
    spread = [(h - hues[0] + 180) % 360 - 180 for h in hues]
    assert max(abs(d) for d in spread) <= 10


# --- cache -------------------------------------------------------------------------


def key(**kw):
    base = dict(dataset="d", trajectory_id="t0", step=3, offsets=(-4, 0), view="main", resolution=(64, 64))
    base.update(kw)
    return FlowCacheKey(**base)


def test_digest_is_sha256_of_canonical():
    k = key()
    assert k.digest == hashlib.sha256(k.canonical().encode()).hexdigest()
    assert len(k.digest) == 64 and k.digest == k.digest.lower()


def test_distinct_fields_distinct_digests():
    ks = {key(step=s).digest for s in range(50)} | {key(view=v).digest for v in ("left", "right")}
    assert len(ks) == 52


def test_payload_round_trip_and_header():
    rgb = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    data = encode_payload(rgb)
    assert data[:4] == b"DFC1" and len(data) == 16 + rgb.size
    assert int.from_bytes(data[4:8], "little") == 7 and int.from_bytes(data[8:12], "little") == 5
    np.testing.assert_array_equal(decode_payload(data), rgb)
    with pytest.raises(ValueError):
        decode_payload(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        decode_payload(data[:-1])


def test_cache_miss_then_hit(tmp_path):
    cache = FlowCache(tmp_path)
    calls = []

    def compute():
        calls.append(1)
        return flow_to_rgb(dense_flow(disc_scene(), disc_scene(1, 1)))

    a = cache.get_or_compute(key(), compute)
    b = cache.get_or_compute(key(), compute)
    assert a.tobytes() == b.tobytes() and len(calls) == 1
    assert (cache.hits, cache.misses) == (1, 1)
    assert (tmp_path / "meta.txt").read_text().startswith("digest=sha256")
    os.remove(cache.path_for(key()))
    c = cache.get_or_compute(key(), compute)
    assert c.tobytes() == a.tobytes() and len(calls) == 2


def test_corrupt_entry_recomputed(tmp_path):
    cache = FlowCache(tmp_path)
    rgb = np.full((4, 4, 3), 7, np.uint8)
    cache.get_or_compute(key(), lambda: rgb)
    cache.path_for(key()).write_bytes(b"garbage")
    np.testing.assert_array_equal(cache.get_or_compute(key(), lambda: rgb), rgb)
    assert decode_payload(cache.path_for(key()).read_bytes()).tobytes() == rgb.tobytes()


def test_cache_refuses_other_params(tmp_path):
    FlowCache(tmp_path)
    with pytest.raises(ValueError):
        FlowCache(tmp_path, FlowParams(window=5))


def test_no_temp_files_left(tmp_path):
    cache = FlowCache(tmp_path)
    for s in range(5):
        cache.get_or_compute(key(step=s), lambda: np.zeros((4, 4, 3), np.uint8))
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp")]


def test_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv("DYNABENCH_CACHE", str(tmp_path / "x"))
    assert default_cache_dir() == tmp_path / "x"
