import math

import numpy as np
import pytest
from scipy import ndimage

from wavereg.imaging import ImageGrid, make_synthetic_pair, SyntheticPairSpec, warp
from wavereg.sift import (
    Descriptor,
    Keypoint,
    SiftConfig,
    SiftError,
    compute_descriptors,
    detect_keypoints,
    enhance_keypoints,
    keypoint_scores,
    match_descriptors,
    register_sift,
)
from wavereg.synthetic import gaussian_blob, step_edge, texture
from wavereg.transforms import apply_array, compose, similarity_from_params
from wavereg.wavelet import dtcwt


@pytest.fixture(scope="module")
def tex():
    return texture(128, 5)


@pytest.fixture(scope="module")
def tex_kps(tex):
    return detect_keypoints(tex)


def test_constant_image_has_no_keypoints():
    assert detect_keypoints(np.full((64, 64), 80.0)) == []


def test_too_small_image():
    with pytest.raises(SiftError):
        detect_keypoints(np.zeros((16, 40)))


def test_blob_keypoint_location_and_scale():
    img = gaussian_blob(128, std=4.0)
    kps = detect_keypoints(img)
    c = 63.5
    near = [k for k in kps if math.hypot(k.x - c, k.y - c) <= 2]
    assert near
    assert any(4 / 1.5 <= k.sigma <= 4 * 1.5 for k in near)

    # brute-force oracle: dense scale-normalised DoG scan
    arr = img.samples / 255.0
    k = 2 ** (1 / 3)
    sigmas = 1.0 * k ** np.arange(0, 14)
    vol = np.stack([ndimage.gaussian_filter(arr, s * k) - ndimage.gaussian_filter(arr, s) for s in sigmas])
    idx = np.unravel_index(np.abs(vol).argmax(), vol.shape)
    assert math.hypot(idx[2] - c, idx[1] - c) <= 2
    best = max(near, key=lambda kp: kp.response)
    assert 1 / 1.5 <= best.sigma / sigmas[idx[0]] <= 1.5


def test_detection_is_deterministic_and_ordered(tex, tex_kps):
    again = detect_keypoints(tex)
    assert again == tex_kps and len(tex_kps) > 20
    keys = [(-k.response, k.y, k.x, k.sigma) for k in tex_kps]
    assert keys == sorted(keys)
    for k in tex_kps:
        assert k.sigma > 0 and 0 <= k.orientation < 2 * math.pi
        assert 8 <= k.x <= 119 and 8 <= k.y <= 119


def test_descriptor_norm_and_clamp(tex, tex_kps):
    descs = compute_descriptors(tex, tex_kps)
    for d in descs:
        assert d.values.shape == (128,)
        assert abs(np.linalg.norm(d.values) - 1) < 1e-6
        assert d.values.min() >= 0


def test_descriptors_invariant_to_gain(tex, tex_kps):
    bright = ImageGrid(tex.samples * 2.0)
    a = compute_descriptors(tex, tex_kps)
    b = compute_descriptors(bright, tex_kps)
    for da, db in zip(a, b):
        assert np.abs(da.values - db.values).max() <= 1e-3


def test_descriptor_rotation_by_ninety_degrees(tex, tex_kps):
    rot = ImageGrid(np.rot90(tex.samples))  # (x, y) -> (y, W - 1 - x)
    rkps = detect_keypoints(rot)
    a = compute_descriptors(tex, tex_kps)
    b = compute_descriptors(rot, rkps)
    w = tex.width
    diffs = []
    for i, kp in enumerate(tex_kps[:30]):
        # direction (cos t, sin t) maps to (sin t, -cos t): angle t - 90 degrees
        tx, ty, want = kp.y, w - 1 - kp.x, (kp.orientation - math.pi / 2) % (2 * math.pi)
        for j, r in enumerate(rkps):
            turn = (r.orientation - want + math.pi) % (2 * math.pi) - math.pi
            if math.hypot(r.x - tx, r.y - ty) < 0.5 and abs(r.sigma - kp.sigma) < 0.05 * kp.sigma \
                    and abs(turn) < 0.05:
                diffs.append(np.abs(a[i].values - b[j].values).mean())
                break
    assert len(diffs) >= 10
    assert max(diffs) <= 0.05


def test_edge_suppression_on_step():
    img = step_edge(96, horizontal=False)
    kps = detect_keypoints(img)
    # no keypoint on the straight interior of the edge at x = 47.5
    assert not [k for k in kps if abs(k.x - 47.5) < 3 and 16 < k.y < 80]


def test_repeatability_under_rotation_and_scale(tex, tex_kps):
    t = similarity_from_params(1.2, math.radians(15), 0, 0)
    c = 63.5
    # rotate and scale about the image centre
    shift = similarity_from_params(1.0, 0.0, c, c)
    back = similarity_from_params(1.0, 0.0, -c, -c)
    full = compose(shift, compose(t, back))
    moved, mask = warp(tex, full, 128, 128)
    other = detect_keypoints(moved)
    pts = np.array([[k.x, k.y] for k in tex_kps])
    mx, my = apply_array(full, pts[:, 0], pts[:, 1])
    inside = (mx >= 12) & (mx <= 115) & (my >= 12) & (my <= 115)
    assert inside.sum() >= 10
    opts = np.array([[k.x, k.y] for k in other])
    d = np.hypot(mx[inside, None] - opts[None, :, 0], my[inside, None] - opts[None, :, 1]).min(axis=1)
    assert (d <= 2).mean() >= 0.5


def _kp(x, y, sigma=2.0, response=0.1):
    return Keypoint(x, y, sigma, 0.0, response, 0, 1)


def test_enhance_keep_all_is_identity(tex, tex_kps):
    dec = dtcwt(tex, 4)
    assert enhance_keypoints(tex_kps, dec, 1.0) == tex_kps
    assert enhance_keypoints([], dec, 0.5) == []
    with pytest.raises(SiftError):
        enhance_keypoints(tex_kps, dec, 0.0)


def test_enhance_prefers_textured_half(tex):
    arr = tex.samples.copy()
    arr[:, :64] = 128.0
    dec = dtcwt(arr, 4)
    rng = np.random.default_rng(0)
    kps = [_kp(float(x), float(y), response=float(r)) for x, y, r in
           zip(rng.uniform(16, 112, 40), rng.uniform(16, 112, 40), rng.uniform(0.05, 1, 40))]
    blank = [k for k in kps if k.x < 48]
    rich = [k for k in kps if k.x > 80]
    pool = blank[:10] + rich[:10]
    kept = enhance_keypoints(pool, dec, 0.5)
    assert len(kept) == 10
    assert all(k.x > 80 for k in kept)
    # brute-force ranking oracle
    scores = keypoint_scores(pool, dec)
    top = sorted(range(len(pool)), key=lambda i: (-scores[i], -pool[i].response, i))[:10]
    assert kept == [pool[i] for i in sorted(top)]


def test_enhance_count_contract(tex):
    dec = dtcwt(tex, 4)
    rng = np.random.default_rng(1)
    kps = [_kp(float(x), float(y)) for x, y in rng.uniform(10, 118, (100, 2))]
    kept = enhance_keypoints(kps, dec, 0.25)
    assert len(kept) == 25
    # original order preserved
    pos = [kps.index(k) for k in kept]
    assert pos == sorted(pos)


def _desc(v, s=None):
    v = np.asarray(v, float)
    v = v / np.linalg.norm(v)
    if s is not None:
        s = np.asarray(s, float)
        s = s / np.linalg.norm(s)
    return Descriptor(v, s)


def test_match_identical_sets():
    rng = np.random.default_rng(2)
    ds = [_desc(rng.uniform(0, 1, 128)) for _ in range(30)]
    ms = match_descriptors(ds, ds)
    assert ms and all(m.source_index == m.target_index for m in ms)
    assert all(m.distance < 1e-6 for m in ms)


def test_match_single_each_side():
    a = [_desc(np.ones(128))]
    b = [_desc(np.arange(128) + 1.0)]
    ms = match_descriptors(a, b)
    assert len(ms) == 1 and ms[0].ratio == 0.0


def test_alpha_requires_signatures():
    a = [_desc(np.ones(128))]
    with pytest.raises(SiftError):
        match_descriptors(a, a, alpha=0.7)
    with pytest.raises(SiftError):
        match_descriptors(a, a, alpha=1.5)


def test_signatures_reduce_decoy_matches():
    rng = np.random.default_rng(3)
    base = rng.uniform(0, 1, (20, 128))
    sigs = rng.uniform(0, 1, (20, 12))
    a = [_desc(base[i] + rng.normal(0, 0.03, 128), sigs[i]) for i in range(20)]
    true = [_desc(base[i] + rng.normal(0, 0.03, 128), sigs[i] + rng.normal(0, 0.01, 12)) for i in range(20)]
    decoys = [_desc(base[i] + rng.normal(0, 0.02, 128), rng.uniform(0, 1, 12)) for i in range(20)]
    b = true + decoys

    def decoy_count(alpha):
        return sum(m.target_index >= 20 for m in match_descriptors(a, b, alpha, ratio_max=1.0))

    assert decoy_count(0.7) <= decoy_count(1.0)
    assert decoy_count(1.0) > 0  # the fixture does contain confusable decoys


def test_alpha_one_ignores_signatures():
    rng = np.random.default_rng(4)
    a = [_desc(rng.uniform(0, 1, 128), rng.uniform(0, 1, 12)) for _ in range(15)]
    b = [_desc(rng.uniform(0, 1, 128), rng.uniform(0, 1, 12)) for _ in range(15)]
    plain_a = [Descriptor(d.values) for d in a]
    plain_b = [Descriptor(d.values) for d in b]
    assert match_descriptors(a, b, 1.0, 0.95) == match_descriptors(plain_a, plain_b, 1.0, 0.95)


@pytest.mark.parametrize("enhance", [False, True])
def test_register_recovers_similarity(enhance):
    img = texture(192, 6)
    truth_in = similarity_from_params(1.0, math.radians(6), 5.0, -3.0)
    master, slave, truth = make_synthetic_pair(img, SyntheticPairSpec(truth_in, noise_sigma=2.0, seed=1))
    res = register_sift(master, slave, "similarity", SiftConfig(), enhance, seed=0)
    # slave -> master composed with master -> slave is the identity
    pts = np.array([[40.0, 40.0], [150.0, 40.0], [96.0, 150.0]])
    sx, sy = apply_array(truth, pts[:, 0], pts[:, 1])
    bx, by = apply_array(res.transform, sx, sy)
    assert np.hypot(bx - pts[:, 0], by - pts[:, 1]).max() < 0.5
    assert len(res.inliers) >= 10
