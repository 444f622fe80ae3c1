import numpy as np
import pytest

from jaanet.attention import predefine_all
from jaanet.data import (ALIGNED_SIZE, CROP_SIZE, Manifest, Sample,
                         SyntheticConfig, align_sample, binarize_intensity,
                         center_crop, crop, generate_synthetic, hflip,
                         load_manifest, occlude, pixel_rule_labels,
                         random_crop_flip, render_sample, save_manifest,
                         similarity_align, subject_folds)
from jaanet.errors import (ConfigError, DegenerateGeometryError,
                           ManifestError)
from jaanet.landmarks import CANONICAL_TEMPLATE, LandmarkSet


def rot_mat(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


@pytest.fixture
def face(rng):
    return render_sample(SyntheticConfig(), rng, "s00")


class TestSimilarityAlign:
    def test_canonical_face_maps_to_itself(self, face):
        img, lms = similarity_align(face.image, face.landmarks)
        img2, lms2 = similarity_align(img, lms)
        np.testing.assert_allclose(lms2, lms, atol=1e-4)

    def test_eye_centers_land_horizontal(self, face):
        _, lms = similarity_align(face.image, face.landmarks)
        left, right = LandmarkSet(lms).eye_centers()
        assert abs(left[1] - right[1]) < 1e-6
        np.testing.assert_allclose(left, (70, 70), atol=1e-9)
        np.testing.assert_allclose(right, (130, 70), atol=1e-9)

    def test_rotated_input_aligns_back(self, face):
        center = np.array([100.0, 100.0])
        rotated = (face.landmarks - center) @ rot_mat(10).T + center
        _, a = similarity_align(face.image, face.landmarks)
        _, b = similarity_align(face.image, rotated)
        np.testing.assert_allclose(a, b, atol=0.5)

    def test_alignment_is_idempotent(self, face):
        s1 = align_sample(face)
        s2 = align_sample(s1)
        np.testing.assert_allclose(s1.landmarks, s2.landmarks, atol=1e-4)

    def test_coincident_eyes_raise(self, face):
        pts = face.landmarks.copy()
        pts[25:31] = pts[19:25]
        with pytest.raises(DegenerateGeometryError):
            similarity_align(face.image, pts)


class TestCropFlip:
    def test_zero_offset_crop_is_top_left_window(self, face):
        img, lms = crop(face.image, face.landmarks, 0, 0)
        assert img.shape[:2] == (CROP_SIZE, CROP_SIZE)
        np.testing.assert_array_equal(img, face.image[:176, :176])
        np.testing.assert_array_equal(lms, face.landmarks)

    def test_double_flip_is_identity(self, face):
        img, lms = hflip(face.image, face.landmarks)
        img2, lms2 = hflip(img, lms)
        np.testing.assert_array_equal(img2, face.image)
        np.testing.assert_allclose(lms2, face.landmarks)

    def test_flip_keeps_roles_sided(self, face):
        img, lms = hflip(face.image, face.landmarks)
        ls = LandmarkSet(lms)
        left, right = ls.eye_centers()
        assert left[0] < right[0]

    def test_random_crop_flip_contract(self, rng, face):
        for _ in range(50):
            out = random_crop_flip(face, rng)
            assert out.image.shape[:2] == (CROP_SIZE, CROP_SIZE)
            np.testing.assert_array_equal(out.au_labels, face.au_labels)
            assert out.landmarks.min() >= -1e-9
            assert out.landmarks.max() < CROP_SIZE

    def test_offsets_cover_the_full_range(self, rng, face):
        offs = set()
        for _ in range(300):
            out = random_crop_flip(face, rng)
            # recover the crop offset from an unflipped landmark shift
            d = face.landmarks - out.landmarks
            if np.allclose(d, d[0]):
                offs.add((round(d[0][0]), round(d[0][1])))
        xs = {o[0] for o in offs}
        assert min(xs) == 0 and max(xs) == 24

    def test_center_crop_offset(self, face):
        out = center_crop(face)
        np.testing.assert_array_equal(out.image,
                                      face.image[12:188, 12:188])


class TestBinarize:
    @pytest.mark.parametrize("i,want", [(0, 0), (1, 0), (2, 1), (3, 1),
                                        (4, 1), (5, 1)])
    def test_threshold_at_two(self, i, want):
        assert binarize_intensity(i) == want

    def test_out_of_range_raises(self):
        with pytest.raises(ValueError):
            binarize_intensity(6)


class TestOcclude:
    @pytest.fixture
    def sample176(self, rng, face):
        return random_crop_flip(face, rng)

    def test_lower_mode_keeps_bottom_rows(self, sample176):
        out = occlude(sample176, "lower")
        assert np.all(out.image[:88] == 0.5)
        np.testing.assert_array_equal(out.image[88:], sample176.image[88:])

    def test_all_modes_preserve_labels_and_landmarks(self, sample176):
        for mode in ("lower", "upper", "right", "left"):
            out = occlude(sample176, mode)
            np.testing.assert_array_equal(out.au_labels, sample176.au_labels)
            np.testing.assert_array_equal(out.landmarks, sample176.landmarks)

    def test_idempotent(self, sample176):
        once = occlude(sample176, "right")
        twice = occlude(once, "right")
        np.testing.assert_array_equal(once.image, twice.image)

    def test_unknown_mode_raises(self, sample176):
        with pytest.raises(ValueError):
            occlude(sample176, "diagonal")


class TestSynthetic:
    def test_fixed_seed_gives_bit_identical_corpora(self, tmp_path):
        cfg = SyntheticConfig()
        m1 = generate_synthetic(cfg, 7, 6, tmp_path / "a")
        m2 = generate_synthetic(cfg, 7, 6, tmp_path / "b")
        for r1, r2 in zip(m1.records, m2.records):
            b1 = (tmp_path / "a" / r1.image_path).read_bytes()
            b2 = (tmp_path / "b" / r2.image_path).read_bytes()
            assert b1 == b2
            np.testing.assert_array_equal(r1.au_labels, r2.au_labels)
            np.testing.assert_array_equal(r1.landmarks, r2.landmarks)

    def test_rates_reproduced_monte_carlo(self):
        cfg = SyntheticConfig(noise=0.0)
        rng = np.random.default_rng(11)
        labels = np.stack([render_sample(cfg, rng).au_labels
                           for _ in range(10_000)])
        np.testing.assert_allclose(labels.mean(axis=0), cfg.rates, atol=0.02)

    def test_pixel_rule_oracle_is_perfect(self, rng):
        cfg = SyntheticConfig(n_distractors=3)
        for _ in range(200):
            s = render_sample(cfg, rng)
            got = pixel_rule_labels(s, cfg.au_ids, cfg)
            np.testing.assert_array_equal(got, s.au_labels)

    def test_oracle_survives_crop_and_flip(self, rng):
        cfg = SyntheticConfig()
        for _ in range(50):
            s = random_crop_flip(render_sample(cfg, rng), rng)
            got = pixel_rule_labels(s, cfg.au_ids, cfg)
            np.testing.assert_array_equal(got, s.au_labels)

    def test_landmarks_inside_bounds(self, rng):
        cfg = SyntheticConfig()
        for _ in range(100):
            s = render_sample(cfg, rng)
            assert s.landmarks.min() >= 0
            assert s.landmarks.max() < ALIGNED_SIZE

    def test_overlapping_au_patterns_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(au_ids=(23, 24), rates=(0.5, 0.5))


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = generate_synthetic(SyntheticConfig(), 3, 5, tmp_path)
        again = load_manifest(tmp_path / "manifest.txt")
        assert again.au_ids == m.au_ids
        for a, b in zip(m.records, again.records):
            assert a.image_path == b.image_path
            assert a.subject_id == b.subject_id
            np.testing.assert_array_equal(a.au_labels, b.au_labels)
            np.testing.assert_array_equal(a.landmarks, b.landmarks)

    def test_rates_recomputed_from_records(self, tmp_path):
        m = generate_synthetic(SyntheticConfig(), 3, 40, tmp_path)
        labels = np.stack([r.au_labels for r in m.records])
        np.testing.assert_array_equal(m.occurrence_rates(), labels.mean(0))

    def test_empty_manifest(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text("")
        m = load_manifest(p)
        assert m.records == []
        with pytest.raises(ManifestError):
            m.occurrence_rates()

    def test_malformed_record_reports_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("1 2\nimg.png 1 0 1.0 2.0 s00\n")
        with pytest.raises(ManifestError, match=":2:"):
            load_manifest(p)

    def test_non_binary_label_rejected(self, tmp_path):
        m = generate_synthetic(SyntheticConfig(), 3, 2, tmp_path)
        text = (tmp_path / "manifest.txt").read_text().splitlines()
        parts = text[1].split()
        parts[1] = "2"
        (tmp_path / "manifest.txt").write_text(
            "\n".join([text[0], " ".join(parts)]) + "\n")
        with pytest.raises(ManifestError, match="0 or 1"):
            load_manifest(tmp_path / "manifest.txt")

    def test_loaded_sample_matches_rendered(self, tmp_path):
        cfg = SyntheticConfig(noise=0.0)
        m = generate_synthetic(cfg, 9, 3, tmp_path)
        s = m.load_sample(0)
        assert s.image.shape == (200, 200, 3)
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        np.testing.assert_array_equal(
            pixel_rule_labels(s, cfg.au_ids, cfg), s.au_labels)

    def test_subject_folds_are_exclusive_and_exhaustive(self, tmp_path):
        m = generate_synthetic(SyntheticConfig(n_subjects=7), 5, 40, tmp_path)
        folds = subject_folds(m, 3)
        all_idx = sorted(i for f in folds for i in f)
        assert all_idx == list(range(40))
        subjects = [{m.records[i].subject_id for i in f} for f in folds]
        for i in range(3):
            for j in range(i + 1, 3):
                assert not subjects[i] & subjects[j]


class TestAugmentationConsistency:
    def test_flipped_predefined_maps_mirror_within_one_cell(self, rng):
        from jaanet.attention import compute_au_centers, image_to_map_coords
        cfg = SyntheticConfig()
        au_ids = cfg.au_ids
        la = CROP_SIZE // 4 + 8
        for _ in range(20):
            s = random_crop_flip(render_sample(cfg, rng), rng)
            _, lms_f = hflip(s.image, s.landmarks)
            c = image_to_map_coords(compute_au_centers(
                LandmarkSet(s.landmarks), au_ids).reshape(-1, 2), CROP_SIZE, la)
            cf = image_to_map_coords(compute_au_centers(
                LandmarkSet(lms_f), au_ids).reshape(-1, 2), CROP_SIZE, la)
            back = cf.copy()
            back[:, 0] = (la - 1) - cf[:, 0]
            a = c.reshape(-1, 2, 2)
            b = back.reshape(-1, 2, 2)[:, ::-1]
            direct = np.abs(a - b).max(axis=(1, 2))
            swapped = np.abs(a - b[:, ::-1]).max(axis=(1, 2))
            assert (np.minimum(direct, swapped) <= 1).all()

    def test_mirrored_map_value_distribution_is_preserved(self, rng):
        # each sub-ROI window may shift by one rounding cell, but its content
        # is translation invariant, so interior maps keep the same multiset
        # of weights under a flip
        from jaanet.attention import (compute_au_centers, image_to_map_coords,
                                      subroi_side)
        cfg = SyntheticConfig()
        half = subroi_side(52, 0.14) // 2
        for _ in range(10):
            s = random_crop_flip(render_sample(cfg, rng), rng)
            _, lms_f = hflip(s.image, s.landmarks)
            maps = predefine_all(LandmarkSet(s.landmarks), cfg.au_ids,
                                 CROP_SIZE)
            maps_f = predefine_all(LandmarkSet(lms_f), cfg.au_ids, CROP_SIZE)
            for i, (a, b) in enumerate(zip(maps, maps_f)):
                interior = (a[0].sum() == a[-1].sum() == a[:, 0].sum()
                            == a[:, -1].sum() == 0)
                clear = True  # 1-cell shifts must not change window overlap
                for lms in (s.landmarks, lms_f):
                    c = image_to_map_coords(compute_au_centers(
                        LandmarkSet(lms), [cfg.au_ids[i]])[0], CROP_SIZE, 52)
                    gap = np.abs(c[0] - c[1]).max()
                    clear &= bool(gap == 0 or gap > 2 * half + 1)
                if interior and clear:
                    np.testing.assert_allclose(np.sort(a[a > 0]),
                                               np.sort(b[b > 0]), atol=1e-12)
